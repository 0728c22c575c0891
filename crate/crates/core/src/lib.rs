//! Euclidean rhythm workbench with an attribute-regularised measure VAE.
//!
//! The pipeline renders Euclidean layers onto chord tones, reduces the
//! result to a monophonic measure, encodes it with a VAE trained on
//! folk-tune measures and reports how the model reads and reconstructs it.

pub mod euclid;
pub mod score;
pub mod corpus;
pub mod vae;
pub mod workflow;
