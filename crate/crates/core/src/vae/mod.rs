//! Attribute-regularised VAE over one-measure token sequences.
//!
//! Encoder: flattened one-hot (48 × 50) → affine → tanh → affine heads for
//! μ and log σ². Decoder: z → affine → tanh → affine → 48 × 50 logits.
//! Latent dimensions listed in [`ModelConfig::regularised_dims`] are tied to
//! the measure attributes by a pairwise sign-agreement loss.

mod checkpoint;
mod latent;
mod loss;
mod metrics;
mod train;

pub use checkpoint::{CheckpointError, Model, CHECKPOINT_MAGIC};
pub use latent::{contrast, density_map, heatmap_bin, ContrastReport, DensityMap, HEATMAP_BINS, HEATMAP_RANGE};
pub use loss::{backward, loss, loss_and_gradients, LossParts};
pub use metrics::{latent_attribute_correlations, spearman, token_accuracy};
pub use train::{train, Adam, EpochReport, TrainError, TrainReport, TrainingConfig};

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::ser::SerializeSeq;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::value::RawValue;
use thiserror::Error;

use crate::score::{Token, TokenSequence, SEQUENCE_LENGTH, VOCAB_SIZE};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VaeError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("batch needs at least two items, got {0}")]
    BatchTooSmall(usize),
    #[error("expected {expected} noise vectors of length {dim}, got {got}")]
    NoiseShape { expected: usize, dim: usize, got: usize },
    #[error("latent vector has {got} values, model expects {expected}")]
    LatentShape { expected: usize, got: usize },
    #[error("latent dimension {dim} is out of range for {latent_dim} dimensions")]
    BadDimension { dim: usize, latent_dim: usize },
    #[error("heatmap axes must differ")]
    SameDimension,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub sequence_length: usize,
    pub latent_dim: usize,
    /// Latent index for each attribute, in attribute order.
    pub regularised_dims: Vec<usize>,
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    /// KL weight.
    pub beta: f64,
    /// Attribute regularisation weight.
    pub gamma: f64,
    /// tanh sharpness in the regularisation term.
    pub delta: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: VOCAB_SIZE,
            sequence_length: SEQUENCE_LENGTH,
            latent_dim: 16,
            regularised_dims: vec![0, 1, 2, 3],
            encoder_hidden: 256,
            decoder_hidden: 256,
            beta: 0.1,
            gamma: 1.0,
            delta: 10.0,
            seed: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), VaeError> {
        let fail = |m: String| Err(VaeError::Config(m));
        if self.vocab_size != VOCAB_SIZE || self.sequence_length != SEQUENCE_LENGTH {
            return fail(format!(
                "vocabulary {}×{} must be {VOCAB_SIZE}×{SEQUENCE_LENGTH}",
                self.vocab_size, self.sequence_length
            ));
        }
        if self.latent_dim == 0 || self.encoder_hidden == 0 || self.decoder_hidden == 0 {
            return fail("layer sizes must be positive".into());
        }
        if self.regularised_dims.len() > 4 {
            return fail("at most four attributes can be regularised".into());
        }
        for (i, &d) in self.regularised_dims.iter().enumerate() {
            if d >= self.latent_dim {
                return fail(format!("regularised dim {d} >= latent_dim {}", self.latent_dim));
            }
            if self.regularised_dims[..i].contains(&d) {
                return fail(format!("regularised dim {d} listed twice"));
            }
        }
        if !(self.beta >= 0.0 && self.gamma >= 0.0 && self.beta.is_finite() && self.gamma.is_finite()) {
            return fail("beta and gamma must be finite and non-negative".into());
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return fail("delta must be positive".into());
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.vocab_size * self.sequence_length
    }
}

/// A dense row-major tensor. Weight matrices are stored `[fan_in, fan_out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    fn uniform(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Self {
        let data = (0..shape.iter().product::<usize>())
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Self { shape: shape.to_vec(), data }
    }
}

pub const TENSOR_NAMES: [&str; 10] = [
    "encoder.input.weight",
    "encoder.input.bias",
    "encoder.mu.weight",
    "encoder.mu.bias",
    "encoder.logvar.weight",
    "encoder.logvar.bias",
    "decoder.input.weight",
    "decoder.input.bias",
    "decoder.output.weight",
    "decoder.output.bias",
];

/// All trainable tensors. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub enc_in_w: Tensor,
    pub enc_in_b: Tensor,
    pub enc_mu_w: Tensor,
    pub enc_mu_b: Tensor,
    pub enc_logvar_w: Tensor,
    pub enc_logvar_b: Tensor,
    pub dec_in_w: Tensor,
    pub dec_in_b: Tensor,
    pub dec_out_w: Tensor,
    pub dec_out_b: Tensor,
}

impl ModelParams {
    pub fn zeros(config: &ModelConfig) -> Self {
        let (i, he, l, hd) = (config.input_dim(), config.encoder_hidden, config.latent_dim, config.decoder_hidden);
        Self {
            enc_in_w: Tensor::zeros(&[i, he]),
            enc_in_b: Tensor::zeros(&[he]),
            enc_mu_w: Tensor::zeros(&[he, l]),
            enc_mu_b: Tensor::zeros(&[l]),
            enc_logvar_w: Tensor::zeros(&[he, l]),
            enc_logvar_b: Tensor::zeros(&[l]),
            dec_in_w: Tensor::zeros(&[l, hd]),
            dec_in_b: Tensor::zeros(&[hd]),
            dec_out_w: Tensor::zeros(&[hd, i]),
            dec_out_b: Tensor::zeros(&[i]),
        }
    }

    /// Tensors in checkpoint order, matching [`TENSOR_NAMES`].
    pub fn tensors(&self) -> [&Tensor; 10] {
        [
            &self.enc_in_w,
            &self.enc_in_b,
            &self.enc_mu_w,
            &self.enc_mu_b,
            &self.enc_logvar_w,
            &self.enc_logvar_b,
            &self.dec_in_w,
            &self.dec_in_b,
            &self.dec_out_w,
            &self.dec_out_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 10] {
        [
            &mut self.enc_in_w,
            &mut self.enc_in_b,
            &mut self.enc_mu_w,
            &mut self.enc_mu_b,
            &mut self.enc_logvar_w,
            &mut self.enc_logvar_b,
            &mut self.dec_in_w,
            &mut self.dec_in_b,
            &mut self.dec_out_w,
            &mut self.dec_out_b,
        ]
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

/// Weights uniform in ±1/sqrt(fan_in), biases zero, seeded from the config.
pub fn init_params(config: &ModelConfig) -> Result<ModelParams, VaeError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::zeros(config);
    for tensor in [
        &mut params.enc_in_w,
        &mut params.enc_mu_w,
        &mut params.enc_logvar_w,
        &mut params.dec_in_w,
        &mut params.dec_out_w,
    ] {
        let bound = 1.0 / (tensor.shape[0] as f64).sqrt();
        *tensor = Tensor::uniform(&tensor.shape.clone(), bound, &mut rng);
    }
    Ok(params)
}

/// A point in latent space. Serializes each value with 17 significant
/// digits.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVector(pub Vec<f64>);

impl LatentVector {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl From<Vec<f64>> for LatentVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

impl fmt::Display for LatentVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|v| format!("{v:.3}")).collect();
        write!(f, "[{}]", parts.join(", "))
    }
}

impl Serialize for LatentVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(self.0.len()))?;
        for v in &self.0 {
            if !v.is_finite() {
                return Err(serde::ser::Error::custom("latent value is not finite"));
            }
            let raw = RawValue::from_string(format!("{v:.16e}")).map_err(serde::ser::Error::custom)?;
            seq.serialize_element(&raw)?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for LatentVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        Vec::<f64>::deserialize(deserializer).map(Self)
    }
}

/// Encoder activations kept for the backward pass.
pub(crate) struct EncoderPass {
    pub hidden: Vec<f64>,
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
}

pub(crate) fn one_hot_rows(tokens: &TokenSequence) -> impl Iterator<Item = usize> + '_ {
    tokens
        .tokens()
        .iter()
        .enumerate()
        .map(|(tick, t)| tick * VOCAB_SIZE + t.id())
}

fn affine_into(out: &mut [f64], bias: &[f64], input: &[f64], weight: &[f64]) {
    let width = out.len();
    out.copy_from_slice(bias);
    for (i, &x) in input.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        let row = &weight[i * width..(i + 1) * width];
        for (o, &w) in out.iter_mut().zip(row) {
            *o += x * w;
        }
    }
}

pub(crate) fn encoder_pass(params: &ModelParams, tokens: &TokenSequence) -> EncoderPass {
    let hidden_width = params.enc_in_b.data.len();
    let mut hidden = params.enc_in_b.data.clone();
    for row in one_hot_rows(tokens) {
        let weights = &params.enc_in_w.data[row * hidden_width..(row + 1) * hidden_width];
        for (h, &w) in hidden.iter_mut().zip(weights) {
            *h += w;
        }
    }
    hidden.iter_mut().for_each(|h| *h = h.tanh());
    let latent = params.enc_mu_b.data.len();
    let mut mu = vec![0.0; latent];
    let mut logvar = vec![0.0; latent];
    affine_into(&mut mu, &params.enc_mu_b.data, &hidden, &params.enc_mu_w.data);
    affine_into(&mut logvar, &params.enc_logvar_b.data, &hidden, &params.enc_logvar_w.data);
    EncoderPass { hidden, mu, logvar }
}

/// Decoder hidden activations and per-tick logits, flattened `[48 × 50]`.
pub(crate) fn decoder_pass(params: &ModelParams, z: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut hidden = vec![0.0; params.dec_in_b.data.len()];
    affine_into(&mut hidden, &params.dec_in_b.data, z, &params.dec_in_w.data);
    hidden.iter_mut().for_each(|h| *h = h.tanh());
    let mut logits = vec![0.0; params.dec_out_b.data.len()];
    affine_into(&mut logits, &params.dec_out_b.data, &hidden, &params.dec_out_w.data);
    (hidden, logits)
}

/// Deterministic encoding: `(mu, logvar)`.
pub fn encode(params: &ModelParams, tokens: &TokenSequence) -> (LatentVector, LatentVector) {
    let pass = encoder_pass(params, tokens);
    (LatentVector(pass.mu), LatentVector(pass.logvar))
}

/// `z = mu + exp(logvar / 2) * noise`.
pub fn reparameterize(mu: &LatentVector, logvar: &LatentVector, noise: &[f64]) -> LatentVector {
    LatentVector(
        mu.0.iter()
            .zip(&logvar.0)
            .zip(noise)
            .map(|((m, lv), e)| m + (lv / 2.0).exp() * e)
            .collect(),
    )
}

/// Per-tick logits for a decoded measure.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    pub data: Vec<f64>,
}

impl Logits {
    pub fn row(&self, tick: usize) -> &[f64] {
        &self.data[tick * VOCAB_SIZE..(tick + 1) * VOCAB_SIZE]
    }

    /// Softmax of one tick's logits.
    pub fn probabilities(&self, tick: usize) -> Vec<f64> {
        softmax(self.row(tick))
    }
}

pub(crate) fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub(crate) fn argmax_tokens(logits: &[f64]) -> TokenSequence {
    let tokens = logits
        .chunks(VOCAB_SIZE)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = i;
                }
            }
            Token::from_id(best).expect("argmax within vocabulary")
        })
        .collect();
    TokenSequence::repaired(tokens).expect("argmax tokens are in range")
}

/// Decodes `z` to tokens by per-tick argmax (lowest id wins ties), then
/// repairs illegal HOLDs to REST.
pub fn decode(params: &ModelParams, z: &LatentVector) -> Result<(TokenSequence, Logits), VaeError> {
    let expected = params.dec_in_w.shape[0];
    if z.dim() != expected {
        return Err(VaeError::LatentShape { expected, got: z.dim() });
    }
    let (_, logits) = decoder_pass(params, &z.0);
    Ok((argmax_tokens(&logits), Logits { data: logits }))
}
