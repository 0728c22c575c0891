use serde::{Deserialize, Serialize};

use super::{decode, encoder_pass, LatentVector, ModelParams, VaeError};
use crate::corpus::{compute_attributes, AttributeVector};
use crate::score::TokenSequence;

pub const HEATMAP_BINS: usize = 32;
pub const HEATMAP_RANGE: f64 = 3.0;

/// Counts of encoded measures over a pair of latent dimensions.
/// `counts[ix][iy]` covers `mu[dim_x]` in bin `ix` and `mu[dim_y]` in bin `iy`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DensityMap {
    pub dim_x: usize,
    pub dim_y: usize,
    pub counts: Vec<Vec<u64>>,
}

impl DensityMap {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn transposed(&self) -> DensityMap {
        let mut counts = vec![vec![0; HEATMAP_BINS]; HEATMAP_BINS];
        for (x, row) in self.counts.iter().enumerate() {
            for (y, &c) in row.iter().enumerate() {
                counts[y][x] = c;
            }
        }
        DensityMap { dim_x: self.dim_y, dim_y: self.dim_x, counts }
    }
}

/// Heatmap cell for one coordinate; values outside the range clamp to the
/// edge cells. Zero lands in bin 16.
pub fn heatmap_bin(value: f64) -> usize {
    let scaled = (value + HEATMAP_RANGE) / (2.0 * HEATMAP_RANGE) * HEATMAP_BINS as f64;
    if scaled.is_nan() || scaled < 0.0 {
        0
    } else {
        (scaled.floor() as usize).min(HEATMAP_BINS - 1)
    }
}

pub fn density_map<'a>(
    params: &ModelParams,
    measures: impl IntoIterator<Item = &'a TokenSequence>,
    dim_x: usize,
    dim_y: usize,
) -> Result<DensityMap, VaeError> {
    let latent_dim = params.enc_mu_b.data.len();
    for dim in [dim_x, dim_y] {
        if dim >= latent_dim {
            return Err(VaeError::BadDimension { dim, latent_dim });
        }
    }
    if dim_x == dim_y {
        return Err(VaeError::SameDimension);
    }
    let mut counts = vec![vec![0; HEATMAP_BINS]; HEATMAP_BINS];
    for tokens in measures {
        let mu = encoder_pass(params, tokens).mu;
        counts[heatmap_bin(mu[dim_x])][heatmap_bin(mu[dim_y])] += 1;
    }
    Ok(DensityMap { dim_x, dim_y, counts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastReport {
    pub tokens_before: TokenSequence,
    pub tokens_after: TokenSequence,
    pub attributes_before: AttributeVector,
    pub attributes_after: AttributeVector,
}

/// Decodes `z` and `z` with `z[dim] += delta_z`, with attributes of both.
pub fn contrast(params: &ModelParams, z: &LatentVector, dim: usize, delta_z: f64) -> Result<ContrastReport, VaeError> {
    if dim >= z.dim() {
        return Err(VaeError::BadDimension { dim, latent_dim: z.dim() });
    }
    let (tokens_before, _) = decode(params, z)?;
    let mut moved = z.clone();
    moved.0[dim] += delta_z;
    let (tokens_after, _) = decode(params, &moved)?;
    Ok(ContrastReport {
        attributes_before: compute_attributes(&tokens_before),
        attributes_after: compute_attributes(&tokens_after),
        tokens_before,
        tokens_after,
    })
}
