use std::borrow::Borrow;

use serde::{Deserialize, Serialize};

use super::{decoder_pass, encoder_pass, one_hot_rows, ModelConfig, ModelParams, VaeError};
use crate::corpus::Example;
use crate::score::VOCAB_SIZE;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
    pub reg: f64,
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `total = recon + beta * kl + gamma * reg` for one batch, where
/// - `recon` is the mean per-tick cross-entropy,
/// - `kl` is the batch mean of `0.5 * Σ (exp(logvar) + mu² - 1 - logvar)`,
/// - `reg` sums, over regularised dims, the mean over all ordered pairs
///   `(a, b)` of `(tanh(delta * (z_a - z_b)) - sign(attr_a - attr_b))²`.
///
/// `noise[i]` is the standard-normal draw used to sample item `i`.
pub fn loss<E: Borrow<Example>>(
    params: &ModelParams,
    batch: &[E],
    noise: &[Vec<f64>],
    config: &ModelConfig,
) -> Result<LossParts, VaeError> {
    run(params, batch, noise, config, false).map(|(parts, _)| parts)
}

/// Analytic gradient of the total [`loss`] with respect to every parameter.
pub fn backward<E: Borrow<Example>>(
    params: &ModelParams,
    batch: &[E],
    noise: &[Vec<f64>],
    config: &ModelConfig,
) -> Result<ModelParams, VaeError> {
    loss_and_gradients(params, batch, noise, config).map(|(_, grads)| grads)
}

pub fn loss_and_gradients<E: Borrow<Example>>(
    params: &ModelParams,
    batch: &[E],
    noise: &[Vec<f64>],
    config: &ModelConfig,
) -> Result<(LossParts, ModelParams), VaeError> {
    run(params, batch, noise, config, true).map(|(parts, grads)| (parts, grads.expect("gradients requested")))
}

fn run<E: Borrow<Example>>(
    params: &ModelParams,
    batch: &[E],
    noise: &[Vec<f64>],
    config: &ModelConfig,
    with_grads: bool,
) -> Result<(LossParts, Option<ModelParams>), VaeError> {
    let n = batch.len();
    if n < 2 {
        return Err(VaeError::BatchTooSmall(n));
    }
    let latent = config.latent_dim;
    if noise.len() != n || noise.iter().any(|e| e.len() != latent) {
        return Err(VaeError::NoiseShape { expected: n, dim: latent, got: noise.len() });
    }
    let nf = n as f64;

    let encoded: Vec<_> = batch.iter().map(|e| encoder_pass(params, &e.borrow().tokens)).collect();
    let z: Vec<Vec<f64>> = encoded
        .iter()
        .zip(noise)
        .map(|(pass, eps)| {
            pass.mu
                .iter()
                .zip(&pass.logvar)
                .zip(eps)
                .map(|((m, lv), e)| m + (lv / 2.0).exp() * e)
                .collect()
        })
        .collect();

    let kl = encoded
        .iter()
        .map(|p| {
            p.mu.iter()
                .zip(&p.logvar)
                .map(|(m, lv)| lv.exp() + m * m - 1.0 - lv)
                .sum::<f64>()
                * 0.5
        })
        .sum::<f64>()
        / nf;

    // Regularisation, with its gradient with respect to z.
    let mut dz: Vec<Vec<f64>> = vec![vec![0.0; latent]; n];
    let mut reg = 0.0;
    let attrs: Vec<[f64; 4]> = batch.iter().map(|e| e.borrow().attributes.as_array()).collect();
    let pair_weight = 1.0 / (nf * nf);
    for (attr, &dim) in config.regularised_dims.iter().enumerate() {
        for a in 0..n {
            for b in 0..n {
                let t = (config.delta * (z[a][dim] - z[b][dim])).tanh();
                let s = sign(attrs[a][attr] - attrs[b][attr]);
                reg += (t - s) * (t - s) * pair_weight;
                if with_grads {
                    let g = config.gamma * pair_weight * 2.0 * (t - s) * config.delta * (1.0 - t * t);
                    dz[a][dim] += g;
                    dz[b][dim] -= g;
                }
            }
        }
    }

    let ticks = config.sequence_length;
    let ce_scale = 1.0 / (nf * ticks as f64);
    let mut recon = 0.0;
    let mut grads = with_grads.then(|| ModelParams::zeros(config));
    let dec_hidden = config.decoder_hidden;
    let width = config.input_dim();

    for (i, example) in batch.iter().enumerate() {
        let targets: Vec<usize> = one_hot_rows(&example.borrow().tokens).collect();
        let (hidden, mut logits) = decoder_pass(params, &z[i]);
        for (tick, &target) in targets.iter().enumerate() {
            let row = &mut logits[tick * VOCAB_SIZE..(tick + 1) * VOCAB_SIZE];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_norm = max + sum.ln();
            recon += (log_norm - row[target - tick * VOCAB_SIZE]) * ce_scale;
            if with_grads {
                // logits become d(loss)/d(logits) in place
                for v in row.iter_mut() {
                    *v = (*v - log_norm).exp() * ce_scale;
                }
                row[target - tick * VOCAB_SIZE] -= ce_scale;
            }
        }
        let Some(g) = grads.as_mut() else { continue };
        let dlogits = logits;

        // decoder output layer
        for (o, d) in g.dec_out_b.data.iter_mut().zip(&dlogits) {
            *o += d;
        }
        let mut dhidden = vec![0.0; dec_hidden];
        for h in 0..dec_hidden {
            let w_row = &params.dec_out_w.data[h * width..(h + 1) * width];
            let g_row = &mut g.dec_out_w.data[h * width..(h + 1) * width];
            let act = hidden[h];
            let mut acc = 0.0;
            for ((gw, &w), &d) in g_row.iter_mut().zip(w_row).zip(&dlogits) {
                *gw += act * d;
                acc += w * d;
            }
            dhidden[h] = acc * (1.0 - act * act);
        }
        // decoder input layer
        for (b, d) in g.dec_in_b.data.iter_mut().zip(&dhidden) {
            *b += d;
        }
        for l in 0..latent {
            let w_row = &params.dec_in_w.data[l * dec_hidden..(l + 1) * dec_hidden];
            let g_row = &mut g.dec_in_w.data[l * dec_hidden..(l + 1) * dec_hidden];
            let zl = z[i][l];
            let mut acc = 0.0;
            for ((gw, &w), &d) in g_row.iter_mut().zip(w_row).zip(&dhidden) {
                *gw += zl * d;
                acc += w * d;
            }
            dz[i][l] += acc;
        }
    }

    if let Some(g) = grads.as_mut() {
        let enc_hidden = config.encoder_hidden;
        for (i, example) in batch.iter().enumerate() {
            let pass = &encoded[i];
            let mut dmu = vec![0.0; latent];
            let mut dlogvar = vec![0.0; latent];
            for l in 0..latent {
                let std = (pass.logvar[l] / 2.0).exp();
                dmu[l] = dz[i][l] + config.beta * pass.mu[l] / nf;
                dlogvar[l] =
                    dz[i][l] * noise[i][l] * 0.5 * std + config.beta * 0.5 * (pass.logvar[l].exp() - 1.0) / nf;
            }
            for (b, d) in g.enc_mu_b.data.iter_mut().zip(&dmu) {
                *b += d;
            }
            for (b, d) in g.enc_logvar_b.data.iter_mut().zip(&dlogvar) {
                *b += d;
            }
            let mut dpre = vec![0.0; enc_hidden];
            for h in 0..enc_hidden {
                let act = pass.hidden[h];
                let mut acc = 0.0;
                for l in 0..latent {
                    let idx = h * latent + l;
                    g.enc_mu_w.data[idx] += act * dmu[l];
                    g.enc_logvar_w.data[idx] += act * dlogvar[l];
                    acc += params.enc_mu_w.data[idx] * dmu[l] + params.enc_logvar_w.data[idx] * dlogvar[l];
                }
                dpre[h] = acc * (1.0 - act * act);
            }
            for (b, d) in g.enc_in_b.data.iter_mut().zip(&dpre) {
                *b += d;
            }
            for row in one_hot_rows(&example.borrow().tokens) {
                let g_row = &mut g.enc_in_w.data[row * enc_hidden..(row + 1) * enc_hidden];
                for (gw, d) in g_row.iter_mut().zip(&dpre) {
                    *gw += d;
                }
            }
        }
    }

    let total = recon + config.beta * kl + config.gamma * reg;
    Ok((LossParts { total, recon, kl, reg }, grads))
}
