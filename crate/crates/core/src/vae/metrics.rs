use std::borrow::Borrow;

use super::{argmax_tokens, decoder_pass, encoder_pass, ModelParams};
use crate::corpus::Example;

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // 1-based ranks; ties share the mean of their positions
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Spearman rank correlation with average ranks for ties. `None` when the
/// inputs differ in length, have fewer than two points, or either side is
/// constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Fraction of ticks where `decode(encode(x).mu)` reproduces `x`.
pub fn token_accuracy<E: Borrow<Example>>(params: &ModelParams, examples: &[E]) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut total = 0usize;
    for example in examples {
        let tokens = &example.borrow().tokens;
        let pass = encoder_pass(params, tokens);
        let (_, logits) = decoder_pass(params, &pass.mu);
        let decoded = argmax_tokens(&logits);
        hits += decoded.tokens().iter().zip(tokens.tokens()).filter(|(a, b)| a == b).count();
        total += tokens.tokens().len();
    }
    hits as f64 / total as f64
}

/// Spearman correlation of `mu[d]` with each attribute, for every latent
/// dimension `d`. Row `d` holds the four attribute correlations.
pub fn latent_attribute_correlations<E: Borrow<Example>>(
    params: &ModelParams,
    examples: &[E],
) -> Vec<[Option<f64>; 4]> {
    let latent = params.enc_mu_b.data.len();
    let mus: Vec<Vec<f64>> = examples.iter().map(|e| encoder_pass(params, &e.borrow().tokens).mu).collect();
    let attrs: Vec<[f64; 4]> = examples.iter().map(|e| e.borrow().attributes.as_array()).collect();
    let columns: Vec<Vec<f64>> = (0..4).map(|a| attrs.iter().map(|v| v[a]).collect()).collect();
    (0..latent)
        .map(|d| {
            let dim: Vec<f64> = mus.iter().map(|m| m[d]).collect();
            let mut row = [None; 4];
            for (slot, column) in row.iter_mut().zip(&columns) {
                *slot = spearman(&dim, column);
            }
            row
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 20.0, 5.0]), vec![2.0, 3.5, 3.5, 1.0]);
    }

    #[test]
    fn monotone_maps_correlate_perfectly() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| v.powi(3)).collect();
        assert!((spearman(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        let rev: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((spearman(&x, &rev).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn textbook_value() {
        // no ties, so rho = 1 - 6Σd²/(n(n²-1)) with Σd² = 4
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y = [2.0, 1.0, 4.0, 3.0, 5.0];
        let expected = 1.0 - 6.0 * 4.0 / (5.0 * 24.0);
        assert!((spearman(&x, &y).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        assert_eq!(spearman(&[1.0], &[2.0]), None);
        assert_eq!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), None);
        assert_eq!(spearman(&[1.0, 2.0], &[1.0]), None);
    }
}
