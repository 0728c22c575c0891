use folkvae::corpus::Example;
use folkvae::score::{Token, TokenSequence};
use folkvae::vae::{backward, init_params, loss, ModelConfig, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const H: f64 = 1e-4;

fn tiny(seed: u64) -> ModelConfig {
    ModelConfig { encoder_hidden: 8, decoder_hidden: 8, latent_dim: 4, seed, ..ModelConfig::default() }
}

fn random_sequence(rng: &mut impl Rng) -> TokenSequence {
    let tokens = (0..48)
        .map(|_| match rng.random_range(0..4) {
            0 => Token::Rest,
            1 | 2 => Token::Hold,
            _ => Token::Note(rng.random_range(48..=95)),
        })
        .collect();
    TokenSequence::repaired(tokens).unwrap()
}

fn flat_get(params: &ModelParams, tensor: usize, index: usize) -> f64 {
    params.tensors()[tensor].data[index]
}

fn flat_set(params: &mut ModelParams, tensor: usize, index: usize, value: f64) {
    params.tensors_mut()[tensor].data[index] = value;
}

/// Largest relative error `|a - n| / max(|a|, |n|, 1e-7)` over 20 sampled
/// parameters for one seed.
pub fn max_relative_error(seed: u64) -> f64 {
    let config = tiny(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
    let mut params = init_params(&config).unwrap();
    // non-zero biases so every tensor carries signal
    for t in params.tensors_mut() {
        if t.shape.len() == 1 {
            t.data.iter_mut().for_each(|v| *v = rng.random_range(-0.3..0.3));
        }
    }
    let batch: Vec<Example> = (0..2).map(|_| Example::new(random_sequence(&mut rng))).collect();
    let noise: Vec<Vec<f64>> =
        (0..2).map(|_| (0..4).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).collect();
    let grads = backward(&params, &batch, &noise, &config).unwrap();
    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.data.len()).collect();

    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let tensor = rng.random_range(0..sizes.len());
        let index = rng.random_range(0..sizes[tensor]);
        let original = flat_get(&params, tensor, index);
        flat_set(&mut params, tensor, index, original + H);
        let plus = loss(&params, &batch, &noise, &config).unwrap().total;
        flat_set(&mut params, tensor, index, original - H);
        let minus = loss(&params, &batch, &noise, &config).unwrap().total;
        flat_set(&mut params, tensor, index, original);
        let numeric = (plus - minus) / (2.0 * H);
        let analytic = flat_get(&grads, tensor, index);
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7);
        worst = worst.max(err);
    }
    worst
}

#[test]
fn analytic_gradients_match_central_differences() {
    for seed in 1..=5 {
        let err = max_relative_error(seed);
        println!("seed {seed}: max relative error {err:.3e}");
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}
