//! Trains the default model on an ABC file and prints per-epoch metrics.
//!
//! `cargo run --release --example train_desk -- [path.abc] [epochs] [seed]`

use std::time::Instant;

use folkvae::corpus::Dataset;
use folkvae::vae::{latent_attribute_correlations, token_accuracy, train, ModelConfig, TrainingConfig};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let path = args.first().cloned().unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/data/desk_corpus.abc").into());
    let epochs = args.get(1).map_or(100, |s| s.parse().expect("epochs"));
    let seed = args.get(2).map_or(1, |s| s.parse().expect("seed"));

    let text = std::fs::read_to_string(&path).expect("read corpus");
    let dataset = Dataset::from_abc(&text, seed).expect("dataset");
    let model = ModelConfig { seed, ..ModelConfig::default() };
    let training = TrainingConfig { epochs, ..TrainingConfig::default() };
    let start = Instant::now();
    let (params, _report) = train(&dataset, &model, &training, |e| {
        let rho: Vec<String> = e.spearman.iter().map(|r| format!("{:.3}", r.unwrap_or(f64::NAN))).collect();
        println!(
            "epoch {:3}  total {:.4}  recon {:.4}  kl {:.3}  reg {:.4}  val_acc {:.3}  rho [{}]  {:.1}s",
            e.epoch,
            e.total,
            e.recon,
            e.kl,
            e.reg,
            e.validation_accuracy,
            rho.join(", "),
            start.elapsed().as_secs_f64()
        );
    })
    .expect("training");

    println!("train accuracy {:.4}", token_accuracy(&params, &dataset.train));
    for (d, row) in latent_attribute_correlations(&params, &dataset.validation).iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|r| format!("{:+.3}", r.unwrap_or(f64::NAN))).collect();
        println!("mu[{d:2}] {}", cells.join(" "));
    }
}
