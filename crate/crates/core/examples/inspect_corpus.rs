//! Prints admission statistics for an ABC file.
//!
//! cargo run -p folkvae-core --example inspect_corpus -- path/to/file.abc

use folkvae::corpus::Dataset;

fn main() {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/data/desk_corpus.abc").to_string());
    let text = std::fs::read_to_string(&path).expect("readable corpus");
    let dataset = Dataset::from_abc(&text, 1).expect("enough measures");
    for d in &dataset.diagnostics {
        println!("{d}");
    }
    println!("{}", serde_json::to_string_pretty(&dataset.stats).unwrap());
}
