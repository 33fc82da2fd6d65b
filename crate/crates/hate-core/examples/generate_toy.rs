//! Regenerates the bundled toy corpus:
//!
//! ```text
//! cargo run -p hate-core --example generate_toy -- data/toy.jsonl
//! ```

use hate_core::synth;

fn main() {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "data/toy.jsonl".to_string());
    let transactions = synth::toy_corpus(120, 20240817);
    synth::write_jsonl(&transactions, std::path::Path::new(&path)).expect("write corpus");
    println!("wrote {} transactions to {path}", transactions.len());
}
