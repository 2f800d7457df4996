//! Generates both synthetic edge streams and prints the first rows of each.
//!
//! `cargo run --example synth_stream`

use todyformer::graph::write_edge_stream;
use todyformer::synth::{generate, Pattern, SynthConfig};

fn main() -> todyformer::Result<()> {
    for pattern in [Pattern::Periodic, Pattern::Longrange] {
        let cfg = SynthConfig::new(pattern, 8, 24, 1);
        let g = generate(&cfg)?;
        let mut csv = Vec::new();
        write_edge_stream(&g, &mut csv)?;
        let text = String::from_utf8(csv).expect("csv is utf-8");
        println!("{pattern:?}: {} nodes, {} edges, round of {}", g.num_nodes(), g.num_edges(), cfg.round_len());
        for line in text.lines().take(6) {
            println!("  {line}");
        }
    }
    Ok(())
}
