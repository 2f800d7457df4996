//! Compares the encoder with its ablations on the longrange stream, where
//! each edge repeats a pairing last seen several patches earlier.
//!
//! `cargo run --release --example ablate_longrange -- [epochs] [seeds]`

use todyformer::config::{NegativePool, RunConfig, Task};
use todyformer::encoder::EncoderConfig;
use todyformer::synth::{generate, longrange_window, Pattern, SynthConfig};
use todyformer::trainer::{train, Dataset};

fn main() -> todyformer::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("integer argument"));
    let epochs = args.next().unwrap_or(15);
    let seeds = args.next().unwrap_or(3) as u64;
    let nodes = 40;
    let data = Dataset::from_graph(generate(&SynthConfig::new(Pattern::Longrange, nodes, 2000, 11))?, "longrange");
    let variants: [(&str, fn(&mut EncoderConfig)); 4] = [
        ("full", |_| {}),
        ("single block", |e| e.blocks = 1),
        ("no positional encoding", |e| e.pe = false),
        ("no global encoder", |e| e.global = false),
    ];
    for (name, apply) in variants {
        let mut aps = Vec::new();
        for seed in 0..seeds {
            let mut cfg = RunConfig::new("longrange.csv", Task::Flp);
            cfg.window = longrange_window(nodes, 5, 8)?;
            cfg.patches = 8;
            cfg.encoder.hidden = 32;
            cfg.epochs = epochs;
            cfg.lr = 5e-4;
            cfg.batch_size = 20;
            cfg.seed = seed;
            cfg.negatives = NegativePool::Bipartite;
            apply(&mut cfg.encoder);
            aps.push(train::<f32>(&cfg, &data, None)?.1.test["ap"]);
        }
        println!("{name:<24} test AP {aps:.4?}");
    }
    Ok(())
}
