//! Trains link prediction on the periodic stream and prints validation AP
//! per epoch.
//!
//! `cargo run --release --example train_periodic -- [epochs]`

use todyformer::config::{NegativePool, RunConfig, Task};
use todyformer::synth::{generate, Pattern, SynthConfig};
use todyformer::trainer::{train, Dataset};

fn main() -> todyformer::Result<()> {
    let epochs = std::env::args().nth(1).map_or(10, |a| a.parse().expect("epochs"));
    let g = generate(&SynthConfig::new(Pattern::Periodic, 20, 2000, 7))?;
    let data = Dataset::from_graph(g, "periodic");
    let mut cfg = RunConfig::new("periodic.csv", Task::Flp);
    cfg.window = 200;
    cfg.patches = 8;
    cfg.encoder.hidden = 32;
    cfg.epochs = epochs;
    cfg.lr = 1e-3;
    cfg.batch_size = 20;
    cfg.negatives = NegativePool::Bipartite;
    let (_, report) = train::<f32>(&cfg, &data, None)?;
    for row in report.rows.iter().filter(|r| r.split == "val" && r.metric == "ap") {
        println!("epoch {:>3}  val AP {:.4}", row.epoch, row.value);
    }
    println!("best epoch {}: test {:?}", report.best_epoch, report.test);
    Ok(())
}
