//! Pretrains the encoder on link prediction, freezes it and fits the node
//! classifier on edge labels.
//!
//! `cargo run --release --example node_classification`

use todyformer::config::{NegativePool, RunConfig, Task};
use todyformer::synth::{generate, Pattern, SynthConfig};
use todyformer::trainer::{train, Dataset};

fn main() -> todyformer::Result<()> {
    let mut synth = SynthConfig::new(Pattern::Periodic, 20, 1000, 3);
    synth.labels = true;
    let data = Dataset::from_graph(generate(&synth)?, "periodic-labels");
    let mut cfg = RunConfig::new("periodic.csv", Task::Dnc);
    cfg.window = 100;
    cfg.patches = 4;
    cfg.encoder.hidden = 16;
    cfg.batch_size = 20;
    cfg.lr = 1e-3;
    cfg.pretrain_epochs = Some(3);
    cfg.epochs = 20;
    cfg.negatives = NegativePool::Bipartite;
    let (_, report) = train::<f32>(&cfg, &data, None)?;
    for row in report.rows.iter().filter(|r| r.split == "val" && r.task == "dnc" && r.metric != "loss") {
        println!("epoch {:>3}  val {:<8} {:.4}", row.epoch, row.metric, row.value);
    }
    println!("best epoch {}: val {:?}", report.best_epoch, report.val);
    println!("test {:?}", report.test);
    Ok(())
}
