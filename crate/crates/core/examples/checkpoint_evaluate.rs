//! Trains briefly with artifacts on disk, reloads the checkpoint and checks
//! that evaluation reproduces the logged test metrics.
//!
//! `cargo run --release --example checkpoint_evaluate`

use todyformer::config::{RunConfig, Task};
use todyformer::graph::Part;
use todyformer::synth::{generate, Pattern, SynthConfig};
use todyformer::trainer::{evaluate, train, Artifacts, Dataset, Model};

fn main() -> todyformer::Result<()> {
    let dir = tempfile::tempdir()?;
    let art = Artifacts { dir: dir.path().join("run") };
    let data = Dataset::from_graph(generate(&SynthConfig::new(Pattern::Periodic, 12, 400, 2))?, "periodic");
    let mut cfg = RunConfig::new("periodic.csv", Task::Flp);
    cfg.window = 48;
    cfg.patches = 4;
    cfg.encoder.hidden = 16;
    cfg.batch_size = 25;
    cfg.epochs = 3;
    let (_, report) = train::<f32>(&cfg, &data, Some(&art))?;
    let (model, meta) = Model::<f32>::load(&cfg, &data.graph, &art.checkpoint())?;
    let again = evaluate(&model, &cfg, &data, Part::Test)?;
    println!("checkpoint from epoch {}", meta["epoch"]);
    println!("logged test    {:?}", report.test);
    println!("reloaded test  {again:?}");
    println!("identical: {}", again == report.test);
    println!("{}", std::fs::read_to_string(art.metrics())?);
    Ok(())
}
