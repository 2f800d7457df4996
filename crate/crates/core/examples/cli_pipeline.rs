//! Drives the command-line interface end to end in a scratch directory:
//! synth, prepare, train, evaluate and a small ablation.
//!
//! `cargo run --release --example cli_pipeline`

use todyformer::cli::run_from;

const CONFIG: &str = r#"{
    "dataset": "data.csv",
    "task": "flp",
    "window": 64,
    "patches": 4,
    "batch_size": 25,
    "epochs": 2,
    "lr": 0.001,
    "encoder": {"hidden": 8, "blocks": 2, "mpnn_layers": 2, "attn_layers": 1, "heads": 2, "time_dim": 4, "fanouts": [4, 2]}
}"#;

fn main() -> todyformer::Result<()> {
    let dir = tempfile::tempdir()?;
    let wd = dir.path().to_str().expect("utf-8 path").to_string();
    std::fs::write(dir.path().join("config.json"), CONFIG)?;
    let steps: [&[&str]; 5] = [
        &["synth", "--pattern", "periodic", "--nodes", "16", "--edges", "400", "--seed", "5", "--out", "data.csv"],
        &["prepare", "data.csv", "--out", "prep"],
        &["train", "--config", "config.json", "--out", "run"],
        &["evaluate", "--config", "config.json", "--checkpoint", "run/model.ckpt", "--split", "test", "--out", "eval.csv"],
        &["ablate", "--config", "config.json", "--axis", "num-patches", "--values", "2,4", "--epochs", "1", "--out", "ablate.csv"],
    ];
    for args in steps {
        let mut full = vec!["todyformer", "--workdir", &wd];
        full.extend_from_slice(args);
        println!("$ todyformer {}", args.join(" "));
        run_from(full, &mut std::io::stdout())?;
    }
    for f in ["prep/stats.json", "eval.csv", "ablate.csv"] {
        println!("--- {f}\n{}", std::fs::read_to_string(dir.path().join(f))?);
    }
    Ok(())
}
