//! Command-line surface. Every path argument is resolved against
//! `--workdir`; input files are never modified.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::bench::{self, BenchConfig};
use crate::config::{Precision, RunConfig, Task};
use crate::error::{Error, Result};
use crate::graph::{load_edge_stream, write_edge_stream, Part};
use crate::seqpack::{PeInput, PeKind};
use crate::synth::{self, Pattern, SynthConfig};
use crate::tensor::Float;
use crate::trainer::{evaluate, evaluation_rows, manifest, train, write_json, write_metrics_csv, Artifacts, Dataset, Metrics, Model};

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "TODYFORMER_THREADS";

#[derive(Debug, Parser)]
#[command(name = "todyformer", version, about = "Patch-tokenized transformer encoder for continuous-time dynamic graphs")]
pub struct Cli {
    /// Directory every relative path is resolved against.
    #[arg(long, global = true, default_value = ".")]
    pub workdir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate an edge-stream CSV, write it in canonical order and report statistics.
    Prepare {
        dataset: PathBuf,
        #[arg(long, default_value = "prepared")]
        out: PathBuf,
    },
    /// Train a model and write checkpoint, metrics CSV and manifest.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "run")]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Score a checkpoint on one split.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Metrics CSV to write; the manifest goes next to it.
        #[arg(long, default_value = "eval/metrics.csv")]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train once per setting of one hyperparameter and tabulate the results.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated settings; each axis has a default grid.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        #[arg(long, default_value = "ablation.csv")]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Time the encoder forward pass as the stream grows.
    Bench {
        /// Edge counts, e.g. 4096,8192.
        #[arg(long, value_delimiter = ',', default_values_t = vec![4096usize, 8192, 16384, 32768])]
        scale: Vec<usize>,
        /// Patch counts; each is timed at every scale.
        #[arg(long, value_delimiter = ',', default_values_t = vec![8usize])]
        patches: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        blocks: usize,
        #[arg(long, default_value_t = 32)]
        hidden: usize,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "bench.csv")]
        out: PathBuf,
    },
    /// Generate a synthetic edge stream.
    Synth {
        #[arg(long, value_enum)]
        pattern: PatternArg,
        #[arg(long, default_value_t = 20)]
        nodes: usize,
        #[arg(long, default_value_t = 2000)]
        edges: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Attach binary edge labels.
        #[arg(long)]
        labels: bool,
        #[arg(long, default_value = "synthetic.csv")]
        out: PathBuf,
    },
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TaskArg {
    Flp,
    Dnc,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    PeKind,
    PeInput,
    NumPatches,
    Window,
    Blocks,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PatternArg {
    Periodic,
    Longrange,
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        if let Some(t) = self.task {
            cfg.task = match t {
                TaskArg::Flp => Task::Flp,
                TaskArg::Dnc => Task::Dnc,
            };
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        cfg.validate()
    }
}

/// Sizes the global worker pool from [`THREADS_ENV`] when set.
pub fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    if n == 0 {
        return Err(Error::Config(format!("{THREADS_ENV} must be positive")));
    }
    // A pool that already exists keeps its size.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Parses `args` (program name first) and runs the command, writing
/// human-readable output to `out`.
pub fn run_from<I, T>(args: I, out: &mut dyn Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(&cli, out),
        Err(e) if !e.use_stderr() => Ok(write!(out, "{e}")?),
        Err(e) => Err(Error::Config(e.to_string())),
    }
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    init_threads()?;
    let wd = &cli.workdir;
    match &cli.command {
        Command::Prepare { dataset, out: dir } => prepare(wd, dataset, dir, out),
        Command::Train {
            config,
            out: dir,
            overrides,
        } => {
            let cfg = load_config(wd, config, overrides)?;
            let data = Dataset::load(&cfg, wd)?;
            let art = Artifacts { dir: wd.join(dir) };
            let (best_epoch, test) = match cfg.precision {
                Precision::F32 => train_with::<f32>(&cfg, &data, &art)?,
                Precision::F64 => train_with::<f64>(&cfg, &data, &art)?,
            };
            writeln!(out, "best epoch {best_epoch}")?;
            print_metrics(out, "test", &test)?;
            writeln!(out, "artifacts in {}", art.dir.display())?;
            Ok(())
        }
        Command::Evaluate {
            config,
            checkpoint,
            split,
            out: csv_path,
            overrides,
        } => {
            let cfg = load_config(wd, config, overrides)?;
            let data = Dataset::load(&cfg, wd)?;
            let part = match split {
                SplitArg::Val => Part::Val,
                SplitArg::Test => Part::Test,
            };
            let ckpt = wd.join(checkpoint);
            let (epoch, m) = match cfg.precision {
                Precision::F32 => evaluate_with::<f32>(&cfg, &data, &ckpt, part)?,
                Precision::F64 => evaluate_with::<f64>(&cfg, &data, &ckpt, part)?,
            };
            let csv_path = wd.join(csv_path);
            if let Some(dir) = csv_path.parent() {
                std::fs::create_dir_all(dir)?;
            }
            write_metrics_csv(&csv_path, &evaluation_rows(&cfg, epoch, part, &m))?;
            write_json(&csv_path.with_extension("manifest.json"), &manifest(&cfg, &data, "evaluate"))?;
            print_metrics(out, part.name(), &m)
        }
        Command::Ablate {
            config,
            axis,
            values,
            out: csv_path,
            overrides,
        } => {
            let base = load_config(wd, config, overrides)?;
            let rows = ablate(wd, &base, *axis, values)?;
            let csv_path = wd.join(csv_path);
            let mut w = csv::Writer::from_path(&csv_path).map_err(csv_err)?;
            for r in &rows {
                w.serialize(r).map_err(csv_err)?;
                writeln!(out, "{} = {}: val {:.4}, test {:.4}", name_of(&r.axis), r.setting, r.val, r.test)?;
            }
            w.flush()?;
            Ok(())
        }
        Command::Bench {
            scale,
            patches,
            blocks,
            hidden,
            reps,
            seed,
            out: csv_path,
        } => {
            let cfg = BenchConfig {
                scales: scale.clone(),
                patches: patches.clone(),
                blocks: *blocks,
                hidden: *hidden,
                queries: 200,
                reps: *reps,
                seed: *seed,
            };
            let rows = bench::run(&cfg)?;
            bench::write_csv(BufWriter::new(File::create(wd.join(csv_path))?), &rows)?;
            for r in &rows {
                writeln!(out, "E={} M={} L={} {:.2} ms", r.e, r.m, r.l, r.ms)?;
            }
            Ok(())
        }
        Command::Synth {
            pattern,
            nodes,
            edges,
            seed,
            labels,
            out: path,
        } => {
            let pattern = match pattern {
                PatternArg::Periodic => Pattern::Periodic,
                PatternArg::Longrange => Pattern::Longrange,
            };
            let cfg = SynthConfig {
                pattern,
                nodes: *nodes,
                edges: *edges,
                seed: *seed,
                labels: *labels,
            };
            let g = synth::generate(&cfg)?;
            let mut f = BufWriter::new(File::create(wd.join(path))?);
            write_edge_stream(&g, &mut f)?;
            f.flush()?;
            writeln!(out, "wrote {} edges over {} nodes to {}", g.num_edges(), g.num_nodes(), path.display())?;
            Ok(())
        }
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

fn load_config(wd: &Path, path: &Path, overrides: &Overrides) -> Result<RunConfig> {
    let mut cfg = RunConfig::from_path(&wd.join(path))?;
    overrides.apply(&mut cfg)?;
    Ok(cfg)
}

fn print_metrics(out: &mut dyn Write, split: &str, m: &Metrics) -> Result<()> {
    for (k, v) in m {
        writeln!(out, "{split:<5} {k:<8} {v:.6}")?;
    }
    Ok(())
}

fn train_with<F: Float>(cfg: &RunConfig, data: &Dataset, art: &Artifacts) -> Result<(usize, Metrics)> {
    let (_, report) = train::<F>(cfg, data, Some(art))?;
    Ok((report.best_epoch, report.test))
}

fn evaluate_with<F: Float>(cfg: &RunConfig, data: &Dataset, ckpt: &Path, part: Part) -> Result<(usize, Metrics)> {
    let (model, meta) = Model::<F>::load(cfg, &data.graph, ckpt)?;
    let epoch = meta.get("epoch").and_then(|e| e.as_u64()).unwrap_or(0) as usize;
    Ok((epoch, evaluate(&model, cfg, data, part)?))
}

#[derive(Debug, Clone, Serialize)]
struct PrepareStats {
    nodes: usize,
    edges: usize,
    unique_edges: usize,
    repetitive_edge_pct: f64,
    edge_dim: usize,
    has_labels: bool,
    dataset_hash: String,
}

fn prepare(wd: &Path, dataset: &Path, dir: &Path, out: &mut dyn Write) -> Result<()> {
    let src = wd.join(dataset);
    let g = load_edge_stream(&src, false)?;
    let dir = wd.join(dir);
    std::fs::create_dir_all(&dir)?;
    let canonical = dir.join("dataset.csv");
    if canonical.canonicalize().ok() == src.canonicalize().ok() {
        return Err(Error::Config("prepare output would overwrite its input".into()));
    }
    let mut f = BufWriter::new(File::create(&canonical)?);
    write_edge_stream(&g, &mut f)?;
    f.flush()?;
    drop(f);
    let mut pairs: Vec<(usize, usize)> = g.edges().iter().map(|e| (e.src.min(e.dst), e.src.max(e.dst))).collect();
    pairs.sort_unstable();
    pairs.dedup();
    let stats = PrepareStats {
        nodes: g.num_nodes(),
        edges: g.num_edges(),
        unique_edges: pairs.len(),
        repetitive_edge_pct: g.repetitive_edge_pct(),
        edge_dim: g.edge_dim(),
        has_labels: g.has_labels(),
        dataset_hash: crate::graph::content_hash(&canonical)?,
    };
    let json = serde_json::to_value(&stats)?;
    write_json(&dir.join("stats.json"), &json)?;
    writeln!(out, "{}", serde_json::to_string_pretty(&json)?)?;
    Ok(())
}

/// One row of the ablation CSV: the primary metric (AP for link
/// prediction, AUC for node classification) at the best epoch.
#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub axis: Axis,
    pub setting: String,
    pub task: &'static str,
    pub seed: u64,
    pub best_epoch: usize,
    pub val: f64,
    pub test: f64,
}

/// Default settings of each ablation axis.
pub fn default_grid(axis: Axis, base: &RunConfig) -> Vec<String> {
    match axis {
        Axis::PeKind => PeKind::ALL.iter().map(|k| name_of(k)).collect(),
        Axis::PeInput => PeInput::ALL.iter().map(|k| name_of(k)).collect(),
        Axis::NumPatches => vec!["8".into(), "16".into(), "32".into()],
        Axis::Window => [4, 2, 1].iter().map(|d| (base.window / d).max(base.patches).to_string()).collect(),
        Axis::Blocks => vec!["1x9".into(), "3x3".into()],
    }
}

fn name_of<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|j| j.as_str().map(str::to_string))
        .unwrap_or_default()
}

/// `base` with one axis set to `setting`.
pub fn apply_setting(base: &RunConfig, axis: Axis, setting: &str) -> Result<RunConfig> {
    let bad = || Error::Config(format!("invalid {} setting {setting:?}", name_of(&axis)));
    let parse = |s: &str| s.trim().parse::<usize>().map_err(|_| bad());
    let quoted = serde_json::Value::String(setting.trim().to_string());
    let mut cfg = base.clone();
    match axis {
        Axis::PeKind => {
            cfg.encoder.pe_kind = serde_json::from_value(quoted).map_err(|_| bad())?;
            cfg.encoder.pe = true;
        }
        Axis::PeInput => {
            cfg.encoder.pe_input = serde_json::from_value(quoted).map_err(|_| bad())?;
            cfg.encoder.pe = true;
        }
        Axis::NumPatches => cfg.patches = parse(setting)?,
        Axis::Window => cfg.window = parse(setting)?,
        Axis::Blocks => {
            let (l, k) = setting.split_once('x').ok_or_else(bad)?;
            cfg.encoder.blocks = parse(l)?;
            cfg.encoder.mpnn_layers = parse(k)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Trains once per setting, sequentially and with the base seed.
pub fn ablate(wd: &Path, base: &RunConfig, axis: Axis, values: &[String]) -> Result<Vec<AblationRow>> {
    let grid = if values.is_empty() { default_grid(axis, base) } else { values.to_vec() };
    let data = Dataset::load(base, wd)?;
    let key = match base.task {
        Task::Flp => "ap",
        Task::Dnc => "auc",
    };
    grid.iter()
        .map(|setting| {
            let cfg = apply_setting(base, axis, setting)?;
            let report = match cfg.precision {
                Precision::F32 => train::<f32>(&cfg, &data, None)?.1,
                Precision::F64 => train::<f64>(&cfg, &data, None)?.1,
            };
            Ok(AblationRow {
                axis,
                setting: setting.trim().to_string(),
                task: cfg.task.name(),
                seed: cfg.seed,
                best_epoch: report.best_epoch,
                val: report.best_val,
                test: report.test[key],
            })
        })
        .collect()
}
