//! Run configuration: everything needed to reproduce a training or
//! evaluation run, read from JSON.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::graph::SplitMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Flp,
    Dnc,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Flp => "flp",
            Task::Dnc => "dnc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

/// Support of the negative destination sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NegativePool {
    /// Every node except the true destination.
    Uniform,
    /// Only nodes that appear as a destination somewhere in the stream.
    Bipartite,
}

fn default_window() -> usize {
    65536
}
fn default_patches() -> usize {
    8
}
fn default_batch() -> usize {
    200
}
fn default_lr() -> f64 {
    3e-4
}
fn default_epochs() -> usize {
    100
}
fn default_frac() -> f64 {
    0.1
}
fn default_one() -> usize {
    1
}
fn default_split() -> SplitMode {
    SplitMode::Transductive
}
fn default_precision() -> Precision {
    Precision::F32
}
fn default_pool() -> NegativePool {
    NegativePool::Uniform
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Edge-stream CSV, relative to the working directory.
    pub dataset: PathBuf,
    pub task: Task,
    #[serde(default = "default_split")]
    pub split: SplitMode,
    /// Fraction of nodes withheld in inductive runs.
    #[serde(default = "default_frac")]
    pub inductive_frac: f64,
    /// Window size `W` in edges.
    #[serde(default = "default_window")]
    pub window: usize,
    /// Patch count `M`.
    #[serde(default = "default_patches")]
    pub patches: usize,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Link-prediction epochs run before a node-classification decoder is
    /// fitted on the frozen encoder.
    #[serde(default)]
    pub pretrain_epochs: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_precision")]
    pub precision: Precision,
    #[serde(default = "default_pool")]
    pub negatives: NegativePool,
    /// Negatives per positive during evaluation (training always uses one).
    #[serde(default = "default_one")]
    pub eval_negatives: usize,
    /// Width of the all-zero node features used when the dataset has none.
    #[serde(default)]
    pub node_dim: usize,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// A config with every default and the given dataset and task.
    pub fn new(dataset: impl Into<PathBuf>, task: Task) -> Self {
        RunConfig {
            dataset: dataset.into(),
            task,
            split: default_split(),
            inductive_frac: default_frac(),
            window: default_window(),
            patches: default_patches(),
            encoder: EncoderConfig::default(),
            batch_size: default_batch(),
            lr: default_lr(),
            epochs: default_epochs(),
            pretrain_epochs: None,
            seed: 0,
            precision: default_precision(),
            negatives: default_pool(),
            eval_negatives: 1,
            node_dim: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.window == 0 || self.patches == 0 || self.window < self.patches {
            return bad(format!(
                "window {} must be at least the patch count {} (and both positive)",
                self.window, self.patches
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr {} must be a finite non-negative number", self.lr));
        }
        if self.eval_negatives == 0 {
            return bad("eval_negatives must be positive".into());
        }
        if !(self.inductive_frac > 0.0 && self.inductive_frac < 1.0) {
            return bad(format!("inductive_frac {} must lie in (0, 1)", self.inductive_frac));
        }
        self.encoder.validate()
    }

    pub fn pretrain_epochs(&self) -> usize {
        self.pretrain_epochs.unwrap_or(self.epochs)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
