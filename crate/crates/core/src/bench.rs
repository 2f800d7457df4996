//! Forward-pass wall time of the encoder against stream size.

use std::io::Write;
use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::encoder::{prepare, Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::graph::{EventGraph, RawEdge, NO_LABEL};
use crate::nn::ParamStore;
use crate::rng::{derive, rng};
use crate::stream::{extract_window, patchify};
use crate::tensor::Tape;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    /// Edge counts to time; the window always spans the whole stream.
    pub scales: Vec<usize>,
    pub patches: Vec<usize>,
    pub blocks: usize,
    pub hidden: usize,
    /// Query nodes per forward pass.
    pub queries: usize,
    pub reps: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            scales: vec![1 << 12, 1 << 13, 1 << 14, 1 << 15],
            patches: vec![8],
            blocks: 3,
            hidden: 32,
            queries: 200,
            reps: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    #[serde(rename = "E")]
    pub e: usize,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "L")]
    pub l: usize,
    /// Median forward time in milliseconds.
    pub ms: f64,
}

/// Uniformly random stream with `E/8` nodes (at least 2) and unit time steps.
pub fn random_graph(e: usize, seed: u64) -> Result<EventGraph> {
    let n = (e / 8).max(2) as u64;
    let mut r = rng(seed);
    let rows = (0..e)
        .map(|i| RawEdge {
            src: r.random_range(0..n),
            dst: r.random_range(0..n),
            t: i as f64,
            label: NO_LABEL,
            feat: Vec::new(),
        })
        .collect();
    EventGraph::from_raw(rows, false)
}

/// Times `reps` encoder forward passes per (scale, patch count); input
/// preparation is excluded from the timing.
pub fn run(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if cfg.reps == 0 || cfg.queries == 0 {
        return Err(Error::Config("reps and queries must be positive".into()));
    }
    let enc_cfg = EncoderConfig {
        hidden: cfg.hidden,
        blocks: cfg.blocks,
        ..EncoderConfig::default()
    };
    let mut rows = Vec::new();
    for &m in &cfg.patches {
        for &e in &cfg.scales {
            let g = random_graph(e, derive(cfg.seed, &[e as u64]))?;
            let mut store = ParamStore::<f32>::new();
            let encoder = Encoder::new(&mut store, &mut rng(derive(cfg.seed, &[1])), &enc_cfg, 0, 0)?;
            let mut r = rng(derive(cfg.seed, &[2, e as u64]));
            let query: Vec<usize> = (0..cfg.queries).map(|_| r.random_range(0..g.num_nodes())).collect();
            let patches = patchify(extract_window(&g, e, e)?, m)?;
            let input = prepare(&g, &patches, &query, &enc_cfg, cfg.seed)?;
            let mut times = Vec::with_capacity(cfg.reps);
            for _ in 0..cfg.reps {
                let tape = Tape::new();
                let p = store.bind(&tape, &|_| false);
                let start = Instant::now();
                let h = encoder.encode(&p, &tape, &input)?;
                std::hint::black_box(h.value());
                times.push(start.elapsed().as_secs_f64() * 1e3);
            }
            times.sort_by(f64::total_cmp);
            rows.push(BenchRow {
                e,
                m,
                l: cfg.blocks,
                ms: times[times.len() / 2],
            });
        }
    }
    Ok(rows)
}

pub fn write_csv(out: impl Write, rows: &[BenchRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    }
    w.flush()?;
    Ok(())
}

/// Largest time ratio between consecutive scales at the same patch count.
pub fn max_doubling_ratio(rows: &[BenchRow]) -> f64 {
    rows.windows(2)
        .filter(|w| w[0].m == w[1].m && w[1].e == 2 * w[0].e)
        .map(|w| w[1].ms / w[0].ms)
        .fold(0.0, f64::max)
}
