//! Seeded synthetic edge streams with known temporal structure.
//!
//! Both patterns are bipartite: sources `0..P` and destinations `P..2P`.
//! * `periodic`: a fixed perfect matching σ replayed round after round in
//!   a fixed order, so almost every edge repeats.
//! * `longrange`: two matchings σ and τ alternate in phases of `P` edges.
//!   Each edge's previous occurrence lies exactly one round (`2P` edges)
//!   back, while the node's most recent interaction is with its other
//!   partner, so the signal sits several patches in the past.

use serde::{Deserialize, Serialize};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::graph::{EventGraph, RawEdge, NO_LABEL};
use crate::rng::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pattern {
    Periodic,
    Longrange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub pattern: Pattern,
    pub nodes: usize,
    pub edges: usize,
    pub seed: u64,
    /// Attach binary labels to every edge.
    pub labels: bool,
}

impl SynthConfig {
    pub fn new(pattern: Pattern, nodes: usize, edges: usize, seed: u64) -> Self {
        SynthConfig {
            pattern,
            nodes,
            edges,
            seed,
            labels: false,
        }
    }

    /// Edges per round of the schedule.
    pub fn round_len(&self) -> usize {
        let p = self.nodes / 2;
        match self.pattern {
            Pattern::Periodic => p,
            Pattern::Longrange => 2 * p,
        }
    }
}

/// Window size that places each longrange edge's previous occurrence at
/// least `gap_patches` patches back when the window has `patches` patches.
pub fn longrange_window(nodes: usize, gap_patches: usize, patches: usize) -> Result<usize> {
    let round = 2 * (nodes / 2);
    let patch = round / gap_patches.max(1);
    if patch == 0 {
        return Err(Error::Config(format!(
            "{nodes} nodes are too few for a gap of {gap_patches} patches"
        )));
    }
    Ok(patch * patches)
}

pub fn generate(cfg: &SynthConfig) -> Result<EventGraph> {
    let p = cfg.nodes / 2;
    if p < 2 {
        return Err(Error::Config(format!("synthetic streams need at least 4 nodes, got {}", cfg.nodes)));
    }
    if cfg.edges == 0 {
        return Err(Error::Config("synthetic streams need at least one edge".into()));
    }
    let mut r = rng(cfg.seed);
    let mut sigma: Vec<usize> = (0..p).collect();
    sigma.shuffle(&mut r);
    let mut order_a: Vec<usize> = (0..p).collect();
    order_a.shuffle(&mut r);
    let mut order_b: Vec<usize> = (0..p).collect();
    order_b.shuffle(&mut r);
    // τ(u) = σ(u + 1 mod P) differs from σ(u) for every u.
    let tau: Vec<usize> = (0..p).map(|u| sigma[(u + 1) % p]).collect();

    let round: Vec<(usize, usize, i64)> = match cfg.pattern {
        Pattern::Periodic => order_a
            .iter()
            .enumerate()
            .map(|(i, &u)| (u, p + sigma[u], i64::from(2 * i < p)))
            .collect(),
        Pattern::Longrange => {
            let a = order_a.iter().map(|&u| (u, p + sigma[u], 0));
            let b = order_b.iter().map(|&u| (u, p + tau[u], 1));
            a.chain(b).collect()
        }
    };
    let rows = (0..cfg.edges)
        .map(|i| {
            let (s, d, label) = round[i % round.len()];
            RawEdge {
                src: s as u64,
                dst: d as u64,
                t: i as f64,
                label: if cfg.labels { label } else { NO_LABEL },
                feat: Vec::new(),
            }
        })
        .collect();
    EventGraph::from_raw(rows, cfg.labels)
}
