//! Windows over an edge stream, their even partition into temporal patches,
//! and per-patch temporal neighbor sampling.

use std::collections::BTreeMap;
use std::ops::Range;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::EventGraph;
use crate::rng::{derive, rng};

/// Contiguous slice `[lo, hi)` of a graph's edge stream.
#[derive(Debug, Clone)]
pub struct WindowedGraph<'g> {
    pub graph: &'g EventGraph,
    pub lo: usize,
    pub hi: usize,
    /// Sorted ids of the nodes touched by the window; a node's local index
    /// is its position here.
    pub nodes: Vec<usize>,
}

impl<'g> WindowedGraph<'g> {
    pub fn len(&self) -> usize {
        self.hi - self.lo
    }

    pub fn is_empty(&self) -> bool {
        self.hi == self.lo
    }

    pub fn edge_range(&self) -> Range<usize> {
        self.lo..self.hi
    }

    pub fn local(&self, node: usize) -> Option<usize> {
        self.nodes.binary_search(&node).ok()
    }
}

/// The window `[max(0, end − W), end)`.
pub fn extract_window(g: &EventGraph, end: usize, w: usize) -> Result<WindowedGraph<'_>> {
    if end == 0 || end > g.num_edges() {
        return Err(Error::Bounds(format!(
            "window end {end} outside 1..={}",
            g.num_edges()
        )));
    }
    let lo = end.saturating_sub(w);
    let mut nodes: Vec<usize> = g.edges()[lo..end]
        .iter()
        .flat_map(|e| [e.src, e.dst])
        .collect();
    nodes.sort_unstable();
    nodes.dedup();
    Ok(WindowedGraph {
        graph: g,
        lo,
        hi: end,
        nodes,
    })
}

/// Even partition of a window into `M` contiguous patches. The first
/// `len mod M` patches hold one extra edge.
#[derive(Debug, Clone)]
pub struct PatchSet<'g> {
    pub window: WindowedGraph<'g>,
    /// `M + 1` offsets relative to `window.lo`.
    pub bounds: Vec<usize>,
    /// Per window-local node, the ascending patches it has an edge in.
    pub occurrence: Vec<Vec<usize>>,
}

impl<'g> PatchSet<'g> {
    pub fn num_patches(&self) -> usize {
        self.bounds.len() - 1
    }

    /// Global edge indices of patch `m`.
    pub fn patch(&self, m: usize) -> Range<usize> {
        self.window.lo + self.bounds[m]..self.window.lo + self.bounds[m + 1]
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.bounds.windows(2).map(|b| b[1] - b[0]).collect()
    }

    /// Patches containing an edge of global node `v`.
    pub fn occurrences_of(&self, v: usize) -> &[usize] {
        self.window.local(v).map_or(&[], |l| &self.occurrence[l])
    }
}

pub fn patch_bounds(len: usize, m: usize) -> Vec<usize> {
    let (q, r) = (len / m, len % m);
    let mut b = Vec::with_capacity(m + 1);
    b.push(0);
    for i in 0..m {
        b.push(b[i] + q + usize::from(i < r));
    }
    b
}

pub fn patchify(w: WindowedGraph<'_>, m: usize) -> Result<PatchSet<'_>> {
    if m == 0 || m > w.len() {
        return Err(Error::Config(format!(
            "cannot split {} edges into {m} patches",
            w.len()
        )));
    }
    let bounds = patch_bounds(w.len(), m);
    let mut occurrence = vec![Vec::new(); w.nodes.len()];
    for p in 0..m {
        for i in w.lo + bounds[p]..w.lo + bounds[p + 1] {
            let e = w.graph.edge(i);
            for v in [e.src, e.dst] {
                let l = w.local(v).expect("window node");
                if occurrence[l].last() != Some(&p) {
                    occurrence[l].push(p);
                }
            }
        }
    }
    Ok(PatchSet {
        window: w,
        bounds,
        occurrence,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    Uniform,
    Last,
}

/// Edges reached by a hop-limited expansion from the anchors.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledNeighborhood {
    pub anchors: Vec<usize>,
    /// Per hop, global edge indices in ascending order. An edge appears in
    /// at most one hop.
    pub hops: Vec<Vec<usize>>,
    pub fanouts: Vec<usize>,
}

impl SampledNeighborhood {
    /// All sampled edges in ascending global order.
    pub fn edges(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.hops.concat();
        all.sort_unstable();
        all
    }
}

/// Samples up to `fanouts[h]` incident edges per frontier node and hop
/// inside `patch`, starting from `anchors`. Each node is expanded at most
/// once. The draw for a node depends only on `(seed, hop, node)` and the
/// node's incident edges, so it is independent of iteration order.
pub fn sample_neighborhood(
    g: &EventGraph,
    patch: Range<usize>,
    anchors: &[usize],
    fanouts: &[usize],
    mode: SamplingMode,
    seed: u64,
) -> Result<SampledNeighborhood> {
    if anchors.is_empty() {
        return Err(Error::Contract("neighbor sampling needs at least one anchor".into()));
    }
    if fanouts.is_empty() || fanouts.contains(&0) {
        return Err(Error::Config(format!("fanouts {fanouts:?} must be positive")));
    }
    let mut adj: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in patch.clone() {
        let e = g.edge(i);
        adj.entry(e.src).or_default().push(i);
        if e.dst != e.src {
            adj.entry(e.dst).or_default().push(i);
        }
    }

    let mut frontier: Vec<usize> = anchors.to_vec();
    frontier.sort_unstable();
    frontier.dedup();
    let mut expanded: std::collections::BTreeSet<usize> = frontier.iter().copied().collect();
    let mut taken = std::collections::HashSet::new();
    let mut hops = Vec::with_capacity(fanouts.len());

    for (h, &f) in fanouts.iter().enumerate() {
        let mut hop = Vec::new();
        let mut next = Vec::new();
        for &v in &frontier {
            let Some(inc) = adj.get(&v) else { continue };
            let chosen: Vec<usize> = if inc.len() <= f {
                inc.clone()
            } else {
                match mode {
                    SamplingMode::Last => inc[inc.len() - f..].to_vec(),
                    SamplingMode::Uniform => {
                        let mut r = rng(derive(seed, &[h as u64, v as u64]));
                        let mut pick = index::sample(&mut r, inc.len(), f).into_vec();
                        pick.sort_unstable();
                        pick.into_iter().map(|j| inc[j]).collect()
                    }
                }
            };
            for i in chosen {
                let e = g.edge(i);
                let other = if e.src == v { e.dst } else { e.src };
                if expanded.insert(other) {
                    next.push(other);
                }
                if taken.insert(i) {
                    hop.push(i);
                }
            }
        }
        hop.sort_unstable();
        next.sort_unstable();
        hops.push(hop);
        frontier = next;
    }
    Ok(SampledNeighborhood {
        anchors: anchors.to_vec(),
        hops,
        fanouts: fanouts.to_vec(),
    })
}
