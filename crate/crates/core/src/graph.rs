//! Continuous-time dynamic graph: a time-ordered, undirected multigraph edge
//! stream with optional edge features and per-interaction labels.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;
use std::path::Path;

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha1::{Digest, Sha1};

use crate::error::{Error, Result};
use crate::rng::rng;

/// Label value meaning "no label".
pub const NO_LABEL: i64 = -1;

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub t: f64,
    pub label: i64,
    /// Position in the time-ordered stream.
    pub global_idx: usize,
}

/// Immutable edge stream. `edges[i].global_idx == i` and timestamps are
/// non-decreasing.
#[derive(Debug, Clone)]
pub struct EventGraph {
    num_nodes: usize,
    edges: Vec<Edge>,
    edge_dim: usize,
    /// `E × edge_dim`, row `i` belongs to `edges[i]`.
    edge_feats: Vec<f64>,
    node_dim: usize,
    /// `N × node_dim`; zeros when the dataset has none.
    node_feats: Vec<f64>,
    has_labels: bool,
    /// Compact id -> id as written in the source file.
    original_ids: Vec<u64>,
}

/// One row of input before sorting and id compaction.
#[derive(Debug, Clone)]
pub struct RawEdge {
    pub src: u64,
    pub dst: u64,
    pub t: f64,
    pub label: i64,
    pub feat: Vec<f64>,
}

impl EventGraph {
    /// Builds a graph from rows in file order. Rows are stably sorted by
    /// time and node ids are compacted by first appearance in that order.
    pub fn from_raw(mut rows: Vec<RawEdge>, has_label_column: bool) -> Result<Self> {
        let edge_dim = rows.first().map_or(0, |r| r.feat.len());
        if let Some(i) = rows.iter().position(|r| r.feat.len() != edge_dim) {
            return Err(Error::Schema {
                line: i as u64 + 2,
                msg: format!("expected {edge_dim} edge features, found {}", rows[i].feat.len()),
            });
        }
        if let Some(r) = rows.iter().find(|r| !r.t.is_finite()) {
            return Err(Error::Parse {
                line: 0,
                msg: format!("non-finite timestamp {}", r.t),
            });
        }
        rows.sort_by(|a, b| a.t.total_cmp(&b.t));

        let mut ids: HashMap<u64, usize> = HashMap::new();
        let mut original_ids = Vec::new();
        let mut compact = |raw: u64| {
            *ids.entry(raw).or_insert_with(|| {
                original_ids.push(raw);
                original_ids.len() - 1
            })
        };
        let mut edges = Vec::with_capacity(rows.len());
        let mut edge_feats = Vec::with_capacity(rows.len() * edge_dim);
        for (i, r) in rows.into_iter().enumerate() {
            let src = compact(r.src);
            let dst = compact(r.dst);
            edges.push(Edge {
                src,
                dst,
                t: r.t,
                label: r.label,
                global_idx: i,
            });
            edge_feats.extend(r.feat);
        }
        let num_nodes = original_ids.len();
        let has_labels = has_label_column && edges.iter().any(|e| e.label != NO_LABEL);
        Ok(EventGraph {
            num_nodes,
            edges,
            edge_dim,
            edge_feats,
            node_dim: 0,
            node_feats: Vec::new(),
            has_labels,
            original_ids,
        })
    }

    /// Attaches an `N × dim` node feature matrix (row-major).
    pub fn with_node_features(mut self, dim: usize, feats: Vec<f64>) -> Result<Self> {
        if feats.len() != self.num_nodes * dim {
            return Err(Error::Schema {
                line: 0,
                msg: format!(
                    "node features: expected {} values for {} nodes, got {}",
                    self.num_nodes * dim,
                    self.num_nodes,
                    feats.len()
                ),
            });
        }
        self.node_dim = dim;
        self.node_feats = feats;
        Ok(self)
    }

    /// Zero node features of width `dim`.
    pub fn with_zero_node_features(self, dim: usize) -> Self {
        let n = self.num_nodes * dim;
        self.with_node_features(dim, vec![0.0; n]).expect("sized to fit")
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, i: usize) -> &Edge {
        &self.edges[i]
    }

    pub fn edge_dim(&self) -> usize {
        self.edge_dim
    }

    pub fn edge_feat(&self, i: usize) -> &[f64] {
        &self.edge_feats[i * self.edge_dim..(i + 1) * self.edge_dim]
    }

    pub fn node_dim(&self) -> usize {
        self.node_dim
    }

    pub fn node_feat(&self, v: usize) -> &[f64] {
        &self.node_feats[v * self.node_dim..(v + 1) * self.node_dim]
    }

    pub fn has_labels(&self) -> bool {
        self.has_labels
    }

    /// Largest label plus one (0 when unlabeled).
    pub fn num_classes(&self) -> usize {
        self.edges
            .iter()
            .map(|e| e.label)
            .max()
            .map_or(0, |m| (m + 1).max(0) as usize)
    }

    pub fn original_id(&self, v: usize) -> u64 {
        self.original_ids[v]
    }

    /// Sorted set of nodes that ever appear as a destination.
    pub fn destination_nodes(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.edges.iter().map(|e| e.dst).collect();
        set.into_iter().collect()
    }

    /// Graph over the same node space holding only the edges at `keep`
    /// (ascending), with `global_idx` renumbered.
    pub fn sub_stream(&self, keep: &[usize]) -> EventGraph {
        let mut edges = Vec::with_capacity(keep.len());
        let mut edge_feats = Vec::with_capacity(keep.len() * self.edge_dim);
        for (i, &k) in keep.iter().enumerate() {
            let mut e = self.edges[k].clone();
            e.global_idx = i;
            edges.push(e);
            edge_feats.extend_from_slice(self.edge_feat(k));
        }
        EventGraph {
            edges,
            edge_feats,
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> EventGraph {
        EventGraph {
            num_nodes: self.num_nodes,
            edges: Vec::new(),
            edge_dim: self.edge_dim,
            edge_feats: Vec::new(),
            node_dim: self.node_dim,
            node_feats: self.node_feats.clone(),
            has_labels: self.has_labels,
            original_ids: self.original_ids.clone(),
        }
    }

    /// Percentage of distinct unordered node pairs that interact more than once.
    pub fn repetitive_edge_pct(&self) -> f64 {
        let mut counts: HashMap<(usize, usize), u32> = HashMap::new();
        for e in &self.edges {
            *counts.entry((e.src.min(e.dst), e.src.max(e.dst))).or_default() += 1;
        }
        if counts.is_empty() {
            return 0.0;
        }
        let rep = counts.values().filter(|&&c| c > 1).count();
        100.0 * rep as f64 / counts.len() as f64
    }
}

/// Reads a CSV edge stream with header `src,dst,timestamp[,label],f1,...`.
/// A fourth column is treated as the label column iff its header is `label`.
/// With `has_labels` set, a missing label column is a schema error.
pub fn load_edge_stream(path: &Path, has_labels: bool) -> Result<EventGraph> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(e, path))?;
    let header = reader.headers().map_err(|e| csv_error(e, path))?.clone();
    if header.len() < 3 {
        return Err(Error::Schema {
            line: 1,
            msg: format!("header needs src,dst,timestamp; got {} columns", header.len()),
        });
    }
    let label_col = header.get(3).is_some_and(|h| h.eq_ignore_ascii_case("label"));
    if has_labels && !label_col {
        return Err(Error::Schema {
            line: 1,
            msg: "labels requested but the header has no label column".into(),
        });
    }
    let feat_start = if label_col { 4 } else { 3 };
    let expected_cols = header.len();

    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_error(e, path))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        if rec.len() != expected_cols {
            return Err(Error::Schema {
                line,
                msg: format!("expected {expected_cols} columns, found {}", rec.len()),
            });
        }
        let field = |i: usize| rec.get(i).unwrap_or("");
        let parse_err = |what: &str, v: &str| Error::Parse {
            line,
            msg: format!("bad {what} {v:?}"),
        };
        let src: u64 = field(0).parse().map_err(|_| parse_err("src", field(0)))?;
        let dst: u64 = field(1).parse().map_err(|_| parse_err("dst", field(1)))?;
        let t: f64 = field(2).parse().map_err(|_| parse_err("timestamp", field(2)))?;
        if !t.is_finite() {
            return Err(parse_err("timestamp", field(2)));
        }
        let label = if label_col {
            let raw = field(3);
            let v: f64 = raw.parse().map_err(|_| parse_err("label", raw))?;
            if v.fract() != 0.0 || v < NO_LABEL as f64 {
                return Err(parse_err("label", raw));
            }
            v as i64
        } else {
            NO_LABEL
        };
        let mut feat = Vec::with_capacity(expected_cols - feat_start);
        for i in feat_start..rec.len() {
            let v: f64 = field(i).parse().map_err(|_| parse_err("feature", field(i)))?;
            feat.push(v);
        }
        rows.push(RawEdge {
            src,
            dst,
            t,
            label,
            feat,
        });
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset(path.to_path_buf()));
    }
    EventGraph::from_raw(rows, label_col)
}

fn csv_error(e: csv::Error, path: &Path) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        csv::ErrorKind::UnequalLengths {
            expected_len, len, ..
        } => Error::Schema {
            line,
            msg: format!("expected {expected_len} columns, found {len}"),
        },
        csv::ErrorKind::Utf8 { err, .. } => Error::Parse {
            line,
            msg: format!("{}: {err}", path.display()),
        },
        other => Error::Parse {
            line,
            msg: format!("{other:?}"),
        },
    }
}

/// Writes `g` in the CSV schema read by [`load_edge_stream`], using the
/// original node ids.
pub fn write_edge_stream(g: &EventGraph, out: &mut impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["src".to_string(), "dst".into(), "timestamp".into(), "label".into()];
    header.extend((1..=g.edge_dim).map(|i| format!("f{i}")));
    w.write_record(&header).map_err(csv_io)?;
    for e in &g.edges {
        let mut rec = vec![
            g.original_id(e.src).to_string(),
            g.original_id(e.dst).to_string(),
            format!("{}", e.t),
            e.label.to_string(),
        ];
        rec.extend(g.edge_feat(e.global_idx).iter().map(|v| format!("{v}")));
        w.write_record(&rec).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

/// Git blob hash (`sha1("blob <len>\0" ++ bytes)`) of a file, as hex.
pub fn content_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(blob_hash(&bytes))
}

pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha1::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    Transductive,
    Inductive,
}

/// Chronological train/val/test boundaries plus, for inductive runs, the
/// withheld nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub train_end: usize,
    pub val_end: usize,
    pub num_edges: usize,
    /// Indexed by node id; empty for transductive splits.
    pub masked: Vec<bool>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Train,
    Val,
    Test,
}

impl Part {
    pub fn name(self) -> &'static str {
        match self {
            Part::Train => "train",
            Part::Val => "val",
            Part::Test => "test",
        }
    }
}

pub const DEFAULT_RATIOS: (f64, f64, f64) = (0.7, 0.15, 0.15);

/// First `⌊r₀E⌋` edges train, next `⌊r₁E⌋` validate, the rest test.
pub fn chronological_split(g: &EventGraph, ratios: (f64, f64, f64)) -> Result<SplitSpec> {
    let (a, b, c) = ratios;
    if (a + b + c - 1.0).abs() > 1e-9 || a < 0.0 || b < 0.0 || c < 0.0 {
        return Err(Error::Config(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    let e = g.num_edges();
    if e < 3 {
        return Err(Error::TaskData(format!("splitting needs at least 3 edges, got {e}")));
    }
    let floor = |x: f64| (x + 1e-9).floor() as usize;
    let train_end = floor(a * e as f64);
    let val_end = train_end + floor(b * e as f64);
    Ok(SplitSpec {
        mode: SplitMode::Transductive,
        train_end,
        val_end: val_end.min(e),
        num_edges: e,
        masked: Vec::new(),
        seed: 0,
    })
}

/// Chronological boundaries plus `⌊frac·N⌋` nodes withheld from training.
pub fn inductive_split(g: &EventGraph, frac: f64, seed: u64) -> Result<SplitSpec> {
    if !(frac > 0.0 && frac < 1.0) {
        return Err(Error::Config(format!("inductive fraction {frac} must lie in (0, 1)")));
    }
    let n = g.num_nodes();
    if n < 10 {
        return Err(Error::TaskData(format!("inductive split needs at least 10 nodes, got {n}")));
    }
    let mut spec = chronological_split(g, DEFAULT_RATIOS)?;
    let k = (frac * n as f64 + 1e-9).floor() as usize;
    let mut r = rng(seed);
    let mut masked = vec![false; n];
    for v in index::sample(&mut r, n, k) {
        masked[v] = true;
    }
    spec.mode = SplitMode::Inductive;
    spec.masked = masked;
    spec.seed = seed;
    Ok(spec)
}

impl SplitSpec {
    pub fn is_masked(&self, v: usize) -> bool {
        self.masked.get(v).copied().unwrap_or(false)
    }

    pub fn masked_nodes(&self) -> Vec<usize> {
        (0..self.masked.len()).filter(|&v| self.masked[v]).collect()
    }

    fn touches_masked(&self, e: &Edge) -> bool {
        self.is_masked(e.src) || self.is_masked(e.dst)
    }

    pub fn range(&self, part: Part) -> std::ops::Range<usize> {
        match part {
            Part::Train => 0..self.train_end,
            Part::Val => self.train_end..self.val_end,
            Part::Test => self.val_end..self.num_edges,
        }
    }

    /// Global indices of the edges in `part`. Inductive training drops
    /// edges touching a withheld node; inductive evaluation keeps only
    /// edges touching at least one.
    pub fn edges(&self, g: &EventGraph, part: Part) -> Vec<usize> {
        let r = self.range(part);
        match (self.mode, part) {
            (SplitMode::Transductive, _) => r.collect(),
            (SplitMode::Inductive, Part::Train) => r.filter(|&i| !self.touches_masked(g.edge(i))).collect(),
            (SplitMode::Inductive, _) => r.filter(|&i| self.touches_masked(g.edge(i))).collect(),
        }
    }
}

/// `k` negative destinations per positive, uniform over all nodes except
/// the true destination.
pub fn sample_negatives(batch: &[Edge], g: &EventGraph, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let pool: Vec<usize> = (0..g.num_nodes()).collect();
    sample_negatives_from(batch, &pool, k, seed)
}

/// Like [`sample_negatives`] but drawing from a sorted candidate `pool`.
pub fn sample_negatives_from(batch: &[Edge], pool: &[usize], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k == 0 {
        return Err(Error::Config("negative count must be at least 1".into()));
    }
    let mut r = rng(seed);
    let mut out = Vec::with_capacity(batch.len());
    for e in batch {
        let skip = pool.binary_search(&e.dst).ok();
        let n = pool.len() - usize::from(skip.is_some());
        if n == 0 {
            return Err(Error::Sampling(format!(
                "no negative candidate for destination {} among {} nodes",
                e.dst,
                pool.len()
            )));
        }
        let negs = (0..k)
            .map(|_| {
                let mut j = r.random_range(0..n);
                if skip.is_some_and(|s| j >= s) {
                    j += 1;
                }
                pool[j]
            })
            .collect();
        out.push(negs);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(src: u64, dst: u64, t: f64) -> RawEdge {
        RawEdge {
            src,
            dst,
            t,
            label: NO_LABEL,
            feat: vec![],
        }
    }

    fn line_graph(e: usize, n: u64) -> EventGraph {
        let rows = (0..e).map(|i| raw(i as u64 % n, (i as u64 + 1) % n, i as f64)).collect();
        EventGraph::from_raw(rows, false).unwrap()
    }

    #[test]
    fn split_examples() {
        let s = chronological_split(&line_graph(20, 5), DEFAULT_RATIOS).unwrap();
        assert_eq!((s.train_end, s.val_end), (14, 17));
        assert_eq!(s.range(Part::Test).len(), 3);
        let s = chronological_split(&line_graph(10, 5), DEFAULT_RATIOS).unwrap();
        assert_eq!((s.train_end, s.val_end), (7, 8));
        assert_eq!(s.range(Part::Test).len(), 2);
    }

    #[test]
    fn split_of_uci_size() {
        let s = chronological_split(&line_graph(59835, 1899), DEFAULT_RATIOS).unwrap();
        assert_eq!((s.train_end, s.val_end), (41884, 50859));
    }

    #[test]
    fn bad_ratios_are_config_errors() {
        let err = chronological_split(&line_graph(10, 5), (0.7, 0.2, 0.2)).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn inductive_mask_size_and_determinism() {
        let g = line_graph(300, 100);
        let a = inductive_split(&g, 0.1, 5).unwrap();
        assert_eq!(a.masked_nodes().len(), 10);
        assert_eq!(a, inductive_split(&g, 0.1, 5).unwrap());
        assert!(inductive_split(&g, 1.0, 5).is_err());
        for i in a.edges(&g, Part::Train) {
            let e = g.edge(i);
            assert!(!a.is_masked(e.src) && !a.is_masked(e.dst));
        }
        for i in a.edges(&g, Part::Test) {
            let e = g.edge(i);
            assert!(a.is_masked(e.src) || a.is_masked(e.dst));
        }
    }

    #[test]
    fn negative_with_two_nodes_is_forced() {
        let g = line_graph(4, 2);
        let e = Edge {
            src: 0,
            dst: 1,
            t: 0.0,
            label: NO_LABEL,
            global_idx: 0,
        };
        let negs = sample_negatives(&[e], &g, 5, 3).unwrap();
        assert_eq!(negs, vec![vec![0; 5]]);
    }

    #[test]
    fn negatives_need_two_nodes() {
        let g = EventGraph::from_raw(vec![raw(4, 4, 0.0)], false).unwrap();
        let err = sample_negatives(&g.edges()[..1], &g, 1, 0).unwrap_err();
        assert!(matches!(err, Error::Sampling(_)));
    }

    #[test]
    fn blob_hash_matches_git() {
        // `printf 'hello\n' | git hash-object --stdin`
        assert_eq!(blob_hash(b"hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
    }

    #[test]
    fn repetitive_pairs() {
        let rows = vec![raw(0, 1, 0.0), raw(1, 0, 1.0), raw(1, 2, 2.0), raw(2, 3, 3.0)];
        let g = EventGraph::from_raw(rows, false).unwrap();
        assert!((g.repetitive_edge_pct() - 100.0 / 3.0).abs() < 1e-12);
    }
}
