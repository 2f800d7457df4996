//! Optimization loop, chronological batching, evaluation, checkpoints and
//! run artifacts.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{NegativePool, RunConfig, Task};
use crate::encoder::{prepare, Encoder, EncodeInput};
use crate::error::{Error, Result};
use crate::graph::{
    chronological_split, content_hash, inductive_split, load_edge_stream, sample_negatives_from, EventGraph, Part,
    SplitMode, SplitSpec, DEFAULT_RATIOS, NO_LABEL,
};
use crate::nn::{Bound, ParamId, ParamStore};
use crate::rng::{derive, rng};
use crate::stream::{extract_window, patchify};
use crate::tasks::{accuracy, average_precision, bce_loss, ce_loss, macro_auc, mrr, roc_auc, DncDecoder, FlpDecoder};
use crate::tensor::{read_checkpoint, write_checkpoint, Float, Gradients, Tape, Tensor, Var};

// Seed stream tags.
const INIT: u64 = 1;
const TRAIN_NEG: u64 = 2;
const TRAIN_ENC: u64 = 3;
const EVAL_NEG: u64 = 4;
const EVAL_ENC: u64 = 5;

/// A loaded edge stream plus the hash of the file it came from.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub graph: EventGraph,
    pub path: PathBuf,
    pub hash: String,
}

impl Dataset {
    /// Loads `cfg.dataset` resolved against `workdir`.
    pub fn load(cfg: &RunConfig, workdir: &Path) -> Result<Self> {
        let path = workdir.join(&cfg.dataset);
        let graph = load_edge_stream(&path, false)?;
        if cfg.task == Task::Dnc && !graph.has_labels() {
            return Err(Error::TaskData(format!(
                "node classification needs labels, but {} has none",
                path.display()
            )));
        }
        let graph = if graph.node_dim() == 0 && cfg.node_dim > 0 {
            graph.with_zero_node_features(cfg.node_dim)
        } else {
            graph
        };
        let hash = content_hash(&path)?;
        Ok(Dataset { graph, path, hash })
    }

    pub fn from_graph(graph: EventGraph, hash: impl Into<String>) -> Self {
        Dataset {
            graph,
            path: PathBuf::new(),
            hash: hash.into(),
        }
    }

    pub fn split(&self, cfg: &RunConfig) -> Result<SplitSpec> {
        match cfg.split {
            SplitMode::Transductive => chronological_split(&self.graph, DEFAULT_RATIOS),
            SplitMode::Inductive => inductive_split(&self.graph, cfg.inductive_frac, derive(cfg.seed, &[0])),
        }
    }
}

/// Parameters and module structure of a full model.
#[derive(Debug, Clone)]
pub struct Model<F> {
    pub store: ParamStore<F>,
    pub encoder: Encoder,
    pub flp: FlpDecoder,
    pub dnc: Option<DncDecoder>,
    /// Index of the first decoder parameter of the node classifier.
    dnc_start: usize,
}

impl<F: Float> Model<F> {
    pub fn new(cfg: &RunConfig, g: &EventGraph) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut r = rng(derive(cfg.seed, &[INIT]));
        let encoder = Encoder::new(&mut store, &mut r, &cfg.encoder, g.node_dim(), g.edge_dim())?;
        let flp = FlpDecoder::new(&mut store, &mut r, cfg.encoder.hidden);
        let dnc_start = store.len();
        let dnc = if cfg.task == Task::Dnc {
            let classes = g.num_classes();
            if classes < 2 {
                return Err(Error::TaskData(format!("node classification needs at least 2 classes, found {classes}")));
            }
            Some(DncDecoder::new(&mut store, &mut r, cfg.encoder.hidden, classes))
        } else {
            None
        };
        Ok(Model {
            store,
            encoder,
            flp,
            dnc,
            dnc_start,
        })
    }

    pub fn save(&self, path: &Path, metadata: serde_json::Value) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        write_checkpoint(&mut out, &self.store.entries(), metadata)?;
        out.flush()?;
        Ok(())
    }

    /// Builds the model for `cfg` and fills it from a checkpoint.
    pub fn load(cfg: &RunConfig, g: &EventGraph, path: &Path) -> Result<(Self, serde_json::Value)> {
        let mut model = Self::new(cfg, g)?;
        let ckpt = read_checkpoint::<F, _>(&mut BufReader::new(File::open(path)?))?;
        if let Some(saved) = ckpt.metadata.get("config") {
            let saved: RunConfig = serde_json::from_value(saved.clone())
                .map_err(|e| Error::Version(format!("checkpoint config unreadable: {e}")))?;
            if saved.encoder != cfg.encoder || saved.task != cfg.task || saved.node_dim != cfg.node_dim {
                return Err(Error::Version("checkpoint was trained with a different model configuration".into()));
            }
        }
        model.store.load(ckpt.tensors)?;
        Ok((model, ckpt.metadata))
    }
}

/// Adaptive-moment optimizer with bias correction and no weight decay.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Float> Adam<F> {
    pub fn new(store: &ParamStore<F>, lr: f64) -> Self {
        let zeros = |id: ParamId| vec![F::zero(); store.get(id).numel()];
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: store.ids().map(zeros).collect(),
            v: store.ids().map(zeros).collect(),
        }
    }

    /// Applies one update. Parameters without a gradient are left alone.
    pub fn step(&mut self, store: &mut ParamStore<F>, grads: &[(ParamId, Tensor<F>)]) {
        self.step += 1;
        let (b1, b2) = (F::of(self.beta1), F::of(self.beta2));
        let c1 = F::of(1.0 - self.beta1.powi(self.step));
        let c2 = F::of(1.0 - self.beta2.powi(self.step));
        let (lr, eps) = (F::of(self.lr), F::of(self.eps));
        for (id, g) in grads {
            let i = id.index();
            let p = store.get_mut(*id).data_mut();
            for (j, &gj) in g.data().iter().enumerate() {
                let m = b1 * self.m[i][j] + (F::one() - b1) * gj;
                let v = b2 * self.v[i][j] + (F::one() - b2) * gj * gj;
                self.m[i][j] = m;
                self.v[i][j] = v;
                p[j] -= lr * (m / c1) / ((v / c2).sqrt() + eps);
            }
        }
    }
}

/// Prediction batch: edges to score and the exclusive end of their window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub edges: Vec<usize>,
    pub window_end: usize,
}

/// Consecutive training batches `[kB, (k+1)B)` of a stream with `n`
/// edges, each using the edges before it as its window; batches whose
/// window would hold fewer than `min_window` edges are dropped.
pub fn train_batches(n: usize, batch: usize, min_window: usize) -> Vec<Batch> {
    (0..n)
        .step_by(batch)
        .filter(|&s| s >= min_window.max(1))
        .map(|s| Batch {
            edges: (s..(s + batch).min(n)).collect(),
            window_end: s,
        })
        .collect()
}

/// Chunks of ascending edge indices, each windowed at its first edge. Edge 0
/// has no history to encode and is skipped.
pub fn eval_batches(edges: &[usize], batch: usize) -> Vec<Batch> {
    let start = usize::from(edges.first() == Some(&0));
    edges[start..]
        .chunks(batch)
        .map(|c| Batch {
            edges: c.to_vec(),
            window_end: c[0],
        })
        .collect()
}

fn prepare_batch(
    cfg: &RunConfig,
    g: &EventGraph,
    window_end: usize,
    query: &[usize],
    seed: u64,
) -> Result<EncodeInput> {
    let w = extract_window(g, window_end, cfg.window)?;
    let m = cfg.patches.min(w.len());
    let p = patchify(w, m)?;
    prepare(g, &p, query, &cfg.encoder, seed)
}

/// Scores of one link-prediction batch.
struct FlpOutput<'t, F> {
    loss: Var<'t, F>,
    pos: Vec<f64>,
    neg: Vec<Vec<f64>>,
}

fn flp_forward<'t, F: Float>(
    model: &Model<F>,
    p: &Bound<'t, F>,
    tape: &'t Tape<F>,
    input: &EncodeInput,
    b: usize,
    k: usize,
) -> Result<FlpOutput<'t, F>> {
    let h = model.encoder.encode(p, tape, input)?;
    let src_rows: Vec<usize> = (0..b).collect();
    let dst_rows: Vec<usize> = (b..2 * b).collect();
    let rep_src: Vec<usize> = (0..b * k).map(|i| i / k).collect();
    let neg_rows: Vec<usize> = (2 * b..2 * b + b * k).collect();
    let hu = h.gather_rows(&src_rows)?;
    let hv = h.gather_rows(&dst_rows)?;
    let hu_rep = h.gather_rows(&rep_src)?;
    let hn = h.gather_rows(&neg_rows)?;
    let pos = model.flp.score(p, &hu, &hv)?;
    let neg = model.flp.score(p, &hu_rep, &hn)?;
    let probs = Var::concat_cols(&[pos.reshape(&[1, b])?, neg.reshape(&[1, b * k])?])?;
    let mut y = vec![1.0; b];
    y.extend(std::iter::repeat_n(0.0, b * k));
    let loss = bce_loss(&probs, &y)?;
    let posv = pos.value().to_f64();
    let negv = neg.value().to_f64();
    Ok(FlpOutput {
        loss,
        pos: posv,
        neg: negv.chunks(k).map(<[f64]>::to_vec).collect(),
    })
}

fn flp_query(g: &EventGraph, edges: &[usize], negs: &[Vec<usize>]) -> Vec<usize> {
    let mut q: Vec<usize> = edges.iter().map(|&i| g.edge(i).src).collect();
    q.extend(edges.iter().map(|&i| g.edge(i).dst));
    q.extend(negs.iter().flatten());
    q
}

fn negative_pool(cfg: &RunConfig, g: &EventGraph, exclude: &dyn Fn(usize) -> bool) -> Vec<usize> {
    let base = match cfg.negatives {
        NegativePool::Uniform => (0..g.num_nodes()).collect(),
        NegativePool::Bipartite => g.destination_nodes(),
    };
    base.into_iter().filter(|&v| !exclude(v)).collect()
}

fn collect_grads<F: Float>(
    store: &ParamStore<F>,
    p: &Bound<'_, F>,
    grads: &Gradients<F>,
    keep: &dyn Fn(ParamId) -> bool,
) -> Vec<(ParamId, Tensor<F>)> {
    store
        .ids()
        .filter(|&id| keep(id))
        .filter_map(|id| grads.wrt(&p[id]).map(|g| (id, g.clone())))
        .collect()
}

fn non_finite<F: Float>(store: &ParamStore<F>, grads: &[(ParamId, Tensor<F>)], what: String) -> Error {
    let mut norms: Vec<String> = grads
        .iter()
        .map(|(id, g)| format!("{}={:.3e}", store.name(*id), g.l2_norm()))
        .collect();
    norms.truncate(64);
    Error::Numeric(format!("{what}; gradient norms: {}", norms.join(", ")))
}

/// One row of the metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub epoch: usize,
    pub split: String,
    pub task: String,
    pub metric: String,
    pub value: f64,
    pub seed: u64,
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Parse { line: 0, msg: e.to_string() }))
        .collect()
}

pub type Metrics = BTreeMap<String, f64>;

/// Outcome of [`train`].
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub rows: Vec<MetricRow>,
    pub best_epoch: usize,
    /// Validation metric used for selection at `best_epoch`.
    pub best_val: f64,
    pub val: Metrics,
    pub test: Metrics,
    /// Mean training loss per epoch, in order.
    pub losses: Vec<f64>,
}

/// Where [`train`] writes its artifacts.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub dir: PathBuf,
}

impl Artifacts {
    pub fn checkpoint(&self) -> PathBuf {
        self.dir.join("model.ckpt")
    }
    pub fn metrics(&self) -> PathBuf {
        self.dir.join("metrics.csv")
    }
    pub fn manifest(&self) -> PathBuf {
        self.dir.join("manifest.json")
    }
}

/// JSON manifest sufficient to reproduce a run.
pub fn manifest(cfg: &RunConfig, data: &Dataset, command: &str) -> serde_json::Value {
    serde_json::json!({
        "command": command,
        "config": cfg.to_json(),
        "dataset_hash": data.hash,
        "dataset_edges": data.graph.num_edges(),
        "dataset_nodes": data.graph.num_nodes(),
        "version": env!("CARGO_PKG_VERSION"),
    })
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

/// The edges a model trains on and the graph their windows come from.
/// Inductive runs train on the stream with withheld nodes removed.
fn training_stream(data: &Dataset, split: &SplitSpec) -> EventGraph {
    let g = &data.graph;
    match split.mode {
        SplitMode::Transductive => g.sub_stream(&(0..split.train_end).collect::<Vec<_>>()),
        SplitMode::Inductive => g.sub_stream(&split.edges(g, Part::Train)),
    }
}

/// One link-prediction training epoch; returns the mean batch loss.
fn flp_epoch<F: Float>(
    model: &mut Model<F>,
    opt: &mut Adam<F>,
    cfg: &RunConfig,
    train_g: &EventGraph,
    pool: &[usize],
    epoch: usize,
) -> Result<f64> {
    let batches = train_batches(train_g.num_edges(), cfg.batch_size, cfg.patches);
    let mut total = 0.0;
    for (bi, batch) in batches.iter().enumerate() {
        let tag = [epoch as u64, bi as u64];
        let edges: Vec<_> = batch.edges.iter().map(|&i| train_g.edge(i).clone()).collect();
        let negs = sample_negatives_from(&edges, pool, 1, derive(cfg.seed, &[TRAIN_NEG, tag[0], tag[1]]))?;
        let query = flp_query(train_g, &batch.edges, &negs);
        let input = prepare_batch(cfg, train_g, batch.window_end, &query, derive(cfg.seed, &[TRAIN_ENC, tag[0], tag[1]]))?;

        let tape = Tape::new();
        let p = model.store.bind(&tape, &|id| id.index() < model.dnc_start);
        let out = flp_forward(model, &p, &tape, &input, edges.len(), 1)?;
        let loss = out.loss.value().item().to_f64().unwrap_or(f64::NAN);
        let grads = tape.backward(out.loss)?;
        let grads = collect_grads(&model.store, &p, &grads, &|_| true);
        if !loss.is_finite() || grads.iter().any(|(_, g)| !g.is_finite()) {
            return Err(non_finite(
                &model.store,
                &grads,
                format!("non-finite loss {loss} at epoch {epoch}, batch {bi} (window end {})", batch.window_end),
            ));
        }
        opt.step(&mut model.store, &grads);
        total += loss;
    }
    Ok(if batches.is_empty() { 0.0 } else { total / batches.len() as f64 })
}

/// Link-prediction metrics (`ap`, `auc`, `mrr`, `loss`) on one split.
pub fn evaluate_flp<F: Float>(model: &Model<F>, cfg: &RunConfig, data: &Dataset, split: &SplitSpec, part: Part) -> Result<Metrics> {
    let g = &data.graph;
    let edges = split.edges(g, part);
    let pool = negative_pool(cfg, g, &|_| false);
    let k = cfg.eval_negatives;
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    let mut loss_sum = 0.0;
    let batches = eval_batches(&edges, cfg.batch_size);
    for (bi, batch) in batches.iter().enumerate() {
        let tag = [part as u64, bi as u64];
        let es: Vec<_> = batch.edges.iter().map(|&i| g.edge(i).clone()).collect();
        let negs = sample_negatives_from(&es, &pool, k, derive(cfg.seed, &[EVAL_NEG, tag[0], tag[1]]))?;
        let query = flp_query(g, &batch.edges, &negs);
        let input = prepare_batch(cfg, g, batch.window_end, &query, derive(cfg.seed, &[EVAL_ENC, tag[0], tag[1]]))?;
        let tape = Tape::new();
        let p = model.store.bind(&tape, &|_| false);
        let out = flp_forward(model, &p, &tape, &input, es.len(), k)?;
        loss_sum += out.loss.value().item().to_f64().unwrap_or(f64::NAN);
        pos.extend(out.pos);
        neg.extend(out.neg);
    }
    if pos.is_empty() {
        return Err(Error::TaskData(format!("the {} split has no edges to score", part.name())));
    }
    let mut scores = pos.clone();
    scores.extend(neg.iter().flatten());
    let mut labels = vec![true; pos.len()];
    labels.extend(std::iter::repeat_n(false, pos.len() * k));
    let mut m = Metrics::new();
    m.insert("ap".into(), average_precision(&scores, &labels)?);
    m.insert("auc".into(), roc_auc(&scores, &labels)?);
    m.insert("mrr".into(), mrr(&pos, &neg)?);
    m.insert("loss".into(), loss_sum / batches.len() as f64);
    if m.values().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite {} metrics: {m:?}", part.name())));
    }
    Ok(m)
}

/// Frozen-encoder embeddings of the labeled sources in one split, each
/// computed from the window strictly before its interaction.
fn dnc_features<F: Float>(
    model: &Model<F>,
    cfg: &RunConfig,
    g: &EventGraph,
    edges: &[usize],
    tag: u64,
) -> Result<(Tensor<F>, Vec<usize>)> {
    let labeled: Vec<usize> = edges.iter().copied().filter(|&i| g.edge(i).label != NO_LABEL).collect();
    let d = cfg.encoder.hidden;
    let mut feats = Vec::with_capacity(labeled.len() * d);
    let mut labels = Vec::with_capacity(labeled.len());
    for (bi, batch) in eval_batches(&labeled, cfg.batch_size).iter().enumerate() {
        let query: Vec<usize> = batch.edges.iter().map(|&i| g.edge(i).src).collect();
        let input = prepare_batch(cfg, g, batch.window_end, &query, derive(cfg.seed, &[EVAL_ENC, 16 + tag, bi as u64]))?;
        let tape = Tape::new();
        let p = model.store.bind(&tape, &|_| false);
        let h = model.encoder.encode(&p, &tape, &input)?;
        feats.extend_from_slice(h.value().data());
        labels.extend(batch.edges.iter().map(|&i| g.edge(i).label as usize));
    }
    Ok((Tensor::new(&[labels.len(), d], feats)?, labels))
}

fn dnc_metrics<F: Float>(model: &Model<F>, feats: &Tensor<F>, labels: &[usize]) -> Result<Metrics> {
    let dec = model.dnc.as_ref().expect("dnc model");
    let tape = Tape::new();
    let p = model.store.bind(&tape, &|_| false);
    let x = tape.constant(feats.clone());
    let logits = dec.logits(&p, &x)?;
    let loss = ce_loss(&logits, labels)?.value().item().to_f64().unwrap_or(f64::NAN);
    let lv = logits.value();
    let lv = Tensor::<f64>::new(lv.shape(), lv.to_f64())?;
    let mut probs = lv.clone();
    for r in 0..probs.rows() {
        let row = &mut probs.data_mut()[r * lv.cols()..(r + 1) * lv.cols()];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        row.iter_mut().for_each(|v| *v = (*v - max).exp() / sum);
    }
    let mut m = Metrics::new();
    m.insert("auc".into(), macro_auc(&probs, labels)?);
    m.insert("accuracy".into(), accuracy(&lv, labels));
    m.insert("loss".into(), loss);
    Ok(m)
}

fn metric_rows(rows: &mut Vec<MetricRow>, epoch: usize, split: &str, task: Task, m: &Metrics, seed: u64) {
    for (k, &v) in m {
        rows.push(MetricRow {
            epoch,
            split: split.into(),
            task: task.name().into(),
            metric: k.clone(),
            value: v,
            seed,
        });
    }
}

/// Trains per `cfg`, keeping the parameters with the best validation
/// metric (AP for link prediction, AUC for node classification). When
/// `artifacts` is given, the best checkpoint, the metrics CSV and the run
/// manifest are written there.
pub fn train<F: Float>(cfg: &RunConfig, data: &Dataset, artifacts: Option<&Artifacts>) -> Result<(Model<F>, TrainReport)> {
    cfg.validate()?;
    let split = data.split(cfg)?;
    let mut model = Model::<F>::new(cfg, &data.graph)?;
    let train_g = training_stream(data, &split);
    let exclude = |v: usize| split.is_masked(v);
    let pool = negative_pool(cfg, &train_g, &exclude);
    let mut rows = Vec::new();

    let flp_epochs = if cfg.task == Task::Dnc { cfg.pretrain_epochs() } else { cfg.epochs };
    let mut opt = Adam::new(&model.store, cfg.lr);
    let mut losses = Vec::new();
    let mut best: Option<(usize, f64, ParamStore<F>, Metrics)> = None;
    for epoch in 0..=flp_epochs {
        if epoch > 0 {
            let loss = flp_epoch(&mut model, &mut opt, cfg, &train_g, &pool, epoch)?;
            losses.push(loss);
            metric_rows(&mut rows, epoch, "train", Task::Flp, &Metrics::from([("loss".to_string(), loss)]), cfg.seed);
        } else if flp_epochs > 0 {
            continue;
        }
        let val = evaluate_flp(&model, cfg, data, &split, Part::Val)?;
        metric_rows(&mut rows, epoch, "val", Task::Flp, &val, cfg.seed);
        if best.as_ref().is_none_or(|b| val["ap"] > b.1) {
            best = Some((epoch, val["ap"], model.store.clone(), val));
        }
    }
    let (mut best_epoch, mut best_val, best_store, mut best_metrics) = best.expect("at least one evaluation");
    model.store = best_store;

    if cfg.task == Task::Flp {
        let test = evaluate_flp(&model, cfg, data, &split, Part::Test)?;
        metric_rows(&mut rows, best_epoch, "test", Task::Flp, &test, cfg.seed);
        return finish(cfg, data, model, artifacts, rows, best_epoch, best_val, best_metrics, test, losses);
    }

    // Node classification on the frozen encoder.
    let g = &data.graph;
    let (train_x, train_y) = dnc_features(&model, cfg, g, &split.edges(g, Part::Train), 0)?;
    let (val_x, val_y) = dnc_features(&model, cfg, g, &split.edges(g, Part::Val), 1)?;
    let (test_x, test_y) = dnc_features(&model, cfg, g, &split.edges(g, Part::Test), 2)?;
    if train_y.is_empty() {
        return Err(Error::TaskData("no labeled training interactions".into()));
    }
    let dec = model.dnc.expect("dnc decoder");
    let dnc_start = model.dnc_start;
    let trainable = move |id: ParamId| id.index() >= dnc_start;
    let mut opt = Adam::new(&model.store, cfg.lr);
    let mut best: Option<(usize, f64, ParamStore<F>, Metrics)> = None;
    let d = cfg.encoder.hidden;
    for epoch in 0..=cfg.epochs {
        if epoch > 0 {
            let mut total = 0.0;
            let chunks: Vec<(usize, usize)> = (0..train_y.len())
                .step_by(cfg.batch_size)
                .map(|s| (s, (s + cfg.batch_size).min(train_y.len())))
                .collect();
            for &(a, b) in &chunks {
                let tape = Tape::new();
                let p = model.store.bind(&tape, &trainable);
                let x = tape.constant(Tensor::new(&[b - a, d], train_x.data()[a * d..b * d].to_vec())?);
                let loss = ce_loss(&dec.logits(&p, &x)?, &train_y[a..b])?;
                let lv = loss.value().item().to_f64().unwrap_or(f64::NAN);
                let grads = tape.backward(loss)?;
                let grads = collect_grads(&model.store, &p, &grads, &trainable);
                if !lv.is_finite() {
                    return Err(non_finite(&model.store, &grads, format!("non-finite loss at epoch {epoch}, rows {a}..{b}")));
                }
                opt.step(&mut model.store, &grads);
                total += lv;
            }
            let loss = total / chunks.len() as f64;
            losses.push(loss);
            metric_rows(&mut rows, epoch, "train", Task::Dnc, &Metrics::from([("loss".to_string(), loss)]), cfg.seed);
        } else if cfg.epochs > 0 {
            continue;
        }
        let val = dnc_metrics(&model, &val_x, &val_y)?;
        metric_rows(&mut rows, epoch, "val", Task::Dnc, &val, cfg.seed);
        if best.as_ref().is_none_or(|b| val["auc"] > b.1) {
            best = Some((epoch, val["auc"], model.store.clone(), val));
        }
    }
    let store;
    (best_epoch, best_val, store, best_metrics) = best.expect("at least one evaluation");
    model.store = store;
    let test = dnc_metrics(&model, &test_x, &test_y)?;
    metric_rows(&mut rows, best_epoch, "test", Task::Dnc, &test, cfg.seed);
    finish(cfg, data, model, artifacts, rows, best_epoch, best_val, best_metrics, test, losses)
}

#[allow(clippy::too_many_arguments)]
fn finish<F: Float>(
    cfg: &RunConfig,
    data: &Dataset,
    model: Model<F>,
    artifacts: Option<&Artifacts>,
    rows: Vec<MetricRow>,
    best_epoch: usize,
    best_val: f64,
    val: Metrics,
    test: Metrics,
    losses: Vec<f64>,
) -> Result<(Model<F>, TrainReport)> {
    if let Some(a) = artifacts {
        std::fs::create_dir_all(&a.dir)?;
        let meta = serde_json::json!({
            "config": cfg.to_json(),
            "dataset_hash": data.hash,
            "epoch": best_epoch,
            "val": val,
        });
        model.save(&a.checkpoint(), meta)?;
        write_metrics_csv(&a.metrics(), &rows)?;
        write_json(&a.manifest(), &manifest(cfg, data, "train"))?;
    }
    Ok((
        model,
        TrainReport {
            rows,
            best_epoch,
            best_val,
            val,
            test,
            losses,
        },
    ))
}

/// Metrics of a trained model on one split for the configured task.
pub fn evaluate<F: Float>(model: &Model<F>, cfg: &RunConfig, data: &Dataset, part: Part) -> Result<Metrics> {
    let split = data.split(cfg)?;
    match cfg.task {
        Task::Flp => evaluate_flp(model, cfg, data, &split, part),
        Task::Dnc => {
            let g = &data.graph;
            let (x, y) = dnc_features(model, cfg, g, &split.edges(g, part), part as u64)?;
            dnc_metrics(model, &x, &y)
        }
    }
}

/// Rows for an evaluation result, tagged with the checkpoint's epoch.
pub fn evaluation_rows(cfg: &RunConfig, epoch: usize, part: Part, m: &Metrics) -> Vec<MetricRow> {
    let mut rows = Vec::new();
    metric_rows(&mut rows, epoch, part.name(), cfg.task, m, cfg.seed);
    rows
}
