//! Local encoder: a per-patch attentive message-passing network that turns
//! cell states into structure-aware tokens.
//!
//! Every sampled edge `(u, v)` in patch `m` carries one message in each
//! direction between the cells `(m, u)` and `(m, v)`. A message's key and
//! value mix the sender's state with the edge features and a fixed
//! sinusoidal encoding of `t_ref − t_edge`, where `t_ref` is the patch's
//! latest timestamp. Per layer:
//!
//! ```text
//! α   = softmax over incoming messages of ⟨q_dst, k_msg⟩ / √D
//! H'  = LayerNorm(H + gelu((Σ α · v_msg) · W_o))
//! ```

use crate::error::{Error, Result};
use crate::graph::EventGraph;
use crate::nn::{Bound, LayerNorm, ParamId, ParamStore};
use crate::rng::Rng;
use crate::seqpack::CellLayout;
use crate::stream::PatchSet;
use crate::tensor::{Float, Tape, Tensor, Var};

/// `[sin(ω₁x), cos(ω₁x), …, sin(ω_{d/2}x), cos(ω_{d/2}x)]` with
/// `ωᵢ = 10000^{−2i/d}`. `d` must be even.
pub fn sinusoid(x: f64, d: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(d);
    for i in 1..=d / 2 {
        let w = 10000f64.powf(-2.0 * i as f64 / d as f64);
        out.push((w * x).sin());
        out.push((w * x).cos());
    }
    out
}

/// Fixed time encoding of an elapsed time.
pub fn encode_time(dt: f64, dim: usize) -> Result<Vec<f64>> {
    if dim % 2 != 0 {
        return Err(Error::Config(format!("time encoding width must be even, got {dim}")));
    }
    Ok(sinusoid(dt, dim))
}

/// Directed messages between cells, sorted by `(dst, src, edge)` so the
/// aggregation order does not depend on how neighbors were stored.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageGraph {
    pub num_cells: usize,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub edge: Vec<usize>,
    /// `[start, end)` message ranges of each receiving cell, ascending.
    pub segments: Vec<(usize, usize)>,
    /// Row-major `[messages, feat_dim]`: time encoding then edge features.
    pub feats: Vec<f64>,
    pub feat_dim: usize,
}

impl MessageGraph {
    /// `sampled[m]` lists the global indices of the edges sampled in patch `m`.
    pub fn build(
        g: &EventGraph,
        patches: &PatchSet<'_>,
        layout: &CellLayout,
        sampled: &[Vec<usize>],
        time_dim: usize,
    ) -> Result<Self> {
        if time_dim % 2 != 0 {
            return Err(Error::Config(format!("time encoding width must be even, got {time_dim}")));
        }
        let mut msgs: Vec<(usize, usize, usize, f64)> = Vec::new();
        for (m, edges) in sampled.iter().enumerate() {
            let range = patches.patch(m);
            let t_ref = g.edge(range.end - 1).t;
            for &i in edges {
                if !range.contains(&i) {
                    return Err(Error::Contract(format!("edge {i} is not in patch {m}")));
                }
                let e = g.edge(i);
                let cell = |v: usize| {
                    layout
                        .row_of(v)
                        .and_then(|r| layout.cell(m, r))
                        .ok_or_else(|| Error::Contract(format!("node {v} has no state in patch {m}")))
                };
                let (cu, cv) = (cell(e.src)?, cell(e.dst)?);
                let dt = t_ref - e.t;
                msgs.push((cv, cu, i, dt));
                if cu != cv {
                    msgs.push((cu, cv, i, dt));
                }
            }
        }
        msgs.sort_by_key(|&(d, s, i, _)| (d, s, i));

        let feat_dim = time_dim + g.edge_dim();
        let mut out = MessageGraph {
            num_cells: layout.num_cells(),
            src: Vec::with_capacity(msgs.len()),
            dst: Vec::with_capacity(msgs.len()),
            edge: Vec::with_capacity(msgs.len()),
            segments: Vec::new(),
            feats: Vec::with_capacity(msgs.len() * feat_dim),
            feat_dim,
        };
        for (k, &(d, s, i, dt)) in msgs.iter().enumerate() {
            if out.dst.last() != Some(&d) {
                out.segments.push((k, k));
            }
            out.segments.last_mut().expect("pushed").1 = k + 1;
            out.dst.push(d);
            out.src.push(s);
            out.edge.push(i);
            out.feats.extend(sinusoid(dt, time_dim));
            out.feats.extend_from_slice(g.edge_feat(i));
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.dst.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dst.is_empty()
    }
}

/// One attentive aggregation round.
#[derive(Debug, Clone, Copy)]
pub struct MpnnLayer {
    pub dim: usize,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    /// Projections of the message features; absent when they have width 0.
    pub wk_msg: Option<ParamId>,
    pub wv_msg: Option<ParamId>,
    pub wo: ParamId,
    pub norm: LayerNorm,
}

impl MpnnLayer {
    pub fn new<F: Float>(store: &mut ParamStore<F>, rng: &mut Rng, name: &str, dim: usize, feat_dim: usize) -> Self {
        let fan = dim + feat_dim;
        let mut w = |s: &str, fan_in: usize, rows: usize| {
            store.uniform(format!("{name}.{s}"), rng, &[rows, dim], 1.0 / (fan_in as f64).sqrt())
        };
        let wq = w("wq", dim, dim);
        let wk = w("wk", fan, dim);
        let wv = w("wv", fan, dim);
        let (wk_msg, wv_msg) = if feat_dim > 0 {
            (Some(w("wk_msg", fan, feat_dim)), Some(w("wv_msg", fan, feat_dim)))
        } else {
            (None, None)
        };
        let wo = w("wo", dim, dim);
        let norm = LayerNorm::new(store, &format!("{name}.norm"), dim);
        MpnnLayer {
            dim,
            wq,
            wk,
            wv,
            wk_msg,
            wv_msg,
            wo,
            norm,
        }
    }

    pub fn forward<'t, F: Float>(
        &self,
        p: &Bound<'t, F>,
        h: &Var<'t, F>,
        mg: &MessageGraph,
        feats: Option<&Var<'t, F>>,
    ) -> Result<Var<'t, F>> {
        if mg.is_empty() {
            return self.norm.forward(p, h);
        }
        let q = h.matmul(&p[self.wq])?.gather_rows(&mg.dst)?;
        let mut k = h.matmul(&p[self.wk])?.gather_rows(&mg.src)?;
        let mut v = h.matmul(&p[self.wv])?.gather_rows(&mg.src)?;
        if let (Some(f), Some(wk), Some(wv)) = (feats, self.wk_msg, self.wv_msg) {
            k = k.add(&f.matmul(&p[wk])?)?;
            v = v.add(&f.matmul(&p[wv])?)?;
        }
        let scores = q.mul(&k)?.sum_last().scale(1.0 / (self.dim as f64).sqrt());
        let alpha = scores.segment_softmax(&mg.segments)?;
        let agg = v.mul_rows(&alpha)?.scatter_add_rows(&mg.dst, mg.num_cells)?;
        let upd = agg.matmul(&p[self.wo])?.gelu();
        self.norm.forward(p, &h.add(&upd)?)
    }
}

/// A stack of [`MpnnLayer`]s with its own parameters.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    pub layers: Vec<MpnnLayer>,
    pub feat_dim: usize,
}

impl Tokenizer {
    pub fn new<F: Float>(
        store: &mut ParamStore<F>,
        rng: &mut Rng,
        name: &str,
        dim: usize,
        feat_dim: usize,
        layers: usize,
    ) -> Self {
        Tokenizer {
            layers: (0..layers)
                .map(|i| MpnnLayer::new(store, rng, &format!("{name}.{i}"), dim, feat_dim))
                .collect(),
            feat_dim,
        }
    }

    /// Maps `[cells, D]` states to `[cells, D]` tokens.
    pub fn forward<'t, F: Float>(
        &self,
        p: &Bound<'t, F>,
        tape: &'t Tape<F>,
        h: &Var<'t, F>,
        mg: &MessageGraph,
    ) -> Result<Var<'t, F>> {
        let hv = h.value();
        if hv.shape().len() != 2 || hv.shape()[0] != mg.num_cells {
            return Err(Error::Contract(format!(
                "tokenizer needs a state for each of {} cells, got {:?}",
                mg.num_cells,
                hv.shape()
            )));
        }
        if mg.feat_dim != self.feat_dim {
            return Err(Error::Shape(format!(
                "message features of width {} for a tokenizer expecting {}",
                mg.feat_dim, self.feat_dim
            )));
        }
        let feats = if mg.feat_dim > 0 && !mg.is_empty() {
            let data = mg.feats.iter().map(|&x| F::of(x)).collect();
            Some(tape.constant(Tensor::new(&[mg.len(), mg.feat_dim], data)?))
        } else {
            None
        };
        let mut x = *h;
        for layer in &self.layers {
            x = layer.forward(p, &x, mg, feats.as_ref())?;
        }
        Ok(x)
    }
}
