use std::cell::{Cell, RefCell};
use std::fmt;
use std::rc::Rc;

use super::kernels::{self, gelu_grad, matmul_at_acc, matmul_bt_acc, softmax_row_grad};
use super::{Float, Tensor};
use crate::error::{Error, Result};

/// Recorded operation. Inputs are node ids on the same tape; anything the
/// backward rule needs beyond input and output values is cached here.
pub(crate) enum Op<F> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    /// `x[.., n] + b[n]`
    AddRow(usize, usize),
    /// `x[k, d] * s[k]`
    MulRows(usize, usize),
    /// `scale * x + shift`
    Affine(usize, f64),
    /// `a[.., k] · b[k, n]`
    MatMul(usize, usize),
    /// `a[B, m, k] · b[B, k, n]`
    BatchMatMul(usize, usize),
    TransposeLast2(usize),
    Reshape(usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    Relu(usize),
    Gelu(usize),
    Sigmoid(usize),
    Exp(usize),
    Log(usize),
    Sin(usize),
    Clamp(usize, F, F),
    GatherRows(usize, Rc<[usize]>),
    ScatterAddRows(usize, Rc<[usize]>),
    /// Per output element, the source row that won the max (if any).
    ScatterMaxRows(usize, Rc<[Option<usize>]>),
    SumLast(usize),
    MeanLast(usize),
    MaxLast(usize, Rc<[usize]>),
    SumAll(usize),
    MeanAll(usize),
    MaskedSoftmax(usize),
    /// Softmax within contiguous segments given as `[start, end)` ranges.
    SegmentSoftmax(usize, Rc<[(usize, usize)]>),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Vec<F>,
        rstd: Vec<F>,
    },
    LogSoftmax(usize),
    PickCols(usize, Rc<[usize]>),
}

pub(crate) struct Node<F> {
    pub(crate) value: Rc<Tensor<F>>,
    pub(crate) op: Op<F>,
    pub(crate) requires_grad: bool,
}

/// Records differentiable computation. Nodes are appended in evaluation
/// order, which is a topological order of the computation graph.
pub struct Tape<F> {
    pub(crate) nodes: RefCell<Vec<Node<F>>>,
    generation: Cell<u64>,
}

/// Handle to a value recorded on a [`Tape`].
pub struct Var<'t, F> {
    pub(crate) tape: &'t Tape<F>,
    pub(crate) id: usize,
    generation: u64,
}

impl<F> Clone for Var<'_, F> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<F> Copy for Var<'_, F> {}

impl<F: Float> fmt::Debug for Var<'_, F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Gradients produced by one backward pass, indexed by the [`Var`]s that
/// were live on the tape.
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
    generation: u64,
}

impl<F: Float> Gradients<F> {
    /// Gradient of the loss with respect to the leaf `var`, if it
    /// participated. Gradients of intermediate values are not retained.
    pub fn wrt(&self, var: &Var<'_, F>) -> Option<&Tensor<F>> {
        assert_eq!(
            var.generation, self.generation,
            "variable belongs to a different backward pass"
        );
        self.grads.get(var.id).and_then(Option::as_ref)
    }
}

impl<F: Float> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Float> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            generation: Cell::new(0),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&self, value: Tensor<F>) -> Var<'_, F> {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<F>) -> Var<'_, F> {
        self.push(value, Op::Leaf, false)
    }

    pub(crate) fn push(&self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var<'_, F> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id,
            generation: self.generation.get(),
        }
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<Tensor<F>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    pub(crate) fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Reverse pass from a one-element `loss`. Every node is visited once in
    /// reverse recording order; the tape is cleared afterwards and all
    /// outstanding [`Var`]s become invalid.
    pub fn backward(&self, loss: Var<'_, F>) -> Result<Gradients<F>> {
        loss.check();
        let nodes = std::mem::take(&mut *self.nodes.borrow_mut());
        let generation = self.generation.get();
        self.generation.set(generation + 1);

        if nodes[loss.id].value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }

        let mut grads: Vec<Option<Vec<F>>> = Vec::with_capacity(nodes.len());
        grads.resize_with(nodes.len(), || None);
        grads[loss.id] = Some(vec![F::one()]);

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            propagate(&nodes, id, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
            }
        }

        let grads = grads
            .into_iter()
            .zip(&nodes)
            .map(|(g, node)| {
                g.map(|data| Tensor {
                    shape: node.value.shape().to_vec(),
                    data,
                })
            })
            .collect();
        Ok(Gradients { grads, generation })
    }

    /// Drops all recorded nodes without computing gradients.
    pub fn clear(&self) {
        self.nodes.borrow_mut().clear();
        self.generation.set(self.generation.get() + 1);
    }
}

impl<'t, F: Float> Var<'t, F> {
    #[inline]
    pub(crate) fn check(&self) {
        assert_eq!(
            self.generation,
            self.tape.generation.get(),
            "variable used after its tape was cleared"
        );
    }

    pub fn id(&self) -> usize {
        self.id
    }

    /// Current value (shared, not copied).
    pub fn value(&self) -> Rc<Tensor<F>> {
        self.check();
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.check();
        self.tape.requires_grad(self.id)
    }
}

fn slot<'a, F: Float>(grads: &'a mut [Option<Vec<F>>], nodes: &[Node<F>], id: usize) -> Option<&'a mut Vec<F>> {
    if !nodes[id].requires_grad {
        return None;
    }
    let n = nodes[id].value.numel();
    Some(grads[id].get_or_insert_with(|| vec![F::zero(); n]))
}

fn acc<F: Float>(grads: &mut [Option<Vec<F>>], nodes: &[Node<F>], id: usize, g: &[F]) {
    if let Some(s) = slot(grads, nodes, id) {
        for (a, &b) in s.iter_mut().zip(g) {
            *a += b;
        }
    }
}

fn acc_map<F: Float>(
    grads: &mut [Option<Vec<F>>],
    nodes: &[Node<F>],
    id: usize,
    g: &[F],
    f: impl Fn(usize, F) -> F,
) {
    if let Some(s) = slot(grads, nodes, id) {
        for (i, (a, &b)) in s.iter_mut().zip(g).enumerate() {
            *a += f(i, b);
        }
    }
}

fn propagate<F: Float>(nodes: &[Node<F>], id: usize, g: &[F], grads: &mut [Option<Vec<F>>]) {
    let node = &nodes[id];
    let y = &node.value;
    let val = |i: usize| &nodes[i].value;
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            acc(grads, nodes, *a, g);
            acc(grads, nodes, *b, g);
        }
        Op::Sub(a, b) => {
            acc(grads, nodes, *a, g);
            acc_map(grads, nodes, *b, g, |_, v| -v);
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            acc_map(grads, nodes, *a, g, |i, v| v * bv.data[i]);
            acc_map(grads, nodes, *b, g, |i, v| v * av.data[i]);
        }
        Op::AddRow(x, b) => {
            acc(grads, nodes, *x, g);
            let n = val(*b).numel();
            if let Some(s) = slot(grads, nodes, *b) {
                if n > 0 {
                    for row in g.chunks(n) {
                        for (a, &v) in s.iter_mut().zip(row) {
                            *a += v;
                        }
                    }
                }
            }
        }
        Op::MulRows(x, s) => {
            let (xv, sv) = (val(*x), val(*s));
            let d = xv.cols();
            if d > 0 {
                acc_map(grads, nodes, *x, g, |i, v| v * sv.data[i / d]);
                if let Some(gs) = slot(grads, nodes, *s) {
                    for (r, (gr, xr)) in g.chunks(d).zip(xv.data.chunks(d)).enumerate() {
                        let mut dot = F::zero();
                        for (&a, &b) in gr.iter().zip(xr) {
                            dot += a * b;
                        }
                        gs[r] += dot;
                    }
                }
            }
        }
        Op::Affine(x, scale) => {
            let c = F::of(*scale);
            acc_map(grads, nodes, *x, g, |_, v| v * c);
        }
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let k = av.cols();
            let m = av.rows();
            let n = bv.cols();
            if let Some(ga) = slot(grads, nodes, *a) {
                matmul_bt_acc(g, &bv.data, ga, m, k, n);
            }
            if let Some(gb) = slot(grads, nodes, *b) {
                matmul_at_acc(&av.data, g, gb, m, k, n);
            }
        }
        Op::BatchMatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (batch, m, k) = (av.shape[0], av.shape[1], av.shape[2]);
            let n = bv.shape[2];
            if let Some(ga) = slot(grads, nodes, *a) {
                for t in 0..batch {
                    matmul_bt_acc(
                        &g[t * m * n..(t + 1) * m * n],
                        &bv.data[t * k * n..(t + 1) * k * n],
                        &mut ga[t * m * k..(t + 1) * m * k],
                        m,
                        k,
                        n,
                    );
                }
            }
            if let Some(gb) = slot(grads, nodes, *b) {
                for t in 0..batch {
                    matmul_at_acc(
                        &av.data[t * m * k..(t + 1) * m * k],
                        &g[t * m * n..(t + 1) * m * n],
                        &mut gb[t * k * n..(t + 1) * k * n],
                        m,
                        k,
                        n,
                    );
                }
            }
        }
        Op::TransposeLast2(x) => {
            let s = &y.shape;
            let (batch, m, n) = (s[0], s[1], s[2]);
            let back = kernels::transpose(g, batch, m, n);
            acc(grads, nodes, *x, &back);
        }
        Op::Reshape(x) => acc(grads, nodes, *x, g),
        Op::ConcatCols(parts) => {
            let total = y.cols();
            let rows = y.rows();
            let mut offset = 0;
            for &p in parts {
                let w = val(p).cols();
                if let Some(s) = slot(grads, nodes, p) {
                    for r in 0..rows {
                        let src = &g[r * total + offset..r * total + offset + w];
                        for (a, &v) in s[r * w..(r + 1) * w].iter_mut().zip(src) {
                            *a += v;
                        }
                    }
                }
                offset += w;
            }
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for &p in parts {
                let n = val(p).numel();
                acc(grads, nodes, p, &g[offset..offset + n]);
                offset += n;
            }
        }
        Op::Relu(x) => {
            let xv = val(*x);
            acc_map(grads, nodes, *x, g, |i, v| {
                if xv.data[i] > F::zero() {
                    v
                } else {
                    F::zero()
                }
            });
        }
        Op::Gelu(x) => {
            let xv = val(*x);
            acc_map(grads, nodes, *x, g, |i, v| v * gelu_grad(xv.data[i]));
        }
        Op::Sigmoid(x) => {
            acc_map(grads, nodes, *x, g, |i, v| {
                let s = y.data[i];
                v * s * (F::one() - s)
            });
        }
        Op::Exp(x) => acc_map(grads, nodes, *x, g, |i, v| v * y.data[i]),
        Op::Log(x) => {
            let xv = val(*x);
            acc_map(grads, nodes, *x, g, |i, v| v / xv.data[i]);
        }
        Op::Sin(x) => {
            let xv = val(*x);
            acc_map(grads, nodes, *x, g, |i, v| v * xv.data[i].cos());
        }
        Op::Clamp(x, lo, hi) => {
            let xv = val(*x);
            acc_map(grads, nodes, *x, g, |i, v| {
                let t = xv.data[i];
                if t >= *lo && t <= *hi {
                    v
                } else {
                    F::zero()
                }
            });
        }
        Op::GatherRows(x, idx) => {
            let d = val(*x).cols();
            if let Some(s) = slot(grads, nodes, *x) {
                for (i, &r) in idx.iter().enumerate() {
                    for (a, &v) in s[r * d..(r + 1) * d].iter_mut().zip(&g[i * d..(i + 1) * d]) {
                        *a += v;
                    }
                }
            }
        }
        Op::ScatterAddRows(x, idx) => {
            let d = val(*x).cols();
            if let Some(s) = slot(grads, nodes, *x) {
                for (i, &r) in idx.iter().enumerate() {
                    for (a, &v) in s[i * d..(i + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]) {
                        *a += v;
                    }
                }
            }
        }
        Op::ScatterMaxRows(x, arg) => {
            let d = val(*x).cols();
            if let Some(s) = slot(grads, nodes, *x) {
                for (o, a) in arg.iter().enumerate() {
                    if let Some(src) = a {
                        s[src * d + o % d] += g[o];
                    }
                }
            }
        }
        Op::SumLast(x) | Op::MeanLast(x) => {
            let n = val(*x).cols();
            let scale = if matches!(node.op, Op::MeanLast(_)) && n > 0 {
                F::one() / F::of(n as f64)
            } else {
                F::one()
            };
            acc_map(grads, nodes, *x, &expand(g, n), |_, v| v * scale);
        }
        Op::MaxLast(x, arg) => {
            let n = val(*x).cols();
            if let Some(s) = slot(grads, nodes, *x) {
                for (r, &j) in arg.iter().enumerate() {
                    s[r * n + j] += g[r];
                }
            }
        }
        Op::SumAll(x) | Op::MeanAll(x) => {
            let n = val(*x).numel();
            let scale = if matches!(node.op, Op::MeanAll(_)) && n > 0 {
                F::one() / F::of(n as f64)
            } else {
                F::one()
            };
            let gv = g[0] * scale;
            if let Some(s) = slot(grads, nodes, *x) {
                s.iter_mut().for_each(|a| *a += gv);
            }
        }
        Op::MaskedSoftmax(x) => {
            let n = y.cols();
            if let Some(s) = slot(grads, nodes, *x) {
                if n > 0 {
                    for ((yr, gr), sr) in y.data.chunks(n).zip(g.chunks(n)).zip(s.chunks_mut(n)) {
                        softmax_row_grad(yr, gr, sr);
                    }
                }
            }
        }
        Op::SegmentSoftmax(x, segs) => {
            if let Some(s) = slot(grads, nodes, *x) {
                for &(a, b) in segs.iter() {
                    softmax_row_grad(&y.data[a..b], &g[a..b], &mut s[a..b]);
                }
            }
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            rstd,
        } => {
            let n = val(*gain).numel();
            let gv = val(*gain);
            if n == 0 {
                return;
            }
            if let Some(s) = slot(grads, nodes, *bias) {
                for row in g.chunks(n) {
                    for (a, &v) in s.iter_mut().zip(row) {
                        *a += v;
                    }
                }
            }
            if let Some(s) = slot(grads, nodes, *gain) {
                for (row, xh) in g.chunks(n).zip(xhat.chunks(n)) {
                    for ((a, &v), &h) in s.iter_mut().zip(row).zip(xh) {
                        *a += v * h;
                    }
                }
            }
            if let Some(s) = slot(grads, nodes, *x) {
                let inv_n = F::one() / F::of(n as f64);
                for (r, ((row, xh), out)) in g
                    .chunks(n)
                    .zip(xhat.chunks(n))
                    .zip(s.chunks_mut(n))
                    .enumerate()
                {
                    let mut mean_g = F::zero();
                    let mut mean_gx = F::zero();
                    for j in 0..n {
                        let gh = row[j] * gv.data[j];
                        mean_g += gh;
                        mean_gx += gh * xh[j];
                    }
                    mean_g *= inv_n;
                    mean_gx *= inv_n;
                    for j in 0..n {
                        let gh = row[j] * gv.data[j];
                        out[j] += rstd[r] * (gh - mean_g - xh[j] * mean_gx);
                    }
                }
            }
        }
        Op::LogSoftmax(x) => {
            let n = y.cols();
            if let Some(s) = slot(grads, nodes, *x) {
                if n > 0 {
                    for ((yr, gr), sr) in y.data.chunks(n).zip(g.chunks(n)).zip(s.chunks_mut(n)) {
                        let total: F = gr.iter().copied().fold(F::zero(), |a, b| a + b);
                        for ((o, &yv), &gv) in sr.iter_mut().zip(yr).zip(gr) {
                            *o += gv - yv.exp() * total;
                        }
                    }
                }
            }
        }
        Op::PickCols(x, idx) => {
            let n = val(*x).cols();
            if let Some(s) = slot(grads, nodes, *x) {
                for (r, &j) in idx.iter().enumerate() {
                    s[r * n + j] += g[r];
                }
            }
        }
    }
}

fn expand<F: Float>(g: &[F], n: usize) -> Vec<F> {
    let mut out = Vec::with_capacity(g.len() * n);
    for &v in g {
        out.extend(std::iter::repeat_n(v, n));
    }
    out
}
