//! Forward rules. Each method computes its value eagerly and records an
//! [`Op`] so [`Tape::backward`](super::Tape::backward) can replay it.

use std::rc::Rc;

use super::kernels::{self, gelu, masked_softmax_row, matmul_acc, sigmoid};
use super::tape::{Op, Var};
use super::{Float, Tensor};
use crate::error::{Error, Result};

impl<'t, F: Float> Var<'t, F> {
    fn unary(&self, value: Tensor<F>, op: Op<F>) -> Var<'t, F> {
        self.tape.push(value, op, self.requires_grad())
    }

    fn binary(&self, other: &Var<'t, F>, value: Tensor<F>, op: Op<F>) -> Var<'t, F> {
        let rg = self.requires_grad() || other.requires_grad();
        self.tape.push(value, op, rg)
    }

    fn map(&self, op: Op<F>, f: impl Fn(F) -> F) -> Var<'t, F> {
        let x = self.value();
        let data = x.data.iter().map(|&v| f(v)).collect();
        self.unary(
            Tensor {
                shape: x.shape.clone(),
                data,
            },
            op,
        )
    }

    fn zip_same(&self, other: &Var<'t, F>, name: &str, f: impl Fn(F, F) -> F) -> Result<Tensor<F>> {
        let (a, b) = (self.value(), other.value());
        if a.shape != b.shape {
            return Err(Error::shape(name, &a.shape, &b.shape));
        }
        let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor {
            shape: a.shape.clone(),
            data,
        })
    }

    pub fn add(&self, other: &Var<'t, F>) -> Result<Var<'t, F>> {
        let v = self.zip_same(other, "add", |x, y| x + y)?;
        Ok(self.binary(other, v, Op::Add(self.id, other.id)))
    }

    pub fn sub(&self, other: &Var<'t, F>) -> Result<Var<'t, F>> {
        let v = self.zip_same(other, "sub", |x, y| x - y)?;
        Ok(self.binary(other, v, Op::Sub(self.id, other.id)))
    }

    pub fn mul(&self, other: &Var<'t, F>) -> Result<Var<'t, F>> {
        let v = self.zip_same(other, "mul", |x, y| x * y)?;
        Ok(self.binary(other, v, Op::Mul(self.id, other.id)))
    }

    /// Adds a vector of length `cols` to every row.
    pub fn add_row(&self, bias: &Var<'t, F>) -> Result<Var<'t, F>> {
        let (x, b) = (self.value(), bias.value());
        let n = x.cols();
        if b.numel() != n {
            return Err(Error::shape("add_row", &x.shape, &b.shape));
        }
        let mut data = x.data.clone();
        if n > 0 {
            for row in data.chunks_mut(n) {
                for (o, &bv) in row.iter_mut().zip(&b.data) {
                    *o += bv;
                }
            }
        }
        Ok(self.binary(
            bias,
            Tensor {
                shape: x.shape.clone(),
                data,
            },
            Op::AddRow(self.id, bias.id),
        ))
    }

    /// Scales row `i` of a `[k, d]` tensor by `s[i]`.
    pub fn mul_rows(&self, s: &Var<'t, F>) -> Result<Var<'t, F>> {
        let (x, sv) = (self.value(), s.value());
        if sv.numel() != x.rows() {
            return Err(Error::shape("mul_rows", &x.shape, &sv.shape));
        }
        let d = x.cols();
        let mut data = x.data.clone();
        if d > 0 {
            for (row, &k) in data.chunks_mut(d).zip(&sv.data) {
                row.iter_mut().for_each(|v| *v *= k);
            }
        }
        Ok(self.binary(
            s,
            Tensor {
                shape: x.shape.clone(),
                data,
            },
            Op::MulRows(self.id, s.id),
        ))
    }

    /// `scale * x + shift`
    pub fn affine(&self, scale: f64, shift: f64) -> Var<'t, F> {
        let (a, b) = (F::of(scale), F::of(shift));
        self.map(Op::Affine(self.id, scale), |v| a * v + b)
    }

    pub fn scale(&self, c: f64) -> Var<'t, F> {
        self.affine(c, 0.0)
    }

    /// `a[.., k] · b[k, n]`; leading axes of `a` are treated as a batch of rows.
    pub fn matmul(&self, b: &Var<'t, F>) -> Result<Var<'t, F>> {
        let (av, bv) = (self.value(), b.value());
        if bv.shape.len() != 2 || av.shape.is_empty() || av.cols() != bv.shape[0] {
            return Err(Error::shape("matmul", &av.shape, &bv.shape));
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.shape[1]);
        let mut data = vec![F::zero(); m * n];
        matmul_acc(&av.data, &bv.data, &mut data, m, k, n);
        let mut shape = av.shape.clone();
        *shape.last_mut().expect("rank >= 1") = n;
        Ok(self.binary(b, Tensor { shape, data }, Op::MatMul(self.id, b.id)))
    }

    /// `a[B, m, k] · b[B, k, n]`
    pub fn bmm(&self, b: &Var<'t, F>) -> Result<Var<'t, F>> {
        let (av, bv) = (self.value(), b.value());
        if av.shape.len() != 3 || bv.shape.len() != 3 || av.shape[0] != bv.shape[0] || av.shape[2] != bv.shape[1] {
            return Err(Error::shape("bmm", &av.shape, &bv.shape));
        }
        let (batch, m, k, n) = (av.shape[0], av.shape[1], av.shape[2], bv.shape[2]);
        let mut data = vec![F::zero(); batch * m * n];
        for t in 0..batch {
            matmul_acc(
                &av.data[t * m * k..(t + 1) * m * k],
                &bv.data[t * k * n..(t + 1) * k * n],
                &mut data[t * m * n..(t + 1) * m * n],
                m,
                k,
                n,
            );
        }
        Ok(self.binary(
            b,
            Tensor {
                shape: vec![batch, m, n],
                data,
            },
            Op::BatchMatMul(self.id, b.id),
        ))
    }

    /// `[B, m, n] -> [B, n, m]`
    pub fn transpose_last2(&self) -> Result<Var<'t, F>> {
        let x = self.value();
        if x.shape.len() != 3 {
            return Err(Error::Shape(format!("transpose_last2 needs rank 3, got {:?}", x.shape)));
        }
        let (batch, m, n) = (x.shape[0], x.shape[1], x.shape[2]);
        let data = kernels::transpose(&x.data, batch, m, n);
        Ok(self.unary(
            Tensor {
                shape: vec![batch, n, m],
                data,
            },
            Op::TransposeLast2(self.id),
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t, F>> {
        let x = (*self.value()).clone().reshaped(shape)?;
        Ok(self.unary(x, Op::Reshape(self.id)))
    }

    /// Concatenates along the last axis; all parts must share leading axes.
    pub fn concat_cols(parts: &[Var<'t, F>]) -> Result<Var<'t, F>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat_cols of nothing".into()))?;
        let vals: Vec<_> = parts.iter().map(Var::value).collect();
        let rows = vals[0].rows();
        let lead = &vals[0].shape[..vals[0].shape.len() - 1];
        for v in &vals {
            if &v.shape[..v.shape.len() - 1] != lead {
                return Err(Error::shape("concat_cols", &vals[0].shape, &v.shape));
            }
        }
        let total: usize = vals.iter().map(|v| v.cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for v in &vals {
                let w = v.cols();
                data.extend_from_slice(&v.data[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let rg = parts.iter().any(Var::requires_grad);
        Ok(first
            .tape
            .push(Tensor { shape, data }, Op::ConcatCols(parts.iter().map(|p| p.id).collect()), rg))
    }

    /// Stacks 2-D tensors with equal column counts along the first axis.
    pub fn concat_rows(parts: &[Var<'t, F>]) -> Result<Var<'t, F>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat_rows of nothing".into()))?;
        let vals: Vec<_> = parts.iter().map(Var::value).collect();
        let cols = vals[0].cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for v in &vals {
            if v.shape.len() != 2 || v.cols() != cols {
                return Err(Error::shape("concat_rows", &vals[0].shape, &v.shape));
            }
            rows += v.shape[0];
            data.extend_from_slice(&v.data);
        }
        let rg = parts.iter().any(Var::requires_grad);
        Ok(first.tape.push(
            Tensor {
                shape: vec![rows, cols],
                data,
            },
            Op::ConcatRows(parts.iter().map(|p| p.id).collect()),
            rg,
        ))
    }

    pub fn relu(&self) -> Var<'t, F> {
        self.map(Op::Relu(self.id), |v| if v > F::zero() { v } else { F::zero() })
    }

    pub fn gelu(&self) -> Var<'t, F> {
        self.map(Op::Gelu(self.id), gelu)
    }

    pub fn sigmoid(&self) -> Var<'t, F> {
        self.map(Op::Sigmoid(self.id), sigmoid)
    }

    pub fn exp(&self) -> Var<'t, F> {
        self.map(Op::Exp(self.id), F::exp)
    }

    pub fn log(&self) -> Var<'t, F> {
        self.map(Op::Log(self.id), F::ln)
    }

    pub fn sin(&self) -> Var<'t, F> {
        self.map(Op::Sin(self.id), F::sin)
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Var<'t, F> {
        let (l, h) = (F::of(lo), F::of(hi));
        self.map(Op::Clamp(self.id, l, h), |v| v.max(l).min(h))
    }

    /// Selects rows (first axis) by index, with repetition allowed.
    pub fn gather_rows(&self, idx: &[usize]) -> Result<Var<'t, F>> {
        let x = self.value();
        let n = x.shape.first().copied().unwrap_or(0);
        let d = if n == 0 { x.cols() } else { x.numel() / n };
        let mut data = Vec::with_capacity(idx.len() * d);
        for &r in idx {
            if r >= n {
                return Err(Error::Bounds(format!("gather_rows: row {r} of {n}")));
            }
            data.extend_from_slice(&x.data[r * d..(r + 1) * d]);
        }
        let mut shape = x.shape.clone();
        if shape.is_empty() {
            return Err(Error::Shape("gather_rows on rank 0".into()));
        }
        shape[0] = idx.len();
        Ok(self.unary(Tensor { shape, data }, Op::GatherRows(self.id, idx.into())))
    }

    /// `out[idx[i]] += x[i]` into `rows` output rows, accumulating in
    /// ascending `i`.
    pub fn scatter_add_rows(&self, idx: &[usize], rows: usize) -> Result<Var<'t, F>> {
        let x = self.value();
        if x.shape.len() != 2 || x.shape[0] != idx.len() {
            return Err(Error::Shape(format!(
                "scatter_add_rows: {:?} with {} indices",
                x.shape,
                idx.len()
            )));
        }
        let d = x.cols();
        let mut data = vec![F::zero(); rows * d];
        for (i, &r) in idx.iter().enumerate() {
            if r >= rows {
                return Err(Error::Bounds(format!("scatter_add_rows: row {r} of {rows}")));
            }
            for (o, &v) in data[r * d..(r + 1) * d].iter_mut().zip(&x.data[i * d..(i + 1) * d]) {
                *o += v;
            }
        }
        Ok(self.unary(
            Tensor {
                shape: vec![rows, d],
                data,
            },
            Op::ScatterAddRows(self.id, idx.into()),
        ))
    }

    /// Column-wise max of the rows sent to each output row; rows that
    /// receive nothing are zero. Ties go to the earliest source row.
    pub fn scatter_max_rows(&self, idx: &[usize], rows: usize) -> Result<Var<'t, F>> {
        let x = self.value();
        if x.shape.len() != 2 || x.shape[0] != idx.len() {
            return Err(Error::Shape(format!(
                "scatter_max_rows: {:?} with {} indices",
                x.shape,
                idx.len()
            )));
        }
        let d = x.cols();
        let mut data = vec![F::zero(); rows * d];
        let mut arg: Vec<Option<usize>> = vec![None; rows * d];
        for (i, &r) in idx.iter().enumerate() {
            if r >= rows {
                return Err(Error::Bounds(format!("scatter_max_rows: row {r} of {rows}")));
            }
            for j in 0..d {
                let v = x.data[i * d + j];
                let o = r * d + j;
                if arg[o].is_none() || v > data[o] {
                    data[o] = v;
                    arg[o] = Some(i);
                }
            }
        }
        Ok(self.unary(
            Tensor {
                shape: vec![rows, d],
                data,
            },
            Op::ScatterMaxRows(self.id, arg.into()),
        ))
    }

    fn reduce_last(&self, op: Op<F>, f: impl Fn(&[F]) -> F) -> Var<'t, F> {
        let x = self.value();
        let n = x.cols();
        let data: Vec<F> = if n == 0 {
            vec![F::zero(); x.rows()]
        } else {
            x.data.chunks(n).map(f).collect()
        };
        let mut shape = x.shape[..x.shape.len().saturating_sub(1)].to_vec();
        if shape.is_empty() {
            shape.push(1);
        }
        self.unary(Tensor { shape, data }, op)
    }

    pub fn sum_last(&self) -> Var<'t, F> {
        self.reduce_last(Op::SumLast(self.id), |r| r.iter().fold(F::zero(), |a, &b| a + b))
    }

    pub fn mean_last(&self) -> Var<'t, F> {
        self.reduce_last(Op::MeanLast(self.id), |r| {
            r.iter().fold(F::zero(), |a, &b| a + b) / F::of(r.len() as f64)
        })
    }

    pub fn max_last(&self) -> Result<Var<'t, F>> {
        let x = self.value();
        let n = x.cols();
        if n == 0 {
            return Err(Error::Shape("max over an empty axis".into()));
        }
        let mut arg = Vec::with_capacity(x.rows());
        let mut data = Vec::with_capacity(x.rows());
        for row in x.data.chunks(n) {
            let (j, &m) = row
                .iter()
                .enumerate()
                .fold((0, &row[0]), |best, cur| if cur.1 > best.1 { cur } else { best });
            arg.push(j);
            data.push(m);
        }
        let mut shape = x.shape[..x.shape.len() - 1].to_vec();
        if shape.is_empty() {
            shape.push(1);
        }
        Ok(self.unary(Tensor { shape, data }, Op::MaxLast(self.id, arg.into())))
    }

    pub fn sum(&self) -> Var<'t, F> {
        let x = self.value();
        let s = x.data.iter().fold(F::zero(), |a, &b| a + b);
        self.unary(Tensor::scalar(s), Op::SumAll(self.id))
    }

    pub fn mean(&self) -> Var<'t, F> {
        let x = self.value();
        let n = x.numel();
        let s = x.data.iter().fold(F::zero(), |a, &b| a + b);
        let m = if n == 0 { F::zero() } else { s / F::of(n as f64) };
        self.unary(Tensor::scalar(m), Op::MeanAll(self.id))
    }

    /// Softmax along the last axis over positions whose mask bit is set.
    /// Masked positions get exactly zero weight; a row with no unmasked
    /// position yields all zeros.
    pub fn masked_softmax(&self, mask: &[bool]) -> Result<Var<'t, F>> {
        let x = self.value();
        if mask.len() != x.numel() {
            return Err(Error::Shape(format!(
                "masked_softmax: mask of {} for shape {:?}",
                mask.len(),
                x.shape
            )));
        }
        let n = x.cols();
        let mut data = vec![F::zero(); x.numel()];
        if n > 0 {
            for ((row, m), out) in x.data.chunks(n).zip(mask.chunks(n)).zip(data.chunks_mut(n)) {
                masked_softmax_row(row, m, out);
            }
        }
        Ok(self.unary(
            Tensor {
                shape: x.shape.clone(),
                data,
            },
            Op::MaskedSoftmax(self.id),
        ))
    }

    /// Softmax of a 1-D score vector within contiguous segments. `segments`
    /// must tile `0..len` as ascending `[start, end)` ranges.
    pub fn segment_softmax(&self, segments: &[(usize, usize)]) -> Result<Var<'t, F>> {
        let x = self.value();
        let mut expect = 0;
        for &(a, b) in segments {
            if a != expect || b < a {
                return Err(Error::Contract(format!("segment ({a}, {b}) does not tile the input")));
            }
            expect = b;
        }
        if expect != x.numel() {
            return Err(Error::Contract(format!(
                "segments cover {expect} of {} scores",
                x.numel()
            )));
        }
        let mut data = vec![F::zero(); x.numel()];
        for &(a, b) in segments {
            let all = vec![true; b - a];
            masked_softmax_row(&x.data[a..b], &all, &mut data[a..b]);
        }
        Ok(self.unary(
            Tensor {
                shape: x.shape.clone(),
                data,
            },
            Op::SegmentSoftmax(self.id, segments.into()),
        ))
    }

    /// Normalizes each row over the last axis, then applies `gain` and `bias`.
    pub fn layer_norm(&self, gain: &Var<'t, F>, bias: &Var<'t, F>, eps: f64) -> Result<Var<'t, F>> {
        let (x, g, b) = (self.value(), gain.value(), bias.value());
        let n = x.cols();
        if g.numel() != n || b.numel() != n {
            return Err(Error::shape("layer_norm", &x.shape, &g.shape));
        }
        let rows = x.rows();
        let mut xhat = vec![F::zero(); x.numel()];
        let mut rstd = vec![F::zero(); rows];
        let mut data = vec![F::zero(); x.numel()];
        if n > 0 {
            let inv_n = F::one() / F::of(n as f64);
            let eps = F::of(eps);
            for r in 0..rows {
                let row = &x.data[r * n..(r + 1) * n];
                let mean = row.iter().fold(F::zero(), |a, &v| a + v) * inv_n;
                let var = row.iter().fold(F::zero(), |a, &v| a + (v - mean) * (v - mean)) * inv_n;
                let rs = F::one() / (var + eps).sqrt();
                rstd[r] = rs;
                for j in 0..n {
                    let h = (row[j] - mean) * rs;
                    xhat[r * n + j] = h;
                    data[r * n + j] = h * g.data[j] + b.data[j];
                }
            }
        }
        let rg = self.requires_grad() || gain.requires_grad() || bias.requires_grad();
        Ok(self.tape.push(
            Tensor {
                shape: x.shape.clone(),
                data,
            },
            Op::LayerNorm {
                x: self.id,
                gain: gain.id,
                bias: bias.id,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Numerically stable log-softmax along the last axis.
    pub fn log_softmax(&self) -> Var<'t, F> {
        let x = self.value();
        let n = x.cols();
        let mut data = x.data.clone();
        if n > 0 {
            for row in data.chunks_mut(n) {
                let max = row.iter().copied().fold(F::neg_infinity(), F::max);
                let lse = row.iter().fold(F::zero(), |a, &v| a + (v - max).exp()).ln() + max;
                row.iter_mut().for_each(|v| *v -= lse);
            }
        }
        self.unary(
            Tensor {
                shape: x.shape.clone(),
                data,
            },
            Op::LogSoftmax(self.id),
        )
    }

    /// `out[i] = x[i, idx[i]]` for a `[k, c]` input.
    pub fn pick_cols(&self, idx: &[usize]) -> Result<Var<'t, F>> {
        let x = self.value();
        let c = x.cols();
        if x.rows() != idx.len() {
            return Err(Error::Shape(format!("pick_cols: {:?} with {} indices", x.shape, idx.len())));
        }
        let mut data = Vec::with_capacity(idx.len());
        for (r, &j) in idx.iter().enumerate() {
            if j >= c {
                return Err(Error::Bounds(format!("pick_cols: column {j} of {c}")));
            }
            data.push(x.data[r * c + j]);
        }
        Ok(self.unary(
            Tensor {
                shape: vec![idx.len()],
                data,
            },
            Op::PickCols(self.id, Rc::from(idx)),
        ))
    }
}
