//! Dense loops shared by forward and backward rules. Every accumulation runs
//! in ascending index order so results do not depend on scheduling.

use rayon::prelude::*;

use super::Float;

/// Below this many multiply-adds the row-parallel path is not worth the
/// scheduling overhead.
const PAR_THRESHOLD: usize = 1 << 18;

/// `out[m,n] += a[m,k] · b[k,n]`
pub(crate) fn matmul_acc<F: Float>(a: &[F], b: &[F], out: &mut [F], m: usize, k: usize, n: usize) {
    if n == 0 || m == 0 {
        return;
    }
    let row = |(a_row, out_row): (&[F], &mut [F])| {
        for (p, &av) in a_row.iter().enumerate() {
            if av == F::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    };
    if k == 0 {
        return;
    }
    if m * k * n >= PAR_THRESHOLD {
        a.par_chunks(k)
            .zip(out.par_chunks_mut(n))
            .take(m)
            .for_each(row);
    } else {
        a.chunks(k).zip(out.chunks_mut(n)).take(m).for_each(row);
    }
}

/// `out[m,k] += g[m,n] · b[k,n]ᵀ`
pub(crate) fn matmul_bt_acc<F: Float>(g: &[F], b: &[F], out: &mut [F], m: usize, k: usize, n: usize) {
    if k == 0 || m == 0 {
        return;
    }
    let row = |(g_row, out_row): (&[F], &mut [F])| {
        for (p, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            let mut acc = F::zero();
            for (&gv, &bv) in g_row.iter().zip(b_row) {
                acc += gv * bv;
            }
            *o += acc;
        }
    };
    if n == 0 {
        return;
    }
    if m * k * n >= PAR_THRESHOLD {
        g.par_chunks(n)
            .zip(out.par_chunks_mut(k))
            .take(m)
            .for_each(row);
    } else {
        g.chunks(n).zip(out.chunks_mut(k)).take(m).for_each(row);
    }
}

/// `out[k,n] += a[m,k]ᵀ · g[m,n]`
pub(crate) fn matmul_at_acc<F: Float>(a: &[F], g: &[F], out: &mut [F], m: usize, k: usize, n: usize) {
    if n == 0 || k == 0 {
        return;
    }
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let g_row = &g[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            if av == F::zero() {
                continue;
            }
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in out_row.iter_mut().zip(g_row) {
                *o += av * gv;
            }
        }
    }
}

pub(crate) fn transpose<F: Float>(x: &[F], batch: usize, m: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); x.len()];
    for b in 0..batch {
        let src = &x[b * m * n..(b + 1) * m * n];
        let dst = &mut out[b * m * n..(b + 1) * m * n];
        for i in 0..m {
            for j in 0..n {
                dst[j * m + i] = src[i * n + j];
            }
        }
    }
    out
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
#[inline]
pub(crate) fn gelu<F: Float>(x: F) -> F {
    let c = F::of(GELU_C);
    let a = F::of(GELU_A);
    let half = F::of(0.5);
    half * x * (F::one() + (c * (x + a * x * x * x)).tanh())
}

#[inline]
pub(crate) fn gelu_grad<F: Float>(x: F) -> F {
    let c = F::of(GELU_C);
    let a = F::of(GELU_A);
    let half = F::of(0.5);
    let inner = c * (x + a * x * x * x);
    let t = inner.tanh();
    let sech2 = F::one() - t * t;
    half * (F::one() + t) + half * x * sech2 * c * (F::one() + F::of(3.0) * a * x * x)
}

#[inline]
pub(crate) fn sigmoid<F: Float>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// Softmax over the entries of `row` whose mask bit is set; masked entries
/// and fully masked rows produce exact zeros.
pub(crate) fn masked_softmax_row<F: Float>(row: &[F], mask: &[bool], out: &mut [F]) {
    let mut max = F::neg_infinity();
    for (&x, &m) in row.iter().zip(mask) {
        if m && x > max {
            max = x;
        }
    }
    if max == F::neg_infinity() {
        out.iter_mut().for_each(|o| *o = F::zero());
        return;
    }
    let mut sum = F::zero();
    for ((o, &x), &m) in out.iter_mut().zip(row).zip(mask) {
        if m {
            let e = (x - max).exp();
            *o = e;
            sum += e;
        } else {
            *o = F::zero();
        }
    }
    for (o, &m) in out.iter_mut().zip(mask) {
        if m {
            *o /= sum;
        }
    }
}

/// Backward of softmax restricted to one row: `gx = y ⊙ (g − ⟨y, g⟩)`.
pub(crate) fn softmax_row_grad<F: Float>(y: &[F], g: &[F], gx: &mut [F]) {
    let mut dot = F::zero();
    for (&yv, &gv) in y.iter().zip(g) {
        dot += yv * gv;
    }
    for ((o, &yv), &gv) in gx.iter_mut().zip(y).zip(g) {
        *o += yv * (gv - dot);
    }
}
