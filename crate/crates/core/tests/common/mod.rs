//! Shared test oracles. Nothing here calls into the backward pass.

#![allow(dead_code)]

use todyformer::tensor::{Tape, Tensor, Var};

/// Central finite differences of a scalar function of several tensors.
pub fn numeric_grads(
    f: &dyn Fn(&[Tensor<f64>]) -> f64,
    inputs: &[Tensor<f64>],
    h: f64,
) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for t in 0..inputs.len() {
        let mut g = vec![0.0; inputs[t].numel()];
        for (i, gi) in g.iter_mut().enumerate() {
            let orig = work[t].data()[i];
            work[t].data_mut()[i] = orig + h;
            let up = f(&work);
            work[t].data_mut()[i] = orig - h;
            let down = f(&work);
            work[t].data_mut()[i] = orig;
            *gi = (up - down) / (2.0 * h);
        }
        out.push(g);
    }
    out
}

/// `|a - n| / max(|a|, |n|, floor)`
pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Runs `build` on a tape with every input as a parameter and compares the
/// analytic gradients against central differences. Returns the max relative
/// error.
pub fn gradcheck(
    build: &dyn for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Var<'t, f64>,
    inputs: &[Tensor<f64>],
    h: f64,
    floor: f64,
) -> f64 {
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = build(&tape, &vars);
    let grads = tape.backward(loss).unwrap();

    let f = |ts: &[Tensor<f64>]| {
        let tape = Tape::new();
        let vars: Vec<_> = ts.iter().map(|t| tape.constant(t.clone())).collect();
        build(&tape, &vars).value().item()
    };
    let numeric = numeric_grads(&f, inputs, h);

    let mut worst: f64 = 0.0;
    for (v, ng) in vars.iter().zip(&numeric) {
        let zeros;
        let ag = match grads.wrt(v) {
            Some(g) => g.data(),
            None => {
                zeros = vec![0.0; ng.len()];
                &zeros
            }
        };
        for (&a, &n) in ag.iter().zip(ng) {
            worst = worst.max(rel_err(a, n, floor));
        }
    }
    worst
}

/// Small deterministic pseudo-random tensor (xorshift), independent of the
/// library's RNG plumbing.
pub fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut s = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// Max relative error between analytic and central-difference gradients of
/// `loss` with respect to every scalar of every parameter in `store`.
pub fn store_gradcheck(
    store: &todyformer::nn::ParamStore<f64>,
    loss: &dyn for<'t> Fn(&todyformer::nn::Bound<'t, f64>, &'t Tape<f64>) -> Var<'t, f64>,
    h: f64,
    floor: f64,
) -> f64 {
    let tape = Tape::new();
    let p = store.bind_all(&tape);
    let l = loss(&p, &tape);
    let grads = tape.backward(l).unwrap();
    let analytic: Vec<Vec<f64>> = store
        .ids()
        .map(|id| grads.wrt(&p[id]).map_or(vec![0.0; store.get(id).numel()], |g| g.data().to_vec()))
        .collect();
    let mut work = store.clone();
    let eval = |s: &todyformer::nn::ParamStore<f64>| {
        let tape = Tape::new();
        let p = s.bind(&tape, &|_| false);
        loss(&p, &tape).value().item()
    };
    let mut worst: f64 = 0.0;
    for id in store.ids() {
        for i in 0..store.get(id).numel() {
            let orig = work.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + h;
            let up = eval(&work);
            work.get_mut(id).data_mut()[i] = orig - h;
            let down = eval(&work);
            work.get_mut(id).data_mut()[i] = orig;
            let n = (up - down) / (2.0 * h);
            worst = worst.max(rel_err(analytic[id.index()][i], n, floor));
        }
    }
    worst
}

/// Tanh-form GELU, written out independently of the library.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x * x * x)).tanh())
}

/// Layer normalization with population variance.
pub fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64], eps: f64) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    x.iter()
        .enumerate()
        .map(|(i, v)| (v - mean) / (var + eps).sqrt() * gain[i] + bias[i])
        .collect()
}

/// `x · W` for a row vector and a row-major `[x.len(), cols]` matrix.
pub fn vecmat(x: &[f64], w: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for (i, xi) in x.iter().enumerate() {
        for (j, o) in out.iter_mut().enumerate() {
            *o += xi * w[i * cols + j];
        }
    }
    out
}

/// AP as the sum over distinct thresholds of recall gained times precision.
pub fn brute_ap(s: &[f64], y: &[bool]) -> f64 {
    let pos = y.iter().filter(|&&l| l).count() as f64;
    let mut th: Vec<f64> = s.to_vec();
    th.sort_by(|a, b| b.partial_cmp(a).unwrap());
    th.dedup();
    th.iter()
        .map(|&t| {
            let at = (0..s.len()).filter(|&i| s[i] == t && y[i]).count() as f64;
            let above = (0..s.len()).filter(|&i| s[i] >= t).count() as f64;
            let tp = (0..s.len()).filter(|&i| s[i] >= t && y[i]).count() as f64;
            at / pos * tp / above
        })
        .sum()
}

/// AUC by counting every positive/negative pair.
pub fn brute_auc(s: &[f64], y: &[bool]) -> f64 {
    let (mut win, mut pairs) = (0.0, 0.0);
    for i in 0..s.len() {
        for j in 0..s.len() {
            if y[i] && !y[j] {
                pairs += 1.0;
                win += if s[i] > s[j] {
                    1.0
                } else if s[i] == s[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    win / pairs
}

/// Mean reciprocal rank where ties with a negative do not lower the rank.
pub fn brute_mrr(pos: &[f64], negs: &[Vec<f64>]) -> f64 {
    let total: f64 = pos
        .iter()
        .zip(negs)
        .map(|(&s, r)| 1.0 / (1 + r.iter().filter(|&&x| x > s).count()) as f64)
        .sum();
    total / pos.len() as f64
}
