//! Task decoders, losses and ranking metrics.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::nn::{Bound, Mlp, ParamStore};
use crate::rng::Rng;
use crate::tensor::{Float, Tape, Tensor, Var};

/// Probability clamp for the binary cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

/// Link decoder: `MLP([h_u ‖ h_v]) → logit`, hidden width `D`.
#[derive(Debug, Clone, Copy)]
pub struct FlpDecoder {
    pub mlp: Mlp,
}

impl FlpDecoder {
    pub fn new<F: Float>(store: &mut ParamStore<F>, rng: &mut Rng, dim: usize) -> Self {
        FlpDecoder {
            mlp: Mlp::new(store, rng, "flp", 2 * dim, dim, 1),
        }
    }

    /// `[n]` logits for row-aligned source and destination embeddings.
    pub fn logits<'t, F: Float>(&self, p: &Bound<'t, F>, hu: &Var<'t, F>, hv: &Var<'t, F>) -> Result<Var<'t, F>> {
        let x = Var::concat_cols(&[*hu, *hv])?;
        let z = self.mlp.forward(p, &x)?;
        let n = z.value().rows();
        z.reshape(&[n])
    }

    /// Link probabilities `σ(logit)`.
    pub fn score<'t, F: Float>(&self, p: &Bound<'t, F>, hu: &Var<'t, F>, hv: &Var<'t, F>) -> Result<Var<'t, F>> {
        Ok(self.logits(p, hu, hv)?.sigmoid())
    }
}

/// Label decoder: `MLP(h_src) → class logits`, hidden width `D`.
#[derive(Debug, Clone, Copy)]
pub struct DncDecoder {
    pub mlp: Mlp,
    pub classes: usize,
}

impl DncDecoder {
    pub fn new<F: Float>(store: &mut ParamStore<F>, rng: &mut Rng, dim: usize, classes: usize) -> Self {
        DncDecoder {
            mlp: Mlp::new(store, rng, "dnc", dim, dim, classes),
            classes,
        }
    }

    pub fn logits<'t, F: Float>(&self, p: &Bound<'t, F>, h: &Var<'t, F>) -> Result<Var<'t, F>> {
        self.mlp.forward(p, h)
    }
}

/// Mean of `−(y·ln p + (1−y)·ln(1−p))` with `p` clamped to `[ε, 1−ε]`.
pub fn bce_loss<'t, F: Float>(p: &Var<'t, F>, y: &[f64]) -> Result<Var<'t, F>> {
    let pv = p.value();
    if pv.numel() != y.len() {
        return Err(Error::Shape(format!("bce: {} probabilities for {} labels", pv.numel(), y.len())));
    }
    let tape = p.tape;
    let p = p.reshape(&[y.len()])?.clamp(BCE_EPS, 1.0 - BCE_EPS);
    let yv = tape.constant(Tensor::from_f64(&[y.len()], y)?);
    let not_y = yv.affine(-1.0, 1.0);
    let pos = yv.mul(&p.log())?;
    let neg = not_y.mul(&p.affine(-1.0, 1.0).log())?;
    Ok(pos.add(&neg)?.mean().scale(-1.0))
}

/// Mean of `−ln softmax(logits)[y]`.
pub fn ce_loss<'t, F: Float>(logits: &Var<'t, F>, y: &[usize]) -> Result<Var<'t, F>> {
    let lv = logits.value();
    let c = lv.cols();
    if let Some(&bad) = y.iter().find(|&&k| k >= c) {
        return Err(Error::Contract(format!("class index {bad} with {c} classes")));
    }
    Ok(logits.log_softmax().pick_cols(y)?.mean().scale(-1.0))
}

/// Convenience for tests and examples: a one-off tape evaluation.
pub fn eval_scalar<F: Float>(f: impl for<'t> FnOnce(&'t Tape<F>) -> Result<Var<'t, F>>) -> Result<F> {
    let tape = Tape::new();
    let v = f(&tape)?;
    Ok(v.value().item())
}

fn check_binary(labels: &[bool]) -> Result<(usize, usize)> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::MetricUndefined(format!(
            "need both classes, got {pos} positives and {neg} negatives"
        )));
    }
    Ok((pos, neg))
}

fn descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    order
}

/// Area under the precision-recall step curve; tied scores form one step.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, _) = check_binary(labels)?;
    let order = descending(scores);
    let (mut tp, mut seen, mut ap) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let mut gained = 0;
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                gained += 1;
            }
            seen += 1;
            i += 1;
        }
        tp += gained;
        if gained > 0 {
            ap += gained as f64 / pos as f64 * (tp as f64 / seen as f64);
        }
    }
    Ok(ap)
}

/// Normalized Mann–Whitney U: the probability that a random positive
/// outscores a random negative, ties counting one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check_binary(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    // Twice the rank sum keeps tie-averaged ranks integral.
    let mut rank2_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j averaged: (i + 1 + j) / 2.
        let r2 = (i + 1 + j) as u128;
        for &k in &order[i..j] {
            if labels[k] {
                rank2_sum += r2;
            }
        }
        i = j;
    }
    let p = pos as u128;
    let u2 = rank2_sum - p * (p + 1);
    Ok(u2 as f64 / (2.0 * pos as f64 * neg as f64))
}

/// Mean reciprocal rank with rank `1 + #(negatives scoring strictly higher)`.
pub fn mrr(pos_scores: &[f64], neg_scores: &[Vec<f64>]) -> Result<f64> {
    if pos_scores.len() != neg_scores.len() {
        return Err(Error::Shape(format!(
            "mrr: {} positives for {} negative lists",
            pos_scores.len(),
            neg_scores.len()
        )));
    }
    if pos_scores.is_empty() || neg_scores.iter().any(Vec::is_empty) {
        return Err(Error::MetricUndefined("every query needs at least one negative".into()));
    }
    let total: f64 = pos_scores
        .iter()
        .zip(neg_scores)
        .map(|(&p, negs)| 1.0 / (1 + negs.iter().filter(|&&n| n > p).count()) as f64)
        .sum();
    Ok(total / pos_scores.len() as f64)
}

/// Fraction of rows whose arg-max matches the label.
pub fn accuracy(logits: &Tensor<f64>, labels: &[usize]) -> f64 {
    let hits = (0..labels.len())
        .filter(|&r| {
            let row = logits.row(r);
            let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            best == labels[r]
        })
        .count();
    hits as f64 / labels.len().max(1) as f64
}

/// One-vs-rest AUC averaged over classes present with both signs;
/// for two classes this is the plain AUC of the class-1 probability.
pub fn macro_auc(probs: &Tensor<f64>, labels: &[usize]) -> Result<f64> {
    let c = probs.cols();
    let col = |k: usize| (0..labels.len()).map(|r| probs.row(r)[k]).collect::<Vec<_>>();
    if c == 2 {
        let y: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
        return roc_auc(&col(1), &y);
    }
    let mut sum = 0.0;
    let mut used = 0;
    for k in 0..c {
        let y: Vec<bool> = labels.iter().map(|&l| l == k).collect();
        if let Ok(a) = roc_auc(&col(k), &y) {
            sum += a;
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::MetricUndefined("no class has both positives and negatives".into()));
    }
    Ok(sum / used as f64)
}
