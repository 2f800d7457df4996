//! Global encoder: pre-norm multi-head self-attention over each node's own
//! slot sequence, restricted by a causal occupancy mask.

use crate::error::{Error, Result};
use crate::nn::{Bound, LayerNorm, Linear, Mlp, ParamId, ParamStore};
use crate::rng::Rng;
use crate::seqpack::PackedSequences;
use crate::tensor::{Float, Var};

/// Row-major `M × M` mask: `mask[i][j] = j ≤ i ∧ occupancy[j]`.
pub fn causal_mask(m: usize, occupancy: &[bool]) -> Vec<bool> {
    let mut mask = vec![false; m * m];
    for i in 0..m {
        for j in 0..=i {
            mask[i * m + j] = occupancy[j];
        }
    }
    mask
}

#[derive(Debug, Clone, Copy)]
pub struct Head {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
}

#[derive(Debug, Clone)]
pub struct AttnLayer {
    pub heads: Vec<Head>,
    pub out: Linear,
    pub norm_attn: LayerNorm,
    pub norm_ff: LayerNorm,
    pub ff: Mlp,
}

#[derive(Debug, Clone)]
pub struct Transformer {
    pub dim: usize,
    pub head_dim: usize,
    pub layers: Vec<AttnLayer>,
}

impl Transformer {
    pub fn new<F: Float>(
        store: &mut ParamStore<F>,
        rng: &mut Rng,
        name: &str,
        dim: usize,
        heads: usize,
        layers: usize,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!("width {dim} is not divisible by {heads} heads")));
        }
        let head_dim = dim / heads;
        let layers = (0..layers)
            .map(|l| {
                let n = format!("{name}.{l}");
                AttnLayer {
                    heads: (0..heads)
                        .map(|h| Head {
                            wq: store.weight(format!("{n}.h{h}.wq"), rng, dim, head_dim),
                            wk: store.weight(format!("{n}.h{h}.wk"), rng, dim, head_dim),
                            wv: store.weight(format!("{n}.h{h}.wv"), rng, dim, head_dim),
                        })
                        .collect(),
                    out: Linear::new(store, rng, &format!("{n}.out"), dim, dim, true),
                    norm_attn: LayerNorm::new(store, &format!("{n}.norm_attn"), dim),
                    norm_ff: LayerNorm::new(store, &format!("{n}.norm_ff"), dim),
                    ff: Mlp::new(store, rng, &format!("{n}.ff"), dim, 2 * dim, dim),
                }
            })
            .collect();
        Ok(Transformer { dim, head_dim, layers })
    }

    /// Per-node masks stacked into `[N, M, M]` order.
    pub fn mask(packed: &PackedSequences<'_, '_, impl Float>) -> Vec<bool> {
        let layout = packed.layout;
        let m = layout.num_patches();
        let occ = layout.occupancy();
        occ.chunks(m).flat_map(|row| causal_mask(m, row)).collect()
    }

    pub fn attend<'a, 't, F: Float>(
        &self,
        p: &Bound<'t, F>,
        packed: &PackedSequences<'a, 't, F>,
    ) -> Result<PackedSequences<'a, 't, F>> {
        let d = packed.dim();
        if d != self.dim {
            return Err(Error::Shape(format!("tokens of width {d} for a width-{} encoder", self.dim)));
        }
        let layout = packed.layout;
        let (n, m) = (layout.num_nodes(), layout.num_patches());
        let mask = Self::mask(packed);
        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let mut x = packed.tokens;
        for layer in &self.layers {
            let y = layer.norm_attn.forward(p, &x)?;
            let mut outs = Vec::with_capacity(layer.heads.len());
            for h in &layer.heads {
                let shape = [n, m, self.head_dim];
                let q = y.matmul(&p[h.wq])?.reshape(&shape)?;
                let k = y.matmul(&p[h.wk])?.reshape(&shape)?;
                let v = y.matmul(&p[h.wv])?.reshape(&shape)?;
                let s = q.bmm(&k.transpose_last2()?)?.scale(scale);
                let a = s.masked_softmax(&mask)?;
                outs.push(a.bmm(&v)?.reshape(&[n * m, self.head_dim])?);
            }
            let attn = layer.out.forward(p, &Var::concat_cols(&outs)?)?;
            x = x.add(&attn)?;
            let ff = layer.ff.forward(p, &layer.norm_ff.forward(p, &x)?)?;
            x = x.add(&ff)?;
        }
        Ok(PackedSequences { tokens: x, layout })
    }
}
