//! The full encoder: `L` alternating blocks of local tokenization and
//! global attention over packed per-node sequences.
//!
//! ```text
//! H̄⁰ = X·W_in + b_in                       (per cell)
//! for l in 0..L:
//!     Hˡ  = Tokenizerˡ(H̄ˡ)                  (per patch)
//!     Sˡ  = Attendˡ(Pack(Hˡ) + PE)           (per node sequence)
//!     H̄ˡ⁺¹ = Unpack(Sˡ)                      (all but the last block)
//! out = Readout(S^{L-1})
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::EventGraph;
use crate::global_attn::Transformer;
use crate::nn::{Bound, ParamId, ParamStore};
use crate::rng::{derive, Rng};
use crate::seqpack::{encode_positions, pack, readout, unpack, CellLayout, PeInput, PeKind, PositionalEncoder, ReadoutMode};
use crate::stream::{sample_neighborhood, PatchSet, SamplingMode};
use crate::tensor::{Float, Tape, Tensor, Var};
use crate::tokenizer::{MessageGraph, Tokenizer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Token width `D`.
    pub hidden: usize,
    /// Alternating blocks `L`.
    pub blocks: usize,
    pub mpnn_layers: usize,
    pub attn_layers: usize,
    pub heads: usize,
    /// Width of the edge time encoding (even).
    pub time_dim: usize,
    pub fanouts: Vec<usize>,
    pub sampling: SamplingMode,
    /// Disables both positional encoding and attention when false.
    pub global: bool,
    pub pe: bool,
    pub pe_kind: PeKind,
    pub pe_input: PeInput,
    pub readout: ReadoutMode,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            hidden: 64,
            blocks: 3,
            mpnn_layers: 3,
            attn_layers: 2,
            heads: 2,
            time_dim: 16,
            fanouts: vec![64, 1, 1],
            sampling: SamplingMode::Uniform,
            global: true,
            pe: true,
            pe_kind: PeKind::SineCosine,
            pe_input: PeInput::PatchIndex,
            readout: ReadoutMode::Last,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.hidden == 0 || self.blocks == 0 || self.mpnn_layers == 0 {
            return bad("hidden, blocks and mpnn_layers must be positive".into());
        }
        if self.heads == 0 || self.hidden % self.heads != 0 {
            return bad(format!("hidden {} is not divisible by heads {}", self.hidden, self.heads));
        }
        if self.time_dim % 2 != 0 {
            return bad(format!("time_dim must be even, got {}", self.time_dim));
        }
        if self.fanouts.is_empty() || self.fanouts.len() > 3 || self.fanouts.contains(&0) {
            return bad(format!("fanouts {:?} must be 1 to 3 positive counts", self.fanouts));
        }
        if self.pe && self.pe_kind == PeKind::SineCosine && self.hidden % 2 != 0 {
            return bad("sine-cosine encoding needs an even hidden width".into());
        }
        Ok(())
    }
}

/// Everything about one window that does not depend on parameters.
#[derive(Debug, Clone)]
pub struct EncodeInput {
    pub layout: CellLayout,
    pub messages: MessageGraph,
    /// `[cells, node_dim]` input features.
    pub cell_feats: Tensor<f64>,
    /// Per query, its layout row or `num_nodes()` when absent from the window.
    pub query_rows: Vec<usize>,
}

/// Samples per-patch neighborhoods rooted at `query` and builds the cell
/// layout and message graph. Patch `m` draws from `derive(seed, [m])`.
pub fn prepare(
    g: &EventGraph,
    patches: &PatchSet<'_>,
    query: &[usize],
    cfg: &EncoderConfig,
    seed: u64,
) -> Result<EncodeInput> {
    if query.is_empty() {
        return Err(Error::Contract("encode needs at least one query node".into()));
    }
    let layout = CellLayout::from_patches(patches);
    let mut anchors = query.to_vec();
    anchors.sort_unstable();
    anchors.dedup();
    let sampled = (0..patches.num_patches())
        .map(|m| {
            let s = sample_neighborhood(g, patches.patch(m), &anchors, &cfg.fanouts, cfg.sampling, derive(seed, &[m as u64]))?;
            Ok(s.edges())
        })
        .collect::<Result<Vec<_>>>()?;
    let messages = MessageGraph::build(g, patches, &layout, &sampled, cfg.time_dim)?;
    let dv = g.node_dim();
    let mut feats = Vec::with_capacity(layout.num_cells() * dv);
    for &r in &layout.cell_node {
        feats.extend_from_slice(g.node_feat(layout.nodes[r]));
    }
    let cell_feats = Tensor::new(&[layout.num_cells(), dv], feats)?;
    let absent = layout.num_nodes();
    let query_rows = query.iter().map(|&v| layout.row_of(v).unwrap_or(absent)).collect();
    Ok(EncodeInput {
        layout,
        messages,
        cell_feats,
        query_rows,
    })
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub node_dim: usize,
    pub edge_dim: usize,
    pub w_in: ParamId,
    pub b_in: ParamId,
    pub mask: ParamId,
    pub tokenizers: Vec<Tokenizer>,
    pub transformers: Vec<Transformer>,
    pub pe: Option<PositionalEncoder>,
}

impl Encoder {
    pub fn new<F: Float>(
        store: &mut ParamStore<F>,
        rng: &mut Rng,
        config: &EncoderConfig,
        node_dim: usize,
        edge_dim: usize,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.hidden;
        let w_in = store.weight("encoder.input.w", rng, node_dim, d);
        let b_in = store.uniform("encoder.input.b", rng, &[d], 1.0);
        let mask = store.uniform("encoder.mask", rng, &[d], 1.0);
        let feat_dim = config.time_dim + edge_dim;
        let tokenizers = (0..config.blocks)
            .map(|l| Tokenizer::new(store, rng, &format!("encoder.block{l}.mpnn"), d, feat_dim, config.mpnn_layers))
            .collect();
        let mut transformers = Vec::new();
        let mut pe = None;
        if config.global {
            for l in 0..config.blocks {
                transformers.push(Transformer::new(
                    store,
                    rng,
                    &format!("encoder.block{l}.attn"),
                    d,
                    config.heads,
                    config.attn_layers,
                )?);
            }
            if config.pe {
                pe = Some(PositionalEncoder::new(store, rng, config.pe_kind, config.pe_input, d)?);
            }
        }
        Ok(Encoder {
            config: config.clone(),
            node_dim,
            edge_dim,
            w_in,
            b_in,
            mask,
            tokenizers,
            transformers,
            pe,
        })
    }

    /// Block-0 input states `[cells, D]`.
    pub fn initial_states<'t, F: Float>(
        &self,
        p: &Bound<'t, F>,
        tape: &'t Tape<F>,
        input: &EncodeInput,
    ) -> Result<Var<'t, F>> {
        if input.cell_feats.cols() != self.node_dim {
            return Err(Error::Shape(format!(
                "node features of width {} for an encoder built for {}",
                input.cell_feats.cols(),
                self.node_dim
            )));
        }
        let x = tape.constant(Tensor::from_f64(input.cell_feats.shape(), input.cell_feats.data())?);
        x.matmul(&p[self.w_in])?.add_row(&p[self.b_in])
    }

    /// Tokens of every cell after the first tokenizer.
    pub fn block0_tokens<'t, F: Float>(
        &self,
        p: &Bound<'t, F>,
        tape: &'t Tape<F>,
        input: &EncodeInput,
    ) -> Result<Var<'t, F>> {
        let h = self.initial_states(p, tape, input)?;
        self.tokenizers[0].forward(p, tape, &h, &input.messages)
    }

    /// Readout embeddings of every layout row, `[N, D]`.
    pub fn encode_rows<'t, F: Float>(
        &self,
        p: &Bound<'t, F>,
        tape: &'t Tape<F>,
        input: &EncodeInput,
    ) -> Result<Var<'t, F>> {
        let layout = &input.layout;
        let mut h = self.initial_states(p, tape, input)?;
        let last = self.config.blocks - 1;
        for l in 0..self.config.blocks {
            let tokens = self.tokenizers[l].forward(p, tape, &h, &input.messages)?;
            let mut packed = pack(&tokens, layout, &p[self.mask])?;
            if self.config.global {
                if let Some(pe) = &self.pe {
                    packed = encode_positions(&packed, pe, p, tape)?;
                }
                packed = self.transformers[l].attend(p, &packed)?;
            }
            if l == last {
                return readout(&packed, self.config.readout);
            }
            h = unpack(&packed)?;
        }
        unreachable!("at least one block")
    }

    /// Embeddings of the query nodes, `[queries, D]`; nodes absent from the
    /// window get zero rows.
    pub fn encode<'t, F: Float>(&self, p: &Bound<'t, F>, tape: &'t Tape<F>, input: &EncodeInput) -> Result<Var<'t, F>> {
        let rows = self.encode_rows(p, tape, input)?;
        let zero = tape.constant(Tensor::zeros(&[1, self.config.hidden]));
        Var::concat_rows(&[rows, zero])?.gather_rows(&input.query_rows)
    }
}
