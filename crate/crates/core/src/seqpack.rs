//! Conversion between per-patch node states ("cells") and padded per-node
//! token sequences, positional encodings, and the final readout.
//!
//! A cell is a `(patch, node)` pair where the node has at least one edge in
//! the patch. Cells are ordered by patch, then by node. Cell states live in a
//! `[cells, D]` matrix; packed tokens live in an `[N·M, D]` matrix whose row
//! `n·M + m` is slot `m` of node `n`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Bound, ParamId, ParamStore};
use crate::rng::Rng;
use crate::stream::PatchSet;
use crate::tensor::{Float, Tape, Tensor, Var};
use crate::tokenizer::sinusoid;

/// Mapping between cells and slots for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct CellLayout {
    num_patches: usize,
    /// Global id of each sequence row.
    pub nodes: Vec<usize>,
    pub cell_patch: Vec<usize>,
    /// Row index into `nodes`.
    pub cell_node: Vec<usize>,
    /// `M + 1` offsets into the cell list.
    pub patch_cells: Vec<usize>,
    /// Window-relative index of the node's last edge in the cell's patch.
    pub cell_edge_pos: Vec<f64>,
    /// Time of that edge minus the window's first timestamp.
    pub cell_time_pos: Vec<f64>,
    /// Per slot, its cell or `num_cells()` for an empty slot.
    slot_src: Vec<usize>,
    slot_of_cell: Vec<usize>,
}

impl CellLayout {
    pub fn from_patches(p: &PatchSet<'_>) -> Self {
        let w = &p.window;
        let g = w.graph;
        let t0 = g.edge(w.lo).t;
        let mut last: Vec<Option<usize>> = vec![None; w.nodes.len()];
        let mut touched = Vec::new();
        let (mut cell_patch, mut cell_node) = (Vec::new(), Vec::new());
        let (mut edge_pos, mut time_pos) = (Vec::new(), Vec::new());
        let mut patch_cells = vec![0];
        for m in 0..p.num_patches() {
            for i in p.patch(m) {
                let e = g.edge(i);
                for v in [e.src, e.dst] {
                    let l = w.local(v).expect("window node");
                    if last[l].is_none() {
                        touched.push(l);
                    }
                    last[l] = Some(i);
                }
            }
            touched.sort_unstable();
            for &l in &touched {
                let i = last[l].take().expect("touched");
                cell_patch.push(m);
                cell_node.push(l);
                edge_pos.push((i - w.lo) as f64);
                time_pos.push(g.edge(i).t - t0);
            }
            touched.clear();
            patch_cells.push(cell_patch.len());
        }
        Self::assemble(p.num_patches(), w.nodes.clone(), cell_patch, cell_node, patch_cells, edge_pos, time_pos)
    }

    /// Layout for `n` rows and `m` patches from a row-major `n × m`
    /// occupancy matrix, with positions set to the patch index.
    pub fn from_occupancy(n: usize, m: usize, occupancy: &[bool]) -> Result<Self> {
        if occupancy.len() != n * m {
            return Err(Error::Shape(format!("occupancy of {} for {n}×{m}", occupancy.len())));
        }
        let (mut cell_patch, mut cell_node) = (Vec::new(), Vec::new());
        let mut patch_cells = vec![0];
        for p in 0..m {
            for v in 0..n {
                if occupancy[v * m + p] {
                    cell_patch.push(p);
                    cell_node.push(v);
                }
            }
            patch_cells.push(cell_patch.len());
        }
        let pos: Vec<f64> = cell_patch.iter().map(|&p| p as f64).collect();
        Ok(Self::assemble(m, (0..n).collect(), cell_patch, cell_node, patch_cells, pos.clone(), pos))
    }

    fn assemble(
        m: usize,
        nodes: Vec<usize>,
        cell_patch: Vec<usize>,
        cell_node: Vec<usize>,
        patch_cells: Vec<usize>,
        cell_edge_pos: Vec<f64>,
        cell_time_pos: Vec<f64>,
    ) -> Self {
        let c = cell_patch.len();
        let mut slot_src = vec![c; nodes.len() * m];
        let mut slot_of_cell = Vec::with_capacity(c);
        for (i, (&p, &v)) in cell_patch.iter().zip(&cell_node).enumerate() {
            slot_src[v * m + p] = i;
            slot_of_cell.push(v * m + p);
        }
        CellLayout {
            num_patches: m,
            nodes,
            cell_patch,
            cell_node,
            patch_cells,
            cell_edge_pos,
            cell_time_pos,
            slot_src,
            slot_of_cell,
        }
    }

    pub fn num_patches(&self) -> usize {
        self.num_patches
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_cells(&self) -> usize {
        self.cell_patch.len()
    }

    pub fn num_slots(&self) -> usize {
        self.nodes.len() * self.num_patches
    }

    /// Cell of row `node` in `patch`, if occupied.
    pub fn cell(&self, patch: usize, node: usize) -> Option<usize> {
        let s = self.slot_src[node * self.num_patches + patch];
        (s < self.num_cells()).then_some(s)
    }

    /// Row of a global node id.
    pub fn row_of(&self, global: usize) -> Option<usize> {
        self.nodes.binary_search(&global).ok()
    }

    pub fn cells_of_patch(&self, m: usize) -> std::ops::Range<usize> {
        self.patch_cells[m]..self.patch_cells[m + 1]
    }

    pub fn occupancy(&self) -> Vec<bool> {
        let c = self.num_cells();
        self.slot_src.iter().map(|&s| s < c).collect()
    }

    pub fn slot_of_cell(&self) -> &[usize] {
        &self.slot_of_cell
    }

    pub fn slot_src(&self) -> &[usize] {
        &self.slot_src
    }

    /// Per-cell position values for `input`.
    pub fn positions(&self, input: PeInput) -> Vec<f64> {
        match input {
            PeInput::PatchIndex => self.cell_patch.iter().map(|&p| p as f64).collect(),
            PeInput::EdgeIndex => self.cell_edge_pos.clone(),
            PeInput::EdgeTime => self.cell_time_pos.clone(),
        }
    }

    /// Row-major `N × M` position matrix (0 at empty slots).
    pub fn position_matrix(&self, input: PeInput) -> Vec<f64> {
        let pos = self.positions(input);
        let c = self.num_cells();
        self.slot_src.iter().map(|&s| if s < c { pos[s] } else { 0.0 }).collect()
    }
}

/// Packed tokens `[N·M, D]` over a [`CellLayout`].
pub struct PackedSequences<'a, 't, F> {
    pub tokens: Var<'t, F>,
    pub layout: &'a CellLayout,
}

impl<F> Clone for PackedSequences<'_, '_, F> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<F> Copy for PackedSequences<'_, '_, F> {}

impl<'a, 't, F: Float> PackedSequences<'a, 't, F> {
    pub fn dim(&self) -> usize {
        self.tokens.value().cols()
    }

    /// `[N, M, D]` view.
    pub fn as_3d(&self) -> Result<Var<'t, F>> {
        let d = self.dim();
        self.tokens.reshape(&[self.layout.num_nodes(), self.layout.num_patches(), d])
    }
}

/// Places cell states into their slots; empty slots get `mask` (`[D]` or `[1, D]`).
pub fn pack<'a, 't, F: Float>(
    cells: &Var<'t, F>,
    layout: &'a CellLayout,
    mask: &Var<'t, F>,
) -> Result<PackedSequences<'a, 't, F>> {
    let (cv, mv) = (cells.value(), mask.value());
    if cv.shape().len() != 2 || cv.shape()[0] != layout.num_cells() {
        return Err(Error::Shape(format!(
            "pack: cell states {:?} for {} cells",
            cv.shape(),
            layout.num_cells()
        )));
    }
    if mv.numel() != cv.cols() {
        return Err(Error::shape("pack", cv.shape(), mv.shape()));
    }
    let mask_row = mask.reshape(&[1, cv.cols()])?;
    let table = Var::concat_rows(&[*cells, mask_row])?;
    Ok(PackedSequences {
        tokens: table.gather_rows(&layout.slot_src)?,
        layout,
    })
}

/// Cell states read back from occupied slots.
pub fn unpack<'t, F: Float>(packed: &PackedSequences<'_, 't, F>) -> Result<Var<'t, F>> {
    packed.tokens.gather_rows(&packed.layout.slot_of_cell)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PeKind {
    SineCosine,
    Time2Vec,
    Identity,
    Linear,
}

impl PeKind {
    pub const ALL: [PeKind; 4] = [PeKind::SineCosine, PeKind::Time2Vec, PeKind::Identity, PeKind::Linear];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeInput {
    PatchIndex,
    EdgeIndex,
    EdgeTime,
}

impl PeInput {
    pub const ALL: [PeInput; 3] = [PeInput::PatchIndex, PeInput::EdgeIndex, PeInput::EdgeTime];
}

/// Maps a scalar position to a `D`-vector.
#[derive(Debug, Clone, Copy)]
pub struct PositionalEncoder {
    pub kind: PeKind,
    pub input: PeInput,
    pub dim: usize,
    w: Option<ParamId>,
    b: Option<ParamId>,
}

impl PositionalEncoder {
    pub fn new<F: Float>(
        store: &mut ParamStore<F>,
        rng: &mut Rng,
        kind: PeKind,
        input: PeInput,
        dim: usize,
    ) -> Result<Self> {
        if kind == PeKind::SineCosine && dim % 2 != 0 {
            return Err(Error::Config(format!("sine-cosine encoding needs an even width, got {dim}")));
        }
        let (w, b) = match kind {
            PeKind::SineCosine | PeKind::Identity => (None, None),
            PeKind::Time2Vec | PeKind::Linear => (
                Some(store.uniform("pe.w", rng, &[1, dim], 1.0)),
                Some(store.uniform("pe.b", rng, &[dim], 1.0)),
            ),
        };
        Ok(PositionalEncoder { kind, input, dim, w, b })
    }

    /// `[pos.len(), D]` encodings.
    pub fn encode<'t, F: Float>(&self, p: &Bound<'t, F>, tape: &'t Tape<F>, pos: &[f64]) -> Result<Var<'t, F>> {
        let (n, d) = (pos.len(), self.dim);
        match self.kind {
            PeKind::SineCosine => {
                let mut data = Vec::with_capacity(n * d);
                for &x in pos {
                    data.extend(sinusoid(x, d).into_iter().map(F::of));
                }
                Ok(tape.constant(Tensor::new(&[n, d], data)?))
            }
            PeKind::Identity => {
                let data = pos.iter().flat_map(|&x| std::iter::repeat_n(F::of(x), d)).collect();
                Ok(tape.constant(Tensor::new(&[n, d], data)?))
            }
            PeKind::Linear | PeKind::Time2Vec => {
                let (w, b) = (self.w.expect("learned"), self.b.expect("learned"));
                let col = tape.constant(Tensor::from_f64(&[n, 1], pos)?);
                let z = col.matmul(&p[w])?.add_row(&p[b])?;
                if self.kind == PeKind::Linear {
                    return Ok(z);
                }
                // First component linear, the rest periodic.
                let mut first = vec![F::zero(); n * d];
                let mut rest = vec![F::one(); n * d];
                for r in 0..n {
                    first[r * d] = F::one();
                    rest[r * d] = F::zero();
                }
                let first = tape.constant(Tensor::new(&[n, d], first)?);
                let rest = tape.constant(Tensor::new(&[n, d], rest)?);
                z.mul(&first)?.add(&z.sin().mul(&rest)?)
            }
        }
    }
}

/// Adds positional encodings at occupied slots; empty slots are untouched.
pub fn encode_positions<'a, 't, F: Float>(
    packed: &PackedSequences<'a, 't, F>,
    pe: &PositionalEncoder,
    p: &Bound<'t, F>,
    tape: &'t Tape<F>,
) -> Result<PackedSequences<'a, 't, F>> {
    let layout = packed.layout;
    let d = packed.dim();
    if pe.dim != d {
        return Err(Error::Shape(format!("positional width {} for tokens of width {d}", pe.dim)));
    }
    let cells = pe.encode(p, tape, &layout.positions(pe.input))?;
    let zero = tape.constant(Tensor::zeros(&[1, d]));
    let slots = Var::concat_rows(&[cells, zero])?.gather_rows(&layout.slot_src)?;
    Ok(PackedSequences {
        tokens: packed.tokens.add(&slots)?,
        layout,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReadoutMode {
    Last,
    Mean,
    Max,
}

/// `[N, D]` pooling over each row's occupied slots; rows with none are zero.
pub fn readout<'t, F: Float>(packed: &PackedSequences<'_, 't, F>, mode: ReadoutMode) -> Result<Var<'t, F>> {
    let layout = packed.layout;
    let (n, m, d) = (layout.num_nodes(), layout.num_patches(), packed.dim());
    let occ = layout.occupancy();
    let tape = packed.tokens.tape;
    match mode {
        ReadoutMode::Last => {
            let idx: Vec<usize> = (0..n)
                .map(|v| (0..m).rev().find(|&s| occ[v * m + s]).map_or(n * m, |s| v * m + s))
                .collect();
            let zero = tape.constant(Tensor::zeros(&[1, d]));
            Var::concat_rows(&[packed.tokens, zero])?.gather_rows(&idx)
        }
        ReadoutMode::Mean | ReadoutMode::Max => {
            let slots: Vec<usize> = (0..n * m).filter(|&s| occ[s]).collect();
            let owner: Vec<usize> = slots.iter().map(|&s| s / m).collect();
            let picked = packed.tokens.gather_rows(&slots)?;
            if mode == ReadoutMode::Max {
                return picked.scatter_max_rows(&owner, n);
            }
            let mut count = vec![0usize; n];
            owner.iter().for_each(|&v| count[v] += 1);
            let inv: Vec<F> = count
                .iter()
                .map(|&c| if c == 0 { F::zero() } else { F::one() / F::of(c as f64) })
                .collect();
            let inv = tape.constant(Tensor::new(&[n], inv)?);
            picked.scatter_add_rows(&owner, n)?.mul_rows(&inv)
        }
    }
}
