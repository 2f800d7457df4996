//! Named parameter storage and the small building blocks shared by the
//! encoder and decoders.

use std::ops::Index;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{fan_in_uniform, uniform, Float, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, named collection of parameter tensors. Insertion order is the
/// canonical order for checkpoints and optimizer state.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<F> {
    names: Vec<String>,
    values: Vec<Tensor<F>>,
}

impl<F: Float> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// `fan_in × fan_out` weight drawn from `U(±1/√fan_in)`.
    pub fn weight(&mut self, name: impl Into<String>, rng: &mut Rng, fan_in: usize, fan_out: usize) -> ParamId {
        self.add(name, fan_in_uniform(rng, &[fan_in, fan_out]))
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn ones(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::full(shape, F::one()))
    }

    pub fn uniform(&mut self, name: impl Into<String>, rng: &mut Rng, shape: &[usize], bound: f64) -> ParamId {
        self.add(name, uniform(rng, shape, bound))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.values[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    pub fn entries(&self) -> Vec<(&str, &Tensor<F>)> {
        self.names.iter().map(String::as_str).zip(&self.values).collect()
    }

    /// Replaces every value from `(name, tensor)` pairs. Names and shapes
    /// must match this store exactly.
    pub fn load(&mut self, tensors: Vec<(String, Tensor<F>)>) -> Result<()> {
        if tensors.len() != self.values.len() {
            return Err(Error::Version(format!(
                "checkpoint has {} tensors, model expects {}",
                tensors.len(),
                self.values.len()
            )));
        }
        for (i, (name, t)) in tensors.into_iter().enumerate() {
            if name != self.names[i] || t.shape() != self.values[i].shape() {
                return Err(Error::Version(format!(
                    "checkpoint tensor {name} {:?} does not match model tensor {} {:?}",
                    t.shape(),
                    self.names[i],
                    self.values[i].shape()
                )));
            }
            self.values[i] = t;
        }
        Ok(())
    }

    /// Places every parameter on `tape`; those for which `trainable` is
    /// false become constants.
    pub fn bind<'t>(&self, tape: &'t Tape<F>, trainable: &dyn Fn(ParamId) -> bool) -> Bound<'t, F> {
        let vars = self
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                if trainable(ParamId(i)) {
                    tape.param(v.clone())
                } else {
                    tape.constant(v.clone())
                }
            })
            .collect();
        Bound { vars }
    }

    pub fn bind_all<'t>(&self, tape: &'t Tape<F>) -> Bound<'t, F> {
        self.bind(tape, &|_| true)
    }
}

/// Parameters of a [`ParamStore`] placed on one tape.
pub struct Bound<'t, F> {
    vars: Vec<Var<'t, F>>,
}

impl<'t, F> Index<ParamId> for Bound<'t, F> {
    type Output = Var<'t, F>;

    fn index(&self, id: ParamId) -> &Var<'t, F> {
        &self.vars[id.0]
    }
}

impl<'t, F> Bound<'t, F> {
    pub fn vars(&self) -> &[Var<'t, F>] {
        &self.vars
    }
}

/// `x · W (+ b)`
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new<F: Float>(
        store: &mut ParamStore<F>,
        rng: &mut Rng,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
    ) -> Self {
        let w = store.weight(format!("{name}.w"), rng, fan_in, fan_out);
        let b = bias.then(|| store.zeros(format!("{name}.b"), &[fan_out]));
        Linear { w, b }
    }

    pub fn forward<'t, F: Float>(&self, p: &Bound<'t, F>, x: &Var<'t, F>) -> Result<Var<'t, F>> {
        let y = x.matmul(&p[self.w])?;
        match self.b {
            Some(b) => y.add_row(&p[b]),
            None => Ok(y),
        }
    }
}

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<F: Float>(store: &mut ParamStore<F>, name: &str, dim: usize) -> Self {
        LayerNorm {
            gain: store.ones(format!("{name}.gain"), &[dim]),
            bias: store.zeros(format!("{name}.bias"), &[dim]),
        }
    }

    pub fn forward<'t, F: Float>(&self, p: &Bound<'t, F>, x: &Var<'t, F>) -> Result<Var<'t, F>> {
        x.layer_norm(&p[self.gain], &p[self.bias], LN_EPS)
    }
}

/// Two-layer perceptron `W₂ · gelu(W₁ x + b₁) + b₂`.
#[derive(Debug, Clone, Copy)]
pub struct Mlp {
    pub l1: Linear,
    pub l2: Linear,
}

impl Mlp {
    pub fn new<F: Float>(
        store: &mut ParamStore<F>,
        rng: &mut Rng,
        name: &str,
        d_in: usize,
        d_hidden: usize,
        d_out: usize,
    ) -> Self {
        Mlp {
            l1: Linear::new(store, rng, &format!("{name}.0"), d_in, d_hidden, true),
            l2: Linear::new(store, rng, &format!("{name}.1"), d_hidden, d_out, true),
        }
    }

    pub fn forward<'t, F: Float>(&self, p: &Bound<'t, F>, x: &Var<'t, F>) -> Result<Var<'t, F>> {
        let h = self.l1.forward(p, x)?.gelu();
        self.l2.forward(p, &h)
    }
}
