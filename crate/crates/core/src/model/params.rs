//! Named parameter storage shared by the optimizer and checkpointing.

use crate::error::{Error, Result};
use crate::tape::{Tape, TensorId};
use rand::Rng;

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Flat list of parameters; creation order is stable and defines the
/// optimizer state layout and checkpoint blob order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> usize {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.params.push(Param {
            name: name.into(),
            shape,
            data,
        });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, idx: usize) -> &Param {
        &self.params[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Param {
        &mut self.params[idx]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Record every parameter as a tape leaf; `ids[i]` is the tensor of
    /// parameter `i`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<Binding> {
        let mut ids = Vec::with_capacity(self.params.len());
        for p in &self.params {
            ids.push(tape.leaf(p.data.clone(), &p.shape, trainable)?);
        }
        Ok(Binding { ids })
    }

    /// Copy gradients out of a tape after backward, in parameter order.
    pub fn collect_grads(&self, tape: &Tape, binding: &Binding) -> Result<Vec<Vec<f64>>> {
        let mut grads = Vec::with_capacity(self.params.len());
        for (i, &id) in binding.ids.iter().enumerate() {
            let g = tape
                .grad(id)
                .ok_or_else(|| Error::Config(format!("parameter {} has no gradient", self.params[i].name)))?;
            grads.push(g.to_vec());
        }
        Ok(grads)
    }
}

/// Tape ids of bound parameters, aligned with `ParamStore` order.
#[derive(Debug, Clone)]
pub struct Binding {
    pub ids: Vec<TensorId>,
}

// ── Initializers ────────────────────────────────────────────────────────

/// Standard normal via Box-Muller, scaled by `std`.
pub fn normal(rng: &mut impl Rng, std: f64, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (2.0 * std::f64::consts::PI * u2).sin_cos();
        out.push(r * c * std);
        if out.len() < n {
            out.push(r * s * std);
        }
    }
    out
}

/// Uniform in `[-bound, bound]` with `bound = 1/sqrt(fan_in)`, the usual
/// default for linear and convolution layers.
pub fn fan_in_uniform(rng: &mut impl Rng, fan_in: usize, n: usize) -> Vec<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
}
