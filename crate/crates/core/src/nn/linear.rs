use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{Init, ParamId, ParamStore};
use crate::tensor::Scalar;

/// How to draw the weights of a [`Linear`] layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LinearInit {
    /// Weights and bias uniform on `±1/sqrt(in)`.
    FanIn,
    /// Weights normal with the given std, zero bias.
    Normal(f64),
    Zeros,
}

/// Affine map `x Wᵀ + b` with `W: [out × in]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        init: LinearInit,
        rng: &mut R,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::config(format!(
                "{name}: linear extents must be positive ({in_dim} -> {out_dim})"
            )));
        }
        let (w_init, b_init) = match init {
            LinearInit::FanIn => {
                let bound = 1.0 / (in_dim as f64).sqrt();
                (Init::Uniform { bound }, Init::Uniform { bound })
            }
            LinearInit::Normal(std) => (Init::Normal { std }, Init::Zeros),
            LinearInit::Zeros => (Init::Zeros, Init::Zeros),
        };
        let weight = store.insert(format!("{name}.weight"), w_init.sample(&[out_dim, in_dim], rng));
        let bias = store.insert(format!("{name}.bias"), b_init.sample(&[out_dim], rng));
        Ok(Self {
            weight,
            bias: Some(bias),
            in_dim,
            out_dim,
        })
    }

    pub fn num_params(&self) -> u64 {
        let b = if self.bias.is_some() { self.out_dim } else { 0 };
        (self.in_dim * self.out_dim + b) as u64
    }

    /// `x: [in]` maps to `[out]`; `x: [m × in]` maps to `[m × out]`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        let vector = shape.len() == 1;
        if shape.last() != Some(&self.in_dim) || shape.len() > 2 {
            return Err(Error::dim("linear", &shape, &[self.out_dim, self.in_dim]));
        }
        let x2 = if vector { g.reshape(x, [1, self.in_dim])? } else { x };
        let w = g.param(self.weight);
        let mut y = g.matmul_t(x2, w)?;
        if let Some(b) = self.bias {
            let b = g.param(b);
            y = g.add_row(y, b)?;
        }
        if vector {
            y = g.reshape(y, [self.out_dim])?;
        }
        Ok(y)
    }
}
