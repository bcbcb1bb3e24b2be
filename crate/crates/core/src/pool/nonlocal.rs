use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{Linear, LinearInit};
use crate::params::ParamStore;
use crate::tensor::Scalar;

/// Embedded-Gaussian non-local block over the temporal axis,
/// `x + W_o · softmax(θ(x) φ(x)ᵀ) g(x)`, with inter-channel width equal to `D`.
#[derive(Debug, Clone)]
pub struct NonlocalBlock {
    pub theta: Linear,
    pub phi: Linear,
    pub g: Linear,
    pub output: Linear,
    pub dim: usize,
}

impl NonlocalBlock {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        init: LinearInit,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            theta: Linear::new(store, &format!("{name}.theta"), dim, dim, init, rng)?,
            phi: Linear::new(store, &format!("{name}.phi"), dim, dim, init, rng)?,
            g: Linear::new(store, &format!("{name}.g"), dim, dim, init, rng)?,
            output: Linear::new(store, &format!("{name}.output"), dim, dim, init, rng)?,
            dim,
        })
    }

    pub fn count(dim: usize) -> u64 {
        let d = dim as u64;
        4 * (d * d + d)
    }

    pub fn num_params(&self) -> u64 {
        Self::count(self.dim)
    }

    /// Attention weights `softmax_j(θ(x_i)ᵀ φ(x_j))`, `[T × T]`.
    pub fn weights<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        self.check(g, x)?;
        let th = self.theta.forward(g, x)?;
        let ph = self.phi.forward(g, x)?;
        let s = g.matmul_t(th, ph)?;
        g.softmax(s, 1)
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let w = self.weights(g, x)?;
        let v = self.g.forward(g, x)?;
        let mixed = g.matmul(w, v)?;
        let y = self.output.forward(g, mixed)?;
        g.add(x, y)
    }

    fn check<T: Scalar>(&self, g: &Graph<T>, x: Var) -> Result<()> {
        let s = g.shape(x);
        if s.len() != 2 || s[1] != self.dim {
            return Err(Error::dim("nonlocal_block", s, &[self.dim]));
        }
        Ok(())
    }
}
