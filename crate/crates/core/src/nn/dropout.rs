use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::{Scalar, Tensor};

/// Inverted dropout settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutSpec {
    /// Probability of zeroing each element, in `[0, 1)`.
    pub p: f64,
    pub training: bool,
    pub seed: u64,
}

fn check_p(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::config(format!(
            "dropout probability must lie in [0, 1), got {p}"
        )));
    }
    Ok(())
}

fn apply<T: Scalar, R: Rng + ?Sized>(g: &mut Graph<T>, x: Var, p: f64, rng: &mut R) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let keep = T::from_f64(1.0 / (1.0 - p));
    let n: usize = shape.iter().product();
    let mask: Vec<T> = (0..n)
        .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
        .collect();
    g.mark_stochastic();
    g.mul_const(x, Tensor::new(shape, mask)?)
}

/// Standalone dropout with its own seeded stream.
///
/// Training mode zeroes each element with probability `p` and scales the
/// survivors by `1 / (1 - p)`; evaluation mode is the identity.
pub fn dropout<T: Scalar>(g: &mut Graph<T>, x: Var, spec: &DropoutSpec) -> Result<Var> {
    check_p(spec.p)?;
    if !spec.training || spec.p == 0.0 {
        return Ok(x);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    apply(g, x, spec.p, &mut rng)
}

/// Dropout driven by the graph's own mode and random stream.
pub fn graph_dropout<T: Scalar>(g: &mut Graph<T>, x: Var, p: f64) -> Result<Var> {
    check_p(p)?;
    if !g.is_training() || p == 0.0 {
        return Ok(x);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(g.rng().random());
    apply(g, x, p, &mut rng)
}
