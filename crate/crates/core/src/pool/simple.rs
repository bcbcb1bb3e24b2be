use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Scalar;

/// Temporal global average pooling: the mean of the `T` rows.
pub fn tgap<T: Scalar>(g: &mut Graph<T>, features: Var) -> Result<Var> {
    check_matrix(g, features, "tgap")?;
    g.mean_axis(features, 0)
}

/// Rows concatenated in temporal order into a `[T·D]` vector.
pub fn concat_pool<T: Scalar>(g: &mut Graph<T>, features: Var) -> Result<Var> {
    let (t, d) = check_matrix(g, features, "concat_pool")?;
    g.reshape(features, [t * d])
}

/// Non-overlapping window mean over blocks of `factor` consecutive rows.
pub fn temporal_downsample<T: Scalar>(g: &mut Graph<T>, features: Var, factor: usize) -> Result<Var> {
    let (t, d) = check_matrix(g, features, "temporal_downsample")?;
    if factor == 0 || t % factor != 0 {
        return Err(Error::config(format!(
            "temporal_downsample: factor {factor} does not divide length {t}"
        )));
    }
    if factor == 1 {
        return Ok(features);
    }
    let blocks = g.reshape(features, [t / factor, factor, d])?;
    g.mean_axis(blocks, 1)
}

/// Largest hidden width `w` of a concat → FC → classifier head whose
/// parameter count `(T·D)·w + w + w·C + C` stays within `target`.
pub fn fc_width_for_budget(target: u64, t: usize, d: usize, num_classes: usize) -> Result<usize> {
    let c = num_classes as u64;
    let per_unit = (t * d) as u64 + 1 + c;
    let w = target.saturating_sub(c) / per_unit;
    if w == 0 {
        return Err(Error::config(format!(
            "parameter budget {target} cannot fit one hidden unit (needs {})",
            per_unit + c
        )));
    }
    Ok(w as usize)
}

fn check_matrix<T: Scalar>(g: &Graph<T>, x: Var, op: &'static str) -> Result<(usize, usize)> {
    match *g.shape(x) {
        [t, d] => Ok((t, d)),
        ref other => Err(Error::dim(op, other, &[])),
    }
}
