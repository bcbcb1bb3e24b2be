//! Central finite-difference validation of analytic gradients.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};

/// Outcome of one [`grad_check`] run.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|a - n| / max(|a|, |n|, 1e-8)` over all checked scalars.
    pub max_rel_error: f64,
    /// Parameter name and flat index where the worst error occurred.
    pub worst: Option<(String, usize)>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub checked: usize,
}

impl GradCheckReport {
    fn merge(&mut self, other: GradCheckReport) {
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
            self.analytic_at_worst = other.analytic_at_worst;
            self.numeric_at_worst = other.numeric_at_worst;
        }
        self.checked += other.checked;
    }

    pub fn empty() -> Self {
        Self {
            max_rel_error: 0.0,
            worst: None,
            analytic_at_worst: 0.0,
            numeric_at_worst: 0.0,
            checked: 0,
        }
    }

    /// Combine reports, keeping the worst error.
    pub fn combine(reports: impl IntoIterator<Item = GradCheckReport>) -> Self {
        let mut acc = Self::empty();
        for r in reports {
            acc.merge(r);
        }
        acc
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

/// Compare reverse-mode gradients of the scalar built by `f` against central
/// differences `(f(p+eps) - f(p-eps)) / (2 eps)` for every trainable scalar.
///
/// `f` receives a fresh evaluation-mode graph over a private copy of `store`.
/// A loss whose construction draws random numbers is rejected.
pub fn grad_check<F>(store: &ParamStore<f64>, eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>) -> Result<Var>,
{
    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new(s);
        let loss = f(&mut g)?;
        Ok(g.value(loss).data()[0])
    };

    let analytic = {
        let mut g = Graph::new(store);
        let loss = f(&mut g)?;
        if g.is_stochastic() {
            return Err(Error::contract(
                "grad_check needs a deterministic loss; disable dropout/masking",
            ));
        }
        g.backward(loss)?
    };

    let mut work = store.clone();
    let mut report = GradCheckReport::empty();
    let ids: Vec<ParamId> = store.ids().filter(|&id| store.requires_grad(id)).collect();
    for id in ids {
        let n = store.get(id).numel();
        for k in 0..n {
            let orig = work.get(id).data()[k];
            work.get_mut(id).data_mut()[k] = orig + eps;
            let plus = eval(&work)?;
            work.get_mut(id).data_mut()[k] = orig - eps;
            let minus = eval(&work)?;
            work.get_mut(id).data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.get(id).map_or(0.0, |g| g.data()[k]);
            let err = relative_error(a, numeric);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((store.name(id).to_string(), k));
                report.analytic_at_worst = a;
                report.numeric_at_worst = numeric;
            }
        }
    }
    Ok(report)
}
