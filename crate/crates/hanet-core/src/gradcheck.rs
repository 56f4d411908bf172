//! Central finite-difference verification of analytic gradients.
//!
//! The loss closures passed in must be pure forward evaluations: same
//! parameters in, same scalar out, no state updates (run batch norm with
//! stat updates suppressed, see `Mode::TrainFrozen`).

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    /// Central-difference step.
    pub step: f64,
    /// Relative tolerance against max(|numeric|, |analytic|).
    pub rel_tol: f64,
    /// Absolute floor below which disagreement counts as finite-difference
    /// noise rather than a wrong gradient.
    pub abs_tol: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck { step: 1e-5, rel_tol: 1e-4, abs_tol: 1e-7 }
    }
}

impl GradCheck {
    pub fn agree(&self, numeric: f64, analytic: f64) -> bool {
        (numeric - analytic).abs() <= self.abs_tol + self.rel_tol * numeric.abs().max(analytic.abs())
    }
}

/// |n - a| / max(|n|, |a|, floor); reported for diagnostics.
pub fn relative_error(numeric: f64, analytic: f64) -> f64 {
    (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-12)
}

/// d(loss)/d(param[index]) by central differences. Restores the original
/// value afterwards.
pub fn fd_param_grad(
    store: &mut ParamStore,
    id: ParamId,
    index: usize,
    step: f64,
    mut loss: impl FnMut(&mut ParamStore) -> Result<f64>,
) -> Result<f64> {
    let orig = store.value(id).data[index];
    store.value_mut(id).data[index] = orig + step;
    let plus = loss(store)?;
    store.value_mut(id).data[index] = orig - step;
    let minus = loss(store)?;
    store.value_mut(id).data[index] = orig;
    Ok((plus - minus) / (2.0 * step))
}

/// d(loss)/d(t[index]) by central differences for a plain input tensor.
pub fn fd_tensor_grad(
    t: &mut Tensor,
    index: usize,
    step: f64,
    mut loss: impl FnMut(&Tensor) -> Result<f64>,
) -> Result<f64> {
    let orig = t.data[index];
    t.data[index] = orig + step;
    let plus = loss(t)?;
    t.data[index] = orig - step;
    let minus = loss(t)?;
    t.data[index] = orig;
    Ok((plus - minus) / (2.0 * step))
}

#[derive(Debug)]
pub struct GradReport {
    /// Scalar entries compared.
    pub checked: usize,
    /// Largest relative error seen (diagnostic; failures list is the verdict).
    pub worst_rel: f64,
    /// "name[i]: fd=…, analytic=…" for every disagreement.
    pub failures: Vec<String>,
}

impl GradReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Compares the analytic gradients already accumulated in `store` against
/// finite differences of `loss`, sampling up to `samples_per_param` entries
/// of every trainable parameter.
pub fn check_store_grads(
    cfg: &GradCheck,
    store: &mut ParamStore,
    samples_per_param: usize,
    rng: &mut ChaCha8Rng,
    mut loss: impl FnMut(&mut ParamStore) -> Result<f64>,
) -> Result<GradReport> {
    let ids: Vec<ParamId> = store
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(id, _)| id)
        .collect();
    let mut report = GradReport { checked: 0, worst_rel: 0.0, failures: Vec::new() };
    for id in ids {
        let numel = store.value(id).numel();
        let name = store.get(id).name.clone();
        let analytic_all = store
            .get(id)
            .grad
            .as_ref()
            .map(|g| g.data.clone())
            .unwrap_or_else(|| vec![0.0; numel]);
        let indices: Vec<usize> = if numel <= samples_per_param {
            (0..numel).collect()
        } else {
            (0..samples_per_param).map(|_| rng.random_range(0..numel)).collect()
        };
        for idx in indices {
            let numeric = fd_param_grad(store, id, idx, cfg.step, &mut loss)?;
            let analytic = analytic_all[idx];
            report.checked += 1;
            report.worst_rel = report.worst_rel.max(relative_error(numeric, analytic));
            if !cfg.agree(numeric, analytic) {
                report.failures.push(format!(
                    "{name}[{idx}]: fd={numeric:.9e}, analytic={analytic:.9e}, rel={:.3e}",
                    relative_error(numeric, analytic)
                ));
            }
        }
    }
    Ok(report)
}
