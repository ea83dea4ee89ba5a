//! Central finite-difference oracle for autodiff gradients.

use super::{no_grad, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Max relative error per parameter tensor, in input order.
    pub per_param: Vec<f64>,
    pub max_rel_error: f64,
    /// Number of scalar entries that were perturbed.
    pub entries: usize,
    /// Objective value at the unperturbed point.
    pub objective: f64,
    /// One record per perturbed entry.
    pub details: Vec<EntryCheck>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntryCheck {
    pub param: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// Rounding budget, in ulps of the objective, for the two evaluations
/// behind one central difference.
pub const ROUNDOFF_ULPS: f64 = 16.0;

impl GradCheckReport {
    /// Smallest gradient error central differences with step `h` can
    /// resolve: `ROUNDOFF_ULPS · ε · max(|f|, 1) / h`.
    pub fn resolution(&self, h: f64) -> f64 {
        ROUNDOFF_ULPS * f64::EPSILON * self.objective.abs().max(1.0) / h
    }

    /// Entries that fail the relative tolerance by more than the
    /// finite-difference resolution.
    pub fn unresolved(&self, h: f64, tolerance: f64) -> Vec<EntryCheck> {
        let res = self.resolution(h);
        self.details
            .iter()
            .filter(|e| e.rel_error >= tolerance && (e.analytic - e.numeric).abs() > res)
            .copied()
            .collect()
    }
}

/// Max relative error between autodiff and central differences over all
/// parameter entries. See [`finite_difference_report`].
pub fn finite_difference_check<F>(f: F, params: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    finite_difference_report(f, params, h).map(|r| r.max_rel_error)
}

/// Compares the autodiff gradient of `f` at `params` with
/// `(f(θ+h) − f(θ−h)) / 2h` for every entry. Relative error uses the
/// denominator `max(|a|, |b|, 1e-8)`.
pub fn finite_difference_report<F>(f: F, params: &[Tensor], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let leaves: Vec<Tensor> = params.iter().map(|p| p.to_leaf(true)).collect();
    let loss = f(&leaves)?;
    let value = loss.item()?;
    if !value.is_finite() {
        return Err(Error::Numerical(format!("objective is not finite: {value}")));
    }
    loss.backward()?;

    let eval = |set: &[Tensor]| -> Result<f64> {
        let v = no_grad(|| f(set))?.item()?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Numerical(format!("objective is not finite under perturbation: {v}")))
        }
    };

    let mut per_param = Vec::with_capacity(params.len());
    let mut details = Vec::new();
    for (i, leaf) in leaves.iter().enumerate() {
        let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; leaf.numel()]);
        let mut worst: f64 = 0.0;
        let mut values = leaf.to_vec();
        for j in 0..values.len() {
            let original = values[j];
            let mut perturbed = |delta: f64| -> Result<f64> {
                values[j] = original + delta;
                let mut set: Vec<Tensor> = leaves.iter().map(|t| t.detach()).collect();
                set[i] = Tensor::new(leaf.shape(), values.clone())?;
                eval(&set)
            };
            let plus = perturbed(h)?;
            let minus = perturbed(-h)?;
            values[j] = original;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[j];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let rel_error = (a - numeric).abs() / denom;
            worst = worst.max(rel_error);
            details.push(EntryCheck { param: i, index: j, analytic: a, numeric, rel_error });
        }
        per_param.push(worst);
    }
    let max_rel_error = per_param.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        per_param,
        max_rel_error,
        entries: details.len(),
        objective: value,
        details,
    })
}
