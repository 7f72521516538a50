//! Central finite-difference verification of analytic gradients.

use super::layers::Param;
use crate::error::{Error, Result};

/// Elements checked per parameter before switching to a strided subsample.
pub const FULL_CHECK_LIMIT: usize = 10_000;

/// Relative errors are measured against `max(|analytic|, |numeric|, floor)`.
pub const RELATIVE_FLOOR: f64 = 1e-8;

/// A scalar, differentiable function of some parameters.
pub trait Objective {
    fn params_mut(&mut self) -> Vec<&mut Param>;

    /// Forward pass only.
    fn loss(&mut self) -> Result<f64>;

    /// Forward and backward; leaves the gradient in every `Param::grad`.
    fn loss_and_grad(&mut self) -> Result<f64>;

    /// True when repeated evaluation is not reproducible (active dropout).
    fn is_stochastic(&self) -> bool {
        false
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
    /// `name[flat index]` of the worst element.
    pub worst: Option<String>,
    pub elements_checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
    (analytic - numeric).abs() / scale
}

/// Compares every parameter element's analytic gradient with
/// `(f(w + eps) - f(w - eps)) / 2 eps`.
pub fn grad_check(objective: &mut dyn Objective, epsilon: f64) -> Result<GradCheckReport> {
    if objective.is_stochastic() {
        return Err(Error::InvalidState(
            "gradient check needs a deterministic objective; disable dropout".into(),
        ));
    }
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    for p in objective.params_mut() {
        p.zero_grad();
    }
    objective.loss_and_grad()?;
    let analytic: Vec<Vec<f64>> = objective
        .params_mut()
        .iter()
        .map(|p| p.grad.data().to_vec())
        .collect();

    let mut report = GradCheckReport::default();
    for (pi, grads) in analytic.iter().enumerate() {
        let stride = grads.len().div_ceil(FULL_CHECK_LIMIT).max(1);
        for idx in (0..grads.len()).step_by(stride) {
            let original = objective.params_mut()[pi].value.data()[idx];
            objective.params_mut()[pi].value.data_mut()[idx] = original + epsilon;
            let plus = objective.loss()?;
            objective.params_mut()[pi].value.data_mut()[idx] = original - epsilon;
            let minus = objective.loss()?;
            objective.params_mut()[pi].value.data_mut()[idx] = original;

            let numeric = (plus - minus) / (2.0 * epsilon);
            let rel = relative_error(grads[idx], numeric);
            report.elements_checked += 1;
            report.max_absolute_error = report.max_absolute_error.max((grads[idx] - numeric).abs());
            if report.worst.is_none() || rel > report.max_relative_error {
                report.max_relative_error = rel;
                let name = objective.params_mut()[pi].name.clone();
                report.worst = Some(format!("{name}[{idx}]"));
            }
        }
    }
    Ok(report)
}
