//! Adam, soft target updates, and a finite-difference gradient checker.

use serde::{Deserialize, Serialize};

use crate::error::NetError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Self {
            first_moment: vec![0.0; num_params],
            second_moment: vec![0.0; num_params],
            step_count: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam step. A non-finite gradient skips the step and is reported.
pub fn adam_step(params: &mut [f64], grads: &[f64], opt: &mut AdamState) -> Result<(), NetError> {
    if grads.len() != params.len() {
        return Err(NetError::ShapeMismatch {
            expected: params.len(),
            got: grads.len(),
        });
    }
    if opt.first_moment.len() != params.len() {
        return Err(NetError::ShapeMismatch {
            expected: params.len(),
            got: opt.first_moment.len(),
        });
    }
    if let Some(bad) = grads.iter().position(|g| !g.is_finite()) {
        return Err(NetError::NonFiniteGradient(bad));
    }
    opt.step_count += 1;
    let t = opt.step_count as i32;
    let (b1, b2) = (opt.beta1, opt.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2_sqrt = (1.0 - b2.powi(t)).sqrt();
    let step = opt.lr / c1;
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(opt.first_moment.iter_mut())
        .zip(opt.second_moment.iter_mut())
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        *p -= step * *m / (v.sqrt() / c2_sqrt + opt.eps);
    }
    Ok(())
}

/// `target <- rate * online + (1 - rate) * target`.
pub fn soft_update(target: &mut [f64], online: &[f64], rate: f64) -> Result<(), NetError> {
    if target.len() != online.len() {
        return Err(NetError::ShapeMismatch {
            expected: target.len(),
            got: online.len(),
        });
    }
    if rate == 1.0 {
        target.copy_from_slice(online);
        return Ok(());
    }
    for (t, &o) in target.iter_mut().zip(online) {
        *t = rate * o + (1.0 - rate) * *t;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    pub checked: usize,
}

/// Compare `analytic` against central differences of `loss` at the given indices.
///
/// The relative error of each entry is `|a - fd| / max(|a|, |fd|, floor)` with
/// `floor = 1e-7 * max_j max(|a_j|, |fd_j|)`, so entries far below the
/// gradient's overall scale are judged on an absolute basis.
pub fn grad_check<F>(params: &[f64], analytic: &[f64], indices: &[usize], h: f64, mut loss: F) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    let mut work = params.to_vec();
    let mut pairs = Vec::with_capacity(indices.len());
    for &idx in indices {
        let orig = work[idx];
        work[idx] = orig + h;
        let up = loss(&work);
        work[idx] = orig - h;
        let down = loss(&work);
        work[idx] = orig;
        pairs.push((idx, analytic[idx], (up - down) / (2.0 * h)));
    }
    let scale = pairs
        .iter()
        .map(|&(_, a, f)| a.abs().max(f.abs()))
        .fold(0.0, f64::max);
    let floor = 1e-7 * scale;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: None,
        checked: pairs.len(),
    };
    for (idx, a, f) in pairs {
        let denom = a.abs().max(f.abs()).max(floor);
        let err = if denom == 0.0 { 0.0 } else { (a - f).abs() / denom };
        if err > report.max_rel_error || !err.is_finite() {
            report.max_rel_error = err;
            report.worst_index = Some(idx);
        }
    }
    report
}
