use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Armijo sufficient-increase constant.
const ARMIJO_C: f64 = 1e-4;
/// Smallest step tried before the line search gives up.
const MIN_STEP: f64 = 1e-20;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaximizeOptions {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for MaximizeOptions {
    fn default() -> Self {
        MaximizeOptions { max_iters: 500, tol: 1e-6 }
    }
}

/// Optimisation summary attached to fitted models.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl From<&Maximum> for FitReport {
    fn from(m: &Maximum) -> Self {
        FitReport { trace: m.trace.clone(), iterations: m.iterations, converged: m.converged }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Maximum {
    pub x: Vec<f64>,
    pub value: f64,
    /// Objective at the start point followed by the value after every
    /// accepted step; non-decreasing.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Gradient ascent with a backtracking (halving) Armijo line search.
///
/// `objective` returns the value and gradient at a point; a non-finite
/// value marks the point as infeasible and makes the line search back off.
/// Stops once an accepted step improves the objective by less than `tol`,
/// when the line search cannot find an ascent step, or after `max_iters`
/// accepted steps.
pub fn maximize<F>(mut objective: F, x0: &[f64], options: &MaximizeOptions) -> Result<Maximum>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let mut x = x0.to_vec();
    let (mut value, mut grad) = objective(&x);
    if !value.is_finite() || grad.len() != x.len() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteObjective);
    }
    let mut trace = alloc::vec![value];
    let mut step = {
        let norm = libm::sqrt(grad.iter().map(|g| g * g).sum::<f64>());
        if norm > 1.0 { 1.0 / norm } else { 1.0 }
    };
    let mut iterations = 0;
    let mut converged = false;

    while iterations < options.max_iters {
        let gnorm2: f64 = grad.iter().map(|g| g * g).sum();
        if gnorm2 == 0.0 {
            converged = true;
            break;
        }
        let accepted = loop {
            let candidate: Vec<f64> = x.iter().zip(&grad).map(|(xi, gi)| xi + step * gi).collect();
            let (v, g) = objective(&candidate);
            let finite = v.is_finite() && g.len() == x.len() && g.iter().all(|gi| gi.is_finite());
            if finite && v >= value + ARMIJO_C * step * gnorm2 {
                break Some((candidate, v, g));
            }
            step *= 0.5;
            if step < MIN_STEP {
                break None;
            }
        };
        let Some((candidate, v, g)) = accepted else {
            converged = true;
            break;
        };
        let delta = v - value;
        x = candidate;
        value = v;
        grad = g;
        trace.push(value);
        iterations += 1;
        step *= 2.0;
        if delta.abs() < options.tol {
            converged = true;
            break;
        }
    }
    Ok(Maximum { x, value, trace, iterations, converged })
}
