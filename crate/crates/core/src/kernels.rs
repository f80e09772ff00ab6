//! Covariance functions and Gram matrices.
//!
//! Every positive parameter is exposed to optimisers in the log domain:
//! [`KernelSpec::log_params`] / [`KernelSpec::with_log_params`] round-trip a
//! flat vector, and [`KernelSpec::eval_with_grad`] returns derivatives with
//! respect to those log values.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kernel", rename_all = "snake_case")]
pub enum KernelSpec {
    /// `σ² exp(−Σ_d (x_d − x'_d)² / 2ℓ_d²)`, one lengthscale per input dimension.
    SquaredExponential { variance: f64, lengthscales: Vec<f64> },
    /// `σ² exp(−|x − x'| / ℓ)`.
    Matern12 { variance: f64, lengthscale: f64 },
    Constant { variance: f64 },
    /// `σ² exp(−2 sin²(π|x − x'|/p) / ℓ²)`.
    Periodic { variance: f64, lengthscale: f64, period: f64 },
    Sum { terms: Vec<KernelSpec> },
    /// Zero unless the relative-time coordinate (dimension 0) of both inputs
    /// lies in `(0, effective_window]`.
    TimeMarked { inner: Box<KernelSpec>, effective_window: f64 },
    /// Applies `inner` to the listed coordinates only.
    Projected { inner: Box<KernelSpec>, dims: Vec<usize> },
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(name, v))
    }
}

impl KernelSpec {
    pub fn squared_exponential(variance: f64, lengthscales: Vec<f64>) -> Result<Self> {
        let k = KernelSpec::SquaredExponential { variance, lengthscales };
        k.validate()?;
        Ok(k)
    }

    pub fn matern12(variance: f64, lengthscale: f64) -> Result<Self> {
        let k = KernelSpec::Matern12 { variance, lengthscale };
        k.validate()?;
        Ok(k)
    }

    pub fn constant(variance: f64) -> Result<Self> {
        let k = KernelSpec::Constant { variance };
        k.validate()?;
        Ok(k)
    }

    pub fn periodic(variance: f64, lengthscale: f64, period: f64) -> Result<Self> {
        let k = KernelSpec::Periodic { variance, lengthscale, period };
        k.validate()?;
        Ok(k)
    }

    pub fn sum(terms: Vec<KernelSpec>) -> Result<Self> {
        let k = KernelSpec::Sum { terms };
        k.validate()?;
        Ok(k)
    }

    pub fn time_marked(inner: KernelSpec, effective_window: f64) -> Result<Self> {
        let k = KernelSpec::TimeMarked { inner: Box::new(inner), effective_window };
        k.validate()?;
        Ok(k)
    }

    pub fn projected(inner: KernelSpec, dims: Vec<usize>) -> Result<Self> {
        let k = KernelSpec::Projected { inner: Box::new(inner), dims };
        k.validate()?;
        Ok(k)
    }

    /// Checks every construction invariant (positivity, non-empty sums,
    /// consistent dimensionality).
    pub fn validate(&self) -> Result<()> {
        match self {
            KernelSpec::SquaredExponential { variance, lengthscales } => {
                positive("variance", *variance)?;
                if lengthscales.is_empty() {
                    return Err(Error::InvalidInput("squared exponential needs a lengthscale".into()));
                }
                lengthscales.iter().try_for_each(|l| positive("lengthscale", *l))
            }
            KernelSpec::Matern12 { variance, lengthscale } => {
                positive("variance", *variance)?;
                positive("lengthscale", *lengthscale)
            }
            KernelSpec::Constant { variance } => positive("variance", *variance),
            KernelSpec::Periodic { variance, lengthscale, period } => {
                positive("variance", *variance)?;
                positive("lengthscale", *lengthscale)?;
                positive("period", *period)
            }
            KernelSpec::Sum { terms } => {
                if terms.is_empty() {
                    return Err(Error::InvalidInput("sum kernel needs at least one term".into()));
                }
                terms.iter().try_for_each(KernelSpec::validate)?;
                self.input_dim_checked().map(|_| ())
            }
            KernelSpec::TimeMarked { inner, effective_window } => {
                positive("effective_window", *effective_window)?;
                inner.validate()
            }
            KernelSpec::Projected { inner, dims } => {
                if dims.is_empty() {
                    return Err(Error::InvalidInput("projection needs at least one dimension".into()));
                }
                inner.validate()?;
                match inner.input_dim() {
                    Some(d) if d != dims.len() => {
                        Err(Error::DimensionMismatch { expected: d, found: dims.len() })
                    }
                    _ => Ok(()),
                }
            }
        }
    }

    /// Input dimensionality the kernel requires, or `None` if it accepts any.
    pub fn input_dim(&self) -> Option<usize> {
        self.input_dim_checked().ok().flatten()
    }

    fn input_dim_checked(&self) -> Result<Option<usize>> {
        match self {
            KernelSpec::SquaredExponential { lengthscales, .. } => Ok(Some(lengthscales.len())),
            // the exp-sin² form is positive semidefinite on the line only
            KernelSpec::Periodic { .. } => Ok(Some(1)),
            KernelSpec::Matern12 { .. } | KernelSpec::Constant { .. } => Ok(None),
            KernelSpec::Sum { terms } => {
                let mut dim = None;
                for t in terms {
                    if let Some(d) = t.input_dim_checked()? {
                        match dim {
                            Some(prev) if prev != d => {
                                return Err(Error::DimensionMismatch { expected: prev, found: d })
                            }
                            _ => dim = Some(d),
                        }
                    }
                }
                Ok(dim)
            }
            KernelSpec::TimeMarked { inner, .. } => inner.input_dim_checked(),
            // a projection only bounds the dimension from below
            KernelSpec::Projected { .. } => Ok(None),
        }
    }

    fn min_input_dim(&self) -> usize {
        match self {
            KernelSpec::Projected { dims, .. } => dims.iter().max().map_or(0, |m| m + 1),
            KernelSpec::Sum { terms } => terms.iter().map(KernelSpec::min_input_dim).max().unwrap_or(0),
            KernelSpec::TimeMarked { inner, .. } => inner.min_input_dim().max(1),
            other => other.input_dim().unwrap_or(1),
        }
    }

    fn check_inputs(&self, x: &[f64], y: &[f64]) -> Result<()> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch { expected: x.len(), found: y.len() });
        }
        if let Some(d) = self.input_dim() {
            if x.len() != d {
                return Err(Error::DimensionMismatch { expected: d, found: x.len() });
            }
        }
        let min = self.min_input_dim();
        if x.len() < min {
            return Err(Error::DimensionMismatch { expected: min, found: x.len() });
        }
        Ok(())
    }

    /// Evaluates `k(x, x')` after checking dimensions.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_inputs(x, y)?;
        Ok(self.eval_unchecked(x, y))
    }

    /// Evaluates without dimension checks; callers guarantee consistent inputs.
    pub fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            KernelSpec::SquaredExponential { variance, lengthscales } => {
                let r2 = if lengthscales.len() == 1 {
                    let l = lengthscales[0];
                    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b) / (l * l)).sum::<f64>()
                } else {
                    x.iter()
                        .zip(y)
                        .zip(lengthscales)
                        .map(|((a, b), l)| (a - b) * (a - b) / (l * l))
                        .sum::<f64>()
                };
                variance * libm::exp(-0.5 * r2)
            }
            KernelSpec::Matern12 { variance, lengthscale } => {
                variance * libm::exp(-distance(x, y) / lengthscale)
            }
            KernelSpec::Constant { variance } => *variance,
            KernelSpec::Periodic { variance, lengthscale, period } => {
                let s = libm::sin(PI * distance(x, y) / period);
                variance * libm::exp(-2.0 * s * s / (lengthscale * lengthscale))
            }
            KernelSpec::Sum { terms } => terms.iter().map(|t| t.eval_unchecked(x, y)).sum(),
            KernelSpec::TimeMarked { inner, effective_window } => {
                if in_window(x[0], *effective_window) && in_window(y[0], *effective_window) {
                    inner.eval_unchecked(x, y)
                } else {
                    0.0
                }
            }
            KernelSpec::Projected { inner, dims } => {
                let (px, py) = project(dims, x, y);
                inner.eval_unchecked(&px, &py)
            }
        }
    }

    /// Number of log-domain parameters.
    pub fn n_params(&self) -> usize {
        match self {
            KernelSpec::SquaredExponential { lengthscales, .. } => 1 + lengthscales.len(),
            KernelSpec::Matern12 { .. } => 2,
            KernelSpec::Constant { .. } => 1,
            KernelSpec::Periodic { .. } => 3,
            KernelSpec::Sum { terms } => terms.iter().map(KernelSpec::n_params).sum(),
            KernelSpec::TimeMarked { inner, .. } | KernelSpec::Projected { inner, .. } => inner.n_params(),
        }
    }

    /// Parameter names in the order of [`KernelSpec::log_params`]. Sum terms
    /// are prefixed with their index, e.g. `1.period`. The effective window of
    /// a time-marked kernel is structural and not a parameter.
    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.n_params());
        self.push_names("", &mut out);
        out
    }

    fn push_names(&self, prefix: &str, out: &mut Vec<String>) {
        match self {
            KernelSpec::SquaredExponential { lengthscales, .. } => {
                out.push(format!("{prefix}variance"));
                if lengthscales.len() == 1 {
                    out.push(format!("{prefix}lengthscale"));
                } else {
                    for d in 0..lengthscales.len() {
                        out.push(format!("{prefix}lengthscale.{d}"));
                    }
                }
            }
            KernelSpec::Matern12 { .. } => {
                out.push(format!("{prefix}variance"));
                out.push(format!("{prefix}lengthscale"));
            }
            KernelSpec::Constant { .. } => out.push(format!("{prefix}variance")),
            KernelSpec::Periodic { .. } => {
                out.push(format!("{prefix}variance"));
                out.push(format!("{prefix}lengthscale"));
                out.push(format!("{prefix}period"));
            }
            KernelSpec::Sum { terms } => {
                for (i, t) in terms.iter().enumerate() {
                    t.push_names(&format!("{prefix}{i}."), out);
                }
            }
            KernelSpec::TimeMarked { inner, .. } | KernelSpec::Projected { inner, .. } => {
                inner.push_names(prefix, out)
            }
        }
    }

    pub fn log_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        self.push_params(&mut out);
        out.iter_mut().for_each(|v| *v = libm::log(*v));
        out
    }

    fn push_params(&self, out: &mut Vec<f64>) {
        match self {
            KernelSpec::SquaredExponential { variance, lengthscales } => {
                out.push(*variance);
                out.extend(lengthscales.iter().copied());
            }
            KernelSpec::Matern12 { variance, lengthscale } => {
                out.push(*variance);
                out.push(*lengthscale);
            }
            KernelSpec::Constant { variance } => out.push(*variance),
            KernelSpec::Periodic { variance, lengthscale, period } => {
                out.push(*variance);
                out.push(*lengthscale);
                out.push(*period);
            }
            KernelSpec::Sum { terms } => terms.iter().for_each(|t| t.push_params(out)),
            KernelSpec::TimeMarked { inner, .. } | KernelSpec::Projected { inner, .. } => {
                inner.push_params(out)
            }
        }
    }

    /// Copy of `self` with parameters replaced by `exp(log_params)`. Entries
    /// equal to the current log value keep the current value bit-exactly.
    pub fn with_log_params(&self, log_params: &[f64]) -> Result<Self> {
        if log_params.len() != self.n_params() {
            return Err(Error::DimensionMismatch { expected: self.n_params(), found: log_params.len() });
        }
        let mut current = Vec::with_capacity(self.n_params());
        self.push_params(&mut current);
        let mut k = self.clone();
        let mut it = log_params.iter().zip(current).map(|(v, c)| exp_or_keep(*v, c));
        k.assign_params(&mut it);
        k.validate()?;
        Ok(k)
    }

    fn assign_params(&mut self, it: &mut impl Iterator<Item = f64>) {
        match self {
            KernelSpec::SquaredExponential { variance, lengthscales } => {
                *variance = it.next().unwrap();
                lengthscales.iter_mut().for_each(|l| *l = it.next().unwrap());
            }
            KernelSpec::Matern12 { variance, lengthscale } => {
                *variance = it.next().unwrap();
                *lengthscale = it.next().unwrap();
            }
            KernelSpec::Constant { variance } => *variance = it.next().unwrap(),
            KernelSpec::Periodic { variance, lengthscale, period } => {
                *variance = it.next().unwrap();
                *lengthscale = it.next().unwrap();
                *period = it.next().unwrap();
            }
            KernelSpec::Sum { terms } => terms.iter_mut().for_each(|t| t.assign_params(it)),
            KernelSpec::TimeMarked { inner, .. } | KernelSpec::Projected { inner, .. } => {
                inner.assign_params(it)
            }
        }
    }

    /// Kernel value and its gradient with respect to the log parameters.
    pub fn eval_with_grad(&self, x: &[f64], y: &[f64]) -> (f64, Vec<f64>) {
        let mut grad = Vec::with_capacity(self.n_params());
        let v = self.eval_grad_into(x, y, &mut grad);
        (v, grad)
    }

    fn eval_grad_into(&self, x: &[f64], y: &[f64], grad: &mut Vec<f64>) -> f64 {
        match self {
            KernelSpec::SquaredExponential { variance, lengthscales } => {
                let mut scaled = vec![0.0; lengthscales.len()];
                let mut r2 = 0.0;
                for (d, (a, b)) in x.iter().zip(y).enumerate() {
                    let l = if lengthscales.len() == 1 { lengthscales[0] } else { lengthscales[d] };
                    let s = (a - b) * (a - b) / (l * l);
                    r2 += s;
                    if lengthscales.len() == 1 {
                        scaled[0] += s;
                    } else {
                        scaled[d] = s;
                    }
                }
                let k = variance * libm::exp(-0.5 * r2);
                grad.push(k);
                grad.extend(scaled.iter().map(|s| k * s));
                k
            }
            KernelSpec::Matern12 { variance, lengthscale } => {
                let r = distance(x, y) / lengthscale;
                let k = variance * libm::exp(-r);
                grad.push(k);
                grad.push(k * r);
                k
            }
            KernelSpec::Constant { variance } => {
                grad.push(*variance);
                *variance
            }
            KernelSpec::Periodic { variance, lengthscale, period } => {
                let r = distance(x, y);
                let arg = PI * r / period;
                let s = libm::sin(arg);
                let c = libm::cos(arg);
                let l2 = lengthscale * lengthscale;
                let k = variance * libm::exp(-2.0 * s * s / l2);
                grad.push(k);
                grad.push(k * 4.0 * s * s / l2);
                grad.push(k * 4.0 * s * c * arg / l2);
                k
            }
            KernelSpec::Sum { terms } => terms.iter().map(|t| t.eval_grad_into(x, y, grad)).sum(),
            KernelSpec::TimeMarked { inner, effective_window } => {
                if in_window(x[0], *effective_window) && in_window(y[0], *effective_window) {
                    inner.eval_grad_into(x, y, grad)
                } else {
                    grad.extend(core::iter::repeat_n(0.0, inner.n_params()));
                    0.0
                }
            }
            KernelSpec::Projected { inner, dims } => {
                let (px, py) = project(dims, x, y);
                inner.eval_grad_into(&px, &py, grad)
            }
        }
    }

    /// Gram matrix `K[i][j] = k(xs[i], ys[j])`.
    pub fn gram(&self, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<Matrix> {
        for x in xs {
            for y in ys.iter().take(1) {
                self.check_inputs(x, y)?;
            }
        }
        if let Some(x0) = xs.first() {
            for y in ys {
                self.check_inputs(x0, y)?;
            }
        }
        Ok(Matrix::from_fn(xs.len(), ys.len(), |i, j| self.eval_unchecked(&xs[i], &ys[j])))
    }

    /// Symmetric Gram matrix of one input set (evaluates the upper triangle
    /// once and mirrors it).
    pub fn gram_symmetric(&self, xs: &[Vec<f64>]) -> Result<Matrix> {
        if let Some(x0) = xs.first() {
            for x in xs {
                self.check_inputs(x0, x)?;
            }
        }
        let n = xs.len();
        let mut k = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = self.eval_unchecked(&xs[i], &xs[j]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        Ok(k)
    }

    /// The time-marking window, if this kernel is (or wraps) a time-marked kernel.
    pub fn effective_window(&self) -> Option<f64> {
        match self {
            KernelSpec::TimeMarked { effective_window, .. } => Some(*effective_window),
            KernelSpec::Projected { inner, .. } => inner.effective_window(),
            _ => None,
        }
    }
}

/// `exp(log_value)`, or `current` when `log_value` is exactly `ln(current)`.
pub(crate) fn exp_or_keep(log_value: f64, current: f64) -> f64 {
    if log_value == libm::log(current) {
        current
    } else {
        libm::exp(log_value)
    }
}

/// True when a relative time lies in the causal window `(0, window]`.
#[inline]
pub fn in_window(relative_time: f64, window: f64) -> bool {
    relative_time > 0.0 && relative_time <= window
}

fn distance(x: &[f64], y: &[f64]) -> f64 {
    if x.len() == 1 {
        (x[0] - y[0]).abs()
    } else {
        libm::sqrt(x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
    }
}

fn project(dims: &[usize], x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (dims.iter().map(|&d| x[d]).collect(), dims.iter().map(|&d| y[d]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn se(v: f64, l: f64) -> KernelSpec {
        KernelSpec::squared_exponential(v, vec![l]).unwrap()
    }

    #[test]
    fn constant_is_flat() {
        let k = KernelSpec::constant(1.0).unwrap();
        assert_eq!(k.eval(&[0.3], &[-7.0]).unwrap(), 1.0);
    }

    #[test]
    fn squared_exponential_values() {
        let k = se(1.0, 1.0);
        assert_eq!(k.eval(&[0.0], &[0.0]).unwrap(), 1.0);
        assert_abs_diff_eq!(k.eval(&[0.0], &[1.0]).unwrap(), 0.606_530_659_712_633_4, epsilon = 1e-15);
        let g = se(2.0, 1.0).gram(&[vec![0.0]], &[vec![0.0]]).unwrap();
        assert_eq!(g[(0, 0)], 2.0);
    }

    #[test]
    fn gram_two_points() {
        let xs = vec![vec![0.0], vec![1.0]];
        let g = se(1.0, 1.0).gram(&xs, &xs).unwrap();
        let e = (-0.5f64).exp();
        assert_abs_diff_eq!(g[(0, 0)], 1.0);
        assert_abs_diff_eq!(g[(0, 1)], e, epsilon = 1e-15);
        assert_abs_diff_eq!(g[(1, 0)], e, epsilon = 1e-15);
        assert_abs_diff_eq!(g[(1, 1)], 1.0);
    }

    #[test]
    fn time_marked_masks_future_and_stale() {
        let k = KernelSpec::time_marked(se(1.0, 1.0), 3.0).unwrap();
        assert_eq!(k.eval(&[-0.5], &[1.0]).unwrap(), 0.0);
        assert_eq!(k.eval(&[1.0], &[-0.5]).unwrap(), 0.0);
        assert_eq!(k.eval(&[0.0], &[1.0]).unwrap(), 0.0);
        assert_eq!(k.eval(&[3.5], &[1.0]).unwrap(), 0.0);
        assert!(k.eval(&[3.0], &[1.0]).unwrap() > 0.0);
    }

    #[test]
    fn periodic_is_one_dimensional() {
        let k = KernelSpec::periodic(1.0, 1.0, 24.0).unwrap();
        assert_eq!(k.input_dim(), Some(1));
        assert!(k.eval(&[0.0, 1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn periodic_repeats() {
        let k = KernelSpec::periodic(1.5, 0.7, 24.0).unwrap();
        assert_abs_diff_eq!(k.eval(&[1.0], &[25.0]).unwrap(), 1.5, epsilon = 1e-12);
        assert!(k.eval(&[1.0], &[13.0]).unwrap() < 1.5);
    }

    #[test]
    fn construction_rejects_bad_parameters() {
        assert!(KernelSpec::constant(0.0).is_err());
        assert!(KernelSpec::squared_exponential(1.0, vec![-1.0]).is_err());
        assert!(KernelSpec::periodic(1.0, 1.0, 0.0).is_err());
        assert!(KernelSpec::sum(vec![]).is_err());
        assert!(KernelSpec::time_marked(se(1.0, 1.0), 0.0).is_err());
        assert!(KernelSpec::sum(vec![
            KernelSpec::squared_exponential(1.0, vec![1.0, 1.0]).unwrap(),
            KernelSpec::squared_exponential(1.0, vec![1.0, 1.0, 1.0]).unwrap(),
        ])
        .is_err());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let k = KernelSpec::squared_exponential(1.0, vec![1.0, 2.0]).unwrap();
        assert!(matches!(k.eval(&[0.0], &[0.0]), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(se(1.0, 1.0).eval(&[0.0, 1.0], &[0.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn log_params_round_trip_and_names() {
        let k = KernelSpec::sum(vec![
            KernelSpec::constant(2.0).unwrap(),
            KernelSpec::periodic(1.0, 10.0, 24.0).unwrap(),
        ])
        .unwrap();
        assert_eq!(k.param_names(), ["0.variance", "1.variance", "1.lengthscale", "1.period"]);
        let back = k.with_log_params(&k.log_params()).unwrap();
        for (a, b) in back.log_params().iter().zip(k.log_params()) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let kernels = [
            KernelSpec::squared_exponential(0.8, vec![1.3, 0.4]).unwrap(),
            KernelSpec::matern12(1.2, 0.9).unwrap(),
            KernelSpec::projected(KernelSpec::periodic(0.7, 1.1, 5.0).unwrap(), vec![1]).unwrap(),
            KernelSpec::sum(vec![
                KernelSpec::constant(0.5).unwrap(),
                KernelSpec::projected(KernelSpec::periodic(1.0, 0.6, 3.0).unwrap(), vec![0]).unwrap(),
            ])
            .unwrap(),
        ];
        let (x, y) = ([0.3, 1.7], [1.1, 0.2]);
        for k in &kernels {
            let (v, g) = k.eval_with_grad(&x, &y);
            assert_abs_diff_eq!(v, k.eval(&x, &y).unwrap(), epsilon = 1e-15);
            let p = k.log_params();
            for i in 0..p.len() {
                let h = 1e-6;
                let mut up = p.clone();
                up[i] += h;
                let mut dn = p.clone();
                dn[i] -= h;
                let fd = (k.with_log_params(&up).unwrap().eval(&x, &y).unwrap()
                    - k.with_log_params(&dn).unwrap().eval(&x, &y).unwrap())
                    / (2.0 * h);
                assert_abs_diff_eq!(g[i], fd, epsilon = 1e-8);
            }
        }
    }
}
