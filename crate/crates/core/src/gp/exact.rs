use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::optimize::{maximize, MaximizeOptions, Maximum};
use crate::kernels::{exp_or_keep, KernelSpec};
use crate::linalg::{Cholesky, Matrix};

/// Parameter name addressing the observation noise variance.
pub const NOISE_PARAM: &str = "noise_variance";

/// Zero-mean GP regression with Gaussian noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactGp {
    pub kernel: KernelSpec,
    pub noise_variance: f64,
    pub train_inputs: Vec<Vec<f64>>,
    pub train_targets: Vec<f64>,
}

impl ExactGp {
    pub fn new(
        kernel: KernelSpec,
        noise_variance: f64,
        train_inputs: Vec<Vec<f64>>,
        train_targets: Vec<f64>,
    ) -> Result<Self> {
        kernel.validate()?;
        if !(noise_variance >= 0.0) || !noise_variance.is_finite() {
            return Err(Error::invalid(NOISE_PARAM, noise_variance));
        }
        if train_inputs.len() != train_targets.len() {
            return Err(Error::DimensionMismatch { expected: train_inputs.len(), found: train_targets.len() });
        }
        if train_targets.iter().any(|y| !y.is_finite()) {
            return Err(Error::InvalidInput("non-finite training target".into()));
        }
        Ok(ExactGp { kernel, noise_variance, train_inputs, train_targets })
    }

    pub fn len(&self) -> usize {
        self.train_targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train_targets.is_empty()
    }

    fn noisy_gram(&self) -> Result<Matrix> {
        let mut k = self.kernel.gram_symmetric(&self.train_inputs)?;
        k.add_diagonal(self.noise_variance);
        Ok(k)
    }

    /// Factorises the training covariance once for repeated prediction.
    pub fn condition(&self) -> Result<ExactPosterior> {
        let chol = Cholesky::factor_jittered(&self.noisy_gram()?)?;
        let alpha = chol.solve(&self.train_targets);
        Ok(ExactPosterior { gp: self.clone(), chol, alpha })
    }

    /// Posterior mean and full covariance at `test_inputs`.
    pub fn posterior(&self, test_inputs: &[Vec<f64>]) -> Result<(Vec<f64>, Matrix)> {
        self.condition()?.predict(test_inputs)
    }

    /// `log p(y | X, θ)`; zero for an empty training set.
    pub fn log_marginal_likelihood(&self) -> Result<f64> {
        if self.is_empty() {
            return Ok(0.0);
        }
        let post = self.condition()?;
        Ok(post.log_marginal_likelihood())
    }

    /// Names of all log-domain parameters: kernel parameters then the noise.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = self.kernel.param_names();
        names.push(String::from(NOISE_PARAM));
        names
    }

    pub fn log_params(&self) -> Vec<f64> {
        let mut p = self.kernel.log_params();
        p.push(libm::log(self.noise_variance));
        p
    }

    pub fn with_log_params(&self, log_params: &[f64]) -> Result<Self> {
        let nk = self.kernel.n_params();
        if log_params.len() != nk + 1 {
            return Err(Error::DimensionMismatch { expected: nk + 1, found: log_params.len() });
        }
        let mut gp = self.clone();
        gp.kernel = self.kernel.with_log_params(&log_params[..nk])?;
        gp.noise_variance = exp_or_keep(log_params[nk], self.noise_variance);
        Ok(gp)
    }

    /// Gradient of the log marginal likelihood with respect to every
    /// log-domain parameter, in [`ExactGp::param_names`] order.
    pub fn lml_gradient_all(&self) -> Result<Vec<f64>> {
        let n_params = self.kernel.n_params() + 1;
        if self.is_empty() {
            return Ok(alloc::vec![0.0; n_params]);
        }
        let post = self.condition()?;
        let n = self.len();
        // W = α αᵀ − K⁻¹
        let mut w = post.chol.inverse();
        w.scale(-1.0);
        for i in 0..n {
            for j in 0..n {
                w[(i, j)] += post.alpha[i] * post.alpha[j];
            }
        }
        let mut grad = alloc::vec![0.0; n_params];
        for i in 0..n {
            for j in 0..=i {
                let (_, dk) = self.kernel.eval_with_grad(&self.train_inputs[i], &self.train_inputs[j]);
                let weight = if i == j { 0.5 * w[(i, i)] } else { w[(i, j)] };
                for (g, d) in grad.iter_mut().zip(&dk) {
                    *g += weight * d;
                }
            }
        }
        let trace_w: f64 = (0..n).map(|i| w[(i, i)]).sum();
        grad[n_params - 1] = 0.5 * self.noise_variance * trace_w;
        Ok(grad)
    }

    /// Gradient restricted to the named parameters.
    pub fn lml_gradient(&self, wrt: &[&str]) -> Result<Vec<f64>> {
        let names = self.param_names();
        let idx = wrt
            .iter()
            .map(|w| names.iter().position(|n| n == w).ok_or_else(|| Error::UnknownParameter(String::from(*w))))
            .collect::<Result<Vec<_>>>()?;
        let all = self.lml_gradient_all()?;
        Ok(idx.into_iter().map(|i| all[i]).collect())
    }

    /// Maximises the log marginal likelihood over every parameter except
    /// those named in `frozen`.
    pub fn fit(&self, frozen: &[&str], options: &MaximizeOptions) -> Result<(ExactGp, Maximum)> {
        let names = self.param_names();
        for f in frozen {
            if !names.iter().any(|n| n == f) {
                return Err(Error::UnknownParameter(String::from(*f)));
            }
        }
        let free: Vec<usize> = (0..names.len()).filter(|&i| !frozen.contains(&names[i].as_str())).collect();
        let base = self.log_params();
        let assemble = |x: &[f64]| {
            let mut p = base.clone();
            for (k, &i) in free.iter().enumerate() {
                p[i] = x[k];
            }
            p
        };
        let objective = |x: &[f64]| {
            let eval = || -> Result<(f64, Vec<f64>)> {
                let gp = self.with_log_params(&assemble(x))?;
                let value = gp.log_marginal_likelihood()?;
                let g = gp.lml_gradient_all()?;
                Ok((value, free.iter().map(|&i| g[i]).collect()))
            };
            eval().unwrap_or((f64::NAN, Vec::new()))
        };
        let x0: Vec<f64> = free.iter().map(|&i| base[i]).collect();
        let result = maximize(objective, &x0, options)?;
        let fitted = self.with_log_params(&assemble(&result.x))?;
        Ok((fitted, result))
    }
}

/// An [`ExactGp`] with its training covariance factorised.
#[derive(Clone, Debug)]
pub struct ExactPosterior {
    gp: ExactGp,
    chol: Cholesky,
    alpha: Vec<f64>,
}

impl ExactPosterior {
    pub fn gp(&self) -> &ExactGp {
        &self.gp
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.gp.len() as f64;
        let fit: f64 = self.alpha.iter().zip(&self.gp.train_targets).map(|(a, y)| a * y).sum();
        -0.5 * fit - 0.5 * self.chol.log_det() - 0.5 * n * libm::log(2.0 * PI)
    }

    /// Posterior mean at a single input.
    pub fn mean_at(&self, x: &[f64]) -> f64 {
        self.gp
            .train_inputs
            .iter()
            .zip(&self.alpha)
            .map(|(xi, a)| self.gp.kernel.eval_unchecked(x, xi) * a)
            .sum()
    }

    pub fn predict(&self, test_inputs: &[Vec<f64>]) -> Result<(Vec<f64>, Matrix)> {
        let kss = self.gp.kernel.gram_symmetric(test_inputs)?;
        if self.gp.is_empty() {
            return Ok((alloc::vec![0.0; test_inputs.len()], kss));
        }
        let kxs = self.gp.kernel.gram(&self.gp.train_inputs, test_inputs)?;
        let mean = kxs.transpose_matvec(&self.alpha);
        let v = self.chol.solve_lower_matrix(&kxs);
        let cov = kss.sub(&v.transpose_matmul(&v));
        Ok((mean, cov))
    }

    /// Posterior means and marginal variances (no full covariance).
    pub fn predict_marginals(&self, test_inputs: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut means = Vec::with_capacity(test_inputs.len());
        let mut vars = Vec::with_capacity(test_inputs.len());
        for x in test_inputs {
            let kxx = self.gp.kernel.eval(x, x)?;
            if self.gp.is_empty() {
                means.push(0.0);
                vars.push(kxx);
                continue;
            }
            let k: Vec<f64> = self.gp.train_inputs.iter().map(|xi| self.gp.kernel.eval_unchecked(xi, x)).collect();
            means.push(k.iter().zip(&self.alpha).map(|(a, b)| a * b).sum());
            let v = self.chol.solve_lower(&k);
            vars.push(kxx - v.iter().map(|u| u * u).sum::<f64>());
        }
        Ok((means, vars))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use approx::assert_abs_diff_eq;

    fn se() -> KernelSpec {
        KernelSpec::squared_exponential(1.0, vec![1.0]).unwrap()
    }

    #[test]
    fn empty_data_returns_prior() {
        let gp = ExactGp::new(se(), 0.1, vec![], vec![]).unwrap();
        let (m, c) = gp.posterior(&[vec![0.0]]).unwrap();
        assert_eq!(m, vec![0.0]);
        assert_eq!(c[(0, 0)], 1.0);
        assert_eq!(gp.log_marginal_likelihood().unwrap(), 0.0);
    }

    #[test]
    fn noiseless_interpolation() {
        let gp = ExactGp::new(se(), 0.0, vec![vec![0.0]], vec![2.0]).unwrap();
        let (m, c) = gp.posterior(&[vec![0.0]]).unwrap();
        assert_abs_diff_eq!(m[0], 2.0, epsilon = 1e-5);
        assert_abs_diff_eq!(c[(0, 0)], 0.0, epsilon = 1e-5);
    }

    #[test]
    fn scalar_lml_closed_forms() {
        // K + σ² = 1 with a constant kernel of variance 1 − σ² − jitter.
        let k = KernelSpec::constant(0.5 - 1e-6).unwrap();
        let zero = ExactGp::new(k.clone(), 0.5, vec![vec![0.0]], vec![0.0]).unwrap();
        assert_abs_diff_eq!(zero.log_marginal_likelihood().unwrap(), -0.918_938_533_204_672_8, epsilon = 1e-12);
        let one = ExactGp::new(k, 0.5, vec![vec![0.0]], vec![1.0]).unwrap();
        assert_abs_diff_eq!(one.log_marginal_likelihood().unwrap(), -1.418_938_533_204_673, epsilon = 1e-12);
    }

    #[test]
    fn unknown_gradient_parameter() {
        let gp = ExactGp::new(se(), 0.1, vec![vec![0.0]], vec![1.0]).unwrap();
        assert!(matches!(gp.lml_gradient(&["period"]), Err(Error::UnknownParameter(_))));
        assert_eq!(gp.lml_gradient(&["variance", NOISE_PARAM]).unwrap().len(), 2);
    }

    #[test]
    fn noise_only_gradient_is_scalar_calculus() {
        // K ≈ 0: L = −½ y²/s − ½ log(2π s), dL/dlog s = ½ y²/s − ½.
        let k = KernelSpec::constant(1e-300).unwrap();
        let (y, s) = (1.7, 0.4);
        let gp = ExactGp::new(k, s, vec![vec![0.0]], vec![y]).unwrap();
        let g = gp.lml_gradient(&[NOISE_PARAM, "variance"]).unwrap();
        let s_eff = s + 1e-6;
        assert_abs_diff_eq!(g[0], 0.5 * y * y * s / (s_eff * s_eff) - 0.5 * s / s_eff, epsilon = 1e-12);
        assert_abs_diff_eq!(g[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_mismatched_data() {
        assert!(ExactGp::new(se(), 0.1, vec![vec![0.0]], vec![]).is_err());
        assert!(ExactGp::new(se(), -0.1, vec![], vec![]).is_err());
    }
}
