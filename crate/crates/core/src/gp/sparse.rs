use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::linalg::{dot, Cholesky, Matrix};

/// A GP summarised by `M` inducing variables `u = f(Z)` with a Gaussian
/// variational posterior `q(u) = N(m_u, S_u)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "SparseGpRecord", into = "SparseGpRecord")]
pub struct SparseGp {
    kernel: KernelSpec,
    inducing: Vec<Vec<f64>>,
    mean: Vec<f64>,
    cov: Matrix,
    kzz: Cholesky,
    /// `K_zz⁻¹ m_u`
    weights: Vec<f64>,
    /// `K_zz⁻¹ (K_zz − S_u) K_zz⁻¹`, so the conditional variance is
    /// `k(x, x) − k_xᵀ R k_x`.
    reduction: Matrix,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct SparseGpRecord {
    kernel: KernelSpec,
    inducing_inputs: Vec<Vec<f64>>,
    variational_mean: Vec<f64>,
    variational_cov: Matrix,
}

impl TryFrom<SparseGpRecord> for SparseGp {
    type Error = Error;

    fn try_from(r: SparseGpRecord) -> Result<Self> {
        SparseGp::new(r.kernel, r.inducing_inputs, r.variational_mean, r.variational_cov)
    }
}

impl From<SparseGp> for SparseGpRecord {
    fn from(g: SparseGp) -> Self {
        SparseGpRecord {
            kernel: g.kernel,
            inducing_inputs: g.inducing,
            variational_mean: g.mean,
            variational_cov: g.cov,
        }
    }
}

impl PartialEq for SparseGp {
    fn eq(&self, other: &Self) -> bool {
        self.kernel == other.kernel && self.inducing == other.inducing && self.mean == other.mean && self.cov == other.cov
    }
}

/// `a = L⁻¹ k(Z, x)` and the residual prior variance `c = k(x, x) − ‖a‖²`
/// for one input, where `L Lᵀ = K_zz`. In whitened coordinates
/// `u = L v`, the conditional mean is `aᵀ m_v` and the variance
/// `c + ‖L_sᵀ a‖²` for `S_v = L_s L_sᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct WhitenedProjection {
    pub a: Vec<f64>,
    pub c: f64,
}

impl SparseGp {
    pub fn new(kernel: KernelSpec, inducing: Vec<Vec<f64>>, mean: Vec<f64>, cov: Matrix) -> Result<Self> {
        kernel.validate()?;
        let m = inducing.len();
        if m == 0 {
            return Err(Error::InvalidInput("sparse GP needs at least one inducing point".into()));
        }
        if mean.len() != m {
            return Err(Error::DimensionMismatch { expected: m, found: mean.len() });
        }
        if cov.rows() != m || cov.cols() != m {
            return Err(Error::DimensionMismatch { expected: m, found: cov.rows() });
        }
        if !cov.is_symmetric(1e-9 * (1.0 + cov.as_slice().iter().fold(0.0f64, |a, b| a.max(b.abs())))) {
            return Err(Error::InvalidInput("variational covariance is not symmetric".into()));
        }
        let kzz = Cholesky::factor_jittered(&kernel.gram_symmetric(&inducing)?)?;
        let weights = kzz.solve(&mean);
        let kinv = kzz.solve_upper_matrix(&kzz.solve_lower_matrix(&Matrix::identity(m)));
        let mut reduction = kinv.sub(&kinv.matmul(&cov).matmul(&kinv));
        for i in 0..m {
            for j in 0..i {
                let v = 0.5 * (reduction[(i, j)] + reduction[(j, i)]);
                reduction[(i, j)] = v;
                reduction[(j, i)] = v;
            }
        }
        Ok(SparseGp { kernel, inducing, mean, cov, kzz, weights, reduction })
    }

    /// `q(u) = p(u)`: zero mean and `S_u = K_zz` (including its jitter).
    pub fn prior(kernel: KernelSpec, inducing: Vec<Vec<f64>>) -> Result<Self> {
        let m = inducing.len();
        SparseGp::from_whitened(kernel, inducing, &alloc::vec![0.0; m], &Matrix::identity(m))
    }

    /// Builds from whitened variational parameters: `m_u = L m_v`,
    /// `S_u = L S_v Lᵀ` with `S_v = chol_v chol_vᵀ`.
    pub fn from_whitened(
        kernel: KernelSpec,
        inducing: Vec<Vec<f64>>,
        whitened_mean: &[f64],
        whitened_chol: &Matrix,
    ) -> Result<Self> {
        let kzz = Cholesky::factor_jittered(&kernel.gram_symmetric(&inducing)?)?;
        let l = kzz.factor_matrix();
        let mean = l.matvec(whitened_mean);
        let ls = l.matmul(whitened_chol);
        let mut cov = ls.matmul(&ls.transpose());
        let n = cov.rows();
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (cov[(i, j)] + cov[(j, i)]);
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
        SparseGp::new(kernel, inducing, mean, cov)
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn inducing_inputs(&self) -> &[Vec<f64>] {
        &self.inducing
    }

    pub fn variational_mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variational_cov(&self) -> &Matrix {
        &self.cov
    }

    pub fn num_inducing(&self) -> usize {
        self.inducing.len()
    }

    /// Cholesky factor of `K_zz` (with jitter).
    pub fn kzz_cholesky(&self) -> &Cholesky {
        &self.kzz
    }

    /// Whitened parameters `(m_v, S_v)` of the current variational posterior.
    pub fn whitened(&self) -> (Vec<f64>, Matrix) {
        let mv = self.kzz.solve_lower(&self.mean);
        let a = self.kzz.solve_lower_matrix(&self.cov);
        let sv = self.kzz.solve_lower_matrix(&a.transpose());
        (mv, sv)
    }

    /// Posterior mean `k(x, Z) K_zz⁻¹ m_u` at one input.
    pub fn mean_at(&self, x: &[f64]) -> f64 {
        self.inducing.iter().zip(&self.weights).map(|(z, w)| self.kernel.eval_unchecked(x, z) * w).sum()
    }

    /// Conditional mean and variance at one input, without dimension checks.
    pub fn moments_at(&self, x: &[f64]) -> (f64, f64) {
        let k: Vec<f64> = self.inducing.iter().map(|z| self.kernel.eval_unchecked(z, x)).collect();
        let mean = dot(&k, &self.weights);
        let quad: f64 = (0..k.len()).map(|i| k[i] * dot(self.reduction.row(i), &k)).sum();
        (mean, self.kernel.eval_unchecked(x, x) - quad)
    }

    pub fn project(&self, x: &[f64]) -> WhitenedProjection {
        let kzx: Vec<f64> = self.inducing.iter().map(|z| self.kernel.eval_unchecked(z, x)).collect();
        let a = self.kzz.solve_lower(&kzx);
        let c = self.kernel.eval_unchecked(x, x) - dot(&a, &a);
        WhitenedProjection { a, c }
    }

    fn check_dims(&self, xs: &[Vec<f64>]) -> Result<()> {
        let z0 = &self.inducing[0];
        for x in xs {
            self.kernel.eval(x, z0)?;
        }
        Ok(())
    }

    /// Mean `K_xz K_zz⁻¹ m_u` and covariance
    /// `K_xx − K_xz K_zz⁻¹ (K_zz − S_u) K_zz⁻¹ K_zx`.
    pub fn conditional(&self, xs: &[Vec<f64>]) -> Result<(Vec<f64>, Matrix)> {
        self.check_dims(xs)?;
        let kzx = self.kernel.gram(&self.inducing, xs)?;
        let kxx = self.kernel.gram_symmetric(xs)?;
        let a = self.kzz.solve_lower_matrix(&kzx);
        let b = self.kzz.solve_upper_matrix(&a);
        let mean = b.transpose_matvec(&self.mean);
        let sb = self.cov.matmul(&b);
        let mut cov = kxx.sub(&a.transpose_matmul(&a));
        cov.add_assign(&b.transpose_matmul(&sb));
        Ok((mean, cov))
    }

    /// Means and marginal variances of the conditional.
    pub fn marginals(&self, xs: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_dims(xs)?;
        let mut means = Vec::with_capacity(xs.len());
        let mut vars = Vec::with_capacity(xs.len());
        for x in xs {
            let kzx: Vec<f64> = self.inducing.iter().map(|z| self.kernel.eval_unchecked(z, x)).collect();
            let a = self.kzz.solve_lower(&kzx);
            let b = self.kzz.solve_upper(&a);
            means.push(dot(&b, &self.mean));
            let sb = self.cov.matvec(&b);
            vars.push(self.kernel.eval_unchecked(x, x) - dot(&a, &a) + dot(&b, &sb));
        }
        Ok((means, vars))
    }
}
