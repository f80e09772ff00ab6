use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{ExactGp, ExactPosterior, FitReport, MaximizeOptions};
use crate::kernels::KernelSpec;

/// Log-normal mark model: `ln m ~ N(offset + f(t), σ_d²)` with `f` a GP over
/// absolute time conditioned on the training log marks.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "MarkModelRecord", into = "MarkModelRecord")]
pub struct MarkModel {
    log_offset: f64,
    posterior: ExactPosterior,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct MarkModelRecord {
    log_offset: f64,
    gp: ExactGp,
}

impl TryFrom<MarkModelRecord> for MarkModel {
    type Error = Error;

    fn try_from(r: MarkModelRecord) -> Result<Self> {
        MarkModel::from_gp(r.gp, r.log_offset)
    }
}

impl From<MarkModel> for MarkModelRecord {
    fn from(m: MarkModel) -> Self {
        MarkModelRecord { log_offset: m.log_offset, gp: m.posterior.gp().clone() }
    }
}

impl PartialEq for MarkModel {
    fn eq(&self, other: &Self) -> bool {
        self.log_offset == other.log_offset && self.posterior.gp() == other.posterior.gp()
    }
}

impl MarkModel {
    /// `gp` is trained on `ln m − log_offset`; its noise variance is `σ_d²`.
    pub fn from_gp(gp: ExactGp, log_offset: f64) -> Result<Self> {
        if !log_offset.is_finite() {
            return Err(Error::invalid("log_offset", log_offset));
        }
        if gp.train_inputs.iter().any(|x| x.len() != 1) {
            return Err(Error::InvalidInput("mark model inputs must be scalar times".into()));
        }
        Ok(MarkModel { log_offset, posterior: gp.condition()? })
    }

    /// A model without training data: `ln m ~ N(log_offset, σ_d²)`.
    pub fn constant(kernel: KernelSpec, log_offset: f64, log_variance: f64) -> Result<Self> {
        MarkModel::from_gp(ExactGp::new(kernel, log_variance, Vec::new(), Vec::new())?, log_offset)
    }

    /// Fits kernel and noise by marginal likelihood on `(time, mark)` pairs,
    /// centring the log marks on their mean.
    pub fn fit(
        kernel: KernelSpec,
        noise_variance: f64,
        observations: &[(f64, f64)],
        options: &MaximizeOptions,
    ) -> Result<(Self, FitReport)> {
        if observations.iter().any(|(_, m)| !(*m > 0.0)) {
            return Err(Error::InvalidInput("marks must be positive".into()));
        }
        if observations.is_empty() {
            return Ok((MarkModel::constant(kernel, 0.0, noise_variance)?, FitReport::default()));
        }
        let logs: Vec<f64> = observations.iter().map(|(_, m)| libm::log(*m)).collect();
        let offset = logs.iter().sum::<f64>() / logs.len() as f64;
        let gp = ExactGp::new(
            kernel,
            noise_variance,
            observations.iter().map(|(t, _)| alloc::vec![*t]).collect(),
            logs.iter().map(|l| l - offset).collect(),
        )?;
        let (fitted, result) = gp.fit(&[], options)?;
        Ok((MarkModel::from_gp(fitted, offset)?, FitReport::from(&result)))
    }

    pub fn log_offset(&self) -> f64 {
        self.log_offset
    }

    pub fn gp(&self) -> &ExactGp {
        self.posterior.gp()
    }

    /// `σ_d²`, the variance of `ln m` around its mean.
    pub fn log_variance(&self) -> f64 {
        self.posterior.gp().noise_variance
    }

    /// Mean of `ln m` at time `t`.
    pub fn log_mean(&self, t: f64) -> f64 {
        self.log_offset + self.posterior.mean_at(&[t])
    }

    /// Log density of mark `m` at time `t`.
    pub fn loglik(&self, t: f64, m: f64) -> Result<f64> {
        if !(m > 0.0) {
            return Err(Error::invalid("mark", m));
        }
        let var = self.log_variance();
        let lm = libm::log(m);
        let d = lm - self.log_mean(t);
        Ok(-0.5 * d * d / var - 0.5 * libm::log(2.0 * PI * var) - lm)
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, t: f64, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.mark_from_normal(t, z)
    }

    pub fn sample(&self, t: f64, seed: u64) -> f64 {
        self.sample_with(t, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// The mark whose log is `z` standard deviations from the mean.
    pub fn mark_from_normal(&self, t: f64, z: f64) -> f64 {
        libm::exp(self.log_mean(t) + libm::sqrt(self.log_variance()) * z)
    }
}
