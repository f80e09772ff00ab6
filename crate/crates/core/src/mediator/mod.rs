//! Marked point-process mediator model.
//!
//! Event times follow the conditional intensity
//! `λ(τ | H) = (β₀ + Σ_c g_c(φ_c(τ, H)))²`, where each `g_c` is a sparse
//! variational GP over a feature map of the history (recent event lags,
//! recent outcome lags and values) or of absolute time. Marks are
//! log-normal around a GP mean over absolute time.

mod elbo;
mod features;
mod marks;

pub use elbo::{compensator_nodes, elbo, fit_mediator, time_elbo, MediatorFitReport, QuadratureNode};
pub use features::{inducing_grid, lag_features, FeatureMap, History, LagFeatures, LagSettings};
pub use marks::MarkModel;

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::PatientRecord;
use crate::error::{Error, Result};
use crate::gp::{MaximizeOptions, SparseGp};
use crate::kernels::KernelSpec;

/// Which history the time intensity may depend on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MediatorVariant {
    /// Event-lag and outcome-lag terms.
    #[default]
    Interacting,
    /// A single periodic GP over absolute time; ignores history.
    NonInteracting,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MediatorConfig {
    pub variant: MediatorVariant,
    pub beta0: f64,
    pub event_variance: f64,
    pub event_lengthscale: f64,
    pub outcome_variance: f64,
    /// `(relative time, outcome value)`.
    pub outcome_lengthscales: [f64; 2],
    pub q_m: usize,
    pub q_o: usize,
    pub lag_cap: f64,
    pub num_inducing: usize,
    pub time_variance: f64,
    pub time_lengthscale: f64,
    pub time_period: f64,
    pub mark_variance: f64,
    pub mark_lengthscale: f64,
    /// Initial `σ_d²`.
    pub mark_noise_variance: f64,
    pub quadrature_nodes_per_day: usize,
    pub gauss_hermite_nodes: usize,
    pub optimizer: MaximizeOptions,
    pub mark_optimizer: MaximizeOptions,
}

impl Default for MediatorConfig {
    fn default() -> Self {
        MediatorConfig {
            variant: MediatorVariant::Interacting,
            beta0: 0.1,
            event_variance: 0.1,
            event_lengthscale: 1.5,
            outcome_variance: 0.1,
            outcome_lengthscales: [100.0, 5.0],
            q_m: 1,
            q_o: 1,
            lag_cap: 24.0,
            num_inducing: 20,
            time_variance: 0.1,
            time_lengthscale: 0.4,
            time_period: 24.0,
            mark_variance: 1.0,
            mark_lengthscale: 1.0,
            mark_noise_variance: 0.25,
            quadrature_nodes_per_day: 256,
            gauss_hermite_nodes: 20,
            optimizer: MaximizeOptions::default(),
            mark_optimizer: MaximizeOptions::default(),
        }
    }
}

impl MediatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.q_m == 0 || self.q_o == 0 {
            return Err(Error::InvalidInput("q_m and q_o must be at least 1".into()));
        }
        if !(self.lag_cap > 0.0) {
            return Err(Error::invalid("lag_cap", self.lag_cap));
        }
        if self.num_inducing == 0 || self.quadrature_nodes_per_day == 0 || self.gauss_hermite_nodes == 0 {
            return Err(Error::InvalidInput("inducing and quadrature sizes must be positive".into()));
        }
        if !self.beta0.is_finite() {
            return Err(Error::invalid("beta0", self.beta0));
        }
        Ok(())
    }

    /// Event-lag kernel over `q_m` lags.
    pub fn event_kernel(&self) -> Result<KernelSpec> {
        KernelSpec::squared_exponential(self.event_variance, vec![self.event_lengthscale])
    }

    /// Sum over outcome slots of a 2-D kernel on `(lag, value)`.
    pub fn outcome_kernel(&self) -> Result<KernelSpec> {
        let pair = KernelSpec::squared_exponential(self.outcome_variance, self.outcome_lengthscales.to_vec())?;
        if self.q_o == 1 {
            return Ok(pair);
        }
        let terms =
            (0..self.q_o).map(|q| KernelSpec::projected(pair.clone(), vec![2 * q, 2 * q + 1])).collect::<Result<_>>()?;
        KernelSpec::sum(terms)
    }

    pub fn time_kernel(&self) -> Result<KernelSpec> {
        KernelSpec::periodic(self.time_variance, self.time_lengthscale, self.time_period)
    }

    pub fn mark_kernel(&self) -> Result<KernelSpec> {
        KernelSpec::matern12(self.mark_variance, self.mark_lengthscale)
    }

    /// Feature settings with the padding and value range taken from
    /// `records`' outcomes.
    pub fn lag_settings(&self, records: &[PatientRecord]) -> LagSettings {
        let (mean, _) = outcome_summary(records);
        LagSettings { q_m: self.q_m, q_o: self.q_o, lag_cap: self.lag_cap, outcome_padding: mean }
    }

    /// Components at their prior (zero mean, `S_u = K_zz`).
    pub fn prior_components(&self, records: &[PatientRecord]) -> Result<Vec<IntensityComponent>> {
        self.validate()?;
        let m = self.num_inducing;
        match self.variant {
            MediatorVariant::Interacting => {
                let (_, (lo, hi)) = outcome_summary(records);
                let lags = vec![(0.0, self.lag_cap); self.q_m];
                let z_m = inducing_grid(m, &lags, &vec![self.event_lengthscale; self.q_m]);
                let mut bounds = Vec::new();
                let mut scales = Vec::new();
                for _ in 0..self.q_o {
                    bounds.extend([(0.0, self.lag_cap), (lo, hi)]);
                    scales.extend(self.outcome_lengthscales);
                }
                let z_o = inducing_grid(m, &bounds, &scales);
                Ok(vec![
                    IntensityComponent {
                        feature: FeatureMap::MediatorLags,
                        gp: SparseGp::prior(self.event_kernel()?, z_m)?,
                    },
                    IntensityComponent {
                        feature: FeatureMap::OutcomePairs,
                        gp: SparseGp::prior(self.outcome_kernel()?, z_o)?,
                    },
                ])
            }
            MediatorVariant::NonInteracting => {
                // one period of the periodic kernel covers every absolute time
                let z: Vec<Vec<f64>> = (0..m).map(|i| vec![self.time_period * i as f64 / m as f64]).collect();
                Ok(vec![IntensityComponent { feature: FeatureMap::AbsoluteTime, gp: SparseGp::prior(self.time_kernel()?, z)? }])
            }
        }
    }
}

/// Mean outcome and the outcome value range over `records`, with fallbacks
/// for missing or constant data.
fn outcome_summary(records: &[PatientRecord]) -> (f64, (f64, f64)) {
    let values = records.iter().flat_map(|r| r.outcomes.points.iter().map(|p| p.value));
    let (mut n, mut sum, mut lo, mut hi) = (0usize, 0.0, f64::INFINITY, f64::NEG_INFINITY);
    for v in values {
        n += 1;
        sum += v;
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if n == 0 {
        return (0.0, (-1.0, 1.0));
    }
    let mean = sum / n as f64;
    if hi - lo < 1e-9 {
        return (mean, (mean - 1.0, mean + 1.0));
    }
    (mean, (lo, hi))
}

/// One additive term of the latent intensity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntensityComponent {
    pub feature: FeatureMap,
    pub gp: SparseGp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MediatorModelRecord", into = "MediatorModelRecord")]
pub struct MediatorModel {
    beta0: f64,
    components: Vec<IntensityComponent>,
    settings: LagSettings,
    marks: MarkModel,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct MediatorModelRecord {
    beta0: f64,
    components: Vec<IntensityComponent>,
    settings: LagSettings,
    marks: MarkModel,
}

impl TryFrom<MediatorModelRecord> for MediatorModel {
    type Error = Error;

    fn try_from(r: MediatorModelRecord) -> Result<Self> {
        MediatorModel::new(r.beta0, r.components, r.settings, r.marks)
    }
}

impl From<MediatorModel> for MediatorModelRecord {
    fn from(m: MediatorModel) -> Self {
        MediatorModelRecord { beta0: m.beta0, components: m.components, settings: m.settings, marks: m.marks }
    }
}

impl MediatorModel {
    /// With no components the intensity is the constant `β₀²`.
    pub fn new(beta0: f64, components: Vec<IntensityComponent>, settings: LagSettings, marks: MarkModel) -> Result<Self> {
        if !beta0.is_finite() {
            return Err(Error::invalid("beta0", beta0));
        }
        if settings.q_m == 0 || settings.q_o == 0 {
            return Err(Error::InvalidInput("q_m and q_o must be at least 1".into()));
        }
        if !(settings.lag_cap > 0.0) {
            return Err(Error::invalid("lag_cap", settings.lag_cap));
        }
        for c in &components {
            let d = c.feature.dim(&settings);
            if c.gp.inducing_inputs().iter().any(|z| z.len() != d) {
                return Err(Error::DimensionMismatch { expected: d, found: c.gp.inducing_inputs()[0].len() });
            }
        }
        Ok(MediatorModel { beta0, components, settings, marks })
    }

    /// A homogeneous Poisson process with rate `rate`.
    pub fn homogeneous(rate: f64, settings: LagSettings, marks: MarkModel) -> Result<Self> {
        if !(rate >= 0.0) {
            return Err(Error::invalid("rate", rate));
        }
        MediatorModel::new(libm::sqrt(rate), Vec::new(), settings, marks)
    }

    /// Initial model per `config`, before any fitting.
    pub fn initial(config: &MediatorConfig, records: &[PatientRecord]) -> Result<Self> {
        let marks = MarkModel::constant(config.mark_kernel()?, 0.0, config.mark_noise_variance)?;
        MediatorModel::new(config.beta0, config.prior_components(records)?, config.lag_settings(records), marks)
    }

    pub fn beta0(&self) -> f64 {
        self.beta0
    }

    pub fn components(&self) -> &[IntensityComponent] {
        &self.components
    }

    pub fn settings(&self) -> &LagSettings {
        &self.settings
    }

    pub fn marks(&self) -> &MarkModel {
        &self.marks
    }

    pub fn with_marks(&self, marks: MarkModel) -> Self {
        MediatorModel { marks, ..self.clone() }
    }

    pub fn with_beta0(&self, beta0: f64) -> Result<Self> {
        MediatorModel::new(beta0, self.components.clone(), self.settings, self.marks.clone())
    }

    /// True when no component looks at the history.
    pub fn is_history_free(&self) -> bool {
        self.components.iter().all(|c| !c.feature.depends_on_history())
    }

    pub fn lag_features(&self, history: &History<'_>, tau: f64) -> LagFeatures {
        lag_features(history, tau, &self.settings)
    }

    /// Posterior mean of `β₀ + Σ_c g_c` at `tau`.
    pub fn latent_mean(&self, tau: f64, history: &History<'_>) -> f64 {
        let mut buf = Vec::new();
        let mut total = self.beta0;
        for c in &self.components {
            c.feature.extract_into(history, tau, &self.settings, &mut buf);
            total += c.gp.mean_at(&buf);
        }
        total
    }

    /// Posterior mean and variance of the latent sum at `tau`.
    pub fn latent_moments(&self, tau: f64, history: &History<'_>) -> (f64, f64) {
        let mut buf = Vec::new();
        self.moments_with(|feature, out| feature.extract_into(history, tau, &self.settings, out), &mut buf)
    }

    pub(crate) fn moments_with(&self, mut features: impl FnMut(FeatureMap, &mut Vec<f64>), buf: &mut Vec<f64>) -> (f64, f64) {
        let mut mean = self.beta0;
        let mut var = 0.0;
        for c in &self.components {
            features(c.feature, buf);
            let (m, v) = c.gp.moments_at(buf);
            mean += m;
            var += v.max(0.0);
        }
        (mean, var)
    }

    /// `λ(τ | H)` with every GP at its posterior mean.
    pub fn time_intensity(&self, tau: f64, history: &History<'_>) -> f64 {
        let f = self.latent_mean(tau, history);
        f * f
    }

    /// Posterior mean of the intensity, `E_q[(β₀ + Σ g)²] = μ² + σ²`. This
    /// is the rate thinned against when sampling, since a variational fit
    /// may carry part of the rate in the posterior variance.
    pub fn expected_intensity(&self, tau: f64, history: &History<'_>) -> f64 {
        let (m, v) = self.latent_moments(tau, history);
        m * m + v
    }

    pub fn mark_loglik(&self, t: f64, mark: f64) -> Result<f64> {
        self.marks.loglik(t, mark)
    }

    pub fn sample_mark(&self, t: f64, seed: u64) -> f64 {
        self.marks.sample(t, seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{MediatorEvent, OutcomePoint};
    use crate::linalg::Matrix;

    fn settings() -> LagSettings {
        LagSettings { q_m: 1, q_o: 1, lag_cap: 24.0, outcome_padding: 6.0 }
    }

    fn marks() -> MarkModel {
        MarkModel::constant(KernelSpec::matern12(1.0, 1.0).unwrap(), 3.0, 0.2).unwrap()
    }

    fn random_model() -> MediatorModel {
        let cfg = MediatorConfig::default();
        let zm: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 * 4.0]).collect();
        let zo: Vec<Vec<f64>> = (0..6).map(|i| vec![(i % 2) as f64 * 20.0, 4.0 + i as f64]).collect();
        let um: Vec<f64> = (0..6).map(|i| 0.3 * libm::sin(i as f64)).collect();
        let uo: Vec<f64> = (0..6).map(|i| -0.2 * libm::cos(i as f64)).collect();
        let gm = SparseGp::new(cfg.event_kernel().unwrap(), zm, um, Matrix::identity(6)).unwrap();
        let go = SparseGp::new(cfg.outcome_kernel().unwrap(), zo, uo, Matrix::identity(6)).unwrap();
        MediatorModel::new(
            0.4,
            vec![
                IntensityComponent { feature: FeatureMap::MediatorLags, gp: gm },
                IntensityComponent { feature: FeatureMap::OutcomePairs, gp: go },
            ],
            settings(),
            marks(),
        )
        .unwrap()
    }

    #[test]
    fn squared_intercept_when_gps_are_zero() {
        let cfg = MediatorConfig::default();
        let recs: Vec<PatientRecord> = Vec::new();
        let m = MediatorModel::new(0.1, cfg.prior_components(&recs).unwrap(), settings(), marks()).unwrap();
        let events = [MediatorEvent { time: 1.0, mark: 5.0 }];
        assert!((m.time_intensity(3.0, &History::new(&events, &[])) - 0.01).abs() < 1e-15);
        let neg = MediatorModel::homogeneous(0.0, settings(), marks()).unwrap().with_beta0(-0.5).unwrap();
        assert_eq!(neg.time_intensity(1.0, &History::default()), 0.25);
    }

    #[test]
    fn intensity_matches_hand_composition() {
        let m = random_model();
        let events = [MediatorEvent { time: 1.0, mark: 5.0 }, MediatorEvent { time: 6.5, mark: 9.0 }];
        let outcomes = [OutcomePoint { time: 2.0, value: 5.0 }, OutcomePoint { time: 7.0, value: 8.0 }];
        let h = History::new(&events, &outcomes);
        let tau = 7.5;
        let (gm, _) = m.components()[0].gp.conditional(&[vec![1.0]]).unwrap();
        let (go, _) = m.components()[1].gp.conditional(&[vec![0.5, 8.0]]).unwrap();
        let f = 0.4 + gm[0] + go[0];
        assert!((m.time_intensity(tau, &h) - f * f).abs() < 1e-12);
    }

    #[test]
    fn history_boundary_rules() {
        let m = random_model();
        let tau = 5.0;
        let at_tau = [MediatorEvent { time: 5.0, mark: 3.0 }];
        assert_eq!(m.time_intensity(tau, &History::new(&at_tau, &[])), m.time_intensity(tau, &History::default()));
        let outcome_at_tau = [OutcomePoint { time: 5.0, value: 9.0 }];
        assert_ne!(m.time_intensity(tau, &History::new(&[], &outcome_at_tau)), m.time_intensity(tau, &History::default()));
    }

    #[test]
    fn default_initialisation() {
        let cfg = MediatorConfig::default();
        let recs: Vec<PatientRecord> = Vec::new();
        let m = MediatorModel::initial(&cfg, &recs).unwrap();
        assert_eq!(m.beta0(), 0.1);
        assert_eq!(m.components().len(), 2);
        assert!(m.components().iter().all(|c| c.gp.num_inducing() == 20));
        assert_eq!(
            m.components()[1].gp.kernel(),
            &KernelSpec::squared_exponential(0.1, vec![100.0, 5.0]).unwrap()
        );
        assert_eq!(m.components()[0].gp.kernel(), &KernelSpec::squared_exponential(0.1, vec![1.5]).unwrap());
    }
}
