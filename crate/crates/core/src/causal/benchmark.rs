//! Synthetic in-model-class benchmark for the ablations.
//!
//! A hand-built ground-truth model pair simulates one training day per
//! patient and regime. Every ablation is fitted on that day, and its
//! per-patient effect trajectories on the following day are scored against
//! the ground truth's own effects.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::causal::{
    estimate_patient_effects, fit_components, make_ablation, AblationSpec, EffectEstimate, EffectQuery, JointModel,
    RegimeModels, TrainingData,
};
use crate::data::{EventSequence, MediatorEvent, OutcomePoint, OutcomeSeries, PatientRecord, Regime};
use crate::error::{Error, Result};
use crate::gp::{MaximizeOptions, SparseGp};
use crate::kernels::KernelSpec;
use crate::linalg::Matrix;
use crate::mediator::{inducing_grid, FeatureMap, IntensityComponent, LagSettings, MarkModel, MediatorConfig, MediatorModel};
use crate::outcome::{Magnitude, OutcomeConfig, OutcomeModel, TrainingSegment};
use crate::sampler::{regular_grid, rollout, NoiseReservoir, RolloutPlan};

/// Substream offset separating training simulations from effect rollouts.
const TRAINING_STREAMS: u64 = 1 << 40;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub patients: usize,
    /// Length of the simulated training period; the intervention time of
    /// the test day.
    pub train_hours: f64,
    pub grid_per_day: usize,
    /// Rollout replicates per patient for every fitted ablation.
    pub replicates: usize,
    /// Rollout replicates per patient for the ground-truth effects.
    pub truth_replicates: usize,
    pub outcome: OutcomeConfig,
    pub mediator: MediatorConfig,
    pub specs: Vec<AblationSpec>,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            patients: 10,
            train_hours: 24.0,
            grid_per_day: 40,
            replicates: 100,
            truth_replicates: 200,
            outcome: OutcomeConfig { optimizer: MaximizeOptions { max_iters: 40, tol: 1e-4 }, ..OutcomeConfig::default() },
            mediator: MediatorConfig {
                optimizer: MaximizeOptions { max_iters: 2000, tol: 1e-7 },
                mark_optimizer: MaximizeOptions { max_iters: 50, tol: 1e-6 },
                ..MediatorConfig::default()
            },
            specs: AblationSpec::NAMED.to_vec(),
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patients == 0 || self.grid_per_day == 0 || self.replicates == 0 || self.truth_replicates == 0 {
            return Err(Error::InvalidInput("benchmark sizes must be positive".into()));
        }
        if !(self.train_hours > 0.0) {
            return Err(Error::invalid("train_hours", self.train_hours));
        }
        if self.specs.is_empty() {
            return Err(Error::InvalidInput("no ablations selected".into()));
        }
        self.mediator.validate()
    }

    /// Test-day query for `patients`: 24 hours after `train_hours`, with
    /// `replicates` rollouts per patient.
    pub fn query(&self, patients: &[String], replicates: usize, seed: u64) -> EffectQuery {
        EffectQuery {
            patients: patients.to_vec(),
            t_a: self.train_hours,
            grid: regular_grid(self.train_hours, 24.0, self.grid_per_day),
            n_replicates: replicates,
            seed,
        }
    }
}

/// Ground-truth model pair and its patient keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub patients: Vec<String>,
    pub models: RegimeModels,
}

/// Settings of the hand-built simulator.
struct RegimeDesign {
    beta0: f64,
    /// `g_m(lag) = depth / (1 + exp((lag − refractory) / 0.6))`.
    depth: f64,
    refractory: f64,
    /// `g_o(y) = outcome_slope · (y − 6)`.
    outcome_slope: f64,
    log_mark_median: f64,
    baseline_shift: f64,
    /// Response per gram of mark.
    gain: f64,
    /// Peak time of the response `(r/p) e^{1 − r/p}`.
    peak: f64,
}

const PRE: RegimeDesign = RegimeDesign {
    beta0: 0.7,
    depth: -0.7,
    refractory: 4.0,
    outcome_slope: -0.12,
    log_mark_median: 3.688_879_454_113_936, // ln 40
    baseline_shift: 0.0,
    gain: 0.05,
    peak: 0.7,
};

const POST: RegimeDesign = RegimeDesign {
    beta0: 0.7,
    depth: -0.7,
    refractory: 2.5,
    outcome_slope: -0.12,
    log_mark_median: 3.218_875_824_868_201, // ln 25
    baseline_shift: -0.2,
    gain: 0.1,
    peak: 0.45,
};

const TRUTH_OUTCOME_NOISE: f64 = 0.05;
const TRUTH_MARK_LOG_VARIANCE: f64 = 0.1;
const TRUTH_PADDING: f64 = 6.0;

fn baseline_level(patient: usize) -> f64 {
    4.8 + 0.33 * patient as f64
}

fn truth_baseline(d: &RegimeDesign, patient: usize, t: f64) -> f64 {
    baseline_level(patient) + d.baseline_shift + 0.3 * libm::sin(2.0 * core::f64::consts::PI * (t - 8.0) / 24.0)
}

fn truth_shape(d: &RegimeDesign, r: f64) -> f64 {
    let x = r / d.peak;
    x * libm::exp(1.0 - x)
}

/// An outcome model whose posterior mean interpolates the designed baseline
/// and response curves, obtained by conditioning on noise-free evaluations
/// at fixed pseudo-meals.
fn truth_outcome(d: &RegimeDesign, patients: &[String]) -> Result<OutcomeModel> {
    let config = OutcomeConfig { noise_variance: TRUTH_OUTCOME_NOISE, ..OutcomeConfig::default() };
    let mut magnitudes = BTreeMap::new();
    let mut training = Vec::new();
    for (p, id) in patients.iter().enumerate() {
        let gain = d.gain * (0.9 + 0.02 * p as f64);
        magnitudes.insert(id.clone(), Magnitude { intercept: 0.0, slope: gain });
        let mark = libm::exp(d.log_mark_median);
        let events: Vec<MediatorEvent> = [7.0 + 0.1 * p as f64, 12.5, 18.5]
            .iter()
            .map(|&time| MediatorEvent { time, mark })
            .collect();
        let points = regular_grid(0.0, 24.0, 48)
            .into_iter()
            .map(|t| {
                let response: f64 = events
                    .iter()
                    .filter(|e| t - e.time > 0.0 && t - e.time <= config.effective_window)
                    .map(|e| gain * e.mark * truth_shape(d, t - e.time))
                    .sum();
                OutcomePoint { time: t, value: truth_baseline(d, p, t) + response }
            })
            .collect();
        training.push(TrainingSegment { patient_id: id.clone(), events, points });
    }
    OutcomeModel::new(
        config.baseline_kernel()?,
        config.response_kernel()?,
        TRUTH_OUTCOME_NOISE,
        magnitudes,
        config.magnitude_prior_scale,
        training,
    )
}

/// Sparse GP whose posterior mean interpolates `f` on `inducing`.
fn interpolant(kernel: KernelSpec, inducing: Vec<Vec<f64>>, f: impl Fn(&[f64]) -> f64) -> Result<SparseGp> {
    let m = inducing.len();
    let values = inducing.iter().map(|z| f(z)).collect();
    let mut cov = Matrix::identity(m);
    cov.scale(1e-6);
    SparseGp::new(kernel, inducing, values, cov)
}

fn truth_mediator(d: &RegimeDesign) -> Result<MediatorModel> {
    let config = MediatorConfig::default();
    let settings = LagSettings { q_m: 1, q_o: 1, lag_cap: config.lag_cap, outcome_padding: TRUTH_PADDING };
    let zm = inducing_grid(config.num_inducing, &[(0.0, config.lag_cap)], &[config.event_lengthscale]);
    let gm = interpolant(config.event_kernel()?, zm, |z| d.depth / (1.0 + libm::exp((z[0] - d.refractory) / 0.6)))?;
    let zo = inducing_grid(
        config.num_inducing,
        &[(0.0, config.lag_cap), (3.0, 12.0)],
        &config.outcome_lengthscales,
    );
    let go = interpolant(config.outcome_kernel()?, zo, |z| d.outcome_slope * (z[1] - TRUTH_PADDING))?;
    let marks = MarkModel::constant(config.mark_kernel()?, d.log_mark_median, TRUTH_MARK_LOG_VARIANCE)?;
    MediatorModel::new(
        d.beta0,
        vec![
            IntensityComponent { feature: FeatureMap::MediatorLags, gp: gm },
            IntensityComponent { feature: FeatureMap::OutcomePairs, gp: go },
        ],
        settings,
        marks,
    )
}

/// The ground truth for `n` patients named `p00`, `p01`, …: interacting
/// mediators with regime-specific refractoriness and meal sizes, and
/// outcome models with regime-specific baselines and response shapes.
pub fn ground_truth(n: usize) -> Result<GroundTruth> {
    if n == 0 {
        return Err(Error::EmptyData);
    }
    let patients: Vec<String> = (0..n).map(|p| format!("p{p:02}")).collect();
    let models = RegimeModels {
        pre: JointModel::new(truth_outcome(&PRE, &patients)?, truth_mediator(&PRE)?),
        post: JointModel::new(truth_outcome(&POST, &patients)?, truth_mediator(&POST)?),
    };
    Ok(GroundTruth { patients, models })
}

impl GroundTruth {
    /// Factual rollouts of both regimes over `[0, hours]` with
    /// `grid_per_day` outcome measurements per day.
    pub fn sample_training(&self, hours: f64, grid_per_day: usize, seed: u64) -> Result<TrainingData> {
        let n_grid = libm::round(hours / 24.0 * grid_per_day as f64) as usize;
        let mut data = TrainingData::default();
        for (p, id) in self.patients.iter().enumerate() {
            for (k, regime) in [Regime::Pre, Regime::Post].into_iter().enumerate() {
                let joint = self.models.regime(regime);
                let plan =
                    RolloutPlan { patient_id: id.clone(), start: 0.0, end: hours, grid: regular_grid(0.0, hours, n_grid) };
                let reservoir = NoiseReservoir::substream(seed, TRAINING_STREAMS + (2 * p + k) as u64);
                let factual = match regime {
                    Regime::Pre => crate::causal::PathIntervention::NATURAL,
                    Regime::Post => crate::causal::PathIntervention::TREATED,
                };
                let t = rollout(&joint.outcome, &joint.mediator, &plan, factual, &reservoir)?;
                let record = PatientRecord::new(
                    EventSequence::new(id.clone(), regime, t.events, hours)?,
                    OutcomeSeries::new(id.clone(), regime, t.outcomes)?,
                )?;
                match regime {
                    Regime::Pre => data.pre.push(record),
                    Regime::Post => data.post.push(record),
                }
            }
        }
        Ok(data)
    }
}

/// Mean over patients of the per-patient effect MSEs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationScore {
    pub mse_nde: f64,
    pub mse_nie: f64,
    pub mse_te: f64,
}

pub fn score(estimated: &[EffectEstimate], truth: &[EffectEstimate]) -> Result<AblationScore> {
    if estimated.len() != truth.len() {
        return Err(Error::GridMismatch(format!("{} vs {} patients", estimated.len(), truth.len())));
    }
    if estimated.is_empty() {
        return Err(Error::EmptyData);
    }
    let mut s = AblationScore::default();
    for (e, t) in estimated.iter().zip(truth) {
        if e.grid_h != t.grid_h {
            return Err(Error::GridMismatch("effect grids differ".into()));
        }
        s.mse_nde += super::effect_mse(&e.nde.mean, &t.nde.mean)?;
        s.mse_nie += super::effect_mse(&e.nie.mean, &t.nie.mean)?;
        s.mse_te += super::effect_mse(&e.te.mean, &t.te.mean)?;
    }
    let n = estimated.len() as f64;
    Ok(AblationScore { mse_nde: s.mse_nde / n, mse_nie: s.mse_nie / n, mse_te: s.mse_te / n })
}

/// One benchmark seed, run sequentially: simulate, fit, estimate, score.
pub fn run_benchmark(config: &BenchmarkConfig, seed: u64) -> Result<Vec<(AblationSpec, AblationScore)>> {
    config.validate()?;
    let truth = ground_truth(config.patients)?;
    let data = truth.sample_training(config.train_hours, config.grid_per_day, seed)?;
    let bank = fit_components(&config.specs, &data, &config.outcome, &config.mediator)?;
    let oracle = estimate_patient_effects(&truth.models, &config.query(&truth.patients, config.truth_replicates, seed))?;
    let query = config.query(&truth.patients, config.replicates, seed);
    config
        .specs
        .iter()
        .map(|spec| {
            let models = make_ablation(spec, &bank)?;
            Ok((*spec, score(&estimate_patient_effects(&models, &query)?, &oracle)?))
        })
        .collect()
}
