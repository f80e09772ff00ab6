//! Conditional-GP outcome model.
//!
//! `y(τ) = f_b(τ) + Σ_{i: 0 < τ−t_i ≤ T_eff} l_p(m_i) f⁰(τ − t_i) + ε`, where
//! `f_b` is a per-patient baseline GP, `f⁰` a response-shape GP shared by all
//! patients, `l_p(m) = α_p + γ_p m` a per-patient magnitude and
//! `ε ~ N(0, σ_Y²)`. Conditioning is exact: all training outcomes form one
//! joint Gaussian whose covariance couples patients only through `f⁰`.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{EventSequence, MediatorEvent, OutcomePoint, OutcomeSeries};
use crate::error::{Error, Result};
use crate::gp::{maximize, FitReport, MaximizeOptions};
use crate::kernels::{exp_or_keep, in_window, KernelSpec};
use crate::linalg::{dot, Cholesky, Matrix};

/// Shape family of the shared response `f⁰`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseShape {
    /// Squared-exponential GP over relative time.
    #[default]
    Nonparametric,
    /// A single random level, flat over the effective window.
    Constant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutcomeConfig {
    /// Variance of the constant baseline term.
    pub baseline_intercept_variance: f64,
    pub baseline_variance: f64,
    pub baseline_lengthscale: f64,
    /// Frozen during fitting.
    pub baseline_period: f64,
    pub response_variance: f64,
    pub response_lengthscale: f64,
    /// Frozen during fitting.
    pub effective_window: f64,
    pub response_shape: ResponseShape,
    pub noise_variance: f64,
    pub magnitude_intercept: f64,
    pub magnitude_slope: f64,
    /// Standard deviation of the zero-mean Gaussian prior on every
    /// magnitude intercept and slope.
    pub magnitude_prior_scale: f64,
    pub optimizer: MaximizeOptions,
}

impl Default for OutcomeConfig {
    fn default() -> Self {
        OutcomeConfig {
            baseline_intercept_variance: 1.0,
            baseline_variance: 1.0,
            baseline_lengthscale: 10.0,
            baseline_period: 24.0,
            response_variance: 1.0,
            response_lengthscale: 0.5,
            effective_window: 3.0,
            response_shape: ResponseShape::Nonparametric,
            noise_variance: 0.5,
            magnitude_intercept: 0.1,
            magnitude_slope: 0.1,
            magnitude_prior_scale: 0.1,
            optimizer: MaximizeOptions::default(),
        }
    }
}

impl OutcomeConfig {
    pub fn baseline_kernel(&self) -> Result<KernelSpec> {
        KernelSpec::sum(vec![
            KernelSpec::constant(self.baseline_intercept_variance)?,
            KernelSpec::periodic(self.baseline_variance, self.baseline_lengthscale, self.baseline_period)?,
        ])
    }

    pub fn response_kernel(&self) -> Result<KernelSpec> {
        let inner = match self.response_shape {
            ResponseShape::Nonparametric => {
                KernelSpec::squared_exponential(self.response_variance, vec![self.response_lengthscale])?
            }
            ResponseShape::Constant => KernelSpec::constant(self.response_variance)?,
        };
        KernelSpec::time_marked(inner, self.effective_window)
    }

    pub fn initial_magnitude(&self) -> Magnitude {
        Magnitude { intercept: self.magnitude_intercept, slope: self.magnitude_slope }
    }
}

/// Linear response magnitude `l(m) = intercept + slope · m`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Magnitude {
    pub intercept: f64,
    pub slope: f64,
}

impl Magnitude {
    #[inline]
    pub fn eval(&self, mark: f64) -> f64 {
        self.intercept + self.slope * mark
    }
}

/// Outcome measurements and the events preceding them for one patient key.
/// Segments sharing a key share one baseline function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSegment {
    pub patient_id: String,
    pub events: Vec<MediatorEvent>,
    pub points: Vec<OutcomePoint>,
}

/// Index structure of the training design; independent of parameters.
#[derive(Clone, Debug, Default)]
struct Design {
    keys: Vec<String>,
    key_points: Vec<Vec<usize>>,
    times: Vec<f64>,
    targets: Vec<f64>,
    /// One entry per (training point, event) with the event inside the
    /// point's causal window.
    pair_point: Vec<usize>,
    pair_key: Vec<usize>,
    pair_rel: Vec<f64>,
    pair_mark: Vec<f64>,
}

impl Design {
    fn new(segments: &[TrainingSegment], window: f64) -> Design {
        let mut d = Design::default();
        let mut key_index = BTreeMap::new();
        for s in segments {
            if !key_index.contains_key(&s.patient_id) {
                key_index.insert(s.patient_id.clone(), 0);
            }
        }
        for (i, (k, v)) in key_index.iter_mut().enumerate() {
            *v = i;
            d.keys.push(k.clone());
        }
        d.key_points = vec![Vec::new(); d.keys.len()];
        for s in segments {
            let key = key_index[&s.patient_id];
            for p in &s.points {
                let j = d.times.len();
                d.times.push(p.time);
                d.targets.push(p.value);
                d.key_points[key].push(j);
                for e in window_events(&s.events, p.time, window) {
                    d.pair_point.push(j);
                    d.pair_key.push(key);
                    d.pair_rel.push(p.time - e.time);
                    d.pair_mark.push(e.mark);
                }
            }
        }
        d
    }

    fn n(&self) -> usize {
        self.times.len()
    }

    fn key(&self, patient: &str) -> Option<usize> {
        self.keys.binary_search_by(|k| k.as_str().cmp(patient)).ok()
    }

    fn pair_magnitudes(&self, mags: &[Magnitude]) -> Vec<f64> {
        self.pair_key.iter().zip(&self.pair_mark).map(|(&k, &m)| mags[k].eval(m)).collect()
    }

    /// Response-shape Gram matrix over the pair relative times.
    fn shape_gram(&self, response: &KernelSpec) -> Matrix {
        let r = self.pair_rel.len();
        let mut c = Matrix::zeros(r, r);
        for a in 0..r {
            for b in 0..=a {
                let v = response.eval_unchecked(&[self.pair_rel[a]], &[self.pair_rel[b]]);
                c[(a, b)] = v;
                c[(b, a)] = v;
            }
        }
        c
    }

    /// Noisy training covariance.
    fn covariance(&self, baseline: &KernelSpec, noise: f64, c: &Matrix, l: &[f64]) -> Matrix {
        let n = self.n();
        let mut k = Matrix::zeros(n, n);
        for pts in &self.key_points {
            for (ii, &i) in pts.iter().enumerate() {
                for &j in &pts[..=ii] {
                    let v = baseline.eval_unchecked(&[self.times[i]], &[self.times[j]]);
                    k[(i, j)] += v;
                    if i != j {
                        k[(j, i)] += v;
                    }
                }
            }
        }
        let r = l.len();
        for a in 0..r {
            let ja = self.pair_point[a];
            for b in 0..r {
                k[(ja, self.pair_point[b])] += l[a] * l[b] * c[(a, b)];
            }
        }
        k.add_diagonal(noise);
        k
    }
}

/// Events with `0 < τ − t ≤ window`, assuming `events` sorted by time.
fn window_events(events: &[MediatorEvent], tau: f64, window: f64) -> &[MediatorEvent] {
    let hi = events.partition_point(|e| e.time < tau);
    let lo = events[..hi].partition_point(|e| !in_window(tau - e.time, window));
    let slice = &events[lo..hi];
    debug_assert!(slice.iter().all(|e| in_window(tau - e.time, window)));
    slice
}

/// Predictive mean and variance (observation noise included) per query.
#[derive(Clone, Debug, PartialEq)]
pub struct OutcomePrediction {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl OutcomePrediction {
    /// `mean + √variance · z` with one standard normal per query from `rng`.
    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.variance)
            .map(|(m, v)| {
                let z: f64 = rng.sample(StandardNormal);
                m + libm::sqrt(v.max(0.0)) * z
            })
            .collect()
    }

    pub fn sample(&self, seed: u64) -> Vec<f64> {
        self.sample_with(&mut ChaCha8Rng::seed_from_u64(seed))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct OutcomeModelRecord {
    baseline_kernel: KernelSpec,
    response_kernel: KernelSpec,
    noise_variance: f64,
    magnitudes: BTreeMap<String, Magnitude>,
    magnitude_prior_scale: f64,
    training: Vec<TrainingSegment>,
}

/// A conditioned outcome model. Immutable once built.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "OutcomeModelRecord", into = "OutcomeModelRecord")]
pub struct OutcomeModel {
    baseline_kernel: KernelSpec,
    response_kernel: KernelSpec,
    window: f64,
    noise_variance: f64,
    magnitudes: BTreeMap<String, Magnitude>,
    fallback_magnitude: Magnitude,
    magnitude_prior_scale: f64,
    training: Vec<TrainingSegment>,
    design: Design,
    chol: Option<Cholesky>,
    alpha: Vec<f64>,
    /// `l_b α_{j(b)}` per training pair.
    pair_beta: Vec<f64>,
    pair_l: Vec<f64>,
}

impl PartialEq for OutcomeModel {
    fn eq(&self, other: &Self) -> bool {
        self.baseline_kernel == other.baseline_kernel
            && self.response_kernel == other.response_kernel
            && self.noise_variance == other.noise_variance
            && self.magnitudes == other.magnitudes
            && self.magnitude_prior_scale == other.magnitude_prior_scale
            && self.training == other.training
    }
}

impl TryFrom<OutcomeModelRecord> for OutcomeModel {
    type Error = Error;

    fn try_from(r: OutcomeModelRecord) -> Result<Self> {
        OutcomeModel::new(
            r.baseline_kernel,
            r.response_kernel,
            r.noise_variance,
            r.magnitudes,
            r.magnitude_prior_scale,
            r.training,
        )
    }
}

impl From<OutcomeModel> for OutcomeModelRecord {
    fn from(m: OutcomeModel) -> Self {
        OutcomeModelRecord {
            baseline_kernel: m.baseline_kernel,
            response_kernel: m.response_kernel,
            noise_variance: m.noise_variance,
            magnitudes: m.magnitudes,
            magnitude_prior_scale: m.magnitude_prior_scale,
            training: m.training,
        }
    }
}

impl OutcomeModel {
    /// Conditions the model on `training`. Every training patient key needs
    /// a magnitude; the response kernel must be time-marked.
    pub fn new(
        baseline_kernel: KernelSpec,
        response_kernel: KernelSpec,
        noise_variance: f64,
        magnitudes: BTreeMap<String, Magnitude>,
        magnitude_prior_scale: f64,
        training: Vec<TrainingSegment>,
    ) -> Result<Self> {
        baseline_kernel.validate()?;
        response_kernel.validate()?;
        let window = response_kernel
            .effective_window()
            .ok_or_else(|| Error::InvalidInput("response kernel must be time-marked".into()))?;
        if !(noise_variance > 0.0) || !noise_variance.is_finite() {
            return Err(Error::invalid("noise_variance", noise_variance));
        }
        if !(magnitude_prior_scale > 0.0) || !magnitude_prior_scale.is_finite() {
            return Err(Error::invalid("magnitude_prior_scale", magnitude_prior_scale));
        }
        for s in &training {
            check_segment(s)?;
            if !magnitudes.contains_key(&s.patient_id) {
                return Err(Error::InvalidInput(alloc::format!("no magnitude for patient `{}`", s.patient_id)));
            }
        }
        let design = Design::new(&training, window);
        let mags: Vec<Magnitude> = design.keys.iter().map(|k| magnitudes[k]).collect();
        let pair_l = design.pair_magnitudes(&mags);
        let (chol, alpha, pair_beta) = if design.n() == 0 {
            (None, Vec::new(), Vec::new())
        } else {
            let c = design.shape_gram(&response_kernel);
            let k = design.covariance(&baseline_kernel, noise_variance, &c, &pair_l);
            let chol = Cholesky::factor_jittered(&k)?;
            let alpha = chol.solve(&design.targets);
            let beta = pair_l.iter().zip(&design.pair_point).map(|(l, &j)| l * alpha[j]).collect();
            (Some(chol), alpha, beta)
        };
        let fallback_magnitude = mean_magnitude(magnitudes.values());
        Ok(OutcomeModel {
            baseline_kernel,
            response_kernel,
            window,
            noise_variance,
            magnitudes,
            fallback_magnitude,
            magnitude_prior_scale,
            training,
            design,
            chol,
            alpha,
            pair_beta,
            pair_l,
        })
    }

    /// The model at its configured initial values, conditioned on `training`.
    pub fn initial(config: &OutcomeConfig, training: Vec<TrainingSegment>) -> Result<Self> {
        let mut magnitudes = BTreeMap::new();
        for s in &training {
            magnitudes.insert(s.patient_id.clone(), config.initial_magnitude());
        }
        OutcomeModel::new(
            config.baseline_kernel()?,
            config.response_kernel()?,
            config.noise_variance,
            magnitudes,
            config.magnitude_prior_scale,
            training,
        )
    }

    /// An unconditioned model (prior predictive).
    pub fn untrained(config: &OutcomeConfig) -> Result<Self> {
        OutcomeModel::initial(config, Vec::new())
    }

    pub fn baseline_kernel(&self) -> &KernelSpec {
        &self.baseline_kernel
    }

    pub fn response_kernel(&self) -> &KernelSpec {
        &self.response_kernel
    }

    pub fn effective_window(&self) -> f64 {
        self.window
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn magnitudes(&self) -> &BTreeMap<String, Magnitude> {
        &self.magnitudes
    }

    pub fn magnitude_prior_scale(&self) -> f64 {
        self.magnitude_prior_scale
    }

    pub fn training(&self) -> &[TrainingSegment] {
        &self.training
    }

    /// The patient's magnitude, or the average over training patients for
    /// an unseen patient.
    pub fn magnitude_for(&self, patient: &str) -> Magnitude {
        self.magnitudes.get(patient).copied().unwrap_or(self.fallback_magnitude)
    }

    /// Copy with the magnitudes replaced (and the posterior recomputed).
    pub fn with_magnitudes(&self, magnitudes: BTreeMap<String, Magnitude>) -> Result<Self> {
        OutcomeModel::new(
            self.baseline_kernel.clone(),
            self.response_kernel.clone(),
            self.noise_variance,
            magnitudes,
            self.magnitude_prior_scale,
            self.training.clone(),
        )
    }

    /// Posterior mean of the shared shape `f⁰` at relative time `r`.
    pub fn shape_mean(&self, r: f64) -> f64 {
        if !in_window(r, self.window) {
            return 0.0;
        }
        self.design
            .pair_rel
            .iter()
            .zip(&self.pair_beta)
            .map(|(rb, beta)| self.response_kernel.eval_unchecked(&[r], &[*rb]) * beta)
            .sum()
    }

    /// Posterior mean of the response term at `tau` for `events` (sorted).
    pub fn response_value(&self, patient: &str, events: &[MediatorEvent], tau: f64) -> f64 {
        let mag = self.magnitude_for(patient);
        window_events(events, tau, self.window).iter().map(|e| mag.eval(e.mark) * self.shape_mean(tau - e.time)).sum()
    }

    /// Posterior mean of the patient's baseline at `tau`; the prior mean
    /// (zero) for an unseen patient.
    pub fn baseline_mean(&self, patient: &str, tau: f64) -> f64 {
        match self.design.key(patient) {
            Some(k) => self.design.key_points[k]
                .iter()
                .map(|&j| self.baseline_kernel.eval_unchecked(&[tau], &[self.design.times[j]]) * self.alpha[j])
                .sum(),
            None => 0.0,
        }
    }

    /// Predictive mean and variance at one time.
    pub fn predict_one(&self, patient: &str, events: &[MediatorEvent], tau: f64) -> (f64, f64) {
        let mag = self.magnitude_for(patient);
        let here = window_events(events, tau, self.window);
        let rels: Vec<f64> = here.iter().map(|e| tau - e.time).collect();
        let ls: Vec<f64> = here.iter().map(|e| mag.eval(e.mark)).collect();
        let mean = self.baseline_mean(patient, tau)
            + rels.iter().zip(&ls).map(|(r, l)| l * self.shape_mean(*r)).sum::<f64>();

        let mut prior = self.baseline_kernel.eval_unchecked(&[tau], &[tau]);
        for a in 0..rels.len() {
            for b in 0..rels.len() {
                prior += ls[a] * ls[b] * self.response_kernel.eval_unchecked(&[rels[a]], &[rels[b]]);
            }
        }
        let explained = match &self.chol {
            None => 0.0,
            Some(chol) => {
                let mut k = vec![0.0; self.design.n()];
                if let Some(key) = self.design.key(patient) {
                    for &j in &self.design.key_points[key] {
                        k[j] = self.baseline_kernel.eval_unchecked(&[tau], &[self.design.times[j]]);
                    }
                }
                for (r, l) in rels.iter().zip(&ls) {
                    for b in 0..self.pair_l.len() {
                        let c = self.response_kernel.eval_unchecked(&[*r], &[self.design.pair_rel[b]]);
                        k[self.design.pair_point[b]] += l * self.pair_l[b] * c;
                    }
                }
                let v = chol.solve_lower(&k);
                dot(&v, &v)
            }
        };
        (mean, (prior - explained).max(0.0) + self.noise_variance)
    }

    pub fn predict(&self, patient: &str, events: &[MediatorEvent], query_times: &[f64]) -> OutcomePrediction {
        let (mean, variance) = query_times.iter().map(|&t| self.predict_one(patient, events, t)).unzip();
        OutcomePrediction { mean, variance }
    }

    /// One marginal draw per query, deterministic in `seed`.
    pub fn sample(&self, patient: &str, events: &[MediatorEvent], query_times: &[f64], seed: u64) -> Vec<f64> {
        self.predict(patient, events, query_times).sample(seed)
    }

    /// Penalised log marginal likelihood of the training data.
    pub fn objective(&self) -> f64 {
        let penalty = magnitude_penalty(self.magnitudes.values(), self.magnitude_prior_scale);
        match &self.chol {
            None => penalty,
            Some(chol) => gaussian_loglik(chol, &self.alpha, &self.design.targets) + penalty,
        }
    }
}

fn check_segment(s: &TrainingSegment) -> Result<()> {
    if s.events.windows(2).any(|w| !(w[0].time < w[1].time)) || s.events.iter().any(|e| !e.time.is_finite()) {
        return Err(Error::InvalidInput(alloc::format!("events of `{}` are not strictly increasing", s.patient_id)));
    }
    if s.points.windows(2).any(|w| !(w[0].time < w[1].time))
        || s.points.iter().any(|p| !p.time.is_finite() || !p.value.is_finite())
    {
        return Err(Error::InvalidInput(alloc::format!("outcomes of `{}` are not strictly increasing", s.patient_id)));
    }
    Ok(())
}

fn mean_magnitude<'a>(mags: impl Iterator<Item = &'a Magnitude>) -> Magnitude {
    let mut sum = Magnitude::default();
    let mut n = 0usize;
    for m in mags {
        sum.intercept += m.intercept;
        sum.slope += m.slope;
        n += 1;
    }
    if n > 0 {
        sum.intercept /= n as f64;
        sum.slope /= n as f64;
    }
    sum
}

fn magnitude_penalty<'a>(mags: impl Iterator<Item = &'a Magnitude>, scale: f64) -> f64 {
    -mags.map(|m| m.intercept * m.intercept + m.slope * m.slope).sum::<f64>() / (2.0 * scale * scale)
}

fn gaussian_loglik(chol: &Cholesky, alpha: &[f64], y: &[f64]) -> f64 {
    -0.5 * dot(alpha, y) - 0.5 * chol.log_det() - 0.5 * y.len() as f64 * libm::log(2.0 * PI)
}

/// Pairs each outcome series with the event sequence of the same patient
/// and regime.
pub fn training_segments(data: &[OutcomeSeries], events: &[EventSequence]) -> Result<Vec<TrainingSegment>> {
    data.iter()
        .map(|s| {
            let ev = events
                .iter()
                .find(|e| e.patient_id == s.patient_id && e.regime == s.regime)
                .ok_or_else(|| {
                    Error::InvalidInput(alloc::format!("no events for patient `{}` ({})", s.patient_id, s.regime))
                })?;
            Ok(TrainingSegment { patient_id: s.patient_id.clone(), events: ev.events.clone(), points: s.points.clone() })
        })
        .collect()
}

/// Fits by maximising the log marginal likelihood plus the Gaussian
/// magnitude prior. The baseline period and effective window stay fixed.
pub fn fit_outcome(
    data: &[OutcomeSeries],
    events: &[EventSequence],
    config: &OutcomeConfig,
) -> Result<(OutcomeModel, FitReport)> {
    fit_segments(training_segments(data, events)?, config)
}

/// [`fit_outcome`] on pre-assembled training segments.
pub fn fit_segments(training: Vec<TrainingSegment>, config: &OutcomeConfig) -> Result<(OutcomeModel, FitReport)> {
    if training.iter().all(|s| s.points.is_empty()) {
        return Err(Error::EmptyData);
    }
    let init = OutcomeModel::initial(config, training)?;
    let problem = Problem::new(&init);
    let x0 = problem.initial_point(&init);
    let result = maximize(|x| problem.evaluate(x).unwrap_or((f64::NAN, Vec::new())), &x0, &config.optimizer)?;
    let model = problem.build(&result.x)?;
    Ok((model, FitReport::from(&result)))
}

/// Unconstrained parameterisation of an outcome fit: free baseline log
/// parameters, response log parameters, log noise, then per key the
/// magnitude intercept and the slope multiplied by `slope_scale`.
struct Problem<'a> {
    init: &'a OutcomeModel,
    baseline_free: Vec<usize>,
    baseline_log: Vec<f64>,
    n_response: usize,
    slope_scale: f64,
}

impl<'a> Problem<'a> {
    fn new(init: &'a OutcomeModel) -> Self {
        let names = init.baseline_kernel.param_names();
        let baseline_free = (0..names.len()).filter(|&i| !names[i].ends_with("period")).collect();
        let marks = &init.design.pair_mark;
        let slope_scale = if marks.is_empty() { 1.0 } else { marks.iter().sum::<f64>() / marks.len() as f64 };
        Problem {
            init,
            baseline_free,
            baseline_log: init.baseline_kernel.log_params(),
            n_response: init.response_kernel.n_params(),
            slope_scale,
        }
    }

    fn initial_point(&self, m: &OutcomeModel) -> Vec<f64> {
        let mut x: Vec<f64> = self.baseline_free.iter().map(|&i| self.baseline_log[i]).collect();
        x.extend(m.response_kernel.log_params());
        x.push(libm::log(m.noise_variance));
        for k in &m.design.keys {
            let mag = m.magnitudes[k];
            x.push(mag.intercept);
            x.push(mag.slope * self.slope_scale);
        }
        x
    }

    fn unpack(&self, x: &[f64]) -> Result<(KernelSpec, KernelSpec, f64, Vec<Magnitude>)> {
        let nb = self.baseline_free.len();
        let mut blog = self.baseline_log.clone();
        for (k, &i) in self.baseline_free.iter().enumerate() {
            blog[i] = x[k];
        }
        let baseline = self.init.baseline_kernel.with_log_params(&blog)?;
        let response = self.init.response_kernel.with_log_params(&x[nb..nb + self.n_response])?;
        let noise = exp_or_keep(x[nb + self.n_response], self.init.noise_variance);
        let mags = x[nb + self.n_response + 1..]
            .chunks(2)
            .zip(&self.init.design.keys)
            .map(|(c, k)| {
                let init = self.init.magnitudes[k];
                let slope = if c[1] == init.slope * self.slope_scale { init.slope } else { c[1] / self.slope_scale };
                Magnitude { intercept: c[0], slope }
            })
            .collect();
        Ok((baseline, response, noise, mags))
    }

    fn build(&self, x: &[f64]) -> Result<OutcomeModel> {
        let (baseline, response, noise, mags) = self.unpack(x)?;
        let magnitudes = self.init.design.keys.iter().cloned().zip(mags).collect();
        OutcomeModel::new(baseline, response, noise, magnitudes, self.init.magnitude_prior_scale, self.init.training.clone())
    }

    fn evaluate(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let d = &self.init.design;
        let (baseline, response, noise, mags) = self.unpack(x)?;
        if !noise.is_finite() || noise <= 0.0 {
            return Err(Error::invalid("noise_variance", noise));
        }
        let l = d.pair_magnitudes(&mags);
        let r = l.len();
        let mut c = Matrix::zeros(r, r);
        let mut dc = vec![Matrix::zeros(r, r); self.n_response];
        for a in 0..r {
            for b in 0..=a {
                let (v, g) = response.eval_with_grad(&[d.pair_rel[a]], &[d.pair_rel[b]]);
                c[(a, b)] = v;
                c[(b, a)] = v;
                for (m, gv) in dc.iter_mut().zip(&g) {
                    m[(a, b)] = *gv;
                    m[(b, a)] = *gv;
                }
            }
        }
        let k = d.covariance(&baseline, noise, &c, &l);
        let chol = Cholesky::factor_jittered(&k)?;
        let alpha = chol.solve(&d.targets);
        let scale = self.init.magnitude_prior_scale;
        let value = gaussian_loglik(&chol, &alpha, &d.targets) + magnitude_penalty(mags.iter(), scale);

        let n = d.n();
        // W = α αᵀ − K⁻¹; dL/dθ = ½ tr(W ∂K/∂θ)
        let mut w = chol.inverse();
        for i in 0..n {
            for j in 0..n {
                w[(i, j)] = alpha[i] * alpha[j] - w[(i, j)];
            }
        }

        let nb = self.baseline_free.len();
        let mut grad = vec![0.0; x.len()];
        let mut bgrad = vec![0.0; baseline.n_params()];
        for pts in &d.key_points {
            for (ii, &i) in pts.iter().enumerate() {
                for &j in &pts[..=ii] {
                    let (_, dk) = baseline.eval_with_grad(&[d.times[i]], &[d.times[j]]);
                    let weight = if i == j { 0.5 * w[(i, i)] } else { w[(i, j)] };
                    for (g, v) in bgrad.iter_mut().zip(&dk) {
                        *g += weight * v;
                    }
                }
            }
        }
        for (k, &i) in self.baseline_free.iter().enumerate() {
            grad[k] = bgrad[i];
        }

        // h_a = Σ_b W_{j(a) j(b)} C_ab l_b
        let mut h = vec![0.0; r];
        for a in 0..r {
            let ja = d.pair_point[a];
            let mut acc = 0.0;
            for b in 0..r {
                let wab = w[(ja, d.pair_point[b])];
                acc += wab * c[(a, b)] * l[b];
                for (p, m) in dc.iter().enumerate() {
                    let weight = if a == b { 0.5 } else if b < a { 1.0 } else { 0.0 };
                    if weight > 0.0 {
                        grad[nb + p] += weight * wab * l[a] * l[b] * m[(a, b)];
                    }
                }
            }
            h[a] = acc;
        }
        let trace_w: f64 = (0..n).map(|i| w[(i, i)]).sum();
        grad[nb + self.n_response] = 0.5 * noise * trace_w;

        let off = nb + self.n_response + 1;
        for (k, m) in mags.iter().enumerate() {
            grad[off + 2 * k] = -m.intercept / (scale * scale);
            grad[off + 2 * k + 1] = -m.slope / (scale * scale) / self.slope_scale;
        }
        for ((&k, &mark), &ha) in d.pair_key.iter().zip(&d.pair_mark).zip(&h[..r]) {
            grad[off + 2 * k] += ha;
            grad[off + 2 * k + 1] += mark * ha / self.slope_scale;
        }
        Ok((value, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::ExactGp;

    fn ev(t: f64, m: f64) -> MediatorEvent {
        MediatorEvent { time: t, mark: m }
    }

    fn toy_segments() -> Vec<TrainingSegment> {
        let mk = |id: &str, shift: f64, events: Vec<MediatorEvent>| TrainingSegment {
            patient_id: id.into(),
            points: (0..16)
                .map(|i| {
                    let t = i as f64 * 0.6;
                    let resp: f64 = events
                        .iter()
                        .filter(|e| in_window(t - e.time, 3.0))
                        .map(|e| 0.02 * e.mark * libm::exp(-(t - e.time - 1.0) * (t - e.time - 1.0)))
                        .sum();
                    OutcomePoint { time: t, value: 5.0 + shift + 0.3 * libm::sin(t) + resp }
                })
                .collect(),
            events,
        };
        vec![mk("a", 0.0, vec![ev(1.0, 40.0), ev(5.5, 20.0)]), mk("b", 0.5, vec![ev(2.0, 30.0)])]
    }

    fn toy_model() -> OutcomeModel {
        OutcomeModel::initial(&OutcomeConfig::default(), toy_segments()).unwrap()
    }

    #[test]
    fn response_causality_and_window() {
        let m = toy_model();
        assert_eq!(m.response_value("a", &[], 2.0), 0.0);
        assert_eq!(m.response_value("a", &[ev(1.0, 30.0)], 0.5), 0.0);
        assert_eq!(m.response_value("a", &[ev(0.0, 30.0)], 4.0), 0.0);
        assert_eq!(m.response_value("a", &[ev(1.0, 30.0)], 1.0), 0.0);
        assert!(m.response_value("a", &[ev(1.0, 30.0)], 2.0) != 0.0);
    }

    #[test]
    fn overlapping_responses_add() {
        let m = toy_model();
        let both = m.response_value("b", &[ev(1.0, 30.0), ev(2.0, 10.0)], 3.0);
        let one = m.response_value("b", &[ev(1.0, 30.0)], 3.0);
        let two = m.response_value("b", &[ev(2.0, 10.0)], 3.0);
        assert!((both - one - two).abs() < 1e-12);
    }

    #[test]
    fn untrained_prior_mean_is_zero() {
        let m = OutcomeModel::untrained(&OutcomeConfig::default()).unwrap();
        let p = m.predict("x", &[], &[0.0, 3.0, 11.0]);
        assert!(p.mean.iter().all(|v| *v == 0.0));
        assert!(p.variance.iter().all(|v| (*v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn baseline_only_matches_exact_gp() {
        let cfg = OutcomeConfig::default();
        let seg = TrainingSegment {
            patient_id: "p".into(),
            events: Vec::new(),
            points: (0..12).map(|i| OutcomePoint { time: i as f64 * 2.0, value: 5.0 + libm::cos(i as f64) }).collect(),
        };
        let m = OutcomeModel::initial(&cfg, vec![seg.clone()]).unwrap();
        let gp = ExactGp::new(
            cfg.baseline_kernel().unwrap(),
            cfg.noise_variance,
            seg.points.iter().map(|p| vec![p.time]).collect(),
            seg.points.iter().map(|p| p.value).collect(),
        )
        .unwrap();
        let q = [0.5, 7.3, 23.0];
        let (gm, gv) = gp.condition().unwrap().predict_marginals(&q.map(|t| vec![t])).unwrap();
        let p = m.predict("p", &[], &q);
        for i in 0..3 {
            assert!((p.mean[i] - gm[i]).abs() < 1e-10);
            assert!((p.variance[i] - gv[i] - cfg.noise_variance).abs() < 1e-10);
        }
        assert!((m.objective() - gp.log_marginal_likelihood().unwrap() - magnitude_penalty([cfg.initial_magnitude()].iter(), 0.1)).abs() < 1e-9);
    }

    #[test]
    fn prediction_decomposes() {
        let m = toy_model();
        let events = [ev(1.5, 25.0), ev(3.0, 50.0)];
        for tau in [0.5, 2.0, 3.5, 5.0, 7.0] {
            let (mean, var) = m.predict_one("a", &events, tau);
            let expected = m.baseline_mean("a", tau) + m.response_value("a", &events, tau);
            assert!((mean - expected).abs() < 1e-12);
            assert!(var >= m.noise_variance());
        }
    }

    #[test]
    fn sampling_is_deterministic_and_degenerate_at_zero_variance() {
        let m = toy_model();
        let q = [1.0, 2.0, 4.0];
        assert_eq!(m.sample("a", &[], &q, 7), m.sample("a", &[], &q, 7));
        let p = OutcomePrediction { mean: vec![1.0, -2.0], variance: vec![0.0, 0.0] };
        assert_eq!(p.sample(3), vec![1.0, -2.0]);
    }

    #[test]
    fn sample_variance_matches_prediction() {
        let m = toy_model();
        let p = m.predict("a", &[ev(1.0, 30.0)], &[2.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let draws: Vec<f64> = (0..n).map(|_| p.sample_with(&mut rng)[0]).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1) as f64;
        assert!((var / p.variance[0] - 1.0).abs() < 0.05, "{var} vs {}", p.variance[0]);
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let init = toy_model();
        let problem = Problem::new(&init);
        let mut x = problem.initial_point(&init);
        x[problem.baseline_free.len() + 1] += 0.2;
        let (_, g) = problem.evaluate(&x).unwrap();
        for i in 0..x.len() {
            let h = 1e-5;
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (problem.evaluate(&xp).unwrap().0 - problem.evaluate(&xm).unwrap().0) / (2.0 * h);
            let tol = 1e-4 * (1.0 + fd.abs());
            assert!((fd - g[i]).abs() < tol, "param {i}: fd {fd} vs analytic {}", g[i]);
        }
    }

    #[test]
    fn zero_iterations_keeps_initial_values() {
        let cfg = OutcomeConfig { optimizer: MaximizeOptions { max_iters: 0, tol: 1e-6 }, ..Default::default() };
        let (m, report) = fit_segments(toy_segments(), &cfg).unwrap();
        assert_eq!(m.baseline_kernel(), &cfg.baseline_kernel().unwrap());
        assert_eq!(m.response_kernel(), &cfg.response_kernel().unwrap());
        assert!(m.magnitudes().values().all(|v| (v.intercept - 0.1).abs() < 1e-15 && (v.slope - 0.1).abs() < 1e-15));
        assert_eq!(report.trace.len(), 1);
    }

    #[test]
    fn fit_increases_objective_and_keeps_frozen_parameters() {
        let cfg = OutcomeConfig { optimizer: MaximizeOptions { max_iters: 40, tol: 1e-8 }, ..Default::default() };
        let (m, report) = fit_segments(toy_segments(), &cfg).unwrap();
        assert!(report.trace.windows(2).all(|w| w[1] >= w[0]));
        assert!(report.trace.last().unwrap() > &report.trace[0]);
        assert!((m.objective() - report.trace.last().unwrap()).abs() < 1e-8);
        match m.baseline_kernel() {
            KernelSpec::Sum { terms } => match &terms[1] {
                KernelSpec::Periodic { period, .. } => assert_eq!(*period, 24.0),
                other => panic!("{other:?}"),
            },
            other => panic!("{other:?}"),
        }
        assert_eq!(m.effective_window(), 3.0);
    }

    #[test]
    fn empty_data_is_rejected() {
        assert_eq!(fit_segments(Vec::new(), &OutcomeConfig::default()).unwrap_err(), Error::EmptyData);
    }
}
