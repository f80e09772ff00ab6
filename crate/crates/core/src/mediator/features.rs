use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{MediatorEvent, OutcomePoint};

/// The realised past seen from a query time `τ`: events strictly before
/// `τ` and outcomes at or before `τ`. Both slices are sorted by time and may
/// extend beyond `τ`; entries after the cut are ignored.
#[derive(Clone, Copy, Debug, Default)]
pub struct History<'a> {
    pub events: &'a [MediatorEvent],
    pub outcomes: &'a [OutcomePoint],
}

impl<'a> History<'a> {
    pub fn new(events: &'a [MediatorEvent], outcomes: &'a [OutcomePoint]) -> Self {
        History { events, outcomes }
    }

    /// Events with `t < τ`.
    pub fn events_before(&self, tau: f64) -> &'a [MediatorEvent] {
        &self.events[..self.events.partition_point(|e| e.time < tau)]
    }

    /// Outcomes with `t ≤ τ`.
    pub fn outcomes_until(&self, tau: f64) -> &'a [OutcomePoint] {
        &self.outcomes[..self.outcomes.partition_point(|o| o.time <= tau)]
    }
}

/// Settings shared by every history feature map.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagSettings {
    pub q_m: usize,
    pub q_o: usize,
    pub lag_cap: f64,
    /// Outcome value used for missing outcome slots.
    pub outcome_padding: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LagFeatures {
    /// Most recent first.
    pub mediator_lags: Vec<f64>,
    /// `(τ − t_j, y_j)`, most recent first.
    pub outcome_pairs: Vec<(f64, f64)>,
}

pub fn lag_features(history: &History<'_>, tau: f64, settings: &LagSettings) -> LagFeatures {
    let cap = settings.lag_cap;
    let events = history.events_before(tau);
    let mut mediator_lags = vec![cap; settings.q_m];
    for (slot, e) in mediator_lags.iter_mut().zip(events.iter().rev()) {
        *slot = (tau - e.time).min(cap);
    }
    let outcomes = history.outcomes_until(tau);
    let mut outcome_pairs = vec![(cap, settings.outcome_padding); settings.q_o];
    for (slot, o) in outcome_pairs.iter_mut().zip(outcomes.iter().rev()) {
        *slot = ((tau - o.time).min(cap), o.value);
    }
    LagFeatures { mediator_lags, outcome_pairs }
}

/// Input vector of one intensity component.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMap {
    /// The `q_m` most recent event lags.
    MediatorLags,
    /// `(lag, value)` of the `q_o` most recent outcomes, flattened.
    OutcomePairs,
    /// The query time itself (history-free).
    AbsoluteTime,
}

impl FeatureMap {
    pub fn dim(self, settings: &LagSettings) -> usize {
        match self {
            FeatureMap::MediatorLags => settings.q_m,
            FeatureMap::OutcomePairs => 2 * settings.q_o,
            FeatureMap::AbsoluteTime => 1,
        }
    }

    pub fn depends_on_history(self) -> bool {
        !matches!(self, FeatureMap::AbsoluteTime)
    }

    pub fn extract(self, history: &History<'_>, tau: f64, settings: &LagSettings) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim(settings));
        self.extract_into(history, tau, settings, &mut out);
        out
    }

    pub(crate) fn extract_into(self, history: &History<'_>, tau: f64, settings: &LagSettings, out: &mut Vec<f64>) {
        self.extract_from(history.events_before(tau), history.outcomes_until(tau), tau, settings, out)
    }

    /// Features at `tau` from a history already cut to the relevant past.
    pub(crate) fn extract_from(
        self,
        events: &[MediatorEvent],
        outcomes: &[OutcomePoint],
        tau: f64,
        settings: &LagSettings,
        out: &mut Vec<f64>,
    ) {
        out.clear();
        match self {
            FeatureMap::MediatorLags => {
                for k in 0..settings.q_m {
                    let lag = match events.len().checked_sub(k + 1) {
                        Some(i) => (tau - events[i].time).min(settings.lag_cap),
                        None => settings.lag_cap,
                    };
                    out.push(lag);
                }
            }
            FeatureMap::OutcomePairs => {
                for k in 0..settings.q_o {
                    match outcomes.len().checked_sub(k + 1) {
                        Some(i) => {
                            out.push((tau - outcomes[i].time).min(settings.lag_cap));
                            out.push(outcomes[i].value);
                        }
                        None => {
                            out.push(settings.lag_cap);
                            out.push(settings.outcome_padding);
                        }
                    }
                }
            }
            FeatureMap::AbsoluteTime => out.push(tau),
        }
    }
}

/// Regular grid of `m` points over a box. The per-dimension counts are built
/// from the prime factors of `m` (largest first), each assigned to the
/// dimension with the most remaining `range / lengthscale` per grid point.
pub fn inducing_grid(m: usize, bounds: &[(f64, f64)], lengthscales: &[f64]) -> Vec<Vec<f64>> {
    let d = bounds.len();
    let mut counts = vec![1usize; d];
    if d == 0 {
        return Vec::new();
    }
    let need: Vec<f64> = bounds.iter().zip(lengthscales).map(|((lo, hi), l)| (hi - lo).abs() / l).collect();
    let mut factors = prime_factors(m);
    factors.sort_unstable_by(|a, b| b.cmp(a));
    for f in factors {
        let mut best = 0;
        for k in 1..d {
            if need[k] / counts[k] as f64 > need[best] / counts[best] as f64 {
                best = k;
            }
        }
        counts[best] *= f;
    }
    let axes: Vec<Vec<f64>> = bounds
        .iter()
        .zip(&counts)
        .map(|(&(lo, hi), &c)| {
            if c == 1 {
                vec![0.5 * (lo + hi)]
            } else {
                (0..c).map(|i| lo + (hi - lo) * i as f64 / (c - 1) as f64).collect()
            }
        })
        .collect();
    let total: usize = counts.iter().product();
    (0..total)
        .map(|mut idx| {
            let mut point = vec![0.0; d];
            for k in (0..d).rev() {
                point[k] = axes[k][idx % counts[k]];
                idx /= counts[k];
            }
            point
        })
        .collect()
}

fn prime_factors(mut m: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut p = 2;
    while p * p <= m {
        while m.is_multiple_of(p) {
            out.push(p);
            m /= p;
        }
        p += 1;
    }
    if m > 1 {
        out.push(m);
    }
    out
}
