//! Ogata thinning and sequential counterfactual rollouts driven by a
//! replayable noise reservoir.

use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::causal::PathIntervention;
use crate::data::{MediatorEvent, OutcomePoint};
use crate::error::{Error, Result};
use crate::mediator::{History, MediatorModel};
use crate::outcome::OutcomeModel;

/// Points in the intensity probe of each inter-event window.
pub const PROBE_POINTS: usize = 64;
/// Safety factor applied to the probed maximum.
pub const BOUND_FACTOR: f64 = 1.5;
/// Bound doublings allowed per window before giving up.
pub const MAX_ESCALATIONS: usize = 10;

/// Seed of three independent random streams (thinning uniforms, mark
/// normals, outcome normals). Distinct substreams of one seed never overlap.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NoiseReservoir {
    pub seed: u64,
    pub substream: u64,
}

impl NoiseReservoir {
    pub fn new(seed: u64) -> Self {
        NoiseReservoir { seed, substream: 0 }
    }

    /// Reservoir `index` derived from `seed`, e.g. one per replicate.
    pub fn substream(seed: u64, index: u64) -> Self {
        NoiseReservoir { seed, substream: index }
    }

    fn stream(&self, k: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.substream.wrapping_mul(4).wrapping_add(k));
        rng
    }

    /// Fresh generators positioned at the start of every stream.
    pub fn streams(&self) -> NoiseStreams {
        NoiseStreams { thinning: self.stream(0), marks: self.stream(1), outcomes: self.stream(2) }
    }
}

pub struct NoiseStreams {
    pub thinning: ChaCha8Rng,
    pub marks: ChaCha8Rng,
    pub outcomes: ChaCha8Rng,
}

impl NoiseStreams {
    fn exponential(&mut self, rate: f64) -> f64 {
        let u: f64 = self.thinning.random();
        -libm::log(1.0 - u) / rate
    }

    fn uniform(&mut self) -> f64 {
        self.thinning.random()
    }

    fn mark_normal(&mut self) -> f64 {
        self.marks.sample(StandardNormal)
    }

    fn outcome_normal(&mut self) -> f64 {
        self.outcomes.sample(StandardNormal)
    }
}

/// Thins `mediator` over `[start, end)` with the outcome history fixed to
/// `outcomes` (which must not change inside the window), appending accepted
/// events to `events`.
fn thin_window(
    mediator: &MediatorModel,
    events: &mut Vec<MediatorEvent>,
    outcomes: &[OutcomePoint],
    start: f64,
    end: f64,
    noise: &mut NoiseStreams,
) -> Result<()> {
    let mut current = start;
    while current < end {
        let mut bound = {
            let history = History::new(events, outcomes);
            let mut max = 0.0f64;
            for k in 0..PROBE_POINTS {
                let tau = current + (end - current) * k as f64 / (PROBE_POINTS - 1) as f64;
                max = max.max(mediator.expected_intensity(tau, &history));
            }
            BOUND_FACTOR * max
        };
        if !(bound > 0.0) {
            return Ok(());
        }
        let mut escalations = 0;
        let mut t = current;
        let accepted = loop {
            t += noise.exponential(bound);
            if t >= end {
                break None;
            }
            let lambda = mediator.expected_intensity(t, &History::new(events, outcomes));
            if lambda > bound {
                escalations += 1;
                if escalations > MAX_ESCALATIONS {
                    return Err(Error::BoundEscalation(MAX_ESCALATIONS));
                }
                bound *= 2.0;
                t = current;
                continue;
            }
            if noise.uniform() * bound <= lambda {
                break Some(t);
            }
        };
        match accepted {
            None => return Ok(()),
            Some(t) => {
                let mark = mediator.marks().mark_from_normal(t, noise.mark_normal());
                events.push(MediatorEvent { time: t, mark });
                current = t;
            }
        }
    }
    Ok(())
}

/// Samples events on `[start, end)` given a fixed outcome path. Windows are
/// split at every outcome time.
pub fn sample_events(
    mediator: &MediatorModel,
    outcomes: &[OutcomePoint],
    start: f64,
    end: f64,
    reservoir: &NoiseReservoir,
) -> Result<Vec<MediatorEvent>> {
    if !(end > start) {
        return Err(Error::InvalidInput("sampling window must have positive length".into()));
    }
    let mut noise = reservoir.streams();
    let mut events = Vec::new();
    let mut a = start;
    for o in outcomes.iter().filter(|o| o.time > start && o.time < end) {
        let seen = &outcomes[..outcomes.partition_point(|p| p.time < o.time)];
        thin_window(mediator, &mut events, seen, a, o.time, &mut noise)?;
        a = o.time;
    }
    let seen = &outcomes[..outcomes.partition_point(|p| p.time < end)];
    thin_window(mediator, &mut events, seen, a, end, &mut noise)?;
    Ok(events)
}

/// Time span and outcome grid of one rollout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutPlan {
    pub patient_id: String,
    pub start: f64,
    pub end: f64,
    pub grid: Vec<f64>,
}

impl RolloutPlan {
    pub fn validate(&self) -> Result<()> {
        if !(self.end > self.start) {
            return Err(Error::InvalidInput("rollout end must follow its start".into()));
        }
        if self.grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidInput("rollout grid must be strictly increasing".into()));
        }
        if self.grid.iter().any(|t| !(*t > self.start && *t <= self.end)) {
            return Err(Error::InvalidInput("rollout grid must lie in (start, end]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub patient_id: String,
    pub intervention: PathIntervention,
    pub events: Vec<MediatorEvent>,
    /// One sampled value per grid point.
    pub outcomes: Vec<OutcomePoint>,
}

/// Alternates thinning on each inter-grid window with an outcome draw at
/// the next grid point; sampled outcomes (with observation noise) join the
/// history seen by the mediator.
pub fn rollout(
    outcome: &OutcomeModel,
    mediator: &MediatorModel,
    plan: &RolloutPlan,
    intervention: PathIntervention,
    reservoir: &NoiseReservoir,
) -> Result<Trajectory> {
    plan.validate()?;
    let mut noise = reservoir.streams();
    let mut events = Vec::new();
    let mut outcomes: Vec<OutcomePoint> = Vec::with_capacity(plan.grid.len());
    let mut a = plan.start;
    for &q in &plan.grid {
        thin_window(mediator, &mut events, &outcomes, a, q, &mut noise)?;
        let (mean, var) = outcome.predict_one(&plan.patient_id, &events, q);
        let value = mean + libm::sqrt(var.max(0.0)) * noise.outcome_normal();
        outcomes.push(OutcomePoint { time: q, value });
        a = q;
    }
    if a < plan.end {
        thin_window(mediator, &mut events, &outcomes, a, plan.end, &mut noise)?;
    }
    Ok(Trajectory { patient_id: plan.patient_id.clone(), intervention, events, outcomes })
}

/// `n` equally spaced grid points on `(start, start + span]`.
pub fn regular_grid(start: f64, span: f64, n: usize) -> Vec<f64> {
    (1..=n).map(|i| start + span * i as f64 / n as f64).collect()
}
