//! Path-specific counterfactuals, effect estimation and glycemia metrics.
//!
//! With `[d, i]` denoting the treatment seen by the direct path (outcome
//! model) and the indirect path (mediator model), the effects of the
//! intervention are contrasts of rollouts under three regimes:
//! `NDE = Y[1,1] − Y[0,1]`, `NIE = Y[0,1] − Y[0,0]` and `TE = NDE + NIE`.

mod ablation;
pub mod benchmark;

pub use ablation::{
    fit_components, make_ablation, required_components, AblationSpec, ComponentBank, ComponentKey, DirectArrow,
    FittedComponent, TrainingData,
};

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::data::Regime;
use crate::error::{Error, Result};
use crate::mediator::MediatorModel;
use crate::outcome::OutcomeModel;
use crate::sampler::{rollout, NoiseReservoir, RolloutPlan, Trajectory};

/// Value assigned to one causal path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathValue {
    /// Untreated (`∅`).
    Natural,
    /// Treated at `t̃_a`.
    Treated,
}

impl PathValue {
    pub fn regime(self) -> Regime {
        match self {
            PathValue::Natural => Regime::Pre,
            PathValue::Treated => Regime::Post,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PathIntervention {
    pub direct: PathValue,
    pub indirect: PathValue,
}

impl PathIntervention {
    /// `[0,0]`: the factual untreated regime.
    pub const NATURAL: Self = PathIntervention { direct: PathValue::Natural, indirect: PathValue::Natural };
    /// `[0,1]`: only the mediator path is treated.
    pub const INDIRECT: Self = PathIntervention { direct: PathValue::Natural, indirect: PathValue::Treated };
    /// `[1,1]`: the factual treated regime.
    pub const TREATED: Self = PathIntervention { direct: PathValue::Treated, indirect: PathValue::Treated };
    /// `[1,0]`: only the outcome path is treated. Not used by the effects.
    pub const DIRECT: Self = PathIntervention { direct: PathValue::Treated, indirect: PathValue::Natural };

    pub const ALL: [Self; 4] = [Self::NATURAL, Self::INDIRECT, Self::DIRECT, Self::TREATED];

    /// `[d,i]` with `0` for natural and `1` for treated.
    pub fn label(&self) -> &'static str {
        match (self.direct, self.indirect) {
            (PathValue::Natural, PathValue::Natural) => "[0,0]",
            (PathValue::Natural, PathValue::Treated) => "[0,1]",
            (PathValue::Treated, PathValue::Natural) => "[1,0]",
            (PathValue::Treated, PathValue::Treated) => "[1,1]",
        }
    }

    pub fn from_label(label: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.label() == label)
            .ok_or_else(|| Error::InvalidInput(alloc::format!("unknown intervention `{label}`")))
    }
}

impl fmt::Display for PathIntervention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Fitted outcome and mediator models of one regime. Components are shared
/// so that ablations can reuse a fit without copying it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointModel {
    pub outcome: Arc<OutcomeModel>,
    pub mediator: Arc<MediatorModel>,
}

impl JointModel {
    pub fn new(outcome: OutcomeModel, mediator: MediatorModel) -> Self {
        JointModel { outcome: Arc::new(outcome), mediator: Arc::new(mediator) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeModels {
    pub pre: JointModel,
    pub post: JointModel,
}

impl RegimeModels {
    pub fn regime(&self, regime: Regime) -> &JointModel {
        match regime {
            Regime::Pre => &self.pre,
            Regime::Post => &self.post,
        }
    }
}

/// Outcome model of the direct path's regime and mediator model of the
/// indirect path's regime.
pub fn assemble_counterfactual(
    models: &RegimeModels,
    intervention: PathIntervention,
) -> (Arc<OutcomeModel>, Arc<MediatorModel>) {
    (
        models.regime(intervention.direct.regime()).outcome.clone(),
        models.regime(intervention.indirect.regime()).mediator.clone(),
    )
}

/// The three rollouts of one replicate, all driven by the same reservoir.
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledRollouts {
    pub natural: Trajectory,
    pub indirect: Trajectory,
    pub treated: Trajectory,
}

impl CoupledRollouts {
    pub fn run(models: &RegimeModels, plan: &RolloutPlan, reservoir: &NoiseReservoir) -> Result<Self> {
        let run = |p: PathIntervention| {
            let (outcome, mediator) = assemble_counterfactual(models, p);
            rollout(&outcome, &mediator, plan, p, reservoir)
        };
        Ok(CoupledRollouts {
            natural: run(PathIntervention::NATURAL)?,
            indirect: run(PathIntervention::INDIRECT)?,
            treated: run(PathIntervention::TREATED)?,
        })
    }

    pub fn trajectories(&self) -> [&Trajectory; 3] {
        [&self.natural, &self.indirect, &self.treated]
    }

    pub fn effects(&self) -> ReplicateEffects {
        let value = |t: &Trajectory, k: usize| t.outcomes[k].value;
        let n = self.natural.outcomes.len();
        let mut out = ReplicateEffects::default();
        for k in 0..n {
            let nde = value(&self.treated, k) - value(&self.indirect, k);
            let nie = value(&self.indirect, k) - value(&self.natural, k);
            out.nde.push(nde);
            out.nie.push(nie);
            out.te.push(nde + nie);
        }
        out
    }
}

/// Effect contrasts of one replicate on the query grid.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplicateEffects {
    pub nde: Vec<f64>,
    pub nie: Vec<f64>,
    pub te: Vec<f64>,
}

/// Pointwise Monte Carlo mean and its standard error.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EffectSeries {
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub grid_h: Vec<f64>,
    pub nde: EffectSeries,
    pub nie: EffectSeries,
    pub te: EffectSeries,
    /// Replicates per patient.
    pub n_replicates: usize,
    pub seed: u64,
}

impl EffectEstimate {
    /// Aggregates replicates in an order-independent way (values are sorted
    /// before summation). `te.mean` is `nde.mean + nie.mean` exactly.
    pub fn from_replicates(grid: &[f64], replicates: &[ReplicateEffects], n_replicates: usize, seed: u64) -> Result<Self> {
        if replicates.is_empty() {
            return Err(Error::InvalidInput("at least one replicate is required".into()));
        }
        if replicates.iter().any(|r| r.nde.len() != grid.len() || r.nie.len() != grid.len() || r.te.len() != grid.len())
        {
            return Err(Error::GridMismatch("replicate length differs from the grid".into()));
        }
        let nde = series(grid.len(), replicates, |r| &r.nde);
        let nie = series(grid.len(), replicates, |r| &r.nie);
        let mut te = series(grid.len(), replicates, |r| &r.te);
        te.mean = nde.mean.iter().zip(&nie.mean).map(|(a, b)| a + b).collect();
        Ok(EffectEstimate { grid_h: grid.to_vec(), nde, nie, te, n_replicates, seed })
    }
}

fn series(n: usize, reps: &[ReplicateEffects], pick: impl Fn(&ReplicateEffects) -> &Vec<f64>) -> EffectSeries {
    let count = reps.len() as f64;
    let mut out = EffectSeries { mean: Vec::with_capacity(n), se: Vec::with_capacity(n) };
    let mut column = Vec::with_capacity(reps.len());
    for k in 0..n {
        column.clear();
        column.extend(reps.iter().map(|r| pick(r)[k]));
        column.sort_by(f64::total_cmp);
        let mean = column.iter().sum::<f64>() / count;
        let se = if reps.len() > 1 {
            let mut dev: Vec<f64> = column.iter().map(|v| (v - mean) * (v - mean)).collect();
            dev.sort_by(f64::total_cmp);
            libm::sqrt(dev.iter().sum::<f64>() / (count - 1.0) / count)
        } else {
            0.0
        };
        out.mean.push(mean);
        out.se.push(se);
    }
    out
}

/// A query for effect trajectories after an intervention at `t_a`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectQuery {
    pub patients: Vec<String>,
    pub t_a: f64,
    pub grid: Vec<f64>,
    pub n_replicates: usize,
    pub seed: u64,
}

impl EffectQuery {
    pub fn validate(&self) -> Result<()> {
        if self.n_replicates == 0 {
            return Err(Error::InvalidInput("n_replicates must be at least 1".into()));
        }
        if self.patients.is_empty() {
            return Err(Error::InvalidInput("at least one patient is required".into()));
        }
        if self.grid.is_empty() || self.grid.iter().any(|t| !(*t > self.t_a)) {
            return Err(Error::InvalidInput("grid points must lie after the intervention time".into()));
        }
        if self.grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidInput("grid must be strictly increasing".into()));
        }
        Ok(())
    }

    /// Rollout plan for patient `index`, starting at `t_a` with an empty
    /// history.
    pub fn plan(&self, index: usize) -> RolloutPlan {
        RolloutPlan {
            patient_id: self.patients[index].clone(),
            start: self.t_a,
            end: *self.grid.last().expect("validated grid is non-empty"),
            grid: self.grid.clone(),
        }
    }

    /// The reservoir of replicate `r` of patient `index`.
    pub fn reservoir(&self, index: usize, r: usize) -> NoiseReservoir {
        NoiseReservoir::substream(self.seed, (index * self.n_replicates + r) as u64)
    }

    /// Every `(patient index, replicate)` pair of the query.
    pub fn jobs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.patients.len()).flat_map(move |i| (0..self.n_replicates).map(move |r| (i, r)))
    }

    /// The coupled rollouts of one job.
    pub fn run_job(&self, models: &RegimeModels, index: usize, r: usize) -> Result<CoupledRollouts> {
        CoupledRollouts::run(models, &self.plan(index), &self.reservoir(index, r))
    }

    pub fn aggregate(&self, replicates: &[ReplicateEffects]) -> Result<EffectEstimate> {
        EffectEstimate::from_replicates(&self.grid, replicates, self.n_replicates, self.seed)
    }
}

/// Effects pooled over every patient and replicate of `query`.
pub fn estimate_effects(models: &RegimeModels, query: &EffectQuery) -> Result<EffectEstimate> {
    query.validate()?;
    let reps = query.jobs().map(|(i, r)| Ok(query.run_job(models, i, r)?.effects())).collect::<Result<Vec<_>>>()?;
    query.aggregate(&reps)
}

/// Effects of each patient of `query` separately, in query order.
pub fn estimate_patient_effects(models: &RegimeModels, query: &EffectQuery) -> Result<Vec<EffectEstimate>> {
    query.validate()?;
    (0..query.patients.len())
        .map(|i| {
            let reps = (0..query.n_replicates)
                .map(|r| Ok(query.run_job(models, i, r)?.effects()))
                .collect::<Result<Vec<_>>>()?;
            query.aggregate(&reps)
        })
        .collect()
}

/// Percentages of grid points with value `≤ low` and with value `≥ high`.
/// Points are weighted equally.
pub fn glycemia_metrics(values: &[f64], low: f64, high: f64) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::EmptyData);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("outcome values must be finite".into()));
    }
    let n = values.len() as f64;
    let hypo = values.iter().filter(|v| **v <= low).count() as f64;
    let above = values.iter().filter(|v| **v >= high).count() as f64;
    Ok((100.0 * hypo / n, 100.0 * above / n))
}

/// Mean squared pointwise difference of two trajectories on one grid.
pub fn effect_mse(estimated: &[f64], oracle: &[f64]) -> Result<f64> {
    if estimated.len() != oracle.len() {
        return Err(Error::GridMismatch(alloc::format!("{} vs {} points", estimated.len(), oracle.len())));
    }
    if estimated.is_empty() {
        return Err(Error::EmptyData);
    }
    Ok(estimated.iter().zip(oracle).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / estimated.len() as f64)
}
