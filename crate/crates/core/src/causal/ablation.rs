//! Benchmark ablations assembled from a cache of fitted components.

use alloc::collections::BTreeMap;
use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::causal::{JointModel, RegimeModels};
use crate::data::{PatientRecord, Regime};
use crate::error::{Error, Result};
use crate::mediator::{fit_mediator, MediatorConfig, MediatorModel, MediatorVariant};
use crate::outcome::{fit_segments, OutcomeConfig, OutcomeModel, ResponseShape, TrainingSegment};

/// Whether the intervention may act on the outcome other than through the
/// mediator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectArrow {
    #[default]
    Present,
    /// One outcome model fitted on both regimes pooled.
    Absent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AblationSpec {
    pub mediator_variant: MediatorVariant,
    pub response_variant: ResponseShape,
    pub direct_arrow: DirectArrow,
}

impl AblationSpec {
    pub const OUR: Self = Self::of(MediatorVariant::Interacting, ResponseShape::Nonparametric, DirectArrow::Present);
    pub const M1: Self = Self::of(MediatorVariant::NonInteracting, ResponseShape::Constant, DirectArrow::Present);
    pub const M2: Self = Self::of(MediatorVariant::NonInteracting, ResponseShape::Nonparametric, DirectArrow::Present);
    pub const M3: Self = Self::of(MediatorVariant::Interacting, ResponseShape::Constant, DirectArrow::Present);
    pub const H22: Self = Self::of(MediatorVariant::Interacting, ResponseShape::Nonparametric, DirectArrow::Absent);

    pub const NAMED: [Self; 5] = [Self::OUR, Self::M1, Self::M2, Self::M3, Self::H22];

    const fn of(mediator_variant: MediatorVariant, response_variant: ResponseShape, direct_arrow: DirectArrow) -> Self {
        AblationSpec { mediator_variant, response_variant, direct_arrow }
    }

    /// Benchmark row name, or `None` for an unnamed combination.
    pub fn name(&self) -> Option<&'static str> {
        const NAMES: [&str; 5] = ["Our", "M1", "M2", "M3", "H22"];
        Self::NAMED.iter().position(|s| s == self).map(|i| NAMES[i])
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::NAMED
            .into_iter()
            .find(|s| s.name() == Some(name))
            .ok_or_else(|| Error::InvalidInput(alloc::format!("unknown ablation `{name}`")))
    }
}

/// Training records of both regimes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingData {
    pub pre: Vec<PatientRecord>,
    pub post: Vec<PatientRecord>,
}

impl TrainingData {
    pub fn regime(&self, regime: Regime) -> &[PatientRecord] {
        match regime {
            Regime::Pre => &self.pre,
            Regime::Post => &self.post,
        }
    }
}

fn segments(records: &[PatientRecord]) -> impl Iterator<Item = TrainingSegment> + '_ {
    records.iter().map(|r| TrainingSegment {
        patient_id: r.patient_id().into(),
        events: r.events.events.clone(),
        points: r.outcomes.points.clone(),
    })
}

/// One independently fittable component.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ComponentKey {
    Outcome { shape: ResponseShape, regime: Regime },
    /// Fitted on both regimes; segments of one patient share a baseline.
    PooledOutcome { shape: ResponseShape },
    Mediator { variant: MediatorVariant, regime: Regime },
}

#[derive(Clone, Debug, PartialEq)]
pub enum FittedComponent {
    Outcome(Arc<OutcomeModel>),
    Mediator(Arc<MediatorModel>),
}

impl ComponentKey {
    pub fn fit(&self, data: &TrainingData, outcome: &OutcomeConfig, mediator: &MediatorConfig) -> Result<FittedComponent> {
        match *self {
            ComponentKey::Outcome { shape, regime } => {
                let config = OutcomeConfig { response_shape: shape, ..outcome.clone() };
                let (model, _) = fit_segments(segments(data.regime(regime)).collect(), &config)?;
                Ok(FittedComponent::Outcome(Arc::new(model)))
            }
            ComponentKey::PooledOutcome { shape } => {
                let config = OutcomeConfig { response_shape: shape, ..outcome.clone() };
                let (model, _) = fit_segments(segments(&data.pre).chain(segments(&data.post)).collect(), &config)?;
                Ok(FittedComponent::Outcome(Arc::new(model)))
            }
            ComponentKey::Mediator { variant, regime } => {
                let config = MediatorConfig { variant, ..mediator.clone() };
                let (model, _) = fit_mediator(data.regime(regime), &config)?;
                Ok(FittedComponent::Mediator(Arc::new(model)))
            }
        }
    }
}

/// Components needed by `specs`, sorted and without duplicates.
pub fn required_components(specs: &[AblationSpec]) -> Vec<ComponentKey> {
    let mut keys = Vec::new();
    for s in specs {
        for regime in [Regime::Pre, Regime::Post] {
            keys.push(ComponentKey::Mediator { variant: s.mediator_variant, regime });
            match s.direct_arrow {
                DirectArrow::Present => keys.push(ComponentKey::Outcome { shape: s.response_variant, regime }),
                DirectArrow::Absent => keys.push(ComponentKey::PooledOutcome { shape: s.response_variant }),
            }
        }
    }
    keys.sort();
    keys.dedup();
    keys
}

/// Fitted components keyed by what they were fitted on.
#[derive(Clone, Debug, Default)]
pub struct ComponentBank {
    entries: BTreeMap<ComponentKey, FittedComponent>,
}

impl ComponentBank {
    pub fn insert(&mut self, key: ComponentKey, component: FittedComponent) {
        self.entries.insert(key, component);
    }

    pub fn contains(&self, key: &ComponentKey) -> bool {
        self.entries.contains_key(key)
    }

    /// A bank holding the components of an existing model pair under the
    /// full model's keys.
    pub fn from_models(models: &RegimeModels) -> Self {
        let mut bank = ComponentBank::default();
        for regime in [Regime::Pre, Regime::Post] {
            let j = models.regime(regime);
            bank.insert(
                ComponentKey::Outcome { shape: ResponseShape::Nonparametric, regime },
                FittedComponent::Outcome(j.outcome.clone()),
            );
            bank.insert(
                ComponentKey::Mediator { variant: MediatorVariant::Interacting, regime },
                FittedComponent::Mediator(j.mediator.clone()),
            );
        }
        bank
    }

    fn outcome(&self, key: ComponentKey) -> Result<Arc<OutcomeModel>> {
        match self.entries.get(&key) {
            Some(FittedComponent::Outcome(m)) => Ok(m.clone()),
            _ => Err(Error::InvalidInput(alloc::format!("missing outcome component {key:?}"))),
        }
    }

    fn mediator(&self, key: ComponentKey) -> Result<Arc<MediatorModel>> {
        match self.entries.get(&key) {
            Some(FittedComponent::Mediator(m)) => Ok(m.clone()),
            _ => Err(Error::InvalidInput(alloc::format!("missing mediator component {key:?}"))),
        }
    }
}

/// Fits every component `specs` need, one after another.
pub fn fit_components(
    specs: &[AblationSpec],
    data: &TrainingData,
    outcome: &OutcomeConfig,
    mediator: &MediatorConfig,
) -> Result<ComponentBank> {
    let mut bank = ComponentBank::default();
    for key in required_components(specs) {
        let fitted = key.fit(data, outcome, mediator)?;
        bank.insert(key, fitted);
    }
    Ok(bank)
}

/// The regime pair of `spec`. Without the direct arrow both regimes share
/// one outcome model object.
pub fn make_ablation(spec: &AblationSpec, bank: &ComponentBank) -> Result<RegimeModels> {
    let pooled = match spec.direct_arrow {
        DirectArrow::Absent => Some(bank.outcome(ComponentKey::PooledOutcome { shape: spec.response_variant })?),
        DirectArrow::Present => None,
    };
    let joint = |regime: Regime| -> Result<JointModel> {
        let outcome = match &pooled {
            Some(m) => m.clone(),
            None => bank.outcome(ComponentKey::Outcome { shape: spec.response_variant, regime })?,
        };
        let mediator = bank.mediator(ComponentKey::Mediator { variant: spec.mediator_variant, regime })?;
        Ok(JointModel { outcome, mediator })
    };
    Ok(RegimeModels { pre: joint(Regime::Pre)?, post: joint(Regime::Post)? })
}
