//! Observed data for one patient in one regime.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Observation period relative to the intervention.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Pre,
    Post,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Pre => "pre",
            Regime::Post => "post",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pre" => Ok(Regime::Pre),
            "post" => Ok(Regime::Post),
            other => Err(Error::InvalidInput(format!("unknown regime `{other}`"))),
        }
    }
}

/// A mediator occurrence: time in hours and a positive mark (grams of
/// carbohydrate for meals).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MediatorEvent {
    pub time: f64,
    pub mark: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomePoint {
    pub time: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventSequence {
    pub patient_id: String,
    pub regime: Regime,
    pub events: Vec<MediatorEvent>,
    pub horizon: f64,
}

impl EventSequence {
    /// Validated constructor: times strictly increasing inside `[0, horizon]`,
    /// marks positive and finite.
    pub fn new(patient_id: impl Into<String>, regime: Regime, events: Vec<MediatorEvent>, horizon: f64) -> Result<Self> {
        let seq = EventSequence { patient_id: patient_id.into(), regime, events, horizon };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::invalid("horizon", self.horizon));
        }
        let mut prev = f64::NEG_INFINITY;
        for (i, e) in self.events.iter().enumerate() {
            if !e.time.is_finite() || e.time < 0.0 || e.time > self.horizon {
                return Err(Error::InvalidInput(format!(
                    "event {i} of `{}` at t={} lies outside [0, {}]",
                    self.patient_id, e.time, self.horizon
                )));
            }
            if e.time <= prev {
                return Err(Error::InvalidInput(format!(
                    "event times of `{}` are not strictly increasing at index {i}",
                    self.patient_id
                )));
            }
            if !(e.mark > 0.0) || !e.mark.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "event {i} of `{}` has non-positive mark {}",
                    self.patient_id, e.mark
                )));
            }
            prev = e.time;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSeries {
    pub patient_id: String,
    pub regime: Regime,
    pub points: Vec<OutcomePoint>,
}

impl OutcomeSeries {
    /// Validated constructor: strictly increasing non-negative times, finite values.
    pub fn new(patient_id: impl Into<String>, regime: Regime, points: Vec<OutcomePoint>) -> Result<Self> {
        let s = OutcomeSeries { patient_id: patient_id.into(), regime, points };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let mut prev = f64::NEG_INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            if !p.time.is_finite() || p.time < 0.0 || !p.value.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "outcome {i} of `{}` is not a finite point at t >= 0",
                    self.patient_id
                )));
            }
            if p.time <= prev {
                return Err(Error::InvalidInput(format!(
                    "outcome times of `{}` are not strictly increasing at index {i}",
                    self.patient_id
                )));
            }
            prev = p.time;
        }
        Ok(())
    }
}

/// Aligned mediator and outcome observations for one patient-regime.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub events: EventSequence,
    pub outcomes: OutcomeSeries,
}

impl PatientRecord {
    pub fn new(events: EventSequence, outcomes: OutcomeSeries) -> Result<Self> {
        if events.patient_id != outcomes.patient_id || events.regime != outcomes.regime {
            return Err(Error::InvalidInput(format!(
                "event sequence `{}`/{} does not match outcome series `{}`/{}",
                events.patient_id, events.regime, outcomes.patient_id, outcomes.regime
            )));
        }
        Ok(PatientRecord { events, outcomes })
    }

    pub fn patient_id(&self) -> &str {
        &self.events.patient_id
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn validates_events() {
        let ok = EventSequence::new("p", Regime::Pre, vec![MediatorEvent { time: 1.0, mark: 20.0 }], 24.0);
        assert!(ok.is_ok());
        let unsorted = EventSequence::new(
            "p",
            Regime::Pre,
            vec![MediatorEvent { time: 2.0, mark: 1.0 }, MediatorEvent { time: 1.0, mark: 1.0 }],
            24.0,
        );
        assert!(unsorted.is_err());
        assert!(EventSequence::new("p", Regime::Pre, vec![MediatorEvent { time: 1.0, mark: -5.0 }], 24.0).is_err());
        assert!(EventSequence::new("p", Regime::Pre, vec![MediatorEvent { time: 30.0, mark: 5.0 }], 24.0).is_err());
    }

    #[test]
    fn record_requires_alignment() {
        let e = EventSequence::new("a", Regime::Pre, vec![], 24.0).unwrap();
        let o = OutcomeSeries::new("b", Regime::Pre, vec![]).unwrap();
        assert!(PatientRecord::new(e, o).is_err());
    }

    #[test]
    fn regime_parses() {
        assert_eq!("post".parse::<Regime>().unwrap(), Regime::Post);
        assert!("during".parse::<Regime>().is_err());
    }
}
