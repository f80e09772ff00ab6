//! Study data: CSV ingestion, meal merging and the two-regime dataset.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use dynmed_core::causal::TrainingData;
use dynmed_core::data::PatientRecord;
use dynmed_core::{EventSequence, MediatorEvent, OutcomePoint, OutcomeSeries, Regime};
use serde::Deserialize;

use crate::error::{Result, WorkbenchError};
use crate::format::fmt_f64;

pub const EVENTS_HEADER: [&str; 4] = ["patient_id", "regime", "t_hours", "carbs_g"];
pub const OUTCOMES_HEADER: [&str; 4] = ["patient_id", "regime", "t_hours", "glucose_mmol_l"];

/// Both regimes of one patient; a missing regime marks the patient partial.
#[derive(Clone, Debug, PartialEq)]
pub struct PatientData {
    pub patient_id: String,
    pub pre: Option<PatientRecord>,
    pub post: Option<PatientRecord>,
}

impl PatientData {
    pub fn record(&self, regime: Regime) -> Option<&PatientRecord> {
        match regime {
            Regime::Pre => self.pre.as_ref(),
            Regime::Post => self.post.as_ref(),
        }
    }

    pub fn is_partial(&self) -> bool {
        self.pre.is_none() || self.post.is_none()
    }
}

/// Patients in ascending id order, every series sorted by time.
#[derive(Clone, Debug, PartialEq)]
pub struct StudyDataset {
    pub patients: Vec<PatientData>,
    pub pre_horizon: f64,
    pub post_horizon: f64,
}

impl StudyDataset {
    pub fn horizon(&self, regime: Regime) -> f64 {
        match regime {
            Regime::Pre => self.pre_horizon,
            Regime::Post => self.post_horizon,
        }
    }

    pub fn patient_ids(&self) -> Vec<String> {
        self.patients.iter().map(|p| p.patient_id.clone()).collect()
    }

    /// Every available record, grouped by regime.
    pub fn training_data(&self) -> TrainingData {
        TrainingData {
            pre: self.patients.iter().filter_map(|p| p.pre.clone()).collect(),
            post: self.patients.iter().filter_map(|p| p.post.clone()).collect(),
        }
    }

    /// Applies [`merge_meals`] to every event sequence.
    pub fn merge_meals(&self, window_minutes: f64) -> Self {
        let merge = |r: &Option<PatientRecord>| {
            r.as_ref().map(|r| PatientRecord { events: merge_meals(&r.events, window_minutes), outcomes: r.outcomes.clone() })
        };
        StudyDataset {
            patients: self
                .patients
                .iter()
                .map(|p| PatientData { patient_id: p.patient_id.clone(), pre: merge(&p.pre), post: merge(&p.post) })
                .collect(),
            ..*self
        }
    }
}

/// Left-to-right sweep: an event less than `window_minutes` after the
/// current anchor is absorbed into it (anchor time kept, marks summed);
/// otherwise it becomes the next anchor.
pub fn merge_meals(events: &EventSequence, window_minutes: f64) -> EventSequence {
    let window = window_minutes / 60.0;
    let mut merged: Vec<MediatorEvent> = Vec::with_capacity(events.events.len());
    for e in &events.events {
        match merged.last_mut() {
            Some(anchor) if e.time - anchor.time < window => anchor.mark += e.mark,
            _ => merged.push(*e),
        }
    }
    EventSequence { events: merged, ..events.clone() }
}

#[derive(Deserialize)]
struct EventRow {
    patient_id: String,
    regime: String,
    t_hours: f64,
    carbs_g: f64,
}

#[derive(Deserialize)]
struct OutcomeRow {
    patient_id: String,
    regime: String,
    t_hours: f64,
    glucose_mmol_l: f64,
}

/// `(line, patient, regime, time, value)` of one parsed row.
type Row = (u64, String, Regime, f64, f64);

fn read_rows(path: &Path, header: [&str; 4], events: bool) -> Result<Vec<Row>> {
    let file = File::open(path).map_err(|e| WorkbenchError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let found = reader.headers().map_err(|e| WorkbenchError::format(path, e))?.clone();
    if found.iter().collect::<Vec<_>>() != header {
        return Err(WorkbenchError::format(path, format!("expected header `{}`", header.join(","))));
    }
    let row_error = |line: u64, message: String| WorkbenchError::Row { path: path.into(), line, message };
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            row_error(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let (id, regime, t, value) = if events {
            let r: EventRow = record.deserialize(None).map_err(|e| row_error(line, e.to_string()))?;
            (r.patient_id, r.regime, r.t_hours, r.carbs_g)
        } else {
            let r: OutcomeRow = record.deserialize(None).map_err(|e| row_error(line, e.to_string()))?;
            (r.patient_id, r.regime, r.t_hours, r.glucose_mmol_l)
        };
        let regime: Regime = regime.parse().map_err(|_| row_error(line, format!("unknown regime `{regime}`")))?;
        if id.is_empty() {
            return Err(row_error(line, "empty patient_id".into()));
        }
        if !t.is_finite() || !value.is_finite() {
            return Err(row_error(line, "non-finite number".into()));
        }
        if t < 0.0 {
            return Err(row_error(line, format!("time {t} is negative")));
        }
        if events && value <= 0.0 {
            return Err(row_error(line, format!("carbs_g must be positive, found {value}")));
        }
        rows.push((line, id, regime, t, value));
    }
    Ok(rows)
}

type Groups = BTreeMap<(String, Regime), Vec<(u64, f64, f64)>>;

/// Groups rows by patient and regime, sorts each group by time and rejects
/// repeated times.
fn group(path: &Path, rows: Vec<Row>) -> Result<Groups> {
    let mut groups: Groups = BTreeMap::new();
    for (line, id, regime, t, v) in rows {
        groups.entry((id, regime)).or_default().push((line, t, v));
    }
    for ((id, _), g) in groups.iter_mut() {
        g.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        if let Some(w) = g.windows(2).find(|w| w[0].1 == w[1].1) {
            return Err(WorkbenchError::Row {
                path: path.into(),
                line: w[1].0,
                message: format!("repeated time {} for patient `{id}` (also on line {})", w[1].1, w[0].0),
            });
        }
    }
    Ok(groups)
}

/// Smallest whole number of days covering `t`, at least one.
fn covering_days(t: f64) -> f64 {
    (t / 24.0).ceil().max(1.0) * 24.0
}

/// Reads and validates both CSV files. Without `horizon` each regime's
/// horizon is the smallest whole number of days covering its data.
pub fn load_dataset(events_path: &Path, outcomes_path: &Path, horizon: Option<f64>) -> Result<StudyDataset> {
    let event_rows = read_rows(events_path, EVENTS_HEADER, true)?;
    let outcome_rows = read_rows(outcomes_path, OUTCOMES_HEADER, false)?;
    if let Some(h) = horizon {
        for (path, rows) in [(events_path, &event_rows), (outcomes_path, &outcome_rows)] {
            if let Some(r) = rows.iter().find(|r| r.3 > h) {
                return Err(WorkbenchError::Row {
                    path: path.into(),
                    line: r.0,
                    message: format!("time {} lies beyond the horizon {h}", r.3),
                });
            }
        }
    }
    let horizon_of = |regime: Regime| {
        horizon.unwrap_or_else(|| {
            let latest = event_rows.iter().chain(&outcome_rows).filter(|r| r.2 == regime).map(|r| r.3).fold(0.0, f64::max);
            covering_days(latest)
        })
    };
    let (pre_horizon, post_horizon) = (horizon_of(Regime::Pre), horizon_of(Regime::Post));
    let events = group(events_path, event_rows)?;
    let outcomes = group(outcomes_path, outcome_rows)?;

    let mut patients: BTreeMap<String, PatientData> = BTreeMap::new();
    let keys: std::collections::BTreeSet<_> = events.keys().chain(outcomes.keys()).cloned().collect();
    for (id, regime) in keys {
        let h = if regime == Regime::Pre { pre_horizon } else { post_horizon };
        let ev = events.get(&(id.clone(), regime)).map_or(&[][..], |g| g);
        let out = outcomes.get(&(id.clone(), regime)).map_or(&[][..], |g| g);
        let record = PatientRecord::new(
            EventSequence::new(&id, regime, ev.iter().map(|&(_, time, mark)| MediatorEvent { time, mark }).collect(), h)?,
            OutcomeSeries::new(&id, regime, out.iter().map(|&(_, time, value)| OutcomePoint { time, value }).collect())?,
        )?;
        let entry = patients
            .entry(id.clone())
            .or_insert_with(|| PatientData { patient_id: id.clone(), pre: None, post: None });
        match regime {
            Regime::Pre => entry.pre = Some(record),
            Regime::Post => entry.post = Some(record),
        }
    }
    if patients.is_empty() {
        return Err(WorkbenchError::format(events_path, "no data rows in either file"));
    }
    Ok(StudyDataset { patients: patients.into_values().collect(), pre_horizon, post_horizon })
}

fn csv_error(path: &Path) -> impl Fn(csv::Error) -> WorkbenchError + '_ {
    move |e| WorkbenchError::format(path, e)
}

/// Writes both CSV files in canonical order (patient, regime, time).
pub fn save_dataset(dataset: &StudyDataset, events_path: &Path, outcomes_path: &Path) -> Result<()> {
    let mut events = csv::Writer::from_writer(Vec::new());
    let mut outcomes = csv::Writer::from_writer(Vec::new());
    events.write_record(EVENTS_HEADER).map_err(csv_error(events_path))?;
    outcomes.write_record(OUTCOMES_HEADER).map_err(csv_error(outcomes_path))?;
    for p in &dataset.patients {
        for regime in [Regime::Pre, Regime::Post] {
            let Some(r) = p.record(regime) else { continue };
            for e in &r.events.events {
                events
                    .write_record([p.patient_id.as_str(), regime.as_str(), &fmt_f64(e.time), &fmt_f64(e.mark)])
                    .map_err(csv_error(events_path))?;
            }
            for o in &r.outcomes.points {
                outcomes
                    .write_record([p.patient_id.as_str(), regime.as_str(), &fmt_f64(o.time), &fmt_f64(o.value)])
                    .map_err(csv_error(outcomes_path))?;
            }
        }
    }
    for (path, writer) in [(events_path, events), (outcomes_path, outcomes)] {
        let bytes = writer.into_inner().map_err(|e| WorkbenchError::format(path, e))?;
        write_file(path, &bytes)?;
    }
    Ok(())
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = File::create(path).map_err(|e| WorkbenchError::io(path, e))?;
    f.write_all(bytes).map_err(|e| WorkbenchError::io(path, e))
}
