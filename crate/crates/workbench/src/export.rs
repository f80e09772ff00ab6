//! Output files: trajectories, effects, glycemia metrics and benchmark
//! scores.

use std::collections::BTreeMap;
use std::path::Path;

use dynmed_core::causal::benchmark::AblationScore;
use dynmed_core::causal::{glycemia_metrics, AblationSpec, PathIntervention};
use dynmed_core::sampler::Trajectory;

use crate::dataset::write_file;
use crate::error::{Result, WorkbenchError};
use crate::format::fmt_f64;

pub const TRAJECTORY_HEADER: [&str; 6] = ["patient_id", "replicate", "regime_pair", "kind", "time_h", "value"];

/// A trajectory tagged with its replicate index.
pub struct TrajectoryRow<'a> {
    pub replicate: usize,
    pub trajectory: &'a Trajectory,
}

fn csv_bytes(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| WorkbenchError::format(path, e);
    w.write_record(header).map_err(err)?;
    for row in rows {
        w.write_record(&row).map_err(err)?;
    }
    w.into_inner().map_err(|e| WorkbenchError::format(path, e))
}

/// Event rows (value = mark) followed by outcome rows, per trajectory.
pub fn write_trajectories<'a>(path: &Path, rows: impl IntoIterator<Item = TrajectoryRow<'a>>) -> Result<()> {
    let lines = rows.into_iter().flat_map(|row| {
        let t = row.trajectory;
        let tag = move |kind: &str, time: f64, value: f64| {
            vec![
                t.patient_id.clone(),
                row.replicate.to_string(),
                t.intervention.label().to_string(),
                kind.to_string(),
                fmt_f64(time),
                fmt_f64(value),
            ]
        };
        let events: Vec<_> = t.events.iter().map(|e| tag("event", e.time, e.mark)).collect();
        let outcomes: Vec<_> = t.outcomes.iter().map(|o| tag("outcome", o.time, o.value)).collect();
        events.into_iter().chain(outcomes)
    });
    write_file(path, &csv_bytes(path, &TRAJECTORY_HEADER, lines)?)
}

/// `(patient_id, replicate, regime_pair, kind, time_h, value)`.
type TrajectoryRecord = (String, usize, String, String, f64, f64);

/// Outcome values of a trajectory file grouped by path intervention.
pub fn read_outcomes(path: &Path) -> Result<BTreeMap<PathIntervention, Vec<f64>>> {
    let file = std::fs::File::open(path).map_err(|e| WorkbenchError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = reader.headers().map_err(|e| WorkbenchError::format(path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != TRAJECTORY_HEADER {
        return Err(WorkbenchError::format(path, format!("expected header `{}`", TRAJECTORY_HEADER.join(","))));
    }
    let mut groups: BTreeMap<PathIntervention, Vec<f64>> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| WorkbenchError::format(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let row_error = |message: String| WorkbenchError::Row { path: path.into(), line, message };
        let r: TrajectoryRecord = record.deserialize(None).map_err(|e| row_error(e.to_string()))?;
        let (_, _, pair, kind, _, value) = r;
        let pair = PathIntervention::from_label(&pair).map_err(|e| row_error(e.to_string()))?;
        match kind.as_str() {
            "outcome" if value.is_finite() => groups.entry(pair).or_default().push(value),
            "outcome" => return Err(row_error("non-finite outcome value".into())),
            "event" => {}
            other => return Err(row_error(format!("unknown kind `{other}`"))),
        }
    }
    Ok(groups)
}

/// One row per path intervention present in `path`.
pub fn write_metrics(path: &Path, outcomes: &BTreeMap<PathIntervention, Vec<f64>>, low: f64, high: f64) -> Result<()> {
    let mut rows = Vec::new();
    for (pair, values) in outcomes {
        let (hypo, ang) = glycemia_metrics(values, low, high)?;
        rows.push(vec![pair.label().to_string(), fmt_f64(hypo), fmt_f64(ang)]);
    }
    write_file(path, &csv_bytes(path, &["intervention", "pct_hypo", "pct_ang"], rows)?)
}

/// One row per ablation; unnamed combinations are labelled by their
/// components.
pub fn write_scores(path: &Path, scores: &[(AblationSpec, AblationScore)]) -> Result<()> {
    let rows = scores.iter().map(|(spec, s)| {
        let name = spec.name().map(str::to_string).unwrap_or_else(|| {
            format!("{:?}/{:?}/{:?}", spec.mediator_variant, spec.response_variant, spec.direct_arrow)
        });
        vec![name, fmt_f64(s.mse_nde), fmt_f64(s.mse_nie), fmt_f64(s.mse_te)]
    });
    write_file(path, &csv_bytes(path, &["model", "mse_nde", "mse_nie", "mse_te"], rows)?)
}
