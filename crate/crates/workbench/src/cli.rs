//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use dynmed_core::causal::benchmark::ground_truth;
use dynmed_core::causal::benchmark::GroundTruth;
use dynmed_core::causal::{make_ablation, AblationSpec, EffectQuery, PathIntervention};
use dynmed_core::sampler::{regular_grid, rollout, NoiseReservoir, RolloutPlan, Trajectory};
use dynmed_core::Regime;
use rayon::prelude::*;

use crate::config::{EivMode, RunConfig};
use crate::dataset::{load_dataset, write_file};
use crate::error::{Result, WorkbenchError};
use crate::export::{read_outcomes, write_metrics, write_scores, write_trajectories, TrajectoryRow};
use crate::format::to_json;
use crate::model_file::{load_model, save_model, ModelFile};
use crate::parallel;

#[derive(Parser, Debug)]
#[command(name = "dynmed", version, about = "Dynamic causal mediation with Gaussian-process models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the joint model of both regimes to a study dataset.
    Fit(FitArgs),
    /// Sample factual trajectories of both regimes from a fitted model.
    Simulate(SimulateArgs),
    /// Estimate NDE, NIE and TE trajectories after an intervention time.
    Effects(EffectsArgs),
    /// Score the ablations against a synthetic ground truth.
    Benchmark(BenchmarkArgs),
    /// Percentage of outcome points in hypo- and hyperglycemia.
    Metrics(MetricsArgs),
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    events: PathBuf,
    #[arg(long)]
    outcomes: PathBuf,
    /// JSON run configuration; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Meal-time error-in-variables correction.
    #[arg(long, value_enum)]
    eiv: Option<EivMode>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Simulate the first N patients of the model file.
    #[arg(long)]
    patients: usize,
    #[arg(long)]
    days: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    replicates: usize,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EffectsArgs {
    #[arg(long)]
    model: PathBuf,
    /// Intervention time in hours; rollouts start there with an empty history.
    #[arg(long)]
    ta: f64,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the effects of each patient, keyed by patient id.
    #[arg(long)]
    per_patient: Option<PathBuf>,
    /// Also write every coupled rollout.
    #[arg(long)]
    trajectories: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchmarkArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Ground-truth model file; the built-in synthetic truth otherwise.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Write the built-in ground truth as a model file.
    #[arg(long)]
    save_truth: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct MetricsArgs {
    #[arg(long)]
    trajectories: PathBuf,
    #[arg(long, default_value_t = 3.9)]
    low: f64,
    #[arg(long, default_value_t = 5.6)]
    high: f64,
    #[arg(long)]
    out: PathBuf,
}

fn config(path: Option<&Path>) -> Result<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
}

fn fit(args: FitArgs) -> Result<()> {
    let mut config = config(args.config.as_deref())?;
    if let Some(eiv) = args.eiv {
        config.preprocessing.eiv = eiv;
    }
    let dataset = load_dataset(&args.events, &args.outcomes, config.preprocessing.horizon_hours)?
        .merge_meals(config.preprocessing.merge_window_minutes);
    let data = dataset.training_data();
    if data.pre.is_empty() || data.post.is_empty() {
        return Err(WorkbenchError::Usage("both regimes need at least one patient record".into()));
    }
    let spec = [AblationSpec::OUR];
    let bank = parallel::fit_components(&spec, &data, &config.outcome, &config.mediator)?;
    let models = make_ablation(&spec[0], &bank)?;
    save_model(&ModelFile::new(dataset.patient_ids(), models), &args.out)
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let config = config(args.config.as_deref())?;
    let file = load_model(&args.model)?;
    if args.patients == 0 || args.patients > file.patients.len() {
        return Err(WorkbenchError::Usage(format!(
            "--patients must lie in 1..={} for this model",
            file.patients.len()
        )));
    }
    if args.days == 0 || args.replicates == 0 {
        return Err(WorkbenchError::Usage("--days and --replicates must be positive".into()));
    }
    let hours = 24.0 * args.days as f64;
    let n_grid = config.grid.grid_points * args.days * 24 / (config.grid.grid_hours.round().max(1.0) as usize);
    let grid = regular_grid(0.0, hours, n_grid.max(1));
    let jobs: Vec<(usize, Regime, usize)> = (0..args.patients)
        .flat_map(|p| [Regime::Pre, Regime::Post].into_iter().flat_map(move |g| (0..args.replicates).map(move |r| (p, g, r))))
        .collect();
    let trajectories: Vec<Trajectory> = jobs
        .par_iter()
        .map(|&(p, regime, r)| {
            let joint = file.models.regime(regime);
            let factual = if regime == Regime::Pre { PathIntervention::NATURAL } else { PathIntervention::TREATED };
            let plan = RolloutPlan { patient_id: file.patients[p].clone(), start: 0.0, end: hours, grid: grid.clone() };
            let index = ((p * 2 + regime as usize) * args.replicates + r) as u64;
            rollout(&joint.outcome, &joint.mediator, &plan, factual, &NoiseReservoir::substream(args.seed, index))
        })
        .collect::<dynmed_core::Result<_>>()?;
    write_trajectories(
        &args.out,
        jobs.iter().zip(&trajectories).map(|(&(_, _, r), t)| TrajectoryRow { replicate: r, trajectory: t }),
    )
}

fn effects(args: EffectsArgs) -> Result<()> {
    let config = config(args.config.as_deref())?;
    let file = load_model(&args.model)?;
    if !args.ta.is_finite() || args.ta < 0.0 {
        return Err(WorkbenchError::Usage("--ta must be a non-negative number of hours".into()));
    }
    let query = EffectQuery {
        patients: file.patients.clone(),
        t_a: args.ta,
        grid: regular_grid(args.ta, config.grid.grid_hours, config.grid.grid_points),
        n_replicates: args.replicates.unwrap_or(config.grid.replicates),
        seed: args.seed.unwrap_or(config.seed),
    };
    let runs = parallel::coupled_rollouts(&file.models, &query)?;
    let reps: Vec<_> = runs.iter().map(|c| c.effects()).collect();
    let pooled = query.aggregate(&reps)?;
    write_json(&args.out, &pooled)?;
    if let Some(path) = &args.per_patient {
        let per: std::collections::BTreeMap<_, _> = query
            .patients
            .iter()
            .zip(reps.chunks(query.n_replicates))
            .map(|(id, c)| Ok((id.clone(), query.aggregate(c)?)))
            .collect::<Result<_>>()?;
        write_json(path, &per)?;
    }
    if let Some(path) = &args.trajectories {
        let rows = runs.iter().enumerate().flat_map(|(k, c)| {
            c.trajectories().into_iter().map(move |t| TrajectoryRow { replicate: k % query.n_replicates, trajectory: t })
        });
        write_trajectories(path, rows)?;
    }
    Ok(())
}

fn benchmark(args: BenchmarkArgs) -> Result<()> {
    let config = config(args.config.as_deref())?;
    let truth = match &args.truth {
        Some(path) => {
            let file = load_model(path)?;
            GroundTruth { patients: file.patients, models: file.models }
        }
        None => ground_truth(config.benchmark.patients)?,
    };
    if let Some(path) = &args.save_truth {
        save_model(&ModelFile::new(truth.patients.clone(), truth.models.clone()), path)?;
    }
    let scores = parallel::run_benchmark(&config.benchmark, &truth, args.seed)?;
    write_scores(&args.out, &scores)
}

fn metrics(args: MetricsArgs) -> Result<()> {
    if !(args.low < args.high) {
        return Err(WorkbenchError::Usage("--low must be below --high".into()));
    }
    let outcomes = read_outcomes(&args.trajectories)?;
    if outcomes.is_empty() {
        return Err(WorkbenchError::Usage("no outcome rows in the trajectory file".into()));
    }
    write_metrics(&args.out, &outcomes, args.low, args.high)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = to_json(value).map_err(|e| WorkbenchError::format(path, e))?;
    write_file(path, text.as_bytes())
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit status: 0 on success, 1 for usage and validation errors,
/// 2 for numerical failures.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Fit(a) => fit(a),
        Command::Simulate(a) => simulate(a),
        Command::Effects(a) => effects(a),
        Command::Benchmark(a) => benchmark(a),
        Command::Metrics(a) => metrics(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
