//! Rayon drivers for the embarrassingly parallel stages. Every job owns its
//! noise reservoir and results are collected in job order, so outputs do
//! not depend on the thread count.

use dynmed_core::causal::benchmark::{score, AblationScore, BenchmarkConfig, GroundTruth};
use dynmed_core::causal::{
    make_ablation, required_components, AblationSpec, ComponentBank, CoupledRollouts, EffectEstimate, EffectQuery,
    RegimeModels, TrainingData,
};
use dynmed_core::mediator::MediatorConfig;
use dynmed_core::outcome::OutcomeConfig;
use dynmed_core::Result;
use rayon::prelude::*;

/// Coupled rollouts of every `(patient, replicate)` job of `query`, in
/// [`EffectQuery::jobs`] order.
pub fn coupled_rollouts(models: &RegimeModels, query: &EffectQuery) -> Result<Vec<CoupledRollouts>> {
    query.validate()?;
    let jobs: Vec<_> = query.jobs().collect();
    jobs.par_iter().map(|&(i, r)| query.run_job(models, i, r)).collect()
}

/// Pooled effects; equal to the sequential estimate.
pub fn estimate_effects(models: &RegimeModels, query: &EffectQuery) -> Result<EffectEstimate> {
    let reps: Vec<_> = coupled_rollouts(models, query)?.iter().map(CoupledRollouts::effects).collect();
    query.aggregate(&reps)
}

/// Per-patient effects; equal to the sequential estimates.
pub fn estimate_patient_effects(models: &RegimeModels, query: &EffectQuery) -> Result<Vec<EffectEstimate>> {
    let reps: Vec<_> = coupled_rollouts(models, query)?.iter().map(CoupledRollouts::effects).collect();
    reps.chunks(query.n_replicates).map(|c| query.aggregate(c)).collect()
}

pub fn fit_components(
    specs: &[AblationSpec],
    data: &TrainingData,
    outcome: &OutcomeConfig,
    mediator: &MediatorConfig,
) -> Result<ComponentBank> {
    let keys = required_components(specs);
    let fitted: Vec<_> = keys.par_iter().map(|k| k.fit(data, outcome, mediator)).collect::<Result<_>>()?;
    let mut bank = ComponentBank::default();
    for (k, c) in keys.into_iter().zip(fitted) {
        bank.insert(k, c);
    }
    Ok(bank)
}

/// One benchmark seed against `truth`.
pub fn run_benchmark(
    config: &BenchmarkConfig,
    truth: &GroundTruth,
    seed: u64,
) -> Result<Vec<(AblationSpec, AblationScore)>> {
    config.validate()?;
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
