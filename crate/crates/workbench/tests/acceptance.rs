//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit status
//! if any criterion fails. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test --test acceptance -- 1 4`.

#![allow(clippy::type_complexity)]

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use dynmed_core::causal::benchmark::{ground_truth, BenchmarkConfig};
use dynmed_core::causal::{
    glycemia_metrics, AblationSpec, EffectQuery, JointModel, RegimeModels,
};
use dynmed_core::gp::ExactGp;
use dynmed_core::kernels::KernelSpec;
use dynmed_core::linalg::JITTER_LADDER;
use dynmed_core::mediator::{History, LagSettings, MarkModel, MediatorModel};
use dynmed_core::outcome::{Magnitude, OutcomeConfig, OutcomeModel, TrainingSegment};
use dynmed_core::sampler::{regular_grid, sample_events, NoiseReservoir};
use dynmed_core::{MediatorEvent, OutcomePoint};
use dynmed_workbench::format::to_json;
use dynmed_workbench::parallel;
use dynmed_workbench::RunConfig;
use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: u64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s as f64, || format!("took {:.1} s, limit {limit_s} s", elapsed.as_secs_f64()))
}

fn random_kernel(rng: &mut impl Rng, dim: usize) -> KernelSpec {
    let var = rng.random_range(0.2..3.0);
    let ls = rng.random_range(0.3..3.0);
    match rng.random_range(0..5) {
        0 => KernelSpec::squared_exponential(var, (0..dim).map(|_| rng.random_range(0.3..3.0)).collect()).unwrap(),
        1 => KernelSpec::matern12(var, ls).unwrap(),
        2 if dim == 1 => KernelSpec::periodic(var, ls, rng.random_range(2.0..8.0)).unwrap(),
        2 => KernelSpec::projected(KernelSpec::periodic(var, ls, rng.random_range(2.0..8.0)).unwrap(), vec![0]).unwrap(),
        3 => KernelSpec::sum(vec![
            KernelSpec::constant(rng.random_range(0.1..2.0)).unwrap(),
            KernelSpec::squared_exponential(var, vec![ls; dim]).unwrap(),
        ])
        .unwrap(),
        _ => KernelSpec::sum(vec![
            KernelSpec::constant(rng.random_range(0.1..2.0)).unwrap(),
            KernelSpec::projected(KernelSpec::periodic(var, ls, 24.0).unwrap(), vec![0]).unwrap(),
        ])
        .unwrap(),
    }
}

fn dense(k: &KernelSpec, a: &[Vec<f64>], b: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| k.eval(&a[i], &b[j]).unwrap())
}

/// Exact posterior and log marginal likelihood against a dense LU solve.
fn gp_oracle() -> Outcome {
    let mut rng = StdRng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for instance in 0..50 {
        let dim = rng.random_range(1..3);
        let n = rng.random_range(1..=20);
        let kernel = random_kernel(&mut rng, dim);
        let draw = |rng: &mut StdRng, count: usize| -> Vec<Vec<f64>> {
            (0..count).map(|_| (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect()).collect()
        };
        let x = draw(&mut rng, n);
        let xs = draw(&mut rng, 6);
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let noise = rng.random_range(0.01..0.5);
        let gp = ExactGp::new(kernel.clone(), noise, x.clone(), y.clone()).unwrap();
        let (mean, cov) = gp.posterior(&xs).map_err(|e| e.to_string())?;
        let lml = gp.log_marginal_likelihood().map_err(|e| e.to_string())?;

        let mut kxx = dense(&kernel, &x, &x);
        for i in 0..n {
            kxx[(i, i)] += noise + JITTER_LADDER[0];
        }
        let lu = kxx.clone().lu();
        let yv = DVector::from_vec(y.clone());
        let alpha = lu.solve(&yv).ok_or("singular oracle system")?;
        let kxs = dense(&kernel, &x, &xs);
        let ref_mean = kxs.transpose() * &alpha;
        let ref_cov = dense(&kernel, &xs, &xs) - kxs.transpose() * lu.solve(&kxs).ok_or("singular oracle system")?;
        let ref_lml = -0.5 * yv.dot(&alpha)
            - 0.5 * lu.determinant().ln()
            - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();

        let mut err = (lml - ref_lml).abs();
        for i in 0..xs.len() {
            err = err.max((mean[i] - ref_mean[i]).abs());
            for j in 0..xs.len() {
                err = err.max((cov[(i, j)] - ref_cov[(i, j)]).abs());
            }
        }
        ensure(err <= 1e-8, || format!("instance {instance}: deviation {err:e}"))?;
        worst = worst.max(err);
    }
    Ok(format!("50 instances, max deviation {worst:.1e}"))
}

/// Analytic gradient of the log marginal likelihood against central
/// differences in every log-domain parameter.
fn gradient_check() -> Outcome {
    let mut rng = StdRng::seed_from_u64(2);
    let variants: [(&str, fn(&mut StdRng) -> KernelSpec, usize); 7] = [
        ("squared_exponential", |r| KernelSpec::squared_exponential(r.random_range(0.3..2.0), vec![r.random_range(0.5..2.0), r.random_range(0.5..2.0)]).unwrap(), 2),
        ("matern12", |r| KernelSpec::matern12(r.random_range(0.3..2.0), r.random_range(0.5..2.0)).unwrap(), 1),
        ("constant", |r| KernelSpec::constant(r.random_range(0.3..2.0)).unwrap(), 1),
        ("periodic", |r| KernelSpec::periodic(r.random_range(0.3..2.0), r.random_range(0.5..2.0), r.random_range(3.0..8.0)).unwrap(), 1),
        ("sum", |r| KernelSpec::sum(vec![KernelSpec::constant(r.random_range(0.3..2.0)).unwrap(), KernelSpec::periodic(r.random_range(0.3..2.0), r.random_range(0.5..2.0), 24.0).unwrap()]).unwrap(), 1),
        ("time_marked", |r| KernelSpec::time_marked(KernelSpec::squared_exponential(r.random_range(0.3..2.0), vec![r.random_range(0.3..1.5)]).unwrap(), 3.0).unwrap(), 1),
        ("projected", |r| KernelSpec::projected(KernelSpec::matern12(r.random_range(0.3..2.0), r.random_range(0.5..2.0)).unwrap(), vec![1]).unwrap(), 2),
    ];
    let mut worst: f64 = 0.0;
    for (name, make, dim) in variants {
        for instance in 0..20 {
            let kernel = make(&mut rng);
            let n = rng.random_range(5..=15);
            let x: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.random_range(0.0..4.0)).collect()).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let gp = ExactGp::new(kernel, rng.random_range(0.05..0.5), x, y).unwrap();
            let analytic = gp.lml_gradient_all().map_err(|e| e.to_string())?;
            let theta = gp.log_params();
            let h = 1e-5;
            let mut numeric = Vec::with_capacity(theta.len());
            for i in 0..theta.len() {
                let at = |d: f64| {
                    let mut t = theta.clone();
                    t[i] += d;
                    gp.with_log_params(&t).unwrap().log_marginal_likelihood().unwrap()
                };
                numeric.push((at(h) - at(-h)) / (2.0 * h));
            }
            let diff = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale = numeric.iter().map(|b| b * b).sum::<f64>().sqrt();
            let rel = diff / scale.max(1e-12);
            ensure(rel <= 1e-4, || format!("{name} instance {instance}: relative error {rel:e}"))?;
            worst = worst.max(rel);
        }
    }
    Ok(format!("7 variants x 20 instances, max relative error {worst:.1e}"))
}

fn settings() -> LagSettings {
    LagSettings { q_m: 1, q_o: 1, lag_cap: 24.0, outcome_padding: 5.0 }
}

fn marks() -> MarkModel {
    MarkModel::constant(KernelSpec::matern12(1.0, 1.0).unwrap(), 40f64.ln(), 0.1).unwrap()
}

/// Homogeneous rate 2 on ten hours.
fn thinning_statistics() -> Outcome {
    let m = MediatorModel::homogeneous(2.0, settings(), marks()).map_err(|e| e.to_string())?;
    let reps = 10_000u64;
    let mut total = 0usize;
    for r in 0..reps {
        total += sample_events(&m, &[], 0.0, 10.0, &NoiseReservoir::substream(3, r)).map_err(|e| e.to_string())?.len();
    }
    let mean = total as f64 / reps as f64;
    ensure((19.82..=20.18).contains(&mean), || format!("mean count {mean}"))?;
    Ok(format!("mean count {mean:.4}"))
}

fn effect_identities() -> Outcome {
    let gt = ground_truth(3).map_err(|e| e.to_string())?;
    let query = EffectQuery {
        patients: gt.patients.clone(),
        t_a: 24.0,
        grid: regular_grid(24.0, 24.0, 40),
        n_replicates: 20,
        seed: 4,
    };
    let runs = parallel::coupled_rollouts(&gt.models, &query).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for c in &runs {
        let e = c.effects();
        for k in 0..query.grid.len() {
            worst = worst.max((e.te[k] - (e.nde[k] + e.nie[k])).abs());
        }
    }
    let est = parallel::estimate_effects(&gt.models, &query).map_err(|e| e.to_string())?;
    for k in 0..query.grid.len() {
        worst = worst.max((est.te.mean[k] - (est.nde.mean[k] + est.nie.mean[k])).abs());
    }
    ensure(worst <= 1e-12, || format!("TE deviates from NDE + NIE by {worst:e}"))?;

    let same = RegimeModels { pre: gt.models.pre.clone(), post: gt.models.pre.clone() };
    let null = parallel::estimate_effects(&same, &query).map_err(|e| e.to_string())?;
    let all_zero = [&null.nde, &null.nie, &null.te].iter().all(|s| s.mean.iter().chain(&s.se).all(|v| *v == 0.0));
    ensure(all_zero, || "identical regimes give non-zero effects".into())?;
    Ok(format!("max |TE - NDE - NIE| = {worst:.1e}; null fixture exactly zero"))
}

fn shifted_outcome(level: f64, noise_variance: f64) -> OutcomeModel {
    let config = OutcomeConfig { baseline_intercept_variance: 25.0, noise_variance, ..OutcomeConfig::default() };
    let points = regular_grid(0.0, 24.0, 48).into_iter().map(|time| OutcomePoint { time, value: level }).collect();
    let training = vec![TrainingSegment { patient_id: "p0".into(), events: vec![], points }];
    let magnitudes = BTreeMap::from([("p0".to_string(), Magnitude { intercept: 0.0, slope: 0.05 })]);
    OutcomeModel::new(
        config.baseline_kernel().unwrap(),
        config.response_kernel().unwrap(),
        noise_variance,
        magnitudes,
        config.magnitude_prior_scale,
        training,
    )
    .unwrap()
}

/// Post baseline one unit below pre, identical mediators.
fn shift_recovery() -> Outcome {
    let mediator = MediatorModel::homogeneous(0.3, settings(), marks()).map_err(|e| e.to_string())?;
    let models = RegimeModels {
        pre: JointModel::new(shifted_outcome(6.0, 0.01), mediator.clone()),
        post: JointModel::new(shifted_outcome(5.0, 0.04), mediator),
    };
    let query = EffectQuery {
        patients: vec!["p0".into()],
        t_a: 24.0,
        grid: regular_grid(24.0, 24.0, 40),
        n_replicates: 200,
        seed: 5,
    };
    let est = parallel::estimate_effects(&models, &query).map_err(|e| e.to_string())?;
    let mut worst_z: f64 = 0.0;
    for k in 0..query.grid.len() {
        let dev = (est.nde.mean[k] + 1.0).abs();
        ensure(dev <= 3.0 * est.nde.se[k], || format!("NDE {} at t={} (se {})", est.nde.mean[k], query.grid[k], est.nde.se[k]))?;
        ensure(est.nie.mean[k].abs() <= 3.0 * est.nie.se[k], || format!("NIE {} at t={}", est.nie.mean[k], query.grid[k]))?;
        worst_z = worst_z.max(dev / est.nde.se[k]);
    }
    Ok(format!("NDE within {worst_z:.2} standard errors of -1; NIE exactly 0"))
}

/// Ablation ordering on the synthetic benchmark, three seeds.
fn ablation_ordering() -> Outcome {
    let config = BenchmarkConfig {
        replicates: 200,
        truth_replicates: 200,
        specs: vec![AblationSpec::OUR, AblationSpec::M1, AblationSpec::M2, AblationSpec::M3],
        ..BenchmarkConfig::default()
    };
    let truth = ground_truth(config.patients).map_err(|e| e.to_string())?;
    let (mut nde_te_ok, mut nie_ok) = (0, 0);
    let mut lines = Vec::new();
    for seed in 0..3 {
        let scores: BTreeMap<&str, _> = parallel::run_benchmark(&config, &truth, seed)
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|(spec, s)| (spec.name().unwrap(), s))
            .collect();
        let our = scores["Our"];
        let beats = ["M1", "M2", "M3"].iter().all(|m| our.mse_nde < scores[m].mse_nde && our.mse_te < scores[m].mse_te);
        let nie = our.mse_nie <= scores["M2"].mse_nie && scores["M3"].mse_nie <= scores["M1"].mse_nie;
        nde_te_ok += beats as usize;
        nie_ok += nie as usize;
        let row = |m: &str| format!("{m} {:.4}/{:.4}/{:.4}", scores[m].mse_nde, scores[m].mse_nie, scores[m].mse_te);
        lines.push(format!("seed {seed}: {} | {} | {} | {}", row("Our"), row("M1"), row("M2"), row("M3")));
    }
    for l in &lines {
        println!("    {l}");
    }
    ensure(nde_te_ok >= 2 && nie_ok >= 2, || format!("NDE/TE ordering in {nde_te_ok}/3 seeds, NIE ordering in {nie_ok}/3"))?;
    Ok(format!("NDE/TE ordering in {nde_te_ok}/3 seeds, NIE ordering in {nie_ok}/3"))
}

fn glycemia() -> Outcome {
    let piecewise: Vec<f64> = [(3.0, 10), (3.9, 5), (5.0, 15), (5.6, 4), (7.2, 6)]
        .iter()
        .flat_map(|&(v, n)| std::iter::repeat_n(v, n))
        .collect();
    let (hypo, ang) = glycemia_metrics(&piecewise, 3.9, 5.6).map_err(|e| e.to_string())?;
    ensure(hypo == 37.5 && ang == 25.0, || format!("piecewise fixture gave ({hypo}, {ang})"))?;
    let (hypo, ang) = glycemia_metrics(&[3.0; 40], 3.9, 5.6).map_err(|e| e.to_string())?;
    ensure(hypo == 100.0 && ang == 0.0, || format!("constant fixture gave ({hypo}, {ang})"))?;
    Ok("piecewise (37.5, 25), constant 3.0 (100, 0)".into())
}

fn config_snapshot() -> Outcome {
    let golden = include_str!("golden/default_config.json");
    let c = RunConfig::default();
    ensure(to_json(&c).unwrap() == golden, || "default configuration differs from the golden file".into())?;
    ensure(RunConfig::from_json(golden).unwrap() == c, || "golden file does not parse to the default".into())?;
    let (m, o) = (&c.mediator, &c.outcome);
    let checks = [
        ("beta0", m.beta0, 0.1),
        ("event variance", m.event_variance, 0.1),
        ("event lengthscale", m.event_lengthscale, 1.5),
        ("outcome variance", m.outcome_variance, 0.1),
        ("outcome lengthscale (time)", m.outcome_lengthscales[0], 100.0),
        ("outcome lengthscale (value)", m.outcome_lengthscales[1], 5.0),
        ("inducing points", m.num_inducing as f64, 20.0),
        ("baseline variance", o.baseline_variance, 1.0),
        ("baseline lengthscale", o.baseline_lengthscale, 10.0),
        ("baseline period", o.baseline_period, 24.0),
        ("response variance", o.response_variance, 1.0),
        ("response lengthscale", o.response_lengthscale, 0.5),
        ("magnitude intercept", o.magnitude_intercept, 0.1),
        ("magnitude slope", o.magnitude_slope, 0.1),
        ("effective window", o.effective_window, 3.0),
    ];
    for (name, got, want) in checks {
        ensure(got == want, || format!("{name} = {got}, expected {want}"))?;
    }
    Ok(format!("golden file matches; {} defaults checked", checks.len()))
}

/// Random probes of the response window and the mediator history rules.
fn causality_suite() -> Outcome {
    let mut rng = StdRng::seed_from_u64(9);
    let outcome = OutcomeModel::untrained(&OutcomeConfig::default()).map_err(|e| e.to_string())?;
    let window = outcome.effective_window();
    let marked = OutcomeConfig::default().response_kernel().map_err(|e| e.to_string())?;
    let gt = ground_truth(1).map_err(|e| e.to_string())?;
    let mediator = &gt.models.pre.mediator;
    for probe in 0..10_000 {
        // response window
        let event = MediatorEvent { time: rng.random_range(0.0..24.0), mark: rng.random_range(5.0..120.0) };
        let outside = if rng.random_bool(0.5) {
            event.time - rng.random_range(0.0..10.0)
        } else {
            event.time + window + rng.random_range(1e-9..10.0)
        };
        let r = outcome.response_value("p", &[event], outside);
        ensure(r == 0.0, || format!("probe {probe}: response {r} at t={outside} for event at {}", event.time))?;
        let rel = outside - event.time;
        let other = rng.random_range(0.01..window);
        let k = marked.eval(&[rel], &[other]).map_err(|e| e.to_string())?;
        ensure(k == 0.0, || format!("probe {probe}: time-marked kernel {k} at relative time {rel}"))?;

        // history rules on random histories
        let n_events = rng.random_range(1..6);
        let mut times: Vec<f64> = (0..n_events).map(|_| rng.random_range(0.0..20.0)).collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        let events: Vec<MediatorEvent> =
            times.iter().map(|&time| MediatorEvent { time, mark: rng.random_range(5.0..100.0) }).collect();
        let outcomes: Vec<OutcomePoint> = regular_grid(0.0, 20.0, 20)
            .into_iter()
            .map(|time| OutcomePoint { time, value: rng.random_range(3.0..10.0) })
            .collect();
        let last = events.last().unwrap().time;
        let tau = last + rng.random_range(0.01..4.0);
        let base = mediator.time_intensity(tau, &History::new(&events, &outcomes));

        // an event older than the most recent one leaves the features intact
        let older = last * rng.random_range(0.0..1.0);
        if !times.contains(&older) {
            let mut with_older = events.clone();
            with_older.push(MediatorEvent { time: older, mark: 30.0 });
            with_older.sort_by(|a, b| a.time.total_cmp(&b.time));
            let v = mediator.time_intensity(tau, &History::new(&with_older, &outcomes));
            ensure(v.to_bits() == base.to_bits(), || format!("probe {probe}: older event changed {base} to {v}"))?;
        }

        // an event exactly at tau is not part of the history
        let mut with_now = events.clone();
        with_now.push(MediatorEvent { time: tau, mark: 50.0 });
        let v = mediator.time_intensity(tau, &History::new(&with_now, &outcomes));
        ensure(v.to_bits() == base.to_bits(), || format!("probe {probe}: event at tau changed the intensity"))?;

        // an outcome exactly at tau is part of it
        let seen: Vec<OutcomePoint> = outcomes.iter().copied().filter(|o| o.time < tau).collect();
        let mut with_obs = seen.clone();
        with_obs.push(OutcomePoint { time: tau, value: rng.random_range(11.0..14.0) });
        let a = mediator.time_intensity(tau, &History::new(&events, &seen));
        let b = mediator.time_intensity(tau, &History::new(&events, &with_obs));
        ensure(a != b, || format!("probe {probe}: outcome at tau ignored"))?;
    }
    Ok("10000 probes".into())
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(usize, &str, u64, fn() -> Outcome); 9] = [
        (1, "GP oracle equivalence", 5, gp_oracle),
        (2, "gradient check", 30, gradient_check),
        (3, "thinning statistics", 60, thinning_statistics),
        (4, "effect identities", 60, effect_identities),
        (5, "constructed shift recovery", 300, shift_recovery),
        (6, "ablation ordering", 600, ablation_ordering),
        (7, "glycemia metrics", 5, glycemia),
        (8, "config snapshot", 5, config_snapshot),
        (9, "causality suite", 60, causality_suite),
    ];
    let mut failed = 0;
    for (n, name, limit, run) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let result = run().and_then(|detail| within(start.elapsed(), limit).map(|_| detail));
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {n}: PASS  {name} ({secs:.1} s): {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {n}: FAIL  {name} ({secs:.1} s): {why}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
