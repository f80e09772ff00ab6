//! Property tests of the model invariants.

use dynmed_core::causal::benchmark::ground_truth;
use dynmed_core::causal::{glycemia_metrics, EffectEstimate, ReplicateEffects};
use dynmed_core::kernels::KernelSpec;
use dynmed_core::linalg::Cholesky;
use dynmed_core::mediator::History;
use dynmed_core::outcome::{OutcomeConfig, OutcomeModel};
use dynmed_core::{MediatorEvent, OutcomePoint};
use dynmed_core::causal::benchmark::GroundTruth;
use proptest::prelude::*;

static TRUTH: std::sync::LazyLock<GroundTruth> = std::sync::LazyLock::new(|| ground_truth(2).unwrap());

fn kernel() -> impl Strategy<Value = KernelSpec> {
    let pos = || 0.1f64..3.0;
    prop_oneof![
        (pos(), pos()).prop_map(|(v, l)| KernelSpec::squared_exponential(v, vec![l]).unwrap()),
        (pos(), pos()).prop_map(|(v, l)| KernelSpec::matern12(v, l).unwrap()),
        pos().prop_map(|v| KernelSpec::constant(v).unwrap()),
        (pos(), pos(), 1.0f64..24.0).prop_map(|(v, l, p)| KernelSpec::periodic(v, l, p).unwrap()),
        (pos(), pos(), pos()).prop_map(|(c, v, l)| {
            KernelSpec::sum(vec![KernelSpec::constant(c).unwrap(), KernelSpec::periodic(v, l, 24.0).unwrap()]).unwrap()
        }),
        (pos(), pos(), 0.5f64..5.0).prop_map(|(v, l, w)| {
            KernelSpec::time_marked(KernelSpec::squared_exponential(v, vec![l]).unwrap(), w).unwrap()
        }),
    ]
}

fn events() -> impl Strategy<Value = Vec<MediatorEvent>> {
    prop::collection::vec((0.0f64..24.0, 1.0f64..120.0), 0..8).prop_map(|mut v| {
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v.dedup_by(|a, b| a.0 == b.0);
        v.into_iter().map(|(time, mark)| MediatorEvent { time, mark }).collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn kernels_are_symmetric(k in kernel(), x in -10.0f64..10.0, y in -10.0f64..10.0) {
        prop_assert_eq!(k.eval(&[x], &[y]).unwrap(), k.eval(&[y], &[x]).unwrap());
    }

    #[test]
    fn gram_matrices_factor_with_jitter(k in kernel(), xs in prop::collection::vec(-10.0f64..10.0, 1..=20)) {
        let xs: Vec<Vec<f64>> = xs.into_iter().map(|x| vec![x]).collect();
        let mut g = k.gram_symmetric(&xs).unwrap();
        prop_assert!(g.is_symmetric(0.0));
        g.add_diagonal(1e-6);
        prop_assert!(Cholesky::factor(&g).is_some());
    }

    #[test]
    fn sums_are_linear(a in kernel(), b in kernel(), xs in prop::collection::vec(-5.0f64..5.0, 1..8)) {
        let xs: Vec<Vec<f64>> = xs.into_iter().map(|x| vec![x]).collect();
        let sum = KernelSpec::sum(vec![a.clone(), b.clone()]).unwrap().gram_symmetric(&xs).unwrap();
        let mut parts = a.gram_symmetric(&xs).unwrap();
        parts.add_assign(&b.gram_symmetric(&xs).unwrap());
        prop_assert!(sum.max_abs_diff(&parts) <= 1e-15);
    }

    #[test]
    fn time_marked_kernel_is_causal(w in 0.5f64..5.0, r in -10.0f64..10.0, s in 0.01f64..0.5) {
        let k = KernelSpec::time_marked(KernelSpec::squared_exponential(1.0, vec![1.0]).unwrap(), w).unwrap();
        let inside = s * w;
        let v = k.eval(&[r], &[inside]).unwrap();
        if r <= 0.0 || r > w {
            prop_assert_eq!(v, 0.0);
        } else {
            prop_assert!(v > 0.0);
        }
    }

    #[test]
    fn future_events_do_not_change_predictions(past in events(), later in prop::collection::vec((0.0f64..10.0, 1.0f64..90.0), 1..4), tau in 0.0f64..24.0) {
        let gt = &*TRUTH;
        let o = &gt.models.post.outcome;
        let before: Vec<MediatorEvent> = past.iter().copied().filter(|e| e.time < tau).collect();
        let mut with_future = before.clone();
        with_future.extend(later.iter().map(|&(d, mark)| MediatorEvent { time: tau + d, mark }));
        let (m0, v0) = o.predict_one("p01", &before, tau);
        let (m1, v1) = o.predict_one("p01", &with_future, tau);
        prop_assert_eq!(m0.to_bits(), m1.to_bits());
        prop_assert_eq!(v0.to_bits(), v1.to_bits());
    }

    #[test]
    fn responses_add_over_events(a in events(), b in events(), tau in 0.0f64..27.0) {
        let o = OutcomeModel::untrained(&OutcomeConfig::default()).unwrap();
        let mut both = a.clone();
        both.extend(b.iter().copied());
        both.sort_by(|x, y| x.time.total_cmp(&y.time));
        let sum = o.response_value("p", &a, tau) + o.response_value("p", &b, tau);
        prop_assert!((o.response_value("p", &both, tau) - sum).abs() <= 1e-12 * (1.0 + sum.abs()));
    }

    #[test]
    fn predictive_variance_respects_the_noise_floor(ev in events(), tau in 0.0f64..48.0) {
        let gt = &*TRUTH;
        for joint in [&gt.models.pre, &gt.models.post] {
            let (_, var) = joint.outcome.predict_one("p00", &ev, tau);
            prop_assert!(var >= joint.outcome.noise_variance());
        }
        let o = OutcomeModel::untrained(&OutcomeConfig::default()).unwrap();
        prop_assert!(o.predict_one("p", &ev, tau).1 >= o.noise_variance());
    }

    #[test]
    fn intensities_are_non_negative(ev in events(), ys in prop::collection::vec(2.0f64..15.0, 0..10), tau in 0.0f64..30.0) {
        let outcomes: Vec<OutcomePoint> = ys.iter().enumerate().map(|(i, &value)| OutcomePoint { time: 2.4 * i as f64, value }).collect();
        let gt = &*TRUTH;
        let h = History::new(&ev, &outcomes);
        for joint in [&gt.models.pre, &gt.models.post] {
            let point = joint.mediator.time_intensity(tau, &h);
            prop_assert!(point >= 0.0);
            prop_assert!(joint.mediator.expected_intensity(tau, &h) >= point);
        }
    }

    #[test]
    fn older_events_are_invisible_with_one_lag(ev in events(), older_frac in 0.0f64..1.0, d in 0.01f64..6.0) {
        prop_assume!(!ev.is_empty());
        let gt = &*TRUTH;
        let m = &gt.models.pre.mediator;
        let last = ev.last().unwrap().time;
        let tau = last + d;
        let older = last * older_frac;
        prop_assume!(ev.iter().all(|e| e.time != older));
        let mut more = ev.clone();
        more.push(MediatorEvent { time: older, mark: 20.0 });
        more.sort_by(|a, b| a.time.total_cmp(&b.time));
        let a = m.time_intensity(tau, &History::new(&ev, &[]));
        let b = m.time_intensity(tau, &History::new(&more, &[]));
        prop_assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn replicate_order_does_not_change_estimates(values in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 2), 2..30), rot in 0usize..30) {
        let reps: Vec<ReplicateEffects> = values
            .iter()
            .map(|v| ReplicateEffects { nde: v.clone(), nie: v.iter().map(|x| x * 0.5).collect(), te: v.iter().map(|x| x * 1.5).collect() })
            .collect();
        let mut shuffled = reps.clone();
        let k = rot % shuffled.len();
        shuffled.rotate_left(k);
        shuffled.reverse();
        let grid = [1.0, 2.0];
        let a = EffectEstimate::from_replicates(&grid, &reps, reps.len(), 0).unwrap();
        let b = EffectEstimate::from_replicates(&grid, &shuffled, reps.len(), 0).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn metric_fractions_are_bounded(values in prop::collection::vec(1.0f64..12.0, 1..100)) {
        let (hypo, ang) = glycemia_metrics(&values, 3.9, 5.6).unwrap();
        prop_assert!((0.0..=100.0).contains(&hypo) && (0.0..=100.0).contains(&ang));
        let between = values.iter().any(|v| *v > 3.9 && *v < 5.6);
        prop_assert!(hypo + ang <= 100.0 + 1e-9);
        if !between {
            prop_assert!((hypo + ang - 100.0).abs() < 1e-9);
        }
    }
}
