use nalgebra::DMatrix;
use pehsmooth_core::data::expand_subject;
use pehsmooth_core::smoother::{ess_from_log_weights, normalize_log_weights, weighted_moments};
use pehsmooth_core::*;
use proptest::prelude::*;

fn partition_strategy() -> impl Strategy<Value = IntervalPartition> {
    prop::collection::vec(0.01f64..10.0, 1..10).prop_map(|widths| {
        let mut cuts = vec![0.0];
        for w in widths {
            let last = *cuts.last().unwrap();
            cuts.push(last + w);
        }
        IntervalPartition::from_cuts(cuts).unwrap()
    })
}

fn paths_strategy(dim: usize, intervals: usize) -> impl Strategy<Value = FullPaths> {
    (1usize..6).prop_flat_map(move |count| {
        (
            prop::collection::vec(-3.0f64..0.5, count * dim * intervals),
            prop::collection::vec(-4.0f64..0.0, count),
        )
            .prop_map(move |(values, mut log_weights)| {
                normalize_log_weights(&mut log_weights).unwrap();
                FullPaths {
                    dim,
                    num_intervals: intervals,
                    values,
                    log_weights,
                }
            })
    })
}

fn records_strategy(horizon: f64) -> impl Strategy<Value = Vec<SurvivalRecord>> {
    prop::collection::vec((0.0..1.2 * horizon, any::<bool>(), -2.0f64..2.0), 1..8).prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, (t, d, x))| SurvivalRecord::new(format!("r{i}"), t, d, vec![x]))
            .collect()
    })
}

fn fixed_partition() -> IntervalPartition {
    IntervalPartition::from_cuts(vec![0.0, 1.0, 2.5, 4.0]).unwrap()
}

proptest! {
    #[test]
    fn exposures_sum_to_truncated_time(partition in partition_strategy(), frac in 0.0f64..1.5, event in any::<bool>()) {
        let time = frac * partition.horizon();
        let (entries, truncated) = expand_subject(time, event, &partition);
        let total: f64 = entries.iter().map(|e| e.exposure).sum();
        prop_assert!((total - time.min(partition.horizon())).abs() <= 1e-9 * partition.horizon());
        prop_assert_eq!(truncated, time > partition.horizon());
        prop_assert!(entries.iter().filter(|e| e.event).count() <= 1);
    }

    #[test]
    fn forward_covariance_stays_positive_definite(
        raw in prop::collection::vec(-2.0f64..2.0, 9),
        rows in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0, 0.0f64..40.0, any::<bool>()), 0..30),
    ) {
        let a = DMatrix::from_row_slice(3, 3, &raw);
        let u = &a * a.transpose() + DMatrix::identity(3, 3) * 1e-3;
        let mut slice = IntervalSlice::new(3);
        for (i, (x1, x2, t, d)) in rows.iter().enumerate() {
            slice.push(i, *t, *d, &[1.0, *x1, *x2]);
        }
        let rec = ForwardRecursion::new(&u, &slice).unwrap();
        let mut c = rec.covariance().clone();
        c.fill_upper_triangle_with_lower_triangle();
        prop_assert!(c.symmetric_eigenvalues().min() > 0.0);
    }

    #[test]
    fn normalized_weights_sum_to_one(mut w in prop::collection::vec(-800.0f64..800.0, 1..300)) {
        normalize_log_weights(&mut w).unwrap();
        let total: f64 = w.iter().map(|v| v.exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        let ess = ess_from_log_weights(&w);
        prop_assert!(ess >= 1.0 - 1e-9 && ess <= w.len() as f64 + 1e-9);
    }

    #[test]
    fn waic_ignores_duplication_and_weight_scale(
        paths in paths_strategy(2, 3),
        test in records_strategy(4.0),
        shift in -50.0f64..50.0,
    ) {
        let partition = fixed_partition();
        let base = waic(&test, &paths, &partition).unwrap();
        let mut doubled = paths.clone();
        doubled.values.extend_from_slice(&paths.values);
        doubled.log_weights = paths.log_weights.iter().chain(&paths.log_weights).map(|w| w - 2f64.ln()).collect();
        let dup = waic(&test, &doubled, &partition).unwrap();
        prop_assert!((base.waic - dup.waic).abs() <= 1e-8 * base.waic.abs().max(1.0));
        let mut shifted = paths.clone();
        shifted.log_weights.iter_mut().for_each(|w| *w += shift);
        let sh = waic(&test, &shifted, &partition).unwrap();
        prop_assert!((base.waic - sh.waic).abs() <= 1e-8 * base.waic.abs().max(1.0));
    }

    #[test]
    fn predicted_survival_is_a_survival_function(
        paths in paths_strategy(2, 3),
        x in -2.0f64..2.0,
        mut times in prop::collection::vec(0.0f64..4.0, 2..12),
    ) {
        let partition = fixed_partition();
        let z = [1.0, x];
        prop_assert!((predict_survival(&paths, &partition, &z, 0.0).unwrap() - 1.0).abs() < 1e-15);
        times.sort_by(f64::total_cmp);
        let mut last = 1.0;
        for t in times {
            let s = predict_survival(&paths, &partition, &z, t).unwrap();
            prop_assert!((0.0..=1.0).contains(&s));
            prop_assert!(s <= last + 1e-12);
            last = s;
        }
    }

    #[test]
    fn ess_is_scale_invariant(
        means in prop::collection::vec(-1.0f64..1.0, 4),
        vars in prop::collection::vec(0.1f64..2.0, 4),
        scale in 0.01f64..100.0,
    ) {
        let wrap = |v: &[f64]| v.iter().map(|x| vec![vec![*x]]).collect::<Vec<_>>();
        let cpu = vec![1.0; 4];
        let a = ess(&wrap(&means), &wrap(&vars), &cpu).unwrap();
        let sm: Vec<f64> = means.iter().map(|m| m * scale).collect();
        let sv: Vec<f64> = vars.iter().map(|v| v * scale * scale).collect();
        let b = ess(&wrap(&sm), &wrap(&sv), &cpu).unwrap();
        let (x, y) = (a.cell(1, 0).ess, b.cell(1, 0).ess);
        prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
    }

    #[test]
    fn weighted_moments_match_naive_sums(
        rows in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -6.0f64..0.0), 1..60),
    ) {
        let mut log_weights: Vec<f64> = rows.iter().map(|r| r.2).collect();
        normalize_log_weights(&mut log_weights).unwrap();
        let set = ParticleSet {
            interval: 1,
            dim: 2,
            particles: rows.iter().flat_map(|r| [r.0, r.1]).collect(),
            log_weights: log_weights.clone(),
            ancestors: vec![0; rows.len()],
        };
        let g = weighted_moments(&set).unwrap();
        let w: Vec<f64> = log_weights.iter().map(|v| v.exp()).collect();
        let total: f64 = w.iter().sum();
        let m0 = rows.iter().zip(&w).map(|(r, w)| w * r.0).sum::<f64>() / total;
        let m1 = rows.iter().zip(&w).map(|(r, w)| w * r.1).sum::<f64>() / total;
        let c01 = rows.iter().zip(&w).map(|(r, w)| w * (r.0 - m0) * (r.1 - m1)).sum::<f64>() / total;
        let c00 = rows.iter().zip(&w).map(|(r, w)| w * (r.0 - m0).powi(2)).sum::<f64>() / total;
        prop_assert!((g.mean[0] - m0).abs() <= 1e-10);
        prop_assert!((g.mean[1] - m1).abs() <= 1e-10);
        prop_assert!((g.cov[(0, 1)] - c01).abs() <= 1e-10);
        prop_assert!((g.cov[(1, 0)] - c01).abs() <= 1e-10);
        prop_assert!((g.cov[(0, 0)] - c00).abs() <= 1e-10);
    }

    #[test]
    fn posterior_expectation_matches_naive_sum(paths in paths_strategy(2, 3)) {
        let g = |p: &[f64]| p.iter().map(|v| v.sin()).sum::<f64>();
        let got = posterior_expectation(&paths, g).unwrap();
        let mut want = 0.0;
        for s in 0..paths.len() {
            want += paths.log_weights[s].exp() * g(paths.path(s));
        }
        prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
    }
}
