mod common;

use pehsmooth_core::io::trajectory;
use pehsmooth_core::*;

#[test]
fn credible_bands_cover_the_true_coefficient() {
    let mut covered = 0;
    let mut total = 0;
    for rep in 0..10u64 {
        let cfg = DgpConfig {
            covariates: 1,
            subjects: 1000,
            seed: 600 + rep,
            ..DgpConfig::default()
        };
        let (records, truth) = simulate_dgp(&cfg).unwrap();
        let partition = cfg.partition().unwrap();
        let panel = expand_exposures(&records, &partition).unwrap();
        let prior = DiscountPrior::new(0.45, 2);
        let out = run_two_filter_smoother(&panel, &partition, &prior, &SmootherConfig::new(2000, 2, rep)).unwrap();
        for row in trajectory(&out, &partition) {
            let band = &row.coefficients[1];
            let b = truth.beta(row.interval)[1];
            covered += usize::from(band.lower <= b && b <= band.upper);
            total += 1;
        }
    }
    let rate = covered as f64 / total as f64;
    assert!(
        rate >= 0.8,
        "95% bands cover beta_1 in {:.1}% of intervals",
        100.0 * rate
    );
}

#[test]
fn spread_shrinks_with_particle_count() {
    let cfg = DgpConfig {
        covariates: 1,
        subjects: 50,
        intervals: 3,
        censoring: 0.1,
        baseline: Baseline::Constant { log_hazard: -3.5 },
        seed: 13,
        ..DgpConfig::default()
    };
    let (records, _) = simulate_dgp(&cfg).unwrap();
    let partition = cfg.partition().unwrap();
    let panel = expand_exposures(&records, &partition).unwrap();
    let prior = DiscountPrior::new(0.45, 2);

    // Run-to-run variance of each smoothed mean about the replicate mean.
    let spread: Vec<Vec<f64>> = [250usize, 1000, 4000]
        .iter()
        .map(|&k| {
            let runs: Vec<Vec<f64>> = (0..20u64)
                .map(|rep| {
                    let out = run_two_filter_smoother(&panel, &partition, &prior, &SmootherConfig::new(k, 2, 50 + rep))
                        .unwrap();
                    (1..=3)
                        .flat_map(|j| out.smoothed_mean(j).iter().copied().collect::<Vec<_>>())
                        .collect()
                })
                .collect();
            (0..6)
                .map(|i| {
                    let m = runs.iter().map(|r| r[i]).sum::<f64>() / 20.0;
                    runs.iter().map(|r| (r[i] - m).powi(2)).sum::<f64>() / 19.0
                })
                .collect()
        })
        .collect();
    let violations = (0..6)
        .flat_map(|i| [(0, i), (1, i)])
        .filter(|&(step, i)| spread[step + 1][i] >= spread[step][i])
        .count();
    assert!(violations <= 1, "variance by particle count {spread:?}");
    assert!(
        (0..6).all(|i| spread[2][i] < spread[0][i]),
        "variance by particle count {spread:?}"
    );
}
