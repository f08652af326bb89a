//! Variance-component recovery on simulated spot data.

use rand::Rng;
use rand_distr::StandardNormal;
use rcd_core::mixed_model::{fit_spots, profile_variance_ratio, CellObservation, SpotGroups};
use rcd_core::rng;

/// `spots_per_junction` spots for each of `j` junctions; every spot carries
/// one observation per tissue and a shared spot effect.
fn simulate(j: usize, spots_per_junction: usize, rho: f64, total_var: f64, seed: u64) -> SpotGroups {
    let mut r = rng::from_seed(seed);
    let sd_spot = (rho * total_var).sqrt();
    let sd_resid = ((1.0 - rho) * total_var).sqrt();
    let mut groups = Vec::new();
    for k in 0..j {
        for _ in 0..spots_per_junction {
            let nu: f64 = sd_spot * r.sample::<f64, _>(StandardNormal);
            groups.push(
                (0..2)
                    .map(|t| CellObservation {
                        cell: t * j + k,
                        value: 9.0 + t as f64 * 0.4 + k as f64 + nu + sd_resid * r.sample::<f64, _>(StandardNormal),
                    })
                    .collect(),
            );
        }
    }
    SpotGroups::new(2 * j, groups).unwrap()
}

#[test]
fn independent_channels_give_small_rho() {
    let reps = 200;
    let mean: f64 = (0..reps)
        .map(|s| profile_variance_ratio(&simulate(2, 10, 0.0, 0.05, s)).unwrap().rho)
        .sum::<f64>()
        / reps as f64;
    assert!(mean <= 0.1, "mean rho {mean}");
}

#[test]
fn moderate_rho_recovered() {
    // 50 spots per junction; with 50 spots in total the sampling sd of rho
    // is about 0.1 and coverage of +-0.15 drops to roughly 85%.
    let reps = 200;
    let hits = (0..reps)
        .filter(|&s| {
            let rho = profile_variance_ratio(&simulate(2, 50, 0.5, 0.1, 1000 + s)).unwrap().rho;
            (rho - 0.5).abs() <= 0.15
        })
        .count();
    assert!(hits as f64 / reps as f64 >= 0.9, "coverage {hits}/{reps}");
}

#[test]
fn mean_covariance_shrinks_like_one_over_n() {
    let reps = 100;
    let scaled: Vec<f64> = [10usize, 20, 40, 80]
        .iter()
        .map(|&n| {
            let mean_diag = (0..reps)
                .map(|s| {
                    let (_, cov, _) = fit_spots(&simulate(3, n, 0.3, 0.1, 7 * s + n as u64)).unwrap();
                    (0..6).map(|i| cov[(i, i)]).sum::<f64>() / 6.0
                })
                .sum::<f64>()
                / reps as f64;
            n as f64 * mean_diag
        })
        .collect();
    // n * var(mu_hat) tends to the per-observation variance 0.1
    for v in &scaled {
        assert!((v / 0.1 - 1.0).abs() < 0.2, "{scaled:?}");
    }
    assert!((scaled[3] / 0.1 - 1.0).abs() < 0.05, "{scaled:?}");
}

#[test]
fn likelihood_at_estimate_beats_neighbours() {
    for s in 0..20 {
        let spots = simulate(2, 8, 0.6, 0.2, 500 + s);
        let vc = profile_variance_ratio(&spots).unwrap();
        assert!(vc.loglik >= vc.start_loglik - 1e-9);
        assert!((0.0..=1.0).contains(&vc.rho));
        assert!((vc.var_spot + vc.var_resid) > 0.0);
    }
}
