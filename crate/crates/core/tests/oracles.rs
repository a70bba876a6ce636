mod common;

use approx::assert_relative_eq;
use dpcox::optim::{newton_minimize, LbfgsConfig};
use dpcox::priors::{imom_log_density, imom_log_density_grad, sample_mixture_weights, ImomHyper};
use dpcox::rng::rng_from_seed;
use dpcox::search::{fit_map_coefficients, log_laplace_model_score, ClusterShard, Hypers, SearchConfig};
use dpcox::simulation::{gen_design, gen_event_times, simulate, SimScenario};
use dpcox::survival::{
    log_likelihood, log_likelihood_derivatives, martingale_residuals, survival_probability,
};
use dpcox::{CoefficientVector, ModelIndex, SurvivalDataset};

use common::*;

#[test]
fn imom_density_integrates_to_one() {
    for (r, tau) in [(1.0, 0.25), (1.0, 1.0), (2.0, 0.5), (3.0, 0.1)] {
        let mass = imom_total_mass(&ImomHyper::new(r, tau).unwrap());
        assert!((mass - 1.0).abs() < 1e-6, "r={r} tau={tau}: mass {mass}");
    }
}

#[test]
fn imom_mode_by_golden_section() {
    for (r, tau) in [(1.0, 0.25), (2.0, 1.3)] {
        let h = ImomHyper::new(r, tau).unwrap();
        let found = golden_max(|u| imom_log_density(u, &h), 1e-3, 10.0);
        assert!((found - h.mode()).abs() < 1e-6, "{found} vs {}", h.mode());
    }
    assert_relative_eq!(ImomHyper::default().mode(), 0.5, epsilon = 1e-15);
}

#[test]
fn imom_gradient_matches_central_difference() {
    let h = ImomHyper::default();
    for u in [-2.0, -0.5, -0.2, 0.3, 0.7, 1.5, 4.0] {
        let fd = central_diff(|x| imom_log_density(x, &h), u, 1e-6);
        let an = imom_log_density_grad(u, &h).unwrap();
        assert!((an - fd).abs() <= 1e-6 * an.abs().max(1.0), "u={u}: {an} vs {fd}");
    }
}

fn small_dataset(seed: u64) -> SurvivalDataset {
    let (data, _) = simulate(&SimScenario {
        p: 5,
        group_sizes: vec![120],
        true_model_size: 3,
        coef_ranges: vec![(0.2, 0.8)],
        censor_rate: 0.3,
        seed,
        ..Default::default()
    })
    .unwrap();
    data
}

#[test]
fn likelihood_gradient_and_hessian_match_central_differences() {
    let data = small_dataset(11);
    let rows = data.all_rows();
    let model = ModelIndex::new(vec![0, 2, 4], 5).unwrap();
    let beta = [0.4, -0.3, 0.15];
    let d = log_likelihood_derivatives(&data, &rows, &model, &beta, true).unwrap();
    let ll = |b: &[f64]| {
        log_likelihood(&data, &CoefficientVector::new(model.clone(), b.to_vec()).unwrap(), &rows).unwrap()
    };
    assert_relative_eq!(d.value, ll(&beta), max_relative = 1e-12);
    let h = 1e-5;
    for a in 0..3 {
        let shifted = |delta: f64| {
            let mut b = beta.to_vec();
            b[a] += delta;
            b
        };
        let fd = (ll(&shifted(h)) - ll(&shifted(-h))) / (2.0 * h);
        assert!(
            (d.gradient[a] - fd).abs() <= 1e-6 * d.gradient[a].abs().max(1.0),
            "gradient {a}: {} vs {fd}",
            d.gradient[a]
        );
        let gp = log_likelihood_derivatives(&data, &rows, &model, &shifted(h), false).unwrap();
        let gm = log_likelihood_derivatives(&data, &rows, &model, &shifted(-h), false).unwrap();
        for b in 0..3 {
            let fd = (gp.gradient[b] - gm.gradient[b]) / (2.0 * h);
            let an = d.hessian[b * 3 + a];
            assert!((an - fd).abs() <= 1e-6 * an.abs().max(1.0), "hessian {b},{a}: {an} vs {fd}");
        }
    }
}

/// Adds a leading column of ones, which plays the role of an intercept.
fn with_constant_column(data: &SurvivalDataset) -> SurvivalDataset {
    let mut design = Vec::new();
    for i in 0..data.n() {
        design.push(1.0);
        design.extend_from_slice(data.row(i));
    }
    let mut names = vec!["one".to_string()];
    names.extend(data.names().iter().cloned());
    SurvivalDataset::new(data.times().to_vec(), data.events().to_vec(), design, names).unwrap()
}

#[test]
fn martingale_residuals_vanish_at_the_mle_with_an_intercept() {
    let data = with_constant_column(&small_dataset(3));
    let rows = data.all_rows();
    let model = ModelIndex::new(vec![0, 1, 2], data.p()).unwrap();
    let neg = |b: &[f64]| {
        let d = log_likelihood_derivatives(&data, &rows, &model, b, true)?;
        Some((
            -d.value,
            d.gradient.iter().map(|g| -g).collect(),
            d.hessian.iter().map(|h| -h).collect(),
        ))
    };
    let config = LbfgsConfig {
        grad_tol: 1e-10,
        ..Default::default()
    };
    let m = newton_minimize(neg, &[0.0, 0.0, 0.0], &config).unwrap();
    assert!(m.converged(), "{:?}", m.termination);
    let coef = CoefficientVector::new(model, m.x).unwrap();
    let r = martingale_residuals(&data, &coef, &rows).unwrap();
    let total: f64 = r.iter().sum();
    assert!(total.abs() < 1e-8, "sum of residuals {total}");
    // score equations for the other columns as well
    for j in [1, 2] {
        let s: f64 = rows.iter().map(|&i| r[i] * data.x(i, j)).sum();
        assert!(s.abs() < 1e-8, "column {j}: {s}");
    }
}

#[test]
fn survival_function_integrates_to_mean_event_time() {
    for eta in [-1.5, 0.0, 0.7, 2.0] {
        let scale = f64::exp(-eta);
        let upper = 60.0 * scale;
        let area = midpoint(|t| survival_probability(t, eta).unwrap(), 0.0, upper, 200_000);
        assert!((area - scale).abs() <= 1e-6 * scale, "eta={eta}: {area} vs {scale}");
    }
}

#[test]
fn doubling_times_shifts_the_intercept_by_log_two() {
    let data = with_constant_column(&small_dataset(5));
    let doubled = data.with_scaled_times(2.0).unwrap();
    let rows = data.all_rows();
    let events = data.events().iter().filter(|e| **e).count() as f64;
    let model = ModelIndex::new(vec![0, 1, 3], data.p()).unwrap();
    let at = |d: &SurvivalDataset, b: Vec<f64>| {
        log_likelihood(d, &CoefficientVector::new(model.clone(), b).unwrap(), &rows).unwrap()
    };
    let lhs = at(&doubled, vec![0.2, 0.5, -0.4]);
    let rhs = at(&data, vec![0.2 + 2f64.ln(), 0.5, -0.4]) - events * 2f64.ln();
    assert_relative_eq!(lhs, rhs, max_relative = 1e-12);
}

#[test]
fn laplace_score_tracks_quadrature_for_one_covariate() {
    let hypers = Hypers::with_p(2);
    let config = SearchConfig::default();
    let model = ModelIndex::new(vec![0], 2).unwrap();
    for (k, beta) in [0.6, -0.8, 1.0].into_iter().enumerate() {
        let data = one_covariate_data(500, beta, 40 + k as u64);
        let shard = ClusterShard::full(&data);
        let s = log_laplace_model_score(&shard, &model, &hypers, &config).unwrap();
        let sd = (-0.5 * s.hessian_logdet).exp();
        let quad = quadrature_log_marginal(&data, 0, &hypers, s.map_coef.values[0], sd);
        assert!((s.log_score - quad).abs() <= 0.1, "beta={beta}: {} vs {quad}", s.log_score);
    }
}

#[test]
fn map_fit_gradient_is_below_tolerance() {
    let data = small_dataset(8);
    let shard = ClusterShard::full(&data);
    let hypers = Hypers::with_p(5);
    let config = SearchConfig::default();
    for idx in [vec![0], vec![0, 1], vec![0, 1, 2], vec![1, 3]] {
        let model = ModelIndex::new(idx, 5).unwrap();
        let fit = fit_map_coefficients(&shard, &model, &hypers, &config).unwrap();
        assert!(fit.gradient_norm <= config.tolerance, "{:?}: {}", model, fit.gradient_norm);
    }
}

#[test]
fn exponential_event_times_pass_ks() {
    let n = 2000;
    let p = 4;
    let mut rng = rng_from_seed(21);
    let design = gen_design(n, p, 0.3, &mut rng);
    let beta = [0.8, -0.5, 0.0, 0.3];
    let (times, clamped) = gen_event_times(&design, p, &beta, &mut rng);
    assert_eq!(clamped, 0);
    // t * exp(eta) is standard exponential
    let unit: Vec<f64> = times
        .iter()
        .zip(design.chunks_exact(p))
        .map(|(t, x)| t * x.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>().exp())
        .collect();
    let d = ks_statistic(&unit, |x| 1.0 - (-x).exp());
    let critical = 1.358 / (n as f64).sqrt();
    assert!(d < critical, "KS statistic {d} >= {critical}");
}

#[test]
fn dirichlet_weights_have_the_dirichlet_mean() {
    let mut rng = rng_from_seed(17);
    let draws = 100_000;
    let mut sum = [0.0; 2];
    for _ in 0..draws {
        let w = sample_mixture_weights(&[90, 10], 0.1, &mut rng).unwrap();
        sum[0] += w.weights[0];
        sum[1] += w.weights[1];
    }
    let expected = [90.05 / 100.1, 10.05 / 100.1];
    for k in 0..2 {
        let mean = sum[k] / draws as f64;
        assert!((mean - expected[k]).abs() < 0.005, "component {k}: {mean}");
    }
}

#[test]
fn censoring_is_calibrated_on_average() {
    for target in [0.05, 0.3, 0.6] {
        let reps = 20;
        let mean: f64 = (0..reps)
            .map(|r| {
                simulate(&SimScenario {
                    group_sizes: vec![200, 200],
                    censor_rate: target,
                    seed: 1000 + r,
                    ..Default::default()
                })
                .unwrap()
                .1
                .realized_censor_fraction
            })
            .sum::<f64>()
            / reps as f64;
        assert!((mean - target).abs() <= 0.02, "target {target}: realized {mean}");
    }
}
