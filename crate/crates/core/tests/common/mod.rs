//! Independent oracles shared by the integration and acceptance tests.
//! Nothing here calls the code under test for the quantity being checked.
#![allow(dead_code)]

use dpcox::priors::{imom_log_density, log_sum_exp, model_log_prior, ImomHyper};
use dpcox::search::{log_laplace_model_score, ClusterShard, Hypers, ModelScore, SearchConfig};
use dpcox::survival::log_likelihood;
use dpcox::{CoefficientVector, ModelIndex, SurvivalDataset};

/// Midpoint rule on `[a, b]` with `n` panels.
pub fn midpoint<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    (0..n).map(|i| f(a + (i as f64 + 0.5) * h)).sum::<f64>() * h
}

/// Total mass of the iMOM density. `[0, 1]` is integrated directly and
/// `[1, inf)` through `u = 1 / v`, doubled for the symmetric negative half.
pub fn imom_total_mass(hyper: &ImomHyper) -> f64 {
    let n = 200_000;
    let inner = midpoint(|u| imom_log_density(u, hyper).exp(), 0.0, 1.0, n);
    let outer = midpoint(|v| imom_log_density(1.0 / v, hyper).exp() / (v * v), 0.0, 1.0, n);
    2.0 * (inner + outer)
}

/// Golden-section search for the maximizer of a unimodal `f` on `[a, b]`.
pub fn golden_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    while (b - a).abs() > 1e-12 {
        if f(c) > f(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - g * (b - a);
        d = a + g * (b - a);
    }
    0.5 * (a + b)
}

/// Central difference of `f` at `x`.
pub fn central_diff<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Log marginal posterior of the one-covariate model `{j}` by brute-force
/// quadrature over the whole real line:
/// `log p(m) + log int L(b) pi(b) db`.
pub fn quadrature_log_marginal(
    data: &SurvivalDataset,
    j: usize,
    hypers: &Hypers,
    center: f64,
    sd: f64,
) -> f64 {
    let rows = data.all_rows();
    let model = ModelIndex::new(vec![j], data.p()).unwrap();
    let half = center.abs() + 25.0 * sd;
    let h = sd / 60.0;
    let n = (2.0 * half / h).ceil() as usize;
    let logs: Vec<f64> = (0..n)
        .map(|i| -half + (i as f64 + 0.5) * h)
        .filter(|b| *b != 0.0)
        .map(|b| {
            let coef = CoefficientVector::new(model.clone(), vec![b]).unwrap();
            log_likelihood(data, &coef, &rows).unwrap() + imom_log_density(b, &hypers.imom)
        })
        .collect();
    log_sum_exp(&logs) + h.ln() + model_log_prior(1, &hypers.model_prior).unwrap()
}

/// Highest Laplace-scored model among all subsets of size at most `cap`.
pub fn exhaustive_best(
    shard: &ClusterShard<'_>,
    hypers: &Hypers,
    config: &SearchConfig,
    cap: usize,
) -> ModelScore {
    let p = shard.data().p();
    assert!(p < 20, "exhaustive enumeration is for small p");
    let mut best: Option<ModelScore> = None;
    for mask in 0u32..(1 << p) {
        if mask.count_ones() as usize > cap {
            continue;
        }
        let idx: Vec<usize> = (0..p).filter(|j| mask & (1 << j) != 0).collect();
        let model = ModelIndex::new(idx, p).unwrap();
        if let Ok(s) = log_laplace_model_score(shard, &model, hypers, config) {
            if best.as_ref().is_none_or(|b| s.log_score > b.log_score) {
                best = Some(s);
            }
        }
    }
    best.expect("the null model always scores")
}

/// Kolmogorov-Smirnov statistic of `sample` against the continuous CDF `cdf`.
pub fn ks_statistic<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// One-covariate exponential data with rate `exp(beta * x)`, x standard
/// normal, plus a pure-noise second column.
pub fn one_covariate_data(n: usize, beta: f64, seed: u64) -> SurvivalDataset {
    use dpcox::rng::rng_from_seed;
    use rand_distr::{Distribution, Exp1, StandardNormal};
    let mut rng = rng_from_seed(seed);
    let mut times = Vec::with_capacity(n);
    let mut design = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let x: f64 = StandardNormal.sample(&mut rng);
        let noise: f64 = StandardNormal.sample(&mut rng);
        let e: f64 = Exp1.sample(&mut rng);
        times.push(e / (beta * x).exp());
        design.push(x);
        design.push(noise);
    }
    SurvivalDataset::new(times, vec![true; n], design, vec!["x".into(), "noise".into()]).unwrap()
}
