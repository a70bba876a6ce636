//! Synthetic two-regime survival data.
//!
//! Covariates are equicorrelated standard normals, each group has its own
//! coefficient magnitudes on a shared support, event times are exponential
//! with rate `exp(eta)`, and independent exponential censoring is tuned to a
//! target censored fraction.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream;
use crate::survival::{ModelIndex, SurvivalDataset, LOG_MAX_F64};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimScenario {
    pub p: usize,
    pub rho: f64,
    pub group_sizes: Vec<usize>,
    pub true_model_size: usize,
    /// `(lo, hi)` of the uniform coefficient draw, one per group.
    pub coef_ranges: Vec<(f64, f64)>,
    pub censor_rate: f64,
    pub seed: u64,
}

impl Default for SimScenario {
    fn default() -> Self {
        Self {
            p: 40,
            rho: 0.25,
            group_sizes: vec![100, 100],
            true_model_size: 6,
            coef_ranges: vec![(0.0, 1.0), (25.0, 26.0)],
            censor_rate: 0.05,
            seed: 1,
        }
    }
}

impl SimScenario {
    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::Config("p must be >= 1".into()));
        }
        if self.true_model_size > self.p {
            return Err(Error::Config(format!(
                "true model size {} exceeds p = {}",
                self.true_model_size, self.p
            )));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::Config(format!("rho must lie in [0, 1), got {}", self.rho)));
        }
        if !(0.0..1.0).contains(&self.censor_rate) {
            return Err(Error::Config(format!(
                "censor rate must lie in [0, 1), got {}",
                self.censor_rate
            )));
        }
        if self.group_sizes.is_empty() || self.group_sizes.len() != self.coef_ranges.len() {
            return Err(Error::Config(
                "need one coefficient range per group".into(),
            ));
        }
        if self.group_sizes.iter().sum::<usize>() == 0 {
            return Err(Error::Config("scenario has no subjects".into()));
        }
        if let Some((lo, hi)) = self.coef_ranges.iter().find(|(lo, hi)| !(lo <= hi)) {
            return Err(Error::Config(format!("empty coefficient range ({lo}, {hi})")));
        }
        Ok(())
    }
}

/// Ground truth emitted alongside a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    /// 0-based group per subject.
    pub labels: Vec<usize>,
    pub models: Vec<ModelIndex>,
    /// Dense length-`p` coefficients per group.
    pub coefficients: Vec<Vec<f64>>,
    pub censor_rate_parameter: f64,
    pub realized_censor_fraction: f64,
    /// Event times that hit the positive-normal floor or the finite ceiling.
    pub clamped_times: usize,
}

/// `n x p` row-major equicorrelated Gaussian design,
/// `x = sqrt(rho) g 1 + sqrt(1 - rho) e`.
pub fn gen_design<R: Rng + ?Sized>(n: usize, p: usize, rho: f64, rng: &mut R) -> Vec<f64> {
    let shared = rho.sqrt();
    let own = (1.0 - rho).sqrt();
    let mut out = Vec::with_capacity(n * p);
    for _ in 0..n {
        let g: f64 = StandardNormal.sample(rng);
        for _ in 0..p {
            let e: f64 = StandardNormal.sample(rng);
            out.push(shared * g + own * e);
        }
    }
    out
}

/// Dense true coefficients per group on support `{0, .., size - 1}`.
pub fn gen_coefficients<R: Rng + ?Sized>(scenario: &SimScenario, rng: &mut R) -> Vec<Vec<f64>> {
    scenario
        .coef_ranges
        .iter()
        .map(|&(lo, hi)| {
            let mut beta = vec![0.0; scenario.p];
            for b in beta.iter_mut().take(scenario.true_model_size) {
                let u: f64 = rng.random();
                *b = lo + (hi - lo) * u;
            }
            beta
        })
        .collect()
}

fn linear_predictors(design: &[f64], p: usize, beta: &[f64]) -> Vec<f64> {
    design
        .chunks_exact(p)
        .map(|row| row.iter().zip(beta).map(|(x, b)| x * b).sum())
        .collect()
}

/// `log T = log E - eta`.
fn gen_log_event_times<R: Rng + ?Sized>(etas: &[f64], rng: &mut R) -> Vec<f64> {
    etas.iter()
        .map(|eta| {
            let e: f64 = Exp1.sample(rng);
            e.ln() - eta
        })
        .collect()
}

fn clamp_log_time(log_t: f64, clamped: &mut usize) -> f64 {
    let floor = f64::MIN_POSITIVE.ln();
    if log_t < floor {
        *clamped += 1;
        f64::MIN_POSITIVE
    } else if log_t > LOG_MAX_F64 {
        *clamped += 1;
        f64::MAX
    } else {
        log_t.exp().max(f64::MIN_POSITIVE)
    }
}

/// Event times with rate `exp(x' beta)`; returns the times and the number
/// clamped into the positive normal range.
pub fn gen_event_times<R: Rng + ?Sized>(
    design: &[f64],
    p: usize,
    beta: &[f64],
    rng: &mut R,
) -> (Vec<f64>, usize) {
    let etas = linear_predictors(design, p, beta);
    let mut clamped = 0;
    let times = gen_log_event_times(&etas, rng)
        .into_iter()
        .map(|l| clamp_log_time(l, &mut clamped))
        .collect();
    (times, clamped)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Rate `c` of exponential censoring times such that the expected censored
/// fraction `mean_i c / (c + exp(eta_i))` equals `target`. Bisection on
/// `log c`; `target = 0` gives `c = 0`.
pub fn calibrate_censoring(etas: &[f64], target: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&target) {
        return Err(Error::InvalidArgument(format!(
            "censoring target must lie in [0, 1), got {target}"
        )));
    }
    if target == 0.0 {
        return Ok(0.0);
    }
    if etas.is_empty() {
        return Err(Error::InvalidArgument("no linear predictors".into()));
    }
    let expected = |log_c: f64| {
        etas.iter().map(|eta| sigmoid(log_c - eta)).sum::<f64>() / etas.len() as f64
    };
    let (mut lo, mut hi) = (-800.0, 800.0);
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        let f = expected(mid);
        if (f - target).abs() < 1e-6 {
            lo = mid;
            hi = mid;
            break;
        }
        if f < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

/// Draws one dataset from `scenario`; bit-for-bit reproducible from its seed.
pub fn simulate(scenario: &SimScenario) -> Result<(SurvivalDataset, SimTruth)> {
    scenario.validate()?;
    let p = scenario.p;
    let mut coef_rng = stream(scenario.seed, &[0]);
    let coefficients = gen_coefficients(scenario, &mut coef_rng);
    let support: Vec<usize> = (0..scenario.true_model_size).collect();
    let models = scenario
        .coef_ranges
        .iter()
        .map(|&(lo, hi)| {
            if lo == 0.0 && hi == 0.0 {
                ModelIndex::empty()
            } else {
                ModelIndex::new(support.clone(), p).expect("support within p")
            }
        })
        .collect();

    let mut design = Vec::new();
    let mut etas = Vec::new();
    let mut labels = Vec::new();
    for (g, &size) in scenario.group_sizes.iter().enumerate() {
        let mut rng = stream(scenario.seed, &[1, g as u64]);
        let block = gen_design(size, p, scenario.rho, &mut rng);
        etas.extend(linear_predictors(&block, p, &coefficients[g]));
        design.extend(block);
        labels.extend(std::iter::repeat_n(g, size));
    }
    let n = labels.len();

    let mut time_rng = stream(scenario.seed, &[2]);
    let log_event = gen_log_event_times(&etas, &mut time_rng);
    let c = calibrate_censoring(&etas, scenario.censor_rate)?;
    let mut cens_rng = stream(scenario.seed, &[3]);
    let mut times = Vec::with_capacity(n);
    let mut events = Vec::with_capacity(n);
    let mut clamped = 0;
    for &log_t in &log_event {
        let log_c = if c > 0.0 {
            let e: f64 = Exp1.sample(&mut cens_rng);
            e.ln() - c.ln()
        } else {
            f64::INFINITY
        };
        let event = log_t <= log_c;
        times.push(clamp_log_time(log_t.min(log_c), &mut clamped));
        events.push(event);
    }
    if clamped > 0 {
        log::warn!("{clamped} simulated times clamped into the finite positive range");
    }
    let names = (1..=p).map(|j| format!("x{j}")).collect();
    let data = SurvivalDataset::new(times, events, design, names)?;
    let truth = SimTruth {
        labels,
        models,
        coefficients,
        censor_rate_parameter: c,
        realized_censor_fraction: data.censored_fraction(),
        clamped_times: clamped,
    };
    Ok((data, truth))
}
