//! Coefficient, model-space and mixture-weight priors.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Open01};
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Inverse-moment (iMOM) slab hyper-parameters.
///
/// Density: `tau^(r/2) / Gamma(r/2) * |u|^-(r+1) * exp(-tau / u^2)`, which
/// vanishes at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImomHyper {
    pub r: f64,
    pub tau: f64,
}

impl Default for ImomHyper {
    fn default() -> Self {
        Self { r: 1.0, tau: 0.25 }
    }
}

impl ImomHyper {
    pub fn new(r: f64, tau: f64) -> Result<Self> {
        if !(r > 0.0 && r.is_finite() && tau > 0.0 && tau.is_finite()) {
            return Err(Error::Config(format!(
                "iMOM hyper-parameters must be positive (r={r}, tau={tau})"
            )));
        }
        Ok(Self { r, tau })
    }

    fn log_norm(&self) -> f64 {
        0.5 * self.r * self.tau.ln() - ln_gamma(0.5 * self.r)
    }

    /// Location of the two symmetric modes, `sqrt(2 tau / (r + 1))`.
    pub fn mode(&self) -> f64 {
        (2.0 * self.tau / (self.r + 1.0)).sqrt()
    }
}

pub fn imom_log_density(u: f64, hyper: &ImomHyper) -> f64 {
    if u == 0.0 {
        return f64::NEG_INFINITY;
    }
    let u2 = u * u;
    hyper.log_norm() - 0.5 * (hyper.r + 1.0) * u2.ln() - hyper.tau / u2
}

/// `d/du log pi(u) = -(r+1)/u + 2 tau / u^3`.
pub fn imom_log_density_grad(u: f64, hyper: &ImomHyper) -> Result<f64> {
    if u == 0.0 {
        return Err(Error::InvalidArgument(
            "iMOM log-density gradient is undefined at 0".into(),
        ));
    }
    Ok(-(hyper.r + 1.0) / u + 2.0 * hyper.tau / (u * u * u))
}

/// Second derivative `(r+1)/u^2 - 6 tau / u^4`; `u` must be nonzero.
pub(crate) fn imom_log_density_curvature(u: f64, hyper: &ImomHyper) -> f64 {
    let u2 = u * u;
    (hyper.r + 1.0) / u2 - 6.0 * hyper.tau / (u2 * u2)
}

/// Which exponent the beta-binomial model prior uses on `(1 - theta)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelPriorExponent {
    /// `b + p - 1 - |m|`, as printed.
    #[default]
    Verbatim,
    /// `b + p - |m|`, the textbook beta-binomial.
    Standard,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelPriorHyper {
    pub a: f64,
    pub b: f64,
    pub p: usize,
    #[serde(default)]
    pub exponent: ModelPriorExponent,
}

impl ModelPriorHyper {
    pub fn new(a: f64, b: f64, p: usize, exponent: ModelPriorExponent) -> Result<Self> {
        if !(a > 0.0 && b > 0.0) || p == 0 {
            return Err(Error::Config(format!(
                "model prior needs a>0, b>0, p>=1 (a={a}, b={b}, p={p})"
            )));
        }
        Ok(Self { a, b, p, exponent })
    }

    pub fn with_p(p: usize) -> Self {
        Self {
            a: 1.0,
            b: 1.0,
            p,
            exponent: ModelPriorExponent::Verbatim,
        }
    }

    /// Largest model size the prior is defined for.
    pub fn max_size(&self) -> usize {
        match self.exponent {
            ModelPriorExponent::Verbatim => self.p - 1,
            ModelPriorExponent::Standard => self.p,
        }
    }
}

/// `log B(a + q, b + p - 1 - q) - log B(a, b)` (or `p - q` with the
/// standard exponent).
pub fn model_log_prior(size: usize, hyper: &ModelPriorHyper) -> Result<f64> {
    if size > hyper.max_size() {
        return Err(Error::InvalidArgument(format!(
            "model size {size} exceeds prior support 0..={} (p={})",
            hyper.max_size(),
            hyper.p
        )));
    }
    let rest = (hyper.max_size() - size) as f64;
    Ok(ln_beta(hyper.a + size as f64, hyper.b + rest) - ln_beta(hyper.a, hyper.b))
}

/// Mixture weights on the simplex. Log weights are kept alongside because
/// components with near-zero occupancy draw weights below `f64` range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureWeights {
    pub weights: Vec<f64>,
    pub log_weights: Vec<f64>,
}

impl MixtureWeights {
    pub fn from_log(log_weights: Vec<f64>) -> Self {
        let lse = log_sum_exp(&log_weights);
        let log_weights: Vec<f64> = log_weights.iter().map(|l| l - lse).collect();
        let weights = log_weights.iter().map(|l| l.exp()).collect();
        Self {
            weights,
            log_weights,
        }
    }

    pub fn uniform(k: usize) -> Self {
        Self::from_log(vec![0.0; k])
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m.is_infinite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Log of a `Gamma(shape, 1)` draw. Shapes below one use the boost
/// `G(a) = G(a + 1) * U^(1/a)` in log space, so tiny shapes never underflow.
pub(crate) fn sample_log_gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape >= 1.0 {
        let g: f64 = Gamma::new(shape, 1.0)
            .expect("shape validated positive")
            .sample(rng);
        g.ln()
    } else {
        let g: f64 = Gamma::new(shape + 1.0, 1.0)
            .expect("shape validated positive")
            .sample(rng);
        let u: f64 = Open01.sample(rng);
        g.ln() + u.ln() / shape
    }
}

/// One draw from `Dir(alpha / K + n_1, ..., alpha / K + n_K)`.
pub fn sample_mixture_weights<R: Rng + ?Sized>(
    counts: &[usize],
    alpha: f64,
    rng: &mut R,
) -> Result<MixtureWeights> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "concentration must be positive, got {alpha}"
        )));
    }
    if counts.is_empty() {
        return Err(Error::InvalidArgument("no mixture components".into()));
    }
    let base = alpha / counts.len() as f64;
    let log_g = counts
        .iter()
        .map(|&c| sample_log_gamma(base + c as f64, rng))
        .collect();
    Ok(MixtureWeights::from_log(log_g))
}

/// `pi_j = v_j * prod_{l<j} (1 - v_l)`; the last component takes the
/// remaining stick so the weights sum to one.
pub fn stick_breaking_weights(v: &[f64]) -> Result<MixtureWeights> {
    if v.is_empty() {
        return Err(Error::InvalidArgument("no stick proportions".into()));
    }
    if let Some(bad) = v.iter().find(|x| !(**x > 0.0 && **x < 1.0)) {
        return Err(Error::InvalidArgument(format!(
            "stick proportion {bad} outside (0, 1)"
        )));
    }
    let k = v.len();
    let mut log_rest = 0.0;
    let mut log_w = Vec::with_capacity(k);
    for (j, &vj) in v.iter().enumerate() {
        if j + 1 == k {
            log_w.push(log_rest);
        } else {
            log_w.push(log_rest + vj.ln());
            log_rest += (-vj).ln_1p();
        }
    }
    let weights: Vec<f64> = log_w.iter().map(|l: &f64| l.exp()).collect();
    Ok(MixtureWeights {
        weights,
        log_weights: log_w,
    })
}
