//! Survival data and the unit-baseline Cox likelihood.
//!
//! With baseline hazard fixed at 1 a subject with linear predictor `eta`
//! has hazard `exp(eta)`, cumulative hazard `t * exp(eta)` and survival
//! `exp(-t * exp(eta))`. Every quantity below is evaluated in log space:
//! simulated coefficients in the tens push `|eta|` into the hundreds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest `x` for which `exp(x)` is finite.
pub const LOG_MAX_F64: f64 = 709.782_712_893_384;

/// Censored time-to-event data with a dense row-major design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalDataset {
    times: Vec<f64>,
    log_times: Vec<f64>,
    events: Vec<bool>,
    design: Vec<f64>,
    n: usize,
    p: usize,
    names: Vec<String>,
}

impl SurvivalDataset {
    /// Builds a dataset from row vectors.
    pub fn from_rows(
        times: Vec<f64>,
        events: Vec<bool>,
        rows: Vec<Vec<f64>>,
        names: Vec<String>,
    ) -> Result<Self> {
        let p = names.len();
        let mut design = Vec::with_capacity(rows.len() * p);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != p {
                return Err(Error::InvalidData(format!(
                    "row {i} has {} covariates, expected {p}",
                    row.len()
                )));
            }
            design.extend_from_slice(row);
        }
        Self::new(times, events, design, names)
    }

    /// Builds a dataset from a row-major `n x p` design.
    pub fn new(
        times: Vec<f64>,
        events: Vec<bool>,
        design: Vec<f64>,
        names: Vec<String>,
    ) -> Result<Self> {
        let n = times.len();
        let p = names.len();
        if n == 0 {
            return Err(Error::InvalidData("dataset has no subjects".into()));
        }
        if p == 0 {
            return Err(Error::InvalidData("dataset has no covariates".into()));
        }
        if events.len() != n {
            return Err(Error::InvalidData(format!(
                "{} event indicators for {n} times",
                events.len()
            )));
        }
        if design.len() != n * p {
            return Err(Error::InvalidData(format!(
                "design has {} entries, expected {n} x {p}",
                design.len()
            )));
        }
        if let Some(i) = times.iter().position(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::InvalidData(format!(
                "time of subject {i} is {} (must be positive and finite)",
                times[i]
            )));
        }
        if let Some(k) = design.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidData(format!(
                "design entry ({}, {}) is not finite",
                k / p,
                k % p
            )));
        }
        let log_times = times.iter().map(|t| t.ln()).collect();
        Ok(Self {
            times,
            log_times,
            events,
            design,
            n,
            p,
            names,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn log_times(&self) -> &[f64] {
        &self.log_times
    }

    pub fn events(&self) -> &[bool] {
        &self.events
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn design(&self) -> &[f64] {
        &self.design
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.design[i * self.p..(i + 1) * self.p]
    }

    #[inline]
    pub fn x(&self, i: usize, j: usize) -> f64 {
        self.design[i * self.p + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.x(i, j)).collect()
    }

    pub fn all_rows(&self) -> Vec<usize> {
        (0..self.n).collect()
    }

    /// Fraction of subjects with a censored time.
    pub fn censored_fraction(&self) -> f64 {
        self.events.iter().filter(|e| !**e).count() as f64 / self.n as f64
    }

    /// Copy restricted to `rows`, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        self.check_rows(rows)?;
        let times = rows.iter().map(|&i| self.times[i]).collect();
        let events = rows.iter().map(|&i| self.events[i]).collect();
        let mut design = Vec::with_capacity(rows.len() * self.p);
        for &i in rows {
            design.extend_from_slice(self.row(i));
        }
        Self::new(times, events, design, self.names.clone())
    }

    /// Copy with every time multiplied by `factor`.
    pub fn with_scaled_times(&self, factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "time scale factor must be positive, got {factor}"
            )));
        }
        Self::new(
            self.times.iter().map(|t| t * factor).collect(),
            self.events.clone(),
            self.design.clone(),
            self.names.clone(),
        )
    }

    pub(crate) fn check_rows(&self, rows: &[usize]) -> Result<()> {
        match rows.iter().find(|&&i| i >= self.n) {
            Some(&index) => Err(Error::IndexOutOfRange {
                what: "subjects",
                index,
                len: self.n,
            }),
            None => Ok(()),
        }
    }
}

/// A set of included covariates (0-based, strictly increasing).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelIndex(Vec<usize>);

impl ModelIndex {
    pub fn empty() -> Self {
        Self(Vec::new())
    }

    /// Sorts and validates. Duplicates and indices `>= p` are errors.
    pub fn new(mut indices: Vec<usize>, p: usize) -> Result<Self> {
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument(format!(
                "duplicate covariate index in model {indices:?}"
            )));
        }
        if let Some(&index) = indices.last().filter(|&&j| j >= p) {
            return Err(Error::IndexOutOfRange {
                what: "covariates",
                index,
                len: p,
            });
        }
        Ok(Self(indices))
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.0.binary_search(&j).is_ok()
    }

    pub fn with(&self, j: usize) -> Self {
        let mut v = self.0.clone();
        if let Err(pos) = v.binary_search(&j) {
            v.insert(pos, j);
        }
        Self(v)
    }

    pub fn without(&self, j: usize) -> Self {
        Self(self.0.iter().copied().filter(|&k| k != j).collect())
    }
}

/// Coefficients on the included covariates; excluded coordinates are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientVector {
    pub model: ModelIndex,
    pub values: Vec<f64>,
}

impl CoefficientVector {
    pub fn null() -> Self {
        Self {
            model: ModelIndex::empty(),
            values: Vec::new(),
        }
    }

    pub fn new(model: ModelIndex, values: Vec<f64>) -> Result<Self> {
        if values.len() != model.len() {
            return Err(Error::InvalidArgument(format!(
                "{} coefficients for a model of size {}",
                values.len(),
                model.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v == 0.0) {
            return Err(Error::InvalidArgument(
                "coefficients must be finite and nonzero".into(),
            ));
        }
        Ok(Self { model, values })
    }

    /// Dense length-`p` vector.
    pub fn to_dense(&self, p: usize) -> Vec<f64> {
        let mut out = vec![0.0; p];
        for (&j, &b) in self.model.indices().iter().zip(&self.values) {
            out[j] = b;
        }
        out
    }

    #[inline]
    pub fn dot(&self, x: &[f64]) -> f64 {
        self.model
            .indices()
            .iter()
            .zip(&self.values)
            .map(|(&j, &b)| x[j] * b)
            .sum()
    }

    fn check_against(&self, dataset: &SurvivalDataset) -> Result<()> {
        match self.model.indices().last() {
            Some(&index) if index >= dataset.p() => Err(Error::IndexOutOfRange {
                what: "covariates",
                index,
                len: dataset.p(),
            }),
            _ => Ok(()),
        }
    }
}

pub fn linear_predictor(
    dataset: &SurvivalDataset,
    coef: &CoefficientVector,
    rows: &[usize],
) -> Result<Vec<f64>> {
    dataset.check_rows(rows)?;
    coef.check_against(dataset)?;
    Ok(rows.iter().map(|&i| coef.dot(dataset.row(i))).collect())
}

/// `log t + eta`, the log cumulative hazard. `None` when its exponential
/// would overflow.
#[inline]
fn cumulative_hazard(log_t: f64, eta: f64) -> Option<f64> {
    let log_h = log_t + eta;
    (log_h <= LOG_MAX_F64).then(|| log_h.exp())
}

/// Per-subject log density / survival contribution `delta * eta - t * exp(eta)`.
#[inline]
pub fn subject_log_likelihood(log_t: f64, event: bool, eta: f64) -> f64 {
    match cumulative_hazard(log_t, eta) {
        Some(h) => (if event { eta } else { 0.0 }) - h,
        None => f64::NEG_INFINITY,
    }
}

/// Full log likelihood over `rows`. Returns `-inf` (not an error) when the
/// cumulative hazard of some subject overflows.
pub fn log_likelihood(
    dataset: &SurvivalDataset,
    coef: &CoefficientVector,
    rows: &[usize],
) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("log likelihood over no rows".into()));
    }
    let etas = linear_predictor(dataset, coef, rows)?;
    let mut total = 0.0;
    for (&i, &eta) in rows.iter().zip(&etas) {
        total += subject_log_likelihood(dataset.log_times()[i], dataset.events()[i], eta);
        if total == f64::NEG_INFINITY {
            break;
        }
    }
    Ok(total)
}

/// `S(t | eta) = exp(-t * exp(eta))`.
pub fn survival_probability(t: f64, eta: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "survival time must be positive, got {t}"
        )));
    }
    Ok(match cumulative_hazard(t.ln(), eta) {
        Some(h) => (-h).exp(),
        None => 0.0,
    })
}

/// Martingale residuals `delta_i - t_i * exp(eta_i)`. A residual whose
/// cumulative hazard overflows is `-inf`.
pub fn martingale_residuals(
    dataset: &SurvivalDataset,
    coef: &CoefficientVector,
    rows: &[usize],
) -> Result<Vec<f64>> {
    let etas = linear_predictor(dataset, coef, rows)?;
    Ok(rows
        .iter()
        .zip(&etas)
        .map(|(&i, &eta)| {
            let d = if dataset.events()[i] { 1.0 } else { 0.0 };
            match cumulative_hazard(dataset.log_times()[i], eta) {
                Some(h) => d - h,
                None => f64::NEG_INFINITY,
            }
        })
        .collect())
}

/// Log likelihood together with its gradient and Hessian in the model's
/// coordinates.
#[derive(Debug, Clone)]
pub struct LikelihoodDerivatives {
    pub value: f64,
    pub gradient: Vec<f64>,
    /// Row-major `k x k`, negative semi-definite.
    pub hessian: Vec<f64>,
}

/// Value, gradient and (optionally) Hessian of the log likelihood with
/// respect to the coefficients of `model`, evaluated at `beta`.
///
/// `None` when a cumulative hazard overflows.
pub fn log_likelihood_derivatives(
    dataset: &SurvivalDataset,
    rows: &[usize],
    model: &ModelIndex,
    beta: &[f64],
    with_hessian: bool,
) -> Option<LikelihoodDerivatives> {
    let k = model.len();
    let idx = model.indices();
    let mut value = 0.0;
    let mut gradient = vec![0.0; k];
    let mut hessian = if with_hessian { vec![0.0; k * k] } else { Vec::new() };
    for &i in rows {
        let x = dataset.row(i);
        let eta: f64 = idx.iter().zip(beta).map(|(&j, &b)| x[j] * b).sum();
        let h = cumulative_hazard(dataset.log_times()[i], eta)?;
        let d = if dataset.events()[i] { 1.0 } else { 0.0 };
        value += d * eta - h;
        let resid = d - h;
        for (a, &ja) in idx.iter().enumerate() {
            gradient[a] += resid * x[ja];
            if with_hessian {
                let hx = h * x[ja];
                for (b, &jb) in idx.iter().enumerate().take(a + 1) {
                    hessian[a * k + b] -= hx * x[jb];
                }
            }
        }
    }
    if with_hessian {
        for a in 0..k {
            for b in 0..a {
                hessian[b * k + a] = hessian[a * k + b];
            }
        }
    }
    if !value.is_finite() || gradient.iter().any(|g| !g.is_finite()) {
        return None;
    }
    Some(LikelihoodDerivatives {
        value,
        gradient,
        hessian,
    })
}

/// Column means and scales used to standardize a design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Standardization {
    /// Coefficients on the original covariate scale.
    pub fn to_original(&self, coef: &CoefficientVector) -> CoefficientVector {
        let values = coef
            .model
            .indices()
            .iter()
            .zip(&coef.values)
            .map(|(&j, &b)| b / self.scales[j])
            .collect();
        CoefficientVector {
            model: coef.model.clone(),
            values,
        }
    }

    /// Standardizes one raw covariate row.
    pub fn apply_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.means.iter().zip(&self.scales))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    /// Standardizes another dataset with this transform (e.g. a held-out fold).
    pub fn apply(&self, dataset: &SurvivalDataset) -> Result<SurvivalDataset> {
        if dataset.p() != self.means.len() {
            return Err(Error::InvalidArgument(format!(
                "transform has {} columns, dataset has {}",
                self.means.len(),
                dataset.p()
            )));
        }
        let mut design = Vec::with_capacity(dataset.design().len());
        for i in 0..dataset.n() {
            design.extend(self.apply_row(dataset.row(i)));
        }
        SurvivalDataset::new(
            dataset.times().to_vec(),
            dataset.events().to_vec(),
            design,
            dataset.names().to_vec(),
        )
    }
}

/// Centers each column and scales it to unit sample standard deviation
/// (denominator `n - 1`).
pub fn standardize_design(dataset: &SurvivalDataset) -> Result<(SurvivalDataset, Standardization)> {
    let n = dataset.n();
    if n < 2 {
        return Err(Error::InvalidData(
            "standardization needs at least two subjects".into(),
        ));
    }
    let p = dataset.p();
    let mut means = vec![0.0; p];
    let mut scales = vec![0.0; p];
    for j in 0..p {
        let col = dataset.column(j);
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let sd = var.sqrt();
        if !(sd > 1e-12 * mean.abs().max(1.0)) {
            return Err(Error::ConstantColumn(dataset.names()[j].clone()));
        }
        means[j] = mean;
        scales[j] = sd;
    }
    let transform = Standardization { means, scales };
    let standardized = transform.apply(dataset)?;
    Ok((standardized, transform))
}

/// Subtracts each column's mean; returns the centered copy and the means.
pub fn center_design(dataset: &SurvivalDataset) -> Result<(SurvivalDataset, Vec<f64>)> {
    let n = dataset.n() as f64;
    let means: Vec<f64> = (0..dataset.p())
        .map(|j| dataset.column(j).iter().sum::<f64>() / n)
        .collect();
    let transform = Standardization {
        means: means.clone(),
        scales: vec![1.0; dataset.p()],
    };
    Ok((transform.apply(dataset)?, means))
}

/// Scales each column to unit sample standard deviation without centering.
///
/// With a fixed unit baseline hazard there is no intercept, so a shift of
/// the columns would change the model; this is the transform used for
/// fitting. The returned means are all zero.
pub fn scale_design(dataset: &SurvivalDataset) -> Result<(SurvivalDataset, Standardization)> {
    let (_, full) = standardize_design(dataset)?;
    let transform = Standardization {
        means: vec![0.0; full.means.len()],
        scales: full.scales,
    };
    let scaled = transform.apply(dataset)?;
    Ok((scaled, transform))
}
