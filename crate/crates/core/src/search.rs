//! Per-cluster variable selection.
//!
//! Each candidate model is fitted at its within-model posterior mode and
//! scored with a Laplace approximation to its log marginal posterior. The
//! simplified shotgun stochastic search walks the model space through
//! screened add / delete neighborhoods and keeps the best model it scores.

use std::collections::HashMap;
use std::io::Write;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::optim::{self, LbfgsConfig};
use crate::priors::{
    imom_log_density, imom_log_density_curvature, imom_log_density_grad, model_log_prior,
    ImomHyper, ModelPriorHyper,
};
use crate::survival::{
    log_likelihood, log_likelihood_derivatives, martingale_residuals, CoefficientVector,
    ModelIndex, SurvivalDataset,
};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Coefficients closer to zero than this are treated as a collapsed fit.
pub const MIN_ABS_COEF: f64 = 1e-8;

/// Prior hyper-parameters used when scoring models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hypers {
    pub imom: ImomHyper,
    pub model_prior: ModelPriorHyper,
}

impl Hypers {
    pub fn with_p(p: usize) -> Self {
        Self {
            imom: ImomHyper::default(),
            model_prior: ModelPriorHyper::with_p(p),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// Moves per search (`N`).
    pub iterations: usize,
    /// Screened variables per step (`M`); values above `p` act as `p`.
    pub screen_size: usize,
    /// Optional cap on model size; the effective cap is never above
    /// `min(p - 1, rows / 3)`.
    pub max_model_size: Option<usize>,
    /// Max-norm gradient tolerance for the within-model optimizer.
    pub tolerance: f64,
    pub max_optimizer_iter: usize,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            iterations: 30,
            screen_size: 10,
            max_model_size: None,
            tolerance: 1e-6,
            max_optimizer_iter: 500,
            seed: 0,
            execution: Execution::default(),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self, p: usize) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("search iterations must be >= 1".into()));
        }
        if self.screen_size == 0 {
            return Err(Error::Config("screen size must be >= 1".into()));
        }
        if p == 0 {
            return Err(Error::Config("no covariates to search".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("optimizer tolerance must be positive".into()));
        }
        Ok(())
    }

    /// Largest model size considered on a shard of `rows` subjects.
    pub fn effective_cap(&self, hypers: &Hypers, rows: usize) -> usize {
        let p = hypers.model_prior.p;
        let cap = hypers.model_prior.max_size().min(p.saturating_sub(1)).min(rows / 3);
        match self.max_model_size {
            Some(m) => cap.min(m),
            None => cap,
        }
    }
}

/// The subjects currently assigned to one cluster.
#[derive(Debug, Clone)]
pub struct ClusterShard<'a> {
    data: &'a SurvivalDataset,
    rows: Vec<usize>,
    null_scores: Vec<f64>,
}

impl<'a> ClusterShard<'a> {
    pub fn new(data: &'a SurvivalDataset, rows: Vec<usize>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument("empty cluster shard".into()));
        }
        data.check_rows(&rows)?;
        let resid = martingale_residuals(data, &CoefficientVector::null(), &rows)?;
        let null_scores = residual_scores(data, &rows, &resid);
        Ok(Self {
            data,
            rows,
            null_scores,
        })
    }

    pub fn full(data: &'a SurvivalDataset) -> Self {
        Self::new(data, data.all_rows()).expect("datasets are nonempty")
    }

    pub fn data(&self) -> &SurvivalDataset {
        self.data
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// `r' X_j` for every covariate `j`.
fn residual_scores(data: &SurvivalDataset, rows: &[usize], resid: &[f64]) -> Vec<f64> {
    let mut scores = vec![0.0; data.p()];
    for (&i, &r) in rows.iter().zip(resid) {
        for (s, x) in scores.iter_mut().zip(data.row(i)) {
            *s += r * x;
        }
    }
    scores
}

/// Reasons a model is dropped from a neighborhood instead of scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SoftFailure {
    /// Likelihood overflowed at the starting point.
    InfeasibleStart,
    NotConverged,
    IndefiniteHessian,
    /// A coefficient collapsed onto the prior's zero-density origin.
    Degenerate,
}

/// Within-model posterior mode.
#[derive(Debug, Clone)]
pub struct MapFit {
    pub coef: CoefficientVector,
    /// Row-major Hessian of the negative log posterior at the mode.
    pub hessian: Vec<f64>,
    pub log_likelihood: f64,
    /// Sum of slab log densities at the mode.
    pub log_slab: f64,
    pub gradient_norm: f64,
    pub hessian_logdet: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelScore {
    pub model: ModelIndex,
    pub map_coef: CoefficientVector,
    /// Laplace log marginal posterior up to a model-independent constant.
    pub log_score: f64,
    pub hessian_logdet: f64,
    pub log_likelihood: f64,
}

impl ModelScore {
    /// Null model on `shard`; always finite.
    pub fn null(shard: &ClusterShard<'_>, hypers: &Hypers) -> Result<Self> {
        let ll = log_likelihood(shard.data, &CoefficientVector::null(), &shard.rows)?;
        Ok(Self {
            model: ModelIndex::empty(),
            map_coef: CoefficientVector::null(),
            log_score: ll + model_log_prior(0, &hypers.model_prior)?,
            hessian_logdet: 0.0,
            log_likelihood: ll,
        })
    }
}

struct Posterior<'s, 'a> {
    shard: &'s ClusterShard<'a>,
    model: &'s ModelIndex,
    imom: ImomHyper,
    signs: Vec<f64>,
}

impl Posterior<'_, '_> {
    fn in_domain(&self, beta: &[f64]) -> bool {
        beta.iter()
            .zip(&self.signs)
            .all(|(b, s)| b * s > 0.0 && b.is_finite())
    }

    /// Negative log posterior and its gradient; `+inf` outside the sign orthant.
    fn value_grad(&self, beta: &[f64], grad: &mut [f64]) -> f64 {
        if !self.in_domain(beta) {
            return f64::INFINITY;
        }
        let Some(ll) =
            log_likelihood_derivatives(self.shard.data, &self.shard.rows, self.model, beta, false)
        else {
            return f64::INFINITY;
        };
        let mut value = -ll.value;
        for (a, &b) in beta.iter().enumerate() {
            value -= imom_log_density(b, &self.imom);
            grad[a] = -ll.gradient[a]
                - imom_log_density_grad(b, &self.imom).expect("nonzero inside domain");
        }
        value
    }

    /// Value, gradient and Hessian of the negative log posterior.
    fn full(&self, beta: &[f64]) -> Option<(f64, Vec<f64>, Vec<f64>)> {
        if !self.in_domain(beta) {
            return None;
        }
        let ll =
            log_likelihood_derivatives(self.shard.data, &self.shard.rows, self.model, beta, true)?;
        let k = beta.len();
        let mut value = -ll.value;
        let mut grad = vec![0.0; k];
        let mut hess: Vec<f64> = ll.hessian.iter().map(|h| -h).collect();
        for (a, &b) in beta.iter().enumerate() {
            value -= imom_log_density(b, &self.imom);
            grad[a] = -ll.gradient[a] - imom_log_density_grad(b, &self.imom).ok()?;
            hess[a * k + a] -= imom_log_density_curvature(b, &self.imom);
        }
        Some((value, grad, hess))
    }
}

fn cholesky_logdet(hess: &[f64], k: usize) -> Option<(f64, nalgebra::Cholesky<f64, nalgebra::Dyn>)> {
    let m = DMatrix::from_row_slice(k, k, hess);
    let chol = m.cholesky()?;
    let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    logdet.is_finite().then_some((logdet, chol))
}

/// Posterior mode of the coefficients of `model` on `shard`.
///
/// Each included coordinate starts at the slab mode carrying the sign of
/// its null-model residual score and stays in that sign orthant. Damped
/// Newton does the work; L-BFGS takes over only if Newton runs out of
/// iterations.
pub fn fit_map_coefficients(
    shard: &ClusterShard<'_>,
    model: &ModelIndex,
    hypers: &Hypers,
    config: &SearchConfig,
) -> std::result::Result<MapFit, SoftFailure> {
    fit_map_from(shard, model, hypers, config, None)
}

/// Starting point carried over from a neighboring model: its mode and the
/// residual scores `r' X_j` there.
#[derive(Debug, Clone)]
pub struct WarmStart {
    pub coef: CoefficientVector,
    pub scores: Vec<f64>,
}

impl WarmStart {
    pub fn at(shard: &ClusterShard<'_>, coef: &CoefficientVector) -> Result<Self> {
        let resid = martingale_residuals(shard.data, coef, &shard.rows)?;
        Ok(Self {
            coef: coef.clone(),
            scores: residual_scores(shard.data, &shard.rows, &resid),
        })
    }

    fn value(&self, j: usize) -> Option<f64> {
        let pos = self.coef.model.indices().iter().position(|&i| i == j)?;
        Some(self.coef.values[pos])
    }
}

/// As [`fit_map_coefficients`], but coordinates shared with `warm` start at
/// its mode and new ones take the sign of the residual score there.
pub fn fit_map_from(
    shard: &ClusterShard<'_>,
    model: &ModelIndex,
    hypers: &Hypers,
    config: &SearchConfig,
    warm: Option<&WarmStart>,
) -> std::result::Result<MapFit, SoftFailure> {
    if model.is_empty() {
        let ll = log_likelihood(shard.data, &CoefficientVector::null(), &shard.rows)
            .map_err(|_| SoftFailure::InfeasibleStart)?;
        return Ok(MapFit {
            coef: CoefficientVector::null(),
            hessian: Vec::new(),
            log_likelihood: ll,
            log_slab: 0.0,
            gradient_norm: 0.0,
            hessian_logdet: 0.0,
        });
    }
    let k = model.len();
    let x0: Vec<f64> = model
        .indices()
        .iter()
        .map(|&j| {
            if let Some(b) = warm.and_then(|w| w.value(j)) {
                return b;
            }
            let score = warm.map_or(shard.null_scores[j], |w| w.scores[j]);
            if score < 0.0 { -hypers.imom.mode() } else { hypers.imom.mode() }
        })
        .collect();
    let post = Posterior {
        shard,
        model,
        imom: hypers.imom,
        signs: x0.iter().map(|b| b.signum()).collect(),
    };

    let opt = LbfgsConfig {
        max_iter: config.max_optimizer_iter,
        grad_tol: config.tolerance,
        ..LbfgsConfig::default()
    };
    let mut min = optim::newton_minimize(|b| post.full(b), &x0, &opt)
        .ok_or(SoftFailure::InfeasibleStart)?;
    if min.termination == optim::Termination::MaxIterations {
        // quasi-Newton from the same start, then Newton again from its end point
        if let Some(q) = optim::minimize(|b, g| post.value_grad(b, g), &x0, &opt) {
            if let Some(m) = optim::newton_minimize(|b| post.full(b), &q.x, &opt) {
                if m.converged() || m.value < min.value {
                    min = m;
                }
            }
        }
    }
    let termination = min.termination.clone();
    let beta = min.x;
    let (value, grad, hess) = post.full(&beta).ok_or(SoftFailure::NotConverged)?;

    let gradient_norm = optim::max_norm(&grad);
    if gradient_norm > config.tolerance && termination != optim::Termination::RoundingLimited {
        return Err(SoftFailure::NotConverged);
    }
    if beta.iter().any(|b| b.abs() < MIN_ABS_COEF) {
        return Err(SoftFailure::Degenerate);
    }
    let (hessian_logdet, _) = cholesky_logdet(&hess, k).ok_or(SoftFailure::IndefiniteHessian)?;
    let log_slab: f64 = beta.iter().map(|&b| imom_log_density(b, &hypers.imom)).sum();
    let coef = CoefficientVector::new(model.clone(), beta).map_err(|_| SoftFailure::Degenerate)?;
    Ok(MapFit {
        coef,
        hessian: hess,
        log_likelihood: -value - log_slab,
        log_slab,
        gradient_norm,
        hessian_logdet,
    })
}

/// Laplace score `(|m|/2) log 2pi + log L(b) + sum log pi(b_j) + log p(m) - (1/2) log det G`.
pub fn log_laplace_model_score(
    shard: &ClusterShard<'_>,
    model: &ModelIndex,
    hypers: &Hypers,
    config: &SearchConfig,
) -> std::result::Result<ModelScore, SoftFailure> {
    log_laplace_score_from(shard, model, hypers, config, None)
}

/// Laplace score with the mode located from `warm`.
pub fn log_laplace_score_from(
    shard: &ClusterShard<'_>,
    model: &ModelIndex,
    hypers: &Hypers,
    config: &SearchConfig,
    warm: Option<&WarmStart>,
) -> std::result::Result<ModelScore, SoftFailure> {
    let prior = model_log_prior(model.len(), &hypers.model_prior).map_err(|_| SoftFailure::InfeasibleStart)?;
    let fit = fit_map_from(shard, model, hypers, config, warm)?;
    let k = model.len() as f64;
    let log_score = if model.is_empty() {
        fit.log_likelihood + prior
    } else {
        0.5 * k * LN_2PI + fit.log_likelihood + fit.log_slab + prior - 0.5 * fit.hessian_logdet
    };
    if !log_score.is_finite() {
        return Err(SoftFailure::NotConverged);
    }
    Ok(ModelScore {
        model: model.clone(),
        map_coef: fit.coef,
        log_score,
        hessian_logdet: fit.hessian_logdet,
        log_likelihood: fit.log_likelihood,
    })
}

/// Current model plus the `screen_size` excluded covariates with the largest
/// `|r' X_j|`, `r` being martingale residuals at the current mode. Ties go to
/// the lower index. Returned sorted.
pub fn screen_variables(
    shard: &ClusterShard<'_>,
    current: &ModelScore,
    screen_size: usize,
) -> Result<Vec<usize>> {
    let warm = WarmStart::at(shard, &current.map_coef)?;
    Ok(screen_from_scores(&current.model, &warm.scores, screen_size))
}

fn screen_from_scores(model: &ModelIndex, scores: &[f64], screen_size: usize) -> Vec<usize> {
    let mut candidates: Vec<(usize, f64)> = scores
        .iter()
        .enumerate()
        .filter(|(j, _)| !model.contains(*j))
        .map(|(j, s)| (j, if s.is_nan() { 0.0 } else { s.abs() }))
        .collect();
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut set: Vec<usize> = model.indices().to_vec();
    set.extend(candidates.iter().take(screen_size).map(|(j, _)| *j));
    set.sort_unstable();
    set
}

/// Screened addition moves and all deletion moves. Additions that would
/// exceed `cap` are omitted.
pub fn neighborhoods(
    model: &ModelIndex,
    screened: &[usize],
    cap: usize,
) -> (Vec<ModelIndex>, Vec<ModelIndex>) {
    let additions = if model.len() < cap {
        screened
            .iter()
            .filter(|&&v| !model.contains(v))
            .map(|&v| model.with(v))
            .collect()
    } else {
        Vec::new()
    };
    let deletions = model.indices().iter().map(|&v| model.without(v)).collect();
    (additions, deletions)
}

/// One scored model in a search trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub model: ModelIndex,
    /// `None` for soft-failed models.
    pub log_score: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub best: ModelScore,
    pub trace: Vec<TraceRecord>,
    pub soft_failures: usize,
    /// Models fitted by this search, excluding cache hits.
    pub evaluations: usize,
}

/// Writes a trace as line-delimited JSON.
pub fn write_trace<W: Write>(trace: &[TraceRecord], mut out: W) -> Result<()> {
    for rec in trace {
        serde_json::to_writer(&mut out, rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Index drawn with probability proportional to `exp(log_w)`; `None` if no
/// entry is finite.
pub(crate) fn sample_log_weights<R: Rng + ?Sized>(log_w: &[f64], rng: &mut R) -> Option<usize> {
    let m = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return None;
    }
    let w: Vec<f64> = log_w.iter().map(|l| (l - m).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = None;
    for (i, wi) in w.iter().enumerate() {
        if *wi > 0.0 {
            last = Some(i);
            if u < *wi {
                return Some(i);
            }
            u -= wi;
        }
    }
    last
}

type Scored = std::result::Result<ModelScore, SoftFailure>;

/// Simplified shotgun stochastic search with residual screening.
///
/// Each iteration scores the screened addition and the deletion
/// neighborhoods of the current model, draws one candidate from each
/// neighborhood with probability proportional to its score, picks between
/// the two the same way, and re-screens around the new model. The returned
/// best model is the highest-scoring model seen anywhere in the trace.
pub fn s5_search<R: Rng + ?Sized>(
    shard: &ClusterShard<'_>,
    init: &ModelIndex,
    hypers: &Hypers,
    config: &SearchConfig,
    rng: &mut R,
) -> Result<SearchOutcome> {
    s5_search_from(shard, init, None, hypers, config, rng)
}

/// [`s5_search`] with the initial model's fit started from `init_coef`
/// (typically the previous mode of the same cluster).
///
/// Every neighbor is fitted starting from the mode of the current model.
pub fn s5_search_from<R: Rng + ?Sized>(
    shard: &ClusterShard<'_>,
    init: &ModelIndex,
    init_coef: Option<&CoefficientVector>,
    hypers: &Hypers,
    config: &SearchConfig,
    rng: &mut R,
) -> Result<SearchOutcome> {
    s5_search_cached(shard, init, init_coef, hypers, config, rng, &mut ScoreCache::default())
}

/// Model scores computed on one set of subjects, kept between searches.
/// Only valid for a fixed `Hypers` and `SearchConfig`.
#[derive(Debug, Clone, Default)]
pub struct ScoreCache {
    rows: Vec<usize>,
    scores: HashMap<ModelIndex, Scored>,
}

impl ScoreCache {
    /// Clears the stored scores unless they were computed on `rows`.
    fn bind(&mut self, rows: &[usize]) {
        if self.rows != rows {
            self.rows = rows.to_vec();
            self.scores.clear();
        }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// [`s5_search_from`] reusing and extending `cache`. A model already scored
/// on the same subjects is not refitted, so repeated searches of an
/// unchanged cluster only pay for models they have not visited.
pub fn s5_search_cached<R: Rng + ?Sized>(
    shard: &ClusterShard<'_>,
    init: &ModelIndex,
    init_coef: Option<&CoefficientVector>,
    hypers: &Hypers,
    config: &SearchConfig,
    rng: &mut R,
    cache: &mut ScoreCache,
) -> Result<SearchOutcome> {
    config.validate(shard.data.p())?;
    let cap = config.effective_cap(hypers, shard.len());
    cache.bind(&shard.rows);
    let cache = &mut cache.scores;
    let mut trace = Vec::new();
    let mut soft_failures = 0;
    let mut evaluations = 0;

    let mut current = match cache.get(init) {
        Some(Ok(score)) => Some(score.clone()),
        _ if init.len() <= cap => {
            let init_warm = init_coef.and_then(|c| WarmStart::at(shard, c).ok());
            evaluations += 1;
            log_laplace_score_from(shard, init, hypers, config, init_warm.as_ref()).ok()
        }
        _ => None,
    }
    .unwrap_or(ModelScore::null(shard, hypers)?);
    cache.insert(current.model.clone(), Ok(current.clone()));
    trace.push(TraceRecord {
        iteration: 0,
        model: current.model.clone(),
        log_score: Some(current.log_score),
    });
    let mut best = current.clone();
    let mut warm = WarmStart::at(shard, &current.map_coef)?;
    let mut screened = screen_from_scores(&current.model, &warm.scores, config.screen_size);

    for iteration in 1..=config.iterations {
        let (additions, deletions) = neighborhoods(&current.model, &screened, cap);
        let pending: Vec<ModelIndex> = additions
            .iter()
            .chain(&deletions)
            .filter(|m| !cache.contains_key(*m))
            .cloned()
            .collect();
        let fresh = config
            .execution
            .map(&pending, |m| log_laplace_score_from(shard, m, hypers, config, Some(&warm)));
        evaluations += pending.len();
        for (m, s) in pending.into_iter().zip(fresh) {
            if s.is_err() {
                soft_failures += 1;
            }
            cache.insert(m, s);
        }

        let log_scores = |moves: &[ModelIndex]| -> Vec<f64> {
            moves
                .iter()
                .map(|m| match &cache[m] {
                    Ok(s) => s.log_score,
                    Err(_) => f64::NEG_INFINITY,
                })
                .collect()
        };
        let add_scores = log_scores(&additions);
        let del_scores = log_scores(&deletions);
        for (m, s) in additions.iter().zip(&add_scores).chain(deletions.iter().zip(&del_scores)) {
            trace.push(TraceRecord {
                iteration,
                model: m.clone(),
                log_score: s.is_finite().then_some(*s),
            });
            if *s > best.log_score {
                if let Ok(score) = &cache[m] {
                    best = score.clone();
                }
            }
        }

        let plus = sample_log_weights(&add_scores, rng);
        let minus = sample_log_weights(&del_scores, rng);
        let next = match (plus, minus) {
            (Some(a), Some(d)) => {
                let pair = [add_scores[a], del_scores[d]];
                match sample_log_weights(&pair, rng) {
                    Some(0) => Some(&additions[a]),
                    _ => Some(&deletions[d]),
                }
            }
            (Some(a), None) => Some(&additions[a]),
            (None, Some(d)) => Some(&deletions[d]),
            (None, None) => None,
        };
        if let Some(m) = next {
            if let Ok(score) = &cache[m] {
                current = score.clone();
            }
        }
        warm = WarmStart::at(shard, &current.map_coef)?;
        screened = screen_from_scores(&current.model, &warm.scores, config.screen_size);
    }

    Ok(SearchOutcome {
        best,
        trace,
        soft_failures,
        evaluations,
    })
}
