//! Blocked posterior computation for the truncated Dirichlet-process mixture.
//!
//! A sweep draws the mixture weights given occupancy, redraws every
//! subject's cluster label given weights and cluster coefficients, and then
//! replaces each occupied cluster's model by the best model a warm-started
//! shotgun search finds on the cluster's members. Steps one and two are
//! random draws; step three is a mode update, so the reported answer is the
//! post-burn-in sweep with the highest complete log posterior.

use std::sync::Mutex;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::priors::{
    log_sum_exp, sample_mixture_weights, ImomHyper, ModelPriorExponent, ModelPriorHyper,
    MixtureWeights,
};
use crate::rng::{derive_seed, rng_from_seed, stream};
use crate::search::{s5_search_cached, ClusterShard, Hypers, ModelScore, ScoreCache, SearchConfig};
use crate::survival::{
    scale_design, subject_log_likelihood, CoefficientVector, ModelIndex, Standardization,
    SurvivalDataset,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub k_max: usize,
    pub alpha: f64,
    pub sweeps: usize,
    pub burn_in: usize,
    pub search: SearchConfig,
    pub seed: u64,
    pub min_cluster_size: usize,
    /// Number of log-time quantile bins used to seed the clustering.
    pub initial_components: usize,
    pub imom: ImomHyper,
    pub model_prior_a: f64,
    pub model_prior_b: f64,
    pub model_prior_exponent: ModelPriorExponent,
    pub execution: Execution,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            k_max: 10,
            alpha: 0.1,
            sweeps: 200,
            burn_in: 100,
            search: SearchConfig::default(),
            seed: 1,
            min_cluster_size: 3,
            initial_components: 5,
            imom: ImomHyper::default(),
            model_prior_a: 1.0,
            model_prior_b: 1.0,
            model_prior_exponent: ModelPriorExponent::Verbatim,
            execution: Execution::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_max == 0 {
            return Err(Error::Config("k_max must be >= 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.sweeps == 0 || self.burn_in >= self.sweeps {
            return Err(Error::Config(format!(
                "need burn_in < sweeps (burn_in={}, sweeps={})",
                self.burn_in, self.sweeps
            )));
        }
        if self.initial_components == 0 {
            return Err(Error::Config("initial_components must be >= 1".into()));
        }
        ImomHyper::new(self.imom.r, self.imom.tau)?;
        ModelPriorHyper::new(self.model_prior_a, self.model_prior_b, 1, self.model_prior_exponent)?;
        Ok(())
    }

    pub fn hypers(&self, p: usize) -> Result<Hypers> {
        Ok(Hypers {
            imom: ImomHyper::new(self.imom.r, self.imom.tau)?,
            model_prior: ModelPriorHyper::new(
                self.model_prior_a,
                self.model_prior_b,
                p,
                self.model_prior_exponent,
            )?,
        })
    }

    fn search_config(&self) -> SearchConfig {
        SearchConfig {
            execution: self.execution,
            ..self.search.clone()
        }
    }
}

/// Seed of the model search for component `k` in sweep `sweep` (sweep 0 is
/// the initialization).
pub fn search_seed(seed: u64, sweep: usize, k: usize) -> u64 {
    derive_seed(seed, &[1, sweep as u64, k as u64])
}

/// Stream used for the weight and assignment draws.
pub fn gibbs_rng(seed: u64) -> crate::rng::Rng {
    stream(seed, &[0])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureFitState {
    /// 0-based component per subject.
    pub z: Vec<usize>,
    pub weights: MixtureWeights,
    /// Per-component fit; empty components hold the null model.
    pub params: Vec<ModelScore>,
    pub complete_log_posterior: f64,
}

impl MixtureFitState {
    pub fn k_max(&self) -> usize {
        self.params.len()
    }

    pub fn occupancy(&self) -> Vec<usize> {
        occupancy(&self.z, self.k_max())
    }
}

pub fn occupancy(z: &[usize], k_max: usize) -> Vec<usize> {
    let mut counts = vec![0; k_max];
    for &k in z {
        counts[k] += 1;
    }
    counts
}

fn placeholder() -> ModelScore {
    ModelScore {
        model: ModelIndex::empty(),
        map_coef: CoefficientVector::null(),
        log_score: 0.0,
        hessian_logdet: 0.0,
        log_likelihood: 0.0,
    }
}

/// Collapsed symmetric Dirichlet-multinomial `log p(z)` plus the Laplace
/// score of every occupied component. Invariant to relabeling components.
pub fn complete_log_posterior(z: &[usize], params: &[ModelScore], alpha: f64) -> f64 {
    let k = params.len();
    let counts = occupancy(z, k);
    let a = alpha / k as f64;
    let mut total = ln_gamma(alpha) - ln_gamma(alpha + z.len() as f64);
    for (c, s) in counts.iter().zip(params) {
        if *c > 0 {
            total += ln_gamma(a + *c as f64) - ln_gamma(a) + s.log_score;
        }
    }
    total
}

/// Normalized log assignment probabilities of subject `i` over components:
/// `log pi_k + delta_i eta_ik - t_i exp(eta_ik)`.
pub fn assignment_log_probabilities(
    data: &SurvivalDataset,
    weights: &MixtureWeights,
    params: &[ModelScore],
    i: usize,
) -> Vec<f64> {
    let x = data.row(i);
    let log_t = data.log_times()[i];
    let event = data.events()[i];
    let mut lp: Vec<f64> = weights
        .log_weights
        .iter()
        .zip(params)
        .map(|(lw, s)| lw + subject_log_likelihood(log_t, event, s.map_coef.dot(x)))
        .collect();
    let lse = log_sum_exp(&lp);
    lp.iter_mut().for_each(|l| *l -= lse);
    lp
}

/// Independent categorical label draws for every subject.
pub fn sample_assignments<R: Rng + ?Sized>(
    data: &SurvivalDataset,
    weights: &MixtureWeights,
    params: &[ModelScore],
    execution: Execution,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if weights.len() != params.len() {
        return Err(Error::InvalidArgument(format!(
            "{} weights for {} components",
            weights.len(),
            params.len()
        )));
    }
    let probs = execution.map_range(data.n(), |i| {
        assignment_log_probabilities(data, weights, params, i)
    });
    let mut z = Vec::with_capacity(data.n());
    for (i, lp) in probs.iter().enumerate() {
        if lp.iter().all(|l| !l.is_finite()) {
            return Err(Error::Numerical(format!(
                "subject {i} has zero probability under every component"
            )));
        }
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = None;
        for (k, l) in lp.iter().enumerate() {
            if l.is_finite() {
                acc += l.exp();
                chosen = Some(k);
                if u < acc {
                    break;
                }
            }
        }
        z.push(chosen.expect("some component is finite"));
    }
    Ok(z)
}

/// Per-sweep bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub sweep: usize,
    pub complete_log_posterior: f64,
    pub occupancy: Vec<usize>,
    pub soft_failures: usize,
}

/// Per-component model scores kept across sweeps; a component whose members
/// are unchanged reuses them.
pub type ComponentCaches = Vec<Mutex<ScoreCache>>;

pub fn component_caches(k_max: usize) -> ComponentCaches {
    (0..k_max).map(|_| Mutex::new(ScoreCache::default())).collect()
}

/// Step three: re-search every occupied component from its current model.
fn update_components(
    data: &SurvivalDataset,
    z: &[usize],
    previous: &[ModelScore],
    hypers: &Hypers,
    config: &FitConfig,
    sweep: usize,
    caches: &[Mutex<ScoreCache>],
) -> Result<(Vec<ModelScore>, usize)> {
    let k_max = previous.len();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k_max];
    for (i, &k) in z.iter().enumerate() {
        members[k].push(i);
    }
    let search = config.search_config();
    // Each component's search is sequential inside; parallelism is across
    // components here and across neighbors inside the search.
    let results = config.execution.map_range(k_max, |k| -> Result<(ModelScore, usize)> {
        if members[k].is_empty() {
            return Ok((placeholder(), 0));
        }
        let shard = ClusterShard::new(data, members[k].clone())?;
        let mut rng = rng_from_seed(search_seed(config.seed, sweep, k));
        let prev = &previous[k];
        let mut cache = caches[k].lock().expect("cache lock");
        let out = s5_search_cached(&shard, &prev.model, Some(&prev.map_coef), hypers, &search, &mut rng, &mut cache)?;
        Ok((out.best, out.soft_failures))
    });
    let mut params = Vec::with_capacity(k_max);
    let mut failures = 0;
    for r in results {
        let (s, f) = r?;
        params.push(s);
        failures += f;
    }
    Ok((params, failures))
}

/// One cycle of weights, assignments and per-component model search.
/// `data` must already be standardized.
pub fn gibbs_sweep<R: Rng + ?Sized>(
    state: &MixtureFitState,
    data: &SurvivalDataset,
    hypers: &Hypers,
    config: &FitConfig,
    sweep: usize,
    caches: &[Mutex<ScoreCache>],
    rng: &mut R,
) -> Result<(MixtureFitState, SweepRecord)> {
    let weights = sample_mixture_weights(&state.occupancy(), config.alpha, rng)?;
    let z = sample_assignments(data, &weights, &state.params, config.execution, rng)?;
    let (params, soft_failures) = update_components(data, &z, &state.params, hypers, config, sweep, caches)?;
    let complete = complete_log_posterior(&z, &params, config.alpha);
    if !complete.is_finite() {
        return Err(Error::Numerical(format!(
            "complete log posterior is {complete} after sweep {sweep}"
        )));
    }
    let record = SweepRecord {
        sweep,
        complete_log_posterior: complete,
        occupancy: occupancy(&z, params.len()),
        soft_failures,
    };
    Ok((
        MixtureFitState {
            z,
            weights,
            params,
            complete_log_posterior: complete,
        },
        record,
    ))
}

/// Number of components holding at least `min_cluster_size` subjects.
pub fn estimate_khat(occupancy: &[usize], min_cluster_size: usize) -> usize {
    occupancy
        .iter()
        .filter(|&&c| c > 0 && c >= min_cluster_size)
        .count()
}

/// Labels from quantile bins of `log t`: the `r`-th shortest time goes to
/// bin `floor(r * bins / n)`.
pub fn quantile_bin_labels(data: &SurvivalDataset, bins: usize) -> Vec<usize> {
    let n = data.n();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| data.log_times()[a].total_cmp(&data.log_times()[b]).then(a.cmp(&b)));
    let mut z = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        z[i] = rank * bins / n;
    }
    z
}

/// Starting state: quantile bins of `log t`, each searched from the null
/// model (sweep index 0).
pub fn initial_state(
    data: &SurvivalDataset,
    hypers: &Hypers,
    config: &FitConfig,
) -> Result<MixtureFitState> {
    let k_max = config.k_max;
    let bins = config.initial_components.min(k_max).min(data.n());
    let z = quantile_bin_labels(data, bins);
    let nulls = vec![placeholder(); k_max];
    let (params, _) = update_components(data, &z, &nulls, hypers, config, 0, &component_caches(config.k_max))?;
    let counts = occupancy(&z, k_max);
    let weights = MixtureWeights::from_log(
        counts
            .iter()
            .map(|&c| ((c as f64) + config.alpha / k_max as f64).ln())
            .collect(),
    );
    let complete = complete_log_posterior(&z, &params, config.alpha);
    Ok(MixtureFitState {
        z,
        weights,
        params,
        complete_log_posterior: complete,
    })
}

/// One estimated cluster, coefficients on the original covariate scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub component: usize,
    pub size: usize,
    pub model: ModelIndex,
    pub coefficients: CoefficientVector,
    pub log_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub effective_k_max: usize,
    pub selected_sweep: usize,
    pub total_soft_failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub k_hat: usize,
    /// Component per subject at the selected sweep.
    pub assignments: Vec<usize>,
    /// Occupied components at the selected sweep, by component index.
    pub clusters: Vec<ClusterSummary>,
    /// All components at the selected sweep, standardized scale.
    pub params: Vec<ModelScore>,
    pub weights: MixtureWeights,
    pub standardization: Standardization,
    pub trace: Vec<SweepRecord>,
    pub diagnostics: FitDiagnostics,
}

impl FitResult {
    /// Dense original-scale coefficients of component `k`.
    pub fn dense_coefficients(&self, k: usize, p: usize) -> Vec<f64> {
        self.standardization
            .to_original(&self.params[k].map_coef)
            .to_dense(p)
    }

    /// Component with the highest assignment probability for a new subject
    /// given its raw covariates and outcome.
    pub fn most_probable_component(&self, raw_row: &[f64], time: f64, event: bool) -> usize {
        let x = self.standardization.apply_row(raw_row);
        let log_t = time.ln();
        let lp = self
            .weights
            .log_weights
            .iter()
            .zip(&self.params)
            .map(|(lw, s)| lw + subject_log_likelihood(log_t, event, s.map_coef.dot(&x)));
        lp.enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (k, l)| if l > best.1 { (k, l) } else { best })
            .0
    }

    /// Linear predictor of a raw covariate row under component `k`.
    pub fn linear_predictor(&self, raw_row: &[f64], k: usize) -> f64 {
        let x = self.standardization.apply_row(raw_row);
        self.params[k].map_coef.dot(&x)
    }
}

/// Fits the mixture. The design is standardized internally and reported
/// coefficients are mapped back to the original scale.
pub fn fit(data: &SurvivalDataset, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    config.search.validate(data.p())?;
    let mut config = config.clone();
    let min_size = config.min_cluster_size.max(1);
    if data.n() < config.k_max * min_size {
        let reduced = (data.n() / min_size).max(1);
        log::warn!(
            "n = {} is below k_max * min_cluster_size; reducing k_max from {} to {reduced}",
            data.n(),
            config.k_max
        );
        config.k_max = reduced;
    }
    let (std_data, standardization) = scale_design(data)?;
    let hypers = config.hypers(data.p())?;

    let mut state = initial_state(&std_data, &hypers, &config)?;
    let mut rng = gibbs_rng(config.seed);
    let caches = component_caches(config.k_max);
    let mut trace = Vec::with_capacity(config.sweeps);
    let mut best: Option<MixtureFitState> = None;
    let mut selected_sweep = 0;
    for sweep in 1..=config.sweeps {
        let (next, record) = gibbs_sweep(&state, &std_data, &hypers, &config, sweep, &caches, &mut rng)?;
        if sweep > config.burn_in
            && best
                .as_ref()
                .is_none_or(|b| next.complete_log_posterior > b.complete_log_posterior)
        {
            best = Some(next.clone());
            selected_sweep = sweep;
        }
        log::debug!(
            "sweep {sweep}: log posterior {:.3}, occupancy {:?}",
            record.complete_log_posterior,
            record.occupancy
        );
        trace.push(record);
        state = next;
    }
    let best = best.expect("at least one post-burn-in sweep");
    let counts = best.occupancy();
    let clusters = counts
        .iter()
        .enumerate()
        .filter(|(_, c)| **c > 0)
        .map(|(k, &size)| ClusterSummary {
            component: k,
            size,
            model: best.params[k].model.clone(),
            coefficients: standardization.to_original(&best.params[k].map_coef),
            log_score: best.params[k].log_score,
        })
        .collect();
    let total_soft_failures = trace.iter().map(|r| r.soft_failures).sum();
    Ok(FitResult {
        k_hat: estimate_khat(&counts, config.min_cluster_size),
        assignments: best.z,
        clusters,
        params: best.params,
        weights: best.weights,
        standardization,
        trace,
        diagnostics: FitDiagnostics {
            effective_k_max: config.k_max,
            selected_sweep,
            total_soft_failures,
        },
    })
}
