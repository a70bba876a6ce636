//! Seeded replicate studies on simulated scenarios and cross-validated case
//! studies on real data.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, TimeScale};
use crate::error::{Error, Result};
use crate::io::read_dataset_file;
use crate::exec::Execution;
use crate::metrics::{concordance_index, l1_error, majority_labels, nmi, selection_metrics};
use crate::report::{CaseStudyReport, DatasetInfo, FitReport, CASE_STUDY_SCHEMA};
use crate::rng::{derive_seed, stream};
use crate::sampler::{fit, FitConfig, FitResult};
use crate::simulation::{simulate, SimScenario, SimTruth};
use crate::survival::{center_design, SurvivalDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// The Dirichlet-process mixture.
    Mixture,
    /// A single component (`k_max = 1`) under the same seed.
    NoGroup,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Mixture => "mixture",
            Method::NoGroup => "no_group",
        }
    }

    pub fn config(self, base: &FitConfig) -> FitConfig {
        match self {
            Method::Mixture => base.clone(),
            Method::NoGroup => FitConfig {
                k_max: 1,
                ..base.clone()
            },
        }
    }
}

/// Seed of replicate `r` under master seed `seed`; shared by the data and
/// both methods.
pub fn replicate_seed(seed: u64, r: usize) -> u64 {
    derive_seed(seed, &[r as u64])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateMetrics {
    pub sensitivity: f64,
    pub specificity: f64,
    pub fdr: f64,
    pub l1_error: f64,
    pub k_hat: usize,
    pub nmi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    pub seed: u64,
    pub method: Method,
    /// `Err` holds the failure message.
    pub result: std::result::Result<ReplicateMetrics, String>,
}

/// Scores a fit against the simulation truth.
///
/// Selection metrics compare each true group with the model of the
/// estimated cluster holding most of its members and are averaged over
/// groups.
pub fn score_fit(truth: &SimTruth, result: &FitResult, p: usize) -> ReplicateMetrics {
    let groups = truth.models.len();
    let majority = majority_labels(&truth.labels, &result.assignments, groups);
    let mut sums = [0.0; 3];
    let mut counted = 0;
    for (g, label) in majority.iter().enumerate() {
        let Some(k) = label else { continue };
        let rep = selection_metrics(&truth.models[g], &result.params[*k].model, p);
        sums[0] += rep.sensitivity;
        sums[1] += rep.specificity;
        sums[2] += rep.fdr;
        counted += 1;
    }
    let c = counted.max(1) as f64;
    let est: Vec<Vec<f64>> = (0..result.params.len())
        .map(|k| result.dense_coefficients(k, p))
        .collect();
    ReplicateMetrics {
        sensitivity: sums[0] / c,
        specificity: sums[1] / c,
        fdr: sums[2] / c,
        l1_error: l1_error(&truth.coefficients, &est, &truth.labels, &result.assignments),
        k_hat: result.k_hat,
        nmi: nmi(&truth.labels, &result.assignments),
    }
}

/// Simulates replicate `r` and fits it with every method in `methods`.
pub fn run_replicate(
    scenario: &SimScenario,
    base: &FitConfig,
    seed: u64,
    r: usize,
    methods: &[Method],
) -> Vec<ReplicateOutcome> {
    let rseed = replicate_seed(seed, r);
    let sim = simulate(&SimScenario {
        seed: rseed,
        ..scenario.clone()
    });
    methods
        .iter()
        .map(|&method| {
            let result = match &sim {
                Err(e) => Err(e.to_string()),
                Ok((data, truth)) => {
                    let cfg = FitConfig {
                        seed: rseed,
                        ..method.config(base)
                    };
                    fit(data, &cfg)
                        .map(|f| score_fit(truth, &f, scenario.p))
                        .map_err(|e| e.to_string())
                }
            };
            if let Err(msg) = &result {
                log::warn!("replicate {r} ({}) failed: {msg}", method.label());
            }
            ReplicateOutcome {
                replicate: r,
                seed: rseed,
                method,
                result,
            }
        })
        .collect()
}

/// Runs `replicates` seeded replicates across the worker pool. Output is
/// ordered by replicate, then method.
pub fn replicate_study(
    scenario: &SimScenario,
    base: &FitConfig,
    seed: u64,
    replicates: usize,
    methods: &[Method],
    execution: Execution,
) -> Vec<ReplicateOutcome> {
    execution
        .map_range(replicates, |r| run_replicate(scenario, base, seed, r, methods))
        .into_iter()
        .flatten()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub rho: f64,
    pub censor_rate: f64,
    pub group_sizes: Vec<usize>,
    pub succeeded: usize,
    pub failures: usize,
    pub sensitivity: f64,
    pub specificity: f64,
    pub fdr: f64,
    pub l1_error: f64,
    pub k_hat: f64,
    /// Fraction of successful replicates with `k_hat` equal to the number of
    /// simulated groups.
    pub k_hat_correct: f64,
    pub nmi: f64,
}

/// Means over successful replicates, one row per method.
pub fn summarize(scenario: &SimScenario, outcomes: &[ReplicateOutcome]) -> Vec<MethodSummary> {
    let true_k = scenario.group_sizes.iter().filter(|&&n| n > 0).count();
    let mut methods: Vec<Method> = Vec::new();
    for o in outcomes {
        if !methods.contains(&o.method) {
            methods.push(o.method);
        }
    }
    methods
        .into_iter()
        .map(|method| {
            let ok: Vec<&ReplicateMetrics> = outcomes
                .iter()
                .filter(|o| o.method == method)
                .filter_map(|o| o.result.as_ref().ok())
                .collect();
            let failures = outcomes
                .iter()
                .filter(|o| o.method == method && o.result.is_err())
                .count();
            let mean = |f: &dyn Fn(&ReplicateMetrics) -> f64| {
                if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().map(|m| f(m)).sum::<f64>() / ok.len() as f64
                }
            };
            MethodSummary {
                method,
                rho: scenario.rho,
                censor_rate: scenario.censor_rate,
                group_sizes: scenario.group_sizes.clone(),
                succeeded: ok.len(),
                failures,
                sensitivity: mean(&|m| m.sensitivity),
                specificity: mean(&|m| m.specificity),
                fdr: mean(&|m| m.fdr),
                l1_error: mean(&|m| m.l1_error),
                k_hat: mean(&|m| m.k_hat as f64),
                k_hat_correct: mean(&|m| f64::from(u8::from(m.k_hat == true_k))),
                nmi: mean(&|m| m.nmi),
            }
        })
        .collect()
}

fn sizes_label(sizes: &[usize]) -> String {
    sizes
        .iter()
        .map(|n| n.to_string())
        .collect::<Vec<_>>()
        .join("/")
}

/// One row per method, in the layout of a results table.
pub fn write_summary_csv<W: Write>(rows: &[MethodSummary], writer: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record([
        "method",
        "rho",
        "censor_rate",
        "group_sizes",
        "replicates",
        "failures",
        "sensitivity",
        "specificity",
        "fdr",
        "l1_error",
        "k_hat",
        "k_hat_correct",
        "nmi",
    ])?;
    for r in rows {
        csv.write_record([
            r.method.label().to_string(),
            r.rho.to_string(),
            r.censor_rate.to_string(),
            sizes_label(&r.group_sizes),
            r.succeeded.to_string(),
            r.failures.to_string(),
            format!("{:.4}", r.sensitivity),
            format!("{:.4}", r.specificity),
            format!("{:.4}", r.fdr),
            format!("{:.4}", r.l1_error),
            format!("{:.2}", r.k_hat),
            format!("{:.2}", r.k_hat_correct),
            format!("{:.4}", r.nmi),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

/// Long format: one row per (replicate, method, metric).
pub fn write_long_csv<W: Write>(
    scenario: &SimScenario,
    outcomes: &[ReplicateOutcome],
    writer: W,
) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record([
        "replicate", "seed", "method", "rho", "censor_rate", "group_sizes", "metric", "value",
    ])?;
    for o in outcomes {
        let Ok(m) = &o.result else { continue };
        let metrics = [
            ("sensitivity", m.sensitivity),
            ("specificity", m.specificity),
            ("fdr", m.fdr),
            ("l1_error", m.l1_error),
            ("k_hat", m.k_hat as f64),
            ("nmi", m.nmi),
        ];
        for (name, value) in metrics {
            csv.write_record([
                o.replicate.to_string(),
                o.seed.to_string(),
                o.method.label().to_string(),
                scenario.rho.to_string(),
                scenario.censor_rate.to_string(),
                sizes_label(&scenario.group_sizes),
                name.to_string(),
                value.to_string(),
            ])?;
        }
    }
    csv.flush()?;
    Ok(())
}

/// `sum(t) / sum(delta)`: dividing times by it gives the covariate-free
/// exponential fit rate one.
pub fn unit_rate_factor(data: &SurvivalDataset) -> Result<f64> {
    let events = data.events().iter().filter(|e| **e).count();
    if events == 0 {
        return Err(Error::InvalidData("dataset has no events".into()));
    }
    Ok(data.times().iter().sum::<f64>() / events as f64)
}

/// Reads the `[data]` input of `cfg` and applies its time scale and
/// centering.
pub fn prepare_input(cfg: &RunConfig) -> Result<(SurvivalDataset, DatasetInfo)> {
    let path = cfg.require_input()?;
    let loaded = read_dataset_file(path, &cfg.data.csv_options())?;
    let factor = match cfg.data.time_scale {
        TimeScale::None => 1.0,
        TimeScale::UnitRate => unit_rate_factor(&loaded.dataset)?,
    };
    let mut data = loaded.dataset.with_scaled_times(1.0 / factor)?;
    let mut covariate_means = Vec::new();
    if cfg.data.center {
        (data, covariate_means) = center_design(&data)?;
    }
    let info = DatasetInfo {
        source: path
            .file_name()
            .map_or_else(|| path.display().to_string(), |f| f.to_string_lossy().into_owned()),
        raw_rows: loaded.raw_rows,
        complete_rows: loaded.complete_rows,
        p: data.p(),
        covariates: data.names().to_vec(),
        time_scale_factor: factor,
        covariate_means,
    };
    Ok((data, info))
}

/// Fold of every subject: a seeded shuffle dealt round-robin.
pub fn fold_labels(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, &[9]));
    let mut labels = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        labels[i] = pos % folds;
    }
    labels
}

/// Held-out risk scores: each test subject is routed to its most probable
/// component given its covariates and observed outcome, and scored by the
/// linear predictor there.
fn held_out_risk(result: &FitResult, test: &SurvivalDataset) -> Vec<f64> {
    (0..test.n())
        .map(|i| {
            let row = test.row(i);
            let k = result.most_probable_component(row, test.times()[i], test.events()[i]);
            result.linear_predictor(row, k)
        })
        .collect()
}

fn mean_defined(values: &[Option<f64>]) -> Option<f64> {
    let v: Vec<f64> = values.iter().flatten().copied().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// K-fold cross-validated Harrell's C of the mixture and the single-component
/// baseline, plus a full-data mixture fit. `data` must already be on the
/// scale used for fitting.
pub fn case_study(
    data: &SurvivalDataset,
    info: DatasetInfo,
    config: &FitConfig,
    folds: usize,
) -> Result<CaseStudyReport> {
    if folds < 2 || folds > data.n() {
        return Err(Error::Config(format!(
            "need 2 <= folds <= n, got {folds} folds for {} subjects",
            data.n()
        )));
    }
    let full = fit(data, config)?;
    let labels = fold_labels(data.n(), folds, config.seed);
    let per_fold = config.execution.map_range(folds, |f| -> Result<(Option<f64>, Option<f64>)> {
        let train_rows: Vec<usize> = (0..data.n()).filter(|&i| labels[i] != f).collect();
        let test_rows: Vec<usize> = (0..data.n()).filter(|&i| labels[i] == f).collect();
        let train = data.subset(&train_rows)?;
        let test = data.subset(&test_rows)?;
        let fold_cfg = FitConfig {
            seed: derive_seed(config.seed, &[10, f as u64]),
            ..config.clone()
        };
        let mixture = fit(&train, &fold_cfg)?;
        let baseline = fit(&train, &Method::NoGroup.config(&fold_cfg))?;
        let c = |r: &FitResult| concordance_index(test.times(), test.events(), &held_out_risk(r, &test));
        Ok((c(&mixture), c(&baseline)))
    });
    let mut fold_mix = Vec::with_capacity(folds);
    let mut fold_base = Vec::with_capacity(folds);
    for r in per_fold {
        let (m, b) = r?;
        fold_mix.push(m);
        fold_base.push(b);
    }
    let c_mix = mean_defined(&fold_mix);
    let c_base = mean_defined(&fold_base);
    Ok(CaseStudyReport {
        schema: CASE_STUDY_SCHEMA.into(),
        metric: "harrell_c_kfold".into(),
        folds,
        c_index_mixture: c_mix,
        c_index_baseline: c_base,
        difference: c_mix.zip(c_base).map(|(a, b)| a - b),
        fold_c_index_mixture: fold_mix,
        fold_c_index_baseline: fold_base,
        fit: FitReport::new(info, config, &full),
    })
}
