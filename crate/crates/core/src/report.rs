//! Machine-readable reports and their plain-text renderings.
//!
//! The JSON layout is described by `docs/report.schema.json`. The text
//! summary is a pure function of the report, so re-reading a report file
//! reproduces what the tool printed.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::sampler::{FitConfig, FitResult};

pub const FIT_REPORT_SCHEMA: &str = "dpcox.fit-report/1";
pub const CASE_STUDY_SCHEMA: &str = "dpcox.casestudy-report/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub source: String,
    pub raw_rows: usize,
    pub complete_rows: usize,
    pub p: usize,
    pub covariates: Vec<String>,
    /// Recorded times were divided by this before fitting.
    pub time_scale_factor: f64,
    /// Column means subtracted at ingestion; empty when not centered.
    pub covariate_means: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientEntry {
    pub variable: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub component: usize,
    pub size: usize,
    /// Selected covariates, original-scale coefficients.
    pub coefficients: Vec<CoefficientEntry>,
    pub log_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub schema: String,
    pub dataset: DatasetInfo,
    pub config: FitConfig,
    pub k_hat: usize,
    pub selected_sweep: usize,
    pub effective_k_max: usize,
    pub soft_failures: usize,
    pub clusters: Vec<ClusterReport>,
    pub assignments: Vec<usize>,
    pub log_posterior_trace: Vec<f64>,
}

impl FitReport {
    pub fn new(dataset: DatasetInfo, config: &FitConfig, result: &FitResult) -> Self {
        let clusters = result
            .clusters
            .iter()
            .map(|c| ClusterReport {
                component: c.component,
                size: c.size,
                coefficients: c
                    .coefficients
                    .model
                    .indices()
                    .iter()
                    .zip(&c.coefficients.values)
                    .map(|(&j, &value)| CoefficientEntry {
                        variable: dataset.covariates[j].clone(),
                        value,
                    })
                    .collect(),
                log_score: c.log_score,
            })
            .collect();
        Self {
            schema: FIT_REPORT_SCHEMA.into(),
            dataset,
            config: config.clone(),
            k_hat: result.k_hat,
            selected_sweep: result.diagnostics.selected_sweep,
            effective_k_max: result.diagnostics.effective_k_max,
            soft_failures: result.diagnostics.total_soft_failures,
            clusters,
            assignments: result.assignments.clone(),
            log_posterior_trace: result
                .trace
                .iter()
                .map(|r| r.complete_log_posterior)
                .collect(),
        }
    }

    /// Clusters large enough to count towards `k_hat`.
    pub fn reported_clusters(&self) -> impl Iterator<Item = &ClusterReport> {
        let min = self.config.min_cluster_size;
        self.clusters.iter().filter(move |c| c.size >= min)
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{}: n = {} ({} raw rows), p = {}",
            self.dataset.source, self.dataset.complete_rows, self.dataset.raw_rows, self.dataset.p
        );
        let _ = writeln!(
            s,
            "K_hat = {} (sweep {} of {}, k_max {})",
            self.k_hat, self.selected_sweep, self.config.sweeps, self.effective_k_max
        );
        s.push('\n');
        s.push_str(&self.selection_table());
        s
    }

    /// Variables by clusters; a check marks a selected covariate, followed by
    /// its coefficient.
    pub fn selection_table(&self) -> String {
        let clusters: Vec<&ClusterReport> = self.reported_clusters().collect();
        let mut header = vec!["variable".to_string()];
        header.extend(
            clusters
                .iter()
                .enumerate()
                .map(|(i, c)| format!("cluster {} (n={})", i + 1, c.size)),
        );
        let mut rows = vec![header];
        for name in &self.dataset.covariates {
            let mut row = vec![name.clone()];
            for c in &clusters {
                let cell = c
                    .coefficients
                    .iter()
                    .find(|e| &e.variable == name)
                    .map(|e| format!("✓ {:+.3}", e.value))
                    .unwrap_or_default();
                row.push(cell);
            }
            rows.push(row);
        }
        align(&rows)
    }

    pub fn write_json<W: Write>(&self, mut writer: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut writer, self)?;
        writeln!(writer)?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseStudyReport {
    pub schema: String,
    /// Always `"harrell_c_kfold"`: the validation metric is a choice made
    /// here, not taken from the method's original evaluation.
    pub metric: String,
    pub folds: usize,
    pub c_index_mixture: Option<f64>,
    pub c_index_baseline: Option<f64>,
    pub difference: Option<f64>,
    pub fold_c_index_mixture: Vec<Option<f64>>,
    pub fold_c_index_baseline: Vec<Option<f64>>,
    pub fit: FitReport,
}

impl CaseStudyReport {
    pub fn summary(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |c| format!("{c:.4}"));
        let mut s = self.fit.summary();
        let _ = writeln!(s, "\n{}-fold cross-validated Harrell's C", self.folds);
        let rows = vec![
            vec!["method".to_string(), "C-index".to_string()],
            vec!["mixture".to_string(), fmt(self.c_index_mixture)],
            vec!["no groups".to_string(), fmt(self.c_index_baseline)],
            vec!["difference".to_string(), fmt(self.difference)],
        ];
        s.push_str(&align(&rows));
        s
    }

    pub fn write_json<W: Write>(&self, mut writer: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut writer, self)?;
        writeln!(writer)?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Left-aligned columns separated by two spaces; trailing blanks trimmed.
pub fn align(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let mut widths = vec![0; cols];
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    for row in rows {
        let mut line = String::new();
        for (i, cell) in row.iter().enumerate() {
            if i > 0 {
                line.push_str("  ");
            }
            line.push_str(cell);
            line.extend(std::iter::repeat_n(' ', widths[i] - cell.chars().count()));
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}
