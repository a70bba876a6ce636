//! Run configuration: a TOML file with one section per command, overridden
//! by command-line flags.
//!
//! ```toml
//! seed = 7
//! out = "results"
//!
//! [data]
//! input = "data/lung.csv"
//! covariates = ["age", "sex", "ph.ecog"]
//! time_scale = "unit_rate"
//! center = true
//!
//! [fit]
//! k_max = 10
//! sweeps = 200
//!
//! [fit.search]
//! screen_size = 10
//!
//! [simulate]
//! rho = 0.5
//!
//! [replicate]
//! replicates = 10
//!
//! [casestudy]
//! folds = 5
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::CsvOptions;
use crate::sampler::FitConfig;
use crate::simulation::SimScenario;

/// How observed times are rescaled before fitting a CSV dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeScale {
    /// Use times as recorded.
    #[default]
    None,
    /// Divide by `sum(t) / sum(delta)`, so the covariate-free exponential
    /// fit has rate one. Needed because the baseline hazard is fixed at one
    /// and there is no intercept.
    UnitRate,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub input: Option<PathBuf>,
    /// Covariates to model; all non-outcome columns when absent.
    pub covariates: Option<Vec<String>>,
    pub time_scale: TimeScale,
    /// Subtract column means at ingestion. The model has no intercept, so
    /// covariates with an arbitrary origin (age in years, say) would
    /// otherwise act as a large offset.
    pub center: bool,
}

impl DataSection {
    pub fn csv_options(&self) -> CsvOptions {
        CsvOptions {
            covariates: self.covariates.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplicateSection {
    pub replicates: usize,
}

impl Default for ReplicateSection {
    fn default() -> Self {
        Self { replicates: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaseStudySection {
    /// Cross-validation folds for the concordance comparison.
    pub folds: usize,
}

impl Default for CaseStudySection {
    fn default() -> Self {
        Self { folds: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; copied into the scenario and the fit.
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataSection,
    pub fit: FitConfig,
    pub simulate: SimScenario,
    pub replicate: ReplicateSection,
    pub casestudy: CaseStudySection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            out: PathBuf::from("out"),
            data: DataSection::default(),
            fit: FitConfig::default(),
            simulate: SimScenario::default(),
            replicate: ReplicateSection::default(),
            casestudy: CaseStudySection::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub k_max: Option<usize>,
    pub alpha: Option<f64>,
    pub sweeps: Option<usize>,
    pub replicates: Option<usize>,
    pub censor_rate: Option<f64>,
    pub rho: Option<f64>,
    pub no_group: bool,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Loads `path` (or defaults) and applies `overrides`.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if let Some(input) = &o.input {
            self.data.input = Some(input.clone());
        }
        if let Some(k) = o.k_max {
            self.fit.k_max = k;
        }
        if let Some(a) = o.alpha {
            self.fit.alpha = a;
        }
        if let Some(s) = o.sweeps {
            self.fit.sweeps = s;
            if self.fit.burn_in >= s {
                self.fit.burn_in = s / 2;
            }
        }
        if let Some(r) = o.replicates {
            self.replicate.replicates = r;
        }
        if let Some(c) = o.censor_rate {
            self.simulate.censor_rate = c;
        }
        if let Some(r) = o.rho {
            self.simulate.rho = r;
        }
        if o.no_group {
            self.fit.k_max = 1;
        }
        self.fit.seed = self.seed;
        self.simulate.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.fit.validate()?;
        self.simulate.validate()?;
        if self.replicate.replicates == 0 {
            return Err(Error::Config("replicates must be >= 1".into()));
        }
        if self.casestudy.folds < 2 {
            return Err(Error::Config("casestudy folds must be >= 2".into()));
        }
        Ok(())
    }

    /// The input CSV, checked to exist.
    pub fn require_input(&self) -> Result<&Path> {
        let path = self
            .data
            .input
            .as_deref()
            .ok_or_else(|| Error::Config("no input dataset given ([data] input)".into()))?;
        if !path.is_file() {
            return Err(Error::Config(format!(
                "input dataset {} does not exist",
                path.display()
            )));
        }
        Ok(path)
    }

    /// Creates the output directory if needed and checks it is writable.
    pub fn prepare_out_dir(&self) -> Result<&Path> {
        let dir = self.out.as_path();
        std::fs::create_dir_all(dir).map_err(|e| {
            Error::Config(format!("cannot create output directory {}: {e}", dir.display()))
        })?;
        let probe = dir.join(".dpcox-write-probe");
        std::fs::write(&probe, b"").map_err(|e| {
            Error::Config(format!("output directory {} is not writable: {e}", dir.display()))
        })?;
        let _ = std::fs::remove_file(probe);
        Ok(dir)
    }
}
