//! Dirichlet-process mixtures of Cox proportional-hazards models with
//! per-cluster spike / non-local-slab variable selection.
//!
//! The crate recovers latent sub-groups, the covariates that matter inside
//! each sub-group, and their coefficients from censored time-to-event data.
//! Event times follow a unit baseline hazard, so a subject with linear
//! predictor `eta` has an exponential event time with rate `exp(eta)`.
//!
//! Layout:
//!
//! - [`survival`]: datasets, model indices, and the exponential-baseline
//!   likelihood.
//! - [`priors`]: inverse-moment slab, beta-binomial model prior, and mixture
//!   weight draws.
//! - [`optim`]: damped Newton with a limited-memory BFGS fallback, used for
//!   within-model MAP fits.
//! - [`search`]: Laplace model scores, residual screening and the simplified
//!   shotgun stochastic search.
//! - [`sampler`]: the blocked weights / assignments / model-search sweep and
//!   the top-level [`sampler::fit`].
//! - [`simulation`]: synthetic two-regime scenarios with calibrated censoring.
//! - [`metrics`]: selection accuracy, L1 error, NMI and Harrell's C.
//! - [`io`], [`config`], [`report`], [`experiments`]: the plumbing behind the
//!   `dpcox` binary.
//!
//! ```no_run
//! use dpcox::sampler::{fit, FitConfig};
//! use dpcox::simulation::{simulate, SimScenario};
//!
//! let (data, _truth) = simulate(&SimScenario::default()).unwrap();
//! let result = fit(&data, &FitConfig::default()).unwrap();
//! println!("estimated clusters: {}", result.k_hat);
//! ```

pub mod config;
pub mod error;
pub mod exec;
pub mod experiments;
pub mod io;
pub mod metrics;
pub mod optim;
pub mod priors;
pub mod report;
pub mod rng;
pub mod sampler;
pub mod search;
pub mod simulation;
pub mod survival;

pub use error::{Error, Result};
pub use exec::Execution;
pub use survival::{CoefficientVector, ModelIndex, SurvivalDataset};
