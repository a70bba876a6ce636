use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dpcox::config::{Overrides, RunConfig};
use dpcox::experiments::{
    case_study, prepare_input, replicate_study, summarize, write_long_csv, write_summary_csv,
    Method,
};
use dpcox::io::{write_dataset, write_truth};
use dpcox::report::{align, DatasetInfo, FitReport};
use dpcox::sampler::fit;
use dpcox::simulation::simulate;
use dpcox::{Error, Result, SurvivalDataset};

#[derive(Parser)]
#[command(name = "dpcox", version, about = "Mixtures of Cox models with per-cluster variable selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a two-regime scenario and write dataset.csv and truth.json.
    Simulate(CommonArgs),
    /// Fit the mixture to a CSV dataset and write report.json / report.txt.
    Fit(CommonArgs),
    /// Run seeded replicates of a scenario for the mixture and the no-group baseline.
    Replicate(CommonArgs),
    /// Cross-validated concordance of the mixture against the no-group baseline.
    Casestudy(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Input CSV (overrides `[data] input`).
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    kmax: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    sweeps: Option<usize>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long = "censor-rate")]
    censor_rate: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    /// Force a single component (k_max = 1).
    #[arg(long = "no-group")]
    no_group: bool,
}

impl CommonArgs {
    fn load(&self) -> Result<RunConfig> {
        let overrides = Overrides {
            seed: self.seed,
            out: self.out.clone(),
            input: self.input.clone(),
            k_max: self.kmax,
            alpha: self.alpha,
            sweeps: self.sweeps,
            replicates: self.replicates,
            censor_rate: self.censor_rate,
            rho: self.rho,
            no_group: self.no_group,
        };
        RunConfig::load(self.config.as_deref(), &overrides)
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn cmd_simulate(cfg: &RunConfig) -> Result<()> {
    let out = cfg.prepare_out_dir()?;
    let (data, truth) = simulate(&cfg.simulate)?;
    write_dataset(&data, create(out, "dataset.csv")?)?;
    write_truth(&truth, create(out, "truth.json")?)?;
    println!(
        "simulated {} subjects x {} covariates; realized censoring {:.4} (target {})",
        data.n(),
        data.p(),
        truth.realized_censor_fraction,
        cfg.simulate.censor_rate
    );
    if truth.clamped_times > 0 {
        println!("{} event times clamped to the positive range", truth.clamped_times);
    }
    Ok(())
}

/// Reads, filters and rescales the input CSV.
fn load_input(cfg: &RunConfig) -> Result<(SurvivalDataset, DatasetInfo)> {
    let (data, info) = prepare_input(cfg)?;
    println!(
        "{}: {} rows read, {} complete cases kept",
        cfg.require_input()?.display(),
        info.raw_rows,
        info.complete_rows
    );
    Ok((data, info))
}

fn cmd_fit(cfg: &RunConfig) -> Result<()> {
    let out = cfg.prepare_out_dir()?;
    let (data, info) = load_input(cfg)?;
    let result = fit(&data, &cfg.fit)?;
    let report = FitReport::new(info, &cfg.fit, &result);
    report.write_json(create(out, "report.json")?)?;
    let summary = report.summary();
    std::fs::write(out.join("report.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn cmd_replicate(cfg: &RunConfig) -> Result<()> {
    let out = cfg.prepare_out_dir()?;
    let methods = if cfg.fit.k_max == 1 {
        vec![Method::NoGroup]
    } else {
        vec![Method::Mixture, Method::NoGroup]
    };
    let outcomes = replicate_study(
        &cfg.simulate,
        &cfg.fit,
        cfg.seed,
        cfg.replicate.replicates,
        &methods,
        cfg.fit.execution,
    );
    let rows = summarize(&cfg.simulate, &outcomes);
    write_summary_csv(&rows, create(out, "replicate_summary.csv")?)?;
    write_long_csv(&cfg.simulate, &outcomes, create(out, "replicate_long.csv")?)?;
    let mut table = vec![[
        "method", "ok", "failed", "sens", "spec", "fdr", "L1", "K_hat", "NMI",
    ]
    .map(String::from)
    .to_vec()];
    for r in &rows {
        table.push(vec![
            r.method.label().to_string(),
            r.succeeded.to_string(),
            r.failures.to_string(),
            format!("{:.3}", r.sensitivity),
            format!("{:.3}", r.specificity),
            format!("{:.3}", r.fdr),
            format!("{:.2}", r.l1_error),
            format!("{:.2}", r.k_hat),
            format!("{:.3}", r.nmi),
        ]);
    }
    print!("{}", align(&table));
    if rows.iter().all(|r| r.succeeded == 0) {
        return Err(Error::Numerical("every replicate failed".into()));
    }
    Ok(())
}

fn cmd_casestudy(cfg: &RunConfig) -> Result<()> {
    let out = cfg.prepare_out_dir()?;
    let (data, info) = load_input(cfg)?;
    let report = case_study(&data, info, &cfg.fit, cfg.casestudy.folds)?;
    report.write_json(create(out, "casestudy.json")?)?;
    let summary = report.summary();
    std::fs::write(out.join("casestudy.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (args, run): (&CommonArgs, fn(&RunConfig) -> Result<()>) = match &cli.command {
        Command::Simulate(a) => (a, cmd_simulate),
        Command::Fit(a) => (a, cmd_fit),
        Command::Replicate(a) => (a, cmd_replicate),
        Command::Casestudy(a) => (a, cmd_casestudy),
    };
    match args.load().and_then(|cfg| run(&cfg)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
