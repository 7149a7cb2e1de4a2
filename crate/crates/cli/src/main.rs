//! `pdlab`: batch front end for partition functions, samplers, split-merge
//! runs and the diagnostics built on them.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

#[derive(Debug, Parser)]
#[command(
    name = "pdlab",
    version,
    about = "Condensation and split-merge numerics"
)]
pub struct Cli {
    /// Weight family JSON.
    #[arg(long, global = true)]
    pub family: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build (or reuse) the log Z table and dump log Z_{L,n}.
    Zn(SizeArgs),
    /// Exact samples from the canonical measure.
    Sample(SampleArgs),
    /// Split-merge trajectory and stationarity summary.
    Splitmerge(SplitMergeArgs),
    /// Reversibility defect over a list of sizes.
    Reversibility(ReversibilityArgs),
    /// Entropy, total variation and local CLT sweeps over L.
    Ensembles(EnsemblesArgs),
    /// Condensed fraction and alpha scans over densities and sizes.
    Condense(CondenseArgs),
    /// Numerical check of the weight assumptions.
    Assumptions(AssumptionArgs),
}

#[derive(Debug, Args)]
pub struct SizeArgs {
    #[arg(long = "L", value_parser = positive)]
    pub l: usize,
    #[arg(long = "N")]
    pub n: usize,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub size: SizeArgs,
    #[arg(long, default_value_t = 1000, value_parser = positive)]
    pub samples: usize,
    /// Write ordered partitions instead of occupation vectors.
    #[arg(long)]
    pub partitions: bool,
}

#[derive(Debug, Args)]
pub struct SplitMergeArgs {
    #[arg(long, default_value_t = 1.0)]
    pub theta: f64,
    #[arg(long = "t-max", default_value_t = 50.0)]
    pub t_max: f64,
    /// Number of evenly spaced recorded states.
    #[arg(long, default_value_t = 100, value_parser = positive)]
    pub samples: usize,
    /// Initial masses, comma separated.
    #[arg(long, default_value = "1")]
    pub start: String,
}

#[derive(Debug, Args)]
pub struct ReversibilityArgs {
    /// Comma-separated `L:N` pairs.
    #[arg(long, default_value = "50:100,100:200,200:400")]
    pub sizes: String,
    #[arg(long, default_value_t = 0.1)]
    pub eps: f64,
    #[arg(long, default_value_t = 0.5)]
    pub theta: f64,
    #[arg(long, default_value = "p1")]
    pub f: String,
    #[arg(long, default_value = "p1*p2")]
    pub g: String,
    /// exact or mc.
    #[arg(long, default_value = "mc")]
    pub mode: String,
    #[arg(long, default_value_t = 100_000, value_parser = positive)]
    pub samples: usize,
}

#[derive(Debug, Args)]
pub struct EnsemblesArgs {
    #[arg(long)]
    pub rho: f64,
    /// Comma-separated system sizes.
    #[arg(long, default_value = "32,128,512")]
    pub sizes: String,
    /// auto, subcritical or supercritical.
    #[arg(long, default_value = "auto")]
    pub regime: String,
}

#[derive(Debug, Args)]
pub struct CondenseArgs {
    /// Comma-separated densities.
    #[arg(long, default_value = "0.25,2")]
    pub rho: String,
    /// Comma-separated system sizes.
    #[arg(long, default_value = "100,200,400")]
    pub sizes: String,
    #[arg(long, default_value_t = 0.05)]
    pub eps: f64,
    /// Defaults to the family's theta.
    #[arg(long)]
    pub theta: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AssumptionArgs {
    #[command(flatten)]
    pub size: SizeArgs,
    #[arg(long, default_value_t = 0.05)]
    pub eps: f64,
    #[arg(long = "J", default_value_t = 10)]
    pub j: usize,
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be >= 1".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(e.to_string()),
    }
}

#[derive(Debug)]
pub enum Failure {
    Config(String),
    Numeric(pdlab::Error),
}

impl From<pdlab::Error> for Failure {
    fn from(e: pdlab::Error) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Numeric(e)
        }
    }
}

fn error_kind(e: &pdlab::Error) -> &'static str {
    use pdlab::Error::*;
    match e {
        InvalidParameter(_) => "invalid_parameter",
        InvalidFamily(_) => "invalid_family",
        IndexOutOfRange { .. } => "index_out_of_range",
        TableTooSmall { .. } => "table_too_small",
        EmptyEnsemble { .. } => "empty_ensemble",
        OutOfDomain { .. } => "out_of_domain",
        Supercritical { .. } => "supercritical",
        Degenerate(_) => "degenerate",
        TooLarge { .. } => "too_large",
        Cache(_) => "cache",
        Io(_) => "io",
        Json(_) => "json",
        Csv(_) => "csv",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be >= 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(&cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Numeric(e)) => {
            eprintln!(
                "{}",
                json!({"error": error_kind(&e), "message": e.to_string()})
            );
            ExitCode::from(3)
        }
    }
}
