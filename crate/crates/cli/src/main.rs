//! `lgocv`: fit latent Gaussian models and score them by leave-group-out
//! cross-validation.

mod commands;
mod inputs;
mod state;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "lgocv", version, about = "Automatic leave-group-out cross-validation for latent Gaussian models")]
struct Cli {
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    threads: Option<u16>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the model and write the θ grid, latent means and a fitted-state file.
    Fit(FitCmd),
    /// Build leave-out groups and write them in the group text format.
    Groups(GroupsCmd),
    /// Compute LOOCV, or LGOCV with automatic or imported groups.
    Cv(CvCmd),
    /// Generate one of the built-in simulation studies and score it.
    Simulate(SimulateCmd),
    /// Compare the engine with brute-force refits.
    Verify(VerifyCmd),
}

#[derive(Args, Debug, Clone)]
pub struct InputArgs {
    /// Model specification file.
    #[arg(long)]
    pub model: PathBuf,
    /// Data CSV with a header row.
    #[arg(long)]
    pub data: PathBuf,
    /// Edge-list graph for besag components (overrides `graph =` in the spec).
    #[arg(long)]
    pub graph: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct FitArgs {
    /// Reuse the θ grid from a fitted-state file written by `fit`.
    #[arg(long)]
    pub fitted: Option<PathBuf>,
    /// θ grid spacing in standardized units.
    #[arg(long)]
    pub theta_grid_step: Option<f64>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Prior,
    Posterior,
}

#[derive(Args, Debug, Clone)]
pub struct GroupArgs {
    /// Correlation source for the groups.
    #[arg(long, value_enum, default_value = "posterior")]
    pub source: Source,
    /// Components whose prior covariance defines the groups (comma separated;
    /// all non-fixed components when omitted).
    #[arg(long, value_delimiter = ',')]
    pub prior_subset: Vec<String>,
    /// Relative tolerance for treating two correlations as equal.
    #[arg(long, default_value_t = 1e-8)]
    pub tie_tol: f64,
}

#[derive(Args, Debug)]
struct FitCmd {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    theta_grid_step: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GroupsCmd {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    fit: FitArgs,
    #[command(flatten)]
    groups: GroupArgs,
    /// Number of level sets.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    m: u32,
    /// Restrict to observations `a-b` (1-based, inclusive).
    #[arg(long)]
    test_range: Option<String>,
    #[arg(long)]
    groups_out: PathBuf,
}

#[derive(Args, Debug)]
struct CvCmd {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    fit: FitArgs,
    #[command(flatten)]
    groups: GroupArgs,
    /// Number of level sets for automatic groups; LOOCV when neither this
    /// nor `--groups-in` is given.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..), conflicts_with = "groups_in")]
    m: Option<u32>,
    /// Group file to use instead of automatic groups.
    #[arg(long)]
    groups_in: Option<PathBuf>,
    /// Also write the groups used.
    #[arg(long)]
    groups_out: Option<PathBuf>,
    /// Gauss-Hermite order.
    #[arg(long)]
    gh_order: Option<usize>,
    #[arg(long)]
    test_range: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SimulateCmd {
    /// multilevel-gaussian, multilevel-binomial, multilevel-exponential or ar1-forecast.
    #[arg(long)]
    scenario: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Level sets for the multilevel scenarios.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    m: u32,
    #[arg(long)]
    gh_order: Option<usize>,
    #[arg(long)]
    theta_grid_step: Option<f64>,
    /// Test observations for ar1-forecast (default 1501-2000).
    #[arg(long)]
    test_range: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct VerifyCmd {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    fit: FitArgs,
    #[command(flatten)]
    groups: GroupArgs,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..), conflicts_with = "groups_in")]
    m: Option<u32>,
    #[arg(long)]
    groups_in: Option<PathBuf>,
    /// Hold θ at its posterior mode for both the engine and the refits.
    #[arg(long)]
    fix_theta: bool,
    #[arg(long)]
    gh_order: Option<usize>,
    #[arg(long)]
    test_range: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n as usize).build_global() {
            eprintln!("error: cannot start the worker pool: {e}");
            return ExitCode::FAILURE;
        }
    }
    let outcome = match cli.command {
        Command::Fit(c) => commands::fit(&c.input, c.theta_grid_step, &c.out),
        Command::Groups(c) => {
            commands::groups(&c.input, &c.fit, &c.groups, c.m as usize, c.test_range.as_deref(), &c.groups_out)
        }
        Command::Cv(c) => commands::cv(&commands::CvOptions {
            input: &c.input,
            fit: &c.fit,
            groups: &c.groups,
            m: c.m.map(|m| m as usize),
            groups_in: c.groups_in.as_deref(),
            groups_out: c.groups_out.as_deref(),
            gh_order: c.gh_order,
            test_range: c.test_range.as_deref(),
            out: &c.out,
        }),
        Command::Simulate(c) => commands::simulate(&commands::SimulateOptions {
            scenario: &c.scenario,
            seed: c.seed,
            m: c.m as usize,
            gh_order: c.gh_order,
            theta_grid_step: c.theta_grid_step,
            test_range: c.test_range.as_deref(),
            out: &c.out,
        }),
        Command::Verify(c) => commands::verify(&commands::VerifyOptions {
            input: &c.input,
            fit: &c.fit,
            groups: &c.groups,
            m: c.m.map(|m| m as usize),
            groups_in: c.groups_in.as_deref(),
            fix_theta: c.fix_theta,
            gh_order: c.gh_order,
            test_range: c.test_range.as_deref(),
            out: &c.out,
        }),
    };
    match outcome {
        Ok(commands::Status::Ok) => ExitCode::SUCCESS,
        Ok(commands::Status::VerificationFailed) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
