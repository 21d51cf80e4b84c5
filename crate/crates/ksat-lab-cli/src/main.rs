//! `ksat-lab`: command-line front end.
//!
//! Every command writes one primary document (JSON, or DIMACS for `gen`) to
//! `--out` or stdout. Exit status is 0 on success, 1 on invalid input or I/O
//! failure and 2 when a library invariant breaks.

mod checkpoint;
mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use ksat_lab::moments::MomentError;
use ksat_lab::twosat::TwoSatError;

#[derive(Parser, Debug)]
#[command(name = "ksat-lab", version, about = "Random k-SAT covers, SP types and moment rate functions")]
struct Cli {
    /// Primary output file (stdout when absent).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Side file for run metadata (wall time, threads, version).
    #[arg(long, global = true)]
    meta: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Generate a random formula in DIMACS.
    Gen(GenArgs),
    /// Prune a formula and report what was removed.
    Prune(PruneArgs),
    /// Enumerate covers, or check one map.
    Covers(CoversArgs),
    /// Extend covers to satisfying assignments through 2-SAT.
    Extend(ExtendArgs),
    /// SP marginals ϑ(δ) as exact rationals.
    SpMarginals(SpArgs),
    /// Build a type system and check the Λ identity.
    Types(SystemArgs),
    /// Solve the first-moment fixed point and evaluate the rate.
    FirstMoment(FirstArgs),
    /// Second-moment rate at the product overlap.
    SecondMoment(SecondArgs),
    /// ψ at the origin and the middle-ground scan.
    PsiScan(PsiArgs),
    /// The rough bound f̂ along the mid-overlap path.
    Fhat(FhatArgs),
    /// Ξ(k, d) over a degree range and its sign-change threshold d*.
    RegularXi(RegularArgs),
    /// Closed-form threshold bounds.
    Bounds(BoundsArgs),
    /// Empirical satisfiability threshold by DPLL.
    Empirical(EmpiricalArgs),
    /// Desk-scale oracle suites.
    Selftest(SelftestArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Gen(_) => "gen",
            Command::Prune(_) => "prune",
            Command::Covers(_) => "covers",
            Command::Extend(_) => "extend",
            Command::SpMarginals(_) => "sp-marginals",
            Command::Types(_) => "types",
            Command::FirstMoment(_) => "first-moment",
            Command::SecondMoment(_) => "second-moment",
            Command::PsiScan(_) => "psi-scan",
            Command::Fhat(_) => "fhat",
            Command::RegularXi(_) => "regular-xi",
            Command::Bounds(_) => "bounds",
            Command::Empirical(_) => "empirical",
            Command::Selftest(_) => "selftest",
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
enum GenKind {
    Uniform,
    Regular,
}

#[derive(Args, Debug, Serialize)]
struct GenArgs {
    #[arg(long, value_enum, default_value = "uniform")]
    kind: GenKind,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    n: usize,
    /// Clause count (uniform).
    #[arg(long, conflicts_with = "r")]
    m: Option<usize>,
    /// Density; m = ⌈rn⌉ (uniform).
    #[arg(long)]
    r: Option<f64>,
    /// Literal degree (regular).
    #[arg(long)]
    d: Option<u32>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug, Serialize)]
struct PruneArgs {
    #[arg(long)]
    dimacs: PathBuf,
    /// Clause width; defaults to the longest clause.
    #[arg(long)]
    k: Option<usize>,
    /// Density as a decimal or p/q.
    #[arg(long)]
    r: String,
    /// Degree window half-width (default k³·2^{k/2}).
    #[arg(long)]
    window: Option<String>,
    #[arg(long)]
    recompute_target: bool,
    /// Where to write the pruned formula.
    #[arg(long)]
    pruned: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct CoversArgs {
    #[arg(long)]
    dimacs: PathBuf,
    /// Refuse formulas with more variables.
    #[arg(long, default_value_t = 16)]
    max_vars: usize,
    /// Check this map (e.g. "10*") instead of enumerating.
    #[arg(long)]
    check: Option<String>,
    /// Also list the valid shades.
    #[arg(long)]
    shades: bool,
}

#[derive(Args, Debug, Serialize)]
struct ExtendArgs {
    #[arg(long)]
    dimacs: PathBuf,
    /// Cover to extend; every cover when absent.
    #[arg(long)]
    cover: Option<String>,
    #[arg(long, default_value_t = 16)]
    max_vars: usize,
    /// Compare with exhaustive search over the stars.
    #[arg(long)]
    brute_force: bool,
}

#[derive(Args, Debug, Serialize)]
struct SpArgs {
    #[arg(long)]
    k: usize,
    #[arg(long, allow_hyphen_values = true, conflicts_with = "delta_range")]
    delta: Option<i64>,
    /// Inclusive range lo:hi.
    #[arg(long, allow_hyphen_values = true)]
    delta_range: Option<String>,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Mode {
    Full,
    DegreePair,
}

/// Where a type system comes from: `--regular K:D`, or `--dimacs` with `--r`.
#[derive(Args, Debug, Serialize)]
struct SystemArgs {
    /// Single-type system of d-regular k-SAT, as K:D.
    #[arg(long, conflicts_with = "dimacs")]
    regular: Option<String>,
    #[arg(long)]
    dimacs: Option<PathBuf>,
    /// Density of the formula, decimal or p/q.
    #[arg(long)]
    r: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_enum, default_value = "full")]
    mode: Mode,
    #[arg(long)]
    window: Option<String>,
    /// Prune the formula before typing it.
    #[arg(long)]
    prune: bool,
}

#[derive(Args, Debug, Serialize)]
struct FirstArgs {
    #[command(flatten)]
    system: SystemArgs,
    /// Poisson ensemble of random k-SAT at density --r, clause width K.
    #[arg(long, conflicts_with_all = ["regular", "dimacs"])]
    ensemble: Option<usize>,
    #[arg(long, default_value_t = 16_384)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
enum SecondCheck {
    Evaluate,
    Stationary,
    Concavity,
}

#[derive(Args, Debug, Serialize)]
struct SecondArgs {
    #[arg(value_enum)]
    check: SecondCheck,
    #[command(flatten)]
    system: SystemArgs,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-5)]
    h: f64,
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 1.0)]
    radius: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args, Debug, Serialize)]
struct PsiArgs {
    #[arg(long)]
    k: usize,
    /// Density; defaults to the main bound.
    #[arg(long)]
    r: Option<f64>,
    #[arg(long, default_value_t = 10_000)]
    grid: usize,
    /// ε_k = c·2^{-k/3}.
    #[arg(long, default_value_t = 1.0)]
    eps_c: f64,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct FhatArgs {
    #[arg(long)]
    k: usize,
    #[arg(long)]
    r: Option<f64>,
    #[arg(long, default_value_t = 64)]
    grid: usize,
    #[arg(long, default_value_t = 16_384)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct RegularArgs {
    #[arg(long)]
    k: usize,
    /// Inclusive degree range lo:hi; widened automatically when absent.
    #[arg(long)]
    d_range: Option<String>,
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Checkpoint file; finished degrees are reused.
    #[arg(long)]
    #[serde(skip)]
    resume: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct BoundsArgs {
    #[arg(long, conflicts_with = "k_range")]
    k: Option<usize>,
    /// Inclusive sweep lo:hi.
    #[arg(long)]
    k_range: Option<String>,
    /// Add the regular threshold d*(k).
    #[arg(long)]
    regular: bool,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct EmpiricalArgs {
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 150)]
    n: usize,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    #[arg(long, default_value_t = 3.0)]
    r_lo: f64,
    #[arg(long, default_value_t = 6.0)]
    r_hi: f64,
    #[arg(long, default_value_t = 0.05)]
    tol: f64,
    #[arg(long, default_value_t = 11)]
    seed: u64,
    /// Extra sat-probability curve lo:hi:step.
    #[arg(long)]
    curve: Option<String>,
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Checkpoint file; finished densities are reused.
    #[arg(long)]
    #[serde(skip)]
    resume: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct SelftestArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 60)]
    cover_instances: usize,
    #[arg(long, default_value_t = 2000)]
    twosat_instances: usize,
}

/// Maps an error chain to the process exit status.
fn exit_code(e: &anyhow::Error) -> u8 {
    for c in e.chain() {
        if let Some(x) = c.downcast_ref::<ksat_lab::Error>() {
            return x.exit_code() as u8;
        }
        if let Some(MomentError::Contract(_)) = c.downcast_ref::<MomentError>() {
            return 2;
        }
        if c.downcast_ref::<TwoSatError>().is_some_and(TwoSatError::is_contract_violation) {
            return 2;
        }
        if c.downcast_ref::<commands::ContractViolation>().is_some() {
            return 2;
        }
    }
    1
}

fn init_threads() -> Result<usize> {
    if let Ok(v) = std::env::var("KSAT_LAB_THREADS") {
        let Ok(n) = v.trim().parse::<usize>() else {
            bail!("KSAT_LAB_THREADS must be a positive integer, got {v:?}");
        };
        if n == 0 {
            bail!("KSAT_LAB_THREADS must be a positive integer, got 0");
        }
        ksat_lab::par::init_threads(n);
    }
    Ok(ksat_lab::par::threads())
}

fn run(cli: Cli) -> Result<()> {
    let started = Instant::now();
    let threads = init_threads()?;
    let name = cli.command.name();
    commands::dispatch(&cli.command, cli.out.as_deref())?;
    if let Some(meta) = &cli.meta {
        let doc = serde_json::json!({
            "schema": output::SCHEMA,
            "command": name,
            "version": env!("CARGO_PKG_VERSION"),
            "threads": threads,
            "elapsed_seconds": started.elapsed().as_secs_f64(),
        });
        output::write_text(Some(meta), &output::to_json_string(&doc)?)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
