//! `qot`: generate benchmark instances, solve them, run scaling sweeps and
//! self-checks.
//!
//! Exit status: 0 success, 1 failed check, 2 invalid input, 3 sampling
//! failure, 4 numerical failure.

pub mod commands;
pub mod error;
pub mod files;
pub mod instance;
pub mod plot;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use qot_core::diagnostics::DEFAULT_TAU;
use qot_core::solvers::SolverKind;
use qot_core::verify::{Kernels, Suite, SuiteSizes};

use crate::commands::{ScaleOptions, SolveOptions};
pub use crate::error::{CliError, Exit};

#[derive(Debug, Parser)]
#[command(name = "qot", version, about = "Quadratically regularized OT experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample benchmark instances, one file per (d, seed).
    Generate(GenerateArgs),
    /// Solve one instance at a fixed ε.
    Solve(SolveArgs),
    /// Run the ε-grid scaling sweep.
    Scale(ScaleArgs),
    /// Run the built-in verification suites.
    Check(CheckArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SolverArg {
    Nlgs,
    Ssn,
}

impl From<SolverArg> for SolverKind {
    fn from(s: SolverArg) -> Self {
        match s {
            SolverArg::Nlgs => SolverKind::GaussSeidel,
            SolverArg::Ssn => SolverKind::SemismoothNewton,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PresetArg {
    Paper,
    Desk,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SuiteArg {
    Hinge,
    Qp,
    Gradient,
    Lemmas,
}

impl From<SuiteArg> for Suite {
    fn from(s: SuiteArg) -> Self {
        match s {
            SuiteArg::Hinge => Suite::Hinge,
            SuiteArg::Qp => Suite::Qp,
            SuiteArg::Gradient => Suite::Gradient,
            SuiteArg::Lemmas => Suite::Lemmas,
        }
    }
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// JSON family configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Generate only this seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct SolveArgs {
    /// Instance JSON file.
    instance: PathBuf,
    #[arg(long)]
    eps: f64,
    #[arg(long, value_enum, default_value = "ssn")]
    solver: SolverArg,
    /// Relative marginal tolerance.
    #[arg(long, default_value_t = 1e-2)]
    init_tol: f64,
    /// Support threshold on plan mass.
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ScaleArgs {
    /// JSON scaling configuration.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration (default: desk).
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
    #[arg(long)]
    out: PathBuf,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, value_enum)]
    solver: Option<SolverArg>,
    #[arg(long)]
    init_tol: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    /// Run a single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Also write beta.svg and relerr.svg.
    #[arg(long)]
    plot: bool,
}

#[derive(Debug, Args)]
struct CheckArgs {
    /// Suites to run (repeatable); all when omitted.
    #[arg(long, value_enum, value_delimiter = ',')]
    suite: Vec<SuiteArg>,
}

/// Parses `args` and runs the command, writing progress to `out` and errors to
/// `err`. Returns the process exit status.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with_kernels(args, &Kernels::default(), out, err)
}

/// As [`run`], with the kernels audited by `qot check` supplied by the caller.
pub fn run_with_kernels<I, T>(args: I, kernels: &Kernels, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
                return Exit::InvalidInput.code();
            }
            let _ = write!(out, "{}", e.render());
            return Exit::Success.code();
        }
    };
    let result = match cli.command {
        Command::Generate(a) => commands::generate(&a.config, &a.out, a.seed, out),
        Command::Solve(a) => {
            let opts = SolveOptions {
                eps: a.eps,
                solver: a.solver.into(),
                init_tol: a.init_tol,
                tau: a.tau,
                max_iters: a.max_iters,
            };
            commands::solve_instance(&a.instance, &opts, &a.out, out)
        }
        Command::Scale(a) => {
            let opts = ScaleOptions {
                config: a.config,
                preset: a.preset.map(|p| match p {
                    PresetArg::Paper => "paper".to_string(),
                    PresetArg::Desk => "desk".to_string(),
                }),
                jobs: a.jobs,
                solver: a.solver.map(Into::into),
                init_tol: a.init_tol,
                tau: a.tau,
                seed: a.seed,
                plot: a.plot,
            };
            commands::scale(&opts, &a.out, out)
        }
        Command::Check(a) => {
            let suites: Vec<Suite> = a.suite.into_iter().map(Into::into).collect();
            return commands::check(&suites, kernels, &SuiteSizes::default(), out).code();
        }
    };
    match result {
        Ok(()) => Exit::Success.code(),
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit.code()
        }
    }
}
