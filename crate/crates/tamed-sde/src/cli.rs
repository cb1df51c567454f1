//! `tsde` command-line front end.
//!
//! Exit codes: 0 all checks passed, 1 a check failed, 2 usage or config
//! error, 3 runtime error (divergence, IO).

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::Config;
use crate::ensemble_io;
use crate::error::Error;
use crate::exec::{with_threads, Parallel};
use crate::harness::{self, Check};
use crate::report::{self, Format};

pub const EXIT_PASS: u8 = 0;
pub const EXIT_FAIL: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "tsde",
    version,
    about = "Tamed Euler-Maruyama experiments with decreasing steps"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the tamed ensemble, dump checkpoint ensembles and fit the moment decay
    Simulate(Common),
    /// Distances to a reference law at each checkpoint and the fitted rate
    Converge(Common),
    /// Check the step-size conditions
    ValidateSchedule(Common),
    /// Sample the dissipativity, growth and diffusion conditions
    CheckAssumptions(Common),
    /// Step-sum ratios and Gaussian exponential-moment constants
    ProbeLemmas(Common),
    /// Order of the one-step error against the frozen-coefficient process
    OneStep(Common),
    /// Gradient estimator against closed form and finite differences
    BelCheck(Common),
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML config file (optional for `simulate`)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory
    #[arg(long, env = "TSDE_OUT", default_value = "out")]
    pub out: PathBuf,
    /// Override experiment.master_seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: available cores)
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long, value_enum, default_value = "both")]
    pub format: Format,
    /// Dotted overrides such as `experiment.m=20000`, applied in order
    pub overrides: Vec<String>,
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Simulate(c)
            | Command::Converge(c)
            | Command::ValidateSchedule(c)
            | Command::CheckAssumptions(c)
            | Command::ProbeLemmas(c)
            | Command::OneStep(c)
            | Command::BelCheck(c) => c,
        }
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() {
                EXIT_USAGE
            } else {
                EXIT_PASS
            };
            let _ = e.print();
            return code;
        }
    };
    let common = cli.command.common();
    if common.config.is_none() && !matches!(cli.command, Command::Simulate(_)) {
        eprintln!("error: --config is required for this subcommand");
        return EXIT_USAGE;
    }
    let mut overrides = common.overrides.clone();
    if let Some(seed) = common.seed {
        overrides.push(format!("experiment.master_seed={seed}"));
    }
    let cfg = match Config::load(common.config.as_deref(), &overrides) {
        Ok(c) => c,
        Err(e) => return report_error(&e, &common.out),
    };
    let outcome = with_threads(common.threads, || dispatch(&cli.command, &cfg));
    match outcome {
        Ok(Ok(checks)) => {
            for c in &checks {
                println!("{c}");
            }
            if checks.iter().all(|c| c.pass) {
                EXIT_PASS
            } else {
                EXIT_FAIL
            }
        }
        Ok(Err(e)) => report_error(&e, &common.out),
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            EXIT_USAGE
        }
    }
}

fn report_error(e: &Error, out: &Path) -> u8 {
    match e {
        Error::Config(_) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
        Error::Assumptions(reports) => {
            for r in reports {
                let tag = if r.pass() { "PASS" } else { "FAIL" };
                println!(
                    "{tag} {:?}: worst violation {} at {:?}",
                    r.condition, r.worst_violation, r.worst_point
                );
            }
            if let Err(io) = report::write_json(out, "assumptions.json", reports) {
                eprintln!("error: {io}");
                return EXIT_RUNTIME;
            }
            eprintln!("error: {e}");
            EXIT_FAIL
        }
        _ => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn dispatch(cmd: &Command, cfg: &Config) -> crate::Result<Vec<Check>> {
    let common = cmd.common();
    let out = common.out.as_path();
    let fmt = common.format;
    let exec = Parallel;
    match cmd {
        Command::Converge(_) => {
            let r = harness::run_convergence(cfg, &exec)?;
            report::emit_report(&r, out, fmt)?;
            if cfg.experiment.dump_ensembles {
                dump(
                    &r.ensembles,
                    &r.series.iter().map(|s| s.n).collect::<Vec<_>>(),
                    out,
                    fmt,
                )?;
            }
            Ok(r.checks)
        }
        Command::Simulate(_) => {
            let sim = harness::run_simulate(cfg, &exec)?;
            let mom = harness::run_moment_experiment(cfg, &exec)?;
            report::write_json(out, "report.json", &sim)?;
            report::write_json(out, "moments.json", &mom)?;
            dump(
                &sim.ensembles,
                &sim.records.iter().map(|r| r.n).collect::<Vec<_>>(),
                out,
                fmt,
            )?;
            Ok(sim.checks.into_iter().chain(mom.checks).collect())
        }
        Command::ValidateSchedule(_) => {
            let r = harness::run_validate_schedule(cfg)?;
            report::write_json(out, "report.json", &r)?;
            Ok(r.checks)
        }
        Command::CheckAssumptions(_) => {
            let (reports, checks) = harness::check_assumptions(cfg)?;
            report::write_json(out, "report.json", &reports)?;
            Ok(checks)
        }
        Command::ProbeLemmas(_) => {
            let r = harness::run_lemma_probes(cfg, &exec)?;
            report::write_json(out, "report.json", &r)?;
            for n in &r.notes {
                eprintln!("note: {n}");
            }
            Ok(r.checks)
        }
        Command::OneStep(_) => {
            let r = harness::run_one_step(cfg, &exec)?;
            report::write_json(out, "report.json", &r)?;
            Ok(r.checks)
        }
        Command::BelCheck(_) => {
            let r = harness::run_bel_check(cfg, &exec)?;
            report::write_json(out, "report.json", &r)?;
            Ok(r.checks)
        }
    }
}

fn dump(
    ensembles: &[tamed_sde_core::PathEnsemble],
    ns: &[u64],
    out: &Path,
    fmt: Format,
) -> crate::Result<()> {
    report::ensure_dir(out)?;
    for (e, n) in ensembles.iter().zip(ns) {
        ensemble_io::write_binary(&out.join(format!("ensemble_{n}.bin")), e)?;
        if fmt.csv() {
            ensemble_io::write_csv(&out.join(format!("ensemble_{n}.csv")), e)?;
        }
    }
    Ok(())
}
