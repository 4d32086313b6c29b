use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use muonscale_harness::checks::{run_suite, CheckOpts, Fault, Suite};
use muonscale_harness::rates::{doubling, measure};
use muonscale_harness::runner::run_to_csv;
use muonscale_harness::sweep::{sweep, Axis};
use muonscale_harness::{HarnessError, Result, RunConfig};

#[derive(Parser)]
#[command(
    name = "muonscale",
    version,
    about = "Run, sweep, check and rate-fit adaptive Muon radius rules"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Layered {
    #[command(flatten)]
    flags: RunConfig,
    /// TOML file with the same keys; flags win
    #[arg(long)]
    config: Option<PathBuf>,
}

impl Layered {
    fn merged(self) -> Result<RunConfig> {
        let base = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        Ok(base.overlay(self.flags))
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// One run; CSV trace to --out or stdout
    Run {
        #[command(flatten)]
        cfg: Layered,
        #[arg(long, value_enum, hide = true)]
        inject_fault: Option<Fault>,
    },
    /// Execute invariant suites and report worst margins
    Check {
        #[arg(value_enum, default_value = "all")]
        suite: Suite,
        #[arg(long, value_enum, hide = true)]
        inject_fault: Option<Fault>,
    },
    /// Fit log-log slopes of the final gap (min gradient norm for da) over horizons
    Rates {
        #[command(flatten)]
        cfg: Layered,
        /// Comma-separated horizons; defaults to 32,64,...,4096
        #[arg(long, value_delimiter = ',')]
        horizons: Vec<usize>,
        /// Consecutive seeds per horizon, starting at --seed
        #[arg(long, default_value_t = 1)]
        seeds: usize,
    },
    /// Cartesian product over --grid axes, one CSV per run plus summary.csv
    Sweep {
        #[command(flatten)]
        cfg: Layered,
        /// Axis as key=v1,v2,...; repeatable
        #[arg(long = "grid", required = true)]
        grid: Vec<Axis>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn dispatch(cmd: Cmd) -> Result<ExitCode> {
    match cmd {
        Cmd::Run { cfg, inject_fault } => {
            let cfg = cfg.merged()?;
            let mut plan = cfg.resolve()?;
            if inject_fault == Some(Fault::NegatedLmo) {
                plan.inject_negated_lmo();
            }
            run_to_csv(&plan, cfg.out.as_deref())?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Check { suite, inject_fault } => {
            let outcomes = run_suite(suite, &CheckOpts { fault: inject_fault });
            for o in &outcomes {
                println!("{o}");
            }
            let failed: Vec<_> = outcomes.iter().filter(|o| !o.tally.passed()).collect();
            if failed.is_empty() {
                return Ok(ExitCode::SUCCESS);
            }
            for o in &failed {
                let f = o.tally.failure.as_ref().expect("failed outcome");
                let at = f.step.map_or("n/a".to_string(), |s| s.to_string());
                eprintln!("failed: {} (step {at})", f.lemma);
            }
            Err(HarnessError::ChecksFailed(failed.len()))
        }
        Cmd::Rates { cfg, horizons, seeds } => {
            let cfg = cfg.merged()?;
            if cfg.horizon.is_some() {
                return Err(HarnessError::usage("rates takes --horizons, not --T"));
            }
            let horizons = if horizons.is_empty() {
                doubling(32, 4096)
            } else {
                horizons
            };
            let report = measure(&cfg, &horizons, seeds)?;
            match &cfg.out {
                Some(path) => report.write_csv(std::fs::File::create(path)?)?,
                None => report.write_csv(std::io::stdout().lock())?,
            }
            eprintln!("{}", report.summary());
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Sweep { cfg, grid, out_dir } => {
            let rows = sweep(&cfg.merged()?, &grid, &out_dir)?;
            let bad = rows.iter().filter(|r| r.exit_code != 0).count();
            eprintln!(
                "{} runs, {bad} failed; summary in {}",
                rows.len(),
                out_dir.join("summary.csv").display()
            );
            Ok(if bad == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("muonscale: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
