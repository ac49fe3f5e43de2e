use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use openloop_cli::pipeline::{load_strategy, run_equivalence, run_moments, run_solve, run_validate, run_verify};
use openloop_cli::{Context, Overrides, RunError, RunReport};

#[derive(Parser)]
#[command(name = "openloop", version, about = "Open-loop consumption-investment equilibria: solve and verify")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario file (JSON).
    config: PathBuf,
    /// Output directory; defaults to `output.directory` of the scenario.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of Monte Carlo paths.
    #[arg(long)]
    paths: Option<usize>,
    /// Number of time steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Treat warnings and high regression truncation rates as failures.
    #[arg(long)]
    strict: bool,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            out: self.out.clone(),
            seed: self.seed,
            paths: self.paths,
            steps: self.steps,
            strict: self.strict,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Solve the equilibrium FBSDE and write the strategy table.
    Solve(Common),
    /// Run every equilibrium check on the solved pair or on a supplied strategy.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Constant strategy file `{"consumption": c, "investment": [..]}`.
        #[arg(long)]
        strategy: Option<PathBuf>,
    },
    /// Compare the pair against random candidates on the time-consistent reward.
    Equivalence(Common),
    /// Moment scaling of spike perturbations.
    Moments(Common),
    /// Check the discount functions and utilities of a scenario.
    Validate(Common),
}

fn run(cmd: Command) -> Result<RunReport, RunError> {
    match cmd {
        Command::Solve(c) => run_solve(&Context::load(&c.config, &c.overrides())?),
        Command::Verify { common, strategy } => {
            let mut ctx = Context::load(&common.config, &common.overrides())?;
            let s = strategy.as_deref().map(load_strategy).transpose()?;
            run_verify(&mut ctx, s.as_ref())
        }
        Command::Equivalence(c) => run_equivalence(&Context::load(&c.config, &c.overrides())?),
        Command::Moments(c) => run_moments(&Context::load(&c.config, &c.overrides())?),
        Command::Validate(c) => run_validate(&Context::load(&c.config, &c.overrides())?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(report) => {
            for (name, ok) in &report.verdicts {
                println!("{:<26} {}", name, if *ok { "PASS" } else { "FAIL" });
            }
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            for n in &report.notes {
                println!("note: {n}");
            }
            println!("config {} seed {}", &report.config_hash[..12], report.seed);
            if report.passed {
                ExitCode::SUCCESS
            } else {
                println!("FAILED: {}", report.failures.join(", "));
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
