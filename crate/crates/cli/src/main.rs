use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ufd_cli::commands::{cmd_oracle, cmd_run, cmd_sweep, cmd_verify, parse_values};
use ufd_cli::{CliResult, Config, EXIT_FAILURE, EXIT_PASS};

#[derive(Parser)]
#[command(
    name = "ufd",
    version,
    about = "Weighted ultrafast diffusion laboratory"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve the configured datum, fit the decay and audit the trajectory.
    Run(Common),
    /// Audit the functional inequalities on seeded random cone densities.
    Verify(Common),
    /// Self-test the transport and Poincaré oracles.
    Oracle {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "out/oracle")]
        out: PathBuf,
    },
    /// Repeat `run` over values of one parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// One of r, c, C, grid.n, truncation.k.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, allow_hyphen_values = true)]
        values: String,
    },
}

#[derive(clap::Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `output.directory`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `verify.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> CliResult<Config> {
        let mut config = Config::load(&self.config)?;
        if let Some(out) = &self.out {
            config.output.directory = out.clone();
        }
        if let Some(seed) = self.seed {
            config.verify.seed = seed;
        }
        Ok(config)
    }
}

fn report(failures: &[String]) -> i32 {
    for f in failures {
        eprintln!("FAILED: {f}");
    }
    if failures.is_empty() {
        EXIT_PASS
    } else {
        EXIT_FAILURE
    }
}

fn execute(cli: Cli) -> CliResult<i32> {
    match cli.command {
        Command::Run(common) => {
            let config = common.load()?;
            let o = cmd_run(&config, &config.output.directory)?;
            if let Some(fit) = &o.fit {
                println!(
                    "a_fit={:.6e} A_fit={:.6e} points={}",
                    fit.rate, fit.amplitude, fit.points
                );
            }
            println!("K_epe={:.6e} steps={}", o.ledger.k_epe, o.steps);
            Ok(report(&o.failures))
        }
        Command::Verify(common) => {
            let config = common.load()?;
            let o = cmd_verify(&config, &config.output.directory)?;
            println!(
                "{} reports, {} failed; lambda={:.6e} lambda_audit={:.6e}",
                o.reports.len(),
                o.failures.len(),
                o.ledger.lambda,
                o.ledger.lambda_audit
            );
            Ok(report(&o.failures))
        }
        Command::Oracle { seed, out } => {
            let reports = cmd_oracle(seed, &out)?;
            for r in &reports {
                println!(
                    "{} {} lhs={:.3e} rhs={:.3e}",
                    if r.pass { "ok  " } else { "FAIL" },
                    r.name,
                    r.lhs,
                    r.rhs
                );
            }
            let failed: Vec<String> = reports
                .iter()
                .filter(|r| !r.pass)
                .map(|r| r.name.clone())
                .collect();
            Ok(report(&failed))
        }
        Command::Sweep {
            common,
            param,
            values,
        } => {
            let config = common.load()?;
            let values = parse_values(&values)?;
            let o = cmd_sweep(&config, &param, &values, &config.output.directory)?;
            for r in &o.rows {
                println!(
                    "{param}={} a_fit={:.6e} K_epe={:.6e}",
                    r.value, r.a_fit, r.k_epe
                );
            }
            Ok(report(&o.failures))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let code = match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
