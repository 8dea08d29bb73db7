use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use merton_equilibrium::run::{self, Method, RunConfig};
use merton_equilibrium::{Error, Result};

#[derive(Parser)]
#[command(
    name = "merton-eq",
    version,
    about = "Equilibrium Merton policies under non-exponential discounting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for lambda and write it with bounds and residuals.
    Solve(Common),
    /// Run the Monte Carlo and duality checks.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Scale lambda by this factor before checking (negative control).
        #[arg(long, hide = true)]
        perturb_lambda: Option<f64>,
    },
    /// Solve several discount functions on one grid.
    Compare(Common),
    /// Simulate wealth under the equilibrium policy.
    Simulate(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to `[output] dir`, then `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `[sim] seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `[solver] method`.
    #[arg(long)]
    method: Option<String>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<(RunConfig, PathBuf)> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(m) = &self.method {
            cfg.solver.method = m.parse::<Method>()?;
        }
        if let Some(seed) = self.seed {
            match cfg.sim.as_mut() {
                Some(sim) => sim.seed = seed,
                None => {
                    return Err(Error::Config(
                        "--seed given but the config has no [sim] section".into(),
                    ))
                }
            }
        }
        if let Some(n) = self.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| Error::Config(format!("--threads: {e}")))?;
        }
        let out = self
            .out
            .clone()
            .or_else(|| cfg.output.as_ref().map(|o| o.dir.clone()))
            .unwrap_or_else(|| PathBuf::from("out"));
        Ok((cfg, out))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve(c) => c.load().and_then(|(cfg, out)| run::cmd_solve(&cfg, &out)),
        Command::Verify {
            common,
            perturb_lambda,
        } => common
            .load()
            .and_then(|(cfg, out)| run::cmd_verify(&cfg, &out, *perturb_lambda)),
        Command::Compare(c) => c.load().and_then(|(cfg, out)| run::cmd_compare(&cfg, &out)),
        Command::Simulate(c) => c
            .load()
            .and_then(|(cfg, out)| run::cmd_simulate(&cfg, &out)),
    };
    match result {
        Ok(outcome) => {
            for path in &outcome.written {
                println!("{}", path.display());
            }
            if let Some(why) = &outcome.failure {
                eprintln!("merton-eq: {why}");
            }
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(e) => {
            eprintln!("merton-eq: {e}");
            ExitCode::from(run::exit_code(&e) as u8)
        }
    }
}
