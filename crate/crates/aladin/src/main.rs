use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use aladin::runner::{compare, run, write_artifacts};
use aladin::scenario::Scenario;
use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

/// Bi-level distributed ALADIN scenario runner.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario; exits with 0 iff it converged.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: `output.dir` of the scenario, else `out`).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Run several scenarios (and variants) and tabulate them as CSV.
    Compare {
        #[arg(long = "config", required = true)]
        configs: Vec<PathBuf>,
        /// Directory for `compare.csv`; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// `standard`, `condensed-exact`, `bilevel-cg` or `bilevel-admm`.
    /// Repeat with `compare` to tabulate several variants.
    #[arg(long)]
    variant: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_outer: Option<usize>,
    /// Override a scenario value, e.g. `--set outer.rho=1e3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn overrides(&self) -> Vec<String> {
        let mut o = self.overrides.clone();
        if let Some(s) = self.seed {
            o.push(format!("seed={s}"));
        }
        if let Some(m) = self.max_outer {
            o.push(format!("outer.max_outer={m}"));
        }
        o
    }

    /// One scenario per requested variant (the file's own when none given).
    fn load(&self, path: &PathBuf) -> Result<Vec<Scenario>> {
        let base = self.overrides();
        if self.variant.is_empty() {
            return Ok(vec![Scenario::load(path, &base)?]);
        }
        self.variant
            .iter()
            .map(|v| {
                let mut o = base.clone();
                o.push(format!("variant=\"{v}\""));
                Scenario::load(path, &o)
            })
            .collect()
    }
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { config, out, common } => {
            if common.variant.len() > 1 {
                anyhow::bail!("run takes a single --variant");
            }
            let sc = common.load(&config)?.remove(0);
            let dir = out.or_else(|| sc.output.dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
            let outcome = run(&sc)?;
            write_artifacts(&outcome, &dir, sc.output.trace)?;
            let s = &outcome.summary;
            println!(
                "{} {}: converged={} outer={} inner={} floats={} consensus={:.3e}",
                s.problem,
                s.variant,
                s.converged,
                s.outer_iterations,
                s.total_inner_iterations,
                s.ledger.total,
                s.final_consensus_residual
            );
            if let Some(f) = &s.failure {
                eprintln!("error: {f}");
            } else if !s.converged {
                eprintln!("error: iteration cap reached without convergence");
            }
            Ok(s.converged)
        }
        Command::Compare { configs, out, common } => {
            let mut scenarios = Vec::new();
            for c in &configs {
                scenarios.extend(common.load(c)?);
            }
            let (rows, csv) = compare(&scenarios)?;
            match out {
                Some(dir) => {
                    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
                    fs::write(dir.join("compare.csv"), &csv)?;
                }
                None => print!("{csv}"),
            }
            Ok(rows.iter().all(|r| r.converged))
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
