//! Scenario runner: builds the problem, runs one ALADIN variant and writes the
//! artifacts.

use std::fs;
use std::path::Path;

use aladin_core::model::{reformulate_two_assigned, PartitionedNlp};
use aladin_core::outer::{run_aladin, RunOptions, RunReport};
use aladin_core::problems::{make_quartic_toy, make_robot_ocp, RandomQp};
use aladin_core::DVector;
use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

use crate::output::{compare_csv, iters_csv, summary_json, trace_log, LedgerTotals, RunSummary};
use crate::scenario::{ProblemKind, Scenario};

/// The scenario's problem, reformulated to be 2-assigned.
pub fn build_problem(sc: &Scenario) -> Result<PartitionedNlp> {
    let nlp = match sc.problem {
        ProblemKind::QuarticToy => make_quartic_toy(&sc.quartic_config()),
        ProblemKind::RandomQp => RandomQp::generate(&sc.random_qp_config()?).into_nlp(),
        ProblemKind::RobotOcp => make_robot_ocp(&sc.robot_config()?)?,
    };
    Ok(reformulate_two_assigned(&nlp)?)
}

pub fn solution_hash(x: &[DVector<f64>]) -> String {
    let mut h = Sha256::new();
    for xi in x {
        for v in xi.iter() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub struct RunOutcome {
    pub report: RunReport,
    pub summary: RunSummary,
}

pub fn run(sc: &Scenario) -> Result<RunOutcome> {
    let nlp = build_problem(sc)?;
    let variant = sc.variant()?;
    let (mut outer, inner) = sc.params()?;
    if let [s] = outer.sigma[..] {
        outer.sigma = vec![s; nlp.n_agents()];
    }
    let options = RunOptions {
        record_trace: sc.output.trace,
        diagnostics: false,
    };
    let report = run_aladin(&nlp, variant, &outer, &inner, &options)?;
    let last = report.records.last();
    let summary = RunSummary {
        problem: sc.problem.as_str().into(),
        variant: variant.as_str().into(),
        seed: sc.seed,
        converged: report.converged,
        outer_iterations: report.outer_iterations(),
        total_inner_iterations: report.total_inner_iterations(),
        final_consensus_residual: last.map_or(f64::NAN, |r| r.consensus_residual),
        final_step_residual: last.map_or(f64::NAN, |r| r.step_residual),
        final_objective: last.map_or(f64::NAN, |r| r.objective),
        ledger: LedgerTotals::from(&report.ledger),
        solution_hash: solution_hash(&report.x),
        failure: report.failure.as_ref().map(|e| e.to_string()),
    };
    Ok(RunOutcome { report, summary })
}

/// Writes `iters.csv`, `summary.json` and, when tracing, `trace.log`.
pub fn write_artifacts(out: &RunOutcome, dir: &Path, trace: bool) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let write = |name: &str, text: String| {
        let path = dir.join(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    };
    write("iters.csv", iters_csv(&out.report.records))?;
    write("summary.json", summary_json(&out.summary))?;
    if trace {
        write("trace.log", trace_log(&out.report.trace))?;
    }
    Ok(())
}

pub fn run_to_dir(sc: &Scenario, dir: &Path) -> Result<RunSummary> {
    let out = run(sc)?;
    write_artifacts(&out, dir, sc.output.trace)?;
    Ok(out.summary)
}

/// Runs every scenario in order; returns the table rows and their CSV.
pub fn compare(scenarios: &[Scenario]) -> Result<(Vec<RunSummary>, String)> {
    let mut rows = Vec::with_capacity(scenarios.len());
    for (k, sc) in scenarios.iter().enumerate() {
        let mut quiet = sc.clone();
        quiet.output.trace = false;
        let out = run(&quiet).with_context(|| format!("comparison row {k}"))?;
        rows.push(out.summary);
    }
    let csv = compare_csv(&rows);
    Ok((rows, csv))
}
