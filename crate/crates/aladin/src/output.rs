//! Run artifacts: `iters.csv`, `trace.log`, `summary.json` and the comparison
//! table.
//!
//! `iters.csv` columns, in order:
//!
//! | column | meaning |
//! |---|---|
//! | `iteration` | outer iteration, from 0 |
//! | `consensus_residual` | `‖Σ A_i x_i‖∞` after the local step |
//! | `step_residual` | `max_i ‖x_i − z_i‖∞` |
//! | `lambda_residual` | `‖r_λ‖₂` of the accepted multiplier |
//! | `inner_iterations` | CG or ADMM iterations of the coordination step |
//! | `local_prep` … `backward` | ledger delta of the iteration, in floats |
//! | `objective` | `Σ f_i(x_i)` |
//! | `mu` | `μ` used by the coordination step |
//! | `eta` | inexactness parameter `η^k` |
//!
//! Floats are written with 17 significant digits.

use std::fmt::Write as _;

use aladin_core::netsim::{CommLedger, Endpoint, TraceRecord};
use aladin_core::outer::IterationRecord;
use serde::Serialize;

pub const ITERS_HEADER: &str = "iteration,consensus_residual,step_residual,lambda_residual,inner_iterations,\
local_prep,local_iter,global_iter,forward,aux,backward,objective,mu,eta";

fn float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn iters_csv(records: &[IterationRecord]) -> String {
    let mut out = String::from(ITERS_HEADER);
    out.push('\n');
    for r in records {
        let l = &r.ledger_delta;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.iteration,
            float(r.consensus_residual),
            float(r.step_residual),
            float(r.lambda_residual),
            r.inner_iterations,
            l.local_prep,
            l.local_iter,
            l.global_iter,
            l.forward,
            l.aux,
            l.backward,
            float(r.objective),
            float(r.mu),
            float(r.eta),
        );
    }
    out
}

fn endpoint(e: Endpoint) -> String {
    match e {
        Endpoint::Agent(i) => format!("agent{i}"),
        Endpoint::Ring => "ring".into(),
        Endpoint::Coordinator => "coordinator".into(),
    }
}

/// One line per delivered message: `round from to tag floats`.
pub fn trace_log(trace: &[TraceRecord]) -> String {
    let mut out = String::new();
    for t in trace {
        let _ = writeln!(
            out,
            "{} {} {} {} {}",
            t.round,
            endpoint(t.from),
            endpoint(t.to),
            t.tag.as_str(),
            t.len
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LedgerTotals {
    pub local_prep: u64,
    pub local_iter: u64,
    pub global_iter: u64,
    pub forward: u64,
    pub aux: u64,
    pub backward: u64,
    pub local: u64,
    pub global: u64,
    pub total: u64,
}

impl From<&CommLedger> for LedgerTotals {
    fn from(l: &CommLedger) -> Self {
        Self {
            local_prep: l.local_prep,
            local_iter: l.local_iter,
            global_iter: l.global_iter,
            forward: l.forward,
            aux: l.aux,
            backward: l.backward,
            local: l.local(),
            global: l.global(),
            total: l.total(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub problem: String,
    pub variant: String,
    pub seed: u64,
    pub converged: bool,
    pub outer_iterations: usize,
    pub total_inner_iterations: usize,
    pub final_consensus_residual: f64,
    pub final_step_residual: f64,
    pub final_objective: f64,
    pub ledger: LedgerTotals,
    /// SHA-256 of the little-endian bytes of the final local solutions.
    pub solution_hash: String,
    pub failure: Option<String>,
}

pub fn summary_json(s: &RunSummary) -> String {
    let mut text = serde_json::to_string_pretty(s).expect("summary serializes");
    text.push('\n');
    text
}

pub const COMPARE_HEADER: &str =
    "problem,variant,seed,converged,outer_iterations,total_inner_iterations,local_floats,global_floats,total_floats,final_consensus_residual";

pub fn compare_csv(rows: &[RunSummary]) -> String {
    let mut out = String::from(COMPARE_HEADER);
    out.push('\n');
    for s in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            s.problem,
            s.variant,
            s.seed,
            s.converged,
            s.outer_iterations,
            s.total_inner_iterations,
            s.ledger.local,
            s.ledger.global,
            s.ledger.total,
            float(s.final_consensus_residual),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use aladin_core::netsim::Tag;

    #[test]
    fn floats_keep_seventeen_digits() {
        assert_eq!(float(0.1), "1.0000000000000001e-1");
        assert_eq!(float(0.1).parse::<f64>().unwrap(), 0.1);
        assert_eq!(float(-2.5), "-2.5000000000000000e0");
    }

    #[test]
    fn trace_lines() {
        let t = [TraceRecord {
            round: 3,
            from: Endpoint::Agent(1),
            to: Endpoint::Coordinator,
            tag: Tag::Forward,
            len: 12,
        }];
        assert_eq!(trace_log(&t), "3 agent1 coordinator forward 12\n");
    }

    #[test]
    fn header_matches_row_width() {
        let rec = IterationRecord {
            iteration: 0,
            consensus_residual: 1.0,
            step_residual: 2.0,
            lambda_residual: 0.0,
            m_norm: 0.0,
            eta: 0.1,
            inner_iterations: 4,
            ledger_delta: CommLedger::default(),
            objective: 3.0,
            mu: 1e6,
            z: Vec::new(),
            lambda: aladin_core::DVector::zeros(0),
            min_eig_condensed: None,
            min_eig_agent: None,
        };
        let csv = iters_csv(&[rec]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0].split(',').count(), lines[1].split(',').count());
    }
}
