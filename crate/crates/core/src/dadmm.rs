//! Decentralized consensus ADMM on `Σ S̃_i λ = Σ s̃_i`.
//!
//! Each agent keeps a local copy `λ_i` and a dual `γ_i` on its rows `C(i)`:
//!
//! ```text
//! λ_i ← (S̃_i + ρI)⁻¹ (s̃_i + ρλ̄ − γ_i)
//! λ̄_j ← mean_{i∈R(j)} λ_{i,j}
//! γ_i ← γ_i + ρ(λ_i − λ̄)
//! ```
//!
//! At a fixed point `λ_i = λ̄` and `Σ_{i∈R(j)} γ_{i,j} = 0`, so summing the
//! local optimality conditions recovers the condensed system.

use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::coordination::InnerStop;
use crate::dcg::{neighbor_sum, neighborhoods};
use crate::error::{Error, Result};
use crate::local_solver::CondensedContribution;
use crate::model::AssignmentMap;
use crate::netsim::{Network, Tag};

/// Residual checks in residual-controlled mode happen every this many
/// iterations.
pub const CHECK_EVERY: usize = 10;

#[derive(Clone)]
pub struct AdmmAgentState {
    pub agent: usize,
    pub rows: Vec<usize>,
    pub owned: Vec<bool>,
    pub neighbors: Vec<(usize, Vec<usize>)>,
    /// `S̃_i` on `C(i) × C(i)`.
    pub local_block: DMatrix<f64>,
    pub rhs: DVector<f64>,
    /// Factor of `S̃_i + ρI` on `C(i)`, computed once per coordination step.
    pub factor: Cholesky<f64, Dyn>,
    pub lambda: DVector<f64>,
    pub gamma: DVector<f64>,
    pub lambda_bar: DVector<f64>,
}

impl core::fmt::Debug for AdmmAgentState {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("AdmmAgentState")
            .field("agent", &self.agent)
            .field("rows", &self.rows)
            .field("lambda", &self.lambda)
            .field("gamma", &self.gamma)
            .finish()
    }
}

#[derive(Debug, Clone)]
pub struct AdmmOutcome {
    pub lambda: DVector<f64>,
    pub iterations: usize,
    /// Last checked `‖r_λ‖₂` (residual mode only; `NaN` otherwise).
    pub residual: f64,
    /// `λ̄^k` per iteration when recording was requested.
    pub iterates: Vec<DVector<f64>>,
}

/// Factor the local systems; `γ_i = 0`, `λ̄ = λ_i = lambda0` on `C(i)`.
pub fn admm_init(
    contribs: &[CondensedContribution],
    assignment: &AssignmentMap,
    rho: f64,
    lambda0: &DVector<f64>,
) -> Result<Vec<AdmmAgentState>> {
    neighborhoods(assignment)
        .into_iter()
        .enumerate()
        .map(|(i, (rows, owned, neighbors))| {
            let m = rows.len();
            let c = &contribs[i];
            let local_block = DMatrix::from_fn(m, m, |a, b| c.s_tilde[(rows[a], rows[b])]);
            let mut shifted = local_block.clone();
            for k in 0..m {
                shifted[(k, k)] += rho;
            }
            let factor = Cholesky::new(shifted).ok_or(Error::SingularLocalSystem { agent: i })?;
            let rhs = DVector::from_fn(m, |a, _| c.s_vec_tilde[rows[a]]);
            let start = DVector::from_fn(m, |a, _| lambda0[rows[a]]);
            Ok(AdmmAgentState {
                agent: i,
                rows,
                owned,
                neighbors,
                local_block,
                rhs,
                factor,
                lambda: start.clone(),
                gamma: DVector::zeros(m),
                lambda_bar: start,
            })
        })
        .collect()
}

fn layout_of(states: &[AdmmAgentState]) -> Vec<(Vec<usize>, Vec<bool>, Vec<(usize, Vec<usize>)>)> {
    states
        .iter()
        .map(|s| (s.rows.clone(), s.owned.clone(), s.neighbors.clone()))
        .collect()
}

fn gather(states: &[AdmmAgentState], n_c: usize) -> DVector<f64> {
    let mut out = DVector::zeros(n_c);
    for s in states {
        for (p, &j) in s.rows.iter().enumerate() {
            if s.owned[p] {
                out[j] = s.lambda_bar[p];
            }
        }
    }
    out
}

/// Decentralized evaluation of `‖Σ_i (S̃_i λ̄ − s̃_i)‖₂`, charged to `Aux`.
fn checked_residual(
    states: &[AdmmAgentState],
    assignment: &AssignmentMap,
    network: &mut Network,
    layout: &[(Vec<usize>, Vec<bool>, Vec<(usize, Vec<usize>)>)],
) -> Result<f64> {
    let partial: Vec<Vec<f64>> = states
        .iter()
        .map(|s| (&s.local_block * &s.lambda_bar - &s.rhs).iter().copied().collect())
        .collect();
    let rows = neighbor_sum(network, assignment, layout, &partial, Tag::Aux)?;
    let sq: Vec<f64> = states
        .iter()
        .zip(&rows)
        .map(|(s, r)| (0..s.rows.len()).filter(|&p| s.owned[p]).map(|p| r[p] * r[p]).sum())
        .collect();
    Ok(libm::sqrt(network.ring_sum(&sq, Tag::Aux)?))
}

pub fn admm_iterate(
    states: &mut [AdmmAgentState],
    assignment: &AssignmentMap,
    network: &mut Network,
    rho: f64,
    stop: InnerStop,
    record: bool,
) -> Result<AdmmOutcome> {
    let n_c = assignment.n_c();
    let layout = layout_of(states);
    let mut out = AdmmOutcome {
        lambda: DVector::zeros(0),
        iterations: 0,
        residual: f64::NAN,
        iterates: Vec::new(),
    };
    if record {
        out.iterates.push(gather(states, n_c));
    }
    let max_iter = match stop {
        InnerStop::Fixed(n) => n,
        InnerStop::Residual { max_iter, .. } => max_iter,
    };
    for k in 0..max_iter {
        if let InnerStop::Residual { target, .. } = stop {
            if k % CHECK_EVERY == 0 {
                out.residual = checked_residual(states, assignment, network, &layout)?;
                if out.residual <= target {
                    break;
                }
            }
        }
        for s in states.iter_mut() {
            let b = &s.rhs + &s.lambda_bar * rho - &s.gamma;
            s.lambda = s.factor.solve(&b);
        }
        let local: Vec<Vec<f64>> = states.iter().map(|s| s.lambda.iter().copied().collect()).collect();
        let sums = neighbor_sum(network, assignment, &layout, &local, Tag::InnerLocal)?;
        for (s, sum) in states.iter_mut().zip(&sums) {
            for p in 0..s.rows.len() {
                let degree = assignment.row_agents(s.rows[p]).len() as f64;
                s.lambda_bar[p] = sum[p] / degree;
            }
            let diff = &s.lambda - &s.lambda_bar;
            s.gamma += diff * rho;
        }
        out.iterations = k + 1;
        if record {
            out.iterates.push(gather(states, n_c));
        }
    }
    out.lambda = gather(states, n_c);
    Ok(out)
}
