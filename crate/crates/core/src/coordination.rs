//! Exact reference solvers for the coordination step and the inexactness
//! test applied to iterative ones.
//!
//! With `s = Σ A_i(x_i + Δx_i)` eliminated, the coordination QP
//!
//! ```text
//! min Σ ½Δx_iᵀH_iΔx_i + g_iᵀΔx_i + λᵀs + μ/2‖s‖²   s.t.  C_iΔx_i = 0
//! ```
//!
//! condenses to `(μ⁻¹I + Σ S_i) λ^QP = μ⁻¹λ + Σ s_i`.

use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::local_solver::{back_substitute, dual_residual, AgentSensitivities, CondensedContribution};
use crate::netsim::CommLedger;

#[derive(Debug, Clone)]
pub struct CoordinationResult {
    pub lambda_qp: DVector<f64>,
    pub delta_x: Vec<DVector<f64>>,
    /// `Σ A_i(x_i + Δx_i)`; equals `(λ^QP − λ)/μ` at an exact solve.
    pub slack: DVector<f64>,
    /// `‖r_λ‖₂` of the condensed system at `lambda_qp`.
    pub residual_norm: f64,
    pub inner_iterations: usize,
    pub ledger_delta: CommLedger,
}

/// Dense solve of the unreduced coordination KKT system
///
/// ```text
/// [ H_i        A_iᵀ     C_iᵀ ] [Δx_i]   [ −g_i           ]
/// [ A_i ...   −μ⁻¹I      0   ] [λ^QP] = [ −ΣA_ix_i − μ⁻¹λ ]
/// [ C_i         0        0   ] [κ_i ]   [ 0              ]
/// ```
///
/// by full-pivot LU. Used as the oracle for the condensed solvers.
pub fn solve_full_qp(
    sens: &[AgentSensitivities],
    a: &[DMatrix<f64>],
    x: &[DVector<f64>],
    lambda: &DVector<f64>,
    mu: f64,
) -> Result<CoordinationResult> {
    let n_c = lambda.len();
    let dims: Vec<usize> = sens.iter().map(|s| s.hessian.nrows()).collect();
    let acts: Vec<usize> = sens.iter().map(|s| s.active_jacobian.nrows()).collect();
    let n_x: usize = dims.iter().sum();
    let n_act: usize = acts.iter().sum();
    let size = n_x + n_c + n_act;
    let mut k = DMatrix::zeros(size, size);
    let mut rhs = DVector::zeros(size);

    let mut xo = 0;
    let mut co = n_x + n_c;
    let lo = n_x;
    let mut axsum = DVector::zeros(n_c);
    for (i, s) in sens.iter().enumerate() {
        let (n, m) = (dims[i], acts[i]);
        k.view_mut((xo, xo), (n, n)).copy_from(&s.hessian);
        k.view_mut((xo, lo), (n, n_c)).copy_from(&a[i].transpose());
        k.view_mut((lo, xo), (n_c, n)).copy_from(&a[i]);
        if m > 0 {
            k.view_mut((xo, co), (n, m)).copy_from(&s.active_jacobian.transpose());
            k.view_mut((co, xo), (m, n)).copy_from(&s.active_jacobian);
        }
        rhs.rows_mut(xo, n).copy_from(&(-&s.gradient));
        axsum += &a[i] * &x[i];
        xo += n;
        co += m;
    }
    for j in 0..n_c {
        k[(lo + j, lo + j)] = -1.0 / mu;
    }
    rhs.rows_mut(lo, n_c).copy_from(&(-&axsum - lambda / mu));

    let sol = k.clone().full_piv_lu().solve(&rhs).ok_or(Error::SingularKkt)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularKkt);
    }
    let residual_norm = (&k * &sol - &rhs).norm();
    let mut delta_x = Vec::with_capacity(sens.len());
    let mut slack = axsum;
    let mut xo = 0;
    for (i, &n) in dims.iter().enumerate() {
        let dx = sol.rows(xo, n).into_owned();
        slack += &a[i] * &dx;
        delta_x.push(dx);
        xo += n;
    }
    Ok(CoordinationResult {
        lambda_qp: sol.rows(lo, n_c).into_owned(),
        delta_x,
        slack,
        residual_norm,
        inner_iterations: 0,
        ledger_delta: CommLedger::default(),
    })
}

/// `(μ⁻¹I + Σ S_i, μ⁻¹λ + Σ s_i)`.
pub fn assemble_condensed(
    contribs: &[CondensedContribution],
    lambda: &DVector<f64>,
    mu: f64,
) -> (DMatrix<f64>, DVector<f64>) {
    let n_c = lambda.len();
    let mut m = DMatrix::identity(n_c, n_c) / mu;
    let mut b = lambda / mu;
    for c in contribs {
        m += &c.s_mat;
        b += &c.s_vec;
    }
    (m, b)
}

/// Dense Cholesky solve of the condensed system.
pub fn solve_condensed_exact(
    contribs: &[CondensedContribution],
    lambda: &DVector<f64>,
    mu: f64,
) -> Result<DVector<f64>> {
    let (m, b) = assemble_condensed(contribs, lambda, mu);
    let chol = Cholesky::new(m).ok_or(Error::NotPositiveDefinite)?;
    Ok(chol.solve(&b))
}

/// `r_λ = (μ⁻¹I + Σ S_i) λ_cand − μ⁻¹λ − Σ s_i`.
pub fn lambda_residual_vector(
    contribs: &[CondensedContribution],
    candidate: &DVector<f64>,
    lambda: &DVector<f64>,
    mu: f64,
) -> DVector<f64> {
    let mut r = (candidate - lambda) / mu;
    for c in contribs {
        r += &c.s_mat * candidate - &c.s_vec;
    }
    r
}

pub fn lambda_residual(
    contribs: &[CondensedContribution],
    candidate: &DVector<f64>,
    lambda: &DVector<f64>,
    mu: f64,
) -> f64 {
    lambda_residual_vector(contribs, candidate, lambda, mu).norm()
}

/// Back-substitute every agent and package the result.
#[allow(clippy::too_many_arguments)]
pub fn finish_condensed(
    sens: &[AgentSensitivities],
    a: &[DMatrix<f64>],
    x: &[DVector<f64>],
    contribs: &[CondensedContribution],
    lambda: &DVector<f64>,
    mu: f64,
    lambda_qp: DVector<f64>,
    inner_iterations: usize,
    ledger_delta: CommLedger,
) -> CoordinationResult {
    let mut slack = DVector::zeros(lambda.len());
    let delta_x: Vec<DVector<f64>> = sens
        .iter()
        .zip(a)
        .zip(x)
        .map(|((s, ai), xi)| {
            let dx = back_substitute(s, ai, &lambda_qp);
            slack += ai * (xi + &dx);
            dx
        })
        .collect();
    CoordinationResult {
        residual_norm: lambda_residual(contribs, &lambda_qp, lambda, mu),
        lambda_qp,
        delta_x,
        slack,
        inner_iterations,
        ledger_delta,
    }
}

/// `‖m(p)‖₂`: the per-agent stationarity proxies `−g_i − C_iᵀκ − A_iᵀλ`
/// stacked with the consensus residual `−Σ A_i x_i`.
pub fn m_norm(
    sens: &[AgentSensitivities],
    a: &[DMatrix<f64>],
    x: &[DVector<f64>],
    lambda: &DVector<f64>,
) -> f64 {
    let mut sq = 0.0;
    let mut consensus = DVector::zeros(lambda.len());
    for ((s, ai), xi) in sens.iter().zip(a).zip(x) {
        sq += dual_residual(s, ai, lambda).norm_squared();
        consensus += ai * xi;
    }
    libm::sqrt(sq + consensus.norm_squared())
}

/// Termination rule of an iterative inner solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InnerStop {
    /// Exactly this many iterations (fewer only on exact convergence).
    Fixed(usize),
    /// Stop once `‖r‖ ≤ target`, or after `max_iter` iterations.
    Residual { target: f64, max_iter: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BudgetMode {
    FixedIterations(usize),
    ResidualControlled { max_iter: usize },
}

/// How `η^k` is chosen each outer iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EtaSchedule {
    Constant(f64),
    /// `η^k = min(cap, ‖m(p^k)‖)`.
    Adaptive { cap: f64 },
}

impl EtaSchedule {
    pub fn eta(&self, m_norm: f64) -> f64 {
        match *self {
            EtaSchedule::Constant(eta) => eta,
            EtaSchedule::Adaptive { cap } => cap.min(m_norm),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InexactnessBudget {
    pub eta: f64,
    pub mode: BudgetMode,
    pub m_norm: f64,
}

impl InexactnessBudget {
    pub fn new(schedule: EtaSchedule, mode: BudgetMode, m_norm: f64) -> Self {
        Self {
            eta: schedule.eta(m_norm),
            mode,
            m_norm,
        }
    }

    /// `η · ‖m(p)‖`.
    pub fn target(&self) -> f64 {
        self.eta * self.m_norm
    }

    pub fn stop_rule(&self) -> InnerStop {
        match self.mode {
            BudgetMode::FixedIterations(n) => InnerStop::Fixed(n),
            BudgetMode::ResidualControlled { max_iter } => InnerStop::Residual {
                target: self.target(),
                max_iter,
            },
        }
    }
}

/// Whether an inner solve with residual `‖r_λ‖` satisfies the budget. Fixed
/// iteration budgets accept any residual.
pub fn accept_inexact(budget: &InexactnessBudget, residual: f64) -> bool {
    match budget.mode {
        BudgetMode::FixedIterations(_) => true,
        BudgetMode::ResidualControlled { .. } => residual <= budget.target(),
    }
}
