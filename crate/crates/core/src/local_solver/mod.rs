//! ALADIN step 1 for a single agent: the augmented local NLP, active-set
//! detection, sensitivities and the condensed Schur contributions.

mod auglag;
mod problem;

use alloc::boxed::Box;
use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, LocalFailure, Result};
use crate::linalg::{clamp_eigenvalues, flip_eigenvalues, nullspace_basis, select_rows, symmetrize};
use crate::model::{nonzero_rows, AssignmentMap, LocalNlp};

use problem::AugmentedProblem;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalOptions {
    /// KKT residual tolerance of the local solve.
    pub tol: f64,
    pub max_iter: usize,
    /// A constraint is active when `h_j > −eps_act`.
    pub eps_act: f64,
    /// Smallest eigenvalue allowed in the reduced Hessian.
    pub reg_floor: f64,
    pub regularization: Regularization,
}

/// How eigenvalues of the reduced Hessian below `reg_floor` are replaced.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Regularization {
    /// `l ↦ max(l, reg_floor)`.
    #[default]
    Clamp,
    /// `l ↦ max(|l|, reg_floor)`.
    Flip,
}

impl Default for LocalOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 200,
            eps_act: 1e-6,
            reg_floor: 1e-6,
            regularization: Regularization::Clamp,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LocalStepResult {
    pub x: DVector<f64>,
    /// Multipliers of the inequalities `h(x) ≤ 0`.
    pub kappa: DVector<f64>,
    /// Multipliers of the equalities `g(x) = 0`.
    pub nu: DVector<f64>,
    /// Active inequality rows, sorted.
    pub active_set: Vec<usize>,
    /// `f_i(x)` without the augmented-Lagrangian terms.
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct AgentSensitivities {
    /// Lagrangian Hessian, regularized so that `Zᵀ H Z` equals
    /// [`reduced_hessian`](Self::reduced_hessian).
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    /// Active inequality rows followed by all equality rows.
    pub active_jacobian: DMatrix<f64>,
    /// Multipliers matching the rows of `active_jacobian`.
    pub active_multipliers: DVector<f64>,
    pub nullspace: DMatrix<f64>,
    pub reduced_hessian: DMatrix<f64>,
    pub reduced_factor: Cholesky<f64, Dyn>,
    /// Whether eigenvalue clamping changed the reduced Hessian.
    pub regularized: bool,
}

impl AgentSensitivities {
    /// `Zᵀ g`.
    pub fn reduced_gradient(&self) -> DVector<f64> {
        self.nullspace.tr_mul(&self.gradient)
    }
}

#[derive(Debug, Clone)]
pub struct CondensedContribution {
    pub s_mat: DMatrix<f64>,
    pub s_vec: DVector<f64>,
    pub s_tilde: DMatrix<f64>,
    pub s_vec_tilde: DVector<f64>,
    /// `C(i)`, sorted.
    pub assigned_rows: Vec<usize>,
}

fn local_failure(fail: problem::Failure) -> Error {
    Error::LocalSolveFailure(Box::new(LocalFailure {
        agent: None,
        iterations: fail.iterations,
        residual: fail.residual,
        reason: fail.reason,
        last_iterate: fail.x,
    }))
}

/// Solve `min f_i + λᵀA_i x + ρ/2‖x − z‖²_Σ  s.t. h_i ≤ 0, g_i = 0` from `z`.
pub fn solve_local(
    agent: &dyn LocalNlp,
    a: &DMatrix<f64>,
    z: &DVector<f64>,
    lambda: &DVector<f64>,
    rho: f64,
    sigma: &DMatrix<f64>,
    opts: &LocalOptions,
) -> Result<LocalStepResult> {
    solve_local_warm(agent, a, z, lambda, rho, sigma, opts, None)
}

/// As [`solve_local`], first trying a Newton polish from `z` with the active
/// set of a previous result.
#[allow(clippy::too_many_arguments)]
pub fn solve_local_warm(
    agent: &dyn LocalNlp,
    a: &DMatrix<f64>,
    z: &DVector<f64>,
    lambda: &DVector<f64>,
    rho: f64,
    sigma: &DMatrix<f64>,
    opts: &LocalOptions,
    previous: Option<&LocalStepResult>,
) -> Result<LocalStepResult> {
    let n = agent.dim();
    if z.len() != n || a.ncols() != n || lambda.len() != a.nrows() || sigma.shape() != (n, n) {
        return Err(Error::Shape(alloc::format!(
            "local step: dim {}, z {}, A {}x{}, λ {}, Σ {}x{}",
            n,
            z.len(),
            a.nrows(),
            a.ncols(),
            lambda.len(),
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    let prob = AugmentedProblem {
        agent,
        lin: a.tr_mul(lambda),
        z,
        rho,
        sigma,
    };
    let warm = previous.and_then(|prev| {
        let active: Vec<usize> = (0..agent.n_ineq())
            .filter(|&j| prev.active_set.contains(&j) || prev.kappa[j] > 0.0)
            .collect();
        problem::polish(&prob, z, &active, opts.tol)
    });
    let sol = match warm {
        Some(s) => s,
        None => auglag::augmented_lagrangian(
            &prob,
            z,
            previous.map(|p| &p.kappa),
            previous.map(|p| &p.nu),
            opts.tol,
            opts.max_iter,
        )
        .map_err(local_failure)?,
    };
    let mut res = LocalStepResult {
        objective: agent.objective(&sol.x),
        x: sol.x,
        kappa: sol.kappa,
        nu: sol.nu,
        active_set: Vec::new(),
        kkt_residual: sol.residual,
        iterations: sol.iterations,
    };
    res.active_set = detect_active_set(agent, &res, opts.eps_act);
    Ok(res)
}

/// Inequality rows with `h_j(x) > −eps_act`. Equalities are always active and
/// are handled separately by [`build_sensitivities`].
pub fn detect_active_set(agent: &dyn LocalNlp, res: &LocalStepResult, eps_act: f64) -> Vec<usize> {
    let h = agent.ineq(&res.x);
    (0..h.len()).filter(|&j| h[j] > -eps_act).collect()
}

pub fn build_sensitivities(
    agent: &dyn LocalNlp,
    res: &LocalStepResult,
    opts: &LocalOptions,
) -> Result<AgentSensitivities> {
    let x = &res.x;
    let n = x.len();
    let mut w = agent.hessian(x);
    if agent.n_ineq() > 0 {
        w += agent.ineq_hessian(x, &res.kappa);
    }
    if agent.n_eq() > 0 {
        w += agent.eq_hessian(x, &res.nu);
    }
    let w = symmetrize(&w);

    let jh = select_rows(&agent.ineq_jacobian(x), &res.active_set);
    let jg = agent.eq_jacobian(x);
    let (na, ne) = (jh.nrows(), jg.nrows());
    let mut c = DMatrix::zeros(na + ne, n);
    c.view_mut((0, 0), (na, n)).copy_from(&jh);
    c.view_mut((na, 0), (ne, n)).copy_from(&jg);
    let mut mult = DVector::zeros(na + ne);
    for (k, &j) in res.active_set.iter().enumerate() {
        mult[k] = res.kappa[j];
    }
    mult.rows_mut(na, ne).copy_from(&res.nu);

    let z = nullspace_basis(&c, n).map_err(|rank| Error::RankDeficientActiveJacobian {
        agent: 0,
        rank,
        rows: na + ne,
    })?;
    let projected = symmetrize(&(z.transpose() * &w * &z));
    let (reduced, regularized) = match opts.regularization {
        Regularization::Clamp => clamp_eigenvalues(&projected, opts.reg_floor),
        Regularization::Flip => flip_eigenvalues(&projected, opts.reg_floor),
    };
    let hessian = if regularized {
        symmetrize(&(&w + &z * (&reduced - &projected) * z.transpose()))
    } else {
        w
    };
    let reduced_factor =
        Cholesky::new(reduced.clone()).ok_or(Error::SingularReducedHessian { agent: 0 })?;
    Ok(AgentSensitivities {
        hessian,
        gradient: agent.gradient(x),
        active_jacobian: c,
        active_multipliers: mult,
        nullspace: z,
        reduced_hessian: reduced,
        reduced_factor,
        regularized,
    })
}

/// Schur contribution `S_i = Ā H̄⁻¹ Āᵀ`, `s_i = A_i x_i − Ā H̄⁻¹ ḡ` with
/// `Ā = A_i Z`. Only rows in `C(i)` are touched, so all other entries are
/// exactly zero.
pub fn condense(sens: &AgentSensitivities, a: &DMatrix<f64>, x: &DVector<f64>) -> CondensedContribution {
    let n_c = a.nrows();
    let rows = nonzero_rows(a);
    let a_c = select_rows(a, &rows);
    let a_bar = &a_c * &sens.nullspace;
    let l = sens.reduced_factor.l();
    // Y = L⁻¹ Āᵀ, so S = YᵀY is symmetric by construction.
    let y = l
        .solve_lower_triangular(&a_bar.transpose())
        .unwrap_or_else(|| DMatrix::zeros(a_bar.ncols(), a_bar.nrows()));
    let s_cc = y.tr_mul(&y);
    let hg = sens.reduced_factor.solve(&sens.reduced_gradient());
    let s_c = &a_c * x - &a_bar * hg;

    let mut s_mat = DMatrix::zeros(n_c, n_c);
    let mut s_vec = DVector::zeros(n_c);
    for (p, &j) in rows.iter().enumerate() {
        s_vec[j] = s_c[p];
        for (q, &k) in rows.iter().enumerate() {
            s_mat[(j, k)] = s_cc[(p, q)];
        }
    }
    CondensedContribution {
        s_tilde: s_mat.clone(),
        s_vec_tilde: s_vec.clone(),
        s_mat,
        s_vec,
        assigned_rows: rows,
    }
}

/// Spread the `μ⁻¹(I, λ)` terms uniformly over the agents of each row:
/// `S̃_i = S_i + Σ_{j∈C(i)} e_j e_jᵀ / (|R(j)| μ)`, `s̃_i = s_i + λ_j / (|R(j)| μ)`.
pub fn augment_mu(
    contrib: &CondensedContribution,
    mu: f64,
    lambda: &DVector<f64>,
    assignment: &AssignmentMap,
    agent: usize,
) -> CondensedContribution {
    let mut out = contrib.clone();
    out.s_tilde = contrib.s_mat.clone();
    out.s_vec_tilde = contrib.s_vec.clone();
    for &j in assignment.agent_rows(agent) {
        let w = 1.0 / (assignment.row_agents(j).len() as f64 * mu);
        out.s_tilde[(j, j)] += w;
        out.s_vec_tilde[j] += w * lambda[j];
    }
    out
}

/// `Δx_i = Z H̄⁻¹(−Āᵀ λ^QP − ḡ)`.
pub fn back_substitute(sens: &AgentSensitivities, a: &DMatrix<f64>, lambda_qp: &DVector<f64>) -> DVector<f64> {
    let rhs = -(sens.nullspace.tr_mul(&a.tr_mul(lambda_qp))) - sens.reduced_gradient();
    &sens.nullspace * sens.reduced_factor.solve(&rhs)
}

/// Per-agent stationarity proxy `−g_i − C_iᵀκ_act − A_iᵀλ`; at a local
/// solution this equals `ρΣ(x_i − z_i)`.
pub fn dual_residual(sens: &AgentSensitivities, a: &DMatrix<f64>, lambda: &DVector<f64>) -> DVector<f64> {
    -(&sens.gradient) - sens.active_jacobian.tr_mul(&sens.active_multipliers) - a.tr_mul(lambda)
}

#[cfg(test)]
mod tests;
