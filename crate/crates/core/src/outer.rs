//! The ALADIN outer loop.
//!
//! Each iteration solves the augmented local problems from `z`, stops if
//! `max(‖Σ A_i x_i‖∞, ‖x − z‖∞) ≤ tol_outer`, and otherwise builds
//! sensitivities, solves the coordination step with the selected method and
//! updates `z ← x + Δx`, `λ ← λ^QP`.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::coordination::{
    assemble_condensed, finish_condensed, m_norm, solve_condensed_exact, solve_full_qp, BudgetMode,
    CoordinationResult, EtaSchedule, InexactnessBudget,
};
use crate::dadmm::{admm_init, admm_iterate};
use crate::dcg::{cg_iterate, cg_prepare};
use crate::error::{Error, Result};
use crate::linalg::{inf_norm, min_eigenvalue};
use crate::local_solver::{
    augment_mu, build_sensitivities, condense, solve_local_warm, AgentSensitivities, CondensedContribution,
    LocalOptions, LocalStepResult,
};
use crate::model::{build_assignment, AssignmentMap, PartitionedNlp};
use crate::netsim::{CommLedger, Endpoint, Message, Network, Tag, TraceRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Full coordination QP at a central coordinator.
    Standard,
    /// Condensed system solved exactly at a central coordinator.
    CondensedExact,
    /// Condensed system solved by decentralized conjugate gradient.
    BilevelCg,
    /// Condensed system solved by decentralized consensus ADMM.
    BilevelAdmm,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Standard,
        Variant::CondensedExact,
        Variant::BilevelCg,
        Variant::BilevelAdmm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Standard => "standard",
            Variant::CondensedExact => "condensed-exact",
            Variant::BilevelCg => "bilevel-cg",
            Variant::BilevelAdmm => "bilevel-admm",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> core::result::Result<Self, String> {
        match s {
            "standard" => Ok(Variant::Standard),
            "condensed" | "condensed-exact" => Ok(Variant::CondensedExact),
            "cg" | "bilevel-cg" | "aladin-cg" => Ok(Variant::BilevelCg),
            "admm" | "bilevel-admm" | "aladin-admm" => Ok(Variant::BilevelAdmm),
            other => Err(alloc::format!(
                "unknown variant '{other}' (expected standard, condensed-exact, bilevel-cg or bilevel-admm)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OuterParams {
    pub rho: f64,
    pub mu: f64,
    /// `Σ_i = sigma[i]·I`; missing entries default to 1.
    pub sigma: Vec<f64>,
    pub tol_outer: f64,
    pub max_outer: usize,
    /// `μ ← min(mu_max, mu_growth·μ)` after every coordination step.
    pub mu_growth: f64,
    pub mu_max: f64,
    /// When set, the reduced-Hessian floor of iteration `k` is the outer
    /// residual `r_k` clamped to `[local.reg_floor, cap]`.
    pub adaptive_floor_cap: Option<f64>,
    pub local: LocalOptions,
}

impl Default for OuterParams {
    fn default() -> Self {
        Self {
            rho: 1e2,
            mu: 1e6,
            sigma: Vec::new(),
            tol_outer: 1e-6,
            max_outer: 50,
            mu_growth: 1.0,
            mu_max: f64::INFINITY,
            adaptive_floor_cap: None,
            local: LocalOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerParams {
    pub cg_iterations: usize,
    pub admm_iterations: usize,
    /// Stop inner iterations once `‖r_λ‖ ≤ η·‖m(p)‖` instead of running a
    /// fixed count.
    pub residual_controlled: bool,
    pub max_inner: usize,
    pub eta: EtaSchedule,
    pub rho_admm: f64,
}

impl Default for InnerParams {
    fn default() -> Self {
        Self {
            cg_iterations: 80,
            admm_iterations: 400,
            residual_controlled: false,
            max_inner: 10_000,
            eta: EtaSchedule::Constant(0.1),
            rho_admm: 2e-2,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    pub record_trace: bool,
    /// Record eigenvalue diagnostics of the condensed system each iteration.
    pub diagnostics: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// `‖Σ A_i x_i‖∞` after the local step.
    pub consensus_residual: f64,
    /// `max_i ‖x_i − z_i‖∞` after the local step.
    pub step_residual: f64,
    /// `‖r_λ‖₂` of the accepted multiplier (0 when no coordination ran).
    pub lambda_residual: f64,
    pub m_norm: f64,
    pub eta: f64,
    pub inner_iterations: usize,
    pub ledger_delta: CommLedger,
    /// `Σ f_i(x_i)`.
    pub objective: f64,
    pub mu: f64,
    /// Iterate after this iteration's update.
    pub z: Vec<DVector<f64>>,
    pub lambda: DVector<f64>,
    /// Smallest eigenvalue of `Σ S̃_i` and of any `S_i`, with diagnostics on.
    pub min_eig_condensed: Option<f64>,
    pub min_eig_agent: Option<f64>,
}

impl IterationRecord {
    /// `max(consensus, step)`, the quantity compared with `tol_outer`.
    pub fn outer_residual(&self) -> f64 {
        self.consensus_residual.max(self.step_residual)
    }
}

#[derive(Debug)]
pub struct RunReport {
    pub variant: Variant,
    pub converged: bool,
    pub records: Vec<IterationRecord>,
    /// Local solutions of the last local step.
    pub x: Vec<DVector<f64>>,
    pub z: Vec<DVector<f64>>,
    pub lambda: DVector<f64>,
    pub ledger: CommLedger,
    pub trace: Vec<TraceRecord>,
    /// Set when the run stopped on an error rather than convergence or the
    /// iteration cap.
    pub failure: Option<Error>,
}

impl RunReport {
    pub fn total_inner_iterations(&self) -> usize {
        self.records.iter().map(|r| r.inner_iterations).sum()
    }

    pub fn outer_iterations(&self) -> usize {
        self.records.len()
    }
}

fn sigma_matrix(params: &OuterParams, i: usize, n: usize) -> DMatrix<f64> {
    DMatrix::identity(n, n) * params.sigma.get(i).copied().unwrap_or(1.0)
}

/// Packed upper triangle of a symmetric matrix.
fn packed_upper(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for r in 0..n {
        for c in r..n {
            out.push(m[(r, c)]);
        }
    }
    out
}

fn agent_message(i: usize, tag: Tag, payload: Vec<f64>) -> Message {
    Message {
        from: Endpoint::Agent(i),
        to: Endpoint::Coordinator,
        tag,
        payload,
    }
}

/// Standard variant: every agent ships its local KKT block, gradient and
/// consensus contribution; the coordinator returns `λ^QP` and `Δx_i`.
fn coordinate_standard(
    network: &mut Network,
    nlp: &PartitionedNlp,
    sens: &[AgentSensitivities],
    x: &[DVector<f64>],
    lambda: &DVector<f64>,
    mu: f64,
    assignment: &AssignmentMap,
) -> Result<CoordinationResult> {
    let mut outbox = Vec::new();
    for (i, s) in sens.iter().enumerate() {
        let n = s.hessian.nrows();
        let m = s.active_jacobian.nrows();
        let mut kkt = DMatrix::zeros(n + m, n + m);
        kkt.view_mut((0, 0), (n, n)).copy_from(&s.hessian);
        kkt.view_mut((0, n), (n, m)).copy_from(&s.active_jacobian.transpose());
        outbox.push(agent_message(i, Tag::Forward, packed_upper(&kkt)));
        let ax = nlp.coupling(i) * &x[i];
        let mut aux: Vec<f64> = s.gradient.iter().copied().collect();
        aux.extend(assignment.agent_rows(i).iter().map(|&j| ax[j]));
        outbox.push(agent_message(i, Tag::Aux, aux));
    }
    network.round_exchange(outbox)?;
    let res = solve_full_qp(sens, nlp.couplings(), x, lambda, mu)?;
    let back = res
        .delta_x
        .iter()
        .enumerate()
        .map(|(i, dx)| Message {
            from: Endpoint::Coordinator,
            to: Endpoint::Agent(i),
            tag: Tag::Backward,
            payload: dx.iter().copied().collect(),
        })
        .collect();
    network.round_exchange(back)?;
    Ok(res)
}

/// Condensed variant: each agent sends, per assigned row `j`, the segment
/// `S_i[j, j..]` plus `s_i[j]`; the coordinator reassembles and solves.
fn coordinate_condensed(
    network: &mut Network,
    contribs: &[CondensedContribution],
    lambda: &DVector<f64>,
    mu: f64,
) -> Result<DVector<f64>> {
    let n_c = lambda.len();
    let mut outbox = Vec::new();
    for (i, c) in contribs.iter().enumerate() {
        let mut fwd = Vec::new();
        for &j in &c.assigned_rows {
            fwd.extend((j..n_c).map(|k| c.s_mat[(j, k)]));
        }
        if !fwd.is_empty() {
            outbox.push(agent_message(i, Tag::Forward, fwd));
            outbox.push(agent_message(i, Tag::Aux, c.assigned_rows.iter().map(|&j| c.s_vec[j]).collect()));
        }
    }
    let inbox = network.round_exchange(outbox)?;
    let mut received: Vec<CondensedContribution> = contribs
        .iter()
        .map(|c| CondensedContribution {
            s_mat: DMatrix::zeros(n_c, n_c),
            s_vec: DVector::zeros(n_c),
            s_tilde: DMatrix::zeros(0, 0),
            s_vec_tilde: DVector::zeros(0),
            assigned_rows: c.assigned_rows.clone(),
        })
        .collect();
    for m in inbox.to(Endpoint::Coordinator) {
        let Endpoint::Agent(i) = m.from else { continue };
        let rows = received[i].assigned_rows.clone();
        match m.tag {
            Tag::Forward => {
                let mut pos = 0;
                for &j in &rows {
                    for k in j..n_c {
                        received[i].s_mat[(j, k)] = m.payload[pos];
                        received[i].s_mat[(k, j)] = m.payload[pos];
                        pos += 1;
                    }
                }
            }
            Tag::Aux => {
                for (p, &j) in rows.iter().enumerate() {
                    received[i].s_vec[j] = m.payload[p];
                }
            }
            _ => {}
        }
    }
    solve_condensed_exact(&received, lambda, mu)
}

/// Run ALADIN on a problem with the given coordination variant.
pub fn run_aladin(
    nlp: &PartitionedNlp,
    variant: Variant,
    outer: &OuterParams,
    inner: &InnerParams,
    options: &RunOptions,
) -> Result<RunReport> {
    let assignment = build_assignment(nlp)?;
    let n = nlp.n_agents();
    let n_c = nlp.n_c();
    let mut network = Network::new(n);
    if !options.record_trace {
        network = network.without_trace();
    }
    let sigmas: Vec<DMatrix<f64>> = (0..n).map(|i| sigma_matrix(outer, i, nlp.agent(i).dim())).collect();

    let mut z: Vec<DVector<f64>> = nlp.initial_guess().to_vec();
    let mut lambda = DVector::zeros(n_c);
    let mut mu = outer.mu;
    let mut previous: Vec<Option<LocalStepResult>> = vec![None; n];
    let mut records = Vec::new();
    let mut x: Vec<DVector<f64>> = z.clone();
    let mut converged = false;
    let mut failure = None;

    for k in 0..outer.max_outer {
        let start_ledger = network.ledger();

        let mut locals = Vec::with_capacity(n);
        for i in 0..n {
            let res = solve_local_warm(
                nlp.agent(i),
                nlp.coupling(i),
                &z[i],
                &lambda,
                outer.rho,
                &sigmas[i],
                &outer.local,
                previous[i].as_ref(),
            );
            match res {
                Ok(r) => locals.push(r),
                Err(e) => {
                    failure = Some(e.for_agent(i));
                    break;
                }
            }
        }
        if failure.is_some() {
            break;
        }
        x = locals.iter().map(|r| r.x.clone()).collect();
        let consensus_residual = inf_norm(&nlp.consensus_residual(&x));
        let step_residual = x
            .iter()
            .zip(&z)
            .map(|(xi, zi)| inf_norm(&(xi - zi)))
            .fold(0.0, f64::max);
        let objective = nlp.total_objective(&x);
        let mut record = IterationRecord {
            iteration: k,
            consensus_residual,
            step_residual,
            lambda_residual: 0.0,
            m_norm: 0.0,
            eta: 0.0,
            inner_iterations: 0,
            ledger_delta: CommLedger::default(),
            objective,
            mu,
            z: z.clone(),
            lambda: lambda.clone(),
            min_eig_condensed: None,
            min_eig_agent: None,
        };
        if consensus_residual.max(step_residual) <= outer.tol_outer {
            converged = true;
            records.push(record);
            break;
        }

        let mut local_opts = outer.local;
        if let Some(cap) = outer.adaptive_floor_cap {
            let r = consensus_residual.max(step_residual);
            local_opts.reg_floor = r.clamp(outer.local.reg_floor, cap.max(outer.local.reg_floor));
        }
        let step = (|| -> Result<(CoordinationResult, f64, f64, Option<(f64, f64)>)> {
            let mut sens = Vec::with_capacity(n);
            for (i, r) in locals.iter().enumerate() {
                sens.push(build_sensitivities(nlp.agent(i), r, &local_opts).map_err(|e| e.for_agent(i))?);
            }
            let mnorm = m_norm(&sens, nlp.couplings(), &x, &lambda);
            let mode = if inner.residual_controlled {
                BudgetMode::ResidualControlled {
                    max_iter: inner.max_inner,
                }
            } else {
                BudgetMode::FixedIterations(match variant {
                    Variant::BilevelAdmm => inner.admm_iterations,
                    _ => inner.cg_iterations,
                })
            };
            let budget = InexactnessBudget::new(inner.eta, mode, mnorm);

            if variant == Variant::Standard {
                let res = coordinate_standard(&mut network, nlp, &sens, &x, &lambda, mu, &assignment)?;
                network.broadcast(res.lambda_qp.as_slice(), Tag::Backward)?;
                return Ok((res, mnorm, 0.0, None));
            }

            let contribs: Vec<CondensedContribution> = sens
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let c = condense(s, nlp.coupling(i), &x[i]);
                    augment_mu(&c, mu, &lambda, &assignment, i)
                })
                .collect();
            let diag = options.diagnostics.then(|| {
                let mut total = DMatrix::zeros(n_c, n_c);
                let mut agent_min = f64::INFINITY;
                for c in &contribs {
                    total += &c.s_tilde;
                    agent_min = agent_min.min(min_eigenvalue(&c.s_mat));
                }
                (min_eigenvalue(&total), agent_min)
            });

            let (lambda_qp, iterations) = match variant {
                Variant::CondensedExact => (coordinate_condensed(&mut network, &contribs, &lambda, mu)?, 0),
                Variant::BilevelCg => {
                    let mut states = cg_prepare(&contribs, &assignment, &mut network)?;
                    let out = cg_iterate(&mut states, &assignment, &mut network, &lambda, budget.stop_rule(), false)?;
                    (out.lambda, out.iterations)
                }
                Variant::BilevelAdmm => {
                    let mut states = admm_init(&contribs, &assignment, inner.rho_admm, &lambda)?;
                    let out = admm_iterate(
                        &mut states,
                        &assignment,
                        &mut network,
                        inner.rho_admm,
                        budget.stop_rule(),
                        false,
                    )?;
                    (out.lambda, out.iterations)
                }
                Variant::Standard => unreachable!(),
            };
            network.broadcast(lambda_qp.as_slice(), Tag::Backward)?;
            let res = finish_condensed(
                &sens,
                nlp.couplings(),
                &x,
                &contribs,
                &lambda,
                mu,
                lambda_qp,
                iterations,
                CommLedger::default(),
            );
            Ok((res, mnorm, budget.eta, diag))
        })();

        let (mut res, mnorm, eta, diag) = match step {
            Ok(v) => v,
            Err(e) => {
                records.push(record);
                failure = Some(e);
                break;
            }
        };
        res.ledger_delta = network.ledger() - start_ledger;
        if variant == Variant::Standard {
            // Report the condensed residual for comparability.
            let sens: Vec<AgentSensitivities> = locals
                .iter()
                .enumerate()
                .filter_map(|(i, r)| build_sensitivities(nlp.agent(i), r, &local_opts).ok())
                .collect();
            if sens.len() == n {
                let contribs: Vec<CondensedContribution> = sens
                    .iter()
                    .enumerate()
                    .map(|(i, s)| condense(s, nlp.coupling(i), &x[i]))
                    .collect();
                let (m, b) = assemble_condensed(&contribs, &lambda, mu);
                res.residual_norm = (m * &res.lambda_qp - b).norm();
            }
        }

        for i in 0..n {
            z[i] = &x[i] + &res.delta_x[i];
        }
        lambda = res.lambda_qp.clone();
        previous = locals.into_iter().map(Some).collect();

        record.lambda_residual = res.residual_norm;
        record.m_norm = mnorm;
        record.eta = eta;
        record.inner_iterations = res.inner_iterations;
        record.ledger_delta = res.ledger_delta;
        record.z = z.clone();
        record.lambda = lambda.clone();
        if let Some((total, agent)) = diag {
            record.min_eig_condensed = Some(total);
            record.min_eig_agent = Some(agent);
        }
        records.push(record);
        mu = (mu * outer.mu_growth).min(outer.mu_max);
    }

    Ok(RunReport {
        variant,
        converged,
        records,
        x,
        z,
        lambda,
        ledger: network.ledger(),
        trace: network.trace().to_vec(),
        failure,
    })
}
