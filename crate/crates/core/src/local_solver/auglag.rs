//! Augmented-Lagrangian method for one augmented local problem. Each
//! subproblem is minimized by Newton's method with a shifted Hessian and an
//! Armijo line search; once the multipliers settle, an active-set Newton
//! polish recovers full accuracy.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use super::problem::{all_finite, polish, AugmentedProblem, Failure, Solution};
use crate::linalg::{inf_norm, regularized_cholesky, select_rows};

const PENALTY_INIT: f64 = 1e3;
const PENALTY_MAX: f64 = 1e10;

/// `L_A(x) = φ(x) + νᵀg + c/2‖g‖² + 1/(2c) Σ (max(0, κ + c h)² − κ²)`.
struct Merit<'a, 'b> {
    prob: &'a AugmentedProblem<'b>,
    kappa: &'a DVector<f64>,
    nu: &'a DVector<f64>,
    c: f64,
}

impl Merit<'_, '_> {
    fn shifted(&self, x: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let agent = self.prob.agent;
        let kh = (self.kappa + agent.ineq(x) * self.c).map(|v| v.max(0.0));
        let nh = self.nu + agent.eq(x) * self.c;
        (kh, nh)
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        let agent = self.prob.agent;
        let g = agent.eq(x);
        let (kh, _) = self.shifted(x);
        self.prob.value(x)
            + self.nu.dot(&g)
            + 0.5 * self.c * g.norm_squared()
            + (kh.norm_squared() - self.kappa.norm_squared()) / (2.0 * self.c)
    }

    fn grad(&self, x: &DVector<f64>) -> DVector<f64> {
        let agent = self.prob.agent;
        let (kh, nh) = self.shifted(x);
        let mut gr = self.prob.grad(x);
        if kh.len() > 0 {
            gr += agent.ineq_jacobian(x).tr_mul(&kh);
        }
        if nh.len() > 0 {
            gr += agent.eq_jacobian(x).tr_mul(&nh);
        }
        gr
    }

    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let agent = self.prob.agent;
        let (kh, nh) = self.shifted(x);
        let mut w = self.prob.lagrangian_hessian(x, &kh, &nh);
        if nh.len() > 0 {
            let jg = agent.eq_jacobian(x);
            w += jg.tr_mul(&jg) * self.c;
        }
        let act: Vec<usize> = (0..kh.len()).filter(|&j| kh[j] > 0.0).collect();
        if !act.is_empty() {
            let jh = select_rows(&agent.ineq_jacobian(x), &act);
            w += jh.tr_mul(&jh) * self.c;
        }
        w
    }
}

/// Minimizes the merit function to `‖∇L_A‖∞ ≤ omega`, or until the line
/// search makes no further progress. Returns the number of Newton steps taken.
fn minimize_merit(
    merit: &Merit<'_, '_>,
    x: &mut DVector<f64>,
    omega: f64,
    budget: usize,
) -> Option<usize> {
    for it in 0..budget {
        let gr = merit.grad(x);
        if inf_norm(&gr) <= omega {
            return Some(it);
        }
        let (chol, _) = regularized_cholesky(&merit.hessian(x))?;
        let dx = -chol.solve(&gr);
        let slope = gr.dot(&dx);
        if !all_finite(&dx) || slope >= 0.0 {
            return None;
        }
        let f0 = merit.value(x);
        let mut alpha = 1.0;
        loop {
            let xt = &*x + &dx * alpha;
            let ft = merit.value(&xt);
            if ft.is_finite() && ft <= f0 + 1e-4 * alpha * slope {
                *x = xt;
                break;
            }
            alpha *= 0.5;
            if alpha * inf_norm(&dx) < 1e-15 * (1.0 + inf_norm(x)) {
                return Some(it);
            }
        }
    }
    Some(budget)
}

/// `max(‖g‖∞, ‖max(h, −κ/c)‖∞)`.
fn infeasibility(prob: &AugmentedProblem<'_>, x: &DVector<f64>, kappa: &DVector<f64>, c: f64) -> f64 {
    let h = prob.agent.ineq(x);
    let mut v = inf_norm(&prob.agent.eq(x));
    for j in 0..h.len() {
        v = v.max(h[j].max(-kappa[j] / c).abs());
    }
    v
}

pub(crate) fn augmented_lagrangian(
    prob: &AugmentedProblem<'_>,
    x0: &DVector<f64>,
    kappa0: Option<&DVector<f64>>,
    nu0: Option<&DVector<f64>>,
    tol: f64,
    max_iter: usize,
) -> Result<Solution, Failure> {
    let agent = prob.agent;
    let mut x = x0.clone();
    let mut kappa = kappa0
        .filter(|k| k.len() == agent.n_ineq())
        .map(|k| k.map(|v| v.max(0.0)))
        .unwrap_or_else(|| DVector::zeros(agent.n_ineq()));
    let mut nu = nu0
        .filter(|v| v.len() == agent.n_eq())
        .cloned()
        .unwrap_or_else(|| DVector::zeros(agent.n_eq()));
    let mut c = PENALTY_INIT;
    let mut omega = 1e-1_f64;
    let mut prev_viol = f64::INFINITY;
    let mut used = 0;
    let mut residual = prob.kkt_residual(&x, &kappa, &nu);
    let mut last_polish: Option<f64> = None;

    let fail = |x: &DVector<f64>, residual, iterations, reason| Failure {
        x: x.clone(),
        residual,
        iterations,
        reason,
    };

    while used < max_iter {
        if residual <= tol {
            return Ok(Solution {
                x,
                kappa,
                nu,
                residual,
                iterations: used,
            });
        }
        let merit = Merit {
            prob,
            kappa: &kappa,
            nu: &nu,
            c,
        };
        let Some(steps) = minimize_merit(&merit, &mut x, omega.max(0.1 * tol), max_iter - used) else {
            return Err(fail(&x, residual, used, "line search stalled"));
        };
        used += steps;
        if !all_finite(&x) {
            return Err(fail(&x, residual, used, "non-finite iterate"));
        }
        let (kh, nh) = merit.shifted(&x);
        let viol = infeasibility(prob, &x, &kappa, c);
        kappa = kh;
        nu = nh;
        omega = (0.1 * omega).max(0.1 * tol);
        if viol > 0.25 * prev_viol {
            if c >= PENALTY_MAX {
                return Err(fail(&x, residual, used, "penalty limit"));
            }
            c *= 10.0;
        }
        prev_viol = viol;
        residual = prob.kkt_residual(&x, &kappa, &nu);
        if residual < 1e-2 && last_polish.is_none_or(|r| residual < 0.1 * r) {
            last_polish = Some(residual);
            let active: Vec<usize> = (0..agent.n_ineq()).filter(|&j| kappa[j] > 0.0).collect();
            if let Some(mut sol) = polish(prob, &x, &active, tol) {
                sol.iterations += used;
                return Ok(sol);
            }
        }
    }
    Err(fail(&x, residual, used, "iteration limit"))
}
