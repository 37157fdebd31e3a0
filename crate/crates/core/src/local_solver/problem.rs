//! The augmented local problem and an active-set Newton polish.


use nalgebra::{DMatrix, DVector};

use crate::linalg::{inf_norm, nullspace_basis, select_rows, solve_saddle};
use crate::model::LocalNlp;

/// `min f(x) + cᵀx + ρ/2 (x − z)ᵀ Σ (x − z)  s.t. h(x) ≤ 0, g(x) = 0`, where
/// `c = A_iᵀ λ`.
pub(crate) struct AugmentedProblem<'a> {
    pub agent: &'a dyn LocalNlp,
    pub lin: DVector<f64>,
    pub z: &'a DVector<f64>,
    pub rho: f64,
    pub sigma: &'a DMatrix<f64>,
}

impl AugmentedProblem<'_> {
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        let d = x - self.z;
        self.agent.objective(x) + self.lin.dot(x) + 0.5 * self.rho * d.dot(&(self.sigma * &d))
    }

    pub fn grad(&self, x: &DVector<f64>) -> DVector<f64> {
        self.agent.gradient(x) + &self.lin + self.sigma * (x - self.z) * self.rho
    }

    pub fn lagrangian_hessian(&self, x: &DVector<f64>, kappa: &DVector<f64>, nu: &DVector<f64>) -> DMatrix<f64> {
        let mut w = self.agent.hessian(x) + self.sigma * self.rho;
        if kappa.len() > 0 {
            w += self.agent.ineq_hessian(x, kappa);
        }
        if nu.len() > 0 {
            w += self.agent.eq_hessian(x, nu);
        }
        w
    }

    /// `max(‖∇L‖∞, ‖h₊‖∞, ‖g‖∞, ‖κ∘h‖∞, ‖(−κ)₊‖∞)`.
    pub fn kkt_residual(&self, x: &DVector<f64>, kappa: &DVector<f64>, nu: &DVector<f64>) -> f64 {
        let mut stat = self.grad(x);
        let h = self.agent.ineq(x);
        if h.len() > 0 {
            stat += self.agent.ineq_jacobian(x).transpose() * kappa;
        }
        let g = self.agent.eq(x);
        if g.len() > 0 {
            stat += self.agent.eq_jacobian(x).transpose() * nu;
        }
        let mut r = inf_norm(&stat).max(inf_norm(&g));
        for j in 0..h.len() {
            r = r
                .max(h[j].max(0.0))
                .max((kappa[j] * h[j]).abs())
                .max((-kappa[j]).max(0.0));
        }
        r
    }
}

pub(crate) struct Solution {
    pub x: DVector<f64>,
    pub kappa: DVector<f64>,
    pub nu: DVector<f64>,
    pub residual: f64,
    pub iterations: usize,
}

pub(crate) struct Failure {
    pub x: DVector<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub reason: &'static str,
}

pub(crate) fn all_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|a| a.is_finite())
}

/// Full KKT solve by LU, used when `W` is not positive definite.
fn solve_kkt_lu(
    w: &DMatrix<f64>,
    j: &DMatrix<f64>,
    r1: &DVector<f64>,
    r2: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = w.nrows();
    let m = j.nrows();
    let mut k = DMatrix::zeros(n + m, n + m);
    k.view_mut((0, 0), (n, n)).copy_from(w);
    k.view_mut((n, 0), (m, n)).copy_from(j);
    k.view_mut((0, n), (n, m)).copy_from(&j.transpose());
    let mut rhs = DVector::zeros(n + m);
    rhs.rows_mut(0, n).copy_from(r1);
    rhs.rows_mut(n, m).copy_from(r2);
    let sol = k.full_piv_lu().solve(&rhs)?;
    if !all_finite(&sol) {
        return None;
    }
    Some((sol.rows(0, n).into_owned(), sol.rows(n, m).into_owned()))
}

/// Newton's method on the KKT conditions with `active` inequalities treated
/// as equalities. Succeeds only at a strict local minimizer with nonnegative
/// multipliers and residual at most `tol`.
pub(crate) fn polish(
    prob: &AugmentedProblem<'_>,
    x0: &DVector<f64>,
    active: &[usize],
    tol: f64,
) -> Option<Solution> {
    let agent = prob.agent;
    let n_in = agent.n_ineq();
    let n_eq = agent.n_eq();
    let n_a = active.len();
    let mut x = x0.clone();
    let mut kappa = DVector::zeros(n_in);
    let mut nu = DVector::zeros(n_eq);
    let mut best = f64::INFINITY;
    for it in 0..10 {
        let jh = agent.ineq_jacobian(&x);
        let mut j = DMatrix::zeros(n_a + n_eq, x.len());
        j.view_mut((0, 0), (n_a, x.len())).copy_from(&select_rows(&jh, active));
        j.view_mut((n_a, 0), (n_eq, x.len())).copy_from(&agent.eq_jacobian(&x));
        let h = agent.ineq(&x);
        let mut c = DVector::zeros(n_a + n_eq);
        for (k, &a) in active.iter().enumerate() {
            c[k] = h[a];
        }
        c.rows_mut(n_a, n_eq).copy_from(&agent.eq(&x));
        let w = prob.lagrangian_hessian(&x, &kappa, &nu);
        let r1 = -prob.grad(&x);
        let r2 = -c;
        let (dx, y) = match solve_saddle(&w, &j, &r1, &r2) {
            Some(s) if s.shift == 0.0 => (s.dx, s.dy),
            _ => solve_kkt_lu(&w, &j, &r1, &r2)?,
        };
        x += dx;
        if !all_finite(&x) {
            return None;
        }
        kappa.fill(0.0);
        for (k, &a) in active.iter().enumerate() {
            kappa[a] = y[k];
        }
        nu.copy_from(&y.rows(n_a, n_eq));
        if active.iter().any(|&a| kappa[a] < -tol) {
            return None;
        }
        for &a in active {
            kappa[a] = kappa[a].max(0.0);
        }
        let res = prob.kkt_residual(&x, &kappa, &nu);
        if res <= tol {
            if !second_order_ok(prob, &x, &kappa, &nu, active) {
                return None;
            }
            return Some(Solution {
                x,
                kappa,
                nu,
                residual: res,
                iterations: it + 1,
            });
        }
        // Give up once Newton stops making quadratic progress.
        if it >= 2 && res > 0.5 * best {
            return None;
        }
        best = best.min(res);
    }
    None
}

/// Reduced Hessian of the Lagrangian on the active nullspace is positive
/// definite.
fn second_order_ok(
    prob: &AugmentedProblem<'_>,
    x: &DVector<f64>,
    kappa: &DVector<f64>,
    nu: &DVector<f64>,
    active: &[usize],
) -> bool {
    let agent = prob.agent;
    let n = x.len();
    let jh = select_rows(&agent.ineq_jacobian(x), active);
    let jg = agent.eq_jacobian(x);
    let mut c = DMatrix::zeros(jh.nrows() + jg.nrows(), n);
    c.view_mut((0, 0), (jh.nrows(), n)).copy_from(&jh);
    c.view_mut((jh.nrows(), 0), (jg.nrows(), n)).copy_from(&jg);
    let Ok(z) = nullspace_basis(&c, n) else {
        return false;
    };
    if z.ncols() == 0 {
        return true;
    }
    let w = prob.lagrangian_hessian(x, kappa, nu);
    let reduced = z.transpose() * w * &z;
    nalgebra::Cholesky::new(crate::linalg::symmetrize(&reduced)).is_some()
}
