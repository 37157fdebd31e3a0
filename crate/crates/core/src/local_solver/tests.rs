use super::*;
use crate::linalg::min_eigenvalue;
use alloc::vec;

/// `½xᵀQx + cᵀx` subject to `Gx ≤ b`.
struct Quad {
    q: DMatrix<f64>,
    c: DVector<f64>,
    g: DMatrix<f64>,
    b: DVector<f64>,
}

impl Quad {
    fn unconstrained(q: DMatrix<f64>) -> Self {
        let n = q.nrows();
        Self {
            q,
            c: DVector::zeros(n),
            g: DMatrix::zeros(0, n),
            b: DVector::zeros(0),
        }
    }
}

impl LocalNlp for Quad {
    fn dim(&self) -> usize {
        self.q.nrows()
    }
    fn n_ineq(&self) -> usize {
        self.g.nrows()
    }
    fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.q * x)) + self.c.dot(x)
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.q * x + &self.c
    }
    fn hessian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.q.clone()
    }
    fn ineq(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.g * x - &self.b
    }
    fn ineq_jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.g.clone()
    }
}

/// `¼x⁴ − x²` with `x ≤ ub`.
struct Quartic {
    ub: f64,
}

impl LocalNlp for Quartic {
    fn dim(&self) -> usize {
        1
    }
    fn n_ineq(&self) -> usize {
        1
    }
    fn objective(&self, x: &DVector<f64>) -> f64 {
        0.25 * x[0].powi(4) - x[0] * x[0]
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, x[0].powi(3) - 2.0 * x[0])
    }
    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, 3.0 * x[0] * x[0] - 2.0)
    }
    fn ineq(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, x[0] - self.ub)
    }
    fn ineq_jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, 1.0)
    }
}

fn eye(n: usize) -> DMatrix<f64> {
    DMatrix::identity(n, n)
}

#[test]
fn unconstrained_quadratic_at_origin() {
    let agent = Quad::unconstrained(eye(3));
    let a = DMatrix::zeros(1, 3);
    let res = solve_local(&agent, &a, &DVector::zeros(3), &DVector::zeros(1), 1.0, &eye(3), &LocalOptions::default())
        .unwrap();
    assert!(res.x.norm() < 1e-12);
    assert!(res.active_set.is_empty());
}

#[test]
fn quartic_with_bound_matches_grid_search() {
    let agent = Quartic { ub: 0.5 };
    let a = DMatrix::from_element(1, 1, 1.0);
    let z = DVector::from_element(1, 1.0);
    let res = solve_local(&agent, &a, &z, &DVector::zeros(1), 1.0, &eye(1), &LocalOptions::default()).unwrap();

    let phi = |x: f64| 0.25 * x.powi(4) - x * x + 0.5 * (x - 1.0) * (x - 1.0);
    let (mut best_x, mut best) = (0.0, f64::INFINITY);
    let mut k = 0;
    loop {
        let x = -3.0 + k as f64 * 1e-5;
        if x > 0.5 + 1e-12 {
            break;
        }
        if phi(x) < best {
            best = phi(x);
            best_x = x;
        }
        k += 1;
    }
    assert!((res.x[0] - best_x).abs() <= 1e-5);
    // Stationarity x³ − x − 1 + κ = 0 with κ ≥ 0 and complementarity.
    let x = res.x[0];
    let kappa = res.kappa[0];
    assert!(kappa >= 0.0);
    assert!((x.powi(3) - x - 1.0 + kappa).abs() < 1e-8);
    assert!((kappa * (x - 0.5)).abs() < 1e-9);
    assert_eq!(res.active_set, vec![0]);
    assert!(res.kkt_residual <= 1e-9);
}

#[test]
fn lambda_shift_follows_first_order_sensitivity() {
    let agent = Quartic { ub: 10.0 };
    let a = DMatrix::from_element(1, 1, 1.0);
    let z = DVector::from_element(1, 0.3);
    let opts = LocalOptions::default();
    let (rho, sig) = (5.0, 1.0);
    let sigma = DMatrix::from_element(1, 1, sig);
    let base = solve_local(&agent, &a, &z, &DVector::zeros(1), rho, &sigma, &opts).unwrap();
    let d = 1e-5;
    let shifted = solve_local(&agent, &a, &z, &DVector::from_element(1, d), rho, &sigma, &opts).unwrap();
    let x = base.x[0];
    let predicted = -d / (rho * sig + 3.0 * x * x - 2.0);
    let actual = shifted.x[0] - x;
    assert!(actual < 0.0);
    assert!((actual - predicted).abs() < 1e-3 * predicted.abs());
}

#[test]
fn local_solve_satisfies_kkt_on_random_box_qps() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let n = rng.random_range(2..6);
        let m = rng.random_range(1..5);
        let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let q = &b * b.transpose() + eye(n) * 0.1;
        let agent = Quad {
            q,
            c: DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0)),
            g: DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0)),
            b: DVector::from_fn(m, |_, _| rng.random_range(0.0..0.5)),
        };
        let a = DMatrix::from_fn(2, n, |_, _| rng.random_range(-1.0..1.0));
        let z = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let lam = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
        let res = solve_local(&agent, &a, &z, &lam, 1.0, &eye(n), &LocalOptions::default()).unwrap();
        let h = agent.ineq(&res.x);
        for j in 0..m {
            assert!(h[j] <= 1e-9);
            assert!(res.kappa[j] >= -1e-9);
            assert!((res.kappa[j] * h[j]).abs() <= 1e-9);
        }
        let stat = agent.gradient(&res.x) + a.tr_mul(&lam) + (&res.x - &z) + agent.g.tr_mul(&res.kappa);
        assert!(stat.amax() <= 1e-9);
        // Under strict complementarity the active set is the support of κ.
        for j in 0..m {
            if res.kappa[j] > 1e-6 {
                assert!(res.active_set.contains(&j));
            }
            if h[j] < -1e-5 {
                assert!(!res.active_set.contains(&j));
            }
        }
    }
}

#[test]
fn warm_start_reproduces_cold_solution() {
    let agent = Quartic { ub: 0.5 };
    let a = DMatrix::from_element(1, 1, 1.0);
    let z = DVector::from_element(1, 1.0);
    let opts = LocalOptions::default();
    let cold = solve_local(&agent, &a, &z, &DVector::zeros(1), 1.0, &eye(1), &opts).unwrap();
    let warm = solve_local_warm(&agent, &a, &z, &DVector::zeros(1), 1.0, &eye(1), &opts, Some(&cold)).unwrap();
    assert!((cold.x[0] - warm.x[0]).abs() < 1e-12);
}

fn result_at(x: DVector<f64>, n_ineq: usize) -> LocalStepResult {
    LocalStepResult {
        x,
        kappa: DVector::zeros(n_ineq),
        nu: DVector::zeros(0),
        active_set: Vec::new(),
        objective: 0.0,
        kkt_residual: 0.0,
        iterations: 0,
    }
}

#[test]
fn active_set_detection() {
    let agent = Quartic { ub: 0.5 };
    assert!(detect_active_set(&agent, &result_at(DVector::from_element(1, 0.0), 1), 1e-6).is_empty());
    assert_eq!(detect_active_set(&agent, &result_at(DVector::from_element(1, 0.5), 1), 1e-6), vec![0]);
    // h = −eps_act exactly is inactive; 0.25 − 0.5 = −0.25 is exact in binary.
    assert!(detect_active_set(&agent, &result_at(DVector::from_element(1, 0.25), 1), 0.25).is_empty());
}

#[test]
fn sensitivities_of_convex_quadratic() {
    let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
    let agent = Quad::unconstrained(q.clone());
    let sens = build_sensitivities(&agent, &result_at(DVector::zeros(2), 0), &LocalOptions::default()).unwrap();
    assert_eq!(sens.hessian, q);
    assert_eq!(sens.nullspace, eye(2));
    assert!(!sens.regularized);
}

#[test]
fn indefinite_hessian_is_clamped() {
    let q = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
    let agent = Quad::unconstrained(q);
    let opts = LocalOptions::default();
    let sens = build_sensitivities(&agent, &result_at(DVector::zeros(2), 0), &opts).unwrap();
    let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, opts.reg_floor]));
    assert!((&sens.hessian - &expected).amax() < 1e-14);
    assert!(sens.regularized);
}

#[test]
fn nullspace_of_active_diagonal_constraint() {
    let s = core::f64::consts::FRAC_1_SQRT_2;
    let agent = Quad {
        q: eye(2),
        c: DVector::zeros(2),
        g: DMatrix::from_row_slice(1, 2, &[s, s]),
        b: DVector::zeros(1),
    };
    let mut res = result_at(DVector::zeros(2), 1);
    res.active_set = vec![0];
    let sens = build_sensitivities(&agent, &res, &LocalOptions::default()).unwrap();
    assert_eq!(sens.nullspace.ncols(), 1);
    assert!((&sens.active_jacobian * &sens.nullspace).amax() < 1e-10);
    assert!((sens.nullspace[0] + sens.nullspace[1]).abs() < 1e-12);
    assert!((sens.nullspace.norm() - 1.0).abs() < 1e-12);
}

#[test]
fn rank_deficient_active_jacobian_is_reported() {
    let agent = Quad {
        q: eye(2),
        c: DVector::zeros(2),
        g: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]),
        b: DVector::zeros(2),
    };
    let mut res = result_at(DVector::zeros(2), 2);
    res.active_set = vec![0, 1];
    let err = build_sensitivities(&agent, &res, &LocalOptions::default()).unwrap_err();
    assert!(matches!(err, Error::RankDeficientActiveJacobian { rank: 1, rows: 2, .. }));
}

#[test]
fn identity_condensing() {
    let agent = Quad::unconstrained(eye(3));
    let sens = build_sensitivities(&agent, &result_at(DVector::zeros(3), 0), &LocalOptions::default()).unwrap();
    let c = condense(&sens, &eye(3), &DVector::zeros(3));
    assert!((&c.s_mat - eye(3)).amax() < 1e-15);
    assert_eq!(c.s_vec, DVector::zeros(3));
    assert_eq!(c.assigned_rows, vec![0, 1, 2]);
}

#[test]
fn condensing_is_zero_outside_assigned_rows() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let n = 10;
    let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let agent = Quad {
        q: &b * b.transpose() + eye(n),
        c: DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)),
        g: DMatrix::zeros(0, n),
        b: DVector::zeros(0),
    };
    let mut a = DMatrix::zeros(32, n);
    for j in 4..12 {
        for k in 0..n {
            a[(j, k)] = rng.random_range(-1.0..1.0);
        }
    }
    let x = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let sens = build_sensitivities(&agent, &result_at(x.clone(), 0), &LocalOptions::default()).unwrap();
    let c = condense(&sens, &a, &x);
    assert_eq!(c.assigned_rows, (4..12).collect::<Vec<_>>());
    for j in 0..32 {
        let inside = (4..12).contains(&j);
        if !inside {
            assert_eq!(c.s_vec[j], 0.0);
        }
        for k in 0..32 {
            if !inside || !(4..12).contains(&k) {
                assert_eq!(c.s_mat[(j, k)], 0.0);
            }
            assert_eq!(c.s_mat[(j, k)], c.s_mat[(k, j)]);
        }
    }
    assert!(min_eigenvalue(&c.s_mat) >= -1e-10);
}

#[test]
fn mu_augmentation_single_agent() {
    let assignment = AssignmentMap::from_rows(vec![vec![0]], 1).unwrap();
    let c = CondensedContribution {
        s_mat: DMatrix::from_element(1, 1, 2.0),
        s_vec: DVector::from_element(1, 1.0),
        s_tilde: DMatrix::zeros(1, 1),
        s_vec_tilde: DVector::zeros(1),
        assigned_rows: vec![0],
    };
    let aug = augment_mu(&c, 10.0, &DVector::from_element(1, 3.0), &assignment, 0);
    assert!((aug.s_tilde[(0, 0)] - 2.1).abs() < 1e-15);
    assert!((aug.s_vec_tilde[0] - 1.3).abs() < 1e-15);
}

#[test]
fn back_substitution_is_zero_without_forcing_and_stays_in_nullspace() {
    let agent = Quad {
        q: eye(3),
        c: DVector::from_vec(vec![1.0, -2.0, 0.5]),
        g: DMatrix::from_row_slice(1, 3, &[1.0, 2.0, -1.0]),
        b: DVector::zeros(1),
    };
    let mut res = result_at(DVector::zeros(3), 1);
    res.active_set = vec![0];
    let sens = build_sensitivities(&agent, &res, &LocalOptions::default()).unwrap();
    let a = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
    let dx = back_substitute(&sens, &a, &DVector::from_vec(vec![0.7, -0.2]));
    assert!((&sens.active_jacobian * &dx).amax() <= 1e-10);

    let free = Quad::unconstrained(eye(3));
    let sens = build_sensitivities(&free, &result_at(DVector::zeros(3), 0), &LocalOptions::default()).unwrap();
    assert_eq!(back_substitute(&sens, &a, &DVector::zeros(2)), DVector::zeros(3));
}
