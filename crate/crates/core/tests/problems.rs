use aladin_core::model::{build_assignment, validate_consistency, LocalNlp, ValidationOptions};
use aladin_core::problems::*;
use aladin_core::{DVector, Error};
use proptest::prelude::*;

#[test]
fn quartic_objective_values() {
    let cfg = QuarticConfig::default();
    let [a, b] = cfg.agents();
    let at = |x: f64| DVector::from_element(1, x);
    // ¼(0 − 1)⁴ + 0 and ¼(0 + 1)⁴ + 0.
    assert_eq!(a.objective(&at(0.0)), 0.25);
    assert_eq!(b.objective(&at(0.0)), 0.25);
    // ¼(2 − 1)⁴ − 0.5·4 = −1.75.
    assert_eq!(a.objective(&at(2.0)), -1.75);
    assert_eq!(cfg.consensus_objective(0.0), 0.5);
    assert_eq!(a.ineq(&at(3.5)).as_slice(), &[-6.5, 0.5]);
    let nlp = make_quartic_toy(&cfg);
    assert_eq!(nlp.dims(), vec![1, 1]);
    assert_eq!(nlp.initial_guess()[0][0], 2.0);
}

#[test]
fn robot_dimensions() {
    let long = make_robot_ocp(&RobotOcpConfig::long_horizon()).unwrap();
    assert_eq!(long.dims(), vec![700, 500]);
    assert_eq!(long.n_c(), 200);
    assert_eq!(long.agent(0).n_ineq(), 100);
    assert_eq!(long.agent(1).n_ineq(), 0);
    assert_eq!(long.agent(0).n_eq(), 302);
    let desk = make_robot_ocp(&RobotOcpConfig::desk()).unwrap();
    assert_eq!(desk.dims(), vec![140, 100]);
    assert_eq!(desk.n_c(), 40);
    assert!(build_assignment(&desk).unwrap().is_two_assigned());
}

#[test]
fn robot_config_validation() {
    let bad = [
        RobotOcpConfig {
            dt: 0.0,
            ..RobotOcpConfig::desk()
        },
        RobotOcpConfig {
            horizon: 2.05,
            ..RobotOcpConfig::desk()
        },
        RobotOcpConfig {
            min_distance: -1.0,
            ..RobotOcpConfig::desk()
        },
        RobotOcpConfig {
            min_distance: 30.0,
            ..RobotOcpConfig::desk()
        },
        RobotOcpConfig {
            r: [1.0, 0.0],
            ..RobotOcpConfig::desk()
        },
    ];
    for cfg in bad {
        assert!(matches!(make_robot_ocp(&cfg), Err(Error::InfeasibleConfig(_))), "{cfg:?}");
    }
}

#[test]
fn robot_initial_guess_reaches_the_targets() {
    let cfg = RobotOcpConfig::desk();
    let nlp = make_robot_ocp(&cfg).unwrap();
    let sol = RobotSolution::from_iterate(&cfg, nlp.initial_guess());
    assert!(sol.terminal_error(&cfg) < 1e-12);
    // Both straight lines pass the midpoint at the same time, 1 m apart.
    assert!(sol.min_distance() < cfg.min_distance);
    // Copies start at robot 1's trajectory.
    let r = nlp.consensus_residual(nlp.initial_guess());
    assert!(r.amax() < 1e-12);
}

#[test]
fn random_qp_is_deterministic_and_two_assigned() {
    let cfg = RandomQpConfig {
        n_ineq: 2,
        ..RandomQpConfig::default()
    };
    let a = RandomQp::generate(&cfg);
    let b = RandomQp::generate(&cfg);
    assert_eq!(a.coupling, b.coupling);
    let nlp = a.into_nlp();
    assert!(build_assignment(&nlp).unwrap().is_two_assigned());
    for ag in &a.agents {
        assert!(ag.q.clone().cholesky().is_some());
        // The origin is strictly feasible.
        assert!(ag.b.iter().all(|v| *v > 0.0));
    }
    assert!(validate_consistency(&nlp, &ValidationOptions::default()).is_empty());
}

#[test]
fn random_qp_kkt_solution_is_stationary() {
    let qp = RandomQp::generate(&RandomQpConfig::default());
    let (x, lambda) = qp.kkt_solution().unwrap();
    let nlp = qp.into_nlp();
    assert!(nlp.consensus_residual(&x).amax() < 1e-10);
    for (i, ag) in qp.agents.iter().enumerate() {
        let grad = &ag.q * &x[i] + &ag.c;
        let stat = grad + nlp.coupling(i).tr_mul(&lambda);
        assert!(stat.amax() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// States simulated by backward Euler from random inputs satisfy the
    /// dynamics rows exactly.
    #[test]
    fn robot_dynamics_match_backward_euler(inputs in proptest::collection::vec((-3.0f64..3.0, -1.0f64..1.0), 20)) {
        let cfg = RobotOcpConfig::desk();
        let nlp = make_robot_ocp(&cfg).unwrap();
        let k = cfg.knots();
        for (i, agent) in [(0usize, nlp.agent(0)), (1, nlp.agent(1))] {
            let mut x = DVector::zeros(agent.dim());
            let mut s = cfg.starts[i];
            for (kk, &(v, om)) in inputs.iter().enumerate() {
                s[2] += cfg.dt * om;
                s[0] += cfg.dt * v * s[2].cos();
                s[1] += cfg.dt * v * s[2].sin();
                x.rows_mut(3 * kk, 3).copy_from_slice(&s);
                x[3 * k + 2 * kk] = v;
                x[3 * k + 2 * kk + 1] = om;
            }
            let g = agent.eq(&x);
            prop_assert!(g.rows(0, 3 * k).amax() < 1e-12);
            prop_assert!((g[3 * k] - (s[0] - cfg.targets[i][0])).abs() < 1e-12);
            prop_assert!((g[3 * k + 1] - (s[1] - cfg.targets[i][1])).abs() < 1e-12);
        }
    }
}
