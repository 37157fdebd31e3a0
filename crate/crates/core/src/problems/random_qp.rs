use alloc::sync::Arc;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{LocalNlp, PartitionedNlp};

/// `½xᵀQx + cᵀx` subject to `Gx ≤ b`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticAgent {
    pub q: DMatrix<f64>,
    pub c: DVector<f64>,
    pub g: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl LocalNlp for QuadraticAgent {
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

#[derive(Debug, Clone, PartialEq)]
pub struct RandomQpConfig {
    pub n_agents: usize,
    pub dims: Vec<usize>,
    pub n_c: usize,
    /// Random linear inequalities per agent (`Gx ≤ b` with `b > 0`).
    pub n_ineq: usize,
    pub seed: u64,
}

impl Default for RandomQpConfig {
    fn default() -> Self {
        Self {
            n_agents: 4,
            dims: alloc::vec![6; 4],
            n_c: 8,
            n_ineq: 0,
            seed: 1,
        }
    }
}

/// A convex consensus QP in which every row couples exactly two agents.
#[derive(Debug, Clone)]
pub struct RandomQp {
    pub agents: Vec<QuadraticAgent>,
    pub coupling: Vec<DMatrix<f64>>,
    pub n_c: usize,
}

impl RandomQp {
    pub fn generate(cfg: &RandomQpConfig) -> Self {
        assert!(cfg.n_agents >= 2, "a consensus QP needs two agents");
        assert_eq!(cfg.dims.len(), cfg.n_agents);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let agents = cfg
            .dims
            .iter()
            .map(|&n| {
                let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
                QuadraticAgent {
                    q: &b * b.transpose() + DMatrix::identity(n, n) * 0.5,
                    c: DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)),
                    g: DMatrix::from_fn(cfg.n_ineq, n, |_, _| rng.random_range(-1.0..1.0)),
                    b: DVector::from_fn(cfg.n_ineq, |_, _| rng.random_range(0.05..0.5)),
                }
            })
            .collect();
        let mut coupling: Vec<DMatrix<f64>> = cfg.dims.iter().map(|&n| DMatrix::zeros(cfg.n_c, n)).collect();
        for j in 0..cfg.n_c {
            let first = rng.random_range(0..cfg.n_agents);
            let second = (first + rng.random_range(1..cfg.n_agents)) % cfg.n_agents;
            for i in [first, second] {
                let n = cfg.dims[i];
                // At least one guaranteed nonzero keeps the row assigned.
                let k0 = rng.random_range(0..n);
                for k in 0..n {
                    if k == k0 || rng.random_bool(0.5) {
                        let v: f64 = rng.random_range(0.2..1.0);
                        coupling[i][(j, k)] = if rng.random_bool(0.5) { v } else { -v };
                    }
                }
            }
        }
        Self {
            agents,
            coupling,
            n_c: cfg.n_c,
        }
    }

    pub fn into_nlp(&self) -> PartitionedNlp {
        let agents = self
            .agents
            .iter()
            .map(|a| Arc::new(a.clone()) as Arc<dyn LocalNlp>)
            .collect();
        PartitionedNlp::new(agents, self.coupling.clone(), self.n_c)
    }

    /// Minimizer and consensus multiplier of the equality-only problem, from
    /// one dense KKT solve. `None` when inequalities are present or the KKT
    /// matrix is singular.
    pub fn kkt_solution(&self) -> Option<(Vec<DVector<f64>>, DVector<f64>)> {
        if self.agents.iter().any(|a| a.g.nrows() > 0) {
            return None;
        }
        let dims: Vec<usize> = self.agents.iter().map(|a| a.q.nrows()).collect();
        let n: usize = dims.iter().sum();
        let size = n + self.n_c;
        let mut k = DMatrix::zeros(size, size);
        let mut rhs = DVector::zeros(size);
        let mut o = 0;
        for (i, a) in self.agents.iter().enumerate() {
            let d = dims[i];
            k.view_mut((o, o), (d, d)).copy_from(&a.q);
            k.view_mut((n, o), (self.n_c, d)).copy_from(&self.coupling[i]);
            k.view_mut((o, n), (d, self.n_c)).copy_from(&self.coupling[i].transpose());
            rhs.rows_mut(o, d).copy_from(&(-&a.c));
            o += d;
        }
        let sol = k.full_piv_lu().solve(&rhs)?;
        let mut xs = Vec::with_capacity(dims.len());
        let mut o = 0;
        for &d in &dims {
            xs.push(sol.rows(o, d).into_owned());
            o += d;
        }
        Some((xs, sol.rows(n, self.n_c).into_owned()))
    }
}

pub fn make_random_consensus_qp(cfg: &RandomQpConfig) -> PartitionedNlp {
    RandomQp::generate(cfg).into_nlp()
}
