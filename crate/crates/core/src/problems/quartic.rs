use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::model::{LocalNlp, PartitionedNlp};

/// `f(x) = ¼(x − c)⁴ + a x²` on the box `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuarticAgent {
    pub c: f64,
    pub a: f64,
    pub lower: f64,
    pub upper: f64,
}

impl LocalNlp for QuarticAgent {
    fn dim(&self) -> usize {
        1
    }
    fn n_ineq(&self) -> usize {
        2
    }
    fn objective(&self, x: &DVector<f64>) -> f64 {
        let d = x[0] - self.c;
        0.25 * d * d * d * d + self.a * x[0] * x[0]
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let d = x[0] - self.c;
        DVector::from_element(1, d * d * d + 2.0 * self.a * x[0])
    }
    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let d = x[0] - self.c;
        DMatrix::from_element(1, 1, 3.0 * d * d + 2.0 * self.a)
    }
    fn ineq(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![self.lower - x[0], x[0] - self.upper])
    }
    fn ineq_jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_column_slice(2, 1, &[-1.0, 1.0])
    }
}

/// Two scalar agents with `x_1 − x_2 = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuarticConfig {
    pub c: [f64; 2],
    pub a: [f64; 2],
    pub lower: f64,
    pub upper: f64,
    pub initial: [f64; 2],
}

impl Default for QuarticConfig {
    fn default() -> Self {
        Self {
            c: [1.0, -1.0],
            a: [-0.5, 1.0],
            lower: -3.0,
            upper: 3.0,
            initial: [2.0, -2.0],
        }
    }
}

impl QuarticConfig {
    pub fn agents(&self) -> [QuarticAgent; 2] {
        [0, 1].map(|i| QuarticAgent {
            c: self.c[i],
            a: self.a[i],
            lower: self.lower,
            upper: self.upper,
        })
    }

    /// Total objective of the consensus point `x_1 = x_2 = x`.
    pub fn consensus_objective(&self, x: f64) -> f64 {
        let v = DVector::from_element(1, x);
        self.agents().iter().map(|a| a.objective(&v)).sum()
    }
}

pub fn make_quartic_toy(cfg: &QuarticConfig) -> PartitionedNlp {
    let agents: Vec<Arc<dyn LocalNlp>> = cfg
        .agents()
        .into_iter()
        .map(|a| Arc::new(a) as Arc<dyn LocalNlp>)
        .collect();
    let coupling = vec![DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, -1.0)];
    PartitionedNlp::new(agents, coupling, 1).with_initial_guess(
        cfg.initial.iter().map(|&v| DVector::from_element(1, v)).collect(),
    )
}
