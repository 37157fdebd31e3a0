//! Two unicycle robots swapping sides while keeping a minimum distance.
//!
//! Each robot `i` owns states `z_k = (x, y, θ)` and inputs `u_k = (v, ω)` for
//! knots `k = 1..K`, with `z_0` fixed. Dynamics are discretized by backward
//! Euler, `z_k = z_{k−1} + dt·(v_k cos θ_k, v_k sin θ_k, ω_k)`, and the final
//! position is pinned to the target. Robot 0 additionally holds a copy of
//! robot 1's `(x, y)` trajectory; the distance constraints are written against
//! that copy and consensus rows tie the copy to the original.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{LocalNlp, PartitionedNlp};

#[derive(Debug, Clone, PartialEq)]
pub struct RobotOcpConfig {
    pub horizon: f64,
    pub dt: f64,
    pub min_distance: f64,
    /// Diagonal of the state weight.
    pub q: [f64; 3],
    /// Diagonal of the input weight.
    pub r: [f64; 2],
    pub starts: [[f64; 3]; 2],
    pub targets: [[f64; 3]; 2],
}

impl RobotOcpConfig {
    /// `dt = 0.1`, `T = 10`, `d = 5`, `Q = 0.1·diag(10, 10, 1)`, `R = I`.
    pub fn long_horizon() -> Self {
        Self {
            horizon: 10.0,
            dt: 0.1,
            min_distance: 5.0,
            q: [1.0, 1.0, 0.1],
            r: [1.0, 1.0],
            starts: [[-10.0, 0.5, 0.0], [10.0, -0.5, core::f64::consts::PI]],
            targets: [[10.0, 0.5, 0.0], [-10.0, -0.5, core::f64::consts::PI]],
        }
    }

    /// Same weights and geometry on a 2 s horizon.
    pub fn desk() -> Self {
        Self {
            horizon: 2.0,
            ..Self::long_horizon()
        }
    }

    /// Number of knots `K = T / dt`.
    pub fn knots(&self) -> usize {
        libm::round(self.horizon / self.dt) as usize
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.horizon / self.dt;
        if !(self.dt > 0.0) || !(self.horizon > 0.0) || (k - libm::round(k)).abs() > 1e-9 || k < 1.0 {
            return Err(Error::InfeasibleConfig(format!(
                "horizon {} is not a positive multiple of dt {}",
                self.horizon, self.dt
            )));
        }
        if !(self.min_distance > 0.0) {
            return Err(Error::InfeasibleConfig("minimum distance must be positive".into()));
        }
        if self.q.iter().chain(self.r.iter()).any(|w| !(*w > 0.0)) {
            return Err(Error::InfeasibleConfig("weights must be positive".into()));
        }
        let dist = |a: &[f64; 3], b: &[f64; 3]| libm::hypot(a[0] - b[0], a[1] - b[1]);
        if dist(&self.starts[0], &self.starts[1]) < self.min_distance {
            return Err(Error::InfeasibleConfig("start positions violate the distance bound".into()));
        }
        if dist(&self.targets[0], &self.targets[1]) < self.min_distance {
            return Err(Error::InfeasibleConfig("targets violate the distance bound".into()));
        }
        Ok(())
    }
}

impl Default for RobotOcpConfig {
    fn default() -> Self {
        Self::desk()
    }
}

struct RobotAgent {
    k: usize,
    dt: f64,
    d2: f64,
    q: [f64; 3],
    r: [f64; 2],
    start: [f64; 3],
    target: [f64; 3],
    copies: bool,
}

impl RobotAgent {
    fn state(&self, k: usize, c: usize) -> usize {
        3 * (k - 1) + c
    }
    fn input(&self, k: usize, c: usize) -> usize {
        3 * self.k + 2 * (k - 1) + c
    }
    fn copy(&self, k: usize, c: usize) -> usize {
        5 * self.k + 2 * (k - 1) + c
    }
    fn prev(&self, x: &DVector<f64>, k: usize, c: usize) -> f64 {
        if k == 1 {
            self.start[c]
        } else {
            x[self.state(k - 1, c)]
        }
    }
}

impl LocalNlp for RobotAgent {
    fn dim(&self) -> usize {
        if self.copies {
            7 * self.k
        } else {
            5 * self.k
        }
    }
    fn n_ineq(&self) -> usize {
        if self.copies {
            self.k
        } else {
            0
        }
    }
    fn n_eq(&self) -> usize {
        3 * self.k + 2
    }

    fn objective(&self, x: &DVector<f64>) -> f64 {
        let mut f = 0.0;
        for k in 1..=self.k {
            for c in 0..3 {
                let e = x[self.state(k, c)] - self.target[c];
                f += self.q[c] * e * e;
            }
            for c in 0..2 {
                let u = x[self.input(k, c)];
                f += self.r[c] * u * u;
            }
        }
        self.dt * f
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.dim());
        for k in 1..=self.k {
            for c in 0..3 {
                let i = self.state(k, c);
                g[i] = 2.0 * self.dt * self.q[c] * (x[i] - self.target[c]);
            }
            for c in 0..2 {
                let i = self.input(k, c);
                g[i] = 2.0 * self.dt * self.r[c] * x[i];
            }
        }
        g
    }

    fn hessian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.dim(), self.dim());
        for k in 1..=self.k {
            for c in 0..3 {
                let i = self.state(k, c);
                h[(i, i)] = 2.0 * self.dt * self.q[c];
            }
            for c in 0..2 {
                let i = self.input(k, c);
                h[(i, i)] = 2.0 * self.dt * self.r[c];
            }
        }
        h
    }

    fn ineq(&self, x: &DVector<f64>) -> DVector<f64> {
        if !self.copies {
            return DVector::zeros(0);
        }
        DVector::from_fn(self.k, |j, _| {
            let k = j + 1;
            let dx = x[self.state(k, 0)] - x[self.copy(k, 0)];
            let dy = x[self.state(k, 1)] - x[self.copy(k, 1)];
            self.d2 - dx * dx - dy * dy
        })
    }

    fn ineq_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(self.n_ineq(), self.dim());
        if !self.copies {
            return j;
        }
        for k in 1..=self.k {
            for c in 0..2 {
                let diff = x[self.state(k, c)] - x[self.copy(k, c)];
                j[(k - 1, self.state(k, c))] = -2.0 * diff;
                j[(k - 1, self.copy(k, c))] = 2.0 * diff;
            }
        }
        j
    }

    fn ineq_hessian(&self, _x: &DVector<f64>, w: &DVector<f64>) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.dim(), self.dim());
        if !self.copies {
            return h;
        }
        for k in 1..=self.k {
            let wk = w[k - 1];
            for c in 0..2 {
                let (p, q) = (self.state(k, c), self.copy(k, c));
                h[(p, p)] -= 2.0 * wk;
                h[(q, q)] -= 2.0 * wk;
                h[(p, q)] += 2.0 * wk;
                h[(q, p)] += 2.0 * wk;
            }
        }
        h
    }

    fn eq(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.n_eq());
        for k in 1..=self.k {
            let th = x[self.state(k, 2)];
            let v = x[self.input(k, 0)];
            let om = x[self.input(k, 1)];
            let f = [v * libm::cos(th), v * libm::sin(th), om];
            for c in 0..3 {
                g[3 * (k - 1) + c] = x[self.state(k, c)] - self.prev(x, k, c) - self.dt * f[c];
            }
        }
        g[3 * self.k] = x[self.state(self.k, 0)] - self.target[0];
        g[3 * self.k + 1] = x[self.state(self.k, 1)] - self.target[1];
        g
    }

    fn eq_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(self.n_eq(), self.dim());
        for k in 1..=self.k {
            let th = x[self.state(k, 2)];
            let v = x[self.input(k, 0)];
            let (s, co) = (libm::sin(th), libm::cos(th));
            let row = 3 * (k - 1);
            for c in 0..3 {
                j[(row + c, self.state(k, c))] = 1.0;
                if k > 1 {
                    j[(row + c, self.state(k - 1, c))] = -1.0;
                }
            }
            let (t, vi, wi) = (self.state(k, 2), self.input(k, 0), self.input(k, 1));
            j[(row, t)] += self.dt * v * s;
            j[(row, vi)] = -self.dt * co;
            j[(row + 1, t)] -= self.dt * v * co;
            j[(row + 1, vi)] = -self.dt * s;
            j[(row + 2, wi)] = -self.dt;
        }
        j[(3 * self.k, self.state(self.k, 0))] = 1.0;
        j[(3 * self.k + 1, self.state(self.k, 1))] = 1.0;
        j
    }

    fn eq_hessian(&self, x: &DVector<f64>, w: &DVector<f64>) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.dim(), self.dim());
        for k in 1..=self.k {
            let th = x[self.state(k, 2)];
            let v = x[self.input(k, 0)];
            let (s, co) = (libm::sin(th), libm::cos(th));
            let (w1, w2) = (w[3 * (k - 1)], w[3 * (k - 1) + 1]);
            let (t, vi) = (self.state(k, 2), self.input(k, 0));
            h[(t, t)] += self.dt * v * (w1 * co + w2 * s);
            let cross = self.dt * (w1 * s - w2 * co);
            h[(t, vi)] += cross;
            h[(vi, t)] += cross;
        }
        h
    }
}

pub fn make_robot_ocp(cfg: &RobotOcpConfig) -> Result<PartitionedNlp> {
    cfg.validate()?;
    let k = cfg.knots();
    let robots: Vec<RobotAgent> = (0..2)
        .map(|i| RobotAgent {
            k,
            dt: cfg.dt,
            d2: cfg.min_distance * cfg.min_distance,
            q: cfg.q,
            r: cfg.r,
            start: cfg.starts[i],
            target: cfg.targets[i],
            copies: i == 0,
        })
        .collect();

    let n_c = 2 * k;
    let mut a0 = DMatrix::zeros(n_c, robots[0].dim());
    let mut a1 = DMatrix::zeros(n_c, robots[1].dim());
    for kk in 1..=k {
        for c in 0..2 {
            let row = 2 * (kk - 1) + c;
            a0[(row, robots[0].copy(kk, c))] = 1.0;
            a1[(row, robots[1].state(kk, c))] = -1.0;
        }
    }

    // Constant-speed straight line to the target; dynamically consistent.
    let line = |i: usize, kk: usize, c: usize| {
        let t = kk as f64 / k as f64;
        cfg.starts[i][c] + t * (cfg.targets[i][c] - cfg.starts[i][c])
    };
    let initial: Vec<DVector<f64>> = robots
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let (sx, sy) = (cfg.targets[i][0] - cfg.starts[i][0], cfg.targets[i][1] - cfg.starts[i][1]);
            let heading = libm::atan2(sy, sx);
            let speed = libm::hypot(sx, sy) / cfg.horizon;
            let mut x = DVector::zeros(r.dim());
            for kk in 1..=k {
                x[r.state(kk, 0)] = line(i, kk, 0);
                x[r.state(kk, 1)] = line(i, kk, 1);
                x[r.state(kk, 2)] = heading;
                x[r.input(kk, 0)] = speed;
                if r.copies {
                    x[r.copy(kk, 0)] = line(1, kk, 0);
                    x[r.copy(kk, 1)] = line(1, kk, 1);
                }
            }
            x[r.input(1, 1)] = (heading - cfg.starts[i][2]) / cfg.dt;
            x
        })
        .collect();

    let agents: Vec<Arc<dyn LocalNlp>> = robots.into_iter().map(|r| Arc::new(r) as Arc<dyn LocalNlp>).collect();
    Ok(PartitionedNlp::new(agents, vec![a0, a1], n_c).with_initial_guess(initial))
}

/// Trajectories read back from a solution of [`make_robot_ocp`].
#[derive(Debug, Clone, PartialEq)]
pub struct RobotSolution {
    /// `positions[i][k] = (x, y)` of robot `i` at knot `k + 1`.
    pub positions: [Vec<[f64; 2]>; 2],
}

impl RobotSolution {
    pub fn from_iterate(cfg: &RobotOcpConfig, x: &[DVector<f64>]) -> Self {
        let k = cfg.knots();
        let pos = |i: usize| (1..=k).map(|kk| [x[i][3 * (kk - 1)], x[i][3 * (kk - 1) + 1]]).collect();
        Self {
            positions: [pos(0), pos(1)],
        }
    }

    /// Smallest distance between the robots over all knots.
    pub fn min_distance(&self) -> f64 {
        self.positions[0]
            .iter()
            .zip(&self.positions[1])
            .map(|(a, b)| libm::hypot(a[0] - b[0], a[1] - b[1]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest deviation of a final position from its target.
    pub fn terminal_error(&self, cfg: &RobotOcpConfig) -> f64 {
        (0..2)
            .map(|i| {
                let p = self.positions[i].last().expect("at least one knot");
                (p[0] - cfg.targets[i][0]).abs().max((p[1] - cfg.targets[i][1]).abs())
            })
            .fold(0.0, f64::max)
    }
}
