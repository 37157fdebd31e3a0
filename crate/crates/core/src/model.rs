//! Partially separable problems and their coupling structure.
//!
//! A [`PartitionedNlp`] is a list of agents, each owning a local NLP
//! (objective, inequalities `h_i(x_i) ≤ 0`, equalities `g_i(x_i) = 0`), tied
//! together by the consensus constraint `Σ_i A_i x_i = 0`.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::inf_norm;

/// A twice-differentiable local NLP with exact derivative callbacks.
///
/// Constraint Hessians are requested already contracted with a weight vector,
/// `Σ_j w_j ∇²c_j(x)`.
pub trait LocalNlp: Send + Sync {
    fn dim(&self) -> usize;

    fn n_ineq(&self) -> usize {
        0
    }

    fn n_eq(&self) -> usize {
        0
    }

    fn objective(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64>;

    fn ineq(&self, _x: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(0)
    }

    fn ineq_jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(0, self.dim())
    }

    fn ineq_hessian(&self, _x: &DVector<f64>, _weights: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(self.dim(), self.dim())
    }

    fn eq(&self, _x: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(0)
    }

    fn eq_jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(0, self.dim())
    }

    fn eq_hessian(&self, _x: &DVector<f64>, _weights: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(self.dim(), self.dim())
    }
}

/// The N-agent problem `min Σ f_i(x_i) s.t. h_i ≤ 0, g_i = 0, Σ A_i x_i = 0`.
#[derive(Clone)]
pub struct PartitionedNlp {
    agents: Vec<Arc<dyn LocalNlp>>,
    coupling: Vec<DMatrix<f64>>,
    n_c: usize,
    initial: Vec<DVector<f64>>,
    original_dims: Vec<usize>,
}

impl core::fmt::Debug for PartitionedNlp {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("PartitionedNlp")
            .field("n_agents", &self.agents.len())
            .field("dims", &self.dims())
            .field("n_c", &self.n_c)
            .finish()
    }
}

impl PartitionedNlp {
    /// Build a problem. Shapes are not validated here; see
    /// [`validate_consistency`] and [`build_assignment`].
    pub fn new(agents: Vec<Arc<dyn LocalNlp>>, coupling: Vec<DMatrix<f64>>, n_c: usize) -> Self {
        let initial = agents.iter().map(|a| DVector::zeros(a.dim())).collect();
        let original_dims = agents.iter().map(|a| a.dim()).collect();
        Self {
            agents,
            coupling,
            n_c,
            initial,
            original_dims,
        }
    }

    pub fn with_initial_guess(mut self, initial: Vec<DVector<f64>>) -> Self {
        self.initial = initial;
        self
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn n_c(&self) -> usize {
        self.n_c
    }

    pub fn agent(&self, i: usize) -> &dyn LocalNlp {
        self.agents[i].as_ref()
    }

    pub fn agents(&self) -> &[Arc<dyn LocalNlp>] {
        &self.agents
    }

    pub fn coupling(&self, i: usize) -> &DMatrix<f64> {
        &self.coupling[i]
    }

    pub fn couplings(&self) -> &[DMatrix<f64>] {
        &self.coupling
    }

    pub fn initial_guess(&self) -> &[DVector<f64>] {
        &self.initial
    }

    pub fn dims(&self) -> Vec<usize> {
        self.agents.iter().map(|a| a.dim()).collect()
    }

    /// Dimension of each agent before any variable copies were appended.
    pub fn original_dims(&self) -> &[usize] {
        &self.original_dims
    }

    /// Drop appended copy variables, mapping a solution back to the original
    /// variables.
    pub fn restrict_to_original(&self, x: &[DVector<f64>]) -> Vec<DVector<f64>> {
        x.iter()
            .zip(&self.original_dims)
            .map(|(xi, &n)| xi.rows(0, n).into_owned())
            .collect()
    }

    /// `Σ_i A_i x_i`.
    pub fn consensus_residual(&self, x: &[DVector<f64>]) -> DVector<f64> {
        let mut r = DVector::zeros(self.n_c);
        for (a, xi) in self.coupling.iter().zip(x) {
            r += a * xi;
        }
        r
    }

    pub fn total_objective(&self, x: &[DVector<f64>]) -> f64 {
        self.agents.iter().zip(x).map(|(a, xi)| a.objective(xi)).sum()
    }

    /// Number of equality constraints per agent.
    pub fn eq_counts(&self) -> Vec<usize> {
        self.agents.iter().map(|a| a.n_eq()).collect()
    }

    fn check_shapes(&self) -> Result<()> {
        if self.agents.is_empty() {
            return Err(Error::Shape("problem has no agents".into()));
        }
        if self.coupling.len() != self.agents.len() {
            return Err(Error::Shape(format!(
                "{} coupling matrices for {} agents",
                self.coupling.len(),
                self.agents.len()
            )));
        }
        for (i, (a, agent)) in self.coupling.iter().zip(&self.agents).enumerate() {
            if a.nrows() != self.n_c || a.ncols() != agent.dim() {
                return Err(Error::Shape(format!(
                    "A_{} is {}x{}, expected {}x{}",
                    i,
                    a.nrows(),
                    a.ncols(),
                    self.n_c,
                    agent.dim()
                )));
            }
        }
        Ok(())
    }
}

/// Which agents touch which consensus rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssignmentMap {
    /// `R(j)`: agents with a nonzero row `j` in their coupling matrix (sorted).
    rows: Vec<Vec<usize>>,
    /// `C(i)`: rows agent `i` is assigned to (sorted).
    agents: Vec<Vec<usize>>,
}

impl AssignmentMap {
    pub fn row_agents(&self, j: usize) -> &[usize] {
        &self.rows[j]
    }

    pub fn agent_rows(&self, i: usize) -> &[usize] {
        &self.agents[i]
    }

    pub fn n_c(&self) -> usize {
        self.rows.len()
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    /// `max_j |R(j)|`.
    pub fn degree(&self) -> usize {
        self.rows.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn is_two_assigned(&self) -> bool {
        self.degree() <= 2
    }

    /// Lowest-indexed agent assigned to row `j`.
    pub fn owner(&self, j: usize) -> usize {
        self.rows[j][0]
    }

    /// Rows reachable from row `j`: `∪_{l ∈ R(j)} C(l)`, sorted.
    pub fn reachable_rows(&self, j: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.rows[j]
            .iter()
            .flat_map(|&l| self.agents[l].iter().copied())
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Build directly from a row-to-agents relation.
    pub fn from_rows(rows: Vec<Vec<usize>>, n_agents: usize) -> Result<Self> {
        let mut agents = vec![Vec::new(); n_agents];
        for (j, r) in rows.iter().enumerate() {
            if r.is_empty() {
                return Err(Error::OrphanConsensusRow { row: j });
            }
            for &i in r {
                if i >= n_agents {
                    return Err(Error::UnknownAgent { id: i });
                }
                agents[i].push(j);
            }
        }
        let rows = rows
            .into_iter()
            .map(|mut r| {
                r.sort_unstable();
                r.dedup();
                r
            })
            .collect();
        Ok(Self { rows, agents })
    }
}

/// Rows of `a` with at least one nonzero entry (exact zero test).
pub fn nonzero_rows(a: &DMatrix<f64>) -> Vec<usize> {
    (0..a.nrows())
        .filter(|&j| a.row(j).iter().any(|v| *v != 0.0))
        .collect()
}

pub fn build_assignment(nlp: &PartitionedNlp) -> Result<AssignmentMap> {
    nlp.check_shapes()?;
    let mut rows = vec![Vec::new(); nlp.n_c];
    for (i, a) in nlp.coupling.iter().enumerate() {
        for j in nonzero_rows(a) {
            rows[j].push(i);
        }
    }
    AssignmentMap::from_rows(rows, nlp.n_agents())
}

/// An agent extended by `extra` copy variables that carry no objective weight
/// and no local constraints.
struct WithCopies {
    inner: Arc<dyn LocalNlp>,
    extra: usize,
}

impl WithCopies {
    fn base(&self, x: &DVector<f64>) -> DVector<f64> {
        x.rows(0, self.inner.dim()).into_owned()
    }

    fn pad_cols(&self, m: DMatrix<f64>) -> DMatrix<f64> {
        let n = self.dim();
        let mut out = DMatrix::zeros(m.nrows(), n);
        out.view_mut((0, 0), (m.nrows(), m.ncols())).copy_from(&m);
        out
    }

    fn pad_square(&self, m: DMatrix<f64>) -> DMatrix<f64> {
        let n = self.dim();
        let mut out = DMatrix::zeros(n, n);
        out.view_mut((0, 0), (m.nrows(), m.ncols())).copy_from(&m);
        out
    }

    fn pad_vec(&self, v: DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        out.rows_mut(0, v.len()).copy_from(&v);
        out
    }
}

impl LocalNlp for WithCopies {
    fn dim(&self) -> usize {
        self.inner.dim() + self.extra
    }
    fn n_ineq(&self) -> usize {
        self.inner.n_ineq()
    }
    fn n_eq(&self) -> usize {
        self.inner.n_eq()
    }
    fn objective(&self, x: &DVector<f64>) -> f64 {
        self.inner.objective(&self.base(x))
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.pad_vec(self.inner.gradient(&self.base(x)))
    }
    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.pad_square(self.inner.hessian(&self.base(x)))
    }
    fn ineq(&self, x: &DVector<f64>) -> DVector<f64> {
        self.inner.ineq(&self.base(x))
    }
    fn ineq_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.pad_cols(self.inner.ineq_jacobian(&self.base(x)))
    }
    fn ineq_hessian(&self, x: &DVector<f64>, w: &DVector<f64>) -> DMatrix<f64> {
        self.pad_square(self.inner.ineq_hessian(&self.base(x), w))
    }
    fn eq(&self, x: &DVector<f64>) -> DVector<f64> {
        self.inner.eq(&self.base(x))
    }
    fn eq_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.pad_cols(self.inner.eq_jacobian(&self.base(x)))
    }
    fn eq_hessian(&self, x: &DVector<f64>, w: &DVector<f64>) -> DMatrix<f64> {
        self.pad_square(self.inner.eq_hessian(&self.base(x), w))
    }
}

/// Rewrite an n-assigned problem as an equivalent 2-assigned one.
///
/// For every row `j` with `R(j) = {i_1 < … < i_k}`, `k ≥ 3`, agent `i_1`
/// receives a copy `x̃_s` of each middle agent `s ∈ {i_2, …, i_{k-1}}`; row `j`
/// then references the copy instead of `x_s`, and new rows `x̃_s − x_s = 0`
/// are appended. A copy is created at most once per (owner, source) pair.
pub fn reformulate_two_assigned(nlp: &PartitionedNlp) -> Result<PartitionedNlp> {
    let assignment = build_assignment(nlp)?;
    if assignment.is_two_assigned() {
        return Ok(nlp.clone());
    }
    let n_agents = nlp.n_agents();
    let base_dims = nlp.dims();
    let mut dims = base_dims.clone();
    // (owner, source) -> column offset of the copy inside the owner.
    let mut copies: Vec<(usize, usize, usize)> = Vec::new();
    let mut a: Vec<DMatrix<f64>> = nlp.coupling.clone();

    for j in 0..nlp.n_c {
        let r = assignment.row_agents(j);
        if r.len() < 3 {
            continue;
        }
        let owner = r[0];
        for &src in &r[1..r.len() - 1] {
            let offset = match copies.iter().find(|c| c.0 == owner && c.1 == src) {
                Some(c) => c.2,
                None => {
                    let off = dims[owner];
                    dims[owner] += base_dims[src];
                    copies.push((owner, src, off));
                    off
                }
            };
            if a[owner].ncols() < dims[owner] {
                a[owner] = a[owner].clone().resize_horizontally(dims[owner], 0.0);
            }
            for k in 0..base_dims[src] {
                let v = a[src][(j, k)];
                a[owner][(j, offset + k)] += v;
                a[src][(j, k)] = 0.0;
            }
        }
    }

    let extra_rows: usize = copies.iter().map(|c| base_dims[c.1]).sum();
    let n_c = nlp.n_c + extra_rows;
    let mut coupling: Vec<DMatrix<f64>> = (0..n_agents)
        .map(|i| {
            let mut m = DMatrix::zeros(n_c, dims[i]);
            m.view_mut((0, 0), (nlp.n_c, a[i].ncols())).copy_from(&a[i]);
            m
        })
        .collect();
    let mut row = nlp.n_c;
    for &(owner, src, offset) in &copies {
        for k in 0..base_dims[src] {
            coupling[owner][(row, offset + k)] = 1.0;
            coupling[src][(row, k)] = -1.0;
            row += 1;
        }
    }

    let agents: Vec<Arc<dyn LocalNlp>> = (0..n_agents)
        .map(|i| {
            let extra = dims[i] - base_dims[i];
            if extra == 0 {
                nlp.agents[i].clone()
            } else {
                Arc::new(WithCopies {
                    inner: nlp.agents[i].clone(),
                    extra,
                }) as Arc<dyn LocalNlp>
            }
        })
        .collect();

    let initial = (0..n_agents)
        .map(|i| {
            let mut v = DVector::zeros(dims[i]);
            v.rows_mut(0, base_dims[i]).copy_from(&nlp.initial[i]);
            for &(owner, src, offset) in &copies {
                if owner == i {
                    v.rows_mut(offset, base_dims[src])
                        .copy_from(&nlp.initial[src].rows(0, base_dims[src]));
                }
            }
            v
        })
        .collect();

    Ok(PartitionedNlp {
        agents,
        coupling,
        n_c,
        initial,
        original_dims: nlp.original_dims.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    Shape,
    NonFinite,
    Gradient,
    Hessian,
    IneqJacobian,
    IneqHessian,
    EqJacobian,
    EqHessian,
}

#[derive(Debug, Clone)]
pub struct Violation {
    pub agent: Option<usize>,
    pub kind: ViolationKind,
    pub max_rel_error: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct ConsistencyReport {
    pub violations: Vec<Violation>,
}

impl ConsistencyReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ValidationOptions {
    pub points: usize,
    /// Half-width of the box around the initial guess that points are drawn from.
    pub radius: f64,
    pub rel_tol: f64,
    pub seed: u64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            points: 3,
            radius: 0.5,
            rel_tol: 1e-5,
            seed: 0x5eed,
        }
    }
}

fn rel_error(analytic: &DMatrix<f64>, fd: &DMatrix<f64>) -> (f64, f64) {
    let abs = (analytic - fd).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let scale = fd.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-8);
    (abs / scale, abs)
}

fn fd_jacobian(f: &dyn Fn(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>, m: usize) -> DMatrix<f64> {
    let n = x.len();
    let mut jac = DMatrix::zeros(m, n);
    for k in 0..n {
        let h = 1e-6 * x[k].abs().max(1.0);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[k] += h;
        xm[k] -= h;
        let d = (f(&xp) - f(&xm)) / (2.0 * h);
        jac.set_column(k, &d);
    }
    jac
}

/// Shape checks plus central finite-difference checks of every derivative
/// callback at random points around the initial guess.
pub fn validate_consistency(nlp: &PartitionedNlp, opts: &ValidationOptions) -> ConsistencyReport {
    let mut report = ConsistencyReport::default();
    let mut push = |agent: Option<usize>, kind, err: f64, detail: String| {
        report.violations.push(Violation {
            agent,
            kind,
            max_rel_error: err,
            detail,
        })
    };

    if nlp.agents.is_empty() {
        push(None, ViolationKind::Shape, f64::INFINITY, "no agents".into());
        return report;
    }
    if nlp.coupling.len() != nlp.agents.len() {
        push(
            None,
            ViolationKind::Shape,
            f64::INFINITY,
            format!("{} coupling matrices for {} agents", nlp.coupling.len(), nlp.agents.len()),
        );
        return report;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for (i, agent) in nlp.agents.iter().enumerate() {
        let n = agent.dim();
        let a = &nlp.coupling[i];
        if a.nrows() != nlp.n_c || a.ncols() != n {
            push(
                Some(i),
                ViolationKind::Shape,
                f64::INFINITY,
                format!("A_{} is {}x{}, expected {}x{}", i, a.nrows(), a.ncols(), nlp.n_c, n),
            );
            continue;
        }
        if nlp.initial[i].len() != n {
            push(Some(i), ViolationKind::Shape, f64::INFINITY, "initial guess length".into());
            continue;
        }
        let base = &nlp.initial[i];
        let (m_in, m_eq) = (agent.n_ineq(), agent.n_eq());
        if agent.ineq(base).len() != m_in || agent.eq(base).len() != m_eq {
            push(Some(i), ViolationKind::Shape, f64::INFINITY, "constraint dimension".into());
            continue;
        }

        let mut worst = [0.0_f64; 7];
        let mut worst_abs = [0.0_f64; 7];
        for _ in 0..opts.points {
            let x = DVector::from_fn(n, |k, _| base[k] + rng.random_range(-opts.radius..opts.radius));
            if !agent.objective(&x).is_finite() {
                push(Some(i), ViolationKind::NonFinite, f64::INFINITY, "objective".into());
                continue;
            }
            let mut record = |slot: usize, analytic: &DMatrix<f64>, fd: &DMatrix<f64>| {
                let (rel, abs) = rel_error(analytic, fd);
                if rel > worst[slot] {
                    worst[slot] = rel;
                    worst_abs[slot] = abs;
                }
            };

            let obj = |y: &DVector<f64>| DVector::from_element(1, agent.objective(y));
            let g_fd = fd_jacobian(&obj, &x, 1).transpose();
            let g = agent.gradient(&x);
            record(0, &DMatrix::from_column_slice(n, 1, g.as_slice()), &g_fd);

            let grad = |y: &DVector<f64>| agent.gradient(y);
            record(1, &agent.hessian(&x), &fd_jacobian(&grad, &x, n));

            if m_in > 0 {
                let h = |y: &DVector<f64>| agent.ineq(y);
                record(2, &agent.ineq_jacobian(&x), &fd_jacobian(&h, &x, m_in));
                let w = DVector::from_fn(m_in, |_, _| rng.random_range(-1.0..1.0));
                let jw = |y: &DVector<f64>| agent.ineq_jacobian(y).transpose() * &w;
                record(3, &agent.ineq_hessian(&x, &w), &fd_jacobian(&jw, &x, n));
            }
            if m_eq > 0 {
                let ge = |y: &DVector<f64>| agent.eq(y);
                record(4, &agent.eq_jacobian(&x), &fd_jacobian(&ge, &x, m_eq));
                let w = DVector::from_fn(m_eq, |_, _| rng.random_range(-1.0..1.0));
                let jw = |y: &DVector<f64>| agent.eq_jacobian(y).transpose() * &w;
                record(5, &agent.eq_hessian(&x, &w), &fd_jacobian(&jw, &x, n));
            }
        }
        let kinds = [
            ViolationKind::Gradient,
            ViolationKind::Hessian,
            ViolationKind::IneqJacobian,
            ViolationKind::IneqHessian,
            ViolationKind::EqJacobian,
            ViolationKind::EqHessian,
        ];
        for (slot, kind) in kinds.iter().enumerate() {
            if worst[slot] > opts.rel_tol && worst_abs[slot] > 1e-7 {
                push(
                    Some(i),
                    *kind,
                    worst[slot],
                    format!("agent {} {:?}: max relative error {:.3e}", i, kind, worst[slot]),
                );
            }
        }
    }
    report
}

/// A scalar-valued agent built from closures; handy for tests and small
/// hand-written problems.
pub struct ClosureAgent {
    pub dim: usize,
    pub f: Box<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>,
    pub grad: Box<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>,
    pub hess: Box<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>,
}

impl LocalNlp for ClosureAgent {
    fn dim(&self) -> usize {
        self.dim
    }
    fn objective(&self, x: &DVector<f64>) -> f64 {
        (self.f)(x)
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.grad)(x)
    }
    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.hess)(x)
    }
}

/// Largest absolute entry of `Σ A_i x_i`.
pub fn consensus_violation(nlp: &PartitionedNlp, x: &[DVector<f64>]) -> f64 {
    inf_norm(&nlp.consensus_residual(x))
}
