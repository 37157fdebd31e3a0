//! Decentralized conjugate gradient on `Σ S̃_i λ = Σ s̃_i`.
//!
//! Both agents of a consensus row hold identical copies of that row's CG
//! state `(λ_j, r_j, p_j)`. An iteration costs one neighbor exchange of
//! partial products `(S̃_l p)_j` and two ring reductions (`pᵀS̃p`, then
//! `rᵀr`) to which only the row owner, the lowest-indexed agent of `R(j)`,
//! contributes.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::coordination::InnerStop;
use crate::error::{Error, Result};
use crate::local_solver::CondensedContribution;
use crate::model::AssignmentMap;
use crate::netsim::{Endpoint, Message, Network, Tag};

#[derive(Debug, Clone)]
pub struct CgAgentState {
    pub agent: usize,
    /// `C(i)`, sorted.
    pub rows: Vec<usize>,
    /// For each row in `rows`, whether this agent owns it.
    pub owned: Vec<bool>,
    /// Neighbors sharing at least one row, with the shared row positions
    /// (indices into `rows`).
    pub neighbors: Vec<(usize, Vec<usize>)>,
    /// Own block `S̃_i` restricted to `C(i) × C(i)`.
    pub local_block: DMatrix<f64>,
    /// Merged columns `S̃ e_j = Σ_{l∈R(j)} S̃_l e_j`, one per row (length n_c).
    pub merged_columns: Vec<DVector<f64>>,
    /// Merged right-hand side entries `Σ_{l∈R(j)} s̃_l[j]`.
    pub merged_rhs: Vec<f64>,
    pub lambda: Vec<f64>,
    pub r: Vec<f64>,
    pub p: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub lambda: DVector<f64>,
    pub iterations: usize,
    /// `‖r‖₂` as tracked by the recursion.
    pub residual: f64,
    /// `λ^k` for `k = 0, 1, …` when recording was requested.
    pub iterates: Vec<DVector<f64>>,
    /// `(α^k, β^k)` per iteration when recording was requested.
    pub coefficients: Vec<(f64, f64)>,
}

fn check_two_assigned(assignment: &AssignmentMap) -> Result<()> {
    for j in 0..assignment.n_c() {
        let d = assignment.row_agents(j).len();
        if d > 2 {
            return Err(Error::NotTwoAssigned { row: j, degree: d });
        }
    }
    Ok(())
}

/// Shared-row layout of every agent: `(rows, owned, neighbors)`.
pub(crate) fn neighborhoods(assignment: &AssignmentMap) -> Vec<(Vec<usize>, Vec<bool>, Vec<(usize, Vec<usize>)>)> {
    (0..assignment.n_agents())
        .map(|i| {
            let rows = assignment.agent_rows(i).to_vec();
            let owned = rows.iter().map(|&j| assignment.owner(j) == i).collect();
            let mut nb: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (pos, &j) in rows.iter().enumerate() {
                for &l in assignment.row_agents(j) {
                    if l != i {
                        nb.entry(l).or_default().push(pos);
                    }
                }
            }
            (rows, owned, nb.into_iter().collect())
        })
        .collect()
}

/// Exchange one float per shared row with every neighbor; returns, per agent
/// and row position, the agent-ordered sum of all contributions.
pub(crate) fn neighbor_sum(
    network: &mut Network,
    assignment: &AssignmentMap,
    layout: &[(Vec<usize>, Vec<bool>, Vec<(usize, Vec<usize>)>)],
    values: &[Vec<f64>],
    tag: Tag,
) -> Result<Vec<Vec<f64>>> {
    let mut outbox = Vec::new();
    for (i, (_, _, nbs)) in layout.iter().enumerate() {
        for (l, positions) in nbs {
            outbox.push(Message {
                from: Endpoint::Agent(i),
                to: Endpoint::Agent(*l),
                tag,
                payload: positions.iter().map(|&p| values[i][p]).collect(),
            });
        }
    }
    let inbox = network.round_exchange(outbox)?;
    let mut out = Vec::with_capacity(layout.len());
    for (i, (rows, _, nbs)) in layout.iter().enumerate() {
        // received[row] = list of (sender, value)
        let mut received: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
        for m in inbox.to(Endpoint::Agent(i)) {
            let Endpoint::Agent(from) = m.from else { continue };
            let positions = &nbs.iter().find(|(l, _)| *l == from).expect("neighbor").1;
            for (k, &p) in positions.iter().enumerate() {
                received.entry(rows[p]).or_default().push((from, m.payload[k]));
            }
        }
        let sums = rows
            .iter()
            .enumerate()
            .map(|(p, &j)| {
                let mut acc = 0.0;
                for &l in assignment.row_agents(j) {
                    acc += if l == i {
                        values[i][p]
                    } else {
                        received[&j].iter().find(|(f, _)| *f == l).expect("contribution").1
                    };
                }
                acc
            })
            .collect();
        out.push(sums);
    }
    Ok(out)
}

/// Preparation: every agent sends `S̃_i e_j` (and `s̃_i[j]`) for each shared
/// row to its neighbors, so both agents of a row hold the merged column.
pub fn cg_prepare(
    contribs: &[CondensedContribution],
    assignment: &AssignmentMap,
    network: &mut Network,
) -> Result<Vec<CgAgentState>> {
    check_two_assigned(assignment)?;
    let n_c = assignment.n_c();
    let layout = neighborhoods(assignment);

    let mut outbox = Vec::new();
    for (i, (rows, _, nbs)) in layout.iter().enumerate() {
        for (l, positions) in nbs {
            let mut cols = Vec::with_capacity(positions.len() * n_c);
            for &p in positions {
                cols.extend(contribs[i].s_tilde.column(rows[p]).iter());
            }
            outbox.push(Message {
                from: Endpoint::Agent(i),
                to: Endpoint::Agent(*l),
                tag: Tag::Prep,
                payload: cols,
            });
            outbox.push(Message {
                from: Endpoint::Agent(i),
                to: Endpoint::Agent(*l),
                tag: Tag::Aux,
                payload: positions.iter().map(|&p| contribs[i].s_vec_tilde[rows[p]]).collect(),
            });
        }
    }
    let inbox = network.round_exchange(outbox)?;

    let mut states = Vec::with_capacity(layout.len());
    for (i, (rows, owned, nbs)) in layout.into_iter().enumerate() {
        let mut merged_columns = Vec::with_capacity(rows.len());
        let mut merged_rhs = Vec::with_capacity(rows.len());
        for &j in &rows {
            let mut col = DVector::zeros(n_c);
            let mut rhs = 0.0;
            for &l in assignment.row_agents(j) {
                if l == i {
                    col += contribs[i].s_tilde.column(j);
                    rhs += contribs[i].s_vec_tilde[j];
                    continue;
                }
                let positions = &nbs.iter().find(|(n, _)| *n == l).expect("neighbor").1;
                let k = positions.iter().position(|&p| rows[p] == j).expect("shared row");
                for m in inbox.to(Endpoint::Agent(i)).filter(|m| m.from == Endpoint::Agent(l)) {
                    match m.tag {
                        Tag::Prep => col += DVector::from_column_slice(&m.payload[k * n_c..(k + 1) * n_c]),
                        Tag::Aux => rhs += m.payload[k],
                        _ => {}
                    }
                }
            }
            merged_columns.push(col);
            merged_rhs.push(rhs);
        }
        let local_block = DMatrix::from_fn(rows.len(), rows.len(), |a, b| contribs[i].s_tilde[(rows[a], rows[b])]);
        let m = rows.len();
        states.push(CgAgentState {
            agent: i,
            rows,
            owned,
            neighbors: nbs,
            local_block,
            merged_columns,
            merged_rhs,
            lambda: vec![0.0; m],
            r: vec![0.0; m],
            p: vec![0.0; m],
        });
    }
    Ok(states)
}

fn layout_of(states: &[CgAgentState]) -> Vec<(Vec<usize>, Vec<bool>, Vec<(usize, Vec<usize>)>)> {
    states
        .iter()
        .map(|s| (s.rows.clone(), s.owned.clone(), s.neighbors.clone()))
        .collect()
}

fn owned_sum(state: &CgAgentState, f: impl Fn(usize) -> f64) -> f64 {
    (0..state.rows.len()).filter(|&p| state.owned[p]).map(f).sum()
}

fn gather(states: &[CgAgentState], n_c: usize) -> DVector<f64> {
    let mut out = DVector::zeros(n_c);
    for s in states {
        for (p, &j) in s.rows.iter().enumerate() {
            if s.owned[p] {
                out[j] = s.lambda[p];
            }
        }
    }
    out
}

/// Run the CG loop from the warm start `lambda0` (known to every agent).
pub fn cg_iterate(
    states: &mut [CgAgentState],
    assignment: &AssignmentMap,
    network: &mut Network,
    lambda0: &DVector<f64>,
    stop: InnerStop,
    record: bool,
) -> Result<CgOutcome> {
    let n_c = lambda0.len();
    let layout = layout_of(states);

    // r⁰ = s̃ − S̃λ⁰ from the merged columns; p⁰ = r⁰.
    for s in states.iter_mut() {
        for (p, &j) in s.rows.iter().enumerate() {
            s.lambda[p] = lambda0[j];
            s.r[p] = s.merged_rhs[p] - s.merged_columns[p].dot(lambda0);
            s.p[p] = s.r[p];
        }
    }
    let partial: Vec<f64> = states.iter().map(|s| owned_sum(s, |p| s.r[p] * s.r[p])).collect();
    let mut rr = network.ring_sum(&partial, Tag::Aux)?;
    let rr0 = rr;

    let mut out = CgOutcome {
        lambda: DVector::zeros(0),
        iterations: 0,
        residual: libm::sqrt(rr),
        iterates: Vec::new(),
        coefficients: Vec::new(),
    };
    if record {
        out.iterates.push(gather(states, n_c));
    }
    let max_iter = match stop {
        InnerStop::Fixed(n) => n,
        InnerStop::Residual { max_iter, .. } => max_iter,
    };
    for k in 0..max_iter {
        if let InnerStop::Residual { target, .. } = stop {
            if libm::sqrt(rr) <= target {
                break;
            }
        }
        // Converged to machine precision: another step would divide by zero.
        if rr <= 1e-28 * rr0 {
            break;
        }
        // Partial products u_i = S̃_i p on C(i), summed over R(j).
        let partial_products: Vec<Vec<f64>> = states
            .iter()
            .map(|s| {
                let p = DVector::from_column_slice(&s.p);
                (&s.local_block * p).iter().copied().collect()
            })
            .collect();
        let sp = neighbor_sum(network, assignment, &layout, &partial_products, Tag::InnerLocal)?;
        let partial: Vec<f64> = states
            .iter()
            .zip(&sp)
            .map(|(s, q)| owned_sum(s, |p| s.p[p] * q[p]))
            .collect();
        let curvature = network.ring_sum(&partial, Tag::InnerGlobal)?;
        if curvature <= 0.0 {
            return Err(Error::IndefiniteDetected { iteration: k, curvature });
        }
        let alpha = rr / curvature;
        for (s, q) in states.iter_mut().zip(&sp) {
            for p in 0..s.rows.len() {
                s.lambda[p] += alpha * s.p[p];
                s.r[p] -= alpha * q[p];
            }
        }
        let partial: Vec<f64> = states.iter().map(|s| owned_sum(s, |p| s.r[p] * s.r[p])).collect();
        let rr_new = network.ring_sum(&partial, Tag::InnerGlobal)?;
        let beta = rr_new / rr;
        for s in states.iter_mut() {
            for p in 0..s.rows.len() {
                s.p[p] = s.r[p] + beta * s.p[p];
            }
        }
        rr = rr_new;
        out.iterations = k + 1;
        if record {
            out.iterates.push(gather(states, n_c));
            out.coefficients.push((alpha, beta));
        }
    }
    out.residual = libm::sqrt(rr);
    out.lambda = gather(states, n_c);
    Ok(out)
}
