//! Synchronous message-passing simulator with an exact float-count ledger.
//!
//! Every message is delivered at a round barrier and charged to a ledger
//! bucket chosen by its [`Tag`]. Global scalar reductions are modeled as a
//! ring pass `0 → 1 → … → N−1 → Ring`, i.e. `N` messages of length one.

use alloc::vec::Vec;
use core::ops::{Add, AddAssign, Sub};

use crate::error::{Error, Result};
use crate::outer::Variant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Endpoint {
    Agent(usize),
    /// Sink of a ring reduction.
    Ring,
    /// Central coordinator of the standard and condensed variants.
    Coordinator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Tag {
    /// Once-per-coordination-step exchange of merged matrix columns.
    Prep,
    /// Neighbor exchanges inside an inner iteration.
    InnerLocal,
    /// Ring reductions inside an inner iteration.
    InnerGlobal,
    /// Sensitivities or Schur blocks sent to the coordinator.
    Forward,
    /// Right-hand sides, start-up sums and residual checks.
    Aux,
    /// Broadcast of the new multipliers.
    Backward,
}

impl Tag {
    pub fn as_str(self) -> &'static str {
        match self {
            Tag::Prep => "prep",
            Tag::InnerLocal => "inner-local",
            Tag::InnerGlobal => "inner-global",
            Tag::Forward => "forward",
            Tag::Aux => "aux",
            Tag::Backward => "backward",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub from: Endpoint,
    pub to: Endpoint,
    pub tag: Tag,
    pub payload: Vec<f64>,
}

/// Number of floats exchanged, per bucket.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CommLedger {
    pub local_prep: u64,
    pub local_iter: u64,
    pub global_iter: u64,
    pub forward: u64,
    pub aux: u64,
    pub backward: u64,
}

impl CommLedger {
    pub fn charge(&mut self, tag: Tag, floats: u64) {
        match tag {
            Tag::Prep => self.local_prep += floats,
            Tag::InnerLocal => self.local_iter += floats,
            Tag::InnerGlobal => self.global_iter += floats,
            Tag::Forward => self.forward += floats,
            Tag::Aux => self.aux += floats,
            Tag::Backward => self.backward += floats,
        }
    }

    /// Neighbor-to-neighbor floats (preparation plus iterations).
    pub fn local(&self) -> u64 {
        self.local_prep + self.local_iter
    }

    /// Floats that travel beyond a neighborhood (reductions plus forward).
    pub fn global(&self) -> u64 {
        self.global_iter + self.forward
    }

    pub fn total(&self) -> u64 {
        self.local_prep + self.local_iter + self.global_iter + self.forward + self.aux + self.backward
    }
}

impl Add for CommLedger {
    type Output = CommLedger;
    fn add(self, o: CommLedger) -> CommLedger {
        CommLedger {
            local_prep: self.local_prep + o.local_prep,
            local_iter: self.local_iter + o.local_iter,
            global_iter: self.global_iter + o.global_iter,
            forward: self.forward + o.forward,
            aux: self.aux + o.aux,
            backward: self.backward + o.backward,
        }
    }
}

impl AddAssign for CommLedger {
    fn add_assign(&mut self, o: CommLedger) {
        *self = *self + o;
    }
}

impl Sub for CommLedger {
    type Output = CommLedger;
    fn sub(self, o: CommLedger) -> CommLedger {
        CommLedger {
            local_prep: self.local_prep - o.local_prep,
            local_iter: self.local_iter - o.local_iter,
            global_iter: self.global_iter - o.global_iter,
            forward: self.forward - o.forward,
            aux: self.aux - o.aux,
            backward: self.backward - o.backward,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceRecord {
    pub round: u64,
    pub from: Endpoint,
    pub to: Endpoint,
    pub tag: Tag,
    pub len: usize,
}

/// Messages delivered in one round, sorted by `(from, to, tag)`.
#[derive(Debug, Clone, Default)]
pub struct Inbox {
    messages: Vec<Message>,
}

impl Inbox {
    pub fn all(&self) -> &[Message] {
        &self.messages
    }

    pub fn to(&self, to: Endpoint) -> impl Iterator<Item = &Message> {
        self.messages.iter().filter(move |m| m.to == to)
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    n_agents: usize,
    round: u64,
    ledger: CommLedger,
    trace: Vec<TraceRecord>,
    record_trace: bool,
}

impl Network {
    pub fn new(n_agents: usize) -> Self {
        Self {
            n_agents,
            round: 0,
            ledger: CommLedger::default(),
            trace: Vec::new(),
            record_trace: true,
        }
    }

    /// Disable per-message trace records (the ledger is always kept).
    pub fn without_trace(mut self) -> Self {
        self.record_trace = false;
        self
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn ledger(&self) -> CommLedger {
        self.ledger
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    fn check(&self, e: Endpoint) -> Result<()> {
        match e {
            Endpoint::Agent(id) if id >= self.n_agents => Err(Error::UnknownAgent { id }),
            _ => Ok(()),
        }
    }

    /// Deliver all messages of one round at once.
    pub fn round_exchange(&mut self, mut outbox: Vec<Message>) -> Result<Inbox> {
        for m in &outbox {
            self.check(m.from)?;
            self.check(m.to)?;
            if m.payload.is_empty() {
                return Err(Error::Shape(alloc::format!(
                    "empty payload from {:?} to {:?}",
                    m.from,
                    m.to
                )));
            }
        }
        if outbox.is_empty() {
            return Ok(Inbox::default());
        }
        outbox.sort_by(|a, b| (a.from, a.to, a.tag).cmp(&(b.from, b.to, b.tag)));
        for m in &outbox {
            self.ledger.charge(m.tag, m.payload.len() as u64);
            if self.record_trace {
                self.trace.push(TraceRecord {
                    round: self.round,
                    from: m.from,
                    to: m.to,
                    tag: m.tag,
                    len: m.payload.len(),
                });
            }
        }
        self.round += 1;
        Ok(Inbox { messages: outbox })
    }

    /// Ring reduction of one scalar per agent, accumulated in agent order.
    pub fn ring_sum(&mut self, partials: &[f64], tag: Tag) -> Result<f64> {
        if partials.len() != self.n_agents {
            return Err(Error::Shape(alloc::format!(
                "ring sum over {} partials for {} agents",
                partials.len(),
                self.n_agents
            )));
        }
        let mut acc = 0.0;
        for (i, &p) in partials.iter().enumerate() {
            acc += p;
            let to = if i + 1 < self.n_agents {
                Endpoint::Agent(i + 1)
            } else {
                Endpoint::Ring
            };
            let inbox = self.round_exchange(alloc::vec![Message {
                from: Endpoint::Agent(i),
                to,
                tag,
                payload: alloc::vec![acc],
            }])?;
            acc = inbox.all()[0].payload[0];
        }
        Ok(acc)
    }

    /// Send `values` from the coordinator to every agent.
    pub fn broadcast(&mut self, values: &[f64], tag: Tag) -> Result<Inbox> {
        let outbox = (0..self.n_agents)
            .map(|i| Message {
                from: Endpoint::Coordinator,
                to: Endpoint::Agent(i),
                tag,
                payload: values.to_vec(),
            })
            .collect();
        self.round_exchange(outbox)
    }
}

/// Per-agent dimensions entering the standard-variant bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AgentDims {
    pub n_x: usize,
    pub n_g: usize,
}

/// Closed-form ledger of one coordination step.
///
/// Assumes every consensus row is shared by exactly two agents and, for the
/// inner methods, that iterations run for the given count with no residual
/// checks. For [`Variant::Standard`] the forward figure is the lower bound
/// `Σ (n_x + n_g)(n_x + n_g + 1)/2`; the measured count also includes active
/// inequality rows.
pub fn expected_counts(
    variant: Variant,
    n_c: usize,
    n_agents: usize,
    n_cg: usize,
    n_ad: usize,
    dims: &[AgentDims],
) -> CommLedger {
    let (n_c, n, n_cg, n_ad) = (n_c as u64, n_agents as u64, n_cg as u64, n_ad as u64);
    let broadcast = n * n_c;
    match variant {
        Variant::Standard => {
            let forward = dims
                .iter()
                .map(|d| {
                    let k = (d.n_x + d.n_g) as u64;
                    k * (k + 1) / 2
                })
                .sum::<u64>();
            let grads = dims.iter().map(|d| d.n_x as u64).sum::<u64>();
            CommLedger {
                forward,
                aux: grads + 2 * n_c,
                backward: broadcast + grads,
                ..Default::default()
            }
        }
        Variant::CondensedExact => CommLedger {
            forward: n_c * n_c + n_c,
            aux: 2 * n_c,
            backward: broadcast,
            ..Default::default()
        },
        Variant::BilevelCg => CommLedger {
            local_prep: 2 * n_c * n_c,
            local_iter: 2 * n_c * n_cg,
            global_iter: 2 * n * n_cg,
            aux: 2 * n_c + n,
            backward: broadcast,
            ..Default::default()
        },
        Variant::BilevelAdmm => CommLedger {
            local_iter: 2 * n_c * n_ad,
            backward: broadcast,
            ..Default::default()
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn empty_round_leaves_ledger_unchanged() {
        let mut net = Network::new(2);
        let inbox = net.round_exchange(Vec::new()).unwrap();
        assert!(inbox.is_empty());
        assert_eq!(net.ledger(), CommLedger::default());
    }

    #[test]
    fn single_message_charges_its_bucket() {
        let mut net = Network::new(2);
        net.round_exchange(vec![Message {
            from: Endpoint::Agent(0),
            to: Endpoint::Agent(1),
            tag: Tag::InnerLocal,
            payload: vec![0.0; 7],
        }])
        .unwrap();
        assert_eq!(net.ledger().local_iter, 7);
        assert_eq!(net.ledger().total(), 7);
    }

    #[test]
    fn unknown_destination_is_rejected() {
        let mut net = Network::new(2);
        let err = net
            .round_exchange(vec![Message {
                from: Endpoint::Agent(0),
                to: Endpoint::Agent(5),
                tag: Tag::Aux,
                payload: vec![1.0],
            }])
            .unwrap_err();
        assert!(matches!(err, Error::UnknownAgent { id: 5 }));
    }

    #[test]
    fn delivery_order_is_sorted() {
        let mut net = Network::new(3);
        let msg = |f, t, tag| Message {
            from: Endpoint::Agent(f),
            to: Endpoint::Agent(t),
            tag,
            payload: vec![1.0],
        };
        let inbox = net
            .round_exchange(vec![msg(2, 0, Tag::Aux), msg(0, 2, Tag::Aux), msg(0, 1, Tag::Aux), msg(0, 1, Tag::Prep)])
            .unwrap();
        let order: Vec<_> = inbox.all().iter().map(|m| (m.from, m.to, m.tag)).collect();
        let mut sorted = order.clone();
        sorted.sort();
        assert_eq!(order, sorted);
        assert_eq!(net.trace().len(), 4);
    }

    #[test]
    fn ring_sum_costs_one_float_per_agent() {
        let mut net = Network::new(4);
        let s = net.ring_sum(&[1.0, 2.0, 3.0, 4.0], Tag::InnerGlobal).unwrap();
        assert_eq!(s, 10.0);
        assert_eq!(net.ledger().global_iter, 4);
        assert_eq!(net.trace().last().unwrap().to, Endpoint::Ring);
    }

    #[test]
    fn closed_forms() {
        let c = expected_counts(Variant::CondensedExact, 32, 4, 0, 0, &[]);
        assert_eq!(c.forward, 1056);
        let cg = expected_counts(Variant::BilevelCg, 32, 4, 80, 0, &[]);
        assert_eq!((cg.local_prep, cg.local_iter, cg.global_iter), (2048, 5120, 640));
        let ad = expected_counts(Variant::BilevelAdmm, 32, 4, 0, 400, &[]);
        assert_eq!(ad.local_iter, 25_600);
    }

    #[test]
    fn standard_bound_for_long_horizon_robot_dimensions() {
        let dims = [AgentDims { n_x: 700, n_g: 302 }, AgentDims { n_x: 500, n_g: 302 }];
        let std = expected_counts(Variant::Standard, 200, 2, 0, 0, &dims);
        assert_eq!(std.forward, 824_506);
    }
}
