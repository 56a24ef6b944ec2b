//! Synchronous message-passing network simulator with per-round, per-edge
//! bit budgets, plus the bit-level codecs protocols share.
//!
//! The model: computation proceeds in rounds. In each round every running
//! node reads the messages its neighbors sent in the previous round, steps
//! its local state, and posts at most one message per incident edge, each
//! at most `B = budget_factor·⌈log₂(max(n,2))⌉` bits. Nodes address
//! neighbors by *port* (a local edge number); identifiers travel inside
//! payloads, never in the addressing, so a program learns the topology
//! only through what its neighbors say.
//!
//! The engine is deterministic: nodes step in ascending id order, but
//! since a step sees only the previous round's messages, any schedule
//! would produce the same trace.

pub mod bits;

use std::collections::BTreeMap;

use serde::Serialize;

use crate::graph::{Graph, NodeId};
pub use bits::{split_chunks, BitReader, BitString, BitWriter, BitsError};

/// Errors from simulator runs.
#[derive(Debug, thiserror::Error)]
pub enum SimError {
    /// The network graph must be connected.
    #[error("the network graph is not connected")]
    NotConnected,
    /// A node posted a message over the per-edge round budget: a protocol
    /// bug, never recoverable.
    #[error("round {round}: message {from} -> {to} of {bits} bits exceeds the budget of {budget}")]
    BudgetExceeded { round: u32, from: NodeId, to: NodeId, bits: usize, budget: usize },
    /// Nodes were still running when the round limit was reached.
    #[error("nodes still running after {0} rounds")]
    RoundLimit(u32),
    /// The component is wider than the allotted flooding window.
    #[error("leader election did not stabilize within the round cap")]
    CapExceeded,
    /// A malformed message or programming error inside a node program.
    #[error("protocol error: {0}")]
    Protocol(String),
}

/// What a node sees at startup: its identifier and its degree. Ports are
/// `0..degree`; which neighbor is behind a port is not revealed.
#[derive(Clone, Copy, Debug)]
pub struct NodeCtx {
    pub id: NodeId,
    pub degree: usize,
}

/// Outgoing messages of one node for one round, by port.
#[derive(Debug)]
pub struct Outbox {
    slots: Vec<Option<BitString>>,
}

impl Outbox {
    fn new(degree: usize) -> Self {
        Self { slots: vec![None; degree] }
    }

    /// Posts `msg` on `port`. At most one message per port per round.
    pub fn send(&mut self, port: usize, msg: BitString) {
        assert!(
            self.slots[port].replace(msg).is_none(),
            "two messages on one port in one round"
        );
    }

    /// Posts the same message on every port.
    pub fn broadcast(&mut self, msg: &BitString) {
        for port in 0..self.slots.len() {
            self.send(port, msg.clone());
        }
    }
}

/// A node's verdict after stepping: keep running or halt with an output.
#[derive(Clone, Debug)]
pub enum Status<O> {
    Running,
    Halted(O),
}

/// A per-node protocol. The engine creates one value per node (see
/// [`run`]), calls `init` once, then `step` every round until the node
/// halts. `step` must be a pure function of the node's state, the round
/// number, and the inbox.
pub trait NodeProgram {
    type Output: Clone;

    fn init(&mut self, ctx: &NodeCtx);

    /// One synchronous round. `inbox[p]` holds the message the neighbor
    /// behind port `p` sent last round, if any. Messages posted to
    /// `outbox` are delivered next round (also in the halting round).
    fn step(
        &mut self,
        round: u32,
        inbox: &[Option<BitString>],
        outbox: &mut Outbox,
    ) -> Status<Self::Output>;
}

/// One delivered message, as recorded in the trace.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MessageRecord {
    pub round: u32,
    pub from: NodeId,
    pub to: NodeId,
    pub bits: usize,
}

/// Everything observable about a run: every message with its size, halt
/// rounds, and the budget in force. Append-only while running.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RoundTrace {
    pub budget_bits: usize,
    pub rounds: u32,
    pub messages: Vec<MessageRecord>,
    pub halted: BTreeMap<NodeId, u32>,
}

impl RoundTrace {
    pub fn total_messages(&self) -> usize {
        self.messages.len()
    }

    pub fn max_bits(&self) -> usize {
        self.messages.iter().map(|m| m.bits).max().unwrap_or(0)
    }

    /// Messages sent in one round, in (from, to) order.
    pub fn in_round(&self, round: u32) -> impl Iterator<Item = &MessageRecord> {
        self.messages.iter().filter(move |m| m.round == round)
    }

    /// JSON lines: one record per message, then one summary record.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for m in &self.messages {
            out.push_str(&serde_json::json!({
                "round": m.round, "u": m.from, "v": m.to, "bits": m.bits,
            }).to_string());
            out.push('\n');
        }
        out.push_str(&serde_json::json!({
            "rounds": self.rounds,
            "max_bits": self.max_bits(),
            "total_messages": self.total_messages(),
            "budget_bits": self.budget_bits,
        }).to_string());
        out.push('\n');
        out
    }
}

/// The per-edge, per-round message budget: `budget_factor` bits for every
/// bit of an identifier.
pub fn round_budget(n: usize, budget_factor: u32) -> usize {
    let log = usize::BITS - (n.max(2) - 1).leading_zeros();
    budget_factor as usize * log as usize
}

/// Default budget factor: fits an id, a class id, and framing at the
/// scales exercised here while staying logarithmic.
pub const DEFAULT_BUDGET_FACTOR: u32 = 64;

/// Runs `make(v)`'s program on every node of the connected network `g`
/// until all halt, or errors with [`SimError::RoundLimit`] after
/// `max_rounds`. Returns each node's output and the full message trace.
pub fn run<P: NodeProgram>(
    g: &Graph,
    make: impl Fn(NodeId) -> P,
    budget_factor: u32,
    max_rounds: u32,
) -> Result<(BTreeMap<NodeId, P::Output>, RoundTrace), SimError> {
    if g.n() == 0 || !g.is_connected() {
        return Err(SimError::NotConnected);
    }
    let budget = round_budget(g.n(), budget_factor);
    let ids: Vec<NodeId> = g.nodes().collect();
    let index: BTreeMap<NodeId, usize> = ids.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    // ports are ascending neighbor positions; port_peer[i][p] is the
    // neighbor node behind port p of node i, and back_port[i][p] is the
    // port this node occupies on that neighbor
    let mut port_peer: Vec<Vec<usize>> = Vec::with_capacity(ids.len());
    for &v in &ids {
        let mut peers: Vec<NodeId> = g.neighbors(v).collect();
        peers.sort_unstable();
        port_peer.push(peers.into_iter().map(|w| index[&w]).collect());
    }
    let back_port: Vec<Vec<usize>> = port_peer
        .iter()
        .enumerate()
        .map(|(i, peers)| {
            peers
                .iter()
                .map(|&w| port_peer[w].iter().position(|&x| x == i).expect("symmetric adjacency"))
                .collect()
        })
        .collect();

    let mut programs: Vec<P> = ids.iter().map(|&v| make(v)).collect();
    for (i, p) in programs.iter_mut().enumerate() {
        p.init(&NodeCtx { id: ids[i], degree: port_peer[i].len() });
    }

    let mut running: Vec<bool> = vec![true; ids.len()];
    let mut outputs: BTreeMap<NodeId, P::Output> = BTreeMap::new();
    let mut inboxes: Vec<Vec<Option<BitString>>> =
        ids.iter().enumerate().map(|(i, _)| vec![None; port_peer[i].len()]).collect();
    let mut trace = RoundTrace { budget_bits: budget, ..RoundTrace::default() };

    for round in 1..=max_rounds {
        trace.rounds = round;
        let mut next: Vec<Vec<Option<BitString>>> =
            ids.iter().enumerate().map(|(i, _)| vec![None; port_peer[i].len()]).collect();
        for i in 0..ids.len() {
            if !running[i] {
                continue;
            }
            let mut outbox = Outbox::new(port_peer[i].len());
            let status = programs[i].step(round, &inboxes[i], &mut outbox);
            for (port, slot) in outbox.slots.into_iter().enumerate() {
                let Some(msg) = slot else { continue };
                let to = port_peer[i][port];
                if msg.len() > budget {
                    return Err(SimError::BudgetExceeded {
                        round,
                        from: ids[i],
                        to: ids[to],
                        bits: msg.len(),
                        budget,
                    });
                }
                trace.messages.push(MessageRecord {
                    round,
                    from: ids[i],
                    to: ids[to],
                    bits: msg.len(),
                });
                next[to][back_port[i][port]] = Some(msg);
            }
            if let Status::Halted(out) = status {
                running[i] = false;
                outputs.insert(ids[i], out);
                trace.halted.insert(ids[i], round);
            }
        }
        inboxes = next;
        if running.iter().all(|r| !r) {
            return Ok((outputs, trace));
        }
    }
    Err(SimError::RoundLimit(max_rounds))
}

// -------------------------------------------------------------------
// leader election

/// Flooding program: every distinguished node repeats the smallest id it
/// has heard; after `cap` rounds it compares once more with its neighbors
/// and reports whether its value was still moving.
struct FloodMin {
    active: bool,
    cap: u32,
    id: NodeId,
    best: u64,
    stable: bool,
}

impl NodeProgram for FloodMin {
    type Output = Option<(NodeId, bool)>;

    fn init(&mut self, ctx: &NodeCtx) {
        self.id = ctx.id;
        self.best = u64::from(ctx.id.0);
    }

    fn step(
        &mut self,
        round: u32,
        inbox: &[Option<BitString>],
        outbox: &mut Outbox,
    ) -> Status<Self::Output> {
        if !self.active {
            return Status::Halted(None);
        }
        for msg in inbox.iter().flatten() {
            let v = BitReader::new(msg).read_varint().expect("well-formed flood message");
            if v < self.best {
                self.best = v;
                if round > self.cap {
                    // the verification round caught a still-moving value
                    self.stable = false;
                }
            }
        }
        if round <= self.cap + 1 {
            let mut w = BitWriter::new();
            w.push_varint(self.best);
            outbox.broadcast(&w.finish());
        }
        if round == self.cap + 2 {
            Status::Halted(Some((NodeId(self.best as u32), self.stable)))
        } else {
            Status::Running
        }
    }
}

/// Each node of `active` learns the minimum id in its component of the
/// subgraph induced by `active`, by flooding for `round_cap` rounds.
/// Errors with [`SimError::CapExceeded`] if some component was still wide
/// enough that values had not stabilized.
pub fn leader_election(
    g: &Graph,
    active: &std::collections::BTreeSet<NodeId>,
    round_cap: u32,
) -> Result<BTreeMap<NodeId, NodeId>, SimError> {
    for v in active {
        if !g.has_node(*v) {
            return Err(SimError::Protocol(format!("active node {v} is not in the graph")));
        }
    }
    let (outputs, _) = run(
        g,
        |v| FloodMin {
            active: active.contains(&v),
            cap: round_cap,
            id: v,
            best: 0,
            stable: true,
        },
        DEFAULT_BUDGET_FACTOR,
        round_cap + 2,
    )?;
    let mut leaders = BTreeMap::new();
    for (v, out) in outputs {
        if let Some((leader, stable)) = out {
            if !stable {
                return Err(SimError::CapExceeded);
            }
            leaders.insert(v, leader);
        }
    }
    Ok(leaders)
}
