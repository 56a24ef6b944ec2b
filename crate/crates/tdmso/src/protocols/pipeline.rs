//! The node program shared by every distributed run.
//!
//! One state machine walks a fixed, globally computable round schedule, so
//! every node always knows which phase the network is in without any
//! coordination messages:
//!
//! 1. **Tree construction** — repeated min-id floods elect a leader per
//!    leftover component; the unique deepest marked neighbor of each
//!    component claims one new vertex per step, growing an elimination
//!    tree one depth level per step.
//! 2. **Validation** — leftover unmarked vertices raise an alarm; every
//!    tree vertex learns its root path, exchanges it with all neighbors,
//!    and checks that each edge connects an ancestor–descendant pair; a
//!    bottom-up sweep aggregates alarms and the tree depth, and the root's
//!    verdict flows back down.
//! 3. **Bags** — each vertex extends its parent's bag (ancestor ids,
//!    weights, label masks, and the edges among them) with itself and
//!    forwards the result to its children.
//! 4. **Mission** — the requested sweep: single-round class-id messages
//!    for deciding, windowed table exchanges for optimizing and counting,
//!    and a top-down unwind that leaves each vertex its optimal fragment.
//!
//! Message payloads wider than the round budget travel as chunk trains
//! ([`Tx`]) over fixed windows sized from worst-case payload bounds, and
//! receivers accumulate chunks per port until their scheduled parse round.

use std::collections::BTreeMap;

use num_bigint::BigUint;

use crate::algebra::{
    glue_matrix_for, ClassId, RegularPredicate, SelectedSet, SetSort, WTerminalGraph,
};
use crate::dp::{fold_counts, leaf_assignments, opt_fold, opt_leaf_step, selected_value, Prov, Step};
use crate::graph::{ekey, Graph, NodeId};
use crate::mso::Assignment;
use crate::sim::{split_chunks, BitReader, BitString, BitWriter, NodeCtx, NodeProgram, Outbox, Status};

use super::{BagState, ElimTreeState};

/// Worst-case bit widths of the varint encodings: a `u32` varint (ids,
/// counts), a zigzag `i64` varint (weights), and the fixed 16-bit depth
/// field used in roll-up and verdict messages.
const VARINT32_BITS: u64 = 40;
const SIGNED64_BITS: u64 = 80;
const DEPTH_BITS: usize = 16;

fn ceil_div(num: u64, den: u64) -> u64 {
    num.div_ceil(den)
}

/// Bits needed to name one of `count` classes: `ceil(log2(count))`, zero
/// when a single class exists.
pub(crate) fn ceil_log2(count: usize) -> usize {
    if count <= 1 {
        0
    } else {
        (usize::BITS - (count - 1).leading_zeros()) as usize
    }
}

/// What the run computes. [`Mission::Bags`] starts from a provided forest
/// (each node is seeded with its local tree pointers); every other mission
/// builds the tree from scratch first.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Mission {
    Elim,
    Bags,
    Decide,
    Optimize,
    Count,
    OptMarked,
}

/// A node's slice of a known elimination forest, baked in for
/// [`Mission::Bags`]: the forest is that run's *input*, so handing each
/// node its own pointers does not leak anything the protocol should earn.
#[derive(Clone, Debug)]
pub(crate) struct LocalSeed {
    pub depth: u32,
    pub parent_id: Option<NodeId>,
    pub children_ids: Vec<NodeId>,
}

/// Weight and label mask of one incident edge, indexed by port so node
/// programs never see neighbor ids they have not received in messages.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct PortAttr {
    pub weight: i64,
    pub mask: u64,
}

/// Round map of the tree-construction and validation phases, computable
/// from `n`, the depth budget, and the round budget alone.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Schedule {
    /// Per-edge bits per round.
    pub budget: usize,
    /// `2^d`: flood window, attach-step cap, and path-length cap.
    pub d_cap: u32,
    /// Rounds per announce window: one `(leader, id)` pair.
    pub fa: u32,
    /// Rounds per path window: one root path of up to `d_cap` ids.
    pub f2: u32,
    /// Rounds per attach step: flood window + announce + claim + accept.
    pub s_step: u32,
    /// Last attach round; unmarked vertices raise alarms right after.
    pub a_end: u32,
    pub r_alarm: u32,
    pub paths_end: u32,
    pub exch_end: u32,
    pub up_end: u32,
    /// Every node halts or transitions here, uniformly.
    pub verdict_end: u32,
}

impl Schedule {
    pub(crate) fn new(d: u32, budget: usize) -> Schedule {
        let d_cap = 1u32 << d;
        let b = budget as u64;
        let fa = ceil_div(2 * VARINT32_BITS, b) as u32;
        let f2 = ceil_div(VARINT32_BITS + u64::from(d_cap) * VARINT32_BITS, b) as u32;
        let s_step = d_cap + fa + 2;
        let a_end = d_cap + (d_cap - 1) * s_step;
        let r_alarm = a_end + 1;
        let paths_end = r_alarm + (d_cap - 1) * f2;
        let exch_end = paths_end + f2;
        let up_end = exch_end + d_cap;
        let verdict_end = up_end + d_cap;
        Schedule { budget, d_cap, fa, f2, s_step, a_end, r_alarm, paths_end, exch_end, up_end, verdict_end }
    }

    /// Round cap for tree construction plus validation: `10 * 4^d` covers
    /// `verdict_end` for every depth budget and round budget of at least 64
    /// bits.
    pub(crate) fn round_limit(&self) -> u32 {
        10 * self.d_cap * self.d_cap
    }
}

/// Round map of the bag and mission phases. Everything here follows from
/// globally known quantities — the verdict carries the tree depth, and the
/// class count, label vocabulary, and count-width bound are frozen inputs —
/// so each node computes the same tail locally.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Tail {
    pub d_t: u32,
    /// Rounds per bag window.
    pub f3: u32,
    pub bags_end: u32,
    /// Rounds per bottom-up mission window (1 for plain deciding).
    pub up_w: u32,
    /// Round the root finishes the bottom-up sweep.
    pub root_done: u32,
    /// Uniform halt round of the mission.
    pub end: u32,
    /// Bits per class id.
    pub cw: usize,
}

impl Tail {
    pub(crate) fn new(
        mission: Mission,
        base: u32,
        d_t: u32,
        budget: usize,
        vocab_len: usize,
        class_count: usize,
        count_bits: usize,
    ) -> Result<Tail, String> {
        let b = budget as u64;
        let dt = u64::from(d_t);
        let cw = ceil_log2(class_count);
        let c = class_count as u64;
        // Bag payload bound: member count, then per member id + weight +
        // label mask, then edge count and per edge two bag indices.
        let bag_bits = VARINT32_BITS
            + dt * (VARINT32_BITS + SIGNED64_BITS + vocab_len as u64)
            + VARINT32_BITS
            + dt * dt.saturating_sub(1) / 2 * (2 * VARINT32_BITS);
        let f3 = ceil_div(bag_bits, b).max(1);
        let bags_end = u64::from(base) + (dt - 1) * f3;
        let (up_w, root_done, end) = match mission {
            Mission::Bags => (0, bags_end + 1, bags_end + 1),
            Mission::Decide => (1, bags_end + dt, bags_end + dt),
            Mission::Optimize => {
                let w = ceil_div(c * (1 + SIGNED64_BITS), b).max(1);
                let rd = bags_end + (dt - 1) * w + 1;
                (w, rd, rd + dt - 1)
            }
            Mission::Count => {
                let per = 1 + DEPTH_BITS as u64 + count_bits as u64;
                let w = ceil_div(c * per, b).max(1);
                let rd = bags_end + (dt - 1) * w + 1;
                (w, rd, rd)
            }
            Mission::OptMarked => {
                let w = ceil_div(c * (1 + SIGNED64_BITS) + cw as u64 + SIGNED64_BITS, b).max(1);
                let rd = bags_end + (dt - 1) * w + 1;
                (w, rd, rd)
            }
            Mission::Elim => return Err("tree construction has no tail".to_owned()),
        };
        let narrow = |v: u64, what: &str| -> Result<u32, String> {
            u32::try_from(v).map_err(|_| format!("{what} overflows the round counter"))
        };
        Ok(Tail {
            d_t,
            f3: narrow(f3, "bag window")?,
            bags_end: narrow(bags_end, "bag phase")?,
            up_w: narrow(up_w, "mission window")?,
            root_done: narrow(root_done, "bottom-up sweep")?,
            end: narrow(end, "mission")?,
            cw,
        })
    }
}

/// Everything identical across nodes in one run.
#[derive(Clone)]
pub(crate) struct Config<'a> {
    pub mission: Mission,
    pub sched: Schedule,
    /// Present for seeded runs; from-scratch runs derive the tail from the
    /// verdict's tree depth.
    pub tail: Option<Tail>,
    pub p: Option<&'a dyn RegularPredicate>,
    /// Labels shipped in bag payloads, as mask bit positions.
    pub vocab: Vec<String>,
    /// Position of the marking label in `vocab` ([`Mission::OptMarked`]).
    pub mark_bit: Option<usize>,
    /// `1` to maximize, `-1` to minimize.
    pub sign: i64,
    pub free: Vec<(String, SetSort)>,
    pub class_count: usize,
    /// Upper bound on any per-class count's bit length.
    pub count_bits: usize,
}

/// A chunk train: one payload split over consecutive rounds starting at
/// `base`, sent to a fixed port set. Pumping outside the window is a no-op,
/// so the owner can pump every round unconditionally.
struct Tx {
    chunks: Vec<BitString>,
    ports: TxPorts,
    base: u32,
}

enum TxPorts {
    All,
    One(usize),
    Many(Vec<usize>),
}

impl Tx {
    fn new(payload: &BitString, ports: TxPorts, base: u32, budget: usize, window: u32) -> Result<Tx, String> {
        let chunks = split_chunks(payload, budget);
        if chunks.len() as u64 > u64::from(window) {
            return Err(format!(
                "payload of {} bits needs {} rounds but the window has {window}",
                payload.len(),
                chunks.len()
            ));
        }
        Ok(Tx { chunks, ports, base })
    }

    fn pump(&self, round: u32, degree: usize, outbox: &mut Outbox) {
        if round < self.base {
            return;
        }
        let Some(chunk) = self.chunks.get((round - self.base) as usize) else { return };
        match &self.ports {
            TxPorts::All => {
                for port in 0..degree {
                    outbox.send(port, chunk.clone());
                }
            }
            TxPorts::One(port) => outbox.send(*port, chunk.clone()),
            TxPorts::Many(ports) => {
                for &port in ports {
                    outbox.send(port, chunk.clone());
                }
            }
        }
    }
}

/// Per-node result of a run.
#[derive(Clone, Debug)]
pub(crate) enum NodeOutput {
    /// The graph does not admit a tree within the depth budget.
    Large,
    Elim(ElimTreeState),
    Bags(BagState),
    Decide { accept: bool },
    Opt { satisfiable: bool, value: Option<i64>, fragment: SelectedSet },
    Count { total: Option<BigUint> },
    Marked { accept: bool },
    /// An internal invariant broke; the driver surfaces this as an error.
    Failed(String),
}

/// The node program. Construct one per vertex with its baked-in local
/// attributes, then hand the batch to [`crate::sim::run`].
pub(crate) struct Pipeline<'a> {
    cfg: Config<'a>,
    id: NodeId,
    w_self: i64,
    mask_self: u64,
    port_attrs: Vec<PortAttr>,
    seed: Option<LocalSeed>,
    degree: usize,

    // Tree construction.
    marked: bool,
    depth: u32,
    leader: NodeId,
    parent_port: Option<usize>,
    parent_id: Option<NodeId>,
    children: Vec<(NodeId, usize)>,
    claimed: BTreeMap<usize, NodeId>,

    // Validation.
    alarm: bool,
    path: Option<Vec<NodeId>>,
    port_ids: Vec<Option<NodeId>>,
    nbr_port: BTreeMap<NodeId, usize>,
    valid: bool,
    d_t: u32,

    // Transport.
    rx: Vec<Vec<BitString>>,
    tx: Option<Tx>,

    // Bags and mission.
    tail: Option<Tail>,
    bag: Vec<NodeId>,
    bag_w: BTreeMap<NodeId, i64>,
    bag_mask: BTreeMap<NodeId, u64>,
    bag_edges: Vec<(NodeId, NodeId)>,
    bag_known: bool,
    chain: Vec<Step>,
    root_best: Option<(u32, i64)>,
    sat: Option<bool>,
    frag: Option<SelectedSet>,
}

impl<'a> Pipeline<'a> {
    pub(crate) fn new(
        cfg: Config<'a>,
        id: NodeId,
        w_self: i64,
        mask_self: u64,
        port_attrs: Vec<PortAttr>,
        seed: Option<LocalSeed>,
    ) -> Pipeline<'a> {
        let tail = cfg.tail;
        Pipeline {
            cfg,
            id,
            w_self,
            mask_self,
            port_attrs,
            seed,
            degree: 0,
            marked: false,
            depth: 0,
            leader: id,
            parent_port: None,
            parent_id: None,
            children: Vec::new(),
            claimed: BTreeMap::new(),
            alarm: false,
            path: None,
            port_ids: Vec::new(),
            nbr_port: BTreeMap::new(),
            valid: false,
            d_t: 0,
            rx: Vec::new(),
            tx: None,
            tail,
            bag: Vec::new(),
            bag_w: BTreeMap::new(),
            bag_mask: BTreeMap::new(),
            bag_edges: Vec::new(),
            bag_known: false,
            chain: Vec::new(),
            root_best: None,
            sat: None,
            frag: None,
        }
    }

    fn advance(
        &mut self,
        round: u32,
        inbox: &[Option<BitString>],
        outbox: &mut Outbox,
    ) -> Result<Option<NodeOutput>, String> {
        if self.cfg.mission == Mission::Bags {
            return self.advance_seeded(round, inbox, outbox);
        }
        let sched = self.cfg.sched;
        if round <= sched.a_end {
            self.attach_round(round, inbox, outbox)?;
            return Ok(None);
        }
        if round <= sched.verdict_end {
            return self.validate_round(round, inbox, outbox);
        }
        let tail = self.tail.ok_or("mission rounds before the verdict")?;
        if round <= tail.bags_end {
            self.bag_round(round, sched.verdict_end, tail, inbox)?;
            return Ok(None);
        }
        self.mission_round(round, tail, inbox, outbox)
    }

    // ---- phase 1: tree construction -------------------------------------

    fn attach_round(
        &mut self,
        round: u32,
        inbox: &[Option<BitString>],
        outbox: &mut Outbox,
    ) -> Result<(), String> {
        let sched = self.cfg.sched;
        let w = sched.d_cap;
        if round == 1 {
            self.leader = self.id;
            self.flood(outbox);
            return Ok(());
        }
        if round <= w {
            self.merge_floods(inbox);
            self.flood(outbox);
            return Ok(());
        }
        let off = round - w - 1;
        let step = 2 + off / sched.s_step;
        let local = 1 + off % sched.s_step;
        if local == 1 {
            if step == 2 {
                // The initial flood has converged: component minima become
                // the roots.
                self.merge_floods(inbox);
                if self.leader == self.id {
                    self.marked = true;
                    self.depth = 1;
                }
            } else {
                self.collect_accepts(inbox);
            }
            if !self.marked {
                self.leader = self.id;
                self.flood(outbox);
            }
        } else if local <= w {
            if !self.marked {
                self.merge_floods(inbox);
                self.flood(outbox);
            }
        } else if local <= w + sched.fa {
            // Announce window: leftover vertices tell every neighbor their
            // component leader; claimants start listening one round later,
            // once the last flood messages have passed.
            if !self.marked {
                if local == w + 1 {
                    self.merge_floods(inbox);
                    let mut msg = BitWriter::new();
                    msg.push_varint(u64::from(self.leader.0));
                    msg.push_varint(u64::from(self.id.0));
                    self.tx = Some(Tx::new(&msg.finish(), TxPorts::All, round, sched.budget, sched.fa)?);
                }
            } else if self.depth + 1 == step && local >= w + 2 {
                self.rx_push_all(inbox);
            }
        } else if local == w + sched.fa + 1 {
            // Claim round: the unique deepest marked neighbor of each
            // component picks that component's smallest announcing vertex.
            if self.marked && self.depth + 1 == step {
                self.rx_push_all(inbox);
                let mut per_leader: BTreeMap<NodeId, (NodeId, usize)> = BTreeMap::new();
                for port in 0..self.degree {
                    let data = BitString::concat(&self.rx[port]);
                    if data.is_empty() {
                        continue;
                    }
                    let mut rd = BitReader::new(&data);
                    // Garbled announcements are skipped rather than fatal:
                    // construction may fail freely as long as validation
                    // catches the wreckage.
                    let (Ok(leader), Ok(sender)) = (rd.read_varint(), rd.read_varint()) else {
                        continue;
                    };
                    let (Ok(leader), Ok(sender)) = (u32::try_from(leader), u32::try_from(sender)) else {
                        continue;
                    };
                    let (leader, sender) = (NodeId(leader), NodeId(sender));
                    match per_leader.get(&leader) {
                        Some(&(best, _)) if best <= sender => {}
                        _ => {
                            per_leader.insert(leader, (sender, port));
                        }
                    }
                }
                self.clear_rx();
                for (sender, port) in per_leader.into_values() {
                    self.claimed.insert(port, sender);
                    let mut msg = BitWriter::new();
                    msg.push_varint(u64::from(self.id.0));
                    outbox.send(port, msg.finish());
                }
            }
        } else if !self.marked {
            // Accept round: join the smallest claimant.
            let mut best: Option<(NodeId, usize)> = None;
            for (port, slot) in inbox.iter().enumerate() {
                let Some(msg) = slot else { continue };
                let mut rd = BitReader::new(msg);
                let Ok(claimant) = rd.read_varint() else { continue };
                let Ok(claimant) = u32::try_from(claimant) else { continue };
                let claimant = NodeId(claimant);
                if best.is_none_or(|(b, _)| claimant < b) {
                    best = Some((claimant, port));
                }
            }
            if let Some((claimant, port)) = best {
                self.marked = true;
                self.depth = step;
                self.parent_id = Some(claimant);
                self.parent_port = Some(port);
                outbox.send(port, BitString::new());
            }
        }
        Ok(())
    }

    fn flood(&self, outbox: &mut Outbox) {
        let mut msg = BitWriter::new();
        msg.push_varint(u64::from(self.leader.0));
        outbox.broadcast(&msg.finish());
    }

    fn merge_floods(&mut self, inbox: &[Option<BitString>]) {
        for slot in inbox.iter().flatten() {
            let mut rd = BitReader::new(slot);
            let Ok(cand) = rd.read_varint() else { continue };
            let Ok(cand) = u32::try_from(cand) else { continue };
            self.leader = self.leader.min(NodeId(cand));
        }
    }

    fn collect_accepts(&mut self, inbox: &[Option<BitString>]) {
        for (&port, &child) in &self.claimed {
            if inbox[port].is_some() {
                self.children.push((child, port));
            }
        }
        self.claimed.clear();
    }

    // ---- phase 2: validation ---------------------------------------------

    fn validate_round(
        &mut self,
        round: u32,
        inbox: &[Option<BitString>],
        outbox: &mut Outbox,
    ) -> Result<Option<NodeOutput>, String> {
        let sched = self.cfg.sched;
        if round == sched.r_alarm {
            self.collect_accepts(inbox);
            if self.marked {
                self.children.sort_unstable();
            } else {
                let mut msg = BitWriter::new();
                msg.push_bit(true);
                outbox.broadcast(&msg.finish());
            }
            return Ok(None);
        }
        if round <= sched.paths_end {
            self.path_round(round, inbox)?;
            return Ok(None);
        }
        if round <= sched.exch_end {
            self.exchange_round(round, inbox)?;
            return Ok(None);
        }
        if round <= sched.up_end {
            self.up_round(round, inbox, outbox)?;
            return Ok(None);
        }
        self.verdict_round(round, inbox, outbox)
    }

    fn path_round(&mut self, round: u32, inbox: &[Option<BitString>]) -> Result<(), String> {
        let sched = self.cfg.sched;
        if round == sched.r_alarm + 1 {
            // Only alarms are in flight this round.
            if self.marked && inbox.iter().any(Option::is_some) {
                self.alarm = true;
            }
        } else if self.marked && self.path.is_none() {
            if let Some(port) = self.parent_port {
                self.rx_push(port, inbox);
            }
        }
        if !self.marked {
            return Ok(());
        }
        let off = round - sched.r_alarm - 1;
        let window = 1 + off / sched.f2;
        let local = 1 + off % sched.f2;
        if local == 1 && self.depth == window {
            let path = if self.depth == 1 { vec![self.id] } else { self.take_parent_path()? };
            let payload = enc_path(&path);
            let ports = self.children.iter().map(|&(_, port)| port).collect();
            self.path = Some(path);
            self.tx = Some(Tx::new(&payload, TxPorts::Many(ports), round, sched.budget, sched.f2)?);
        }
        Ok(())
    }

    fn exchange_round(&mut self, round: u32, inbox: &[Option<BitString>]) -> Result<(), String> {
        let sched = self.cfg.sched;
        if !self.marked {
            return Ok(());
        }
        if round == sched.paths_end + 1 {
            // Deepest vertices receive their final path chunk right now.
            if self.path.is_none() {
                if let Some(port) = self.parent_port {
                    self.rx_push(port, inbox);
                }
                let path = self.take_parent_path()?;
                self.path = Some(path);
            }
            let payload = enc_path(self.path.as_ref().expect("path is set above"));
            self.tx = Some(Tx::new(&payload, TxPorts::All, round, sched.budget, sched.f2)?);
        } else {
            self.rx_push_all(inbox);
        }
        Ok(())
    }

    /// Drains the parent-port accumulator, parses the parent's root path,
    /// and appends this vertex.
    fn take_parent_path(&mut self) -> Result<Vec<NodeId>, String> {
        let port = self.parent_port.ok_or("no parent to take a path from")?;
        let data = BitString::concat(&std::mem::take(&mut self.rx[port]));
        let mut path = dec_path(&data)?;
        path.push(self.id);
        Ok(path)
    }

    fn up_round(
        &mut self,
        round: u32,
        inbox: &[Option<BitString>],
        outbox: &mut Outbox,
    ) -> Result<(), String> {
        let sched = self.cfg.sched;
        if !self.marked {
            return Ok(());
        }
        let j = round - sched.exch_end;
        if j == 1 {
            self.rx_push_all(inbox);
            self.check_neighbor_paths()?;
        }
        if self.depth == sched.d_cap - j + 1 {
            let mut agg_alarm = self.alarm;
            let mut max_depth = self.depth;
            for &(child, port) in &self.children {
                let Some(msg) = &inbox[port] else {
                    return Err(format!("missing roll-up from child {child}"));
                };
                let mut rd = BitReader::new(msg);
                let a = rd.read_bit().map_err(|e| e.to_string())?;
                let d = rd.read_bits(DEPTH_BITS).map_err(|e| e.to_string())?;
                agg_alarm |= a;
                max_depth = max_depth.max(d as u32);
            }
            if self.depth == 1 {
                self.valid = !agg_alarm;
                self.d_t = max_depth;
            } else {
                let mut msg = BitWriter::new();
                msg.push_bit(agg_alarm);
                msg.push_bits(u64::from(max_depth), DEPTH_BITS);
                let port = self.parent_port.ok_or("non-root without a parent")?;
                outbox.send(port, msg.finish());
            }
        }
        Ok(())
    }

    /// Parses the per-port path exchange, records which neighbor sits
    /// behind each port, and alarms on any edge that does not connect an
    /// ancestor–descendant pair. Silent ports belong to unmarked neighbors
    /// whose alarm was already heard, so they need no check.
    fn check_neighbor_paths(&mut self) -> Result<(), String> {
        let my_path = self.path.clone().ok_or("checking edges without a path")?;
        self.port_ids = vec![None; self.degree];
        for port in 0..self.degree {
            let data = BitString::concat(&std::mem::take(&mut self.rx[port]));
            if data.is_empty() {
                continue;
            }
            let their_path = dec_path(&data)?;
            let &their_id = their_path.last().ok_or("neighbor sent an empty path")?;
            self.port_ids[port] = Some(their_id);
            self.nbr_port.insert(their_id, port);
            let related = their_path.contains(&self.id) || my_path.contains(&their_id);
            if !related {
                self.alarm = true;
            }
        }
        Ok(())
    }

    fn verdict_round(
        &mut self,
        round: u32,
        inbox: &[Option<BitString>],
        outbox: &mut Outbox,
    ) -> Result<Option<NodeOutput>, String> {
        let sched = self.cfg.sched;
        let j = round - sched.up_end;
        if self.marked {
            if self.depth == 1 && j == 1 {
                let msg = enc_verdict(self.valid, self.d_t);
                for &(_, port) in &self.children {
                    outbox.send(port, msg.clone());
                }
            } else if self.depth == j && self.depth >= 2 {
                let port = self.parent_port.ok_or("non-root without a parent")?;
                let Some(msg) = &inbox[port] else {
                    return Err("missing verdict from parent".to_owned());
                };
                let (valid, d_t) = dec_verdict(msg)?;
                self.valid = valid;
                self.d_t = d_t;
                let fwd = enc_verdict(valid, d_t);
                for &(_, child_port) in &self.children {
                    outbox.send(child_port, fwd.clone());
                }
            }
        }
        if round < sched.verdict_end {
            return Ok(None);
        }
        // Uniform exit: every vertex leaves this phase in the same round.
        if !self.marked || !self.valid {
            return Ok(Some(NodeOutput::Large));
        }
        if self.cfg.mission == Mission::Elim {
            return Ok(Some(NodeOutput::Elim(ElimTreeState {
                marked: true,
                parent: self.parent_id,
                children: self.children.iter().map(|&(child, _)| child).collect(),
                depth: self.depth,
                leader: self.leader,
                tree_depth: self.d_t,
            })));
        }
        let tail = Tail::new(
            self.cfg.mission,
            sched.verdict_end,
            self.d_t,
            sched.budget,
            self.cfg.vocab.len(),
            self.cfg.class_count,
            self.cfg.count_bits,
        )?;
        self.tail = Some(tail);
        Ok(None)
    }

    // ---- phase 3: bags -----------------------------------------------------

    fn advance_seeded(
        &mut self,
        round: u32,
        inbox: &[Option<BitString>],
        outbox: &mut Outbox,
    ) -> Result<Option<NodeOutput>, String> {
        let tail = self.tail.ok_or("seeded run without a tail")?;
        if round == 1 {
            let mut msg = BitWriter::new();
            msg.push_varint(u64::from(self.id.0));
            outbox.broadcast(&msg.finish());
            return Ok(None);
        }
        if round == 2 {
            self.adopt_seed(inbox)?;
        }
        if round <= tail.bags_end {
            self.bag_round(round, 1, tail, inbox)?;
            return Ok(None);
        }
        if !self.bag_known {
            if let Some(port) = self.parent_port {
                self.rx_push(port, inbox);
            }
            self.finish_bag()?;
        }
        Ok(Some(NodeOutput::Bags(BagState {
            bag: self.bag.clone(),
            edges: self.bag_edges.clone(),
        })))
    }

    /// Learns which neighbor is behind each port (round-1 id exchange) and
    /// turns the baked forest pointers into port assignments.
    fn adopt_seed(&mut self, inbox: &[Option<BitString>]) -> Result<(), String> {
        self.port_ids = vec![None; self.degree];
        for (port, slot) in inbox.iter().enumerate() {
            let Some(msg) = slot else {
                return Err("neighbor skipped the id exchange".to_owned());
            };
            let mut rd = BitReader::new(msg);
            let id = rd.read_varint().map_err(|e| e.to_string())?;
            let id = NodeId(u32::try_from(id).map_err(|_| "oversized id".to_owned())?);
            self.port_ids[port] = Some(id);
            self.nbr_port.insert(id, port);
        }
        let seed = self.seed.take().ok_or("seeded run without a seed")?;
        self.marked = true;
        self.depth = seed.depth;
        self.parent_id = seed.parent_id;
        if let Some(parent) = seed.parent_id {
            let port =
                self.nbr_port.get(&parent).copied().ok_or(format!("parent {parent} is not adjacent"))?;
            self.parent_port = Some(port);
        }
        for child in seed.children_ids {
            let port =
                self.nbr_port.get(&child).copied().ok_or(format!("child {child} is not adjacent"))?;
            self.children.push((child, port));
        }
        self.children.sort_unstable();
        Ok(())
    }

    fn bag_round(
        &mut self,
        round: u32,
        base: u32,
        tail: Tail,
        inbox: &[Option<BitString>],
    ) -> Result<(), String> {
        // Seeded runs use round base+1 for the id exchange, so bag chunks
        // can only arrive from base+2 onward in either mode.
        if !self.bag_known && round >= base + 2 {
            if let Some(port) = self.parent_port {
                self.rx_push(port, inbox);
            }
        }
        let off = round - base - 1;
        let window = 1 + off / tail.f3;
        let local = 1 + off % tail.f3;
        if local == 1 && self.depth == window && !self.bag_known {
            self.finish_bag()?;
            let payload = self.enc_bag()?;
            let ports = self.children.iter().map(|&(_, port)| port).collect();
            self.tx =
                Some(Tx::new(&payload, TxPorts::Many(ports), round, self.cfg.sched.budget, tail.f3)?);
        }
        Ok(())
    }

    /// Builds this vertex's bag from the parent's payload (or from scratch
    /// at the root): ancestor attributes plus the edges among bag members,
    /// extended with the edges from this vertex to its marked neighbors.
    fn finish_bag(&mut self) -> Result<(), String> {
        if self.depth == 1 {
            self.bag = vec![self.id];
            self.bag_w.insert(self.id, self.w_self);
            self.bag_mask.insert(self.id, self.mask_self);
            self.bag_known = true;
            return Ok(());
        }
        let port = self.parent_port.ok_or("non-root without a parent")?;
        let data = BitString::concat(&std::mem::take(&mut self.rx[port]));
        let (members, edge_idx) = dec_bag(&data, self.cfg.vocab.len())?;
        let mut bag: Vec<NodeId> = members.iter().map(|&(id, _, _)| id).collect();
        if !bag.windows(2).all(|w| w[0] < w[1]) {
            return Err("parent bag is not sorted".to_owned());
        }
        if bag.binary_search(&self.id).is_ok() {
            return Err("parent bag already contains this vertex".to_owned());
        }
        let mut edges: Vec<(NodeId, NodeId)> = Vec::new();
        for (i, j) in edge_idx {
            let (&a, &b) = (
                bag.get(i).ok_or("edge index out of range")?,
                bag.get(j).ok_or("edge index out of range")?,
            );
            edges.push(ekey(a, b));
        }
        for &(id, weight, mask) in &members {
            self.bag_w.insert(id, weight);
            self.bag_mask.insert(id, mask);
            if self.nbr_port.contains_key(&id) {
                edges.push(ekey(id, self.id));
            }
        }
        bag.push(self.id);
        bag.sort_unstable();
        edges.sort_unstable();
        self.bag_w.insert(self.id, self.w_self);
        self.bag_mask.insert(self.id, self.mask_self);
        self.bag = bag;
        self.bag_edges = edges;
        self.bag_known = true;
        Ok(())
    }

    fn enc_bag(&self) -> Result<BitString, String> {
        let mut w = BitWriter::new();
        w.push_varint(self.bag.len() as u64);
        for &v in &self.bag {
            w.push_varint(u64::from(v.0));
            w.push_signed(*self.bag_w.get(&v).ok_or("bag member without a weight")?);
            let mask = *self.bag_mask.get(&v).ok_or("bag member without labels")?;
            for bit in 0..self.cfg.vocab.len() {
                w.push_bit(mask >> bit & 1 == 1);
            }
        }
        w.push_varint(self.bag_edges.len() as u64);
        for &(a, b) in &self.bag_edges {
            let i = self.bag.binary_search(&a).map_err(|_| "edge endpoint outside the bag")?;
            let j = self.bag.binary_search(&b).map_err(|_| "edge endpoint outside the bag")?;
            w.push_varint(i as u64);
            w.push_varint(j as u64);
        }
        Ok(w.finish())
    }

    // ---- phase 4: missions -------------------------------------------------

    fn mission_round(
        &mut self,
        round: u32,
        tail: Tail,
        inbox: &[Option<BitString>],
        outbox: &mut Outbox,
    ) -> Result<Option<NodeOutput>, String> {
        if round == tail.bags_end + 1 && !self.bag_known {
            // The deepest vertices receive their final bag chunk now.
            if let Some(port) = self.parent_port {
                self.rx_push(port, inbox);
            }
            self.finish_bag()?;
        }
        match self.cfg.mission {
            Mission::Decide => self.decide_round(round, tail, inbox, outbox),
            Mission::Optimize => self.optimize_round(round, tail, inbox, outbox),
            Mission::Count => self.count_round(round, tail, inbox, outbox),
            Mission::OptMarked => self.marked_round(round, tail, inbox, outbox),
            Mission::Elim | Mission::Bags => Err("mission rounds without a mission".to_owned()),
        }
    }

    fn predicate(&self) -> Result<&'a dyn RegularPredicate, String> {
        self.cfg.p.ok_or_else(|| "mission without a predicate".to_owned())
    }

    /// The subgraph this vertex contributes: its bag's vertices with their
    /// weights and in-vocabulary labels, and the edges from this vertex to
    /// bag members, all terminal.
    fn leaf_graph(&self) -> Result<WTerminalGraph, String> {
        let mut part = Graph::new();
        for &v in &self.bag {
            part.add_node(v).map_err(|e| e.to_string())?;
            part.set_node_weight(v, *self.bag_w.get(&v).ok_or("bag member without a weight")?)
                .map_err(|e| e.to_string())?;
            let mask = *self.bag_mask.get(&v).ok_or("bag member without labels")?;
            for (bit, label) in self.cfg.vocab.iter().enumerate() {
                if mask >> bit & 1 == 1 {
                    part.add_node_label(v, label).map_err(|e| e.to_string())?;
                }
            }
        }
        for port in 0..self.degree {
            let Some(nbr) = self.port_ids[port] else { continue };
            if self.bag.binary_search(&nbr).is_err() || nbr == self.id {
                continue;
            }
            part.add_edge(self.id, nbr).map_err(|e| e.to_string())?;
            part.set_edge_weight(self.id, nbr, self.port_attrs[port].weight)
                .map_err(|e| e.to_string())?;
            for (bit, label) in self.cfg.vocab.iter().enumerate() {
                if self.port_attrs[port].mask >> bit & 1 == 1 {
                    part.add_edge_label(self.id, nbr, label).map_err(|e| e.to_string())?;
                }
            }
        }
        WTerminalGraph::new(part, self.bag.iter().copied()).map_err(|e| e.to_string())
    }

    /// The child's bag in the canonical decomposition: this bag plus the
    /// child.
    fn child_bag(&self, child: NodeId) -> Vec<NodeId> {
        let mut bag = self.bag.clone();
        bag.push(child);
        bag.sort_unstable();
        bag
    }

    /// The round this vertex parses its children's tables and sends its
    /// own up the tree (window `d_t - depth + 1`, first round).
    fn my_send_round(&self, tail: Tail) -> u32 {
        tail.bags_end + (tail.d_t - self.depth) * tail.up_w + 1
    }

    fn decide_round(
        &mut self,
        round: u32,
        tail: Tail,
        inbox: &[Option<BitString>],
        outbox: &mut Outbox,
    ) -> Result<Option<NodeOutput>, String> {
        let mut accept = true;
        if self.depth == tail.d_t - (round - tail.bags_end) + 1 {
            let p = self.predicate()?;
            let leaf = self.leaf_graph()?;
            let mut acc = p.classify_base(&leaf).map_err(|e| e.to_string())?;
            for &(child, port) in &self.children {
                let Some(msg) = &inbox[port] else {
                    return Err(format!("missing class from child {child}"));
                };
                if msg.len() != tail.cw {
                    return Err(format!("class message of {} bits, expected {}", msg.len(), tail.cw));
                }
                let mut rd = BitReader::new(msg);
                let c = rd.read_bits(tail.cw).map_err(|e| e.to_string())?;
                let m = glue_matrix_for(&self.child_bag(child), &self.bag);
                acc = p.compose(ClassId(c as u32), acc, &m).map_err(|e| e.to_string())?;
            }
            if self.depth >= 2 {
                let mut msg = BitWriter::new();
                msg.push_bits(u64::from(acc.0), tail.cw);
                let port = self.parent_port.ok_or("non-root without a parent")?;
                outbox.send(port, msg.finish());
            } else {
                accept = p.is_accepting(acc).map_err(|e| e.to_string())?;
            }
        }
        if round == tail.end {
            return Ok(Some(NodeOutput::Decide { accept }));
        }
        Ok(None)
    }

    /// Accumulates bottom-up chunk trains from the children until this
    /// vertex's own send round.
    fn rx_push_children(&mut self, round: u32, tail: Tail, inbox: &[Option<BitString>]) {
        if round >= tail.bags_end + 2 && round <= self.my_send_round(tail) {
            let ports: Vec<usize> = self.children.iter().map(|&(_, port)| port).collect();
            for port in ports {
                self.rx_push(port, inbox);
            }
        }
    }

    /// Runs the shared bottom-up fold at this vertex's send round: the
    /// leaf step, then one fold per child in ascending id order. Calls
    /// `extra` on each child's reader after its table, for piggybacked
    /// fields.
    fn fold_tables(
        &mut self,
        mut extra: impl FnMut(&mut BitReader) -> Result<(), String>,
    ) -> Result<(), String> {
        let p = self.predicate()?;
        let leaf = self.leaf_graph()?;
        let (var, sort) = self.cfg.free.first().ok_or("optimization without a free variable")?;
        let mut steps = vec![opt_leaf_step(&leaf.graph, p, &leaf, var, *sort, self.cfg.sign)
            .map_err(|e| e.to_string())?];
        let children = self.children.clone();
        for &(child, port) in &children {
            let data = BitString::concat(&std::mem::take(&mut self.rx[port]));
            let mut rd = BitReader::new(&data);
            let child_table = dec_opt_table(&mut rd, self.cfg.class_count)?;
            extra(&mut rd)?;
            if rd.remaining() != 0 {
                return Err(format!("{} stray bits after child {child}'s table", rd.remaining()));
            }
            let child_bag = self.child_bag(child);
            let m = glue_matrix_for(&child_bag, &self.bag);
            let prev = steps.last().expect("leaf step exists").table.clone();
            steps.push(
                opt_fold(&leaf.graph, p, &child_table, &child_bag, &prev, &self.bag, &m, child, self.cfg.sign)
                    .map_err(|e| e.to_string())?,
            );
        }
        self.chain = steps;
        Ok(())
    }

    /// The root's scan: the best accepting class, ascending ids breaking
    /// ties.
    fn best_accepting(&self) -> Result<Option<(u32, i64)>, String> {
        let p = self.predicate()?;
        let table = &self.chain.last().ok_or("scan before the fold")?.table;
        let mut best: Option<(u32, i64)> = None;
        for (&c, &w) in table {
            if p.is_accepting(ClassId(c)).map_err(|e| e.to_string())?
                && best.is_none_or(|(_, bw)| w > bw)
            {
                best = Some((c, w));
            }
        }
        Ok(best)
    }

    /// Walks this vertex's fold chain backwards from `target`, recording
    /// which class each child must realize and this vertex's own leaf
    /// selection.
    fn unwind(&mut self, target: ClassId) -> Result<BTreeMap<NodeId, ClassId>, String> {
        let mut cur = target.0;
        let mut targets: BTreeMap<NodeId, ClassId> = BTreeMap::new();
        for step in self.chain.iter().skip(1).rev() {
            match step.arg.get(&cur) {
                Some(Prov::Fold { node, sub, prev }) => {
                    targets.insert(*node, *sub);
                    cur = prev.0;
                }
                _ => return Err("fold chain lost its provenance".to_owned()),
            }
        }
        match self.chain.first().and_then(|step| step.arg.get(&cur)) {
            Some(Prov::Leaf(sel)) => {
                let sort = self.cfg.free.first().ok_or("unwind without a free variable")?.1;
                self.frag = Some(own_fragment(self.id, sort, sel));
                Ok(targets)
            }
            _ => Err("fold chain lost its leaf".to_owned()),
        }
    }

    fn empty_fragment(&self) -> SelectedSet {
        match self.cfg.free.first().map(|&(_, sort)| sort) {
            Some(SetSort::Edges) => SelectedSet::Edges(Default::default()),
            _ => SelectedSet::Vertices(Default::default()),
        }
    }

    fn optimize_round(
        &mut self,
        round: u32,
        tail: Tail,
        inbox: &[Option<BitString>],
        outbox: &mut Outbox,
    ) -> Result<Option<NodeOutput>, String> {
        self.rx_push_children(round, tail, inbox);
        if round == self.my_send_round(tail) {
            self.fold_tables(|_| Ok(()))?;
            if self.depth >= 2 {
                let table = &self.chain.last().expect("fold ran").table;
                let payload = enc_opt_table(table, self.cfg.class_count);
                let port = self.parent_port.ok_or("non-root without a parent")?;
                self.tx = Some(Tx::new(&payload, TxPorts::One(port), round, self.cfg.sched.budget, tail.up_w)?);
            } else {
                self.root_best = self.best_accepting()?;
                self.sat = Some(self.root_best.is_some());
            }
        }
        // Top-down: the root announces each child's target class; every
        // vertex unwinds its chain and forwards.
        let targets = if self.depth == 1 && round == tail.root_done {
            match self.root_best {
                Some((c, _)) => Some(Some(ClassId(c))),
                None => Some(None),
            }
        } else if self.depth >= 2 && round == tail.root_done + self.depth - 1 {
            let port = self.parent_port.ok_or("non-root without a parent")?;
            let Some(msg) = &inbox[port] else {
                return Err("missing target from parent".to_owned());
            };
            let mut rd = BitReader::new(msg);
            let live = rd.read_bit().map_err(|e| e.to_string())?;
            let c = rd.read_bits(tail.cw).map_err(|e| e.to_string())?;
            self.sat = Some(live);
            Some(live.then_some(ClassId(c as u32)))
        } else {
            None
        };
        if let Some(target) = targets {
            match target {
                Some(class) => {
                    let child_targets = self.unwind(class)?;
                    for &(child, port) in &self.children {
                        let class = child_targets
                            .get(&child)
                            .ok_or(format!("no target class for child {child}"))?;
                        let mut msg = BitWriter::new();
                        msg.push_bit(true);
                        msg.push_bits(u64::from(class.0), tail.cw);
                        outbox.send(port, msg.finish());
                    }
                }
                None => {
                    self.frag = Some(self.empty_fragment());
                    let mut msg = BitWriter::new();
                    msg.push_bit(false);
                    msg.push_bits(0, tail.cw);
                    let dead = msg.finish();
                    for &(_, port) in &self.children {
                        outbox.send(port, dead.clone());
                    }
                }
            }
        }
        if round == tail.end {
            let value = if self.depth == 1 {
                self.root_best.map(|(_, w)| self.cfg.sign * w)
            } else {
                None
            };
            return Ok(Some(NodeOutput::Opt {
                satisfiable: self.sat.take().unwrap_or(true),
                value,
                fragment: self.frag.take().unwrap_or_else(|| self.empty_fragment()),
            }));
        }
        Ok(None)
    }

    fn count_round(
        &mut self,
        round: u32,
        tail: Tail,
        inbox: &[Option<BitString>],
        _outbox: &mut Outbox,
    ) -> Result<Option<NodeOutput>, String> {
        self.rx_push_children(round, tail, inbox);
        if round != self.my_send_round(tail) {
            return if round == tail.end { Ok(Some(NodeOutput::Count { total: None })) } else { Ok(None) };
        }
        let p = self.predicate()?;
        let leaf = self.leaf_graph()?;
        let mut table: BTreeMap<u32, BigUint> = BTreeMap::new();
        for a in leaf_assignments(&leaf, &self.cfg.free).map_err(|e| e.to_string())? {
            let c = p.classify_base(&leaf.clone().with_assignment(a)).map_err(|e| e.to_string())?;
            *table.entry(c.0).or_default() += 1u32;
        }
        let children = self.children.clone();
        for &(child, port) in &children {
            let data = BitString::concat(&std::mem::take(&mut self.rx[port]));
            let mut rd = BitReader::new(&data);
            let child_table = dec_count_table(&mut rd, self.cfg.class_count)?;
            if rd.remaining() != 0 {
                return Err(format!("{} stray bits after child {child}'s counts", rd.remaining()));
            }
            let m = glue_matrix_for(&self.child_bag(child), &self.bag);
            table = fold_counts(p, &child_table, &table, &m).map_err(|e| e.to_string())?;
        }
        if self.depth >= 2 {
            let payload = enc_count_table(&table, self.cfg.class_count, self.cfg.count_bits)?;
            let port = self.parent_port.ok_or("non-root without a parent")?;
            self.tx = Some(Tx::new(&payload, TxPorts::One(port), round, self.cfg.sched.budget, tail.up_w)?);
            Ok(None)
        } else {
            let mut total = BigUint::ZERO;
            for (&c, n) in &table {
                if p.is_accepting(ClassId(c)).map_err(|e| e.to_string())? {
                    total += n;
                }
            }
            Ok(Some(NodeOutput::Count { total: Some(total) }))
        }
    }

    /// The marked elements of this vertex's leaf part, read off the baked
    /// label masks: bag vertices carrying the mark, or incident bag edges
    /// carrying it.
    fn marked_in_leaf(&self, sort: SetSort) -> Result<SelectedSet, String> {
        let bit = self.cfg.mark_bit.ok_or("marked run without a mark label")?;
        match sort {
            SetSort::Vertices => Ok(SelectedSet::Vertices(
                self.bag
                    .iter()
                    .filter(|v| self.bag_mask.get(v).copied().unwrap_or(0) >> bit & 1 == 1)
                    .copied()
                    .collect(),
            )),
            SetSort::Edges => {
                let mut edges = std::collections::BTreeSet::new();
                for port in 0..self.degree {
                    let Some(nbr) = self.port_ids[port] else { continue };
                    if self.bag.binary_search(&nbr).is_ok()
                        && nbr != self.id
                        && self.port_attrs[port].mask >> bit & 1 == 1
                    {
                        edges.insert(ekey(self.id, nbr));
                    }
                }
                Ok(SelectedSet::Edges(edges))
            }
        }
    }

    /// The marked weight this vertex contributes: its own weight if marked
    /// (vertex sort) or the weights of its leaf's marked edges (edge sort).
    fn own_marked_weight(&self, sort: SetSort) -> Result<i64, String> {
        let bit = self.cfg.mark_bit.ok_or("marked run without a mark label")?;
        match sort {
            SetSort::Vertices => {
                Ok(if self.mask_self >> bit & 1 == 1 { self.w_self } else { 0 })
            }
            SetSort::Edges => {
                let mut sum = 0i64;
                for port in 0..self.degree {
                    let Some(nbr) = self.port_ids[port] else { continue };
                    if self.bag.binary_search(&nbr).is_ok()
                        && nbr != self.id
                        && self.port_attrs[port].mask >> bit & 1 == 1
                    {
                        sum = sum.saturating_add(self.port_attrs[port].weight);
                    }
                }
                Ok(sum)
            }
        }
    }

    fn marked_round(
        &mut self,
        round: u32,
        tail: Tail,
        inbox: &[Option<BitString>],
        _outbox: &mut Outbox,
    ) -> Result<Option<NodeOutput>, String> {
        self.rx_push_children(round, tail, inbox);
        if round != self.my_send_round(tail) {
            return if round == tail.end { Ok(Some(NodeOutput::Marked { accept: true })) } else { Ok(None) };
        }
        let p = self.predicate()?;
        let leaf = self.leaf_graph()?;
        let (var, sort) = self.cfg.free.first().ok_or("marked run without a free variable")?.clone();
        // One sweep carries three aggregates: the optimum table, the
        // decision class of the marked assignment, and the marked weight.
        let marked = self.marked_in_leaf(sort)?;
        let a = Assignment::new().set(var, selected_value(&marked));
        let mut psi = p.classify_base(&leaf.clone().with_assignment(a)).map_err(|e| e.to_string())?;
        let mut marked_weight = self.own_marked_weight(sort)?;
        let mut child_extras: Vec<(u32, i64)> = Vec::new();
        self.fold_tables(|rd| {
            let c = rd.read_bits(tail.cw).map_err(|e| e.to_string())? as u32;
            let w = rd.read_signed().map_err(|e| e.to_string())?;
            child_extras.push((c, w));
            Ok(())
        })?;
        let children = self.children.clone();
        for (&(child, _), (c, w)) in children.iter().zip(child_extras) {
            let m = glue_matrix_for(&self.child_bag(child), &self.bag);
            psi = p.compose(ClassId(c), psi, &m).map_err(|e| e.to_string())?;
            marked_weight = marked_weight.saturating_add(w);
        }
        if self.depth >= 2 {
            let table = &self.chain.last().expect("fold ran").table;
            let mut w = BitWriter::new();
            enc_opt_table_into(&mut w, table, self.cfg.class_count);
            w.push_bits(u64::from(psi.0), tail.cw);
            w.push_signed(marked_weight);
            let port = self.parent_port.ok_or("non-root without a parent")?;
            self.tx = Some(Tx::new(&w.finish(), TxPorts::One(port), round, self.cfg.sched.budget, tail.up_w)?);
            Ok(None)
        } else {
            let best = self.best_accepting()?;
            let satisfied = p.is_accepting(psi).map_err(|e| e.to_string())?;
            let optimal = best.map(|(_, w)| self.cfg.sign * w) == Some(self.cfg.sign * marked_weight);
            Ok(Some(NodeOutput::Marked { accept: satisfied && optimal }))
        }
    }

    // ---- transport helpers ---------------------------------------------

    fn rx_push(&mut self, port: usize, inbox: &[Option<BitString>]) {
        if let Some(msg) = &inbox[port] {
            self.rx[port].push(msg.clone());
        }
    }

    fn rx_push_all(&mut self, inbox: &[Option<BitString>]) {
        for port in 0..self.degree {
            self.rx_push(port, inbox);
        }
    }

    fn clear_rx(&mut self) {
        for acc in &mut self.rx {
            acc.clear();
        }
    }
}

impl<'a> NodeProgram for Pipeline<'a> {
    type Output = NodeOutput;

    fn init(&mut self, ctx: &NodeCtx) {
        debug_assert_eq!(ctx.id, self.id, "program baked for a different vertex");
        debug_assert_eq!(ctx.degree, self.port_attrs.len(), "one attribute per port");
        self.degree = ctx.degree;
        self.rx = vec![Vec::new(); ctx.degree];
    }

    fn step(
        &mut self,
        round: u32,
        inbox: &[Option<BitString>],
        outbox: &mut Outbox,
    ) -> Status<NodeOutput> {
        match self.advance(round, inbox, outbox) {
            Ok(None) => {
                if let Some(tx) = &self.tx {
                    tx.pump(round, self.degree, outbox);
                }
                Status::Running
            }
            Ok(Some(output)) => Status::Halted(output),
            Err(message) => Status::Halted(NodeOutput::Failed(message)),
        }
    }
}

/// The piece of an optimal selection owned by one vertex: its own id if
/// selected (vertex sort — boundary bits agree across parts, so claiming
/// only the home vertex avoids double counting) or the leaf's selected
/// edges (edge sort — leaf edges are private to their home vertex).
fn own_fragment(id: NodeId, sort: SetSort, sel: &SelectedSet) -> SelectedSet {
    match (sort, sel) {
        (SetSort::Vertices, SelectedSet::Vertices(vs)) => {
            let mut out = std::collections::BTreeSet::new();
            if vs.contains(&id) {
                out.insert(id);
            }
            SelectedSet::Vertices(out)
        }
        (SetSort::Edges, SelectedSet::Edges(es)) => SelectedSet::Edges(es.clone()),
        (SetSort::Vertices, _) => SelectedSet::Vertices(Default::default()),
        (SetSort::Edges, _) => SelectedSet::Edges(Default::default()),
    }
}

// ---- payload codecs -----------------------------------------------------

fn enc_path(path: &[NodeId]) -> BitString {
    let mut w = BitWriter::new();
    w.push_varint(path.len() as u64);
    for &v in path {
        w.push_varint(u64::from(v.0));
    }
    w.finish()
}

fn dec_path(data: &BitString) -> Result<Vec<NodeId>, String> {
    let mut rd = BitReader::new(data);
    let len = rd.read_varint().map_err(|e| e.to_string())?;
    let mut path = Vec::new();
    for _ in 0..len {
        let id = rd.read_varint().map_err(|e| e.to_string())?;
        path.push(NodeId(u32::try_from(id).map_err(|_| "oversized id".to_owned())?));
    }
    if rd.remaining() != 0 {
        return Err(format!("{} stray bits after a path", rd.remaining()));
    }
    Ok(path)
}

fn enc_verdict(valid: bool, d_t: u32) -> BitString {
    let mut w = BitWriter::new();
    w.push_bit(valid);
    w.push_bits(u64::from(d_t), DEPTH_BITS);
    w.finish()
}

fn dec_verdict(msg: &BitString) -> Result<(bool, u32), String> {
    let mut rd = BitReader::new(msg);
    let valid = rd.read_bit().map_err(|e| e.to_string())?;
    let d_t = rd.read_bits(DEPTH_BITS).map_err(|e| e.to_string())? as u32;
    Ok((valid, d_t))
}

/// Members ascending: id, weight, label mask; then edges as index pairs
/// into the member list.
#[allow(clippy::type_complexity)]
fn dec_bag(
    data: &BitString,
    vocab_len: usize,
) -> Result<(Vec<(NodeId, i64, u64)>, Vec<(usize, usize)>), String> {
    let mut rd = BitReader::new(data);
    let count = rd.read_varint().map_err(|e| e.to_string())?;
    let mut members = Vec::new();
    for _ in 0..count {
        let id = rd.read_varint().map_err(|e| e.to_string())?;
        let id = NodeId(u32::try_from(id).map_err(|_| "oversized id".to_owned())?);
        let weight = rd.read_signed().map_err(|e| e.to_string())?;
        let mut mask = 0u64;
        for bit in 0..vocab_len {
            if rd.read_bit().map_err(|e| e.to_string())? {
                mask |= 1 << bit;
            }
        }
        members.push((id, weight, mask));
    }
    let edges = rd.read_varint().map_err(|e| e.to_string())?;
    let mut edge_idx = Vec::new();
    for _ in 0..edges {
        let i = rd.read_varint().map_err(|e| e.to_string())? as usize;
        let j = rd.read_varint().map_err(|e| e.to_string())? as usize;
        edge_idx.push((i, j));
    }
    if rd.remaining() != 0 {
        return Err(format!("{} stray bits after a bag", rd.remaining()));
    }
    Ok((members, edge_idx))
}

fn enc_opt_table_into(w: &mut BitWriter, table: &BTreeMap<u32, i64>, class_count: usize) {
    for c in 0..class_count as u32 {
        match table.get(&c) {
            Some(&weight) => {
                w.push_bit(true);
                w.push_signed(weight);
            }
            None => w.push_bit(false),
        }
    }
}

fn enc_opt_table(table: &BTreeMap<u32, i64>, class_count: usize) -> BitString {
    let mut w = BitWriter::new();
    enc_opt_table_into(&mut w, table, class_count);
    w.finish()
}

fn dec_opt_table(rd: &mut BitReader, class_count: usize) -> Result<BTreeMap<u32, i64>, String> {
    let mut table = BTreeMap::new();
    for c in 0..class_count as u32 {
        if rd.read_bit().map_err(|e| e.to_string())? {
            table.insert(c, rd.read_signed().map_err(|e| e.to_string())?);
        }
    }
    Ok(table)
}

/// Counts travel as a present bit, a 16-bit length, then the count's bits
/// little-endian.
fn enc_count_table(
    table: &BTreeMap<u32, BigUint>,
    class_count: usize,
    count_bits: usize,
) -> Result<BitString, String> {
    let mut w = BitWriter::new();
    for c in 0..class_count as u32 {
        match table.get(&c) {
            Some(n) => {
                let bits = n.bits();
                if bits > count_bits as u64 {
                    return Err(format!("count of {bits} bits exceeds the {count_bits}-bit bound"));
                }
                w.push_bit(true);
                w.push_bits(bits, DEPTH_BITS);
                for i in 0..bits {
                    w.push_bit(n.bit(i));
                }
            }
            None => w.push_bit(false),
        }
    }
    Ok(w.finish())
}

fn dec_count_table(rd: &mut BitReader, class_count: usize) -> Result<BTreeMap<u32, BigUint>, String> {
    let mut table = BTreeMap::new();
    for c in 0..class_count as u32 {
        if !rd.read_bit().map_err(|e| e.to_string())? {
            continue;
        }
        let bits = rd.read_bits(DEPTH_BITS).map_err(|e| e.to_string())?;
        let mut bytes = vec![0u8; (bits as usize).div_ceil(8)];
        for i in 0..bits {
            if rd.read_bit().map_err(|e| e.to_string())? {
                bytes[(i / 8) as usize] |= 1 << (i % 8);
            }
        }
        table.insert(c, BigUint::from_bytes_le(&bytes));
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedules_match_hand_computed_round_maps() {
        // n = 64 nodes, factor 64: 384 bits per round.
        let s = Schedule::new(1, 384);
        assert_eq!((s.d_cap, s.fa, s.f2, s.s_step), (2, 1, 1, 5));
        assert_eq!((s.a_end, s.r_alarm, s.paths_end), (7, 8, 9));
        assert_eq!((s.exch_end, s.up_end, s.verdict_end), (10, 12, 14));

        let s = Schedule::new(2, 384);
        assert_eq!((s.d_cap, s.s_step, s.a_end), (4, 7, 25));
        assert_eq!(s.verdict_end, 38);
        assert!(s.verdict_end <= s.round_limit());

        // n = 2 nodes, factor 64: 64 bits per round — the tightest budget.
        let s = Schedule::new(1, 64);
        assert_eq!((s.fa, s.f2, s.s_step), (2, 2, 6));
        assert_eq!(s.verdict_end, 17);
        assert!(s.verdict_end <= s.round_limit());
    }

    #[test]
    fn every_schedule_fits_the_round_limit() {
        for d in 1..=12 {
            for factor in [64u32, 100, 1000] {
                for n in [2usize, 3, 64, 1000] {
                    let budget = crate::sim::round_budget(n, factor);
                    let s = Schedule::new(d, budget);
                    assert!(
                        s.verdict_end <= s.round_limit(),
                        "d={d} factor={factor} n={n}: {} > {}",
                        s.verdict_end,
                        s.round_limit()
                    );
                }
            }
        }
    }

    #[test]
    fn tails_lay_windows_back_to_back() {
        let t = Tail::new(Mission::Decide, 38, 3, 384, 0, 5, 0).unwrap();
        // Bag payload bound: 40 + 3*120 + 40 + 3*80 = 680 bits -> 2 rounds.
        assert_eq!((t.f3, t.bags_end), (2, 42));
        assert_eq!((t.up_w, t.root_done, t.end, t.cw), (1, 45, 45, 3));

        let t = Tail::new(Mission::Optimize, 10, 2, 64, 0, 3, 0).unwrap();
        // 3 classes * 81 bits = 243 bits -> 4 rounds per window.
        assert_eq!(t.up_w, 4);
        assert_eq!(t.root_done, t.bags_end + 5);
        assert_eq!(t.end, t.root_done + 1);

        let t = Tail::new(Mission::Bags, 1, 4, 64, 2, 1, 0).unwrap();
        assert_eq!(t.end, t.bags_end + 1);
    }

    #[test]
    fn class_width_is_the_ceiling_log() {
        assert_eq!(ceil_log2(1), 0);
        assert_eq!(ceil_log2(2), 1);
        assert_eq!(ceil_log2(3), 2);
        assert_eq!(ceil_log2(4), 2);
        assert_eq!(ceil_log2(5), 3);
        assert_eq!(ceil_log2(1 << 20), 20);
    }

    #[test]
    fn paths_survive_the_codec() {
        let path = vec![NodeId(7), NodeId(0), NodeId(4_000_000_000)];
        assert_eq!(dec_path(&enc_path(&path)).unwrap(), path);
        assert_eq!(dec_path(&enc_path(&[])).unwrap(), Vec::<NodeId>::new());
        assert!(enc_path(&path).len() as u64 <= VARINT32_BITS * 4);
    }

    #[test]
    fn verdicts_survive_the_codec() {
        let msg = enc_verdict(true, 4096);
        assert_eq!(msg.len(), 17);
        assert_eq!(dec_verdict(&msg).unwrap(), (true, 4096));
        assert_eq!(dec_verdict(&enc_verdict(false, 1)).unwrap(), (false, 1));
    }

    #[test]
    fn opt_tables_survive_the_codec() {
        let table: BTreeMap<u32, i64> =
            [(0, -5), (2, i64::MAX), (3, i64::MIN)].into_iter().collect();
        let enc = enc_opt_table(&table, 4);
        assert!(enc.len() as u64 <= 4 * (1 + SIGNED64_BITS));
        let mut rd = BitReader::new(&enc);
        assert_eq!(dec_opt_table(&mut rd, 4).unwrap(), table);
        assert_eq!(rd.remaining(), 0);
    }

    #[test]
    fn count_tables_survive_the_codec() {
        let big = BigUint::from(u64::MAX) * BigUint::from(u64::MAX);
        let table: BTreeMap<u32, BigUint> =
            [(1, BigUint::ZERO), (2, BigUint::from(24u32)), (4, big)].into_iter().collect();
        let enc = enc_count_table(&table, 5, 200).unwrap();
        let mut rd = BitReader::new(&enc);
        assert_eq!(dec_count_table(&mut rd, 5).unwrap(), table);
        assert_eq!(rd.remaining(), 0);
        assert!(enc_count_table(&table, 5, 100).is_err());
    }

    #[test]
    fn bags_survive_the_codec() {
        let members = vec![(NodeId(1), -3i64, 0b101u64), (NodeId(4), 7, 0b010), (NodeId(9), 0, 0)];
        let mut w = BitWriter::new();
        w.push_varint(3);
        for &(id, weight, mask) in &members {
            w.push_varint(u64::from(id.0));
            w.push_signed(weight);
            for bit in 0..3 {
                w.push_bit(mask >> bit & 1 == 1);
            }
        }
        w.push_varint(1);
        w.push_varint(0);
        w.push_varint(2);
        let (got_members, got_edges) = dec_bag(&w.finish(), 3).unwrap();
        assert_eq!(got_members, members);
        assert_eq!(got_edges, vec![(0, 2)]);
    }

    #[test]
    fn fragments_keep_only_the_home_vertex() {
        let sel = SelectedSet::Vertices([NodeId(1), NodeId(2)].into_iter().collect());
        let mine = own_fragment(NodeId(2), SetSort::Vertices, &sel);
        assert_eq!(mine, SelectedSet::Vertices([NodeId(2)].into_iter().collect()));
        let none = own_fragment(NodeId(5), SetSort::Vertices, &sel);
        assert_eq!(none, SelectedSet::Vertices(Default::default()));
        let edges = SelectedSet::Edges([(NodeId(1), NodeId(2))].into_iter().collect());
        assert_eq!(own_fragment(NodeId(1), SetSort::Edges, &edges), edges);
    }
}
