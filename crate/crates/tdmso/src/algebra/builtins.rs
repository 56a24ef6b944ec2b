//! Hand-written regular predicates for a few standard properties.
//!
//! Each predicate keeps a semantic state per class — e.g. "the set of
//! terminal colorings extendable to a proper coloring" — and implements
//! composition directly on states. They exist as an independent
//! implementation path: the compiled predicates must agree with them on
//! shared instances, which cross-validates both constructions.

use std::collections::{BTreeSet, HashMap};
use std::hash::Hash;
use std::sync::Mutex;

use crate::graph::{ekey, NodeId};
use crate::mso::Value;

use super::types::{
    bit, dropped_bits, remap_bits, remap_pairs, term_pair, ClassId, RegularPredicate,
    SelectedSet, SetSort,
};
use super::{AlgebraError, GlueMatrix, WTerminalGraph, MAX_TERMINALS};

/// The recognized builtin names (`k` stands for a literal number).
pub const BUILTIN_NAMES: &[&str] = &[
    "k_colorable(k)",
    "independent_set",
    "vertex_cover",
    "dominating_set",
    "acyclic_marked",
    "spanning_tree_marked",
];

/// Looks up a builtin predicate by name, e.g. `"k_colorable(3)"` or
/// `"vertex_cover"`.
pub fn builtin_predicate(name: &str) -> Result<Box<dyn RegularPredicate>, AlgebraError> {
    match name {
        "independent_set" => Ok(Box::new(MarkedSet::independent())),
        "vertex_cover" => Ok(Box::new(MarkedSet::cover())),
        "dominating_set" => Ok(Box::new(Dominating::new())),
        "acyclic_marked" => Ok(Box::new(MarkedForest::new())),
        "spanning_tree_marked" => Ok(Box::new(MarkedSpanningTree::new())),
        _ => {
            let k = name
                .strip_prefix("k_colorable(")
                .and_then(|rest| rest.strip_suffix(')'))
                .and_then(|k| k.trim().parse::<u8>().ok())
                .filter(|&k| (1..=6).contains(&k));
            match k {
                Some(k) => Ok(Box::new(Colorable::new(k))),
                None => Err(AlgebraError::UnknownName(name.to_string())),
            }
        }
    }
}

/// Hash-consed state store shared by all builtins.
struct StateTable<S> {
    list: Vec<S>,
    ids: HashMap<S, u32>,
    frozen: bool,
}

impl<S> Default for StateTable<S> {
    fn default() -> Self {
        StateTable { list: Vec::new(), ids: HashMap::new(), frozen: false }
    }
}

impl<S: Clone + Eq + Hash> StateTable<S> {
    fn intern(&mut self, owner: &str, state: S) -> u32 {
        if let Some(&id) = self.ids.get(&state) {
            return id;
        }
        if self.frozen {
            panic!("predicate `{owner}` is frozen but a new state appeared");
        }
        let id = self.list.len() as u32;
        self.list.push(state.clone());
        self.ids.insert(state, id);
        id
    }

    fn get(&self, c: ClassId) -> Result<&S, AlgebraError> {
        self.list
            .get(c.0 as usize)
            .ok_or(AlgebraError::UnknownClass(c.0))
    }
}

fn vertex_set_arg(
    g: &WTerminalGraph,
    name: &str,
) -> Result<BTreeSet<NodeId>, AlgebraError> {
    match g.assignment.as_ref().and_then(|a| a.get(name)) {
        Some(Value::VertexSet(s)) => {
            if let Some(&v) = s.iter().find(|&&v| !g.graph.has_node(v)) {
                return Err(AlgebraError::IncompatibleAssignment(format!(
                    "`{name}` contains {v}, which is not a vertex of the graph"
                )));
            }
            Ok(s.clone())
        }
        Some(other) => Err(AlgebraError::IncompatibleAssignment(format!(
            "`{name}` must be a vertex set, got a {}",
            other.sort()
        ))),
        None => Err(AlgebraError::IncompatibleAssignment(format!(
            "graph carries no value for free variable `{name}`"
        ))),
    }
}

fn edge_set_arg(
    g: &WTerminalGraph,
    name: &str,
) -> Result<BTreeSet<(NodeId, NodeId)>, AlgebraError> {
    match g.assignment.as_ref().and_then(|a| a.get(name)) {
        Some(Value::EdgeSet(s)) => {
            if let Some(&(u, v)) = s.iter().find(|&&(u, v)| !g.graph.has_edge(u, v)) {
                return Err(AlgebraError::IncompatibleAssignment(format!(
                    "`{name}` contains {u}-{v}, which is not an edge of the graph"
                )));
            }
            Ok(s.clone())
        }
        Some(other) => Err(AlgebraError::IncompatibleAssignment(format!(
            "`{name}` must be an edge set, got a {}",
            other.sort()
        ))),
        None => Err(AlgebraError::IncompatibleAssignment(format!(
            "graph carries no value for free variable `{name}`"
        ))),
    }
}

/// The mask of terminal ranks whose terminal lies in `set`.
fn rank_mask(g: &WTerminalGraph, set: &BTreeSet<NodeId>) -> u32 {
    let mut mask = 0;
    for (r, t) in g.terminals().iter().enumerate() {
        if set.contains(t) {
            mask |= 1 << r;
        }
    }
    mask
}

fn selected_vertices(mask: u32, bag: &[NodeId]) -> SelectedSet {
    SelectedSet::Vertices(
        (0..bag.len())
            .filter(|&r| mask >> r & 1 == 1)
            .map(|r| bag[r])
            .collect(),
    )
}

fn selected_edges(mask: u128, bag: &[NodeId]) -> SelectedSet {
    let mut set = BTreeSet::new();
    for r in 0..bag.len() {
        for s in r + 1..bag.len() {
            if bit(mask, term_pair(r, s)) {
                set.insert(ekey(bag[r], bag[s]));
            }
        }
    }
    SelectedSet::Edges(set)
}

fn check_bag(bag: &[NodeId], tau: usize) -> Result<(), AlgebraError> {
    if bag.len() != tau {
        return Err(AlgebraError::BadTerminals(format!(
            "bag has {} vertices but the class has {tau} terminals",
            bag.len()
        )));
    }
    Ok(())
}

/// Identified rank pairs plus kept-rank maps, shared by every compose.
struct Maps {
    keep1: Vec<Option<usize>>,
    keep2: Vec<Option<usize>>,
    identified: Vec<(usize, usize)>,
}

fn maps_for(m: &GlueMatrix, tau1: usize, tau2: usize) -> Result<Maps, AlgebraError> {
    m.check_taus(tau1, tau2)?;
    let (keep1, keep2) = m.kept_maps(tau1, tau2);
    let identified = m
        .rows()
        .iter()
        .filter(|&&(a, b)| a > 0 && b > 0)
        .map(|&(a, b)| (a as usize - 1, b as usize - 1))
        .collect();
    Ok(Maps { keep1, keep2, identified })
}

fn masks_agree(m1: u32, m2: u32, identified: &[(usize, usize)]) -> bool {
    identified
        .iter()
        .all(|&(i1, i2)| (m1 >> i1 & 1) == (m2 >> i2 & 1))
}

/// Plain union-find over `0..n`.
struct Uf {
    parent: Vec<usize>,
}

impl Uf {
    fn new(n: usize) -> Self {
        Uf { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns false if the two were already connected.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra] = rb;
        true
    }
}

/// Canonical partition vector: group labels in first-occurrence order.
fn canonical_partition(uf: &mut Uf, count: usize) -> Vec<u8> {
    let mut labels: HashMap<usize, u8> = HashMap::new();
    (0..count)
        .map(|r| {
            let root = uf.find(r);
            let next = labels.len() as u8;
            *labels.entry(root).or_insert(next)
        })
        .collect()
}

// ---------------------------------------------------------------------
// k-colorability

/// Class = the set of proper colorings of the terminals extendable to a
/// proper coloring of the whole graph. Empty set = not colorable.
struct Colorable {
    name: String,
    k: u8,
    free: Vec<(String, SetSort)>,
    states: Mutex<StateTable<(u8, BTreeSet<Vec<u8>>)>>,
}

impl Colorable {
    fn new(k: u8) -> Self {
        Colorable {
            name: format!("k_colorable({k})"),
            k,
            free: Vec::new(),
            states: Mutex::new(StateTable::default()),
        }
    }
}

impl RegularPredicate for Colorable {
    fn name(&self) -> &str {
        &self.name
    }

    fn width(&self) -> usize {
        MAX_TERMINALS
    }

    fn free_vars(&self) -> &[(String, SetSort)] {
        &self.free
    }

    fn class_count(&self) -> usize {
        self.states.lock().expect("state lock").list.len()
    }

    fn classify_base(&self, g: &WTerminalGraph) -> Result<ClassId, AlgebraError> {
        let nodes: Vec<NodeId> = g.graph.nodes().collect();
        let n = nodes.len();
        if (n as f64) * f64::from(self.k).log2() > 20.0 {
            return Err(AlgebraError::SizeLimit(format!(
                "enumerating {}^{n} colorings is over budget",
                self.k
            )));
        }
        let index: HashMap<NodeId, usize> =
            nodes.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let edges: Vec<(usize, usize)> = g
            .graph
            .edges()
            .map(|(u, v)| (index[&u], index[&v]))
            .collect();
        let term_pos: Vec<usize> = g.terminals().iter().map(|t| index[t]).collect();

        let mut reachable = BTreeSet::new();
        let mut color = vec![0u8; n];
        'outer: loop {
            if edges.iter().all(|&(a, b)| color[a] != color[b]) {
                reachable.insert(term_pos.iter().map(|&i| color[i]).collect::<Vec<u8>>());
            }
            let mut i = 0;
            loop {
                if i == n {
                    break 'outer;
                }
                color[i] += 1;
                if color[i] < self.k {
                    break;
                }
                color[i] = 0;
                i += 1;
            }
        }
        let state = (g.tau() as u8, reachable);
        Ok(ClassId(
            self.states
                .lock()
                .expect("state lock")
                .intern(&self.name, state),
        ))
    }

    fn compose(&self, c1: ClassId, c2: ClassId, m: &GlueMatrix) -> Result<ClassId, AlgebraError> {
        let states = &mut *self.states.lock().expect("state lock");
        let (tau1, set1) = states.get(c1)?.clone();
        let (tau2, set2) = states.get(c2)?.clone();
        let maps = maps_for(m, tau1 as usize, tau2 as usize)?;
        let mut merged = BTreeSet::new();
        for col1 in &set1 {
            for col2 in &set2 {
                if maps
                    .identified
                    .iter()
                    .any(|&(i1, i2)| col1[i1] != col2[i2])
                {
                    continue;
                }
                let combined: Vec<u8> = m
                    .rows()
                    .iter()
                    .map(|&(a, b)| {
                        if a > 0 {
                            col1[a as usize - 1]
                        } else {
                            col2[b as usize - 1]
                        }
                    })
                    .collect();
                merged.insert(combined);
            }
        }
        let state = (m.result_tau() as u8, merged);
        Ok(ClassId(states.intern(&self.name, state)))
    }

    fn is_accepting(&self, c: ClassId) -> Result<bool, AlgebraError> {
        Ok(!self.states.lock().expect("state lock").get(c)?.1.is_empty())
    }

    fn selected(&self, c: ClassId, bag: &[NodeId]) -> Result<Vec<SelectedSet>, AlgebraError> {
        let states = self.states.lock().expect("state lock");
        check_bag(bag, states.get(c)?.0 as usize)?;
        Ok(Vec::new())
    }

    fn set_frozen(&self, frozen: bool) {
        self.states.lock().expect("state lock").frozen = frozen;
    }

    fn debug_dump(&self) -> String {
        let states = self.states.lock().expect("state lock");
        dump_states(&self.name, states.list.len(), |id| {
            let (tau, set) = &states.list[id];
            (!set.is_empty(), format!("tau={tau} colorings={}", set.len()))
        })
    }
}

// ---------------------------------------------------------------------
// independent set / vertex cover

/// Class = (terminal part of S, "no violation inside this graph"). The flag
/// is exact under gluing because every edge of a glued graph lies within
/// one part.
struct MarkedSet {
    name: &'static str,
    /// true = independence (no edge inside S), false = cover (all edges met)
    independent: bool,
    free: Vec<(String, SetSort)>,
    states: Mutex<StateTable<(u8, u32, bool)>>,
}

impl MarkedSet {
    fn independent() -> Self {
        MarkedSet {
            name: "independent_set",
            independent: true,
            free: vec![("S".to_string(), SetSort::Vertices)],
            states: Mutex::new(StateTable::default()),
        }
    }

    fn cover() -> Self {
        MarkedSet {
            name: "vertex_cover",
            independent: false,
            free: vec![("S".to_string(), SetSort::Vertices)],
            states: Mutex::new(StateTable::default()),
        }
    }
}

impl RegularPredicate for MarkedSet {
    fn name(&self) -> &str {
        self.name
    }

    fn width(&self) -> usize {
        MAX_TERMINALS
    }

    fn free_vars(&self) -> &[(String, SetSort)] {
        &self.free
    }

    fn class_count(&self) -> usize {
        self.states.lock().expect("state lock").list.len()
    }

    fn classify_base(&self, g: &WTerminalGraph) -> Result<ClassId, AlgebraError> {
        let s = vertex_set_arg(g, "S")?;
        let ok = if self.independent {
            g.graph
                .edges()
                .all(|(u, v)| !(s.contains(&u) && s.contains(&v)))
        } else {
            g.graph
                .edges()
                .all(|(u, v)| s.contains(&u) || s.contains(&v))
        };
        let state = (g.tau() as u8, rank_mask(g, &s), ok);
        Ok(ClassId(
            self.states
                .lock()
                .expect("state lock")
                .intern(self.name, state),
        ))
    }

    fn compose(&self, c1: ClassId, c2: ClassId, m: &GlueMatrix) -> Result<ClassId, AlgebraError> {
        let states = &mut *self.states.lock().expect("state lock");
        let &(tau1, mask1, ok1) = states.get(c1)?;
        let &(tau2, mask2, ok2) = states.get(c2)?;
        let maps = maps_for(m, tau1 as usize, tau2 as usize)?;
        if !masks_agree(mask1, mask2, &maps.identified) {
            return Err(AlgebraError::IncompatibleAssignment(
                "`S` disagrees on an identified terminal".into(),
            ));
        }
        let state = (
            m.result_tau() as u8,
            remap_bits(mask1, &maps.keep1) | remap_bits(mask2, &maps.keep2),
            ok1 && ok2,
        );
        Ok(ClassId(states.intern(self.name, state)))
    }

    fn is_accepting(&self, c: ClassId) -> Result<bool, AlgebraError> {
        Ok(self.states.lock().expect("state lock").get(c)?.2)
    }

    fn selected(&self, c: ClassId, bag: &[NodeId]) -> Result<Vec<SelectedSet>, AlgebraError> {
        let states = self.states.lock().expect("state lock");
        let &(tau, mask, _) = states.get(c)?;
        check_bag(bag, tau as usize)?;
        Ok(vec![selected_vertices(mask, bag)])
    }

    fn set_frozen(&self, frozen: bool) {
        self.states.lock().expect("state lock").frozen = frozen;
    }

    fn debug_dump(&self) -> String {
        let states = self.states.lock().expect("state lock");
        dump_states(self.name, states.list.len(), |id| {
            let (tau, mask, ok) = states.list[id];
            (ok, format!("tau={tau} smask={mask:#b} ok={ok}"))
        })
    }
}

// ---------------------------------------------------------------------
// dominating set

/// Class = (terminal part of S, terminals still undominated, dead flag).
/// Interior vertices have their final neighborhood, so an undominated one
/// kills the class; terminals may still be dominated by later gluing.
struct Dominating {
    free: Vec<(String, SetSort)>,
    states: Mutex<StateTable<(u8, u32, u32, bool)>>,
}

impl Dominating {
    fn new() -> Self {
        Dominating {
            free: vec![("S".to_string(), SetSort::Vertices)],
            states: Mutex::new(StateTable::default()),
        }
    }
}

impl RegularPredicate for Dominating {
    fn name(&self) -> &str {
        "dominating_set"
    }

    fn width(&self) -> usize {
        MAX_TERMINALS
    }

    fn free_vars(&self) -> &[(String, SetSort)] {
        &self.free
    }

    fn class_count(&self) -> usize {
        self.states.lock().expect("state lock").list.len()
    }

    fn classify_base(&self, g: &WTerminalGraph) -> Result<ClassId, AlgebraError> {
        let s = vertex_set_arg(g, "S")?;
        let dominated = |v: NodeId| {
            s.contains(&v) || g.graph.neighbors(v).any(|u| s.contains(&u))
        };
        let mut umask = 0u32;
        for (r, &t) in g.terminals().iter().enumerate() {
            if !dominated(t) {
                umask |= 1 << r;
            }
        }
        let dead = g
            .graph
            .nodes()
            .any(|v| g.terminal_rank(v).is_none() && !dominated(v));
        let state = (g.tau() as u8, rank_mask(g, &s), umask, dead);
        Ok(ClassId(
            self.states
                .lock()
                .expect("state lock")
                .intern("dominating_set", state),
        ))
    }

    fn compose(&self, c1: ClassId, c2: ClassId, m: &GlueMatrix) -> Result<ClassId, AlgebraError> {
        let states = &mut *self.states.lock().expect("state lock");
        let &(tau1, s1, u1, d1) = states.get(c1)?;
        let &(tau2, s2, u2, d2) = states.get(c2)?;
        let maps = maps_for(m, tau1 as usize, tau2 as usize)?;
        if !masks_agree(s1, s2, &maps.identified) {
            return Err(AlgebraError::IncompatibleAssignment(
                "`S` disagrees on an identified terminal".into(),
            ));
        }
        // a terminal stays undominated only if every part containing it
        // says so; an undominated dropped terminal can never recover
        let mut umask = 0u32;
        for (r, &(a, b)) in m.rows().iter().enumerate() {
            let in1 = a == 0 || u1 >> (a - 1) & 1 == 1;
            let in2 = b == 0 || u2 >> (b - 1) & 1 == 1;
            if in1 && in2 {
                umask |= 1 << r;
            }
        }
        let dead = d1
            || d2
            || dropped_bits(u1, &maps.keep1) > 0
            || dropped_bits(u2, &maps.keep2) > 0;
        let state = (
            m.result_tau() as u8,
            remap_bits(s1, &maps.keep1) | remap_bits(s2, &maps.keep2),
            umask,
            dead,
        );
        Ok(ClassId(states.intern("dominating_set", state)))
    }

    fn is_accepting(&self, c: ClassId) -> Result<bool, AlgebraError> {
        let states = self.states.lock().expect("state lock");
        let &(_, _, umask, dead) = states.get(c)?;
        Ok(!dead && umask == 0)
    }

    fn selected(&self, c: ClassId, bag: &[NodeId]) -> Result<Vec<SelectedSet>, AlgebraError> {
        let states = self.states.lock().expect("state lock");
        let &(tau, smask, _, _) = states.get(c)?;
        check_bag(bag, tau as usize)?;
        Ok(vec![selected_vertices(smask, bag)])
    }

    fn set_frozen(&self, frozen: bool) {
        self.states.lock().expect("state lock").frozen = frozen;
    }

    fn debug_dump(&self) -> String {
        let states = self.states.lock().expect("state lock");
        dump_states("dominating_set", states.list.len(), |id| {
            let (tau, smask, umask, dead) = states.list[id];
            (
                !dead && umask == 0,
                format!("tau={tau} smask={smask:#b} umask={umask:#b} dead={dead}"),
            )
        })
    }
}

// ---------------------------------------------------------------------
// marked forest (acyclicity of the marked edge set)

/// The terminal-visible state of a marked edge set S: adjacency among
/// terminals in this graph, the boundary part of S, terminal connectivity
/// through S-paths that avoid boundary S-edges, and a cycle flag.
///
/// Keeping boundary S-edges out of the partition is what makes composition
/// exact: a shared S-edge is present in both parts and must not be counted
/// twice when joining connectivity.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct ForestState {
    term_adj: u128,
    emask: u128,
    pstar: Vec<u8>,
    cycle: bool,
}

impl ForestState {
    fn tau(&self) -> usize {
        self.pstar.len()
    }

    /// Acyclicity of the full S-graph this state describes: the recorded
    /// flag, plus the boundary S-edges joined onto the partition.
    fn accepts(&self) -> bool {
        if self.cycle {
            return false;
        }
        let tau = self.tau();
        let mut uf = Uf::new(tau);
        let mut ok = chain_partition(&mut uf, &self.pstar, &|r| r);
        for r in 0..tau {
            for s in r + 1..tau {
                if bit(self.emask, term_pair(r, s)) && !uf.union(r, s) {
                    ok = false;
                }
            }
        }
        ok
    }

    /// Single S-connected component spanning all terminals?
    fn one_component(&self) -> bool {
        let tau = self.tau();
        let mut uf = Uf::new(tau);
        chain_partition(&mut uf, &self.pstar, &|r| r);
        for r in 0..tau {
            for s in r + 1..tau {
                if bit(self.emask, term_pair(r, s)) {
                    uf.union(r, s);
                }
            }
        }
        let root = uf.find(0);
        (1..tau).all(|r| uf.find(r) == root)
    }
}

/// Unions each partition group along a chain; returns false if any union
/// was redundant (a cycle through already-connected elements).
fn chain_partition(uf: &mut Uf, partition: &[u8], elem: &dyn Fn(usize) -> usize) -> bool {
    let mut ok = true;
    let groups = partition.iter().copied().max().map_or(0, |m| m as usize + 1);
    for label in 0..groups {
        let members: Vec<usize> = partition
            .iter()
            .enumerate()
            .filter(|&(_, &l)| l as usize == label)
            .map(|(r, _)| elem(r))
            .collect();
        for pair in members.windows(2) {
            if !uf.union(pair[0], pair[1]) {
                ok = false;
            }
        }
    }
    ok
}

/// Computes the state of a graph with marked edge set `s` directly.
fn forest_state(g: &WTerminalGraph, s: &BTreeSet<(NodeId, NodeId)>) -> ForestState {
    let nodes: Vec<NodeId> = g.graph.nodes().collect();
    let index: HashMap<NodeId, usize> = nodes.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let terms = g.terminals();

    let mut term_adj = 0u128;
    let mut emask = 0u128;
    for r in 0..terms.len() {
        for t in r + 1..terms.len() {
            if g.graph.has_edge(terms[r], terms[t]) {
                term_adj |= 1 << term_pair(r, t);
                if s.contains(&ekey(terms[r], terms[t])) {
                    emask |= 1 << term_pair(r, t);
                }
            }
        }
    }

    let mut uf_all = Uf::new(nodes.len());
    let mut cycle = false;
    let mut uf_inner = Uf::new(nodes.len());
    for &(u, v) in s {
        if !uf_all.union(index[&u], index[&v]) {
            cycle = true;
        }
        let boundary =
            g.terminal_rank(u).is_some() && g.terminal_rank(v).is_some();
        if !boundary {
            uf_inner.union(index[&u], index[&v]);
        }
    }
    // project inner connectivity onto the terminals
    let mut uf_terms = Uf::new(terms.len());
    let mut rep: HashMap<usize, usize> = HashMap::new();
    for (r, t) in terms.iter().enumerate() {
        let root = uf_inner.find(index[t]);
        if let Some(&prev) = rep.get(&root) {
            uf_terms.union(prev, r);
        } else {
            rep.insert(root, r);
        }
    }
    ForestState {
        term_adj,
        emask,
        pstar: canonical_partition(&mut uf_terms, terms.len()),
        cycle,
    }
}

/// Everything the composed state (and the spanning-tree dead check) needs:
/// the merged forest state plus full S-connectivity over kept and dropped
/// terminals.
struct ForestMerge {
    state: ForestState,
    /// Union-find over `0..total`: result ranks first, then dropped
    /// terminals of part 1, then part 2.
    uf_full: Uf,
    tau: usize,
    total: usize,
}

fn merge_forest(
    s1: &ForestState,
    s2: &ForestState,
    m: &GlueMatrix,
    maps: &Maps,
) -> Result<ForestMerge, AlgebraError> {
    let (tau1, tau2) = (s1.tau(), s2.tau());
    let tau = m.result_tau();

    let a1 = remap_pairs(s1.term_adj, tau1, &maps.keep1);
    let a2 = remap_pairs(s2.term_adj, tau2, &maps.keep2);
    let shared_edges = a1 & a2;
    let e1m = remap_pairs(s1.emask, tau1, &maps.keep1);
    let e2m = remap_pairs(s2.emask, tau2, &maps.keep2);
    if (e1m ^ e2m) & shared_edges != 0 {
        return Err(AlgebraError::IncompatibleAssignment(
            "`S` disagrees on a shared edge".into(),
        ));
    }

    // element space: result ranks, then dropped terminals (now interior)
    let dropped1: Vec<usize> = (0..tau1).filter(|&r| maps.keep1[r].is_none()).collect();
    let dropped2: Vec<usize> = (0..tau2).filter(|&r| maps.keep2[r].is_none()).collect();
    let elem1 = |r: usize| -> usize {
        maps.keep1[r].unwrap_or_else(|| {
            tau + dropped1.binary_search(&r).expect("rank is dropped")
        })
    };
    let elem2 = |r: usize| -> usize {
        maps.keep2[r].unwrap_or_else(|| {
            tau + dropped1.len() + dropped2.binary_search(&r).expect("rank is dropped")
        })
    };
    let total = tau + dropped1.len() + dropped2.len();

    // full S-connectivity with cycle detection; a shared S-edge is the
    // same edge seen from both parts and is added once
    let mut cycle = s1.cycle || s2.cycle;
    let mut uf_full = Uf::new(total);
    if !chain_partition(&mut uf_full, &s1.pstar, &elem1) {
        cycle = true;
    }
    if !chain_partition(&mut uf_full, &s2.pstar, &elem2) {
        cycle = true;
    }
    for r in 0..tau1 {
        for s in r + 1..tau1 {
            if bit(s1.emask, term_pair(r, s)) && !uf_full.union(elem1(r), elem1(s)) {
                cycle = true;
            }
        }
    }
    for r in 0..tau2 {
        for s in r + 1..tau2 {
            if !bit(s2.emask, term_pair(r, s)) {
                continue;
            }
            if let (Some(nr), Some(ns)) = (maps.keep2[r], maps.keep2[s]) {
                if bit(shared_edges, term_pair(nr.min(ns), nr.max(ns))) {
                    continue; // already added from part 1
                }
            }
            if !uf_full.union(elem2(r), elem2(s)) {
                cycle = true;
            }
        }
    }

    // connectivity avoiding *result*-boundary S-edges: part partitions,
    // plus formerly-boundary S-edges that lost an endpoint
    let mut uf_inner = Uf::new(total);
    chain_partition(&mut uf_inner, &s1.pstar, &elem1);
    chain_partition(&mut uf_inner, &s2.pstar, &elem2);
    for r in 0..tau1 {
        for s in r + 1..tau1 {
            if bit(s1.emask, term_pair(r, s))
                && (maps.keep1[r].is_none() || maps.keep1[s].is_none())
            {
                uf_inner.union(elem1(r), elem1(s));
            }
        }
    }
    for r in 0..tau2 {
        for s in r + 1..tau2 {
            if bit(s2.emask, term_pair(r, s))
                && (maps.keep2[r].is_none() || maps.keep2[s].is_none())
            {
                uf_inner.union(elem2(r), elem2(s));
            }
        }
    }

    let state = ForestState {
        term_adj: a1 | a2,
        emask: e1m | e2m,
        pstar: canonical_partition(&mut uf_inner, tau),
        cycle,
    };
    Ok(ForestMerge { state, uf_full, tau, total })
}

struct MarkedForest {
    free: Vec<(String, SetSort)>,
    states: Mutex<StateTable<ForestState>>,
}

impl MarkedForest {
    fn new() -> Self {
        MarkedForest {
            free: vec![("S".to_string(), SetSort::Edges)],
            states: Mutex::new(StateTable::default()),
        }
    }
}

impl RegularPredicate for MarkedForest {
    fn name(&self) -> &str {
        "acyclic_marked"
    }

    fn width(&self) -> usize {
        MAX_TERMINALS
    }

    fn free_vars(&self) -> &[(String, SetSort)] {
        &self.free
    }

    fn class_count(&self) -> usize {
        self.states.lock().expect("state lock").list.len()
    }

    fn classify_base(&self, g: &WTerminalGraph) -> Result<ClassId, AlgebraError> {
        let s = edge_set_arg(g, "S")?;
        let state = forest_state(g, &s);
        Ok(ClassId(
            self.states
                .lock()
                .expect("state lock")
                .intern("acyclic_marked", state),
        ))
    }

    fn compose(&self, c1: ClassId, c2: ClassId, m: &GlueMatrix) -> Result<ClassId, AlgebraError> {
        let states = &mut *self.states.lock().expect("state lock");
        let s1 = states.get(c1)?.clone();
        let s2 = states.get(c2)?.clone();
        let maps = maps_for(m, s1.tau(), s2.tau())?;
        let merge = merge_forest(&s1, &s2, m, &maps)?;
        Ok(ClassId(states.intern("acyclic_marked", merge.state)))
    }

    fn is_accepting(&self, c: ClassId) -> Result<bool, AlgebraError> {
        Ok(self.states.lock().expect("state lock").get(c)?.accepts())
    }

    fn selected(&self, c: ClassId, bag: &[NodeId]) -> Result<Vec<SelectedSet>, AlgebraError> {
        let states = self.states.lock().expect("state lock");
        let state = states.get(c)?;
        check_bag(bag, state.tau())?;
        Ok(vec![selected_edges(state.emask, bag)])
    }

    fn set_frozen(&self, frozen: bool) {
        self.states.lock().expect("state lock").frozen = frozen;
    }

    fn debug_dump(&self) -> String {
        let states = self.states.lock().expect("state lock");
        dump_states("acyclic_marked", states.list.len(), |id| {
            let s = &states.list[id];
            (
                s.accepts(),
                format!(
                    "tau={} emask={:#x} pstar={:?} cycle={}",
                    s.tau(),
                    s.emask,
                    s.pstar,
                    s.cycle
                ),
            )
        })
    }
}

// ---------------------------------------------------------------------
// marked spanning tree

/// Forest state plus which terminals S touches and whether some interior
/// part can no longer be reached (a sealed S-component without terminals,
/// or a dropped terminal whose component lost its last terminal).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct SpanState {
    forest: ForestState,
    covered: u32,
    dead: bool,
}

struct MarkedSpanningTree {
    free: Vec<(String, SetSort)>,
    states: Mutex<StateTable<SpanState>>,
}

impl MarkedSpanningTree {
    fn new() -> Self {
        MarkedSpanningTree {
            free: vec![("S".to_string(), SetSort::Edges)],
            states: Mutex::new(StateTable::default()),
        }
    }
}

fn span_accepts(s: &SpanState) -> bool {
    if s.forest.cycle || s.dead {
        return false;
    }
    let tau = s.forest.tau();
    if s.covered == 0 {
        // only a single isolated vertex spans itself with the empty set
        return tau == 1 && s.forest.emask == 0;
    }
    let full = if tau >= 32 { u32::MAX } else { (1u32 << tau) - 1 };
    s.covered == full && s.forest.accepts() && s.forest.one_component()
}

impl RegularPredicate for MarkedSpanningTree {
    fn name(&self) -> &str {
        "spanning_tree_marked"
    }

    fn width(&self) -> usize {
        MAX_TERMINALS
    }

    fn free_vars(&self) -> &[(String, SetSort)] {
        &self.free
    }

    fn class_count(&self) -> usize {
        self.states.lock().expect("state lock").list.len()
    }

    fn classify_base(&self, g: &WTerminalGraph) -> Result<ClassId, AlgebraError> {
        let s = edge_set_arg(g, "S")?;
        let forest = forest_state(g, &s);

        let mut covered = 0u32;
        for (r, &t) in g.terminals().iter().enumerate() {
            if s.iter().any(|&(u, v)| u == t || v == t) {
                covered |= 1 << r;
            }
        }

        // an interior vertex whose S-component holds no terminal is sealed
        let nodes: Vec<NodeId> = g.graph.nodes().collect();
        let index: HashMap<NodeId, usize> =
            nodes.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let mut uf = Uf::new(nodes.len());
        for &(u, v) in &s {
            uf.union(index[&u], index[&v]);
        }
        let mut root_has_terminal = vec![false; nodes.len()];
        for t in g.terminals() {
            let root = uf.find(index[t]);
            root_has_terminal[root] = true;
        }
        let dead = nodes.iter().any(|&v| {
            g.terminal_rank(v).is_none() && {
                let root = uf.find(index[&v]);
                !root_has_terminal[root]
            }
        });

        let state = SpanState { forest, covered, dead };
        Ok(ClassId(
            self.states
                .lock()
                .expect("state lock")
                .intern("spanning_tree_marked", state),
        ))
    }

    fn compose(&self, c1: ClassId, c2: ClassId, m: &GlueMatrix) -> Result<ClassId, AlgebraError> {
        let states = &mut *self.states.lock().expect("state lock");
        let s1 = states.get(c1)?.clone();
        let s2 = states.get(c2)?.clone();
        let maps = maps_for(m, s1.forest.tau(), s2.forest.tau())?;
        let mut merge = merge_forest(&s1.forest, &s2.forest, m, &maps)?;

        let covered =
            remap_bits(s1.covered, &maps.keep1) | remap_bits(s2.covered, &maps.keep2);

        // a dropped terminal's S-component seals now; it must already hang
        // off a kept terminal
        let mut kept_roots = vec![false; merge.total];
        for r in 0..merge.tau {
            let root = merge.uf_full.find(r);
            kept_roots[root] = true;
        }
        let mut dead = s1.dead || s2.dead;
        for e in merge.tau..merge.total {
            let root = merge.uf_full.find(e);
            if !kept_roots[root] {
                dead = true;
            }
        }

        let state = SpanState { forest: merge.state, covered, dead };
        Ok(ClassId(states.intern("spanning_tree_marked", state)))
    }

    fn is_accepting(&self, c: ClassId) -> Result<bool, AlgebraError> {
        Ok(span_accepts(self.states.lock().expect("state lock").get(c)?))
    }

    fn selected(&self, c: ClassId, bag: &[NodeId]) -> Result<Vec<SelectedSet>, AlgebraError> {
        let states = self.states.lock().expect("state lock");
        let state = states.get(c)?;
        check_bag(bag, state.forest.tau())?;
        Ok(vec![selected_edges(state.forest.emask, bag)])
    }

    fn set_frozen(&self, frozen: bool) {
        self.states.lock().expect("state lock").frozen = frozen;
    }

    fn debug_dump(&self) -> String {
        let states = self.states.lock().expect("state lock");
        dump_states("spanning_tree_marked", states.list.len(), |id| {
            let s = &states.list[id];
            (
                span_accepts(s),
                format!(
                    "tau={} covered={:#b} dead={} cycle={}",
                    s.forest.tau(),
                    s.covered,
                    s.dead,
                    s.forest.cycle
                ),
            )
        })
    }
}

/// Shared debug-dump shape: header, accepting ids, then one line per class
/// (capped).
fn dump_states(
    name: &str,
    count: usize,
    describe: impl Fn(usize) -> (bool, String),
) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    writeln!(out, "predicate {name}").unwrap();
    writeln!(out, "classes {count}").unwrap();
    let accepting: Vec<usize> = (0..count).filter(|&id| describe(id).0).collect();
    writeln!(out, "accepting {accepting:?}").unwrap();
    for id in 0..count.min(24) {
        writeln!(out, "class {id}: {}", describe(id).1).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::glue::{glue, GlueMatrix};
    use crate::graph::Graph;
    use crate::mso::Assignment;

    fn base(n: u32, edges: &[(u32, u32)]) -> WTerminalGraph {
        WTerminalGraph::base(Graph::from_edges(1..=n, edges.iter().copied()).unwrap()).unwrap()
    }

    fn with_vs(g: WTerminalGraph, vs: &[u32]) -> WTerminalGraph {
        let a = Assignment::new().set(
            "S",
            Value::VertexSet(vs.iter().map(|&v| NodeId(v)).collect()),
        );
        g.with_assignment(a)
    }

    fn with_es(g: WTerminalGraph, es: &[(u32, u32)]) -> WTerminalGraph {
        let a = Assignment::new().set(
            "S",
            Value::EdgeSet(es.iter().map(|&(u, v)| ekey(NodeId(u), NodeId(v))).collect()),
        );
        g.with_assignment(a)
    }

    #[test]
    fn unknown_names_are_rejected() {
        assert!(matches!(
            builtin_predicate("chromatic"),
            Err(AlgebraError::UnknownName(_))
        ));
        assert!(matches!(
            builtin_predicate("k_colorable(zero)"),
            Err(AlgebraError::UnknownName(_))
        ));
        assert!(builtin_predicate("k_colorable(3)").is_ok());
    }

    #[test]
    fn colorability_matches_small_graphs() {
        let three = builtin_predicate("k_colorable(3)").unwrap();
        let k4 = base(4, &[(1, 2), (1, 3), (1, 4), (2, 3), (2, 4), (3, 4)]);
        let c5 = base(5, &[(1, 2), (2, 3), (3, 4), (4, 5), (1, 5)]);
        assert!(!three.is_accepting(three.classify_base(&k4).unwrap()).unwrap());
        assert!(three.is_accepting(three.classify_base(&c5).unwrap()).unwrap());
        let two = builtin_predicate("k_colorable(2)").unwrap();
        assert!(!two.is_accepting(two.classify_base(&c5).unwrap()).unwrap());
    }

    #[test]
    fn colorable_composition_agrees_with_direct_classification() {
        let three = builtin_predicate("k_colorable(3)").unwrap();
        // triangle glued with an edge sharing vertex 3
        let left = base(3, &[(1, 2), (2, 3), (1, 3)]);
        let right = WTerminalGraph::base(Graph::from_edges([3, 4], [(3, 4)]).unwrap()).unwrap();
        let m = GlueMatrix::new(vec![(1, 0), (2, 0), (3, 1), (0, 2)]).unwrap();
        let glued = glue(&left, &right, &m).unwrap();
        let composed = three
            .compose(
                three.classify_base(&left).unwrap(),
                three.classify_base(&right).unwrap(),
                &m,
            )
            .unwrap();
        assert_eq!(composed, three.classify_base(&glued).unwrap());
    }

    #[test]
    fn marked_set_predicates_check_their_property() {
        let is = builtin_predicate("independent_set").unwrap();
        let p3 = || base(3, &[(1, 2), (2, 3)]);
        assert!(is
            .is_accepting(is.classify_base(&with_vs(p3(), &[1, 3])).unwrap())
            .unwrap());
        assert!(!is
            .is_accepting(is.classify_base(&with_vs(p3(), &[1, 2])).unwrap())
            .unwrap());
        let vc = builtin_predicate("vertex_cover").unwrap();
        assert!(vc
            .is_accepting(vc.classify_base(&with_vs(p3(), &[2])).unwrap())
            .unwrap());
        assert!(!vc
            .is_accepting(vc.classify_base(&with_vs(p3(), &[1])).unwrap())
            .unwrap());
        let ds = builtin_predicate("dominating_set").unwrap();
        assert!(ds
            .is_accepting(ds.classify_base(&with_vs(p3(), &[2])).unwrap())
            .unwrap());
        assert!(!ds
            .is_accepting(ds.classify_base(&with_vs(p3(), &[])).unwrap())
            .unwrap());
    }

    #[test]
    fn incompatible_marks_error_in_compose() {
        let is = builtin_predicate("independent_set").unwrap();
        let left = with_vs(base(2, &[(1, 2)]), &[2]);
        let right = {
            let g = Graph::from_edges([2, 3], [(2, 3)]).unwrap();
            with_vs(WTerminalGraph::base(g).unwrap(), &[])
        };
        let m = GlueMatrix::new(vec![(1, 0), (2, 1), (0, 2)]).unwrap();
        let c1 = is.classify_base(&left).unwrap();
        let c2 = is.classify_base(&right).unwrap();
        assert!(matches!(
            is.compose(c1, c2, &m),
            Err(AlgebraError::IncompatibleAssignment(_))
        ));
    }

    #[test]
    fn marked_forest_detects_cycles_across_glue() {
        let f = builtin_predicate("acyclic_marked").unwrap();
        // two marked paths 1-2-3, glued at both endpoints 1 and 3 → cycle
        let top = with_es(base(3, &[(1, 2), (2, 3)]), &[(1, 2), (2, 3)]);
        let bottom = {
            let g = Graph::from_edges([1, 3, 4], [(1, 4), (3, 4)]).unwrap();
            with_es(WTerminalGraph::base(g).unwrap(), &[(1, 4), (3, 4)])
        };
        let m = GlueMatrix::new(vec![(1, 1), (2, 0), (3, 2), (0, 3)]).unwrap();
        let glued = glue(&top, &bottom, &m).unwrap();
        let composed = f
            .compose(
                f.classify_base(&top).unwrap(),
                f.classify_base(&bottom).unwrap(),
                &m,
            )
            .unwrap();
        assert_eq!(composed, f.classify_base(&glued).unwrap());
        assert!(!f.is_accepting(composed).unwrap());
        // dropping one marked edge breaks the cycle
        let bottom_free = {
            let g = Graph::from_edges([1, 3, 4], [(1, 4), (3, 4)]).unwrap();
            with_es(WTerminalGraph::base(g).unwrap(), &[(1, 4)])
        };
        let c = f
            .compose(
                f.classify_base(&top).unwrap(),
                f.classify_base(&bottom_free).unwrap(),
                &m,
            )
            .unwrap();
        assert!(f.is_accepting(c).unwrap());
    }

    #[test]
    fn spanning_tree_recognizes_trees_and_rejects_gaps() {
        let st = builtin_predicate("spanning_tree_marked").unwrap();
        let p3 = base(3, &[(1, 2), (2, 3)]);
        let both = st
            .classify_base(&with_es(p3.clone(), &[(1, 2), (2, 3)]))
            .unwrap();
        assert!(st.is_accepting(both).unwrap());
        let one = st.classify_base(&with_es(p3.clone(), &[(1, 2)])).unwrap();
        assert!(!st.is_accepting(one).unwrap());
        // single vertex: the empty set spans it
        let k1 = WTerminalGraph::base(Graph::from_edges([7], []).unwrap()).unwrap();
        let empty = st.classify_base(&with_es(k1, &[])).unwrap();
        assert!(st.is_accepting(empty).unwrap());
        // triangle: two edges span, three cycle
        let k3 = base(3, &[(1, 2), (2, 3), (1, 3)]);
        let two = st
            .classify_base(&with_es(k3.clone(), &[(1, 2), (2, 3)]))
            .unwrap();
        assert!(st.is_accepting(two).unwrap());
        let three = st
            .classify_base(&with_es(k3, &[(1, 2), (2, 3), (1, 3)]))
            .unwrap();
        assert!(!st.is_accepting(three).unwrap());
    }
}
