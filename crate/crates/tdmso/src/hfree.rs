//! Deciding H-freeness via low-treedepth partitions.
//!
//! A low-treedepth partition colors the vertices so that the union of any
//! few parts induces a subgraph of small treedepth. Given such a partition
//! with as many colors as the pattern H has vertices, every copy of a
//! connected H lies inside the union of at most `p = |V(H)|` parts, so
//! H-freeness reduces to running the distributed decision protocol for
//! "some copy of H exists" once per part-union — each union's components
//! have treedepth at most `p`, where the protocol is fast.
//!
//! The module provides the partition type with its file format
//! ([`LowTdPartition`]), a sampling validator and a desk-scale exhaustive
//! partition search ([`validate_partition`], [`brute_ltd`]), the pattern
//! formula ([`pattern_copy_formula`]), and the pipeline itself
//! ([`decide_h_freeness`]).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use rand::rngs::StdRng;
use rand::seq::index::sample as rand_sample;
use rand::{Rng, SeedableRng};

use crate::algebra::{compile_mso, AlgebraError, MAX_TERMINALS};
use crate::graph::{connected_components, exact_treedepth, Graph, GraphError, NodeId};
use crate::mso::{parse_formula, MsoError, MsoFormula};
use crate::protocols::{build_elimination_tree, distributed_decide, Distributed, ElimResult, ProtocolError};

/// Errors of the H-freeness pipeline.
#[derive(Debug, thiserror::Error)]
pub enum HFreeError {
    #[error("bad input: {0}")]
    BadInput(String),
    #[error("instance too large: {0}")]
    SizeLimit(String),
    #[error("partition file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error(transparent)]
    Mso(#[from] MsoError),
}

/// A partition of a graph's vertices into parts `1..=f_p` meant to keep
/// every union of at most `p` parts at treedepth at most `p`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LowTdPartition {
    parts: BTreeMap<NodeId, u32>,
    p: u32,
    f_p: u32,
}

impl LowTdPartition {
    /// Wraps a part map; part indices must be in `1..=f_p` with `f_p` the
    /// largest one used, and `p` at least 1.
    pub fn new(parts: BTreeMap<NodeId, u32>, p: u32) -> Result<LowTdPartition, HFreeError> {
        if p == 0 {
            return Err(HFreeError::BadInput("p must be at least 1".to_owned()));
        }
        if parts.is_empty() {
            return Err(HFreeError::BadInput("the partition has no vertices".to_owned()));
        }
        if let Some((&v, _)) = parts.iter().find(|&(_, &c)| c == 0) {
            return Err(HFreeError::BadInput(format!("vertex {v} has part index 0; parts start at 1")));
        }
        let f_p = parts.values().copied().max().expect("nonempty");
        Ok(LowTdPartition { parts, p, f_p })
    }

    /// The part index of `v`, if the partition covers it.
    pub fn part(&self, v: NodeId) -> Option<u32> {
        self.parts.get(&v).copied()
    }

    /// How many parts the union searched per index set may span.
    pub fn p(&self) -> u32 {
        self.p
    }

    /// The number of parts.
    pub fn f_p(&self) -> u32 {
        self.f_p
    }

    /// The vertices whose part index lies in `index_set`.
    pub fn union_of(&self, index_set: &BTreeSet<u32>) -> BTreeSet<NodeId> {
        self.parts
            .iter()
            .filter(|(_, c)| index_set.contains(c))
            .map(|(&v, _)| v)
            .collect()
    }

    /// Parses the partition file format: one line `part <node_id> <index>`
    /// per vertex; blank lines and `#` comments are skipped.
    pub fn parse(text: &str, p: u32) -> Result<LowTdPartition, HFreeError> {
        let mut parts = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let fields: Vec<&str> = content.split_whitespace().collect();
            let [kw, node, index] = fields[..] else {
                return Err(HFreeError::Parse {
                    line,
                    message: format!("expected `part <node_id> <index>`, got `{content}`"),
                });
            };
            if kw != "part" {
                return Err(HFreeError::Parse { line, message: format!("unknown keyword `{kw}`") });
            }
            let v: u32 = node
                .parse()
                .map_err(|_| HFreeError::Parse { line, message: format!("bad node id `{node}`") })?;
            let c: u32 = index
                .parse()
                .map_err(|_| HFreeError::Parse { line, message: format!("bad part index `{index}`") })?;
            if parts.insert(NodeId(v), c).is_some() {
                return Err(HFreeError::Parse { line, message: format!("vertex {v} assigned twice") });
            }
        }
        LowTdPartition::new(parts, p)
    }

    /// Renders the partition in its file format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (&v, &c) in &self.parts {
            writeln!(out, "part {v} {c}").expect("string writes succeed");
        }
        out
    }

    /// Checks that the partition covers exactly `g`'s vertices.
    pub fn check_covers(&self, g: &Graph) -> Result<(), HFreeError> {
        let covered: BTreeSet<NodeId> = self.parts.keys().copied().collect();
        let vertices: BTreeSet<NodeId> = g.nodes().collect();
        if covered != vertices {
            return Err(HFreeError::BadInput(
                "the partition does not cover exactly the graph's vertices".to_owned(),
            ));
        }
        Ok(())
    }
}

/// Spot-checks a partition: draws `sample` random nonempty index sets of
/// at most `p` parts and requires every connected component of each
/// part-union to build an elimination tree with depth budget `p`. True
/// iff all sampled unions pass; with `sample = 0` there is nothing to
/// check and the answer is vacuously true. Deterministic per seed.
pub fn validate_partition(
    g: &Graph,
    part: &LowTdPartition,
    sample: usize,
    seed: u64,
) -> Result<bool, HFreeError> {
    part.check_covers(g)?;
    let mut rng = StdRng::seed_from_u64(seed);
    let p = part.p().min(part.f_p());
    for _ in 0..sample {
        let q = rng.random_range(1..=p) as usize;
        let picks = rand_sample(&mut rng, part.f_p() as usize, q);
        let index_set: BTreeSet<u32> = picks.iter().map(|i| i as u32 + 1).collect();
        if !union_builds(g, part, &index_set)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Runs the distributed tree builder on every component of one
/// part-union; false when any component reports the depth budget exceeded.
fn union_builds(
    g: &Graph,
    part: &LowTdPartition,
    index_set: &BTreeSet<u32>,
) -> Result<bool, HFreeError> {
    let verts = part.union_of(index_set);
    if verts.is_empty() {
        return Ok(true);
    }
    let sub = g.induced(&verts);
    for comp in connected_components(&sub, None) {
        let piece = sub.induced(&comp);
        let (result, _) =
            build_elimination_tree(&piece, part.p(), crate::sim::DEFAULT_BUDGET_FACTOR)?;
        if matches!(result, ElimResult::LargeTreedepth) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Exhaustive desk-scale search for a low-treedepth partition: the fewest
/// parts such that every union of at most `p` parts induces a subgraph of
/// treedepth at most `p` (checked by the exact oracle, so the result also
/// passes [`validate_partition`] for every index set). Limited to 12
/// vertices.
pub fn brute_ltd(g: &Graph, p: u32) -> Result<LowTdPartition, HFreeError> {
    if g.n() == 0 {
        return Err(HFreeError::BadInput("the graph has no vertices".to_owned()));
    }
    if g.n() > 12 {
        return Err(HFreeError::SizeLimit(format!(
            "exhaustive partition search handles at most 12 vertices, got {}",
            g.n()
        )));
    }
    if p == 0 {
        return Err(HFreeError::BadInput("p must be at least 1".to_owned()));
    }
    let ids: Vec<NodeId> = g.nodes().collect();
    let mut td_memo: HashMap<Vec<NodeId>, u32> = HashMap::new();
    for f in 1..=g.n() as u32 {
        let mut colors: Vec<u32> = Vec::with_capacity(ids.len());
        if assign(g, &ids, &mut colors, f, p, &mut td_memo) {
            let parts = ids.iter().copied().zip(colors).collect();
            return Ok(LowTdPartition::new(parts, p).expect("search yields positive indices"));
        }
    }
    unreachable!("singleton parts always pass: every union of p parts has at most p vertices");
}

/// Backtracking color search. `colors[i]` is the part of `ids[i]`; a new
/// vertex may only open the next unused color (symmetry breaking), and
/// every index set containing its color must keep the union's treedepth
/// within `p` on the vertices assigned so far — treedepth is monotone
/// under induced subgraphs, so a violated prefix can never recover.
fn assign(
    g: &Graph,
    ids: &[NodeId],
    colors: &mut Vec<u32>,
    f: u32,
    p: u32,
    td_memo: &mut HashMap<Vec<NodeId>, u32>,
) -> bool {
    if colors.len() == ids.len() {
        return true;
    }
    let used = colors.iter().copied().max().unwrap_or(0);
    for c in 1..=f.min(used + 1) {
        colors.push(c);
        if prefix_ok(g, ids, colors, p, td_memo) && assign(g, ids, colors, f, p, td_memo) {
            return true;
        }
        colors.pop();
    }
    false
}

/// Checks every index set that contains the newest vertex's color against
/// the treedepth bound, on the assigned prefix.
fn prefix_ok(
    g: &Graph,
    ids: &[NodeId],
    colors: &[u32],
    p: u32,
    td_memo: &mut HashMap<Vec<NodeId>, u32>,
) -> bool {
    let newest = *colors.last().expect("called after a push");
    let used: BTreeSet<u32> = colors.iter().copied().collect();
    let others: Vec<u32> = used.iter().copied().filter(|&c| c != newest).collect();
    // All subsets of the other colors of size < p, each joined with the
    // newest color.
    let mut stack = vec![(0usize, vec![newest])];
    while let Some((next, set)) = stack.pop() {
        let verts: Vec<NodeId> = ids
            .iter()
            .zip(colors)
            .filter(|&(_, c)| set.contains(c))
            .map(|(&v, _)| v)
            .collect();
        let td = *td_memo.entry(verts.clone()).or_insert_with(|| {
            let keep: BTreeSet<NodeId> = verts.iter().copied().collect();
            exact_treedepth(&g.induced(&keep)).expect("within the 12-vertex oracle range").depth
        });
        if td > p {
            return false;
        }
        if set.len() < p as usize {
            for (i, &c) in others.iter().enumerate().skip(next) {
                let mut bigger = set.clone();
                bigger.push(c);
                stack.push((i + 1, bigger));
            }
        }
    }
    true
}

/// The sentence "the graph contains a copy of `h`": existentially
/// quantified pairwise-distinct vertices with an adjacency for every
/// pattern edge, and — for induced copies — a non-adjacency for every
/// pattern non-edge.
pub fn pattern_copy_formula(h: &Graph, induced: bool) -> Result<MsoFormula, HFreeError> {
    if h.n() < 2 {
        return Err(HFreeError::BadInput("the pattern needs at least two vertices".to_owned()));
    }
    if !h.is_connected() {
        return Err(HFreeError::BadInput(
            "the pattern must be connected; a disconnected copy can straddle part-union components"
                .to_owned(),
        ));
    }
    let ids: Vec<NodeId> = h.nodes().collect();
    let name = |i: usize| format!("x{}", i + 1);
    let mut text = String::new();
    for i in 0..ids.len() {
        write!(text, "exists_v {}. ", name(i)).expect("string writes succeed");
    }
    let mut conjuncts = Vec::new();
    for i in 0..ids.len() {
        for j in i + 1..ids.len() {
            conjuncts.push(format!("~ {} = {}", name(i), name(j)));
            if h.has_edge(ids[i], ids[j]) {
                conjuncts.push(format!("adj({}, {})", name(i), name(j)));
            } else if induced {
                conjuncts.push(format!("~ adj({}, {})", name(i), name(j)));
            }
        }
    }
    text.push_str(&conjuncts.join(" & "));
    Ok(parse_formula(&text)?)
}

/// Result of one H-freeness pipeline run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HFreeRun {
    /// True iff no part-union component contained a copy.
    pub h_free: bool,
    /// Index sets searched: every nonempty set of at most `p` parts.
    pub index_sets: usize,
    /// Protocol runs performed (one per connected component per union).
    pub component_runs: usize,
    /// Rounds summed over all component runs — the sequential reading.
    pub rounds_sum: u64,
    /// The largest single component run — the parallel reading.
    pub rounds_max: u32,
    /// Widest message over all component runs.
    pub max_message_bits: usize,
}

/// Decides whether `g` is free of (induced) copies of `h` by running the
/// distributed decision protocol on every connected component of every
/// union of at most `p = |V(h)|` parts. The partition must cover `g` and
/// declare `p` equal to the pattern's vertex count; every component run
/// gets depth budget `p`.
///
/// Each union's components are supposed to have treedepth at most `p`; a
/// component where no tree of depth `2^p` gets built means the partition
/// was invalid, reported as [`HFreeError::BadInput`].
pub fn decide_h_freeness(
    g: &Graph,
    h: &Graph,
    part: &LowTdPartition,
    induced: bool,
    budget_factor: u32,
) -> Result<HFreeRun, HFreeError> {
    part.check_covers(g)?;
    if part.p() as usize != h.n() {
        return Err(HFreeError::BadInput(format!(
            "the partition declares p = {} but the pattern has {} vertices",
            part.p(),
            h.n()
        )));
    }
    let p = part.p();
    let formula = pattern_copy_formula(h, induced)?;
    // Wide enough for any tree the builder can hand back at depth budget
    // p; beyond the terminal cap the protocol would need deeper graphs
    // than this desk-scale pipeline runs.
    let width = (1usize << p).min(MAX_TERMINALS).max(2);
    let predicate = compile_mso(&formula, width)?;

    let elim_round_bound = 10u32 * 4u32.pow(p);
    let mut run = HFreeRun {
        h_free: true,
        index_sets: 0,
        component_runs: 0,
        rounds_sum: 0,
        rounds_max: 0,
        max_message_bits: 0,
    };
    // Every nonempty index set of at most p parts, in ascending bitmask
    // order.
    for mask in 1u64..(1u64 << part.f_p()) {
        if mask.count_ones() > p {
            continue;
        }
        run.index_sets += 1;
        let index_set: BTreeSet<u32> = (0..part.f_p()).filter(|i| mask >> i & 1 == 1).map(|i| i + 1).collect();
        let verts = part.union_of(&index_set);
        if verts.is_empty() {
            continue;
        }
        let sub = g.induced(&verts);
        for comp in connected_components(&sub, None) {
            let piece = sub.induced(&comp);
            if piece.n() < h.n() {
                continue;
            }
            run.component_runs += 1;
            let one = match distributed_decide(&piece, p, &predicate, budget_factor)? {
                Distributed::Done(one) => one,
                Distributed::LargeTreedepth { .. } => {
                    return Err(HFreeError::BadInput(format!(
                        "a component of the union of parts {index_set:?} exceeded the depth budget; \
                         the partition is not a low-treedepth partition for p = {p}"
                    )));
                }
            };
            if one.report.rounds_elim_tree > elim_round_bound
                || one.report.rounds_bottom_up != one.report.tree_depth
            {
                return Err(HFreeError::Protocol(ProtocolError::Node(format!(
                    "a component run broke the round bounds: {} build rounds (bound {}), \
                     {} sweep rounds for a depth-{} tree",
                    one.report.rounds_elim_tree,
                    elim_round_bound,
                    one.report.rounds_bottom_up,
                    one.report.tree_depth
                ))));
            }
            run.rounds_sum += u64::from(one.report.rounds_total);
            run.rounds_max = run.rounds_max.max(one.report.rounds_total);
            run.max_message_bits = run.max_message_bits.max(one.report.max_message_bits);
            if one.accept {
                run.h_free = false;
            }
        }
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::{complete, cycle, path, star};
    use crate::mso::eval_bruteforce;
    use crate::sim::DEFAULT_BUDGET_FACTOR;

    fn depth_coloring(g: &Graph) -> BTreeMap<NodeId, u32> {
        let forest = exact_treedepth(g).unwrap().forest;
        g.nodes().map(|v| (v, forest.depth(v))).collect()
    }

    #[test]
    fn the_depth_coloring_of_a_path_validates() {
        let g = path(15);
        let part = LowTdPartition::new(depth_coloring(&g), 2).unwrap();
        assert!(validate_partition(&g, &part, 12, 7).unwrap());
    }

    #[test]
    fn one_giant_part_fails_validation() {
        let g = path(16);
        let parts = g.nodes().map(|v| (v, 1)).collect();
        let part = LowTdPartition::new(parts, 2).unwrap();
        assert!(!validate_partition(&g, &part, 3, 7).unwrap());
    }

    #[test]
    fn zero_samples_are_vacuously_fine() {
        let g = path(16);
        let parts = g.nodes().map(|v| (v, 1)).collect();
        let part = LowTdPartition::new(parts, 2).unwrap();
        assert!(validate_partition(&g, &part, 0, 7).unwrap());
    }

    #[test]
    fn exhaustive_search_finds_the_textbook_minima() {
        // Unions of single parts must have treedepth 1, i.e., be
        // independent sets; P_4 is bipartite, K_4 needs all four.
        assert_eq!(brute_ltd(&path(4), 1).unwrap().f_p(), 2);
        assert_eq!(brute_ltd(&complete(4), 1).unwrap().f_p(), 4);
        // Any two parts of C_4 together must stay below treedepth 2, so
        // two parts (= the whole cycle, treedepth 3) cannot work.
        assert_eq!(brute_ltd(&cycle(4), 2).unwrap().f_p(), 3);
    }

    #[test]
    fn searched_partitions_validate_exhaustively() {
        for (g, p) in [(path(6), 2), (cycle(5), 3), (star(5), 2)] {
            let part = brute_ltd(&g, p).unwrap();
            // Every index set, not a sample: bitmask sweep.
            for mask in 1u64..(1 << part.f_p()) {
                if mask.count_ones() > p {
                    continue;
                }
                let index_set: BTreeSet<u32> =
                    (0..part.f_p()).filter(|i| mask >> i & 1 == 1).map(|i| i + 1).collect();
                assert!(union_builds(&g, &part, &index_set).unwrap(), "parts {index_set:?}");
            }
        }
    }

    #[test]
    fn the_partition_file_round_trips() {
        let part = brute_ltd(&path(4), 1).unwrap();
        let text = part.to_text();
        let back = LowTdPartition::parse(&text, 1).unwrap();
        assert_eq!(part, back);
        let err = LowTdPartition::parse("part 1 1\npart 1 2\n", 1).unwrap_err();
        assert!(matches!(err, HFreeError::Parse { line: 2, .. }), "{err}");
        let err = LowTdPartition::parse("part one 1\n", 1).unwrap_err();
        assert!(matches!(err, HFreeError::Parse { line: 1, .. }), "{err}");
    }

    #[test]
    fn pattern_formulas_match_brute_force_on_tiny_graphs() {
        let h = complete(3);
        for induced in [false, true] {
            let f = pattern_copy_formula(&h, induced).unwrap();
            assert!(!eval_bruteforce(&cycle(5), &f, &Default::default()).unwrap());
            assert!(eval_bruteforce(&complete(4), &f, &Default::default()).unwrap());
        }
        // K_4 contains P_3 as a subgraph but not induced.
        let p3 = path(3);
        let sub = pattern_copy_formula(&p3, false).unwrap();
        let ind = pattern_copy_formula(&p3, true).unwrap();
        assert!(eval_bruteforce(&complete(4), &sub, &Default::default()).unwrap());
        assert!(!eval_bruteforce(&complete(4), &ind, &Default::default()).unwrap());
    }

    #[test]
    fn disconnected_or_trivial_patterns_are_rejected() {
        let two = Graph::from_edges([1, 2], []).unwrap();
        assert!(matches!(pattern_copy_formula(&two, false), Err(HFreeError::BadInput(_))));
        let one = Graph::from_edges([1], []).unwrap();
        assert!(matches!(pattern_copy_formula(&one, false), Err(HFreeError::BadInput(_))));
    }

    #[test]
    fn triangle_freeness_of_a_five_cycle() {
        let g = cycle(5);
        let h = complete(3);
        let part = brute_ltd(&g, 3).unwrap();
        let run = decide_h_freeness(&g, &h, &part, false, DEFAULT_BUDGET_FACTOR).unwrap();
        assert!(run.h_free);
        assert!(run.index_sets >= 1);
        assert!(run.rounds_max as u64 <= run.rounds_sum);
    }

    #[test]
    fn a_wheel_contains_triangles() {
        // Hub 6 joined to every rim vertex of a five-cycle.
        let mut g = cycle(5);
        g.add_node(NodeId(6)).unwrap();
        for v in 1..=5 {
            g.add_edge(NodeId(6), NodeId(v)).unwrap();
        }
        let h = complete(3);
        let part = brute_ltd(&g, 3).unwrap();
        let run = decide_h_freeness(&g, &h, &part, false, DEFAULT_BUDGET_FACTOR).unwrap();
        assert!(!run.h_free);
    }

    #[test]
    fn induced_and_subgraph_modes_differ_on_cliques() {
        // K_4 contains P_3 as a subgraph, but no induced P_3.
        let g = complete(4);
        let h = path(3);
        let part = brute_ltd(&g, 3).unwrap();
        let sub = decide_h_freeness(&g, &h, &part, false, DEFAULT_BUDGET_FACTOR).unwrap();
        let ind = decide_h_freeness(&g, &h, &part, true, DEFAULT_BUDGET_FACTOR).unwrap();
        assert!(!sub.h_free, "K_4 has P_3 subgraphs");
        assert!(ind.h_free, "K_4 has no induced P_3");
    }

    #[test]
    fn mismatched_partition_parameters_are_rejected() {
        let g = cycle(5);
        let h = complete(3);
        let part = brute_ltd(&g, 2).unwrap();
        let err = decide_h_freeness(&g, &h, &part, false, DEFAULT_BUDGET_FACTOR).unwrap_err();
        assert!(matches!(err, HFreeError::BadInput(_)), "{err}");
    }
}
