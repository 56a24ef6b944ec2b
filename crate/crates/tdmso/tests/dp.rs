//! End-to-end validation of the dynamic-programming engine against
//! brute-force oracles: decide/optimize/count over canonical
//! decompositions, witness feasibility, and invariance under the order in
//! which subtrees are folded.

use num_bigint::BigUint;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tdmso::algebra::{
    builtin_predicate, compile_mso, glue_matrix_for, leaf_graph_for_bag, ClassId, GlueMatrix,
    RegularPredicate, SelectedSet,
};
use tdmso::dp::{
    check_marked_optimal, count, decide, decide_assigned, optimize, selected_weight, DpError,
};
use tdmso::graph::{canonical_decomposition, exact_treedepth, Graph, NodeId, TreeDecomposition};
use tdmso::mso::{
    count_bruteforce, eval_bruteforce, library, opt_bruteforce, Assignment, Value,
};

fn graph_on(ids: &[u32], edges: &[(u32, u32)]) -> Graph {
    Graph::from_edges(ids.iter().copied(), edges.iter().copied()).unwrap()
}

fn decomp(g: &Graph) -> TreeDecomposition {
    let td = exact_treedepth(g).unwrap();
    canonical_decomposition(g, &td.forest).unwrap()
}

fn random_graph(rng: &mut ChaCha8Rng, n: u32, p: f64) -> Graph {
    let ids: Vec<u32> = (1..=n).collect();
    let mut edges = Vec::new();
    for i in 1..=n {
        for j in (i + 1)..=n {
            if rng.random_bool(p) {
                edges.push((i, j));
            }
        }
    }
    graph_on(&ids, &edges)
}

fn path(n: u32) -> Graph {
    let ids: Vec<u32> = (1..=n).collect();
    let edges: Vec<(u32, u32)> = (1..n).map(|i| (i, i + 1)).collect();
    graph_on(&ids, &edges)
}

fn cycle(n: u32) -> Graph {
    let ids: Vec<u32> = (1..=n).collect();
    let mut edges: Vec<(u32, u32)> = (1..n).map(|i| (i, i + 1)).collect();
    edges.push((n, 1));
    graph_on(&ids, &edges)
}

/// Every edge subset of the complete graph on `ids`.
fn all_edge_sets(ids: &[u32]) -> Vec<Vec<(u32, u32)>> {
    let mut pairs = Vec::new();
    for i in 0..ids.len() {
        for j in i + 1..ids.len() {
            pairs.push((ids[i], ids[j]));
        }
    }
    (0..1usize << pairs.len())
        .map(|mask| {
            pairs.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, &e)| e).collect()
        })
        .collect()
}

// -------------------------------------------------------------------
// decide against the brute-force evaluator

#[test]
fn decide_agrees_with_brute_force_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0D01);
    let capped = [library::triangle_free(), library::edgeless(), library::has_universal_vertex()];
    let mut checks = 0usize;

    let mut graphs: Vec<Graph> =
        all_edge_sets(&[1, 2, 3]).into_iter().map(|es| graph_on(&[1, 2, 3], &es)).collect();
    for _ in 0..40 {
        let n = rng.random_range(4..=6u32);
        graphs.push(random_graph(&mut rng, n, 0.4));
    }

    for g in &graphs {
        let td = decomp(g);
        let w = td.width() + 1;
        for f in &capped {
            let p = compile_mso(f, w).unwrap();
            let want = eval_bruteforce(g, f, &Assignment::new()).unwrap();
            assert_eq!(decide(g, &td, &p).unwrap(), want, "{} on {g:?}", p.name());
            checks += 1;
        }
        // These two quantify over unrestricted vertex sets, so their type
        // space is graph-specific: compile a fresh instance per graph.
        for f in [library::acyclic(), library::connected()] {
            let p = compile_mso(&f, w).unwrap();
            let want = eval_bruteforce(g, &f, &Assignment::new()).unwrap();
            assert_eq!(decide(g, &td, &p).unwrap(), want, "{} on {g:?}", p.name());
            checks += 1;
        }
    }
    assert!(checks >= 200, "only {checks} checks ran");
}

#[test]
fn colorability_decisions_match_a_direct_coloring_search() {
    fn colorable(g: &Graph, k: u32) -> bool {
        let vs: Vec<NodeId> = g.nodes().collect();
        let mut colors = vec![0u32; vs.len()];
        loop {
            let ok = g.edges().all(|(u, v)| {
                let iu = vs.binary_search(&u).unwrap();
                let iv = vs.binary_search(&v).unwrap();
                colors[iu] != colors[iv]
            });
            if ok {
                return true;
            }
            let mut i = 0;
            loop {
                if i == colors.len() {
                    return false;
                }
                colors[i] += 1;
                if colors[i] < k {
                    break;
                }
                colors[i] = 0;
                i += 1;
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0x0D02);
    for k in [2u32, 3] {
        let p = builtin_predicate(&format!("k_colorable({k})")).unwrap();
        for _ in 0..30 {
            let n = rng.random_range(1..=7u32);
            let g = random_graph(&mut rng, n, 0.5);
            let td = decomp(&g);
            assert_eq!(
                decide(&g, &td, p.as_ref()).unwrap(),
                colorable(&g, k),
                "k={k} on {g:?}"
            );
        }
    }
}

// -------------------------------------------------------------------
// fold-order invariance

/// Re-runs the decision fold with children and roots visited in a random
/// order instead of ascending. The subtree below a node is the same graph
/// regardless of fold order, so the decision must not change.
fn decide_shuffled(
    g: &Graph,
    td: &TreeDecomposition,
    p: &dyn RegularPredicate,
    rng: &mut ChaCha8Rng,
) -> bool {
    fn subtree(
        g: &Graph,
        td: &TreeDecomposition,
        p: &dyn RegularPredicate,
        u: NodeId,
        rng: &mut ChaCha8Rng,
    ) -> ClassId {
        let leaf = leaf_graph_for_bag(g, td.bag(u), u);
        let mut acc = p.classify_base(&leaf).unwrap();
        let mut kids = td.children(u);
        kids.shuffle(rng);
        for v in kids {
            let cv = subtree(g, td, p, v, rng);
            acc = p.compose(cv, acc, &glue_matrix_for(td.bag(v), td.bag(u))).unwrap();
        }
        acc
    }

    let mut roots: Vec<NodeId> = td.roots().collect();
    roots.shuffle(rng);
    let m1 = GlueMatrix::new(vec![(1, 0)]).unwrap();
    let mut acc: Option<ClassId> = None;
    for r in roots {
        let c = subtree(g, td, p, r, rng);
        acc = Some(match acc {
            None => c,
            Some(prev) => p.compose(c, prev, &m1).unwrap(),
        });
    }
    p.is_accepting(acc.unwrap()).unwrap()
}

#[test]
fn decisions_are_invariant_under_fold_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0D03);
    let tf = library::triangle_free();
    let k2 = builtin_predicate("k_colorable(2)").unwrap();
    for _ in 0..30 {
        let n = rng.random_range(2..=7u32);
        // sparse graphs keep several roots and branching nodes in play
        let g = random_graph(&mut rng, n, 0.3);
        let td = decomp(&g);
        let p = compile_mso(&tf, td.width() + 1).unwrap();
        let want_tf = decide(&g, &td, &p).unwrap();
        let want_k2 = decide(&g, &td, k2.as_ref()).unwrap();
        for _ in 0..5 {
            assert_eq!(decide_shuffled(&g, &td, &p, &mut rng), want_tf, "{g:?}");
            assert_eq!(decide_shuffled(&g, &td, k2.as_ref(), &mut rng), want_k2, "{g:?}");
        }
    }
}

// -------------------------------------------------------------------
// optimize against the brute-force optimizer

#[test]
fn optimize_agrees_with_brute_force_and_returns_feasible_witnesses() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0D04);
    let problems = [
        ("independent_set", library::independent_set()),
        ("vertex_cover", library::vertex_cover()),
        ("dominating_set", library::dominating_set()),
    ];
    let mut checks = 0usize;
    for round in 0..20 {
        let n = rng.random_range(1..=6u32);
        let mut g = random_graph(&mut rng, n, 0.45);
        for v in g.nodes().collect::<Vec<_>>() {
            g.set_node_weight(v, rng.random_range(-4..=9)).unwrap();
        }
        let td = decomp(&g);
        for (name, f) in &problems {
            let p = builtin_predicate(name).unwrap();
            for maximize in [true, false] {
                let got = optimize(&g, &td, p.as_ref(), maximize);
                let want = opt_bruteforce(&g, f, maximize).unwrap();
                match (got, want) {
                    (Ok(opt), Some((value, _))) => {
                        assert_eq!(opt.value, value, "{name} max={maximize} on {g:?}");
                        // the witness itself must satisfy the property and
                        // realize the reported value
                        let a = Assignment::new().set("S", selected_value(&opt.witness));
                        assert!(
                            decide_assigned(&g, &td, p.as_ref(), &a).unwrap(),
                            "{name} witness infeasible on {g:?}"
                        );
                        assert_eq!(selected_weight(&g, &opt.witness), opt.value);
                        assert!(eval_bruteforce(&g, f, &a).unwrap());
                    }
                    (Err(DpError::Unsatisfiable), None) => {}
                    (got, want) => {
                        panic!("{name} round {round}: dp {got:?} vs brute {want:?} on {g:?}")
                    }
                }
                checks += 1;
            }
        }
    }
    assert!(checks >= 120);
}

#[test]
fn optimize_handles_edge_set_variables() {
    // Heaviest perfect matching of a 6-cycle with distinct edge weights:
    // the two alternating classes weigh 1+3+5 and 2+4+6.
    let mut g = cycle(6);
    let edges: Vec<(NodeId, NodeId)> = g.edges().collect();
    for (i, &(u, v)) in edges.iter().enumerate() {
        g.set_edge_weight(u, v, i as i64 + 1).unwrap();
    }
    let td = decomp(&g);
    let f = library::perfect_matching();
    let p = compile_mso(&f, td.width() + 1).unwrap();

    let max = optimize(&g, &td, &p, true).unwrap();
    let min = optimize(&g, &td, &p, false).unwrap();
    let (want_max, _) = opt_bruteforce(&g, &f, true).unwrap().unwrap();
    let (want_min, _) = opt_bruteforce(&g, &f, false).unwrap().unwrap();
    assert_eq!(max.value, want_max);
    assert_eq!(min.value, want_min);
    assert_eq!(max.value + min.value, 21, "the two matchings partition the cycle's edges");
    let SelectedSet::Edges(picked) = &max.witness else { panic!("edge witness") };
    assert_eq!(picked.len(), 3);
}

// -------------------------------------------------------------------
// count against the brute-force counter

#[test]
fn count_agrees_with_brute_force_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0D05);
    let is = library::independent_set();
    let pm = library::perfect_matching();
    for _ in 0..15 {
        let n = rng.random_range(1..=6u32);
        let g = random_graph(&mut rng, n, 0.45);
        let td = decomp(&g);
        let w = td.width() + 1;
        let p = compile_mso(&is, w).unwrap();
        assert_eq!(count(&g, &td, &p).unwrap(), count_bruteforce(&g, &is).unwrap(), "{g:?}");
        if g.m() <= 8 {
            let p = compile_mso(&pm, w).unwrap();
            assert_eq!(count(&g, &td, &p).unwrap(), count_bruteforce(&g, &pm).unwrap(), "{g:?}");
        }
    }
}

#[test]
fn count_handles_multiple_free_variables() {
    let f = library::ordered_triangles();
    let mut rng = ChaCha8Rng::seed_from_u64(0x0D06);

    // A triangle with a pendant vertex: one triangle, six orders.
    let g = graph_on(&[1, 2, 3, 4], &[(1, 2), (2, 3), (3, 1), (3, 4)]);
    let td = decomp(&g);
    let p = compile_mso(&f, td.width() + 1).unwrap();
    assert_eq!(count(&g, &td, &p).unwrap(), BigUint::from(6u32));

    for _ in 0..8 {
        let g = random_graph(&mut rng, 5, 0.5);
        let td = decomp(&g);
        let p = compile_mso(&f, td.width() + 1).unwrap();
        assert_eq!(count(&g, &td, &p).unwrap(), count_bruteforce(&g, &f).unwrap(), "{g:?}");
    }
}

// -------------------------------------------------------------------
// marked-set optimality checking

#[test]
fn marking_an_optimal_witness_passes_and_perturbations_behave() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0D07);
    let f = library::independent_set();
    let is = builtin_predicate("independent_set").unwrap();
    for _ in 0..12 {
        let n = rng.random_range(2..=6u32);
        let g0 = random_graph(&mut rng, n, 0.4);
        let td = decomp(&g0);
        let opt = optimize(&g0, &td, is.as_ref(), true).unwrap();
        let SelectedSet::Vertices(best) = &opt.witness else { panic!("vertex witness") };

        // marking the witness itself must pass
        let mut g = g0.clone();
        for &v in best {
            g.add_node_label(v, "opt").unwrap();
        }
        assert!(check_marked_optimal(&g, &td, &f, "opt", true).unwrap(), "{g0:?}");

        // flip one vertex in or out; recompute what the verdict must be
        let flip = NodeId(rng.random_range(1..=n));
        let mut marked = best.clone();
        if !marked.remove(&flip) {
            marked.insert(flip);
        }
        let mut g = g0.clone();
        for &v in &marked {
            g.add_node_label(v, "opt").unwrap();
        }
        let a = Assignment::new()
            .set("S", Value::VertexSet(marked.iter().copied().collect()));
        let feasible = eval_bruteforce(&g0, &f, &a).unwrap();
        let weight: i64 = marked.iter().map(|&v| g0.node_weight(v)).sum();
        let want = feasible && weight == opt.value;
        assert_eq!(check_marked_optimal(&g, &td, &f, "opt", true).unwrap(), want, "{g0:?}");
    }
}

// -------------------------------------------------------------------
// input validation

#[test]
fn mismatched_decompositions_are_rejected() {
    // decomposition of the 3-path, applied to a graph with an extra edge
    let p3 = path(3);
    let td = decomp(&p3);
    let k3 = graph_on(&[1, 2, 3], &[(1, 2), (2, 3), (1, 3)]);
    let tf = library::triangle_free();
    let p = compile_mso(&tf, 3).unwrap();
    assert!(matches!(decide(&k3, &td, &p), Err(DpError::BadDecomposition(_))));

    // decomposition over different vertex ids entirely
    let other = graph_on(&[7, 8], &[(7, 8)]);
    assert!(matches!(decide(&other, &td, &p), Err(DpError::BadDecomposition(_))));
}

fn selected_value(sel: &SelectedSet) -> Value {
    match sel {
        SelectedSet::Vertices(s) => Value::VertexSet(s.clone()),
        SelectedSet::Edges(s) => Value::EdgeSet(s.clone()),
    }
}
