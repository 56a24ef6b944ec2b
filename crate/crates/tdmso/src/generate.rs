//! Seeded graph generators used by tests, the acceptance suite, and the CLI.
//!
//! The fixed families (`path`, `cycle`, `complete`, `star`) are
//! deterministic; [`random_td`] draws a random elimination tree of a given
//! depth and only adds edges between ancestors and descendants, so its
//! output has treedepth at most the requested depth by construction. The
//! string front end [`generate`] parses specs like `path(7)` or
//! `random_td(3,10)` for the command line; all randomness comes from the
//! caller's seed.

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

use crate::graph::{EliminationForest, Graph, NodeId};

/// Errors of the string front end.
#[derive(Debug, thiserror::Error)]
pub enum GenerateError {
    #[error("unknown generator `{0}`; known: path(n), cycle(n), complete(n), star(n), random_td(d,n)")]
    UnknownGenerator(String),
    #[error("bad generator parameters: {0}")]
    BadParams(String),
}

/// The path 1–2–…–n.
pub fn path(n: u32) -> Graph {
    Graph::from_edges(1..=n, (1..n).map(|i| (i, i + 1))).expect("a path is a simple graph")
}

/// The cycle 1–2–…–n–1; `n` must be at least 3.
pub fn cycle(n: u32) -> Graph {
    assert!(n >= 3, "a cycle needs at least three vertices");
    let edges = (1..n).map(|i| (i, i + 1)).chain([(n, 1)]);
    Graph::from_edges(1..=n, edges).expect("a cycle is a simple graph")
}

/// The complete graph on vertices 1..=n.
pub fn complete(n: u32) -> Graph {
    let edges = (1..=n).flat_map(|u| (u + 1..=n).map(move |v| (u, v)));
    Graph::from_edges(1..=n, edges).expect("a complete graph is a simple graph")
}

/// The star with center 1 and n−1 leaves.
pub fn star(n: u32) -> Graph {
    assert!(n >= 1, "a star needs its center");
    Graph::from_edges(1..=n, (2..=n).map(|v| (1, v))).expect("a star is a simple graph")
}

/// A random connected graph of treedepth at most `d`, with the elimination
/// tree that witnesses the bound.
///
/// A random tree of depth at most `d` is drawn on a random permutation of
/// the ids 1..=n; every tree edge becomes a graph edge (so the graph is
/// connected), and each further ancestor–descendant pair is added with
/// probability 0.3. Every edge of the result joins an ancestor and a
/// descendant of the returned tree, which is therefore an elimination
/// forest for it. Deterministic per seed.
///
/// # Panics
///
/// With `n = 0`, or with `d = 1` and `n > 1`: a connected graph with a
/// depth-1 elimination tree has exactly one vertex.
pub fn random_td(d: u32, n: u32, seed: u64) -> (Graph, EliminationForest) {
    assert!(n >= 1, "the graph needs a vertex");
    assert!(d >= 1, "the tree needs a level");
    assert!(d >= 2 || n == 1, "a depth-1 tree spans only a single vertex");
    let mut rng = StdRng::seed_from_u64(seed);
    let mut ids: Vec<u32> = (1..=n).collect();
    ids.shuffle(&mut rng);

    // Grow a random recursive tree, capping the depth: each vertex picks a
    // uniformly random parent among those not yet at the deepest level.
    let mut parent = std::collections::BTreeMap::new();
    let mut depth: Vec<(NodeId, u32)> = Vec::new();
    parent.insert(NodeId(ids[0]), NodeId(ids[0]));
    depth.push((NodeId(ids[0]), 1));
    for &id in &ids[1..] {
        let shallow: Vec<(NodeId, u32)> =
            depth.iter().copied().filter(|&(_, dep)| dep < d).collect();
        let &(p, pd) = &shallow[rng.random_range(0..shallow.len())];
        parent.insert(NodeId(id), p);
        depth.push((NodeId(id), pd + 1));
    }
    let forest = EliminationForest::from_parent(parent).expect("loops at the root only");

    let mut g = Graph::new();
    for &id in &ids {
        g.add_node(NodeId(id)).expect("fresh vertex");
    }
    for &id in &ids {
        let v = NodeId(id);
        let mut a = forest.parent(v);
        let mut first = true;
        while let Some(anc) = a {
            if first || rng.random_bool(0.3) {
                g.add_edge(v, anc).expect("ancestors are distinct existing vertices");
            }
            first = false;
            a = forest.parent(anc);
        }
    }
    (g, forest)
}

/// Parses a generator spec — `path(7)`, `cycle(5)`, `complete(4)`,
/// `star(6)`, or `random_td(3,10)` — and builds the graph. Only
/// `random_td` consumes the seed.
pub fn generate(spec: &str, seed: u64) -> Result<Graph, GenerateError> {
    let spec = spec.trim();
    let (name, rest) = spec
        .split_once('(')
        .ok_or_else(|| GenerateError::UnknownGenerator(spec.to_owned()))?;
    let args_text = rest
        .strip_suffix(')')
        .ok_or_else(|| GenerateError::BadParams(format!("`{spec}` misses the closing parenthesis")))?;
    let args: Vec<u32> = args_text
        .split(',')
        .map(|a| {
            a.trim()
                .parse::<u32>()
                .map_err(|_| GenerateError::BadParams(format!("`{a}` is not a number")))
        })
        .collect::<Result<_, _>>()?;
    let expect = |k: usize| {
        if args.len() == k {
            Ok(())
        } else {
            Err(GenerateError::BadParams(format!(
                "{name} takes {k} parameter{}, got {}",
                if k == 1 { "" } else { "s" },
                args.len()
            )))
        }
    };
    let positive = |x: u32, what: &str| {
        if x >= 1 {
            Ok(x)
        } else {
            Err(GenerateError::BadParams(format!("{what} must be at least 1")))
        }
    };
    match name.trim() {
        "path" => {
            expect(1)?;
            Ok(path(positive(args[0], "n")?))
        }
        "cycle" => {
            expect(1)?;
            if args[0] < 3 {
                return Err(GenerateError::BadParams("a cycle needs n >= 3".to_owned()));
            }
            Ok(cycle(args[0]))
        }
        "complete" => {
            expect(1)?;
            Ok(complete(positive(args[0], "n")?))
        }
        "star" => {
            expect(1)?;
            Ok(star(positive(args[0], "n")?))
        }
        "random_td" => {
            expect(2)?;
            let d = positive(args[0], "d")?;
            let n = positive(args[1], "n")?;
            if d == 1 && n > 1 {
                return Err(GenerateError::BadParams(
                    "random_td(1, n) is connected only for n = 1".to_owned(),
                ));
            }
            Ok(random_td(d, n, seed).0)
        }
        other => Err(GenerateError::UnknownGenerator(other.to_owned())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{check_elimination_forest, exact_treedepth};

    #[test]
    fn fixed_families_have_their_textbook_shapes() {
        assert_eq!(path(7).n(), 7);
        assert_eq!(path(7).m(), 6);
        assert_eq!(exact_treedepth(&path(7)).unwrap().depth, 3);
        assert_eq!(cycle(5).m(), 5);
        assert_eq!(complete(4).m(), 6);
        assert_eq!(star(6).m(), 5);
        assert!(star(6).neighbors(NodeId(1)).count() == 5);
    }

    #[test]
    fn random_graphs_carry_their_witness_tree() {
        for seed in 0..20 {
            for (d, n) in [(2, 8), (3, 10), (3, 40), (4, 64)] {
                let (g, forest) = random_td(d, n, seed);
                assert_eq!(g.n() as u32, n);
                assert!(g.is_connected(), "tree edges make the graph connected");
                assert!(check_elimination_forest(&g, &forest), "d={d} n={n} seed={seed}");
                assert!(forest.depth_of_forest() <= d);
            }
        }
    }

    #[test]
    fn small_random_graphs_stay_below_the_depth_bound() {
        for seed in 0..10 {
            let (g, _) = random_td(3, 10, seed);
            assert!(exact_treedepth(&g).unwrap().depth <= 3);
        }
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let a = random_td(3, 30, 11).0;
        let b = random_td(3, 30, 11).0;
        let c = random_td(3, 30, 12).0;
        assert_eq!(a, b);
        assert_ne!(a, c, "two seeds giving one graph would be a miracle worth a look");
    }

    #[test]
    fn the_string_front_end_parses_and_rejects() {
        assert_eq!(generate("path(7)", 0).unwrap().n(), 7);
        assert_eq!(generate("random_td(3, 10)", 5).unwrap(), random_td(3, 10, 5).0);
        assert!(matches!(generate("blob(3)", 0), Err(GenerateError::UnknownGenerator(_))));
        assert!(matches!(generate("path(x)", 0), Err(GenerateError::BadParams(_))));
        assert!(matches!(generate("path(1,2)", 0), Err(GenerateError::BadParams(_))));
        assert!(matches!(generate("cycle(2)", 0), Err(GenerateError::BadParams(_))));
        assert!(matches!(generate("random_td(1,5)", 0), Err(GenerateError::BadParams(_))));
        assert!(matches!(generate("path", 0), Err(GenerateError::UnknownGenerator(_))));
    }
}
