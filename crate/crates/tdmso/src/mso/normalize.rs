//! Normalization into the compiler's input fragment.
//!
//! The compiler works over set variables only. Normalization therefore
//! rewrites a formula so that
//!
//! * every first-order variable becomes a set variable constrained to be a
//!   singleton (`exists_v x. φ` becomes `exists_vs x. (sing(x) & φ')`, and
//!   free first-order variables get their `sing` conjoined at the top);
//! * `forall` becomes `~ exists ~` and `->` becomes `~_ |`;
//! * first-order atoms are lifted to their set forms (`adj` to `adjS`,
//!   `inc` to `incS`, `in` to `sub`, `label` to `labelS`), and `=` becomes
//!   mutual `sub`.
//!
//! On singleton sets each lifted atom agrees with the original, so the
//! rewrite preserves truth values; free first-order values correspond to
//! singleton-set values (see [`Assignment::into_singletons`]).
//! Quantifier rank is preserved and the rewrite is idempotent.
//!
//! [`Assignment::into_singletons`]: super::Assignment::into_singletons

use std::ops::Not;

use super::ast::{Atom, Body, MsoFormula, Sort};

/// Rewrites `f` into the normalized fragment (see the module docs).
pub fn normalize(f: &MsoFormula) -> MsoFormula {
    let free: Vec<(String, Sort)> = f
        .free_decls()
        .iter()
        .map(|(name, sort)| (name.clone(), sort.set_sort()))
        .collect();
    let mut body = norm(f.body());
    // constrain originally first-order free variables to singletons,
    // innermost-last so the declaration order reads off the conjunction
    for (name, sort) in f.free_decls().iter().rev() {
        if !sort.is_set() {
            body = Body::Atom(Atom::Sing(name.clone())).and(body);
        }
    }
    MsoFormula::new(free, body).expect("normalization preserves well-sortedness")
}

fn norm(b: &Body) -> Body {
    match b {
        Body::Atom(a) => lift_atom(a),
        Body::Not(x) => norm(x).not(),
        Body::And(l, r) => norm(l).and(norm(r)),
        Body::Or(l, r) => norm(l).or(norm(r)),
        Body::Implies(l, r) => norm(l).not().or(norm(r)),
        Body::Exists(sort, var, x) => {
            let inner = norm(x);
            if sort.is_set() {
                Body::exists(*sort, var.clone(), inner)
            } else {
                Body::exists(
                    sort.set_sort(),
                    var.clone(),
                    Body::Atom(Atom::Sing(var.clone())).and(inner),
                )
            }
        }
        Body::Forall(sort, var, x) => {
            let inner = norm(x).not();
            let ex = if sort.is_set() {
                Body::exists(*sort, var.clone(), inner)
            } else {
                Body::exists(
                    sort.set_sort(),
                    var.clone(),
                    Body::Atom(Atom::Sing(var.clone())).and(inner),
                )
            };
            ex.not()
        }
    }
}

fn lift_atom(a: &Atom) -> Body {
    match a {
        Atom::Adj(x, y) => Body::Atom(Atom::AdjSet(x.clone(), y.clone())),
        Atom::Inc(v, e) => Body::Atom(Atom::IncSet(v.clone(), e.clone())),
        Atom::In(x, set) => Body::Atom(Atom::Sub(x.clone(), set.clone())),
        Atom::Label(name, x) => Body::Atom(Atom::LabelSet(name.clone(), x.clone())),
        Atom::Eq(x, y) => Body::Atom(Atom::Sub(x.clone(), y.clone()))
            .and(Body::Atom(Atom::Sub(y.clone(), x.clone()))),
        set_atom => Body::Atom(set_atom.clone()),
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};

    use super::*;
    use crate::graph::{Graph, NodeId};
    use crate::mso::{eval_bruteforce, library, parse_formula, Assignment, Value};

    #[test]
    fn normalized_form_is_in_the_fragment_and_keeps_rank() {
        for f in [
            library::triangle_free(),
            library::acyclic(),
            library::two_coloring_is_proper(),
            library::connected(),
            library::independent_set(),
            library::vertex_cover(),
            library::dominating_set(),
            library::perfect_matching(),
        ] {
            let n = normalize(&f);
            assert!(n.is_normalized(), "{n}");
            assert_eq!(n.quantifier_rank(), f.quantifier_rank());
        }
    }

    #[test]
    fn normalization_is_idempotent() {
        for f in [
            library::triangle_free(),
            library::acyclic(),
            library::independent_set(),
            library::perfect_matching(),
            parse_formula("free v x\nfree vs S\nx in S -> exists_e e. inc(x,e)").unwrap(),
        ] {
            let once = normalize(&f);
            assert_eq!(normalize(&once), once);
        }
    }

    #[test]
    fn singleton_example_from_first_order_adjacency() {
        let f = parse_formula("exists_v x. adj(x,x)").unwrap();
        let n = normalize(&f);
        assert_eq!(n.to_string(), "exists_vs x. sing(x) & adjS(x,x)");
        // still false everywhere (no self-loops)
        let k3 = Graph::from_edges(1..=3, [(1, 2), (2, 3), (1, 3)]).unwrap();
        assert!(!eval_bruteforce(&k3, &n, &Assignment::new()).unwrap());
    }

    #[test]
    fn set_quantifier_normalization_keeps_verdicts() {
        // `connected` universally quantifies a set variable
        let f = library::connected();
        let nf = normalize(&f);
        let p3 = Graph::from_edges(1..=3, [(1, 2), (2, 3)]).unwrap();
        let split = Graph::from_edges(1..=3, [(1, 2)]).unwrap();
        for (g, want) in [(&p3, true), (&split, false)] {
            assert_eq!(eval_bruteforce(g, &f, &Assignment::new()).unwrap(), want);
            assert_eq!(eval_bruteforce(g, &nf, &Assignment::new()).unwrap(), want);
        }
    }

    /// Random well-sorted formulas over a fixed variable pool, for
    /// equivalence sweeps.
    fn random_body(rng: &mut impl Rng, depth: u32, scope: &mut Vec<(String, Sort)>) -> Body {
        let pick = |rng: &mut dyn rand::RngCore, scope: &[(String, Sort)], sort: Sort| {
            let hits: Vec<&String> =
                scope.iter().filter(|(_, s)| *s == sort).map(|(n, _)| n).collect();
            if hits.is_empty() {
                None
            } else {
                Some(hits[rng.random_range(0..hits.len())].clone())
            }
        };
        // try atoms when shallow or by chance
        if depth == 0 || rng.random_bool(0.4) {
            for _ in 0..8 {
                let roll = rng.random_range(0..6);
                let atom = match roll {
                    0 => pick(rng, scope, Sort::Vertex)
                        .zip(pick(rng, scope, Sort::Vertex))
                        .map(|(x, y)| Atom::Adj(x, y)),
                    1 => pick(rng, scope, Sort::Vertex)
                        .zip(pick(rng, scope, Sort::Edge))
                        .map(|(v, e)| Atom::Inc(v, e)),
                    2 => pick(rng, scope, Sort::Vertex)
                        .zip(pick(rng, scope, Sort::VertexSet))
                        .map(|(x, s)| Atom::In(x, s)),
                    3 => pick(rng, scope, Sort::Vertex)
                        .zip(pick(rng, scope, Sort::Vertex))
                        .map(|(x, y)| Atom::Eq(x, y)),
                    4 => pick(rng, scope, Sort::Vertex)
                        .map(|x| Atom::Label("red".into(), x)),
                    _ => pick(rng, scope, Sort::Edge)
                        .zip(pick(rng, scope, Sort::EdgeSet))
                        .map(|(e, s)| Atom::In(e, s)),
                };
                if let Some(a) = atom {
                    return Body::Atom(a);
                }
            }
            // fall back to quantifying a fresh vertex variable
        }
        let var = format!("q{}", scope.len());
        match rng.random_range(0..6) {
            0 => {
                let sort = [Sort::Vertex, Sort::Edge, Sort::VertexSet, Sort::EdgeSet]
                    [rng.random_range(0..4)];
                scope.push((var.clone(), sort));
                let inner = random_body(rng, depth.saturating_sub(1), scope);
                scope.pop();
                Body::exists(sort, var, inner)
            }
            1 => {
                let sort = [Sort::Vertex, Sort::Edge][rng.random_range(0..2)];
                scope.push((var.clone(), sort));
                let inner = random_body(rng, depth.saturating_sub(1), scope);
                scope.pop();
                Body::forall(sort, var, inner)
            }
            2 => random_body(rng, depth.saturating_sub(1), scope).not(),
            3 => random_body(rng, depth.saturating_sub(1), scope)
                .and(random_body(rng, depth.saturating_sub(1), scope)),
            4 => random_body(rng, depth.saturating_sub(1), scope)
                .or(random_body(rng, depth.saturating_sub(1), scope)),
            _ => random_body(rng, depth.saturating_sub(1), scope)
                .implies(random_body(rng, depth.saturating_sub(1), scope)),
        }
    }

    #[test]
    fn normalization_preserves_verdicts_on_random_cases() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);
        let mut cases = 0;
        while cases < 500 {
            // a small random graph with labels
            let n = rng.random_range(1..=4u32);
            let mut g = Graph::new();
            for v in 1..=n {
                g.add_node(NodeId(v)).unwrap();
                if rng.random_bool(0.4) {
                    g.add_node_label(NodeId(v), "red").unwrap();
                }
            }
            for u in 1..=n {
                for v in (u + 1)..=n {
                    if rng.random_bool(0.5) {
                        g.add_edge(NodeId(u), NodeId(v)).unwrap();
                    }
                }
            }
            // a formula with a free vertex variable and a free vertex set
            let mut scope = vec![("a".to_string(), Sort::Vertex), ("S".to_string(), Sort::VertexSet)];
            let body = random_body(&mut rng, 2, &mut scope);
            let f = MsoFormula::new(scope.clone(), body).unwrap();
            let a = assignment_for(&mut rng, &g);
            let Ok(verdict) = eval_bruteforce(&g, &f, &a) else {
                continue; // size guard rejected; try another case
            };
            let nf = normalize(&f);
            let na = a.clone().into_singletons();
            assert_eq!(
                eval_bruteforce(&g, &nf, &na).unwrap(),
                verdict,
                "formula {f} vs normalized {nf} on {:?} with {a:?}",
                g.edges().collect::<Vec<_>>()
            );
            cases += 1;
        }
    }

    fn assignment_for(rng: &mut impl Rng, g: &Graph) -> Assignment {
        let nodes: Vec<NodeId> = g.nodes().collect();
        let a_val = nodes[rng.random_range(0..nodes.len())];
        let s_val: std::collections::BTreeSet<NodeId> =
            nodes.iter().copied().filter(|_| rng.random_bool(0.5)).collect();
        Assignment::new()
            .set("a", Value::Vertex(a_val))
            .set("S", Value::VertexSet(s_val))
    }
}
