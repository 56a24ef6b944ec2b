//! Elimination forests and the tree decompositions they induce.
//!
//! An elimination forest for G places every vertex in a rooted forest such
//! that each edge of G joins an ancestor-descendant pair. The bag of a
//! vertex u is {u} plus its ancestors; those bags, wired parent-to-parent,
//! form a tree decomposition of width (forest depth - 1).

use std::collections::{BTreeMap, BTreeSet};

use super::{Graph, GraphError, NodeId};

/// Rooted forest given by a parent map; roots map to themselves.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EliminationForest {
    parent: BTreeMap<NodeId, NodeId>,
    depth: BTreeMap<NodeId, u32>,
    children: BTreeMap<NodeId, Vec<NodeId>>,
}

impl EliminationForest {
    /// Validates the parent map (every parent is a vertex, no cycles) and
    /// precomputes depths (roots have depth 1) and sorted child lists.
    pub fn from_parent(parent: BTreeMap<NodeId, NodeId>) -> Result<Self, GraphError> {
        for (&v, &p) in &parent {
            if !parent.contains_key(&p) {
                return Err(GraphError::InvalidForest(format!(
                    "parent of {v} is {p}, which is not a vertex"
                )));
            }
        }
        let mut depth: BTreeMap<NodeId, u32> = BTreeMap::new();
        for &v in parent.keys() {
            if depth.contains_key(&v) {
                continue;
            }
            let mut chain = vec![v];
            let mut cur = v;
            loop {
                let p = parent[&cur];
                if p == cur {
                    // reached a root
                    let mut d = 1;
                    if let Some(&dp) = depth.get(&cur) {
                        d = dp;
                        chain.pop();
                    }
                    for &w in chain.iter().rev() {
                        depth.insert(w, d);
                        d += 1;
                    }
                    break;
                }
                if let Some(&dp) = depth.get(&p) {
                    for (d, &w) in (dp + 1..).zip(chain.iter().rev()) {
                        depth.insert(w, d);
                    }
                    break;
                }
                if chain.contains(&p) {
                    return Err(GraphError::InvalidForest(format!("cycle through {p}")));
                }
                chain.push(p);
                cur = p;
            }
        }
        let mut children: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
        for &v in parent.keys() {
            children.entry(v).or_default();
        }
        for (&v, &p) in &parent {
            if p != v {
                children.get_mut(&p).unwrap().push(v);
            }
        }
        Ok(Self { parent, depth, children })
    }

    pub fn vertices(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.parent.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn parent(&self, v: NodeId) -> Option<NodeId> {
        let p = *self.parent.get(&v)?;
        if p == v {
            None
        } else {
            Some(p)
        }
    }

    pub fn is_root(&self, v: NodeId) -> bool {
        self.parent.get(&v) == Some(&v)
    }

    pub fn roots(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.parent.iter().filter(|(v, p)| v == p).map(|(&v, _)| v)
    }

    /// Depth of v; roots have depth 1.
    pub fn depth(&self, v: NodeId) -> u32 {
        self.depth[&v]
    }

    pub fn depth_of_forest(&self) -> u32 {
        self.depth.values().copied().max().unwrap_or(0)
    }

    /// Children of v in ascending id order.
    pub fn children(&self, v: NodeId) -> &[NodeId] {
        self.children.get(&v).map_or(&[], |c| c.as_slice())
    }

    /// Strict ancestors of v, nearest first.
    pub fn ancestors(&self, v: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut cur = v;
        while let Some(p) = self.parent(cur) {
            out.push(p);
            cur = p;
        }
        out
    }

    /// {v} plus its ancestors, ascending by id.
    pub fn bag(&self, v: NodeId) -> Vec<NodeId> {
        let mut b = self.ancestors(v);
        b.push(v);
        b.sort();
        b
    }

    pub fn parent_map(&self) -> &BTreeMap<NodeId, NodeId> {
        &self.parent
    }
}

/// True iff `f` spans exactly V(g) and every edge of g joins an
/// ancestor-descendant pair of `f`.
pub fn check_elimination_forest(g: &Graph, f: &EliminationForest) -> bool {
    if g.n() != f.len() || !g.nodes().all(|v| f.parent.contains_key(&v)) {
        return false;
    }
    let mut anc_cache: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::new();
    let mut ancestors_of = |v: NodeId, f: &EliminationForest| -> BTreeSet<NodeId> {
        if let Some(a) = anc_cache.get(&v) {
            return a.clone();
        }
        let a: BTreeSet<NodeId> = f.ancestors(v).into_iter().collect();
        anc_cache.insert(v, a.clone());
        a
    };
    for (u, v) in g.edges() {
        let au = ancestors_of(u, f);
        let av = ancestors_of(v, f);
        if !au.contains(&v) && !av.contains(&u) {
            return false;
        }
    }
    true
}

/// Tree decomposition with one bag per graph vertex. Bag contents are kept
/// sorted ascending; the bag tree reuses vertex ids as bag ids, with roots
/// mapping to themselves.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeDecomposition {
    bags: BTreeMap<NodeId, Vec<NodeId>>,
    parent: BTreeMap<NodeId, NodeId>,
}

impl TreeDecomposition {
    pub fn bag(&self, u: NodeId) -> &[NodeId] {
        &self.bags[&u]
    }

    pub fn bag_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.bags.keys().copied()
    }

    pub fn parent(&self, u: NodeId) -> Option<NodeId> {
        let p = *self.parent.get(&u)?;
        if p == u {
            None
        } else {
            Some(p)
        }
    }

    pub fn roots(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.parent.iter().filter(|(v, p)| v == p).map(|(&v, _)| v)
    }

    pub fn children(&self, u: NodeId) -> Vec<NodeId> {
        self.parent
            .iter()
            .filter(|&(&c, &p)| p == u && c != u)
            .map(|(&c, _)| c)
            .collect()
    }

    pub fn width(&self) -> usize {
        self.bags.values().map(|b| b.len()).max().unwrap_or(0).saturating_sub(1)
    }

    /// Checks the three decomposition conditions against `g`: every vertex
    /// occurs in a bag, every edge fits inside some bag, and the bags
    /// containing any fixed vertex form a connected subtree.
    pub fn validate(&self, g: &Graph) -> Result<(), String> {
        let mut seen: BTreeSet<NodeId> = BTreeSet::new();
        for bag in self.bags.values() {
            let mut sorted = bag.clone();
            sorted.sort();
            sorted.dedup();
            if sorted != *bag {
                return Err(format!("bag {bag:?} is not sorted-unique"));
            }
            seen.extend(bag.iter().copied());
        }
        for v in g.nodes() {
            if !seen.contains(&v) {
                return Err(format!("vertex {v} appears in no bag"));
            }
        }
        for (u, v) in g.edges() {
            if !self
                .bags
                .values()
                .any(|b| b.binary_search(&u).is_ok() && b.binary_search(&v).is_ok())
            {
                return Err(format!("edge {u}-{v} fits in no bag"));
            }
        }
        for v in seen {
            let holding: BTreeSet<NodeId> = self
                .bags
                .iter()
                .filter(|(_, b)| b.binary_search(&v).is_ok())
                .map(|(&id, _)| id)
                .collect();
            let tops = holding
                .iter()
                .filter(|&&b| match self.parent(b) {
                    Some(p) => !holding.contains(&p),
                    None => true,
                })
                .count();
            if tops != 1 {
                return Err(format!("bags holding {v} form {tops} subtrees"));
            }
        }
        Ok(())
    }
}

/// The canonical decomposition induced by an elimination forest: bag(u) =
/// {u} + ancestors(u), wired along the forest. Fails with `InvalidForest`
/// when `f` is not an elimination forest for `g`.
pub fn canonical_decomposition(g: &Graph, f: &EliminationForest) -> Result<TreeDecomposition, GraphError> {
    if !check_elimination_forest(g, f) {
        return Err(GraphError::InvalidForest(
            "not an elimination forest for the graph".into(),
        ));
    }
    let mut bags = BTreeMap::new();
    let mut parent = BTreeMap::new();
    for v in f.vertices() {
        bags.insert(v, f.bag(v));
        parent.insert(v, f.parent(v).unwrap_or(v));
    }
    Ok(TreeDecomposition { bags, parent })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn star() -> (Graph, EliminationForest) {
        let g = Graph::from_edges(1..=5, [(1, 2), (1, 3), (1, 4), (1, 5)]).unwrap();
        let parent: BTreeMap<NodeId, NodeId> = (1..=5).map(|v| (NodeId(v), NodeId(1))).collect();
        (g, EliminationForest::from_parent(parent).unwrap())
    }

    #[test]
    fn star_forest_checks_out() {
        let (g, f) = star();
        assert!(check_elimination_forest(&g, &f));
        assert_eq!(f.depth_of_forest(), 2);
        assert_eq!(f.depth(NodeId(1)), 1);
        assert_eq!(f.depth(NodeId(4)), 2);
        assert_eq!(f.children(NodeId(1)), &[NodeId(2), NodeId(3), NodeId(4), NodeId(5)]);
    }

    #[test]
    fn sibling_edge_fails_the_check() {
        // P_3 = 1-2-3 with 2 and 3 both children of 1: edge {2,3} joins
        // siblings, so this is not an elimination forest.
        let g = Graph::from_edges(1..=3, [(1, 2), (2, 3)]).unwrap();
        let parent: BTreeMap<NodeId, NodeId> =
            [(NodeId(1), NodeId(1)), (NodeId(2), NodeId(1)), (NodeId(3), NodeId(1))].into();
        let f = EliminationForest::from_parent(parent).unwrap();
        assert!(!check_elimination_forest(&g, &f));
    }

    #[test]
    fn cycle_in_parent_map_is_rejected() {
        let parent: BTreeMap<NodeId, NodeId> =
            [(NodeId(1), NodeId(2)), (NodeId(2), NodeId(1))].into();
        assert!(matches!(
            EliminationForest::from_parent(parent),
            Err(GraphError::InvalidForest(_))
        ));
    }

    #[test]
    fn canonical_bags_for_a_path_chain() {
        // P_3 with elimination tree 2 root, children 1 and 3
        let g = Graph::from_edges(1..=3, [(1, 2), (2, 3)]).unwrap();
        let parent: BTreeMap<NodeId, NodeId> =
            [(NodeId(1), NodeId(2)), (NodeId(2), NodeId(2)), (NodeId(3), NodeId(2))].into();
        let f = EliminationForest::from_parent(parent).unwrap();
        let td = canonical_decomposition(&g, &f).unwrap();
        assert_eq!(td.bag(NodeId(1)), &[NodeId(1), NodeId(2)]);
        assert_eq!(td.bag(NodeId(2)), &[NodeId(2)]);
        assert_eq!(td.bag(NodeId(3)), &[NodeId(2), NodeId(3)]);
        assert_eq!(td.width(), 1);
        td.validate(&g).unwrap();
        assert_eq!(td.width() + 1, f.depth_of_forest() as usize);
    }

    #[test]
    fn invalid_forest_is_reported() {
        let g = Graph::from_edges(1..=3, [(1, 2), (2, 3), (1, 3)]).unwrap();
        let parent: BTreeMap<NodeId, NodeId> =
            [(NodeId(1), NodeId(1)), (NodeId(2), NodeId(1)), (NodeId(3), NodeId(1))].into();
        let f = EliminationForest::from_parent(parent).unwrap();
        assert!(matches!(
            canonical_decomposition(&g, &f),
            Err(GraphError::InvalidForest(_))
        ));
    }

    #[test]
    fn random_ancestor_graphs_validate() {
        // build a random forest, add only ancestor-descendant edges, and
        // confirm the canonical decomposition satisfies all three conditions
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..40 {
            let n = rng.random_range(1..=10u32);
            let mut parent = BTreeMap::new();
            parent.insert(NodeId(1), NodeId(1));
            for v in 2..=n {
                let p = rng.random_range(1..v);
                parent.insert(NodeId(v), NodeId(p));
            }
            let f = EliminationForest::from_parent(parent).unwrap();
            let mut g = Graph::new();
            for v in 1..=n {
                g.add_node(NodeId(v)).unwrap();
            }
            for v in 1..=n {
                for a in f.ancestors(NodeId(v)) {
                    if rng.random_bool(0.5) {
                        g.add_edge(NodeId(v), a).unwrap();
                    }
                }
            }
            assert!(check_elimination_forest(&g, &f));
            let td = canonical_decomposition(&g, &f).unwrap();
            td.validate(&g).unwrap();
            assert_eq!(td.width() + 1, f.depth_of_forest() as usize);
        }
    }
}
