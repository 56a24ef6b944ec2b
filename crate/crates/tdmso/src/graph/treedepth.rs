//! Exact treedepth by memoized recursion over vertex subsets.
//!
//! td(G) = 1 on a single vertex, 1 + min_v td(G - v) when G is connected,
//! and the max over connected components otherwise. The memo is keyed by
//! subset bitmask, so dense instances are limited to ~12 vertices, while
//! sparse instances whose recursion only ever sees few distinct subsets
//! (paths visit intervals only) go much further. The explored-state budget
//! is what actually gates the computation.

use std::collections::HashMap;

use super::{EliminationForest, Graph, GraphError, NodeId};

/// Upper bound on memoized connected subsets before giving up.
pub const TD_STATE_BUDGET: usize = 1 << 20;

pub struct TreedepthResult {
    pub depth: u32,
    pub forest: EliminationForest,
}

struct Ctx {
    ids: Vec<NodeId>,
    nbr: Vec<u64>,
    /// connected mask -> (treedepth, index of a best root)
    memo: HashMap<u64, (u32, u8)>,
}

impl Ctx {
    fn components(&self, mask: u64) -> Vec<u64> {
        let mut rest = mask;
        let mut comps = Vec::new();
        while rest != 0 {
            let start = rest.trailing_zeros();
            let mut comp = 1u64 << start;
            loop {
                let mut grown = comp;
                let mut bits = comp;
                while bits != 0 {
                    let i = bits.trailing_zeros() as usize;
                    bits &= bits - 1;
                    grown |= self.nbr[i] & mask;
                }
                if grown == comp {
                    break;
                }
                comp = grown;
            }
            comps.push(comp);
            rest &= !comp;
        }
        comps
    }

    fn td(&mut self, mask: u64) -> Result<u32, GraphError> {
        debug_assert_ne!(mask, 0);
        if mask.count_ones() == 1 {
            return Ok(1);
        }
        let comps = self.components(mask);
        if comps.len() > 1 {
            let mut best = 0;
            for c in comps {
                best = best.max(self.td(c)?);
            }
            return Ok(best);
        }
        if let Some(&(d, _)) = self.memo.get(&mask) {
            return Ok(d);
        }
        if self.memo.len() >= TD_STATE_BUDGET {
            return Err(GraphError::SizeLimit(self.memo.len()));
        }
        // reserve the slot up front so the budget check sees it
        self.memo.insert(mask, (u32::MAX, 0));
        let mut best = u32::MAX;
        let mut best_root = 0u8;
        let mut bits = mask;
        while bits != 0 {
            let i = bits.trailing_zeros();
            bits &= bits - 1;
            let d = 1 + self.td(mask & !(1u64 << i))?;
            if d < best {
                best = d;
                best_root = i as u8;
            }
        }
        self.memo.insert(mask, (best, best_root));
        Ok(best)
    }

    /// Rebuilds an optimal elimination forest for `mask`, attaching every
    /// component root below `parent`.
    fn build(&mut self, mask: u64, parent: Option<NodeId>, forest: &mut Vec<(NodeId, NodeId)>) {
        for comp in self.components(mask) {
            let root_idx = if comp.count_ones() == 1 {
                comp.trailing_zeros() as u8
            } else {
                self.memo[&comp].1
            };
            let root = self.ids[root_idx as usize];
            forest.push((root, parent.unwrap_or(root)));
            let rest = comp & !(1u64 << root_idx);
            if rest != 0 {
                self.build(rest, Some(root), forest);
            }
        }
    }
}

/// Computes exact treedepth together with a witnessing elimination forest of
/// that depth. Instances whose recursion exceeds [`TD_STATE_BUDGET`]
/// memoized subsets fail with `SizeLimit`; anything with at most 12 vertices
/// is always within budget.
pub fn exact_treedepth(g: &Graph) -> Result<TreedepthResult, GraphError> {
    let ids: Vec<NodeId> = g.nodes().collect();
    if ids.is_empty() {
        return Err(GraphError::SizeLimit(0));
    }
    if ids.len() > 64 {
        return Err(GraphError::SizeLimit(usize::MAX));
    }
    let index: HashMap<NodeId, usize> = ids.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let mut nbr = vec![0u64; ids.len()];
    for (u, v) in g.edges() {
        let (i, j) = (index[&u], index[&v]);
        nbr[i] |= 1 << j;
        nbr[j] |= 1 << i;
    }
    let full = if ids.len() == 64 { u64::MAX } else { (1u64 << ids.len()) - 1 };
    let mut ctx = Ctx { ids, nbr, memo: HashMap::new() };
    let depth = ctx.td(full)?;
    let mut edges = Vec::new();
    ctx.build(full, None, &mut edges);
    let forest = EliminationForest::from_parent(edges.into_iter().collect())?;
    debug_assert_eq!(forest.depth_of_forest(), depth);
    Ok(TreedepthResult { depth, forest })
}
