//! Serializable run reports for the CLI and the acceptance suite.
//!
//! Reports are versioned, flat JSON objects with a stable key order, so
//! they can serve as golden files and as machine-readable experiment
//! output. [`RunReport`] covers the single-run modes (decide, optimize,
//! count, marked-optimality) including the large-treedepth outcome;
//! [`HFreeReport`] covers the pattern-freeness pipeline, which aggregates
//! many runs.
//!
//! Schema version 1 keys, in order: `schema`, `mode`, `n`, `m`, `d`,
//! `budget_factor`, optional `seed`, `outcome`, then the
//! outcome-dependent fields `verdict` / `value` / `count` / `witness`,
//! then the accounting fields `rounds_total`, `rounds_elim_tree`,
//! `rounds_bags`, `rounds_bottom_up`, `rounds_top_down`,
//! `max_message_bits`, `budget_bits`, `class_count`, `class_bits`,
//! `tree_depth`. Absent optional fields are omitted, not null.

use num_bigint::BigUint;
use serde::Serialize;

use crate::algebra::SelectedSet;
use crate::graph::{Graph, NodeId};
use crate::protocols::{CountRun, DecideRun, MarkedRun, OptimizeRun, ProtocolReport};
use crate::sim::RoundTrace;

/// Version stamp written into every report.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// An optimization witness in JSON form: one of the two fields is set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct WitnessReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vertices: Option<Vec<NodeId>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<(NodeId, NodeId)>>,
}

impl WitnessReport {
    pub fn from_selected(sel: &SelectedSet) -> WitnessReport {
        match sel {
            SelectedSet::Vertices(vs) => WitnessReport {
                vertices: Some(vs.iter().copied().collect()),
                edges: None,
            },
            SelectedSet::Edges(es) => WitnessReport {
                vertices: None,
                edges: Some(es.iter().copied().collect()),
            },
        }
    }
}

/// Report of one protocol run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RunReport {
    pub schema: u32,
    pub mode: String,
    pub n: usize,
    pub m: usize,
    pub d: u32,
    pub budget_factor: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// `accept`, `reject`, `value`, `count`, or `large-treedepth`.
    pub outcome: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<i64>,
    /// Exact count as a decimal string; counts overflow JSON numbers.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub count: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<WitnessReport>,
    pub rounds_total: u32,
    pub rounds_elim_tree: u32,
    pub rounds_bags: u32,
    pub rounds_bottom_up: u32,
    pub rounds_top_down: u32,
    pub max_message_bits: usize,
    pub budget_bits: usize,
    pub class_count: usize,
    pub class_bits: usize,
    pub tree_depth: u32,
}

impl RunReport {
    fn base(mode: &str, g: &Graph, d: u32, budget_factor: u32) -> RunReport {
        RunReport {
            schema: REPORT_SCHEMA_VERSION,
            mode: mode.to_owned(),
            n: g.n(),
            m: g.m(),
            d,
            budget_factor,
            seed: None,
            outcome: String::new(),
            verdict: None,
            value: None,
            count: None,
            witness: None,
            rounds_total: 0,
            rounds_elim_tree: 0,
            rounds_bags: 0,
            rounds_bottom_up: 0,
            rounds_top_down: 0,
            max_message_bits: 0,
            budget_bits: 0,
            class_count: 0,
            class_bits: 0,
            tree_depth: 0,
        }
    }

    fn fill(&mut self, r: &ProtocolReport) {
        self.rounds_total = r.rounds_total;
        self.rounds_elim_tree = r.rounds_elim_tree;
        self.rounds_bags = r.rounds_bags;
        self.rounds_bottom_up = r.rounds_bottom_up;
        self.rounds_top_down = r.rounds_top_down;
        self.max_message_bits = r.max_message_bits;
        self.budget_bits = r.budget_bits;
        self.class_count = r.class_count;
        self.class_bits = r.class_bits;
        self.tree_depth = r.tree_depth;
    }

    pub fn decide(g: &Graph, d: u32, budget_factor: u32, run: &DecideRun) -> RunReport {
        let mut rep = RunReport::base("check", g, d, budget_factor);
        rep.outcome = if run.accept { "accept" } else { "reject" }.to_owned();
        rep.verdict = Some(run.accept);
        rep.fill(&run.report);
        rep
    }

    pub fn optimize(g: &Graph, d: u32, budget_factor: u32, run: &OptimizeRun) -> RunReport {
        let mut rep = RunReport::base("opt", g, d, budget_factor);
        rep.outcome = "value".to_owned();
        rep.value = Some(run.value);
        rep.witness = Some(WitnessReport::from_selected(&run.witness));
        rep.fill(&run.report);
        rep
    }

    pub fn count(g: &Graph, d: u32, budget_factor: u32, run: &CountRun) -> RunReport {
        let mut rep = RunReport::base("count", g, d, budget_factor);
        rep.outcome = "count".to_owned();
        rep.count = Some(run.total.to_string());
        rep.fill(&run.report);
        rep
    }

    pub fn optmarked(g: &Graph, d: u32, budget_factor: u32, run: &MarkedRun) -> RunReport {
        let mut rep = RunReport::base("optmarked", g, d, budget_factor);
        rep.outcome = if run.accept { "accept" } else { "reject" }.to_owned();
        rep.verdict = Some(run.accept);
        rep.fill(&run.report);
        rep
    }

    /// The run ended with every vertex reporting that no tree of the
    /// requested depth exists; all rounds were spent on the build attempt.
    pub fn large_treedepth(
        mode: &str,
        g: &Graph,
        d: u32,
        budget_factor: u32,
        trace: &RoundTrace,
    ) -> RunReport {
        let mut rep = RunReport::base(mode, g, d, budget_factor);
        rep.outcome = "large-treedepth".to_owned();
        rep.rounds_total = trace.rounds;
        rep.rounds_elim_tree = trace.rounds;
        rep.max_message_bits = trace.max_bits();
        rep.budget_bits = trace.budget_bits;
        rep
    }

    pub fn with_seed(mut self, seed: u64) -> RunReport {
        self.seed = Some(seed);
        self
    }

    /// Pretty JSON with a trailing newline — the golden-file form.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports always serialize");
        s.push('\n');
        s
    }
}

/// Report of one pattern-freeness pipeline run (many protocol runs, one
/// per connected component of each part-union).
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct HFreeReport {
    pub schema: u32,
    pub mode: String,
    pub n: usize,
    pub m: usize,
    pub pattern_n: usize,
    pub pattern_m: usize,
    pub induced: bool,
    /// The pattern's vertex count; part unions of up to this many parts
    /// are searched.
    pub p: u32,
    /// Number of parts in the partition.
    pub parts: u32,
    /// `h-free` or `copy-found`.
    pub outcome: String,
    pub verdict: bool,
    pub index_sets: usize,
    pub component_runs: usize,
    /// Rounds summed over all component runs — the sequential reading.
    pub rounds_sum: u64,
    /// The largest single component run — the parallel reading.
    pub rounds_max: u32,
    pub max_message_bits: usize,
}

impl HFreeReport {
    /// Pretty JSON with a trailing newline — the golden-file form.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports always serialize");
        s.push('\n');
        s
    }
}

/// Exact count rendered for humans: the decimal string.
pub fn count_display(total: &BigUint) -> String {
    total.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_are_stable_and_optionals_vanish() {
        let g = crate::generate::path(3);
        let mut rep = RunReport::base("check", &g, 2, 64);
        rep.outcome = "accept".to_owned();
        rep.verdict = Some(true);
        let json = rep.to_json();
        let order = ["schema", "mode", "\"n\"", "\"m\"", "\"d\"", "budget_factor", "outcome", "verdict", "rounds_total"];
        let mut at = 0;
        for key in order {
            let pos = json[at..].find(key).unwrap_or_else(|| panic!("{key} after byte {at}"));
            at += pos;
        }
        assert!(!json.contains("seed"), "absent optionals are omitted");
        assert!(!json.contains("value"));
        assert!(!json.contains("witness"));
        assert!(json.ends_with('\n'));
    }

    #[test]
    fn witnesses_serialize_by_sort() {
        let vs = SelectedSet::Vertices([NodeId(2), NodeId(5)].into_iter().collect());
        let w = WitnessReport::from_selected(&vs);
        assert_eq!(serde_json::to_string(&w).unwrap(), r#"{"vertices":[2,5]}"#);
        let es = SelectedSet::Edges([(NodeId(1), NodeId(2))].into_iter().collect());
        let w = WitnessReport::from_selected(&es);
        assert_eq!(serde_json::to_string(&w).unwrap(), r#"{"edges":[[1,2]]}"#);
    }

    #[test]
    fn the_seed_builder_sets_the_field() {
        let g = crate::generate::path(3);
        let rep = RunReport::base("check", &g, 2, 64).with_seed(7);
        assert_eq!(rep.seed, Some(7));
        assert!(rep.to_json().contains("\"seed\": 7"));
    }
}
