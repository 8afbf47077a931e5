//! Brute-force reference implementations and fixtures shared by the
//! integration tests. Every oracle here is deliberately naive.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use perf_bridge::graph::{DeviationMap, GraphMapping};
use perf_bridge::perfdata::{ComponentId, DependencyGraph, GraphEdge, GraphNode};
use perf_bridge::stats::{DeviationReport, Magnitude};

pub fn model_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("models").join(name)
}

/// Mid-rank of `v` within `pooled`: values below plus half the ties, 1-based.
fn mid_rank(pooled: &[f64], v: f64) -> f64 {
    let below = pooled.iter().filter(|&&p| p < v).count() as f64;
    let equal = pooled.iter().filter(|&&p| p == v).count() as f64;
    below + (equal + 1.0) / 2.0
}

/// Two-sided rank-sum p-value by visiting every way of choosing which
/// pooled positions belong to `x`.
pub fn permutation_p_value(x: &[f64], y: &[f64]) -> f64 {
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let ranks: Vec<f64> = pooled.iter().map(|&v| mid_rank(&pooled, v)).collect();
    let n = x.len();
    let total = pooled.len();
    let expected = n as f64 * (total as f64 + 1.0) / 2.0;
    let observed: f64 = ranks[..n].iter().sum();
    let observed_dev = (observed - expected).abs();
    if observed_dev == 0.0 {
        return 1.0;
    }
    let (mut extreme, mut count) = (0u64, 0u64);
    for mask in 0u32..(1u32 << total) {
        if mask.count_ones() as usize != n {
            continue;
        }
        count += 1;
        let sum: f64 = (0..total).filter(|i| mask & (1 << i) != 0).map(|i| ranks[i]).sum();
        // rank sums are multiples of 0.5, so the comparison is exact
        if (sum - expected).abs() >= observed_dev {
            extreme += 1;
        }
    }
    extreme as f64 / count as f64
}

/// Cliff's delta by comparing every cross pair.
pub fn pair_count_delta(x: &[f64], y: &[f64]) -> f64 {
    let mut score = 0i64;
    for &a in x {
        for &b in y {
            if a > b {
                score += 1;
            } else if a < b {
                score -= 1;
            }
        }
    }
    score as f64 / (x.len() * y.len()) as f64
}

pub fn cid(sub: &str, name: &str) -> ComponentId {
    ComponentId::new(sub, name).unwrap()
}

pub fn node(id: ComponentId, mean_ms: f64) -> GraphNode {
    GraphNode {
        id,
        mean_exec_ms: mean_ms,
        is_top_level: false,
        measured: true,
        deviated: false,
    }
}

pub fn edge(caller: &ComponentId, callee: &ComponentId, calls: f64) -> GraphEdge {
    GraphEdge {
        caller: caller.clone(),
        callee: callee.clone(),
        calls_per_invocation: calls,
    }
}

pub fn deviation(md_ms: f64) -> DeviationReport {
    DeviationReport {
        p_value: 1e-6,
        delta: -1.0,
        magnitude: Magnitude::Large,
        md_ms,
        significant: true,
    }
}

pub fn deviation_map(entries: &[(ComponentId, f64)]) -> DeviationMap {
    let mut map = DeviationMap::new();
    for (id, md) in entries {
        map.insert(id.clone(), deviation(*md)).unwrap();
    }
    map
}

/// Identity mapping over every deviated component present in `system`.
pub fn identity_mapping(system: &DependencyGraph, deviations: &DeviationMap) -> GraphMapping {
    GraphMapping {
        pairs: deviations
            .ids()
            .filter(|id| system.contains(id))
            .map(|id| (id.clone(), id.clone()))
            .collect(),
        dropped: Vec::new(),
    }
}

/// Random DAG description: node `i` is `subsystems[i]::n{labels[i]}`, edges
/// run from lower to higher position so the graph is acyclic whatever the
/// labels are.
#[derive(Debug, Clone)]
pub struct DagSpec {
    pub labels: Vec<usize>,
    pub subsystems: Vec<usize>,
    pub means: Vec<f64>,
    pub edges: Vec<(usize, usize, f64)>,
}

impl DagSpec {
    pub fn id(&self, i: usize) -> ComponentId {
        cid(["A", "B"][self.subsystems[i]], &format!("n{}", self.labels[i]))
    }

    pub fn build(&self) -> DependencyGraph {
        let nodes = (0..self.labels.len()).map(|i| node(self.id(i), self.means[i])).collect();
        let edges = self
            .edges
            .iter()
            .map(|&(a, b, w)| edge(&self.id(a), &self.id(b), w))
            .collect();
        DependencyGraph::new(nodes, edges).unwrap()
    }
}

pub mod strategies {
    use super::DagSpec;
    use proptest::prelude::*;

    /// DAGs with up to `max_nodes` nodes, distinct labels and integral call
    /// multiplicities so path sums stay exact.
    pub fn dag(max_nodes: usize, subsystems: usize) -> impl Strategy<Value = DagSpec> {
        (1..=max_nodes)
            .prop_flat_map(move |n| {
                let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
                let np = pairs.len();
                (
                    Just(n),
                    Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
                    proptest::collection::vec(0..subsystems, n),
                    proptest::collection::vec(1u32..20, n),
                    proptest::collection::vec(proptest::option::weighted(0.5, 1u32..4), np),
                    Just(pairs),
                )
            })
            .prop_map(|(_, labels, subsystems, means, picks, pairs)| DagSpec {
                labels,
                subsystems,
                means: means.into_iter().map(f64::from).collect(),
                edges: pairs
                    .into_iter()
                    .zip(picks)
                    .filter_map(|((a, b), w)| w.map(|w| (a, b, f64::from(w))))
                    .collect(),
            })
    }
}

/// Sum over every call path from `root` to `target`, staying inside the
/// root's subsystem, of the product of multiplicities along the path.
pub fn path_product_sum(graph: &DependencyGraph, root: &ComponentId, target: &ComponentId) -> f64 {
    fn walk(graph: &DependencyGraph, at: &ComponentId, target: &ComponentId, sub: &str, acc: f64) -> f64 {
        let mut total = if at == target { acc } else { 0.0 };
        for e in graph.edges().filter(|e| &e.caller == at && e.callee.subsystem == sub) {
            total += walk(graph, &e.callee, target, sub, acc * e.calls_per_invocation);
        }
        total
    }
    walk(graph, root, target, &root.subsystem, 1.0)
}

/// Top-level adjusted means computed by explicit path enumeration.
pub fn brute_force_propagation(graph: &DependencyGraph, deviations: &DeviationMap) -> BTreeMap<ComponentId, f64> {
    graph
        .nodes()
        .iter()
        .filter(|n| n.is_top_level)
        .map(|t| {
            let extra: f64 = deviations
                .iter()
                .filter(|(d, _)| graph.contains(d))
                .map(|(d, r)| r.md_ms * path_product_sum(graph, &t.id, d))
                .sum();
            (t.id.clone(), (t.mean_exec_ms + extra).max(0.0))
        })
        .collect()
}

/// Best label-anchored common subgraph by trying every subset of shared
/// nodes. Ranking: size, then deviated count, then smallest sorted id list.
pub fn brute_force_mcs(local: &DependencyGraph, system: &DependencyGraph) -> Option<BTreeSet<ComponentId>> {
    let shared: Vec<&GraphNode> = local.nodes().iter().filter(|n| system.contains(&n.id)).collect();
    if shared.is_empty() {
        return None;
    }
    let mut best: Option<(usize, usize, Vec<ComponentId>)> = None;
    for mask in 0u32..(1u32 << shared.len()) {
        let chosen: Vec<&GraphNode> = (0..shared.len())
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| shared[i])
            .collect();
        let ids: BTreeSet<&ComponentId> = chosen.iter().map(|n| &n.id).collect();
        let preserved = local
            .edges()
            .filter(|e| ids.contains(&e.caller) && ids.contains(&e.callee))
            .all(|e| system.calls(&e.caller, &e.callee).is_some());
        if !preserved {
            continue;
        }
        let mut sorted: Vec<ComponentId> = ids.into_iter().cloned().collect();
        sorted.sort();
        let size = sorted.len();
        let dev = chosen.iter().filter(|n| n.deviated).count();
        let better = match &best {
            None => true,
            Some((bs, bd, bids)) => (size, dev) > (*bs, *bd) || ((size, dev) == (*bs, *bd) && sorted < *bids),
        };
        if better {
            best = Some((size, dev, sorted));
        }
    }
    best.map(|(_, _, ids)| ids.into_iter().collect())
}

/// Runs the command-line binary and returns (exit code, stdout, stderr).
pub fn run_cli(args: &[&str], env: &[(&str, &str)]) -> (i32, String, String) {
    let mut cmd = std::process::Command::new(env!("CARGO_BIN_EXE_perf-bridge"));
    cmd.args(args).env_remove("PERF_BRIDGE_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    let out = cmd.output().expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}
