//! Moving component-level deviations up to subsystem level.
//!
//! The pipeline here is: keep the deviated components of the local dependency
//! graph together with their in-subsystem ancestors, align that subgraph with
//! the system graph, push each component's mean difference up to the top-level
//! components of its subsystem, and turn the top-level sums into a relative
//! change per subsystem.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perfdata::{ComponentId, DependencyGraph, GraphEdge, GraphNode, MeasurementCatalog};
use crate::stats::{self, DeviationReport, Magnitude};

/// Components whose performance changed significantly and non-negligibly.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DeviationMap {
    entries: BTreeMap<ComponentId, DeviationReport>,
}

impl DeviationMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Keeps only the significant reports.
    pub fn from_reports<I>(reports: I) -> Self
    where
        I: IntoIterator<Item = (ComponentId, DeviationReport)>,
    {
        DeviationMap {
            entries: reports.into_iter().filter(|(_, r)| r.significant).collect(),
        }
    }

    pub fn insert(&mut self, id: ComponentId, report: DeviationReport) -> Result<()> {
        if !report.significant || report.magnitude == Magnitude::Negligible {
            return Err(Error::input(format!("{id} is not a significant deviation")));
        }
        self.entries.insert(id, report);
        Ok(())
    }

    pub fn get(&self, id: &ComponentId) -> Option<&DeviationReport> {
        self.entries.get(id)
    }

    pub fn contains(&self, id: &ComponentId) -> bool {
        self.entries.contains_key(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ComponentId, &DeviationReport)> {
        self.entries.iter()
    }

    pub fn ids(&self) -> impl Iterator<Item = &ComponentId> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Result of comparing two catalogs component by component.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalAnalysis {
    pub reports: BTreeMap<ComponentId, DeviationReport>,
    pub deviations: DeviationMap,
    /// Components present in only one of the two catalogs.
    pub unmatched: Vec<ComponentId>,
}

/// Runs [`stats::compare`] on every component measured in both versions.
pub fn analyze_local(
    baseline: &MeasurementCatalog,
    updated: &MeasurementCatalog,
    alpha: f64,
) -> Result<LocalAnalysis> {
    stats::check_alpha(alpha)?;
    let mut reports = BTreeMap::new();
    let mut unmatched = Vec::new();
    for (id, base) in baseline.iter() {
        match updated.get(id) {
            Some(upd) => {
                reports.insert(id.clone(), stats::compare(base, upd, alpha)?);
            }
            None => unmatched.push(id.clone()),
        }
    }
    unmatched.extend(
        updated
            .iter()
            .map(|(id, _)| id)
            .filter(|id| baseline.get(id).is_none())
            .cloned(),
    );
    let deviations = DeviationMap::from_reports(reports.iter().map(|(k, v)| (k.clone(), *v)));
    Ok(LocalAnalysis {
        reports,
        deviations,
        unmatched,
    })
}

/// Induced subgraph of the deviated components and all of their ancestors
/// inside the same subsystem. Deviated nodes carry `deviated = true`.
pub fn extract_deviation_subgraph(local: &DependencyGraph, deviations: &DeviationMap) -> Result<DependencyGraph> {
    let missing: Vec<String> = deviations
        .ids()
        .filter(|id| !local.contains(id))
        .map(ToString::to_string)
        .collect();
    if !missing.is_empty() {
        return Err(Error::input(format!(
            "deviated components missing from the dependency graph: {}",
            missing.join(", ")
        )));
    }
    if deviations.is_empty() {
        return Ok(DependencyGraph::empty());
    }

    let mut keep: BTreeSet<usize> = BTreeSet::new();
    let mut queue: VecDeque<usize> = deviations.ids().filter_map(|id| local.index_of(id)).collect();
    while let Some(i) = queue.pop_front() {
        if !keep.insert(i) {
            continue;
        }
        let sub = &local.nodes()[i].id.subsystem;
        for (p, _) in local.parents(i) {
            if local.nodes()[p].id.subsystem == *sub && !keep.contains(&p) {
                queue.push_back(p);
            }
        }
    }

    let nodes: Vec<GraphNode> = keep
        .iter()
        .map(|&i| {
            let mut n = local.nodes()[i].clone();
            n.deviated = deviations.contains(&n.id);
            n
        })
        .collect();
    let edges: Vec<GraphEdge> = local
        .edge_weights()
        .iter()
        .filter(|((a, b), _)| keep.contains(a) && keep.contains(b))
        .map(|(&(a, b), &w)| GraphEdge {
            caller: local.nodes()[a].id.clone(),
            callee: local.nodes()[b].id.clone(),
            calls_per_invocation: w,
        })
        .collect();
    DependencyGraph::new(nodes, edges)
}

/// Injective, label-consistent, edge-preserving map from local nodes to system nodes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GraphMapping {
    pub pairs: BTreeMap<ComponentId, ComponentId>,
    /// Deviated local components with no counterpart in the mapping.
    #[serde(default)]
    pub dropped: Vec<ComponentId>,
}

impl GraphMapping {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn target(&self, local: &ComponentId) -> Option<&ComponentId> {
        self.pairs.get(local)
    }

    /// Checks injectivity, label agreement, and preservation of every local
    /// edge between mapped nodes.
    pub fn is_consistent(&self, local: &DependencyGraph, system: &DependencyGraph) -> bool {
        let images: BTreeSet<&ComponentId> = self.pairs.values().collect();
        if images.len() != self.pairs.len() {
            return false;
        }
        if self
            .pairs
            .iter()
            .any(|(l, s)| l != s || !local.contains(l) || !system.contains(s))
        {
            return false;
        }
        local.edges().all(|e| match (self.pairs.get(&e.caller), self.pairs.get(&e.callee)) {
            (Some(a), Some(b)) => system.calls(a, b).is_some(),
            _ => true,
        })
    }
}

/// Maximum common subgraph between a local subgraph and the system graph.
///
/// Nodes are anchored by `ComponentId`, so the only freedom is which shared
/// components to keep: two components joined by a local edge that the system
/// graph lacks cannot both be mapped. Components free of such conflicts are
/// always kept; the rest are settled by branch and bound. Ties prefer more
/// deviated nodes, then the lexicographically smallest id set.
pub fn map_to_system_graph(local_sub: &DependencyGraph, system: &DependencyGraph) -> Result<GraphMapping> {
    let shared: Vec<&GraphNode> = local_sub.nodes().iter().filter(|n| system.contains(&n.id)).collect();
    if shared.is_empty() {
        return Err(Error::input("no common components between local and system graphs"));
    }

    let position: BTreeMap<&ComponentId, usize> = shared.iter().enumerate().map(|(i, n)| (&n.id, i)).collect();
    let mut conflicts: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); shared.len()];
    for e in local_sub.edges() {
        if let (Some(&a), Some(&b)) = (position.get(&e.caller), position.get(&e.callee)) {
            if system.calls(&e.caller, &e.callee).is_none() {
                conflicts[a].insert(b);
                conflicts[b].insert(a);
            }
        }
    }

    let forced: Vec<usize> = (0..shared.len()).filter(|&i| conflicts[i].is_empty()).collect();
    let contested: Vec<usize> = (0..shared.len()).filter(|&i| !conflicts[i].is_empty()).collect();
    let deviated: Vec<bool> = shared.iter().map(|n| n.deviated).collect();

    let mut search = Search {
        order: &contested,
        conflicts: &conflicts,
        deviated: &deviated,
        chosen: Vec::new(),
        best: None,
    };
    search.run(0, &mut vec![false; shared.len()]);
    let mut selected = forced;
    selected.extend(search.best.map(|b| b.members).unwrap_or_default());
    selected.sort_unstable();

    let pairs = selected
        .iter()
        .map(|&i| (shared[i].id.clone(), shared[i].id.clone()))
        .collect::<BTreeMap<_, _>>();
    let dropped = local_sub
        .nodes()
        .iter()
        .filter(|n| n.deviated && !pairs.contains_key(&n.id))
        .map(|n| n.id.clone())
        .collect();
    Ok(GraphMapping { pairs, dropped })
}

struct Candidate {
    size: usize,
    deviated: usize,
    members: Vec<usize>,
}

impl Candidate {
    /// Larger set wins, then more deviated nodes, then the smaller index list
    /// (indices follow id order).
    fn beats(&self, other: &Candidate) -> bool {
        (self.size, self.deviated, std::cmp::Reverse(&self.members))
            > (other.size, other.deviated, std::cmp::Reverse(&other.members))
    }
}

struct Search<'a> {
    order: &'a [usize],
    conflicts: &'a [BTreeSet<usize>],
    deviated: &'a [bool],
    chosen: Vec<usize>,
    best: Option<Candidate>,
}

impl Search<'_> {
    fn run(&mut self, depth: usize, blocked: &mut Vec<bool>) {
        let remaining = self.order.len() - depth;
        if let Some(best) = &self.best {
            if self.chosen.len() + remaining < best.size {
                return;
            }
        }
        if depth == self.order.len() {
            let mut members = self.chosen.clone();
            members.sort_unstable();
            let cand = Candidate {
                size: members.len(),
                deviated: members.iter().filter(|&&i| self.deviated[i]).count(),
                members,
            };
            if self.best.as_ref().is_none_or(|b| cand.beats(b)) {
                self.best = Some(cand);
            }
            return;
        }
        let v = self.order[depth];
        if !blocked[v] {
            let newly: Vec<usize> = self.conflicts[v].iter().copied().filter(|&u| !blocked[u]).collect();
            for &u in &newly {
                blocked[u] = true;
            }
            self.chosen.push(v);
            self.run(depth + 1, blocked);
            self.chosen.pop();
            for &u in &newly {
                blocked[u] = false;
            }
        }
        self.run(depth + 1, blocked);
    }
}

/// Adjusted mean execution time of every top-level component of `system`.
///
/// A mapped deviated component `d` contributes `md(d)` times the expected
/// number of invocations of `d` per invocation of a top-level component `t`,
/// summed over all call paths from `t` to `d` inside their subsystem.
/// Results are floored at zero.
pub fn propagate_bottom_up(
    system: &DependencyGraph,
    mapping: &GraphMapping,
    deviations: &DeviationMap,
) -> Result<BTreeMap<ComponentId, f64>> {
    let mut md_at: BTreeMap<usize, f64> = BTreeMap::new();
    for (local, report) in deviations.iter() {
        let Some(target) = mapping.target(local) else {
            continue;
        };
        let idx = system
            .index_of(target)
            .ok_or_else(|| Error::input(format!("mapping target {target} is not in the system graph")))?;
        *md_at.entry(idx).or_default() += report.md_ms;
    }

    let order = system.topological_order();
    let mut adjusted = BTreeMap::new();
    for (t, node) in system.nodes().iter().enumerate() {
        if !node.is_top_level {
            continue;
        }
        let mut extra = 0.0;
        if !md_at.is_empty() {
            let reach = invocations_from(system, &order, t);
            for (&d, &md) in &md_at {
                if reach[d] != 0.0 {
                    extra += md * reach[d];
                }
            }
        }
        adjusted.insert(node.id.clone(), (node.mean_exec_ms + extra).max(0.0));
    }
    Ok(adjusted)
}

/// Expected invocations of every node per invocation of `root`, following
/// edges within the root's subsystem.
pub fn invocations_from(system: &DependencyGraph, topo: &[usize], root: usize) -> Vec<f64> {
    let sub = &system.nodes()[root].id.subsystem;
    let mut reach = vec![0.0; system.len()];
    reach[root] = 1.0;
    for &u in topo {
        if reach[u] == 0.0 {
            continue;
        }
        for (c, w) in system.children(u) {
            if system.nodes()[c].id.subsystem == *sub {
                reach[c] += reach[u] * w;
            }
        }
    }
    reach
}

/// Relative change of one subsystem's top-level timing sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsystemDeviation {
    pub subsystem: String,
    pub baseline_total_ms: f64,
    pub adjusted_total_ms: f64,
    pub relative_delta: f64,
}

impl SubsystemDeviation {
    pub fn new(subsystem: impl Into<String>, baseline_total_ms: f64, adjusted_total_ms: f64) -> Result<Self> {
        let subsystem = subsystem.into();
        if baseline_total_ms <= 0.0 || !baseline_total_ms.is_finite() {
            return Err(Error::input(format!("degenerate subsystem timing for `{subsystem}`")));
        }
        Ok(SubsystemDeviation {
            relative_delta: (adjusted_total_ms - baseline_total_ms) / baseline_total_ms,
            subsystem,
            baseline_total_ms,
            adjusted_total_ms,
        })
    }
}

/// Compares per-subsystem sums of top-level means before and after adjustment.
/// Top-level components absent from `adjusted` keep their baseline mean;
/// unchanged subsystems are omitted.
pub fn subsystem_deviation(
    system: &DependencyGraph,
    adjusted: &BTreeMap<ComponentId, f64>,
) -> Result<Vec<SubsystemDeviation>> {
    let mut totals: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    for node in system.top_level() {
        let entry = totals.entry(node.id.subsystem.as_str()).or_default();
        entry.0 += node.mean_exec_ms;
        entry.1 += adjusted.get(&node.id).copied().unwrap_or(node.mean_exec_ms);
    }
    let mut out = Vec::new();
    for (sub, (base, adj)) in totals {
        if base == adj {
            continue;
        }
        out.push(SubsystemDeviation::new(sub, base, adj)?);
    }
    Ok(out)
}
