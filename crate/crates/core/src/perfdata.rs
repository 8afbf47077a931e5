//! Ingestion of component measurements and call traces, and the labeled
//! dependency graph built from them.
//!
//! Measurement files are CSV with the header
//! `subsystem,component,version,iteration,duration_ms`. Trace files carry one
//! call per line as
//! `trace_id,caller_subsystem,caller_component,callee_subsystem,callee_component,duration_ms`
//! where a caller subsystem of `ROOT` marks an entry-point call.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::Sample;

/// Caller marker for entry-point calls in trace files.
pub const ROOT_MARKER: &str = "ROOT";

const MEASUREMENT_HEADER: [&str; 5] = ["subsystem", "component", "version", "iteration", "duration_ms"];

/// A component (function) qualified by the subsystem that owns it.
/// Serialized as `subsystem::component`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ComponentId {
    pub subsystem: String,
    pub component: String,
}

impl ComponentId {
    pub fn new(subsystem: impl Into<String>, component: impl Into<String>) -> Result<Self> {
        let id = ComponentId {
            subsystem: subsystem.into(),
            component: component.into(),
        };
        if id.subsystem.trim().is_empty() || id.component.trim().is_empty() {
            return Err(Error::input("component ids need a subsystem and a component name"));
        }
        if id.subsystem.contains("::") {
            return Err(Error::input(format!("subsystem name `{}` must not contain `::`", id.subsystem)));
        }
        Ok(id)
    }
}

impl std::str::FromStr for ComponentId {
    type Err = Error;

    /// Parses `subsystem::component`.
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once("::") {
            Some((sub, comp)) => ComponentId::new(sub, comp),
            None => Err(Error::input(format!("expected `subsystem::component`, got `{s}`"))),
        }
    }
}

impl TryFrom<String> for ComponentId {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ComponentId> for String {
    fn from(id: ComponentId) -> String {
        id.to_string()
    }
}

impl fmt::Display for ComponentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}::{}", self.subsystem, self.component)
    }
}

/// Execution-time samples of every measured component for one version.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementCatalog {
    version: String,
    entries: BTreeMap<ComponentId, Sample>,
}

impl MeasurementCatalog {
    pub fn new(version: impl Into<String>) -> Self {
        MeasurementCatalog {
            version: version.into(),
            entries: BTreeMap::new(),
        }
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn insert(&mut self, id: ComponentId, sample: Sample) -> Result<()> {
        if self.entries.contains_key(&id) {
            return Err(Error::input(format!("duplicate catalog entry for {id}")));
        }
        self.entries.insert(id, sample);
        Ok(())
    }

    pub fn get(&self, id: &ComponentId) -> Option<&Sample> {
        self.entries.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ComponentId, &Sample)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Same entries under another version tag.
    pub fn relabel(mut self, version: impl Into<String>) -> Self {
        self.version = version.into();
        self
    }

    /// Writes the catalog in the measurement CSV format, iterations numbered from 1.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| Error::input(format!("cannot write measurements: {e}"));
        out.write_record(MEASUREMENT_HEADER).map_err(io)?;
        for (id, sample) in &self.entries {
            for (i, v) in sample.values().iter().enumerate() {
                out.write_record([
                    id.subsystem.as_str(),
                    id.component.as_str(),
                    self.version.as_str(),
                    &(i + 1).to_string(),
                    &v.to_string(),
                ])
                .map_err(io)?;
            }
        }
        out.flush().map_err(|e| Error::input(format!("cannot write measurements: {e}")))?;
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
struct MeasurementRow {
    subsystem: String,
    component: String,
    version: String,
    iteration: u64,
    duration_ms: f64,
}

/// Loads a single-version measurement file.
pub fn load_measurements(path: impl AsRef<Path>) -> Result<MeasurementCatalog> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_measurements(file, &path.display().to_string(), None)
}

/// Loads the rows tagged `version` from a measurement file that may hold several versions.
pub fn load_measurements_version(path: impl AsRef<Path>, version: &str) -> Result<MeasurementCatalog> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_measurements(file, &path.display().to_string(), Some(version))
}

/// Parses measurement CSV. Without a version filter the input must hold exactly one version.
pub fn read_measurements<R: Read>(
    reader: R,
    origin: &str,
    version: Option<&str>,
) -> Result<MeasurementCatalog> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let parse_err = |line: u64, message: String| Error::Parse {
        origin: origin.to_string(),
        line,
        message,
    };

    let headers = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if headers.is_empty() {
        return Err(parse_err(1, "no measurements".into()));
    }
    if headers.iter().collect::<Vec<_>>() != MEASUREMENT_HEADER {
        return Err(parse_err(
            1,
            format!("expected header `{}`", MEASUREMENT_HEADER.join(",")),
        ));
    }

    let mut seen_version: Option<String> = None;
    let mut rows: BTreeMap<ComponentId, BTreeMap<u64, f64>> = BTreeMap::new();
    for result in rdr.records() {
        let record = result.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, format!("malformed row: {e}"))
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row: MeasurementRow = record
            .deserialize(Some(&headers))
            .map_err(|e| parse_err(line, format!("malformed row: {e}")))?;
        if let Some(filter) = version {
            if row.version != filter {
                continue;
            }
        } else {
            match &seen_version {
                None => seen_version = Some(row.version.clone()),
                Some(v) if *v != row.version => {
                    return Err(parse_err(
                        line,
                        format!("file mixes versions `{v}` and `{}`", row.version),
                    ))
                }
                Some(_) => {}
            }
        }
        if !row.duration_ms.is_finite() || row.duration_ms < 0.0 {
            return Err(parse_err(line, format!("invalid duration {}", row.duration_ms)));
        }
        let id = ComponentId::new(row.subsystem, row.component).map_err(|e| parse_err(line, e.to_string()))?;
        let per_iteration = rows.entry(id.clone()).or_default();
        if per_iteration.insert(row.iteration, row.duration_ms).is_some() {
            return Err(parse_err(
                line,
                format!("duplicate iteration {} for {id}", row.iteration),
            ));
        }
    }

    if rows.is_empty() {
        return Err(parse_err(1, "no measurements".into()));
    }
    let tag = version.map(str::to_string).or(seen_version).unwrap_or_default();
    let mut catalog = MeasurementCatalog::new(tag);
    for (id, values) in rows {
        catalog.insert(id, Sample::new(values.into_values().collect())?)?;
    }
    Ok(catalog)
}

/// Origin of a call.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Caller {
    Root,
    Component(ComponentId),
}

/// One observed call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub trace_id: String,
    pub caller: Caller,
    pub callee: ComponentId,
    pub duration_ms: f64,
}

impl TraceEvent {
    pub fn new(trace_id: impl Into<String>, caller: Caller, callee: ComponentId, duration_ms: f64) -> Result<Self> {
        if !duration_ms.is_finite() || duration_ms < 0.0 {
            return Err(Error::input(format!("invalid call duration {duration_ms}")));
        }
        if caller == Caller::Component(callee.clone()) {
            return Err(Error::input(format!("{callee} calls itself")));
        }
        Ok(TraceEvent {
            trace_id: trace_id.into(),
            caller,
            callee,
            duration_ms,
        })
    }
}

/// All calls sharing one trace id.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub id: String,
    pub events: Vec<TraceEvent>,
}

impl Trace {
    /// Groups events by trace id, ordered by first appearance.
    pub fn group(events: Vec<TraceEvent>) -> Vec<Trace> {
        let mut order: Vec<String> = Vec::new();
        let mut grouped: BTreeMap<String, Vec<TraceEvent>> = BTreeMap::new();
        for e in events {
            if !grouped.contains_key(&e.trace_id) {
                order.push(e.trace_id.clone());
            }
            grouped.entry(e.trace_id.clone()).or_default().push(e);
        }
        order
            .into_iter()
            .map(|id| {
                let events = grouped.remove(&id).unwrap_or_default();
                Trace { id, events }
            })
            .collect()
    }
}

pub fn load_traces(path: impl AsRef<Path>) -> Result<Vec<Trace>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_traces(file, &path.display().to_string())
}

/// Parses trace records. A leading `trace_id,...` header line and `#` comments are skipped.
pub fn read_traces<R: Read>(reader: R, origin: &str) -> Result<Vec<Trace>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(reader);
    let mut events = Vec::new();
    for (n, result) in rdr.records().enumerate() {
        let record = result.map_err(|e| Error::Parse {
            origin: origin.to_string(),
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(n as u64 + 1);
        let err = |message: String| Error::Parse {
            origin: origin.to_string(),
            line,
            message,
        };
        if n == 0 && record.get(0) == Some("trace_id") {
            continue;
        }
        if record.len() != 6 {
            return Err(err(format!("expected 6 fields, found {}", record.len())));
        }
        let caller = if &record[1] == ROOT_MARKER {
            Caller::Root
        } else {
            Caller::Component(ComponentId::new(&record[1], &record[2]).map_err(|e| err(e.to_string()))?)
        };
        let callee = ComponentId::new(&record[3], &record[4]).map_err(|e| err(e.to_string()))?;
        let duration: f64 = record[5]
            .parse()
            .map_err(|_| err(format!("invalid duration `{}`", &record[5])))?;
        events.push(TraceEvent::new(&record[0], caller, callee, duration).map_err(|e| err(e.to_string()))?);
    }
    if events.is_empty() {
        return Err(Error::Parse {
            origin: origin.to_string(),
            line: 1,
            message: "no trace records".into(),
        });
    }
    Ok(Trace::group(events))
}

pub fn write_traces<W: Write>(traces: &[Trace], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::input(format!("cannot write traces: {e}"));
    out.write_record([
        "trace_id",
        "caller_subsystem",
        "caller_component",
        "callee_subsystem",
        "callee_component",
        "duration_ms",
    ])
    .map_err(io)?;
    for e in traces.iter().flat_map(|t| &t.events) {
        let (cs, cc) = match &e.caller {
            Caller::Root => (ROOT_MARKER, ROOT_MARKER),
            Caller::Component(c) => (c.subsystem.as_str(), c.component.as_str()),
        };
        out.write_record([
            e.trace_id.as_str(),
            cs,
            cc,
            e.callee.subsystem.as_str(),
            e.callee.component.as_str(),
            &e.duration_ms.to_string(),
        ])
        .map_err(io)?;
    }
    out.flush().map_err(|e| Error::input(format!("cannot write traces: {e}")))?;
    Ok(())
}

/// Node attributes of a [`DependencyGraph`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: ComponentId,
    pub mean_exec_ms: f64,
    /// No caller inside the same subsystem.
    pub is_top_level: bool,
    /// False when the catalog had no sample for this node; its mean is then 0.
    pub measured: bool,
    /// Set on nodes marked as deviated by subgraph extraction.
    #[serde(default)]
    pub deviated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub caller: ComponentId,
    pub callee: ComponentId,
    pub calls_per_invocation: f64,
}

/// Labeled call-dependency DAG. Nodes are kept sorted by id.
#[derive(Debug, Clone, PartialEq)]
pub struct DependencyGraph {
    nodes: Vec<GraphNode>,
    index: BTreeMap<ComponentId, usize>,
    edges: BTreeMap<(usize, usize), f64>,
    warnings: Vec<String>,
}

impl DependencyGraph {
    /// Builds and validates a graph; `is_top_level` is recomputed from the edges.
    pub fn new(mut nodes: Vec<GraphNode>, edges: Vec<GraphEdge>) -> Result<Self> {
        nodes.sort_by(|a, b| a.id.cmp(&b.id));
        let mut index = BTreeMap::new();
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.id.clone(), i).is_some() {
                return Err(Error::input(format!("duplicate node {}", n.id)));
            }
        }
        let mut edge_map = BTreeMap::new();
        for e in edges {
            let from = *index
                .get(&e.caller)
                .ok_or_else(|| Error::input(format!("edge endpoint {} is not a node", e.caller)))?;
            let to = *index
                .get(&e.callee)
                .ok_or_else(|| Error::input(format!("edge endpoint {} is not a node", e.callee)))?;
            if !e.calls_per_invocation.is_finite() || e.calls_per_invocation < 0.0 {
                return Err(Error::input(format!(
                    "edge {} -> {} has invalid multiplicity {}",
                    e.caller, e.callee, e.calls_per_invocation
                )));
            }
            edge_map.insert((from, to), e.calls_per_invocation);
        }
        let mut graph = DependencyGraph {
            nodes,
            index,
            edges: edge_map,
            warnings: Vec::new(),
        };
        if let Some(cycle) = graph.find_cycle() {
            return Err(Error::NotADag {
                cycle: cycle.iter().map(|&i| graph.nodes[i].id.to_string()).collect(),
            });
        }
        for i in 0..graph.nodes.len() {
            let sub = &graph.nodes[i].id.subsystem;
            let has_local_caller = graph
                .edges
                .keys()
                .any(|&(from, to)| to == i && graph.nodes[from].id.subsystem == *sub);
            graph.nodes[i].is_top_level = !has_local_caller;
        }
        Ok(graph)
    }

    pub fn empty() -> Self {
        DependencyGraph {
            nodes: Vec::new(),
            index: BTreeMap::new(),
            edges: BTreeMap::new(),
            warnings: Vec::new(),
        }
    }

    fn find_cycle(&self) -> Option<Vec<usize>> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            White,
            Grey,
            Black,
        }
        let n = self.nodes.len();
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in self.edges.keys() {
            adj[a].push(b);
        }
        let mut mark = vec![Mark::White; n];
        for start in 0..n {
            if mark[start] != Mark::White {
                continue;
            }
            // (node, next child index)
            let mut stack = vec![(start, 0usize)];
            mark[start] = Mark::Grey;
            while let Some(&mut (node, ref mut next)) = stack.last_mut() {
                if let Some(&child) = adj[node].get(*next) {
                    *next += 1;
                    match mark[child] {
                        Mark::Grey => {
                            let pos = stack.iter().position(|&(v, _)| v == child).unwrap_or(0);
                            let mut cycle: Vec<usize> = stack[pos..].iter().map(|&(v, _)| v).collect();
                            cycle.push(child);
                            return Some(cycle);
                        }
                        Mark::White => {
                            mark[child] = Mark::Grey;
                            stack.push((child, 0));
                        }
                        Mark::Black => {}
                    }
                } else {
                    mark[node] = Mark::Black;
                    stack.pop();
                }
            }
        }
        None
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    pub fn node(&self, id: &ComponentId) -> Option<&GraphNode> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn index_of(&self, id: &ComponentId) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn contains(&self, id: &ComponentId) -> bool {
        self.index.contains_key(id)
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = GraphEdge> + '_ {
        self.edges.iter().map(|(&(a, b), &w)| GraphEdge {
            caller: self.nodes[a].id.clone(),
            callee: self.nodes[b].id.clone(),
            calls_per_invocation: w,
        })
    }

    /// Expected calls from `caller` to `callee` per invocation of `caller`.
    pub fn calls(&self, caller: &ComponentId, callee: &ComponentId) -> Option<f64> {
        let a = self.index_of(caller)?;
        let b = self.index_of(callee)?;
        self.edges.get(&(a, b)).copied()
    }

    pub(crate) fn edge_weights(&self) -> &BTreeMap<(usize, usize), f64> {
        &self.edges
    }

    pub fn children(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.edges
            .range((i, 0)..=(i, usize::MAX))
            .map(|(&(_, b), &w)| (b, w))
    }

    pub fn parents(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.edges
            .iter()
            .filter(move |(&(_, b), _)| b == i)
            .map(|(&(a, _), &w)| (a, w))
    }

    pub fn top_level(&self) -> impl Iterator<Item = &GraphNode> {
        self.nodes.iter().filter(|n| n.is_top_level)
    }

    pub fn subsystems(&self) -> BTreeSet<&str> {
        self.nodes.iter().map(|n| n.id.subsystem.as_str()).collect()
    }

    /// Kahn order with ties broken by node index.
    pub fn topological_order(&self) -> Vec<usize> {
        let n = self.nodes.len();
        let mut indegree = vec![0usize; n];
        for &(_, b) in self.edges.keys() {
            indegree[b] += 1;
        }
        let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(i) = ready.pop_first() {
            order.push(i);
            for (c, _) in self.children(i) {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        order
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub(crate) fn with_warnings(mut self, warnings: Vec<String>) -> Self {
        self.warnings = warnings;
        self
    }

    #[cfg(test)]
    pub(crate) fn node_mut(&mut self, i: usize) -> &mut GraphNode {
        &mut self.nodes[i]
    }

    /// Serializable view with explicit node and edge lists.
    pub fn to_document(&self) -> GraphDocument {
        GraphDocument {
            nodes: self.nodes.clone(),
            edges: self.edges().collect(),
            warnings: self.warnings.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDocument {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl TryFrom<GraphDocument> for DependencyGraph {
    type Error = Error;

    fn try_from(doc: GraphDocument) -> Result<Self> {
        Ok(DependencyGraph::new(doc.nodes, doc.edges)?.with_warnings(doc.warnings))
    }
}

/// Builds the dependency graph of the traced calls, with node timings taken
/// from `catalog`.
///
/// Traces repeating an id already seen are ignored. An edge's multiplicity is
/// the number of caller-to-callee calls divided by the number of invocations
/// of the caller; a caller that is never itself called counts one invocation
/// per trace it appears in.
pub fn build_dependency_graph(traces: &[Trace], catalog: &MeasurementCatalog) -> Result<DependencyGraph> {
    if traces.iter().all(|t| t.events.is_empty()) {
        return Err(Error::input("no traces"));
    }
    let mut seen: BTreeMap<&str, &Trace> = BTreeMap::new();
    let mut invocations: BTreeMap<&ComponentId, u64> = BTreeMap::new();
    let mut caller_traces: BTreeMap<&ComponentId, u64> = BTreeMap::new();
    let mut calls: BTreeMap<(&ComponentId, &ComponentId), u64> = BTreeMap::new();
    let mut components: BTreeSet<&ComponentId> = BTreeSet::new();

    for trace in traces {
        if let Some(prev) = seen.get(trace.id.as_str()) {
            if prev.events != trace.events {
                return Err(Error::input(format!("conflicting records for trace `{}`", trace.id)));
            }
            continue;
        }
        seen.insert(&trace.id, trace);
        let mut callers_here: BTreeSet<&ComponentId> = BTreeSet::new();
        for e in &trace.events {
            if e.caller == Caller::Component(e.callee.clone()) {
                return Err(Error::input(format!("{} calls itself in trace `{}`", e.callee, trace.id)));
            }
            components.insert(&e.callee);
            *invocations.entry(&e.callee).or_default() += 1;
            if let Caller::Component(c) = &e.caller {
                components.insert(c);
                callers_here.insert(c);
                *calls.entry((c, &e.callee)).or_default() += 1;
            }
        }
        for c in callers_here {
            *caller_traces.entry(c).or_default() += 1;
        }
    }

    let mut warnings = Vec::new();
    let nodes: Vec<GraphNode> = components
        .iter()
        .map(|&id| {
            let sample = catalog.get(id);
            if sample.is_none() {
                warnings.push(format!("component {id} has no measurements; mean set to 0"));
            }
            GraphNode {
                id: id.clone(),
                mean_exec_ms: sample.map(Sample::mean).unwrap_or(0.0),
                is_top_level: false,
                measured: sample.is_some(),
                deviated: false,
            }
        })
        .collect();
    let edges = calls
        .iter()
        .map(|(&(a, b), &count)| {
            let inv = invocations
                .get(a)
                .copied()
                .filter(|&v| v > 0)
                .or_else(|| caller_traces.get(a).copied())
                .unwrap_or(1);
            GraphEdge {
                caller: a.clone(),
                callee: b.clone(),
                calls_per_invocation: count as f64 / inv as f64,
            }
        })
        .collect();
    Ok(DependencyGraph::new(nodes, edges)?.with_warnings(warnings))
}
