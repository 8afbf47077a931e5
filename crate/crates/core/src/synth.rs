//! Synthetic systems with known ground truth.
//!
//! A scenario is a set of subsystems, each a small call DAG of components with
//! true self times. From it we derive everything the detector consumes (traces,
//! baseline measurements, a QPN model) and, separately, an end-to-end oracle
//! that simulates requests component by component without going through the
//! QPN at all.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, LogNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{
    self, classify_outcome, effect_label, format_table, DetectorConfig, OutcomeLabel, RegressionVerdict,
};
use crate::error::{Error, Result};
use crate::perfdata::{
    write_traces, Caller, ComponentId, DependencyGraph, GraphEdge, GraphNode, MeasurementCatalog, Trace, TraceEvent,
};
use crate::qpn::{
    ArcSpec, Discipline, FiringMode, OrdinaryPlace, Place, PlaceRole, PredictionResult, QpnModel, QueueingPlace,
    ServiceDistribution, SimConfig, Transition, WorkloadSpec,
};
use crate::stats::Sample;

pub const DEFAULT_NOISE_CV: f64 = 0.05;
pub const DEFAULT_SAMPLES: usize = 30;
pub const DEFAULT_RATE_FACTOR: f64 = 1.5;
pub const DEFAULT_INTENSITIES: [f64; 3] = [0.10, 0.50, 2.50];

const DEFAULT_SCENARIO: &str = include_str!("../scenarios/default.toml");

const SOURCE_PLACE: &str = "arrivals";
const SINK_PLACE: &str = "completed";

fn one() -> usize {
    1
}

fn one_u32() -> u32 {
    1
}

fn default_cv() -> f64 {
    DEFAULT_NOISE_CV
}

fn default_samples() -> usize {
    DEFAULT_SAMPLES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsystemSpec {
    pub name: String,
    /// Inclusive [min, max] component count.
    pub components: [usize; 2],
    /// Components with no caller inside the subsystem.
    #[serde(default = "one")]
    pub entry_points: usize,
    #[serde(default = "one_u32")]
    pub servers: u32,
}

/// Subsystems a request class passes through, in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRoute {
    pub class: String,
    pub subsystems: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub subsystems: Vec<SubsystemSpec>,
    /// Inclusive range for each component's own execution time.
    pub self_time_ms: [f64; 2],
    pub calls_per_invocation: [u32; 2],
    /// Chance that a component gets a second caller, turning the tree into a DAG.
    #[serde(default)]
    pub shared_callee_probability: f64,
    /// Coefficient of variation of measurement noise.
    #[serde(default = "default_cv")]
    pub noise_cv: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    pub workload: WorkloadSpec,
    pub routes: Vec<ClassRoute>,
}

impl ScenarioSpec {
    /// The shipped evaluation scenario.
    pub fn default_scenario() -> Self {
        Self::from_toml_str(DEFAULT_SCENARIO).expect("shipped scenario is valid")
    }

    /// Two subsystems with three and four components and one request class.
    pub fn two_subsystem_example() -> Self {
        ScenarioSpec {
            seed: 1,
            subsystems: vec![
                SubsystemSpec {
                    name: "Microservice_A".into(),
                    components: [3, 3],
                    entry_points: 1,
                    servers: 1,
                },
                SubsystemSpec {
                    name: "Microservice_B".into(),
                    components: [4, 4],
                    entry_points: 1,
                    servers: 1,
                },
            ],
            self_time_ms: [5.0, 20.0],
            calls_per_invocation: [1, 2],
            shared_callee_probability: 0.0,
            noise_cv: DEFAULT_NOISE_CV,
            samples: DEFAULT_SAMPLES,
            workload: WorkloadSpec {
                arrival_rate_per_s: 2.0,
                request_classes: vec![crate::qpn::RequestClass {
                    name: "browse".into(),
                    mix_probability: 1.0,
                }],
            },
            routes: vec![ClassRoute {
                class: "browse".into(),
                subsystems: vec!["Microservice_A".into(), "Microservice_B".into()],
            }],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.subsystems.is_empty() {
            return Err(Error::validation("scenario has no subsystems"));
        }
        let mut names = BTreeSet::new();
        for s in &self.subsystems {
            if s.name.is_empty() || s.name.contains("::") || !names.insert(s.name.as_str()) {
                return Err(Error::validation(format!(
                    "subsystem name `{}` is empty, repeated or contains `::`",
                    s.name
                )));
            }
            let [lo, hi] = s.components;
            if lo == 0 || lo > hi {
                return Err(Error::validation(format!("component range of `{}` is invalid", s.name)));
            }
            if s.entry_points == 0 || s.servers == 0 {
                return Err(Error::validation(format!(
                    "`{}` needs at least one entry point and one server",
                    s.name
                )));
            }
        }
        let [lo, hi] = self.self_time_ms;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::validation("self time range must be positive and ordered"));
        }
        let [lo, hi] = self.calls_per_invocation;
        if lo == 0 || lo > hi {
            return Err(Error::validation("call multiplicity range must be positive and ordered"));
        }
        if !(0.0..=1.0).contains(&self.shared_callee_probability) {
            return Err(Error::validation("shared callee probability must lie in [0, 1]"));
        }
        if !(self.noise_cv >= 0.0 && self.noise_cv.is_finite()) {
            return Err(Error::validation("noise cv must be non-negative"));
        }
        if self.samples < 2 {
            return Err(Error::validation("at least two samples per component are needed"));
        }
        self.workload.validate()?;
        for class in &self.workload.request_classes {
            let n = self.routes.iter().filter(|r| r.class == class.name).count();
            if n != 1 {
                return Err(Error::validation(format!(
                    "request class `{}` needs exactly one route, found {n}",
                    class.name
                )));
            }
        }
        for route in &self.routes {
            if !self.workload.request_classes.iter().any(|c| c.name == route.class) {
                return Err(Error::validation(format!("route for unknown class `{}`", route.class)));
            }
            if route.subsystems.is_empty() {
                return Err(Error::validation(format!("route of `{}` is empty", route.class)));
            }
            let mut seen = BTreeSet::new();
            for s in &route.subsystems {
                if !names.contains(s.as_str()) {
                    return Err(Error::validation(format!("route of `{}` visits unknown `{s}`", route.class)));
                }
                if !seen.insert(s) {
                    return Err(Error::validation(format!("route of `{}` visits `{s}` twice", route.class)));
                }
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: ScenarioSpec =
            toml::from_str(text).map_err(|e| Error::validation(format!("invalid scenario document: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::validation(format!("cannot encode scenario: {e}")))
    }
}

/// Ground truth of a generated system.
#[derive(Debug, Clone, PartialEq)]
struct Truth {
    ids: Vec<ComponentId>,
    self_ms: Vec<f64>,
    inclusive_ms: Vec<f64>,
    /// (callee, calls per invocation); callees always have larger indices.
    children: Vec<Vec<(usize, u32)>>,
    entries: BTreeMap<String, Vec<usize>>,
    servers: BTreeMap<String, u32>,
}

impl Truth {
    fn generate(spec: &ScenarioSpec) -> Truth {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut t = Truth {
            ids: Vec::new(),
            self_ms: Vec::new(),
            inclusive_ms: Vec::new(),
            children: Vec::new(),
            entries: BTreeMap::new(),
            servers: BTreeMap::new(),
        };
        let [lo_t, hi_t] = spec.self_time_ms;
        let [lo_c, hi_c] = spec.calls_per_invocation;
        for sub in &spec.subsystems {
            let n = rng.random_range(sub.components[0]..=sub.components[1]);
            let k = sub.entry_points.min(n);
            let base = t.ids.len();
            for i in 0..n {
                t.ids.push(ComponentId {
                    subsystem: sub.name.clone(),
                    component: format!("f{}", i + 1),
                });
                t.self_ms.push(round3(rng.random_range(lo_t..=hi_t)));
                t.children.push(Vec::new());
                if i < k {
                    continue;
                }
                let parent = rng.random_range(0..i);
                let calls = rng.random_range(lo_c..=hi_c);
                t.children[base + parent].push((base + i, calls));
                if i >= 2 && rng.random_bool(spec.shared_callee_probability) {
                    let other = rng.random_range(0..i - 1);
                    let other = if other >= parent { other + 1 } else { other };
                    let calls = rng.random_range(lo_c..=hi_c);
                    t.children[base + other].push((base + i, calls));
                }
            }
            t.entries.insert(sub.name.clone(), (base..base + k).collect());
            t.servers.insert(sub.name.clone(), sub.servers);
        }
        for c in &mut t.children {
            c.sort_unstable();
        }
        t.inclusive_ms = vec![0.0; t.ids.len()];
        for i in (0..t.ids.len()).rev() {
            t.inclusive_ms[i] = t.self_ms[i]
                + t.children[i]
                    .iter()
                    .map(|&(c, k)| f64::from(k) * t.inclusive_ms[c])
                    .sum::<f64>();
        }
        t
    }

    fn index(&self, id: &ComponentId) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    /// Inclusive time of one visit to `subsystem`, milliseconds.
    fn visit_ms(&self, subsystem: &str) -> f64 {
        self.entries[subsystem].iter().map(|&e| self.inclusive_ms[e]).sum()
    }

    /// Invocations of each component during one visit to its subsystem.
    fn invocations_per_visit(&self) -> Vec<f64> {
        let mut inv = vec![0.0; self.ids.len()];
        for entries in self.entries.values() {
            for &e in entries {
                inv[e] += 1.0;
            }
        }
        for i in 0..self.ids.len() {
            for &(c, k) in &self.children[i] {
                inv[c] += inv[i] * f64::from(k);
            }
        }
        inv
    }

    fn graph(&self) -> Result<DependencyGraph> {
        let nodes = self
            .ids
            .iter()
            .zip(&self.inclusive_ms)
            .map(|(id, &m)| GraphNode {
                id: id.clone(),
                mean_exec_ms: m,
                is_top_level: false,
                measured: true,
                deviated: false,
            })
            .collect();
        let edges = self
            .children
            .iter()
            .enumerate()
            .flat_map(|(p, cs)| {
                cs.iter().map(move |&(c, k)| GraphEdge {
                    caller: self.ids[p].clone(),
                    callee: self.ids[c].clone(),
                    calls_per_invocation: f64::from(k),
                })
            })
            .collect();
        DependencyGraph::new(nodes, edges)
    }
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

/// Lognormal draws with the given mean and coefficient of variation.
fn noisy(mean: f64, cv: f64, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if cv == 0.0 || mean == 0.0 {
        return vec![mean; n];
    }
    let sigma2 = (1.0 + cv * cv).ln();
    let dist = LogNormal::new(mean.ln() - sigma2 / 2.0, sigma2.sqrt()).expect("finite lognormal parameters");
    (0..n).map(|_| dist.sample(rng)).collect()
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Everything generated for one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    /// Call graph with true inclusive means.
    pub system_graph: DependencyGraph,
    /// One unit-test style trace per component, covering its own subtree.
    pub local_traces: Vec<Trace>,
    /// One trace per request class.
    pub system_traces: Vec<Trace>,
    pub baseline: MeasurementCatalog,
    pub model: QpnModel,
    truth: Truth,
}

/// Builds a scenario. Fails with [`Error::Unstable`] if the workload
/// saturates any subsystem.
pub fn generate_scenario(spec: &ScenarioSpec) -> Result<Scenario> {
    spec.validate()?;
    let truth = Truth::generate(spec);
    let system_graph = truth.graph()?;

    let mut trace_rng = stream(spec.seed, 1);
    let mut expand = |root: usize, trace_id: &str, events: &mut Vec<TraceEvent>| -> Result<()> {
        let mut stack = vec![(Caller::Root, root)];
        while let Some((caller, c)) = stack.pop() {
            let d = noisy(truth.inclusive_ms[c], spec.noise_cv, 1, &mut trace_rng)[0];
            events.push(TraceEvent::new(trace_id, caller, truth.ids[c].clone(), d)?);
            for &(child, k) in truth.children[c].iter().rev() {
                for _ in 0..k {
                    stack.push((Caller::Component(truth.ids[c].clone()), child));
                }
            }
        }
        Ok(())
    };

    let mut local_traces = Vec::new();
    for (i, id) in truth.ids.iter().enumerate() {
        let trace_id = format!("unit:{id}");
        let mut events = Vec::new();
        expand(i, &trace_id, &mut events)?;
        local_traces.push(Trace { id: trace_id, events });
    }
    let mut system_traces = Vec::new();
    for route in &spec.routes {
        let trace_id = format!("request:{}", route.class);
        let mut events = Vec::new();
        for sub in &route.subsystems {
            for &e in &truth.entries[sub] {
                expand(e, &trace_id, &mut events)?;
            }
        }
        system_traces.push(Trace { id: trace_id, events });
    }

    let mut baseline = MeasurementCatalog::new("baseline");
    let mut sample_rng = stream(spec.seed, 2);
    for (i, id) in truth.ids.iter().enumerate() {
        let values = noisy(truth.inclusive_ms[i], spec.noise_cv, spec.samples, &mut sample_rng);
        baseline.insert(id.clone(), Sample::new(values)?)?;
    }

    let model = build_model(spec, &truth)?;
    let scenario = Scenario {
        spec: spec.clone(),
        system_graph,
        local_traces,
        system_traces,
        baseline,
        model,
        truth,
    };
    scenario.check_workload(&spec.workload)?;
    Ok(scenario)
}

fn build_model(spec: &ScenarioSpec, truth: &Truth) -> Result<QpnModel> {
    let colors: Vec<String> = spec.workload.request_classes.iter().map(|c| c.name.clone()).collect();
    let mut places = vec![Place::Ordinary(OrdinaryPlace {
        name: SOURCE_PLACE.into(),
        role: PlaceRole::Source,
    })];
    for sub in &spec.subsystems {
        let demand = truth.visit_ms(&sub.name) / 1000.0;
        let service_demand_s = spec
            .routes
            .iter()
            .filter(|r| r.subsystems.contains(&sub.name))
            .map(|r| (r.class.clone(), demand))
            .collect();
        places.push(Place::Queueing(QueueingPlace {
            name: sub.name.clone(),
            resource: None,
            subsystem: sub.name.clone(),
            servers: sub.servers,
            discipline: Discipline::Fcfs,
            distribution: ServiceDistribution::Exponential,
            service_demand_s,
        }));
    }
    places.push(Place::Ordinary(OrdinaryPlace {
        name: SINK_PLACE.into(),
        role: PlaceRole::Sink,
    }));

    let hop = |name: String, from: &str, to: &str, color: &str| Transition {
        name,
        inputs: vec![ArcSpec {
            place: from.into(),
            color: color.into(),
            weight: 1,
        }],
        modes: vec![FiringMode {
            name: None,
            probability: 1.0,
            outputs: vec![ArcSpec {
                place: to.into(),
                color: color.into(),
                weight: 1,
            }],
        }],
    };
    let mut transitions = Vec::new();
    for route in &spec.routes {
        let c = route.class.as_str();
        let mut stops: Vec<&str> = vec![SOURCE_PLACE];
        stops.extend(route.subsystems.iter().map(String::as_str));
        stops.push(SINK_PLACE);
        for w in stops.windows(2) {
            transitions.push(hop(format!("{c}:{}->{}", w[0], w[1]), w[0], w[1], c));
        }
    }
    let model = QpnModel {
        colors,
        places,
        transitions,
        workload: Some(spec.workload.clone()),
        initial_marking: Vec::new(),
    };
    model.validate()?;
    Ok(model)
}

impl Scenario {
    pub fn components(&self) -> &[ComponentId] {
        &self.truth.ids
    }

    /// True mean execution time of a component including its callees.
    pub fn inclusive_ms(&self, id: &ComponentId) -> Option<f64> {
        self.truth.index(id).map(|i| self.truth.inclusive_ms[i])
    }

    /// True own execution time of a component.
    pub fn self_ms(&self, id: &ComponentId) -> Option<f64> {
        self.truth.index(id).map(|i| self.truth.self_ms[i])
    }

    /// Arrivals per second at each subsystem.
    fn visit_rates(&self, workload: &WorkloadSpec) -> BTreeMap<&str, f64> {
        let mut rates: BTreeMap<&str, f64> = self.truth.entries.keys().map(|s| (s.as_str(), 0.0)).collect();
        for route in &self.spec.routes {
            for s in &route.subsystems {
                *rates.entry(s.as_str()).or_default() += workload.class_rate(&route.class);
            }
        }
        rates
    }

    /// True utilization per subsystem under `workload`.
    pub fn utilization(&self, workload: &WorkloadSpec) -> BTreeMap<String, f64> {
        self.visit_rates(workload)
            .into_iter()
            .map(|(s, rate)| {
                let servers = f64::from(self.truth.servers[s]);
                (s.to_string(), rate * self.truth.visit_ms(s) / 1000.0 / servers)
            })
            .collect()
    }

    /// Fails with [`Error::Unstable`] naming the busiest saturated subsystem.
    pub fn check_workload(&self, workload: &WorkloadSpec) -> Result<()> {
        workload.validate()?;
        for class in &workload.request_classes {
            if !self.spec.routes.iter().any(|r| r.class == class.name) {
                return Err(Error::validation(format!("request class `{}` has no route", class.name)));
            }
        }
        let worst = self
            .utilization(workload)
            .into_iter()
            .max_by(|a, b| a.1.total_cmp(&b.1));
        match worst {
            Some((place, rho)) if rho >= 1.0 => Err(Error::Unstable { place, rho }),
            _ => Ok(()),
        }
    }

    /// Utilization added per unit of injection intensity at `id`.
    pub fn impact(&self, id: &ComponentId, workload: &WorkloadSpec) -> Option<f64> {
        let i = self.truth.index(id)?;
        let inv = self.truth.invocations_per_visit();
        let rate = self.visit_rates(workload)[id.subsystem.as_str()];
        let servers = f64::from(self.truth.servers[&id.subsystem]);
        Some(self.truth.inclusive_ms[i] * inv[i] * rate / 1000.0 / servers)
    }

    /// Three injection sites of decreasing impact under the scenario workload:
    /// the highest-impact component overall, a median-impact component, and
    /// the lowest-impact component outside the first one's subsystem. The
    /// median and the lowest are drawn from different subsystems when
    /// possible. Entry points are skipped unless fewer than three other
    /// components exist.
    pub fn select_locations(&self) -> Result<[ComponentId; 3]> {
        let entries: BTreeSet<usize> = self.truth.entries.values().flatten().copied().collect();
        let mut pool: Vec<usize> = (0..self.truth.ids.len()).filter(|i| !entries.contains(i)).collect();
        if pool.len() < 3 {
            pool = (0..self.truth.ids.len()).collect();
        }
        if pool.len() < 3 {
            return Err(Error::validation("need at least three components to pick injection sites"));
        }
        let w = &self.spec.workload;
        let mut ranked: Vec<(f64, &ComponentId)> = pool
            .iter()
            .map(|&i| (self.impact(&self.truth.ids[i], w).unwrap_or(0.0), &self.truth.ids[i]))
            .collect();
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));

        let l1 = ranked[0].1;
        let outside: Vec<&(f64, &ComponentId)> =
            ranked.iter().filter(|(_, id)| id.subsystem != l1.subsystem).collect();
        let l3 = match outside.last() {
            Some((_, id)) => *id,
            None => ranked[ranked.len() - 1].1,
        };
        let mut middle: Vec<&ComponentId> = ranked
            .iter()
            .map(|(_, id)| *id)
            .filter(|id| id.subsystem != l1.subsystem && id.subsystem != l3.subsystem)
            .collect();
        if middle.is_empty() {
            middle = ranked.iter().map(|(_, id)| *id).filter(|id| *id != l1 && *id != l3).collect();
        }
        let l2 = middle[middle.len() / 2];
        Ok([l1.clone(), l2.clone(), l3.clone()])
    }

    /// The three standard workload variants, checked for stability.
    pub fn workload_variants(&self, rate_factor: f64) -> Result<Vec<(String, WorkloadSpec)>> {
        let variants = workload_variants_with(&self.spec.workload, rate_factor)?;
        let labels = [
            format!("intensity x{rate_factor}"),
            "mix swapped".to_string(),
            format!("intensity x{rate_factor} + mix swapped"),
        ];
        let mut out = Vec::new();
        for (label, w) in labels.into_iter().zip(variants) {
            self.check_workload(&w).map_err(|e| match e {
                Error::Unstable { place, rho } => Error::validation(format!(
                    "workload variant `{label}` saturates `{place}` (utilization {rho:.3}); try a smaller rate factor"
                )),
                other => other,
            })?;
            out.push((label, w));
        }
        Ok(out)
    }

    /// Writes the scenario's artifacts in the formats the loaders read:
    /// `scenario.toml`, `model.toml`, `workload.toml`, `baseline.csv`,
    /// `local_traces.csv` and `system_traces.csv`.
    pub fn write_to_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, text: String| {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(path, e))
        };
        write("scenario.toml", self.spec.to_toml_string()?)?;
        write("model.toml", self.model.to_toml_string()?)?;
        write("workload.toml", self.spec.workload.to_toml_string()?)?;
        write_catalog(&self.baseline, dir.join("baseline.csv"))?;
        let mut buf = Vec::new();
        write_traces(&self.local_traces, &mut buf)?;
        write("local_traces.csv", String::from_utf8_lossy(&buf).into_owned())?;
        let mut buf = Vec::new();
        write_traces(&self.system_traces, &mut buf)?;
        write("system_traces.csv", String::from_utf8_lossy(&buf).into_owned())?;
        Ok(())
    }
}

pub fn write_catalog(catalog: &MeasurementCatalog, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    catalog.write_csv(file)
}

/// Scales every class rate by `rate_factor`, reverses the class mix, and both.
pub fn workload_variants(base: &WorkloadSpec) -> Result<Vec<WorkloadSpec>> {
    workload_variants_with(base, DEFAULT_RATE_FACTOR)
}

pub fn workload_variants_with(base: &WorkloadSpec, rate_factor: f64) -> Result<Vec<WorkloadSpec>> {
    base.validate()?;
    if !(rate_factor > 0.0 && rate_factor.is_finite()) {
        return Err(Error::input(format!("rate factor must be positive, got {rate_factor}")));
    }
    let scaled = |w: &WorkloadSpec| WorkloadSpec {
        arrival_rate_per_s: w.arrival_rate_per_s * rate_factor,
        request_classes: w.request_classes.clone(),
    };
    let swapped = |w: &WorkloadSpec| {
        let mixes: Vec<f64> = w.request_classes.iter().rev().map(|c| c.mix_probability).collect();
        let mut out = w.clone();
        for (c, m) in out.request_classes.iter_mut().zip(mixes) {
            c.mix_probability = m;
        }
        out
    };
    Ok(vec![scaled(base), swapped(base), scaled(&swapped(base))])
}

/// Busy-wait slowdown of one component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub location: ComponentId,
    /// Added time as a fraction of the component's original execution time.
    pub intensity: f64,
}

impl Injection {
    pub fn new(location: ComponentId, intensity: f64) -> Result<Self> {
        if !(intensity >= 0.0 && intensity.is_finite()) {
            return Err(Error::input(format!("intensity must be non-negative, got {intensity}")));
        }
        Ok(Injection { location, intensity })
    }
}

fn sample_cv(s: &Sample) -> f64 {
    let m = s.mean();
    if s.len() < 2 || m == 0.0 {
        return 0.0;
    }
    let var = s.values().iter().map(|v| (v - m).powi(2)).sum::<f64>() / (s.len() - 1) as f64;
    var.sqrt() / m
}

/// Re-measures every component of `baseline`: the injected one with its mean
/// scaled by `1 + intensity`, the others at their old mean. Each component
/// keeps its sample size and its observed coefficient of variation.
pub fn inject_slowdown(baseline: &MeasurementCatalog, injection: &Injection, seed: u64) -> Result<MeasurementCatalog> {
    if baseline.get(&injection.location).is_none() {
        return Err(Error::input(format!(
            "injection location {} is not in the catalog",
            injection.location
        )));
    }
    Injection::new(injection.location.clone(), injection.intensity)?;
    let mut updated = MeasurementCatalog::new("updated");
    for (k, (id, sample)) in baseline.iter().enumerate() {
        let mut rng = stream(seed, k as u64);
        let mut mean = sample.mean();
        if *id == injection.location {
            mean *= 1.0 + injection.intensity;
        }
        updated.insert(id.clone(), Sample::new(noisy(mean, sample_cv(sample), sample.len(), &mut rng))?)?;
    }
    Ok(updated)
}

/// Simulates `workload` on the scenario at component granularity: every
/// visit to a subsystem runs the call tree of its entry points, drawing an
/// exponential own time for each component invocation. An injection adds a
/// fixed busy wait of `intensity x` the component's inclusive mean to every
/// invocation of its location. Each subsystem is a FCFS station.
pub fn simulate_system(
    scenario: &Scenario,
    workload: &WorkloadSpec,
    injection: Option<&Injection>,
    config: &SimConfig,
) -> Result<PredictionResult> {
    config.validate()?;
    scenario.check_workload(workload).or_else(|e| match e {
        Error::Unstable { .. } => Ok(()),
        other => Err(other),
    })?;
    let extra = match injection {
        Some(inj) => {
            let i = scenario
                .truth
                .index(&inj.location)
                .ok_or_else(|| Error::input(format!("injection location {} is not in the scenario", inj.location)))?;
            Injection::new(inj.location.clone(), inj.intensity)?;
            Some((i, inj.intensity * scenario.truth.inclusive_ms[i]))
        }
        None => None,
    };

    let mut warnings = Vec::new();
    for (s, rho) in scenario.utilization(workload) {
        if rho >= 1.0 {
            warnings.push(format!("subsystem `{s}` is offered utilization {rho:.3} >= 1"));
        }
    }

    let plan = OraclePlan::new(scenario, workload, extra);
    let runs: Vec<OracleRun> = (0..config.replications)
        .into_par_iter()
        .map(|r| plan.run(config, config.seed.wrapping_add(u64::from(r))))
        .collect();

    let reps = f64::from(config.replications);
    let window = config.measured_s();
    let mut out = PredictionResult {
        response_times_ms: plan.classes.iter().map(|c| (c.name.clone(), Vec::new())).collect(),
        utilization: BTreeMap::new(),
        arrived: 0,
        completed: 0,
        in_system_at_end: 0,
        mean_in_system: 0.0,
        observed_arrival_rate_per_s: 0.0,
        warnings,
    };
    let mut busy = vec![0.0; plan.stations.len()];
    for run in runs {
        for (c, times) in run.response_ms.into_iter().enumerate() {
            if let Some(v) = out.response_times_ms.get_mut(&plan.classes[c].name) {
                v.extend(times);
            }
        }
        for (b, a) in busy.iter_mut().zip(&run.busy_area) {
            *b += a;
        }
        out.arrived += run.arrived;
        out.completed += run.completed;
        out.in_system_at_end += run.in_system;
        out.mean_in_system += run.population_area / window / reps;
        out.observed_arrival_rate_per_s += run.window_arrivals as f64 / window / reps;
    }
    for (s, area) in plan.stations.iter().zip(busy) {
        let u = area / (f64::from(s.servers) * window * reps);
        out.utilization.insert(s.name.clone(), u.clamp(0.0, 1.0));
    }
    Ok(out)
}

struct OracleClass {
    name: String,
    rate: f64,
    route: Vec<usize>,
}

struct OracleStation {
    name: String,
    servers: u32,
    entries: Vec<usize>,
}

struct OraclePlan<'a> {
    truth: &'a Truth,
    classes: Vec<OracleClass>,
    stations: Vec<OracleStation>,
    extra: Option<(usize, f64)>,
}

struct OracleRun {
    response_ms: Vec<Vec<f64>>,
    busy_area: Vec<f64>,
    arrived: u64,
    window_arrivals: u64,
    completed: u64,
    in_system: u64,
    population_area: f64,
}

#[derive(Clone, Copy)]
enum Happening {
    Done { station: usize, request: usize },
    Arrive { class: usize },
}

struct Timed {
    at: f64,
    order: u8,
    seq: u64,
    what: Happening,
}

impl PartialEq for Timed {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Timed {}
impl PartialOrd for Timed {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Timed {
    fn cmp(&self, other: &Self) -> Ordering {
        self.at
            .total_cmp(&other.at)
            .then(self.order.cmp(&other.order))
            .then(self.seq.cmp(&other.seq))
    }
}

const ORACLE_SALT: u64 = 0x6f72_6163_6c65;

impl<'a> OraclePlan<'a> {
    fn new(scenario: &'a Scenario, workload: &WorkloadSpec, extra: Option<(usize, f64)>) -> Self {
        let stations: Vec<OracleStation> = scenario
            .spec
            .subsystems
            .iter()
            .map(|s| OracleStation {
                name: s.name.clone(),
                servers: s.servers,
                entries: scenario.truth.entries[&s.name].clone(),
            })
            .collect();
        let classes = workload
            .request_classes
            .iter()
            .map(|c| {
                let route = scenario
                    .spec
                    .routes
                    .iter()
                    .find(|r| r.class == c.name)
                    .map(|r| {
                        r.subsystems
                            .iter()
                            .filter_map(|s| stations.iter().position(|st| st.name == *s))
                            .collect()
                    })
                    .unwrap_or_default();
                OracleClass {
                    name: c.name.clone(),
                    rate: workload.class_rate(&c.name),
                    route,
                }
            })
            .collect();
        OraclePlan {
            truth: &scenario.truth,
            classes,
            stations,
            extra,
        }
    }

    fn component_ms(&self, c: usize, work: f64) -> f64 {
        let mut t = self.truth.self_ms[c] * work;
        if let Some((loc, add)) = self.extra {
            if loc == c {
                t += add;
            }
        }
        for &(child, k) in &self.truth.children[c] {
            for _ in 0..k {
                t += self.component_ms(child, work);
            }
        }
        t
    }

    fn run(&self, config: &SimConfig, seed: u64) -> OracleRun {
        let seed = seed ^ ORACLE_SALT;
        let (warmup, end) = (config.warmup_s, config.duration_s);
        let overlap = |a: f64, b: f64| (b.min(end) - a.max(warmup)).max(0.0);
        let mut arrival_rng: Vec<ChaCha8Rng> = (0..self.classes.len()).map(|c| stream(seed, 10 + c as u64)).collect();
        let mut service_rng: Vec<ChaCha8Rng> =
            (0..self.stations.len()).map(|s| stream(seed, 100 + s as u64)).collect();

        let mut heap: BinaryHeap<Reverse<Timed>> = BinaryHeap::new();
        let mut seq = 0u64;
        let mut push = |heap: &mut BinaryHeap<Reverse<Timed>>, at: f64, what: Happening| {
            seq += 1;
            let order = match what {
                Happening::Done { .. } => 0,
                Happening::Arrive { .. } => 1,
            };
            heap.push(Reverse(Timed { at, order, seq, what }));
        };
        for (c, class) in self.classes.iter().enumerate() {
            if class.rate > 0.0 && !class.route.is_empty() {
                let gap: f64 = Exp1.sample(&mut arrival_rng[c]);
                push(&mut heap, gap / class.rate, Happening::Arrive { class: c });
            }
        }

        // request slot -> (class, arrival time, hop)
        let mut requests: Vec<Option<(usize, f64, usize)>> = Vec::new();
        let mut free: Vec<usize> = Vec::new();
        let mut live = 0usize;
        let mut queues: Vec<VecDeque<usize>> = vec![VecDeque::new(); self.stations.len()];
        let mut busy = vec![0u32; self.stations.len()];
        let mut last_busy = vec![0.0; self.stations.len()];
        let mut out = OracleRun {
            response_ms: vec![Vec::new(); self.classes.len()],
            busy_area: vec![0.0; self.stations.len()],
            arrived: 0,
            window_arrivals: 0,
            completed: 0,
            in_system: 0,
            population_area: 0.0,
        };
        let mut last_pop = 0.0;

        while let Some(Reverse(ev)) = heap.pop() {
            if ev.at > end {
                break;
            }
            let now = ev.at;
            let station_for = match ev.what {
                Happening::Arrive { class } => {
                    out.arrived += 1;
                    if now >= warmup {
                        out.window_arrivals += 1;
                    }
                    out.population_area += overlap(last_pop, now) * live as f64;
                    last_pop = now;
                    live += 1;
                    let slot = free.pop().unwrap_or_else(|| {
                        requests.push(None);
                        requests.len() - 1
                    });
                    requests[slot] = Some((class, now, 0));
                    let gap: f64 = Exp1.sample(&mut arrival_rng[class]);
                    let at = now + gap / self.classes[class].rate;
                    if at <= end {
                        push(&mut heap, at, Happening::Arrive { class });
                    }
                    Some((self.classes[class].route[0], slot))
                }
                Happening::Done { station, request } => {
                    out.busy_area[station] += overlap(last_busy[station], now) * f64::from(busy[station]);
                    last_busy[station] = now;
                    busy[station] -= 1;
                    if let Some(next) = queues[station].pop_front() {
                        busy[station] += 1;
                        let t = self.visit_ms(station, &mut service_rng[station]);
                        push(&mut heap, now + t / 1000.0, Happening::Done { station, request: next });
                    }
                    let (class, arrived_at, hop) = requests[request].expect("request in service");
                    let route = &self.classes[class].route;
                    if hop + 1 < route.len() {
                        requests[request] = Some((class, arrived_at, hop + 1));
                        Some((route[hop + 1], request))
                    } else {
                        out.population_area += overlap(last_pop, now) * live as f64;
                        last_pop = now;
                        live -= 1;
                        requests[request] = None;
                        free.push(request);
                        out.completed += 1;
                        if now >= warmup {
                            out.response_ms[class].push((now - arrived_at) * 1000.0);
                        }
                        None
                    }
                }
            };
            if let Some((station, request)) = station_for {
                if busy[station] < self.stations[station].servers {
                    out.busy_area[station] += overlap(last_busy[station], now) * f64::from(busy[station]);
                    last_busy[station] = now;
                    busy[station] += 1;
                    let t = self.visit_ms(station, &mut service_rng[station]);
                    push(&mut heap, now + t / 1000.0, Happening::Done { station, request });
                } else {
                    queues[station].push_back(request);
                }
            }
        }
        out.population_area += overlap(last_pop, end) * live as f64;
        for s in 0..self.stations.len() {
            out.busy_area[s] += overlap(last_busy[s], end) * f64::from(busy[s]);
        }
        out.in_system = live as u64;
        out
    }

    fn visit_ms(&self, station: usize, rng: &mut ChaCha8Rng) -> f64 {
        let work: f64 = Exp1.sample(rng);
        self.stations[station]
            .entries
            .iter()
            .map(|&e| self.component_ms(e, work))
            .sum()
    }
}

/// Ground-truth verdict for one injection: the component-level simulation
/// with and without the slowdown, compared on end-to-end response times.
pub fn oracle_end_to_end(
    scenario: &Scenario,
    injection: &Injection,
    workload: &WorkloadSpec,
    config: &DetectorConfig,
) -> Result<RegressionVerdict> {
    let (base, slowed) = rayon::join(
        || simulate_system(scenario, workload, None, &config.sim),
        || simulate_system(scenario, workload, Some(injection), &config.sim),
    );
    detector::compare_predictions(&base?, &slowed?, config.alpha)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationConfig {
    pub detector: DetectorConfig,
    pub intensities: Vec<f64>,
    pub rate_factor: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            detector: DetectorConfig {
                alpha: crate::stats::DEFAULT_ALPHA,
                sim: SimConfig {
                    duration_s: 1_500.0,
                    warmup_s: 100.0,
                    replications: 2,
                    seed: 2024,
                },
            },
            intensities: DEFAULT_INTENSITIES.to_vec(),
            rate_factor: DEFAULT_RATE_FACTOR,
        }
    }
}

/// Detector and oracle verdicts for one injection under one workload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    /// `L1`, `L2`, ...
    pub site: String,
    pub location: ComponentId,
    pub intensity: f64,
    pub workload: String,
    pub predicted: RegressionVerdict,
    pub oracle: RegressionVerdict,
    pub outcome: OutcomeLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub alpha: f64,
    pub fixed_workload: Vec<GridCell>,
    pub various_workloads: Vec<GridCell>,
}

/// Number of TP/TN cells and total cells.
pub fn agreement(cells: &[GridCell]) -> (usize, usize) {
    (cells.iter().filter(|c| c.outcome.label.is_agreement()).count(), cells.len())
}

fn cell_seed(base: u64, site: usize, intensity: usize) -> u64 {
    base.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add((site as u64) << 16 | intensity as u64)
}

/// Runs detector and oracle for one injection. The updated measurements
/// depend only on the site, the intensity index and the configured seed, so
/// the same slowdown is reused across workloads.
pub fn evaluate_cell(
    scenario: &Scenario,
    site: (usize, &ComponentId),
    intensity: (usize, f64),
    workload: (&str, &WorkloadSpec),
    config: &EvaluationConfig,
) -> Result<GridCell> {
    let injection = Injection::new(site.1.clone(), intensity.1)?;
    let updated = inject_slowdown(
        &scenario.baseline,
        &injection,
        cell_seed(config.detector.sim.seed, site.0, intensity.0),
    )?;
    let (predicted, oracle) = rayon::join(
        || {
            detector::run_pipeline(
                &scenario.baseline,
                &updated,
                &scenario.local_traces,
                &scenario.system_traces,
                &scenario.model,
                workload.1,
                &config.detector,
            )
        },
        || oracle_end_to_end(scenario, &injection, workload.1, &config.detector),
    );
    let (predicted, oracle) = (predicted?, oracle?);
    let outcome = classify_outcome(&predicted, &oracle);
    Ok(GridCell {
        site: format!("L{}", site.0 + 1),
        location: site.1.clone(),
        intensity: intensity.1,
        workload: workload.0.to_string(),
        predicted,
        oracle,
        outcome,
    })
}

const ORIGINAL: &str = "original";

/// Every site crossed with every configured intensity, original workload.
pub fn evaluate_fixed_grid(scenario: &Scenario, config: &EvaluationConfig) -> Result<Vec<GridCell>> {
    let sites = scenario.select_locations()?;
    let jobs: Vec<(usize, usize)> = (0..sites.len())
        .flat_map(|s| (0..config.intensities.len()).map(move |i| (s, i)))
        .collect();
    jobs.par_iter()
        .map(|&(s, i)| {
            evaluate_cell(
                scenario,
                (s, &sites[s]),
                (i, config.intensities[i]),
                (ORIGINAL, &scenario.spec.workload),
                config,
            )
        })
        .collect()
}

/// Per site, the smallest intensity whose injection the oracle flags under
/// the original workload, else the largest one tried.
pub fn minimum_detectable(fixed: &[GridCell], site: &str) -> Option<f64> {
    let cells: Vec<&GridCell> = fixed.iter().filter(|c| c.site == site).collect();
    cells
        .iter()
        .filter(|c| c.oracle.overall_regression)
        .map(|c| c.intensity)
        .min_by(f64::total_cmp)
        .or_else(|| cells.iter().map(|c| c.intensity).max_by(f64::total_cmp))
}

/// Minimum-detectable injection per site under the original workload and
/// each variant. Original-workload cells are copied from `fixed`.
pub fn evaluate_variant_grid(
    scenario: &Scenario,
    fixed: &[GridCell],
    config: &EvaluationConfig,
) -> Result<Vec<GridCell>> {
    let sites = scenario.select_locations()?;
    let variants = scenario.workload_variants(config.rate_factor)?;
    let mut jobs = Vec::new();
    for (s, site) in sites.iter().enumerate() {
        let label = format!("L{}", s + 1);
        let Some(intensity) = minimum_detectable(fixed, &label) else {
            continue;
        };
        let i = config
            .intensities
            .iter()
            .position(|&x| x == intensity)
            .unwrap_or(config.intensities.len());
        jobs.push((s, site, i, intensity, None));
        for (v, _) in variants.iter().enumerate() {
            jobs.push((s, site, i, intensity, Some(v)));
        }
    }
    jobs.par_iter()
        .map(|&(s, site, i, intensity, v)| match v {
            None => fixed
                .iter()
                .find(|c| c.site == format!("L{}", s + 1) && c.intensity == intensity)
                .cloned()
                .ok_or_else(|| Error::input("fixed grid cell missing")),
            Some(v) => {
                let (name, w) = &variants[v];
                evaluate_cell(scenario, (s, site), (i, intensity), (name, w), config)
            }
        })
        .collect()
}

pub fn evaluate(scenario: &Scenario, config: &EvaluationConfig) -> Result<EvaluationReport> {
    let fixed_workload = evaluate_fixed_grid(scenario, config)?;
    let various_workloads = evaluate_variant_grid(scenario, &fixed_workload, config)?;
    Ok(EvaluationReport {
        alpha: config.detector.alpha,
        fixed_workload,
        various_workloads,
    })
}

fn effect_cell(rt: &detector::ResponseTimeVerdict, alpha: f64) -> String {
    format!("{} ({:+.3})", effect_label(rt, alpha), rt.delta)
}

impl EvaluationReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::input(format!("cannot encode report: {e}")))
    }

    fn grid_table(&self, cells: &[GridCell]) -> String {
        let resources: BTreeSet<&str> = cells
            .iter()
            .flat_map(|c| c.outcome.cpu_abs_delta.keys().map(String::as_str))
            .collect();
        let mut header = vec![
            "Site",
            "Component",
            "Intensity",
            "Workload",
            "Model MPD",
            "Model effect",
            "Oracle MPD",
            "Oracle effect",
            "Outcome",
        ];
        let cpu_headers: Vec<String> = resources.iter().map(|r| format!("|Δ| {r}")).collect();
        header.extend(cpu_headers.iter().map(String::as_str));
        let rows: Vec<Vec<String>> = cells
            .iter()
            .map(|c| {
                let mut row = vec![
                    c.site.clone(),
                    c.location.to_string(),
                    format!("{:.0}%", c.intensity * 100.0),
                    c.workload.clone(),
                    format!("{:+.2} ms", c.predicted.response_time.mpd_ms),
                    effect_cell(&c.predicted.response_time, self.alpha),
                    format!("{:+.2} ms", c.oracle.response_time.mpd_ms),
                    effect_cell(&c.oracle.response_time, self.alpha),
                    c.outcome.label.to_string(),
                ];
                for r in &resources {
                    row.push(c.outcome.cpu_abs_delta.get(*r).map_or("-".into(), |d| format!("{d:.2}")));
                }
                row
            })
            .collect();
        format_table(&header, &rows)
    }

    pub fn render_table(&self) -> String {
        let (a, n) = agreement(&self.fixed_workload);
        let (b, m) = agreement(&self.various_workloads);
        format!(
            "Fixed workload\n{}agreement: {a}/{n}\n\nVarious workloads\n{}agreement: {b}/{m}\n",
            self.grid_table(&self.fixed_workload),
            self.grid_table(&self.various_workloads),
        )
    }
}
