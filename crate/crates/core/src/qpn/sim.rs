//! Discrete-event simulation of an open queueing Petri net.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Discipline, Place, PlaceRole, QpnModel, ServiceDistribution, WorkloadSpec};
use crate::error::{Error, Result};

/// Upper bound on immediate firings at a single instant.
const MAX_FIRINGS_PER_INSTANT: u64 = 1_000_000;

const ARRIVAL_STREAM: u64 = 1 << 20;
const SERVICE_STREAM: u64 = 2 << 20;
const ROUTING_STREAM: u64 = 3 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub duration_s: f64,
    /// Completions before this instant are excluded from all statistics.
    pub warmup_s: f64,
    /// Replication `r` runs with seed `seed + r`.
    pub replications: u32,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            duration_s: 600.0,
            warmup_s: 60.0,
            replications: 3,
            seed: 42,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(Error::input(format!("duration must be positive, got {}", self.duration_s)));
        }
        if !(self.warmup_s >= 0.0 && self.warmup_s < self.duration_s) {
            return Err(Error::input(format!(
                "warm-up {} must be non-negative and shorter than the duration {}",
                self.warmup_s, self.duration_s
            )));
        }
        if self.replications == 0 {
            return Err(Error::input("at least one replication is required"));
        }
        Ok(())
    }

    pub fn measured_s(&self) -> f64 {
        self.duration_s - self.warmup_s
    }
}

/// Predicted performance pooled over all replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    /// One value per request completed after warm-up, per request class.
    pub response_times_ms: BTreeMap<String, Vec<f64>>,
    /// Mean busy fraction per resource over the measured window.
    pub utilization: BTreeMap<String, f64>,
    pub arrived: u64,
    pub completed: u64,
    pub in_system_at_end: u64,
    /// Time-averaged number of requests in the system over the measured window.
    pub mean_in_system: f64,
    /// Arrivals per second observed in the measured window.
    pub observed_arrival_rate_per_s: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

use std::collections::BTreeMap;

impl PredictionResult {
    /// All response times, classes in name order.
    pub fn pooled_response_times(&self) -> Vec<f64> {
        self.response_times_ms.values().flatten().copied().collect()
    }

    pub fn mean_response_time_ms(&self) -> Option<f64> {
        let all = self.pooled_response_times();
        (!all.is_empty()).then(|| all.iter().sum::<f64>() / all.len() as f64)
    }
}

/// Runs every replication of `model` under its own workload.
pub fn simulate(model: &QpnModel, config: &SimConfig) -> Result<PredictionResult> {
    config.validate()?;
    model.validate()?;
    let workload = model
        .workload
        .as_ref()
        .ok_or_else(|| Error::input("model has no workload; attach one before simulating"))?;
    let net = Net::compile(model, workload);

    let mut warnings = Vec::new();
    for (place, rho) in model.offered_load(workload) {
        if rho >= 1.0 {
            warnings.push(format!(
                "place `{place}` is offered utilization {rho:.3} >= 1; results do not reach steady state"
            ));
        }
    }

    let runs: Vec<RunOutput> = (0..config.replications)
        .into_par_iter()
        .map(|r| Run::new(&net, config, config.seed.wrapping_add(u64::from(r))).execute())
        .collect::<Result<_>>()?;

    let reps = f64::from(config.replications);
    let window = config.measured_s();
    let mut response_times_ms: BTreeMap<String, Vec<f64>> =
        workload.request_classes.iter().map(|c| (c.name.clone(), Vec::new())).collect();
    let mut busy: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    let mut result = PredictionResult {
        response_times_ms: BTreeMap::new(),
        utilization: BTreeMap::new(),
        arrived: 0,
        completed: 0,
        in_system_at_end: 0,
        mean_in_system: 0.0,
        observed_arrival_rate_per_s: 0.0,
        warnings,
    };
    for run in runs {
        for (class, times) in run.response_times.into_iter().enumerate() {
            let name = &net.colors[net.classes[class].0];
            response_times_ms.entry(name.clone()).or_default().extend(times);
        }
        for (i, area) in run.busy_area.iter().enumerate() {
            let entry = busy.entry(net.resources[net.resource_of[i]].clone()).or_default();
            entry.0 += area;
            entry.1 += f64::from(net.servers[i]) * window;
        }
        result.arrived += run.arrived;
        result.completed += run.completed;
        result.in_system_at_end += run.in_system;
        result.mean_in_system += run.in_system_area / window / reps;
        result.observed_arrival_rate_per_s += run.window_arrivals as f64 / window / reps;
    }
    result.response_times_ms = response_times_ms;
    result.utilization = busy
        .into_iter()
        .map(|(name, (area, capacity))| (name, (area / capacity).clamp(0.0, 1.0)))
        .collect();
    Ok(result)
}

enum NodeKind {
    Ordinary(PlaceRole),
    Queueing {
        discipline: Discipline,
        distribution: ServiceDistribution,
        demand: Vec<f64>,
    },
}

struct CompiledArc {
    slot: usize,
    place: usize,
    color: usize,
    weight: u32,
}

struct CompiledTransition {
    inputs: Vec<CompiledArc>,
    /// Cumulative probability and outputs per mode.
    modes: Vec<(f64, Vec<CompiledArc>)>,
}

struct Net {
    colors: Vec<String>,
    kinds: Vec<NodeKind>,
    transitions: Vec<CompiledTransition>,
    consumers: Vec<Vec<usize>>,
    source: usize,
    /// (color, rate) per request class
    classes: Vec<(usize, f64)>,
    /// queueing-place index -> place index
    stations: Vec<usize>,
    station_of: Vec<Option<usize>>,
    servers: Vec<u32>,
    resources: Vec<String>,
    resource_of: Vec<usize>,
    initial: Vec<(usize, usize, u32)>,
}

impl Net {
    fn compile(model: &QpnModel, workload: &WorkloadSpec) -> Net {
        let ncolors = model.colors.len();
        let color_idx = |c: &str| model.colors.iter().position(|x| x == c).unwrap_or(0);
        let place_idx = |p: &str| model.place_index(p).unwrap_or(0);
        let arc = |a: &super::ArcSpec| {
            let place = place_idx(&a.place);
            let color = color_idx(&a.color);
            CompiledArc {
                slot: place * ncolors + color,
                place,
                color,
                weight: a.weight,
            }
        };

        let mut kinds = Vec::new();
        let mut stations = Vec::new();
        let mut station_of = Vec::new();
        let mut servers = Vec::new();
        let mut resources: Vec<String> = Vec::new();
        let mut resource_of = Vec::new();
        let mut source = 0;
        for (i, p) in model.places.iter().enumerate() {
            match p {
                Place::Ordinary(o) => {
                    if o.role == PlaceRole::Source {
                        source = i;
                    }
                    kinds.push(NodeKind::Ordinary(o.role));
                    station_of.push(None);
                }
                Place::Queueing(q) => {
                    let demand = model
                        .colors
                        .iter()
                        .map(|c| q.service_demand_s.get(c).copied().unwrap_or(0.0))
                        .collect();
                    kinds.push(NodeKind::Queueing {
                        discipline: q.discipline,
                        distribution: q.distribution,
                        demand,
                    });
                    station_of.push(Some(stations.len()));
                    stations.push(i);
                    servers.push(q.servers);
                    let r = match resources.iter().position(|r| r == q.resource()) {
                        Some(r) => r,
                        None => {
                            resources.push(q.resource().to_string());
                            resources.len() - 1
                        }
                    };
                    resource_of.push(r);
                }
            }
        }

        let mut consumers = vec![Vec::new(); model.places.len() * ncolors];
        let transitions = model
            .transitions
            .iter()
            .enumerate()
            .map(|(ti, t)| {
                let inputs: Vec<CompiledArc> = t.inputs.iter().map(arc).collect();
                for a in &inputs {
                    if !consumers[a.slot].contains(&ti) {
                        consumers[a.slot].push(ti);
                    }
                }
                let mut cum = 0.0;
                let modes = t
                    .modes
                    .iter()
                    .map(|m| {
                        cum += m.probability;
                        (cum, m.outputs.iter().map(arc).collect())
                    })
                    .collect();
                CompiledTransition { inputs, modes }
            })
            .collect();

        let classes = workload
            .request_classes
            .iter()
            .map(|c| (color_idx(&c.name), workload.class_rate(&c.name)))
            .collect();
        let initial = model
            .initial_marking
            .iter()
            .map(|m| (place_idx(&m.place), color_idx(&m.color), m.count))
            .collect();

        Net {
            colors: model.colors.clone(),
            kinds,
            transitions,
            consumers,
            source,
            classes,
            stations,
            station_of,
            servers,
            resources,
            resource_of,
            initial,
        }
    }

    fn slot(&self, place: usize, color: usize) -> usize {
        place * self.colors.len() + color
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EventKind {
    Departure { station: usize, job: u64 },
    SharedDeparture { station: usize, version: u64 },
    Arrival { class: usize },
}

impl EventKind {
    fn rank(&self) -> u8 {
        match self {
            EventKind::Departure { .. } | EventKind::SharedDeparture { .. } => 0,
            EventKind::Arrival { .. } => 1,
        }
    }
}

/// Ordered by (time, kind, sequence number).
#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.kind.rank().cmp(&other.kind.rank()))
            .then(self.seq.cmp(&other.seq))
    }
}

#[derive(Debug, Clone, Copy)]
struct Job {
    request: Option<u64>,
    color: usize,
}

struct SharedJob {
    job: Job,
    remaining: f64,
}

struct Station {
    waiting: VecDeque<Job>,
    in_service: HashMap<u64, Job>,
    shared: Vec<SharedJob>,
    version: u64,
    last_progress: f64,
    busy_area: f64,
    last_change: f64,
    rng: ChaCha8Rng,
}

struct Request {
    class: usize,
    arrival: f64,
    live: u32,
}

struct RunOutput {
    response_times: Vec<Vec<f64>>,
    busy_area: Vec<f64>,
    arrived: u64,
    window_arrivals: u64,
    completed: u64,
    in_system: u64,
    in_system_area: f64,
}

struct Run<'a> {
    net: &'a Net,
    warmup: f64,
    duration: f64,
    now: f64,
    seq: u64,
    next_job: u64,
    next_request: u64,
    events: BinaryHeap<Reverse<Event>>,
    tokens: Vec<VecDeque<Option<u64>>>,
    stations: Vec<Station>,
    requests: HashMap<u64, Request>,
    arrival_rngs: Vec<ChaCha8Rng>,
    routing_rngs: Vec<ChaCha8Rng>,
    worklist: VecDeque<usize>,
    queued: Vec<bool>,
    out: RunOutput,
    last_population_change: f64,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl<'a> Run<'a> {
    fn new(net: &'a Net, config: &SimConfig, seed: u64) -> Self {
        let stations = (0..net.stations.len())
            .map(|i| Station {
                waiting: VecDeque::new(),
                in_service: HashMap::new(),
                shared: Vec::new(),
                version: 0,
                last_progress: 0.0,
                busy_area: 0.0,
                last_change: 0.0,
                rng: stream(seed, SERVICE_STREAM + i as u64),
            })
            .collect();
        Run {
            net,
            warmup: config.warmup_s,
            duration: config.duration_s,
            now: 0.0,
            seq: 0,
            next_job: 0,
            next_request: 0,
            events: BinaryHeap::new(),
            tokens: vec![VecDeque::new(); net.kinds.len() * net.colors.len()],
            stations,
            requests: HashMap::new(),
            arrival_rngs: (0..net.classes.len())
                .map(|c| stream(seed, ARRIVAL_STREAM + c as u64))
                .collect(),
            routing_rngs: (0..net.transitions.len())
                .map(|t| stream(seed, ROUTING_STREAM + t as u64))
                .collect(),
            worklist: VecDeque::new(),
            queued: vec![false; net.transitions.len()],
            out: RunOutput {
                response_times: vec![Vec::new(); net.classes.len()],
                busy_area: vec![0.0; net.stations.len()],
                arrived: 0,
                window_arrivals: 0,
                completed: 0,
                in_system: 0,
                in_system_area: 0.0,
            },
            last_population_change: 0.0,
        }
    }

    fn execute(mut self) -> Result<RunOutput> {
        for &(place, color, count) in &self.net.initial {
            for _ in 0..count {
                self.deposit(place, color, None);
            }
        }
        self.fire_enabled()?;
        for class in 0..self.net.classes.len() {
            self.schedule_arrival(class);
        }

        while let Some(Reverse(event)) = self.events.pop() {
            if event.time > self.duration {
                break;
            }
            self.now = event.time;
            match event.kind {
                EventKind::Arrival { class } => self.arrive(class),
                EventKind::Departure { station, job } => self.finish_fcfs(station, job),
                EventKind::SharedDeparture { station, version } => {
                    if self.stations[station].version == version {
                        self.finish_shared(station);
                    }
                }
            }
            self.fire_enabled()?;
        }

        self.now = self.duration;
        self.track_population();
        for s in 0..self.stations.len() {
            self.track_busy(s);
            self.out.busy_area[s] = self.stations[s].busy_area;
        }
        self.out.in_system = self.requests.len() as u64;
        Ok(self.out)
    }

    fn push_event(&mut self, time: f64, kind: EventKind) {
        self.seq += 1;
        self.events.push(Reverse(Event {
            time,
            seq: self.seq,
            kind,
        }));
    }

    fn schedule_arrival(&mut self, class: usize) {
        let rate = self.net.classes[class].1;
        if rate <= 0.0 {
            return;
        }
        let gap: f64 = Exp1.sample(&mut self.arrival_rngs[class]);
        let at = self.now + gap / rate;
        if at <= self.duration {
            self.push_event(at, EventKind::Arrival { class });
        }
    }

    /// Length of [from, to] falling in the measured window.
    fn window_overlap(&self, from: f64, to: f64) -> f64 {
        (to.min(self.duration) - from.max(self.warmup)).max(0.0)
    }

    fn track_population(&mut self) {
        let span = self.window_overlap(self.last_population_change, self.now);
        self.out.in_system_area += span * self.requests.len() as f64;
        self.last_population_change = self.now;
    }

    fn busy_servers(&self, s: usize) -> f64 {
        let st = &self.stations[s];
        let busy = st.in_service.len() + st.shared.len();
        busy.min(self.net.servers[s] as usize) as f64
    }

    fn track_busy(&mut self, s: usize) {
        let span = self.window_overlap(self.stations[s].last_change, self.now);
        let busy = self.busy_servers(s);
        let st = &mut self.stations[s];
        st.busy_area += span * busy;
        st.last_change = self.now;
    }

    fn arrive(&mut self, class: usize) {
        self.out.arrived += 1;
        if self.now >= self.warmup {
            self.out.window_arrivals += 1;
        }
        self.track_population();
        let id = self.next_request;
        self.next_request += 1;
        self.requests.insert(
            id,
            Request {
                class,
                arrival: self.now,
                live: 1,
            },
        );
        let color = self.net.classes[class].0;
        self.deposit(self.net.source, color, Some(id));
        self.schedule_arrival(class);
    }

    fn deposit(&mut self, place: usize, color: usize, request: Option<u64>) {
        match &self.net.kinds[place] {
            NodeKind::Ordinary(PlaceRole::Sink) => self.absorb(request),
            NodeKind::Ordinary(_) => self.stash(place, color, request),
            NodeKind::Queueing { .. } => {
                let s = self.net.station_of[place].unwrap_or(0);
                self.enqueue(s, Job { request, color });
            }
        }
    }

    /// Makes a token available to transitions (ordinary place or depository).
    fn stash(&mut self, place: usize, color: usize, request: Option<u64>) {
        let slot = self.net.slot(place, color);
        self.tokens[slot].push_back(request);
        for &t in &self.net.consumers[slot] {
            if !self.queued[t] {
                self.queued[t] = true;
                self.worklist.push_back(t);
            }
        }
    }

    fn absorb(&mut self, request: Option<u64>) {
        let Some(id) = request else { return };
        if let Some(r) = self.requests.get_mut(&id) {
            r.live = r.live.saturating_sub(1);
            if r.live == 0 {
                self.complete(id);
            }
        }
    }

    fn complete(&mut self, id: u64) {
        self.track_population();
        if let Some(r) = self.requests.remove(&id) {
            self.out.completed += 1;
            if self.now >= self.warmup {
                self.out.response_times[r.class].push((self.now - r.arrival) * 1000.0);
            }
        }
    }

    fn service_time(&mut self, s: usize, color: usize) -> f64 {
        let NodeKind::Queueing { distribution, demand, .. } = &self.net.kinds[self.net.stations[s]] else {
            return 0.0;
        };
        let mean = demand[color];
        match distribution {
            ServiceDistribution::Exponential => {
                let e: f64 = Exp1.sample(&mut self.stations[s].rng);
                mean * e
            }
            ServiceDistribution::Deterministic => mean,
        }
    }

    fn discipline(&self, s: usize) -> Discipline {
        match &self.net.kinds[self.net.stations[s]] {
            NodeKind::Queueing { discipline, .. } => *discipline,
            NodeKind::Ordinary(_) => Discipline::Fcfs,
        }
    }

    fn enqueue(&mut self, s: usize, job: Job) {
        match self.discipline(s) {
            Discipline::Fcfs => {
                if self.stations[s].in_service.len() < self.net.servers[s] as usize {
                    self.start_fcfs(s, job);
                } else {
                    self.stations[s].waiting.push_back(job);
                }
            }
            Discipline::Ps => {
                self.advance_shared(s);
                self.track_busy(s);
                let remaining = self.service_time(s, job.color);
                self.stations[s].shared.push(SharedJob { job, remaining });
                self.reschedule_shared(s);
            }
        }
    }

    fn start_fcfs(&mut self, s: usize, job: Job) {
        self.track_busy(s);
        let t = self.service_time(s, job.color);
        let id = self.next_job;
        self.next_job += 1;
        self.stations[s].in_service.insert(id, job);
        self.push_event(self.now + t, EventKind::Departure { station: s, job: id });
    }

    fn finish_fcfs(&mut self, s: usize, job_id: u64) {
        self.track_busy(s);
        let Some(job) = self.stations[s].in_service.remove(&job_id) else { return };
        if let Some(next) = self.stations[s].waiting.pop_front() {
            self.start_fcfs(s, next);
        }
        self.stash(self.net.stations[s], job.color, job.request);
    }

    fn shared_rate(&self, s: usize) -> f64 {
        let n = self.stations[s].shared.len() as f64;
        if n == 0.0 {
            0.0
        } else {
            (f64::from(self.net.servers[s]) / n).min(1.0)
        }
    }

    fn advance_shared(&mut self, s: usize) {
        let rate = self.shared_rate(s);
        let st = &mut self.stations[s];
        let done = (self.now - st.last_progress) * rate;
        for j in &mut st.shared {
            j.remaining -= done;
        }
        st.last_progress = self.now;
    }

    fn reschedule_shared(&mut self, s: usize) {
        let rate = self.shared_rate(s);
        let st = &mut self.stations[s];
        st.version += 1;
        let version = st.version;
        if let Some(min) = st.shared.iter().map(|j| j.remaining).min_by(f64::total_cmp) {
            let at = self.now + min.max(0.0) / rate;
            self.push_event(at, EventKind::SharedDeparture { station: s, version });
        }
    }

    fn finish_shared(&mut self, s: usize) {
        self.advance_shared(s);
        self.track_busy(s);
        let st = &mut self.stations[s];
        let Some(pos) = st
            .shared
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.remaining.total_cmp(&b.1.remaining))
            .map(|(i, _)| i)
        else {
            return;
        };
        let job = st.shared.remove(pos).job;
        self.reschedule_shared(s);
        self.stash(self.net.stations[s], job.color, job.request);
    }

    fn enabled(&self, t: usize) -> bool {
        self.net.transitions[t]
            .inputs
            .iter()
            .all(|a| self.tokens[a.slot].len() >= a.weight as usize)
    }

    fn fire_enabled(&mut self) -> Result<()> {
        let mut firings = 0u64;
        while let Some(t) = self.worklist.pop_front() {
            self.queued[t] = false;
            while self.enabled(t) {
                firings += 1;
                if firings > MAX_FIRINGS_PER_INSTANT {
                    return Err(Error::Simulation(format!(
                        "more than {MAX_FIRINGS_PER_INSTANT} immediate firings at t = {}; the net loops without delay",
                        self.now
                    )));
                }
                self.fire(t);
            }
        }
        Ok(())
    }

    fn fire(&mut self, t: usize) {
        let net = self.net;
        let transition = &net.transitions[t];
        let mut consumed: Vec<u64> = Vec::new();
        for a in &transition.inputs {
            for _ in 0..a.weight {
                if let Some(Some(id)) = self.tokens[a.slot].pop_front() {
                    consumed.push(id);
                }
            }
        }
        let owner = consumed.first().copied();

        let mode = if transition.modes.len() == 1 {
            0
        } else {
            let u: f64 = self.routing_rngs[t].random();
            transition
                .modes
                .iter()
                .position(|(cum, _)| u < *cum)
                .unwrap_or(transition.modes.len() - 1)
        };
        let outputs = &transition.modes[mode].1;
        let produced: u32 = outputs.iter().map(|a| a.weight).sum();

        for id in &consumed {
            if let Some(r) = self.requests.get_mut(id) {
                r.live = r.live.saturating_sub(1);
            }
        }
        if let Some(id) = owner {
            if let Some(r) = self.requests.get_mut(&id) {
                r.live += produced;
            }
        }
        for a in outputs {
            for _ in 0..a.weight {
                self.deposit(a.place, a.color, owner);
            }
        }
        consumed.sort_unstable();
        consumed.dedup();
        for id in consumed {
            if self.requests.get(&id).is_some_and(|r| r.live == 0) {
                self.complete(id);
            }
        }
    }
}
