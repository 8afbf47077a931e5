//! Queueing Petri net models of a system's architecture.
//!
//! Tokens are colored by request class. Queueing places hold a queue served
//! by `servers` servers and a depository from which transitions take
//! tokens. Transitions fire immediately once their input arcs are
//! satisfied and pick one firing mode at random, each mode with its own
//! output arcs. Requests arrive openly into the single source place and
//! complete once all of their tokens are absorbed by sink places.
//!
//! Models are stored as TOML; see `models/two_subsystems.toml` for a
//! complete example and the README for the schema.

mod sim;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SubsystemDeviation;

pub use sim::{simulate, PredictionResult, SimConfig};

const PROBABILITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpnModel {
    pub colors: Vec<String>,
    pub places: Vec<Place>,
    pub transitions: Vec<Transition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workload: Option<WorkloadSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub initial_marking: Vec<MarkingEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Place {
    Ordinary(OrdinaryPlace),
    Queueing(QueueingPlace),
}

impl Place {
    pub fn name(&self) -> &str {
        match self {
            Place::Ordinary(p) => &p.name,
            Place::Queueing(p) => &p.name,
        }
    }

    pub fn as_queueing(&self) -> Option<&QueueingPlace> {
        match self {
            Place::Queueing(q) => Some(q),
            Place::Ordinary(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlaceRole {
    #[default]
    Internal,
    /// Receives every arriving request token.
    Source,
    /// Absorbs tokens; a request completes when its last token is absorbed.
    Sink,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrdinaryPlace {
    pub name: String,
    #[serde(default)]
    pub role: PlaceRole,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Discipline {
    #[default]
    Fcfs,
    /// Processor sharing across all servers.
    Ps,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ServiceDistribution {
    /// Exponential with mean equal to the service demand.
    #[default]
    Exponential,
    Deterministic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueingPlace {
    pub name: String,
    /// Resource whose utilization is reported; defaults to the place name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resource: Option<String>,
    /// Subsystem whose deviations rescale this place's demands.
    pub subsystem: String,
    #[serde(default = "one")]
    pub servers: u32,
    #[serde(default)]
    pub discipline: Discipline,
    #[serde(default)]
    pub distribution: ServiceDistribution,
    /// Mean service time in seconds per token color.
    pub service_demand_s: BTreeMap<String, f64>,
}

impl QueueingPlace {
    pub fn resource(&self) -> &str {
        self.resource.as_deref().unwrap_or(&self.name)
    }
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArcSpec {
    pub place: String,
    pub color: String,
    #[serde(default = "one")]
    pub weight: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiringMode {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub probability: f64,
    #[serde(default)]
    pub outputs: Vec<ArcSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub name: String,
    pub inputs: Vec<ArcSpec>,
    pub modes: Vec<FiringMode>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkingEntry {
    pub place: String,
    pub color: String,
    pub count: u32,
}

/// Open workload: Poisson arrivals at `arrival_rate_per_s`, split over the
/// request classes by their mix probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub arrival_rate_per_s: f64,
    pub request_classes: Vec<RequestClass>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestClass {
    pub name: String,
    pub mix_probability: f64,
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.arrival_rate_per_s.is_finite() && self.arrival_rate_per_s > 0.0) {
            return Err(Error::validation(format!(
                "workload arrival rate must be positive, got {}",
                self.arrival_rate_per_s
            )));
        }
        if self.request_classes.is_empty() {
            return Err(Error::validation("workload has no request classes"));
        }
        let mut names = BTreeSet::new();
        let mut total = 0.0;
        for c in &self.request_classes {
            if !names.insert(c.name.as_str()) {
                return Err(Error::validation(format!("duplicate request class `{}`", c.name)));
            }
            if !(0.0..=1.0).contains(&c.mix_probability) {
                return Err(Error::validation(format!(
                    "mix probability of `{}` outside [0, 1]: {}",
                    c.name, c.mix_probability
                )));
            }
            total += c.mix_probability;
        }
        if (total - 1.0).abs() > PROBABILITY_TOLERANCE {
            return Err(Error::validation(format!("class mix probabilities sum to {total}, not 1")));
        }
        Ok(())
    }

    /// Arrival rate of one class in requests per second.
    pub fn class_rate(&self, class: &str) -> f64 {
        self.request_classes
            .iter()
            .find(|c| c.name == class)
            .map_or(0.0, |c| c.mix_probability * self.arrival_rate_per_s)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: WorkloadSpec =
            toml::from_str(text).map_err(|e| Error::validation(format!("invalid workload document: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::validation(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::validation(format!("cannot encode workload: {e}")))
    }
}

/// Parses and validates a model file.
pub fn load_model(path: impl AsRef<Path>) -> Result<QpnModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    QpnModel::from_toml_str(&text).map_err(|e| match e {
        Error::Validation(msg) => Error::Validation(format!("{}: {msg}", path.display())),
        other => other,
    })
}

impl QpnModel {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let model: QpnModel =
            toml::from_str(text).map_err(|e| Error::validation(format!("invalid model document: {e}")))?;
        model.validate()?;
        Ok(model)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::validation(format!("cannot encode model: {e}")))
    }

    pub fn place_index(&self, name: &str) -> Option<usize> {
        self.places.iter().position(|p| p.name() == name)
    }

    pub fn queueing_places(&self) -> impl Iterator<Item = &QueueingPlace> {
        self.places.iter().filter_map(Place::as_queueing)
    }

    pub fn subsystems(&self) -> BTreeSet<&str> {
        self.queueing_places().map(|q| q.subsystem.as_str()).collect()
    }

    /// Copy of the model driven by another workload.
    pub fn with_workload(&self, workload: WorkloadSpec) -> Result<Self> {
        let mut model = self.clone();
        model.workload = Some(workload);
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let colors: BTreeSet<&str> = self.colors.iter().map(String::as_str).collect();
        if colors.is_empty() || colors.len() != self.colors.len() || colors.iter().any(|c| c.is_empty()) {
            return Err(Error::validation("colors must be a non-empty list of distinct names"));
        }

        let mut names = BTreeSet::new();
        let mut sources = 0;
        let mut sinks = BTreeSet::new();
        for p in &self.places {
            if p.name().is_empty() || !names.insert(p.name()) {
                return Err(Error::validation(format!("duplicate or empty place name `{}`", p.name())));
            }
            match p {
                Place::Ordinary(o) => match o.role {
                    PlaceRole::Source => sources += 1,
                    PlaceRole::Sink => {
                        sinks.insert(o.name.as_str());
                    }
                    PlaceRole::Internal => {}
                },
                Place::Queueing(q) => {
                    if q.subsystem.trim().is_empty() {
                        return Err(Error::validation(format!("queueing place `{}` has no subsystem", q.name)));
                    }
                    if q.servers == 0 {
                        return Err(Error::validation(format!("queueing place `{}` needs at least one server", q.name)));
                    }
                    for (color, &d) in &q.service_demand_s {
                        if !colors.contains(color.as_str()) {
                            return Err(Error::validation(format!(
                                "queueing place `{}` has a demand for unknown color `{color}`",
                                q.name
                            )));
                        }
                        if !(d.is_finite() && d > 0.0) {
                            return Err(Error::validation(format!(
                                "service demand of `{}` for `{color}` must be positive, got {d}",
                                q.name
                            )));
                        }
                    }
                }
            }
        }
        if sources != 1 {
            return Err(Error::validation(format!("expected exactly one source place, found {sources}")));
        }
        if sinks.is_empty() {
            return Err(Error::validation("model has no sink place"));
        }

        let check_arc = |t: &str, a: &ArcSpec| -> Result<()> {
            if !names.contains(a.place.as_str()) {
                return Err(Error::validation(format!(
                    "transition `{t}` references unknown place `{}`",
                    a.place
                )));
            }
            if !colors.contains(a.color.as_str()) {
                return Err(Error::validation(format!(
                    "transition `{t}` references unknown color `{}`",
                    a.color
                )));
            }
            if a.weight == 0 {
                return Err(Error::validation(format!("transition `{t}` has an arc of weight 0")));
            }
            Ok(())
        };
        let mut tnames = BTreeSet::new();
        for t in &self.transitions {
            if !tnames.insert(t.name.as_str()) {
                return Err(Error::validation(format!("duplicate transition `{}`", t.name)));
            }
            if t.inputs.is_empty() {
                return Err(Error::validation(format!("transition `{}` has no input arcs", t.name)));
            }
            if t.modes.is_empty() {
                return Err(Error::validation(format!("transition `{}` has no firing modes", t.name)));
            }
            for a in &t.inputs {
                check_arc(&t.name, a)?;
                if sinks.contains(a.place.as_str()) {
                    return Err(Error::validation(format!(
                        "transition `{}` consumes from sink `{}`",
                        t.name, a.place
                    )));
                }
            }
            let mut total = 0.0;
            for m in &t.modes {
                if !(m.probability.is_finite() && m.probability >= 0.0) {
                    return Err(Error::validation(format!(
                        "transition `{}` has an invalid mode probability {}",
                        t.name, m.probability
                    )));
                }
                total += m.probability;
                for a in &m.outputs {
                    check_arc(&t.name, a)?;
                    let idx = self.place_index(&a.place).unwrap_or(0);
                    if let Place::Queueing(q) = &self.places[idx] {
                        if !q.service_demand_s.contains_key(&a.color) {
                            return Err(Error::validation(format!(
                                "queueing place `{}` receives `{}` tokens but has no demand for them",
                                q.name, a.color
                            )));
                        }
                    }
                }
            }
            if (total - 1.0).abs() > PROBABILITY_TOLERANCE {
                return Err(Error::validation(format!(
                    "firing-mode probabilities of transition `{}` sum to {total}, not 1",
                    t.name
                )));
            }
        }
        for m in &self.initial_marking {
            if !names.contains(m.place.as_str()) || !colors.contains(m.color.as_str()) {
                return Err(Error::validation(format!(
                    "initial marking references unknown place/color `{}`/`{}`",
                    m.place, m.color
                )));
            }
        }
        if let Some(w) = &self.workload {
            w.validate()?;
            for c in &w.request_classes {
                if !colors.contains(c.name.as_str()) {
                    return Err(Error::validation(format!("request class `{}` is not a model color", c.name)));
                }
            }
        }
        Ok(())
    }

    /// Offered utilization per queueing place under `workload`, from the
    /// expected token flow through the net.
    pub fn offered_load(&self, workload: &WorkloadSpec) -> BTreeMap<String, f64> {
        let ncolors = self.colors.len();
        let color_idx: BTreeMap<&str, usize> = self.colors.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
        let place_idx: BTreeMap<&str, usize> =
            self.places.iter().enumerate().map(|(i, p)| (p.name(), i)).collect();
        let slot = |p: usize, c: usize| p * ncolors + c;

        // first transition consuming each (place, color)
        let mut consumer: BTreeMap<usize, (usize, u32)> = BTreeMap::new();
        for (ti, t) in self.transitions.iter().enumerate() {
            for a in &t.inputs {
                let s = slot(place_idx[a.place.as_str()], color_idx[a.color.as_str()]);
                consumer.entry(s).or_insert((ti, a.weight));
            }
        }

        let source = self
            .places
            .iter()
            .position(|p| matches!(p, Place::Ordinary(o) if o.role == PlaceRole::Source))
            .unwrap_or(0);
        let mut pending = vec![0.0; self.places.len() * ncolors];
        for c in &workload.request_classes {
            if let Some(&ci) = color_idx.get(c.name.as_str()) {
                pending[slot(source, ci)] += workload.class_rate(&c.name);
            }
        }
        let mut visits = vec![0.0; pending.len()];
        let initial: f64 = pending.iter().sum();
        for _ in 0..100_000 {
            let mut next = vec![0.0; pending.len()];
            let mut moved = 0.0;
            for (s, &mass) in pending.iter().enumerate() {
                if mass == 0.0 {
                    continue;
                }
                let p = s / ncolors;
                if let Place::Queueing(_) = self.places[p] {
                    visits[s] += mass;
                }
                if let Place::Ordinary(o) = &self.places[p] {
                    if o.role == PlaceRole::Sink {
                        continue;
                    }
                }
                let Some(&(ti, w)) = consumer.get(&s) else { continue };
                let firings = mass / w as f64;
                for m in &self.transitions[ti].modes {
                    for a in &m.outputs {
                        let ns = slot(place_idx[a.place.as_str()], color_idx[a.color.as_str()]);
                        let add = firings * m.probability * a.weight as f64;
                        next[ns] += add;
                        moved += add;
                    }
                }
            }
            pending = next;
            if moved <= initial * 1e-13 {
                break;
            }
        }

        self.places
            .iter()
            .enumerate()
            .filter_map(|(p, place)| {
                let q = place.as_queueing()?;
                let busy: f64 = self
                    .colors
                    .iter()
                    .enumerate()
                    .map(|(ci, c)| visits[slot(p, ci)] * q.service_demand_s.get(c).copied().unwrap_or(0.0))
                    .sum();
                Some((q.name.clone(), busy / q.servers as f64))
            })
            .collect()
    }
}

/// Rescales the service demands of every queueing place of each deviated
/// subsystem by `1 + relative_delta`. Everything else is copied unchanged.
///
/// When the deviation carries consistent totals the factor is applied as
/// `adjusted / baseline`, which keeps round numbers round (0.3 s over a
/// 300 -> 500 ms change gives exactly 0.5 s).
pub fn apply_deviation(model: &QpnModel, deviations: &[SubsystemDeviation]) -> Result<QpnModel> {
    let mut updated = model.clone();
    let mut unmatched = Vec::new();
    for dev in deviations {
        if !(dev.relative_delta > -1.0 && dev.relative_delta.is_finite()) {
            return Err(Error::input(format!(
                "relative delta of `{}` must exceed -1, got {}",
                dev.subsystem, dev.relative_delta
            )));
        }
        let mut matched = false;
        for place in &mut updated.places {
            if let Place::Queueing(q) = place {
                if q.subsystem == dev.subsystem {
                    matched = true;
                    if dev.relative_delta == 0.0 {
                        continue;
                    }
                    let (base, adj) = (dev.baseline_total_ms, dev.adjusted_total_ms);
                    let ratio_form = base > 0.0 && (adj - base) / base == dev.relative_delta;
                    for demand in q.service_demand_s.values_mut() {
                        *demand = if ratio_form {
                            *demand * adj / base
                        } else {
                            *demand * (1.0 + dev.relative_delta)
                        };
                    }
                }
            }
        }
        if !matched {
            unmatched.push(dev.subsystem.clone());
        }
    }
    if !unmatched.is_empty() {
        return Err(Error::input(format!(
            "no queueing place for subsystem(s): {}",
            unmatched.join(", ")
        )));
    }
    Ok(updated)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const TWO_SUBSYSTEMS: &str = include_str!("../../models/two_subsystems.toml");

    #[test]
    fn shipped_model_loads() {
        let m = QpnModel::from_toml_str(TWO_SUBSYSTEMS).unwrap();
        assert_eq!(m.queueing_places().count(), 2);
        assert_eq!(m.subsystems().into_iter().collect::<Vec<_>>(), ["Microservice_A", "Microservice_B"]);
    }

    #[test]
    fn toml_round_trip() {
        let m = QpnModel::from_toml_str(TWO_SUBSYSTEMS).unwrap();
        let again = QpnModel::from_toml_str(&m.to_toml_string().unwrap()).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn rejects_unnormalized_modes() {
        let text = TWO_SUBSYSTEMS.replacen("probability = 0.7", "probability = 0.5", 1);
        let err = QpnModel::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("sum to"), "{err}");
    }

    #[test]
    fn rejects_zero_demand() {
        let text = TWO_SUBSYSTEMS.replacen("browse = 0.3", "browse = 0.0", 1);
        let err = QpnModel::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("must be positive"), "{err}");
    }

    #[test]
    fn rejects_dangling_arc() {
        let text = TWO_SUBSYSTEMS.replacen("place = \"done\"", "place = \"nowhere\"", 1);
        let err = QpnModel::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("nowhere"), "{err}");
    }

    #[test]
    fn deviation_scales_demands() {
        let m = QpnModel::from_toml_str(TWO_SUBSYSTEMS).unwrap();
        let dev = SubsystemDeviation::new("Microservice_B", 0.3, 0.5).unwrap();
        let up = apply_deviation(&m, &[dev]).unwrap();
        let b = up.queueing_places().find(|q| q.subsystem == "Microservice_B").unwrap();
        assert_eq!(b.service_demand_s["browse"], 0.5);
        let a_before = m.queueing_places().find(|q| q.subsystem == "Microservice_A").unwrap();
        let a_after = up.queueing_places().find(|q| q.subsystem == "Microservice_A").unwrap();
        assert_eq!(a_before, a_after);
    }

    #[test]
    fn zero_deviation_is_identity() {
        let m = QpnModel::from_toml_str(TWO_SUBSYSTEMS).unwrap();
        let dev = SubsystemDeviation::new("Microservice_A", 0.2, 0.2).unwrap();
        assert_eq!(apply_deviation(&m, &[dev]).unwrap(), m);
    }

    #[test]
    fn halving_demand() {
        let m = QpnModel::from_toml_str(TWO_SUBSYSTEMS).unwrap();
        let dev = SubsystemDeviation::new("Microservice_A", 10.0, 5.0).unwrap();
        let up = apply_deviation(&m, &[dev]).unwrap();
        let a = up.queueing_places().find(|q| q.subsystem == "Microservice_A").unwrap();
        assert_eq!(a.service_demand_s["browse"], 0.1);
    }

    #[test]
    fn unmatched_subsystem_errors() {
        let m = QpnModel::from_toml_str(TWO_SUBSYSTEMS).unwrap();
        let dev = SubsystemDeviation::new("Nope", 1.0, 2.0).unwrap();
        let err = apply_deviation(&m, &[dev]).unwrap_err();
        assert!(err.to_string().contains("Nope"), "{err}");
    }

    #[test]
    fn offered_load_follows_routing() {
        let m = QpnModel::from_toml_str(TWO_SUBSYSTEMS).unwrap();
        let w = m.workload.clone().unwrap();
        let load = m.offered_load(&w);
        // every request visits A once; 70% continue to B
        let rate = w.arrival_rate_per_s;
        assert!((load["Microservice_A"] - rate * 0.2).abs() < 1e-9);
        assert!((load["Microservice_B"] - rate * 0.7 * 0.3).abs() < 1e-9);
    }

    #[test]
    fn workload_validation() {
        let w = WorkloadSpec {
            arrival_rate_per_s: 1.0,
            request_classes: vec![
                RequestClass { name: "a".into(), mix_probability: 0.5 },
                RequestClass { name: "b".into(), mix_probability: 0.4 },
            ],
        };
        assert!(w.validate().is_err());
    }
}
