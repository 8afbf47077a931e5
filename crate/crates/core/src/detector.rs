//! End-to-end regression decision: local deviations in, system verdict out.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, StageExt};
use crate::graph::{self, GraphMapping, LocalAnalysis, SubsystemDeviation};
use crate::perfdata::{build_dependency_graph, ComponentId, MeasurementCatalog, Trace};
use crate::qpn::{self, PredictionResult, QpnModel, SimConfig, WorkloadSpec};
use crate::stats::{self, Magnitude, Sample, DEFAULT_ALPHA};

/// Settings shared by the detector and the end-to-end oracle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub alpha: f64,
    pub sim: SimConfig,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            alpha: DEFAULT_ALPHA,
            sim: SimConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseTimeVerdict {
    /// mean(updated) - mean(baseline), milliseconds
    pub mpd_ms: f64,
    pub p_value: f64,
    pub delta: f64,
    pub magnitude: Magnitude,
    pub regression: bool,
    pub baseline_mean_ms: f64,
    pub updated_mean_ms: f64,
}

impl ResponseTimeVerdict {
    fn unchanged(mean_ms: f64) -> Self {
        ResponseTimeVerdict {
            mpd_ms: 0.0,
            p_value: 1.0,
            delta: 0.0,
            magnitude: Magnitude::Negligible,
            regression: false,
            baseline_mean_ms: mean_ms,
            updated_mean_ms: mean_ms,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CpuDeviation {
    /// Utilization change in percentage points.
    pub mpd_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassBreakdown {
    pub baseline_count: usize,
    pub updated_count: usize,
    pub baseline_mean_ms: f64,
    pub updated_mean_ms: f64,
    pub mpd_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionVerdict {
    pub response_time: ResponseTimeVerdict,
    pub cpu: BTreeMap<String, CpuDeviation>,
    /// Gated on response time only; CPU is informational.
    pub overall_regression: bool,
    #[serde(default)]
    pub per_class: BTreeMap<String, ClassBreakdown>,
    #[serde(default)]
    pub deviated_components: Vec<String>,
    #[serde(default)]
    pub subsystem_deviations: Vec<SubsystemDeviation>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl RegressionVerdict {
    /// Verdict for a change that leaves every resource untouched.
    pub fn no_change<'a>(resources: impl IntoIterator<Item = &'a str>) -> Self {
        RegressionVerdict {
            response_time: ResponseTimeVerdict::unchanged(0.0),
            cpu: resources
                .into_iter()
                .map(|r| (r.to_string(), CpuDeviation { mpd_percent: 0.0 }))
                .collect(),
            overall_regression: false,
            per_class: BTreeMap::new(),
            deviated_components: Vec::new(),
            subsystem_deviations: Vec::new(),
            warnings: Vec::new(),
        }
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Compares two predictions (or two oracle runs) of the same system.
/// Response times are pooled over request classes.
pub fn compare_predictions(
    baseline: &PredictionResult,
    updated: &PredictionResult,
    alpha: f64,
) -> Result<RegressionVerdict> {
    let base = baseline.pooled_response_times();
    let upd = updated.pooled_response_times();
    if base.is_empty() || upd.is_empty() {
        return Err(Error::Simulation(
            "no request completed after warm-up; lengthen the simulation".into(),
        ));
    }
    let base_sample = Sample::new(base)?;
    let upd_sample = Sample::new(upd)?;
    let report = stats::compare(&base_sample, &upd_sample, alpha)?;

    let mut cpu = BTreeMap::new();
    for (resource, &u) in &baseline.utilization {
        let after = updated.utilization.get(resource).copied().unwrap_or(u);
        cpu.insert(
            resource.clone(),
            CpuDeviation {
                mpd_percent: 100.0 * (after - u),
            },
        );
    }

    let mut per_class = BTreeMap::new();
    for (class, b) in &baseline.response_times_ms {
        let u = updated.response_times_ms.get(class).map(Vec::as_slice).unwrap_or(&[]);
        per_class.insert(
            class.clone(),
            ClassBreakdown {
                baseline_count: b.len(),
                updated_count: u.len(),
                baseline_mean_ms: mean(b),
                updated_mean_ms: mean(u),
                mpd_ms: mean(u) - mean(b),
            },
        );
    }

    let mut warnings = baseline.warnings.clone();
    for w in &updated.warnings {
        if !warnings.contains(w) {
            warnings.push(format!("updated model: {w}"));
        }
    }

    let regression = report.significant;
    Ok(RegressionVerdict {
        response_time: ResponseTimeVerdict {
            mpd_ms: report.md_ms,
            p_value: report.p_value,
            delta: report.delta,
            magnitude: report.magnitude,
            regression,
            baseline_mean_ms: base_sample.mean(),
            updated_mean_ms: upd_sample.mean(),
        },
        cpu,
        overall_regression: regression,
        per_class,
        deviated_components: Vec::new(),
        subsystem_deviations: Vec::new(),
        warnings,
    })
}

/// Everything between two measurement catalogs and the model update.
#[derive(Debug, Clone, PartialEq)]
pub struct Propagation {
    pub local: LocalAnalysis,
    /// `None` when nothing deviated or no deviated component is in the system graph.
    pub mapping: Option<GraphMapping>,
    /// Adjusted mean of every top-level system component.
    pub adjusted_top_level: BTreeMap<ComponentId, f64>,
    /// Subsystems whose top-level sum changed.
    pub subsystems: Vec<SubsystemDeviation>,
    pub warnings: Vec<String>,
}

/// Compares the catalogs, extracts and maps the deviation subgraph, and
/// propagates the mean differences to subsystem level.
pub fn propagate_deviations(
    baseline: &MeasurementCatalog,
    updated: &MeasurementCatalog,
    local_traces: &[Trace],
    system_traces: &[Trace],
    alpha: f64,
) -> Result<Propagation> {
    let local = graph::analyze_local(baseline, updated, alpha).stage("analyze-local")?;
    let mut warnings: Vec<String> = local
        .unmatched
        .iter()
        .map(|id| format!("{id} is measured in only one version"))
        .collect();
    let mut out = Propagation {
        local,
        mapping: None,
        adjusted_top_level: BTreeMap::new(),
        subsystems: Vec::new(),
        warnings: Vec::new(),
    };
    if out.local.deviations.is_empty() {
        out.warnings = warnings;
        return Ok(out);
    }

    let local_graph = build_dependency_graph(local_traces, baseline).stage("local-graph")?;
    let system_graph = build_dependency_graph(system_traces, baseline).stage("system-graph")?;
    warnings.extend(system_graph.warnings().iter().cloned());

    let sub = graph::extract_deviation_subgraph(&local_graph, &out.local.deviations).stage("extract-subgraph")?;
    if !sub.nodes().iter().any(|n| system_graph.contains(&n.id)) {
        warnings.push("no deviated component occurs in the system graph".into());
        out.warnings = warnings;
        return Ok(out);
    }
    let mapping = graph::map_to_system_graph(&sub, &system_graph).stage("map")?;
    for id in &mapping.dropped {
        warnings.push(format!("{id} could not be mapped onto the system graph"));
    }
    out.adjusted_top_level =
        graph::propagate_bottom_up(&system_graph, &mapping, &out.local.deviations).stage("propagate")?;
    out.subsystems = graph::subsystem_deviation(&system_graph, &out.adjusted_top_level).stage("propagate")?;
    out.mapping = Some(mapping);
    out.warnings = warnings;
    Ok(out)
}

/// Full detection pipeline from two measurement catalogs to a verdict.
///
/// `model` supplies the baseline service demands; `workload` replaces any
/// workload the model carries. Both simulations use the same seed schedule.
/// When the update leaves the model unchanged no simulation is run.
pub fn run_pipeline(
    baseline: &MeasurementCatalog,
    updated: &MeasurementCatalog,
    local_traces: &[Trace],
    system_traces: &[Trace],
    model: &QpnModel,
    workload: &WorkloadSpec,
    config: &DetectorConfig,
) -> Result<RegressionVerdict> {
    let model = model.with_workload(workload.clone()).stage("load-model")?;
    config.sim.validate().stage("simulate")?;
    let mut prop = propagate_deviations(baseline, updated, local_traces, system_traces, config.alpha)?;
    let updated_model = qpn::apply_deviation(&model, &prop.subsystems).stage("update-model")?;
    let deviated: Vec<String> = prop.local.deviations.ids().map(ToString::to_string).collect();

    if updated_model == model {
        let mut v = RegressionVerdict::no_change(model.queueing_places().map(|q| q.resource()));
        v.deviated_components = deviated;
        v.warnings = prop.warnings;
        return Ok(v);
    }

    let (base_pred, upd_pred) = rayon::join(
        || qpn::simulate(&model, &config.sim),
        || qpn::simulate(&updated_model, &config.sim),
    );
    let base_pred = base_pred.stage("simulate")?;
    let upd_pred = upd_pred.stage("simulate")?;

    let mut verdict = compare_predictions(&base_pred, &upd_pred, config.alpha).stage("compare")?;
    verdict.deviated_components = deviated;
    verdict.subsystem_deviations = prop.subsystems;
    prop.warnings.append(&mut verdict.warnings);
    verdict.warnings = prop.warnings;
    Ok(verdict)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Outcome {
    Tp,
    Tn,
    Fp,
    Fn,
}

impl Outcome {
    pub fn from_flags(oracle: bool, predicted: bool) -> Self {
        match (oracle, predicted) {
            (true, true) => Outcome::Tp,
            (false, false) => Outcome::Tn,
            (false, true) => Outcome::Fp,
            (true, false) => Outcome::Fn,
        }
    }

    /// TP and TN.
    pub fn is_agreement(self) -> bool {
        matches!(self, Outcome::Tp | Outcome::Tn)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Tp => "TP",
            Outcome::Tn => "TN",
            Outcome::Fp => "FP",
            Outcome::Fn => "FN",
        }
    }
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeLabel {
    pub label: Outcome,
    /// |oracle MPD - predicted MPD| per resource, percentage points.
    pub cpu_abs_delta: BTreeMap<String, f64>,
}

pub fn classify_outcome(predicted: &RegressionVerdict, oracle: &RegressionVerdict) -> OutcomeLabel {
    let label = Outcome::from_flags(oracle.overall_regression, predicted.overall_regression);
    let cpu_abs_delta = predicted
        .cpu
        .iter()
        .filter_map(|(r, p)| oracle.cpu.get(r).map(|o| (r.clone(), (o.mpd_percent - p.mpd_percent).abs())))
        .collect();
    OutcomeLabel { label, cpu_abs_delta }
}

/// Effect-size cell as shown in reports: the magnitude, or `p > alpha`.
pub fn effect_label(rt: &ResponseTimeVerdict, alpha: f64) -> String {
    if rt.p_value > alpha {
        format!("p > {alpha}")
    } else {
        rt.magnitude.to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    /// Pretty-printed JSON document.
    pub json: String,
    /// Aligned plain-text table.
    pub table: String,
}

#[derive(Serialize)]
struct ReportDocument<'a> {
    regression: bool,
    verdict: &'a RegressionVerdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    outcome: Option<&'a OutcomeLabel>,
}

pub fn render_report(verdict: &RegressionVerdict, outcome: Option<&OutcomeLabel>, alpha: f64) -> Report {
    let json = serde_json::to_string_pretty(&ReportDocument {
        regression: verdict.overall_regression,
        verdict,
        outcome,
    })
        .unwrap_or_else(|e| format!("{{\"error\": \"{e}\"}}"));

    let mut header = vec!["Metric", "MPD", "Effect size"];
    if outcome.is_some() {
        header.extend(["Outcome", "|Δ|"]);
    }
    let mut rows: Vec<Vec<String>> = Vec::new();
    let rt = &verdict.response_time;
    let mut row = vec![
        "Response time".to_string(),
        format!("{:+.2} ms", rt.mpd_ms),
        effect_label(rt, alpha),
    ];
    if let Some(o) = outcome {
        row.extend([o.label.to_string(), "-".to_string()]);
    }
    rows.push(row);
    for (resource, cpu) in &verdict.cpu {
        let mut row = vec![format!("CPU {resource}"), format!("{:+.2} %", cpu.mpd_percent), "-".to_string()];
        if let Some(o) = outcome {
            let d = o.cpu_abs_delta.get(resource).map_or("-".to_string(), |d| format!("{d:.2}"));
            row.extend(["-".to_string(), d]);
        }
        rows.push(row);
    }

    let mut table = format!("regression: {}\n", verdict.overall_regression);
    table.push_str(&format_table(&header, &rows));
    for w in &verdict.warnings {
        let _ = writeln!(table, "warning: {w}");
    }
    Report { json, table }
}

/// Left-aligned columns separated by two spaces.
pub fn format_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.chars().count());
        }
    }
    let line = |cells: &mut dyn Iterator<Item = &str>| {
        let mut s = String::new();
        for (i, c) in cells.enumerate() {
            if i > 0 {
                s.push_str("  ");
            }
            s.push_str(c);
            s.extend(std::iter::repeat_n(' ', widths[i] - c.chars().count()));
        }
        s.truncate(s.trim_end().len());
        s.push('\n');
        s
    };
    let mut out = line(&mut header.iter().copied());
    let total = widths.iter().sum::<usize>() + 2 * widths.len().saturating_sub(1);
    out.push_str(&"-".repeat(total));
    out.push('\n');
    for row in rows {
        out.push_str(&line(&mut row.iter().map(String::as_str)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prediction(times: Vec<f64>, util: &[(&str, f64)]) -> PredictionResult {
        PredictionResult {
            response_times_ms: [("req".to_string(), times)].into(),
            utilization: util.iter().map(|(r, u)| (r.to_string(), *u)).collect(),
            arrived: 0,
            completed: 0,
            in_system_at_end: 0,
            mean_in_system: 0.0,
            observed_arrival_rate_per_s: 0.0,
            warnings: vec![],
        }
    }

    fn verdict(regression: bool, cpu: &[(&str, f64)]) -> RegressionVerdict {
        let mut v = RegressionVerdict::no_change(cpu.iter().map(|(r, _)| *r));
        for (r, m) in cpu {
            v.cpu.get_mut(*r).unwrap().mpd_percent = *m;
        }
        v.overall_regression = regression;
        v.response_time.regression = regression;
        v
    }

    #[test]
    fn outcome_cross_table() {
        assert_eq!(Outcome::from_flags(true, true), Outcome::Tp);
        assert_eq!(Outcome::from_flags(false, false), Outcome::Tn);
        assert_eq!(Outcome::from_flags(false, true), Outcome::Fp);
        assert_eq!(Outcome::from_flags(true, false), Outcome::Fn);
        assert!(Outcome::Tn.is_agreement());
        assert!(!Outcome::Fn.is_agreement());
    }

    #[test]
    fn cpu_absolute_difference() {
        let predicted = verdict(true, &[("cpu", 28.82)]);
        let oracle = verdict(true, &[("cpu", 33.03)]);
        let o = classify_outcome(&predicted, &oracle);
        assert_eq!(o.label, Outcome::Tp);
        assert!((o.cpu_abs_delta["cpu"] - 4.21).abs() < 1e-9);
        let o = classify_outcome(&predicted, &verdict(false, &[("cpu", 1.0)]));
        assert_eq!(o.label, Outcome::Fp);
    }

    #[test]
    fn identical_predictions_are_not_a_regression() {
        let p = prediction((1..200).map(f64::from).collect(), &[("cpu", 0.4)]);
        let v = compare_predictions(&p, &p, 0.05).unwrap();
        assert!(!v.overall_regression);
        assert_eq!(v.response_time.mpd_ms, 0.0);
        assert_eq!(v.cpu["cpu"].mpd_percent, 0.0);
    }

    #[test]
    fn shifted_predictions_regress() {
        let b = prediction((1..200).map(f64::from).collect(), &[("cpu", 0.4)]);
        let u = prediction((1..200).map(|x| f64::from(x) * 2.0).collect(), &[("cpu", 0.6)]);
        let v = compare_predictions(&b, &u, 0.05).unwrap();
        assert!(v.overall_regression);
        assert!(v.response_time.mpd_ms > 0.0);
        assert_ne!(v.response_time.magnitude, Magnitude::Negligible);
        assert!((v.cpu["cpu"].mpd_percent - 20.0).abs() < 1e-9);
        assert_eq!(v.overall_regression, v.response_time.regression);
    }

    #[test]
    fn empty_prediction_is_an_error() {
        let b = prediction(vec![], &[]);
        assert!(compare_predictions(&b, &b, 0.05).is_err());
    }

    #[test]
    fn report_mentions_regression_and_magnitude() {
        let b = prediction((1..200).map(f64::from).collect(), &[("cpu", 0.4)]);
        let u = prediction((1..200).map(|x| f64::from(x) * 2.0).collect(), &[("cpu", 0.6)]);
        let v = compare_predictions(&b, &u, 0.05).unwrap();
        let r = render_report(&v, None, 0.05);
        assert!(r.table.contains("regression: true"));
        assert!(r.table.contains(v.response_time.magnitude.as_str()));
        assert!(!r.table.contains("Outcome"));
        let back: serde_json::Value = serde_json::from_str(&r.json).unwrap();
        assert_eq!(back["verdict"]["overall_regression"], true);
    }

    #[test]
    fn report_with_outcome_and_two_resources() {
        let p = verdict(false, &[("a", 1.0), ("b", 2.0)]);
        let o = verdict(false, &[("a", 1.5), ("b", 2.0)]);
        let label = classify_outcome(&p, &o);
        let r = render_report(&p, Some(&label), 0.05);
        assert!(r.table.contains("Outcome"));
        assert_eq!(r.table.lines().filter(|l| l.starts_with("CPU ")).count(), 2);
        assert!(r.table.contains("p > 0.05"));
    }
}
