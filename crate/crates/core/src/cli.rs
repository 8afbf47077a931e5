//! Command-line front end. Every pipeline stage is its own subcommand so CI
//! jobs can cache intermediate artifacts.
//!
//! Exit codes: 0 clean, 1 regression detected, 2 error.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::detector::{self, format_table, DetectorConfig};
use crate::error::{Error, Result};
use crate::graph::SubsystemDeviation;
use crate::perfdata::{load_measurements, load_traces, ComponentId, MeasurementCatalog, Trace};
use crate::qpn::{self, load_model, QpnModel, SimConfig, WorkloadSpec};
use crate::stats::{DeviationReport, DEFAULT_ALPHA};
use crate::synth::{self, EvaluationConfig, Injection, ScenarioSpec};

pub const SEED_ENV: &str = "PERF_BRIDGE_SEED";

pub const EXIT_CLEAN: u8 = 0;
pub const EXIT_REGRESSION: u8 = 1;
pub const EXIT_ERROR: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "perf-bridge", version, about = "Predict system performance regressions from component measurements")]
pub struct Cli {
    #[command(flatten)]
    pub options: Options,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Table,
}

/// Options shared by all subcommands. Each may also come from `--config`.
#[derive(Debug, Default, Args)]
pub struct Options {
    /// TOML file with any of the options below; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub baseline: Option<PathBuf>,
    #[arg(long, global = true)]
    pub updated: Option<PathBuf>,
    #[arg(long, global = true)]
    pub local_traces: Option<PathBuf>,
    #[arg(long, global = true)]
    pub system_traces: Option<PathBuf>,
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    /// Workload file; defaults to the workload embedded in the model.
    #[arg(long, global = true)]
    pub workload: Option<PathBuf>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Falls back to $PERF_BRIDGE_SEED, then the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Simulated seconds per replication.
    #[arg(long, global = true)]
    pub duration: Option<f64>,
    /// Simulated seconds discarded at the start of each replication.
    #[arg(long, global = true)]
    pub warmup: Option<f64>,
    #[arg(long, global = true)]
    pub replications: Option<u32>,
    /// Write the output here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Print progress to stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compare component measurements of two versions.
    AnalyzeLocal,
    /// Push significant component deviations up to subsystem level.
    Propagate {
        /// Also write the model with updated service demands here (needs --model).
        #[arg(long)]
        model_out: Option<PathBuf>,
    },
    /// Simulate a model and summarize predicted performance.
    Predict,
    /// Run the whole pipeline; exits 1 on a predicted regression.
    Detect,
    /// Compare detector and end-to-end oracle on a synthetic scenario.
    Evaluate {
        /// Scenario file; the shipped default scenario otherwise.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        rate_factor: Option<f64>,
        /// Injection intensities as fractions, comma separated.
        #[arg(long, value_delimiter = ',')]
        intensities: Option<Vec<f64>>,
    },
    /// Write a synthetic scenario's input files, optionally with a slowdown.
    Generate {
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Component to slow down, as `subsystem::component`.
        #[arg(long, requires = "intensity")]
        inject: Option<String>,
        /// Slowdown as a fraction of the component's execution time.
        #[arg(long, requires = "inject")]
        intensity: Option<f64>,
    },
}

/// Contents of a `--config` file.
#[derive(Debug, Default, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub baseline: Option<PathBuf>,
    pub updated: Option<PathBuf>,
    pub local_traces: Option<PathBuf>,
    pub system_traces: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub workload: Option<PathBuf>,
    pub alpha: Option<f64>,
    pub seed: Option<u64>,
    pub duration: Option<f64>,
    pub warmup: Option<f64>,
    pub replications: Option<u32>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
}

impl ConfigFile {
    /// Relative paths are resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ConfigFile = toml::from_str(&text)
            .map_err(|e| Error::input(format!("{}: invalid config file: {e}", path.display())))?;
        let dir = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.baseline,
            &mut cfg.updated,
            &mut cfg.local_traces,
            &mut cfg.system_traces,
            &mut cfg.model,
            &mut cfg.workload,
            &mut cfg.out,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(cfg)
    }
}

/// Fully resolved settings for one invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub alpha: f64,
    pub sim: SimConfig,
    pub baseline: Option<PathBuf>,
    pub updated: Option<PathBuf>,
    pub local_traces: Option<PathBuf>,
    pub system_traces: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub workload: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub format: Format,
    pub verbosity: u8,
    /// Settings given explicitly by flag, environment or config file.
    pub explicit_duration: Option<f64>,
    pub explicit_warmup: Option<f64>,
    pub explicit_replications: Option<u32>,
    pub explicit_seed: Option<u64>,
}

impl RunConfig {
    /// Merges flags over the environment seed over the config file over defaults.
    pub fn resolve(options: &Options, env_seed: Option<&str>) -> Result<Self> {
        let file = match &options.config {
            Some(p) => ConfigFile::load(p)?,
            None => ConfigFile::default(),
        };
        let env_seed = match env_seed {
            Some(s) => Some(
                s.trim()
                    .parse::<u64>()
                    .map_err(|_| Error::input(format!("{SEED_ENV} must be an unsigned integer, got `{s}`")))?,
            ),
            None => None,
        };
        let defaults = SimConfig::default();
        let pick = |flag: &Option<PathBuf>, file: &Option<PathBuf>| flag.clone().or_else(|| file.clone());
        let cfg = RunConfig {
            alpha: options.alpha.or(file.alpha).unwrap_or(DEFAULT_ALPHA),
            sim: SimConfig {
                duration_s: options.duration.or(file.duration).unwrap_or(defaults.duration_s),
                warmup_s: options.warmup.or(file.warmup).unwrap_or(defaults.warmup_s),
                replications: options.replications.or(file.replications).unwrap_or(defaults.replications),
                seed: options.seed.or(env_seed).or(file.seed).unwrap_or(defaults.seed),
            },
            baseline: pick(&options.baseline, &file.baseline),
            updated: pick(&options.updated, &file.updated),
            local_traces: pick(&options.local_traces, &file.local_traces),
            system_traces: pick(&options.system_traces, &file.system_traces),
            model: pick(&options.model, &file.model),
            workload: pick(&options.workload, &file.workload),
            out: pick(&options.out, &file.out),
            format: options.format.or(file.format).unwrap_or(Format::Json),
            verbosity: options.verbose,
            explicit_duration: options.duration.or(file.duration),
            explicit_warmup: options.warmup.or(file.warmup),
            explicit_replications: options.replications.or(file.replications),
            explicit_seed: options.seed.or(env_seed).or(file.seed),
        };
        if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
            return Err(Error::input(format!("--alpha must lie in (0, 1), got {}", cfg.alpha)));
        }
        Ok(cfg)
    }

    fn detector(&self) -> DetectorConfig {
        DetectorConfig {
            alpha: self.alpha,
            sim: self.sim,
        }
    }
}

fn require<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    let p = path
        .as_deref()
        .ok_or_else(|| Error::input(format!("missing required option --{flag}")))?;
    if !p.exists() {
        return Err(Error::input(format!("--{flag}: {} does not exist", p.display())));
    }
    Ok(p)
}

/// Checks every listed input before any stage runs.
fn require_all<'a>(items: &[(&'a Option<PathBuf>, &str)]) -> Result<Vec<&'a Path>> {
    items.iter().map(|(p, flag)| require(p, flag)).collect()
}

#[derive(Debug, Serialize)]
struct ComponentReport {
    component: ComponentId,
    #[serde(flatten)]
    report: DeviationReport,
}

#[derive(Debug, Serialize)]
struct LocalDocument {
    alpha: f64,
    baseline_version: String,
    updated_version: String,
    deviations: Vec<ComponentReport>,
    unmatched: Vec<ComponentId>,
}

#[derive(Debug, Serialize)]
struct TopLevelAdjustment {
    component: ComponentId,
    baseline_ms: f64,
    adjusted_ms: f64,
}

#[derive(Debug, Serialize)]
struct PropagationDocument {
    deviations: Vec<ComponentReport>,
    mapping: BTreeMap<ComponentId, ComponentId>,
    unmapped: Vec<ComponentId>,
    top_level: Vec<TopLevelAdjustment>,
    subsystems: Vec<SubsystemDeviation>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    warnings: Vec<String>,
}

#[derive(Debug, Serialize)]
struct ClassSummary {
    completed: usize,
    mean_ms: f64,
    p50_ms: f64,
    p95_ms: f64,
}

#[derive(Debug, Serialize)]
struct PredictionDocument {
    seed: u64,
    arrived: u64,
    completed: u64,
    mean_in_system: f64,
    observed_arrival_rate_per_s: f64,
    utilization: BTreeMap<String, f64>,
    response_time: BTreeMap<String, ClassSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    warnings: Vec<String>,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| Error::input(format!("cannot encode output: {e}")))
}

struct Inputs {
    baseline: MeasurementCatalog,
    updated: MeasurementCatalog,
    local_traces: Vec<Trace>,
    system_traces: Vec<Trace>,
}

fn load_inputs(cfg: &RunConfig) -> Result<Inputs> {
    let paths = require_all(&[
        (&cfg.baseline, "baseline"),
        (&cfg.updated, "updated"),
        (&cfg.local_traces, "local-traces"),
        (&cfg.system_traces, "system-traces"),
    ])?;
    Ok(Inputs {
        baseline: load_measurements(paths[0])?,
        updated: load_measurements(paths[1])?,
        local_traces: load_traces(paths[2])?,
        system_traces: load_traces(paths[3])?,
    })
}

fn load_model_and_workload(cfg: &RunConfig) -> Result<(QpnModel, WorkloadSpec)> {
    let model = load_model(require(&cfg.model, "model")?)?;
    let workload = match &cfg.workload {
        Some(_) => WorkloadSpec::load(require(&cfg.workload, "workload")?)?,
        None => model
            .workload
            .clone()
            .ok_or_else(|| Error::input("the model has no workload section; pass --workload"))?,
    };
    Ok((model, workload))
}

/// Output text plus the exit code it implies.
struct Outcome {
    text: String,
    code: u8,
}

impl Outcome {
    fn clean(text: String) -> Self {
        Outcome { text, code: EXIT_CLEAN }
    }
}

fn note(cfg: &RunConfig, msg: impl AsRef<str>) {
    if cfg.verbosity > 0 {
        eprintln!("{}", msg.as_ref());
    }
}

fn component_reports<'a>(
    reports: impl Iterator<Item = (&'a ComponentId, &'a DeviationReport)>,
) -> Vec<ComponentReport> {
    reports
        .map(|(id, r)| ComponentReport {
            component: id.clone(),
            report: *r,
        })
        .collect()
}

fn deviation_table(reports: &[ComponentReport]) -> String {
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            vec![
                r.component.to_string(),
                format!("{:+.3}", r.report.md_ms),
                format!("{:.3e}", r.report.p_value),
                format!("{:+.3}", r.report.delta),
                r.report.magnitude.to_string(),
            ]
        })
        .collect();
    format_table(&["Component", "MD (ms)", "p", "delta", "Magnitude"], &rows)
}

fn analyze_local(cfg: &RunConfig) -> Result<Outcome> {
    let paths = require_all(&[(&cfg.baseline, "baseline"), (&cfg.updated, "updated")])?;
    let baseline = load_measurements(paths[0])?;
    let updated = load_measurements(paths[1])?;
    let local = crate::graph::analyze_local(&baseline, &updated, cfg.alpha)?;
    let doc = LocalDocument {
        alpha: cfg.alpha,
        baseline_version: baseline.version().to_string(),
        updated_version: updated.version().to_string(),
        deviations: component_reports(local.deviations.iter()),
        unmatched: local.unmatched,
    };
    let text = match cfg.format {
        Format::Json => to_json(&doc)?,
        Format::Table => {
            let mut t = format!("{} significant deviation(s)\n", doc.deviations.len());
            t.push_str(&deviation_table(&doc.deviations));
            t
        }
    };
    Ok(Outcome::clean(text))
}

fn propagate(cfg: &RunConfig, model_out: Option<&Path>) -> Result<Outcome> {
    let inputs = load_inputs(cfg)?;
    let model = match (model_out, &cfg.model) {
        (Some(_), None) => return Err(Error::input("--model-out needs --model")),
        (_, Some(_)) => Some(load_model(require(&cfg.model, "model")?)?),
        _ => None,
    };
    let prop = detector::propagate_deviations(
        &inputs.baseline,
        &inputs.updated,
        &inputs.local_traces,
        &inputs.system_traces,
        cfg.alpha,
    )?;
    if let (Some(model), Some(path)) = (&model, model_out) {
        let updated = qpn::apply_deviation(model, &prop.subsystems)?;
        std::fs::write(path, updated.to_toml_string()?).map_err(|e| Error::io(path, e))?;
        note(cfg, format!("updated model written to {}", path.display()));
    }
    let baseline_means: BTreeMap<&ComponentId, f64> = inputs.baseline.iter().map(|(id, s)| (id, s.mean())).collect();
    let doc = PropagationDocument {
        deviations: component_reports(prop.local.deviations.iter()),
        mapping: prop.mapping.as_ref().map(|m| m.pairs.clone()).unwrap_or_default(),
        unmapped: prop.mapping.as_ref().map(|m| m.dropped.clone()).unwrap_or_default(),
        top_level: prop
            .adjusted_top_level
            .iter()
            .map(|(id, &adjusted_ms)| TopLevelAdjustment {
                component: id.clone(),
                baseline_ms: baseline_means.get(id).copied().unwrap_or(0.0),
                adjusted_ms,
            })
            .collect(),
        subsystems: prop.subsystems,
        warnings: prop.warnings,
    };
    let text = match cfg.format {
        Format::Json => to_json(&doc)?,
        Format::Table => {
            let rows: Vec<Vec<String>> = doc
                .subsystems
                .iter()
                .map(|s| {
                    vec![
                        s.subsystem.clone(),
                        format!("{:.3}", s.baseline_total_ms),
                        format!("{:.3}", s.adjusted_total_ms),
                        format!("{:+.4}", s.relative_delta),
                    ]
                })
                .collect();
            let mut t = deviation_table(&doc.deviations);
            t.push('\n');
            t.push_str(&format_table(&["Subsystem", "Baseline (ms)", "Adjusted (ms)", "Relative delta"], &rows));
            t
        }
    };
    Ok(Outcome::clean(text))
}

fn predict(cfg: &RunConfig) -> Result<Outcome> {
    let (model, workload) = load_model_and_workload(cfg)?;
    let model = model.with_workload(workload)?;
    let result = qpn::simulate(&model, &cfg.sim)?;
    let response_time = result
        .response_times_ms
        .iter()
        .map(|(class, times)| {
            let mut sorted = times.clone();
            sorted.sort_by(f64::total_cmp);
            let mean = if sorted.is_empty() {
                0.0
            } else {
                sorted.iter().sum::<f64>() / sorted.len() as f64
            };
            (
                class.clone(),
                ClassSummary {
                    completed: sorted.len(),
                    mean_ms: mean,
                    p50_ms: percentile(&sorted, 0.5),
                    p95_ms: percentile(&sorted, 0.95),
                },
            )
        })
        .collect();
    let doc = PredictionDocument {
        seed: cfg.sim.seed,
        arrived: result.arrived,
        completed: result.completed,
        mean_in_system: result.mean_in_system,
        observed_arrival_rate_per_s: result.observed_arrival_rate_per_s,
        utilization: result.utilization,
        response_time,
        warnings: result.warnings,
    };
    let text = match cfg.format {
        Format::Json => to_json(&doc)?,
        Format::Table => {
            let rows: Vec<Vec<String>> = doc
                .response_time
                .iter()
                .map(|(c, s)| {
                    vec![
                        c.clone(),
                        s.completed.to_string(),
                        format!("{:.2}", s.mean_ms),
                        format!("{:.2}", s.p50_ms),
                        format!("{:.2}", s.p95_ms),
                    ]
                })
                .collect();
            let mut t = format_table(&["Class", "Completed", "Mean (ms)", "p50 (ms)", "p95 (ms)"], &rows);
            t.push('\n');
            let rows: Vec<Vec<String>> = doc
                .utilization
                .iter()
                .map(|(r, u)| vec![r.clone(), format!("{:.2} %", u * 100.0)])
                .collect();
            t.push_str(&format_table(&["Resource", "Utilization"], &rows));
            for w in &doc.warnings {
                t.push_str(&format!("warning: {w}\n"));
            }
            t
        }
    };
    Ok(Outcome::clean(text))
}

fn detect(cfg: &RunConfig) -> Result<Outcome> {
    // validate every path up front
    require_all(&[
        (&cfg.baseline, "baseline"),
        (&cfg.updated, "updated"),
        (&cfg.local_traces, "local-traces"),
        (&cfg.system_traces, "system-traces"),
        (&cfg.model, "model"),
    ])?;
    let inputs = load_inputs(cfg)?;
    let (model, workload) = load_model_and_workload(cfg)?;
    note(cfg, "inputs loaded, running pipeline");
    let verdict = detector::run_pipeline(
        &inputs.baseline,
        &inputs.updated,
        &inputs.local_traces,
        &inputs.system_traces,
        &model,
        &workload,
        &cfg.detector(),
    )?;
    let report = detector::render_report(&verdict, None, cfg.alpha);
    let text = match cfg.format {
        Format::Json => report.json + "\n",
        Format::Table => report.table,
    };
    let code = if verdict.overall_regression {
        EXIT_REGRESSION
    } else {
        EXIT_CLEAN
    };
    Ok(Outcome { text, code })
}

fn load_scenario(path: Option<&Path>) -> Result<ScenarioSpec> {
    match path {
        Some(p) => ScenarioSpec::load(p),
        None => Ok(ScenarioSpec::default_scenario()),
    }
}

fn evaluate(
    cfg: &RunConfig,
    scenario: Option<&Path>,
    rate_factor: Option<f64>,
    intensities: Option<&[f64]>,
) -> Result<Outcome> {
    let spec = load_scenario(scenario)?;
    let scenario = synth::generate_scenario(&spec)?;
    let mut eval = EvaluationConfig::default();
    eval.detector.alpha = cfg.alpha;
    if let Some(s) = cfg.explicit_seed {
        eval.detector.sim.seed = s;
    }
    // simulation flags override the evaluation defaults only when given
    if let Some(d) = cfg.explicit_duration {
        eval.detector.sim.duration_s = d;
    }
    if let Some(w) = cfg.explicit_warmup {
        eval.detector.sim.warmup_s = w;
    }
    if let Some(r) = cfg.explicit_replications {
        eval.detector.sim.replications = r;
    }
    if let Some(f) = rate_factor {
        eval.rate_factor = f;
    }
    if let Some(i) = intensities {
        eval.intensities = i.to_vec();
    }
    note(cfg, format!("evaluating with seed {}", eval.detector.sim.seed));
    let report = synth::evaluate(&scenario, &eval)?;
    let text = match cfg.format {
        Format::Json => report.to_json()? + "\n",
        Format::Table => report.render_table(),
    };
    Ok(Outcome::clean(text))
}

fn generate(
    cfg: &RunConfig,
    scenario: Option<&Path>,
    out_dir: &Path,
    inject: Option<&str>,
    intensity: Option<f64>,
) -> Result<Outcome> {
    let spec = load_scenario(scenario)?;
    let scenario = synth::generate_scenario(&spec)?;
    scenario.write_to_dir(out_dir)?;
    let mut written = vec![
        "scenario.toml",
        "model.toml",
        "workload.toml",
        "baseline.csv",
        "local_traces.csv",
        "system_traces.csv",
    ];
    if let (Some(loc), Some(intensity)) = (inject, intensity) {
        let injection = Injection::new(loc.parse()?, intensity)?;
        let updated = synth::inject_slowdown(&scenario.baseline, &injection, cfg.sim.seed)?;
        synth::write_catalog(&updated, out_dir.join("updated.csv"))?;
        written.push("updated.csv");
    }
    let mut text = String::new();
    for f in written {
        text.push_str(&out_dir.join(f).display().to_string());
        text.push('\n');
    }
    Ok(Outcome::clean(text))
}

fn execute(cli: &Cli) -> Result<Outcome> {
    let env_seed = std::env::var(SEED_ENV).ok();
    let cfg = RunConfig::resolve(&cli.options, env_seed.as_deref())?;
    note(&cfg, format!("seed {}, alpha {}", cfg.sim.seed, cfg.alpha));
    match &cli.command {
        Command::AnalyzeLocal => analyze_local(&cfg),
        Command::Propagate { model_out } => propagate(&cfg, model_out.as_deref()),
        Command::Predict => predict(&cfg),
        Command::Detect => detect(&cfg),
        Command::Evaluate {
            scenario,
            rate_factor,
            intensities,
        } => evaluate(&cfg, scenario.as_deref(), *rate_factor, intensities.as_deref()),
        Command::Generate {
            scenario,
            out_dir,
            inject,
            intensity,
        } => generate(&cfg, scenario.as_deref(), out_dir, inject.as_deref(), *intensity),
    }
}

fn write_output(cfg_out: Option<&Path>, text: &str) -> Result<()> {
    match cfg_out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::io(path, e)),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|()| stdout.flush())
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn report_error(e: &Error) {
    let mut msg = format!("error: {e}");
    let mut source = std::error::Error::source(e);
    while let Some(s) = source {
        // stage errors already include their cause in the message
        if !msg.contains(&s.to_string()) {
            msg.push_str(&format!("\n  caused by: {s}"));
        }
        source = s.source();
    }
    eprintln!("{msg}");
}

/// Parses `args` (program name first) and runs the selected command.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_CLEAN };
        }
    };
    let out = cli.options.out.clone().or_else(|| {
        cli.options
            .config
            .as_deref()
            .and_then(|p| ConfigFile::load(p).ok())
            .and_then(|c| c.out)
    });
    match execute(&cli).and_then(|o| write_output(out.as_deref(), &o.text).map(|()| o.code)) {
        Ok(code) => code,
        Err(e) => {
            report_error(&e);
            EXIT_ERROR
        }
    }
}

/// Entry point for the binary.
pub fn main() -> ExitCode {
    ExitCode::from(run(std::env::args_os()))
}
