//! Injects a slowdown into a synthetic two-subsystem system, runs the
//! detector and checks its verdict against the end-to-end oracle.
//!
//!     cargo run --release --example detect_regression [intensity]

use perf_bridge::detector::{classify_outcome, render_report, run_pipeline, DetectorConfig};
use perf_bridge::synth::{generate_scenario, inject_slowdown, oracle_end_to_end, Injection, ScenarioSpec};

fn main() -> perf_bridge::Result<()> {
    let intensity: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2.5);
    let scenario = generate_scenario(&ScenarioSpec::two_subsystem_example())?;
    let [location, _, _] = scenario.select_locations()?;
    println!("slowing {location} by {:.0}%\n", intensity * 100.0);

    let injection = Injection::new(location, intensity)?;
    let updated = inject_slowdown(&scenario.baseline, &injection, 7)?;
    let mut config = DetectorConfig::default();
    config.sim.duration_s = 1_500.0;
    config.sim.warmup_s = 100.0;

    let workload = &scenario.spec.workload;
    let predicted = run_pipeline(
        &scenario.baseline,
        &updated,
        &scenario.local_traces,
        &scenario.system_traces,
        &scenario.model,
        workload,
        &config,
    )?;
    let oracle = oracle_end_to_end(&scenario, &injection, workload, &config)?;
    let outcome = classify_outcome(&predicted, &oracle);

    for s in &predicted.subsystem_deviations {
        println!("{}: service demand x{:.3}", s.subsystem, 1.0 + s.relative_delta);
    }
    println!(
        "oracle response time MPD {:+.2} ms ({})\n",
        oracle.response_time.mpd_ms, oracle.response_time.magnitude
    );
    print!("{}", render_report(&predicted, Some(&outcome), config.alpha).table);
    Ok(())
}
