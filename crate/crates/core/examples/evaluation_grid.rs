//! Runs the fixed-workload and various-workload grids on the shipped
//! scenario and prints both tables.
//!
//!     cargo run --release --example evaluation_grid [seed]

use perf_bridge::synth::{evaluate, generate_scenario, EvaluationConfig, ScenarioSpec};

fn main() -> perf_bridge::Result<()> {
    let scenario = generate_scenario(&ScenarioSpec::default_scenario())?;
    let mut config = EvaluationConfig::default();
    if let Some(seed) = std::env::args().nth(1).and_then(|s| s.parse().ok()) {
        config.detector.sim.seed = seed;
    }

    for (s, rho) in scenario.utilization(&scenario.spec.workload) {
        println!("{s}: utilization {rho:.3}");
    }
    let [l1, l2, l3] = scenario.select_locations()?;
    println!("sites: L1 = {l1}, L2 = {l2}, L3 = {l3}\n");

    let report = evaluate(&scenario, &config)?;
    print!("{}", report.render_table());
    Ok(())
}
