//! Shows how the same injected slowdown plays out under the workload
//! variants: higher intensity, swapped request mix, and both.
//!
//!     cargo run --release --example workload_variants

use perf_bridge::detector::DetectorConfig;
use perf_bridge::synth::{generate_scenario, oracle_end_to_end, Injection, ScenarioSpec, DEFAULT_RATE_FACTOR};

fn main() -> perf_bridge::Result<()> {
    let scenario = generate_scenario(&ScenarioSpec::default_scenario())?;
    let [l1, _, _] = scenario.select_locations()?;
    let injection = Injection::new(l1.clone(), 0.5)?;
    let mut config = DetectorConfig::default();
    config.sim.duration_s = 1_500.0;
    config.sim.warmup_s = 100.0;

    let mut variants = vec![("original".to_string(), scenario.spec.workload.clone())];
    variants.extend(scenario.workload_variants(DEFAULT_RATE_FACTOR)?);

    println!("oracle verdicts for a 50% slowdown of {l1}\n");
    println!("{:<28} {:>8} {:>12} {:>10}  CPU MPD", "workload", "rate/s", "RT MPD (ms)", "magnitude");
    for (label, workload) in &variants {
        let v = oracle_end_to_end(&scenario, &injection, workload, &config)?;
        let cpu: Vec<String> = v
            .cpu
            .iter()
            .map(|(r, c)| format!("{r} {:+.2}%", c.mpd_percent))
            .collect();
        println!(
            "{label:<28} {:>8.2} {:>+12.2} {:>10}  {}",
            workload.arrival_rate_per_s,
            v.response_time.mpd_ms,
            v.response_time.magnitude.to_string(),
            cpu.join(", ")
        );
    }
    Ok(())
}
