//! Simulates a model file and checks it against closed-form M/M/1 results.
//!
//!     cargo run --release --example qpn_simulate [model.toml]

use perf_bridge::qpn::{load_model, simulate, SimConfig};

fn main() -> perf_bridge::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/models/mm1.toml").to_string());
    let model = load_model(&path)?;
    let config = SimConfig {
        duration_s: 60_000.0,
        warmup_s: 1_000.0,
        replications: 2,
        seed: 1,
    };
    let result = simulate(&model, &config)?;

    let mean_rt_s = result.mean_response_time_ms().unwrap_or(0.0) / 1000.0;
    println!("completed      {}", result.completed);
    println!("mean response  {mean_rt_s:.4} s");
    for (res, u) in &result.utilization {
        println!("utilization    {res}: {u:.4}");
    }
    println!(
        "Little's law   L = {:.4}, lambda * W = {:.4}",
        result.mean_in_system,
        result.observed_arrival_rate_per_s * mean_rt_s
    );

    // closed form for a single exponential FCFS server
    if let (Some(workload), [place]) = (&model.workload, model.queueing_places().collect::<Vec<_>>().as_slice()) {
        let lambda = workload.arrival_rate_per_s;
        let s = place.service_demand_s.values().next().copied().unwrap_or(0.0);
        let rho = lambda * s;
        if rho < 1.0 {
            println!("M/M/1 expects  utilization {rho:.4}, response {:.4} s", s / (1.0 - rho));
        }
    }
    for w in &result.warnings {
        println!("warning: {w}");
    }
    Ok(())
}
