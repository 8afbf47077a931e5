//! Compares component timings of two versions and lists the components
//! whose change is both significant and non-negligible.
//!
//!     cargo run --example local_deviation [baseline.csv updated.csv]

use perf_bridge::graph::analyze_local;
use perf_bridge::perfdata::{load_measurements, ComponentId, MeasurementCatalog};
use perf_bridge::stats::{Sample, DEFAULT_ALPHA};

// 30 iterations around `mean`, deterministic jitter
fn timings(mean: f64) -> perf_bridge::Result<Sample> {
    Sample::new((0..30).map(|i| mean * (1.0 + 0.02 * ((i * 7 % 11) as f64 - 5.0) / 5.0)).collect())
}

fn demo_catalogs() -> perf_bridge::Result<(MeasurementCatalog, MeasurementCatalog)> {
    let mut base = MeasurementCatalog::new("baseline");
    let mut upd = MeasurementCatalog::new("updated");
    for (comp, before, after) in [("login", 4.0, 4.0), ("hash", 1.2, 1.9), ("audit", 0.8, 0.79)] {
        let id = ComponentId::new("Auth", comp)?;
        base.insert(id.clone(), timings(before)?)?;
        upd.insert(id, timings(after)?)?;
    }
    Ok((base, upd))
}

fn main() -> perf_bridge::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (base, upd) = match args.as_slice() {
        [b, u] => (load_measurements(b)?, load_measurements(u)?),
        _ => demo_catalogs()?,
    };

    let local = analyze_local(&base, &upd, DEFAULT_ALPHA)?;
    println!("{:<20} {:>9} {:>10} {:>7}  magnitude", "component", "MD (ms)", "p", "delta");
    for (id, r) in &local.reports {
        let mark = if r.significant { "*" } else { " " };
        println!(
            "{mark}{:<19} {:>+9.3} {:>10.2e} {:>+7.3}  {}",
            id.to_string(),
            r.md_ms,
            r.p_value,
            r.delta,
            r.magnitude
        );
    }
    println!("\n{} significant deviation(s)", local.deviations.len());
    Ok(())
}
