//! Builds call graphs from traces, extracts the part above the deviated
//! components and maps it onto the system graph.
//!
//!     cargo run --example dependency_graph

use perf_bridge::graph::{extract_deviation_subgraph, map_to_system_graph, DeviationMap};
use perf_bridge::perfdata::{build_dependency_graph, Caller, ComponentId, MeasurementCatalog, Trace, TraceEvent};
use perf_bridge::stats::{Magnitude, Sample};
use perf_bridge::Result;

fn id(name: &str) -> ComponentId {
    ComponentId::new("B", name).unwrap()
}

fn call(trace: &str, from: Option<&str>, to: &str) -> Result<TraceEvent> {
    let caller = from.map_or(Caller::Root, |f| Caller::Component(id(f)));
    TraceEvent::new(trace, caller, id(to), 1.0)
}

fn main() -> Result<()> {
    // B1 calls B2 once and B3 twice; B2 calls B4
    let mut events = Vec::new();
    for t in ["t1", "t2"] {
        events.push(call(t, None, "B1")?);
        events.push(call(t, Some("B1"), "B2")?);
        events.push(call(t, Some("B1"), "B3")?);
        events.push(call(t, Some("B1"), "B3")?);
        events.push(call(t, Some("B2"), "B4")?);
    }
    let traces = Trace::group(events);

    let mut catalog = MeasurementCatalog::new("baseline");
    for (name, ms) in [("B1", 9.0), ("B2", 3.0), ("B3", 1.5), ("B4", 2.0)] {
        catalog.insert(id(name), Sample::new(vec![ms; 30])?)?;
    }
    let graph = build_dependency_graph(&traces, &catalog)?;
    println!("system graph:");
    for e in graph.edges() {
        println!("  {} -> {}  x{}", e.caller, e.callee, e.calls_per_invocation);
    }

    // B3 and B4 deviated
    let mut deviations = DeviationMap::new();
    for (name, md) in [("B3", 0.5), ("B4", 1.0)] {
        deviations.insert(
            id(name),
            perf_bridge::stats::DeviationReport {
                p_value: 1e-6,
                delta: -1.0,
                magnitude: Magnitude::Large,
                md_ms: md,
                significant: true,
            },
        )?;
    }
    let sub = extract_deviation_subgraph(&graph, &deviations)?;
    println!("\ndeviation subgraph:");
    for n in sub.nodes() {
        println!("  {}{}", n.id, if n.deviated { " (deviated)" } else { "" });
    }

    let mapping = map_to_system_graph(&sub, &graph)?;
    println!("\nmapping:");
    for (l, s) in &mapping.pairs {
        println!("  {l} => {s}");
    }
    println!("\n{}", serde_json::to_string_pretty(&sub.to_document()).expect("graph serializes"));
    Ok(())
}
