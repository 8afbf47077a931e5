//! Propagates a component slowdown to its top-level caller, turns the
//! change into a subsystem relative deviation and updates the model.
//!
//!     cargo run --example propagate_deviations

use std::collections::BTreeMap;

use perf_bridge::graph::{propagate_bottom_up, subsystem_deviation, DeviationMap, GraphMapping, SubsystemDeviation};
use perf_bridge::perfdata::{ComponentId, DependencyGraph, GraphEdge, GraphNode};
use perf_bridge::qpn::{apply_deviation, load_model};
use perf_bridge::stats::{DeviationReport, Magnitude};
use perf_bridge::Result;

fn node(name: &str, ms: f64) -> GraphNode {
    GraphNode {
        id: ComponentId::new("S", name).unwrap(),
        mean_exec_ms: ms,
        is_top_level: false,
        measured: true,
        deviated: false,
    }
}

fn edge(a: &str, b: &str, calls: f64) -> GraphEdge {
    GraphEdge {
        caller: ComponentId::new("S", a).unwrap(),
        callee: ComponentId::new("S", b).unwrap(),
        calls_per_invocation: calls,
    }
}

fn main() -> Result<()> {
    // t reaches d through a (1 x 2 calls) and through b (2 x 1 calls)
    let system = DependencyGraph::new(
        vec![node("t", 10.0), node("a", 2.0), node("b", 2.0), node("d", 1.0)],
        vec![edge("t", "a", 1.0), edge("a", "d", 2.0), edge("t", "b", 2.0), edge("b", "d", 1.0)],
    )?;
    let d = ComponentId::new("S", "d")?;
    let mut deviations = DeviationMap::new();
    deviations.insert(
        d.clone(),
        DeviationReport {
            p_value: 1e-6,
            delta: -1.0,
            magnitude: Magnitude::Large,
            md_ms: 1.0,
            significant: true,
        },
    )?;
    let mapping = GraphMapping {
        pairs: BTreeMap::from([(d.clone(), d)]),
        dropped: Vec::new(),
    };

    let adjusted = propagate_bottom_up(&system, &mapping, &deviations)?;
    for (id, ms) in &adjusted {
        println!("{id}: {:.1} ms -> {ms:.1} ms", system.node(id).map_or(0.0, |n| n.mean_exec_ms));
    }
    for s in subsystem_deviation(&system, &adjusted)? {
        println!("{}: relative deviation {:+.3}", s.subsystem, s.relative_delta);
    }

    // Microservice_B's top-level sum moves from 0.3 s to 0.5 s
    let model = load_model(concat!(env!("CARGO_MANIFEST_DIR"), "/models/two_subsystems.toml"))?;
    let dev = SubsystemDeviation::new("Microservice_B", 300.0, 500.0)?;
    let updated = apply_deviation(&model, &[dev])?;
    for (before, after) in model.queueing_places().zip(updated.queueing_places()) {
        println!(
            "{}: {:?} -> {:?}",
            before.name, before.service_demand_s, after.service_demand_s
        );
    }
    Ok(())
}
