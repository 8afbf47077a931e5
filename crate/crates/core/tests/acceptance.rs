//! Acceptance suite. Runs every criterion at its stated tolerance and prints
//! one PASS/FAIL line each; exits non-zero if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use common::*;
use perf_bridge::graph::{propagate_bottom_up, subsystem_deviation, DeviationMap, GraphMapping, SubsystemDeviation};
use perf_bridge::perfdata::DependencyGraph;
use perf_bridge::qpn::{apply_deviation, load_model, simulate, SimConfig};
use perf_bridge::stats::{cliffs_delta, wilcoxon_rank_sum, Sample};
use perf_bridge::synth::{agreement, evaluate, generate_scenario, EvaluationConfig, EvaluationReport, ScenarioSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn sample(v: &[f64]) -> Sample {
    Sample::new(v.to_vec()).unwrap()
}

fn statistical_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_p = 0.0f64;
    let mut delta_mismatch = 0;
    for _ in 0..200 {
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            let n = rng.random_range(1..=8);
            // coarse values so ties are common
            (0..n).map(|_| f64::from(rng.random_range(0u32..10))).collect()
        };
        let (x, y) = (draw(&mut rng), draw(&mut rng));
        worst_p = worst_p.max((wilcoxon_rank_sum(&sample(&x), &sample(&y)) - permutation_p_value(&x, &y)).abs());
        if cliffs_delta(&sample(&x), &sample(&y)) != pair_count_delta(&x, &y) {
            delta_mismatch += 1;
        }
    }
    let elapsed = start.elapsed();
    check(
        worst_p <= 1e-9 && delta_mismatch == 0 && elapsed < Duration::from_secs(10),
        format!("max |p - oracle| = {worst_p:.1e}, delta mismatches = {delta_mismatch}, {elapsed:.2?}"),
    )
}

fn known_values() -> Outcome {
    let p = wilcoxon_rank_sum(&sample(&[1., 2., 3.]), &sample(&[4., 5., 6.]));
    let d = cliffs_delta(&sample(&[1., 2.]), &sample(&[1., 3.]));
    check(p == 0.1 && d == -0.25, format!("p = {p}, delta = {d}"))
}

fn qpn_analytic_validation() -> Outcome {
    let start = Instant::now();
    let cfg = SimConfig {
        duration_s: 110_000.0,
        warmup_s: 5_000.0,
        replications: 2,
        seed: 2024,
    };
    let mm1 = simulate(&load_model(model_path("mm1.toml")).unwrap(), &cfg).unwrap();
    let rho = mm1.utilization["cpu"];
    let w = mm1.mean_response_time_ms().unwrap() / 1000.0;
    let little = mm1.observed_arrival_rate_per_s * w;
    let little_err = (mm1.mean_in_system - little).abs() / little;

    let tandem = simulate(&load_model(model_path("tandem.toml")).unwrap(), &cfg).unwrap();
    let tandem_err = (tandem.utilization["front"] - 0.8 * 0.5)
        .abs()
        .max((tandem.utilization["back"] - 0.8 * 0.9).abs());
    let elapsed = start.elapsed();
    check(
        mm1.completed >= 100_000
            && (rho - 0.5).abs() <= 0.02
            && (w - 2.0).abs() <= 0.05 * 2.0
            && tandem_err <= 0.02
            && little_err <= 0.02
            && elapsed < Duration::from_secs(60),
        format!(
            "{} completions, utilization {rho:.4}, response {w:.4} s, tandem max error {tandem_err:.4}, \
             Little error {:.3}%, {elapsed:.2?}",
            mm1.completed,
            little_err * 100.0
        ),
    )
}

fn demand_update() -> Outcome {
    // a top-level component at 300 ms whose callee slows down by 200 ms
    let (top, leaf) = (cid("Microservice_B", "f1"), cid("Microservice_B", "f2"));
    let g = DependencyGraph::new(
        vec![node(top.clone(), 300.0), node(leaf.clone(), 50.0)],
        vec![edge(&top, &leaf, 1.0)],
    )
    .unwrap();
    let devs = deviation_map(&[(leaf, 200.0)]);
    let adjusted = propagate_bottom_up(&g, &identity_mapping(&g, &devs), &devs).unwrap();
    let sub = subsystem_deviation(&g, &adjusted).unwrap();
    let rd = sub.first().map_or(f64::NAN, |s| s.relative_delta);

    let model = load_model(model_path("two_subsystems.toml")).unwrap();
    let updated = apply_deviation(&model, &sub).unwrap();
    let demand = updated
        .queueing_places()
        .find(|q| q.subsystem == "Microservice_B")
        .map(|q| q.service_demand_s["browse"])
        .unwrap_or(f64::NAN);
    let direct = SubsystemDeviation::new("Microservice_B", 300.0, 500.0).unwrap();
    check(
        rd == 2.0 / 3.0 && demand == 0.5 && direct.relative_delta == 2.0 / 3.0,
        format!("relative_delta = {rd}, service demand 0.3 s -> {demand} s"),
    )
}

fn grid_cells(report: &EvaluationReport) -> (usize, usize, usize, usize) {
    let (a, n) = agreement(&report.fixed_workload);
    let (b, m) = agreement(&report.various_workloads);
    (a, n, b, m)
}

fn fixed_grid(report: &EvaluationReport, elapsed: Duration) -> Outcome {
    let (a, n, _, _) = grid_cells(report);
    let labels: Vec<&str> = report.fixed_workload.iter().map(|c| c.outcome.label.as_str()).collect();
    check(
        n == 9 && a >= 8 && elapsed < Duration::from_secs(300),
        format!("{a}/{n} cells agree [{}], {elapsed:.2?}", labels.join(" ")),
    )
}

fn variant_grid(report: &EvaluationReport) -> Outcome {
    let (_, _, b, m) = grid_cells(report);
    let deltas: Vec<String> = report
        .various_workloads
        .iter()
        .map(|c| {
            let worst = c.outcome.cpu_abs_delta.values().copied().fold(0.0, f64::max);
            format!("{}/{}:{}|{:.2}", c.site, c.workload, c.outcome.label.as_str(), worst)
        })
        .collect();
    let reported = report.various_workloads.iter().all(|c| !c.outcome.cpu_abs_delta.is_empty());
    check(
        m == 12 && b >= 10 && reported,
        format!("{b}/{m} cells agree; CPU |Δ| per cell: {}", deltas.join(", ")),
    )
}

fn determinism(first: &EvaluationReport, scenario: &perf_bridge::synth::Scenario, config: &EvaluationConfig) -> Outcome {
    let second = evaluate(scenario, config).unwrap();
    let (j1, j2) = (first.to_json().unwrap(), second.to_json().unwrap());
    let (t1, t2) = (first.render_table(), second.render_table());
    check(
        j1 == j2 && t1 == t2,
        format!("JSON {} bytes identical: {}, table identical: {}", j1.len(), j1 == j2, t1 == t2),
    )
}

fn propagation_properties() -> Outcome {
    // two paths t -> a -> d (1 x 2) and t -> b -> d (2 x 1)
    let (t, a, b, d) = (cid("S", "t"), cid("S", "a"), cid("S", "b"), cid("S", "d"));
    let g = DependencyGraph::new(
        vec![node(t.clone(), 10.0), node(a.clone(), 2.0), node(b.clone(), 2.0), node(d.clone(), 1.0)],
        vec![edge(&t, &a, 1.0), edge(&a, &d, 2.0), edge(&t, &b, 2.0), edge(&b, &d, 1.0)],
    )
    .unwrap();
    let run = |devs: &DeviationMap| propagate_bottom_up(&g, &identity_mapping(&g, devs), devs).unwrap();
    let path = run(&deviation_map(&[(d.clone(), 1.0)]))[&t] - 10.0;

    let zero = propagate_bottom_up(&g, &GraphMapping::default(), &DeviationMap::new()).unwrap();
    let no_op = zero == BTreeMap::from([(t.clone(), 10.0)]) && subsystem_deviation(&g, &zero).unwrap().is_empty();

    let left = run(&deviation_map(&[(a.clone(), 1.5)]))[&t] - 10.0;
    let right = run(&deviation_map(&[(d.clone(), 0.25), (b.clone(), 3.0)]))[&t] - 10.0;
    let union = run(&deviation_map(&[(a, 1.5), (d, 0.25), (b, 3.0)]))[&t] - 10.0;
    let linear = (union - (left + right)).abs() <= 1e-12;
    check(
        path == 4.0 && no_op && linear,
        format!("path-product adjustment = {path:+}, zero map no-op = {no_op}, linearity = {linear}"),
    )
}

fn main() {
    let mut results: Vec<(u8, &str, Outcome)> = vec![
        (1, "statistical oracle equivalence", statistical_oracle_equivalence()),
        (2, "known values", known_values()),
        (3, "QPN analytic validation", qpn_analytic_validation()),
        (4, "subsystem demand update", demand_update()),
    ];

    let scenario = generate_scenario(&ScenarioSpec::default_scenario()).unwrap();
    let config = EvaluationConfig::default();
    let start = Instant::now();
    let report = evaluate(&scenario, &config).unwrap();
    let elapsed = start.elapsed();
    results.push((5, "fixed-workload grid", fixed_grid(&report, elapsed)));
    results.push((6, "various-workload grid", variant_grid(&report)));
    results.push((7, "determinism", determinism(&report, &scenario, &config)));
    results.push((8, "propagation properties", propagation_properties()));

    println!();
    let mut failed = 0;
    for (n, name, outcome) in &results {
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {n} {tag}  {name}: {detail}");
    }
    println!("\n{}/{} criteria passed\n", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
