mod common;

use common::model_path;
use perf_bridge::graph::SubsystemDeviation;
use perf_bridge::qpn::{apply_deviation, load_model, simulate, QpnModel, SimConfig, WorkloadSpec};
use proptest::prelude::*;

fn single_station(rate: f64, demand: f64, servers: u32, discipline: &str, distribution: &str) -> QpnModel {
    QpnModel::from_toml_str(&format!(
        r#"
colors = ["req"]
[[places]]
kind = "ordinary"
name = "in"
role = "source"
[[places]]
kind = "queueing"
name = "cpu"
subsystem = "S"
servers = {servers}
discipline = "{discipline}"
distribution = "{distribution}"
service_demand_s = {{ req = {demand} }}
[[places]]
kind = "ordinary"
name = "out"
role = "sink"
[[transitions]]
name = "enter"
inputs = [{{ place = "in", color = "req" }}]
modes = [{{ probability = 1.0, outputs = [{{ place = "cpu", color = "req" }}] }}]
[[transitions]]
name = "leave"
inputs = [{{ place = "cpu", color = "req" }}]
modes = [{{ probability = 1.0, outputs = [{{ place = "out", color = "req" }}] }}]
[workload]
arrival_rate_per_s = {rate}
request_classes = [{{ name = "req", mix_probability = 1.0 }}]
"#
    ))
    .unwrap()
}

fn long_run(seed: u64) -> SimConfig {
    SimConfig {
        duration_s: 110_000.0,
        warmup_s: 5_000.0,
        replications: 2,
        seed,
    }
}

fn short_run(seed: u64) -> SimConfig {
    SimConfig {
        duration_s: 3_000.0,
        warmup_s: 100.0,
        replications: 1,
        seed,
    }
}

fn mean_s(r: &perf_bridge::qpn::PredictionResult) -> f64 {
    r.mean_response_time_ms().unwrap() / 1000.0
}

#[test]
fn shipped_models_load() {
    let m = load_model(model_path("two_subsystems.toml")).unwrap();
    assert_eq!(m.queueing_places().count(), 2);
    assert_eq!(load_model(model_path("mm1.toml")).unwrap().queueing_places().count(), 1);
    assert_eq!(load_model(model_path("tandem.toml")).unwrap().queueing_places().count(), 2);
}

#[test]
fn mm1_matches_closed_form() {
    let r = simulate(&load_model(model_path("mm1.toml")).unwrap(), &long_run(11)).unwrap();
    assert!(r.completed >= 100_000, "{}", r.completed);
    assert!((r.utilization["cpu"] - 0.5).abs() <= 0.02);
    assert!((mean_s(&r) - 2.0).abs() <= 0.1, "{}", mean_s(&r));
    let little = r.observed_arrival_rate_per_s * mean_s(&r);
    assert!((r.mean_in_system - little).abs() <= 0.02 * little);
}

#[test]
fn processor_sharing_mm1_has_the_same_mean() {
    let r = simulate(&single_station(0.5, 1.0, 1, "ps", "exponential"), &long_run(12)).unwrap();
    assert!((r.utilization["cpu"] - 0.5).abs() <= 0.02);
    assert!((mean_s(&r) - 2.0).abs() <= 0.1, "{}", mean_s(&r));
}

#[test]
fn md1_matches_pollaczek_khinchine() {
    // W = s + rho s / (2 (1 - rho))
    let (lambda, s) = (0.6, 1.0);
    let rho: f64 = lambda * s;
    let expected = s + rho * s / (2.0 * (1.0 - rho));
    let r = simulate(&single_station(lambda, s, 1, "fcfs", "deterministic"), &long_run(13)).unwrap();
    assert!((mean_s(&r) - expected).abs() <= 0.03 * expected, "{} vs {expected}", mean_s(&r));
}

#[test]
fn tandem_utilizations_follow_the_utilization_law() {
    let m = load_model(model_path("tandem.toml")).unwrap();
    let r = simulate(&m, &long_run(14)).unwrap();
    assert!((r.utilization["front"] - 0.8 * 0.5).abs() <= 0.02);
    assert!((r.utilization["back"] - 0.8 * 0.9).abs() <= 0.02);
}

#[test]
fn multi_server_utilization_is_per_server() {
    let r = simulate(&single_station(1.5, 1.0, 2, "fcfs", "exponential"), &long_run(15)).unwrap();
    assert!((r.utilization["cpu"] - 0.75).abs() <= 0.02);
}

#[test]
fn branching_model_follows_visit_ratios() {
    // A sees every request, B 70% of them
    let m = load_model(model_path("two_subsystems.toml")).unwrap();
    let r = simulate(&m, &long_run(16)).unwrap();
    assert!((r.utilization["Microservice_A"] - 1.5 * 0.2).abs() <= 0.02);
    assert!((r.utilization["Microservice_B"] - 1.5 * 0.7 * 0.3).abs() <= 0.02);
}

#[test]
fn no_arrivals_means_no_samples() {
    let r = simulate(&single_station(1e-9, 1.0, 1, "fcfs", "exponential"), &short_run(1)).unwrap();
    assert_eq!(r.utilization["cpu"], 0.0);
    assert!(r.pooled_response_times().is_empty());
}

#[test]
fn unstable_load_runs_with_a_warning() {
    let r = simulate(&single_station(1.2, 1.0, 1, "fcfs", "exponential"), &short_run(1)).unwrap();
    assert!(!r.warnings.is_empty());
    assert!(r.utilization["cpu"] <= 1.0);
}

#[test]
fn demand_update_from_three_to_five_tenths() {
    let m = load_model(model_path("two_subsystems.toml")).unwrap();
    let dev = SubsystemDeviation::new("Microservice_B", 300.0, 500.0).unwrap();
    assert_eq!(dev.relative_delta, 2.0 / 3.0);
    let u = apply_deviation(&m, &[dev]).unwrap();
    let b = u.queueing_places().find(|q| q.subsystem == "Microservice_B").unwrap();
    assert_eq!(b.service_demand_s["browse"], 0.5);
    let a = u.queueing_places().find(|q| q.subsystem == "Microservice_A").unwrap();
    assert_eq!(a.service_demand_s["browse"], 0.2);
}

#[test]
fn workload_file_round_trip() {
    let w = WorkloadSpec::from_toml_str(
        "arrival_rate_per_s = 50.0\n[[request_classes]]\nname = \"a\"\nmix_probability = 0.6\n\
         [[request_classes]]\nname = \"b\"\nmix_probability = 0.4\n",
    )
    .unwrap();
    assert_eq!(WorkloadSpec::from_toml_str(&w.to_toml_string().unwrap()).unwrap(), w);
    assert!(WorkloadSpec::from_toml_str("arrival_rate_per_s = 1.0\nrequest_classes = [{ name = \"a\", mix_probability = 0.5 }]").is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn simulation_is_deterministic_and_conserves_requests(
        rate in 0.05f64..2.0,
        demand in 0.05f64..1.0,
        ps in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let m = single_station(rate, demand, 1, if ps { "ps" } else { "fcfs" }, "exponential");
        let cfg = SimConfig { duration_s: 400.0, warmup_s: 20.0, replications: 2, seed };
        let a = simulate(&m, &cfg).unwrap();
        prop_assert_eq!(&a, &simulate(&m, &cfg).unwrap());
        prop_assert_eq!(a.arrived, a.completed + a.in_system_at_end);
        for &u in a.utilization.values() {
            prop_assert!((0.0..=1.0).contains(&u));
        }
    }

    #[test]
    fn slower_service_is_never_faster(rate in 0.1f64..0.5, demand in 0.1f64..1.0, seed in any::<u64>()) {
        // stays below saturation after scaling by 1.5
        let m = single_station(rate, demand, 1, "fcfs", "exponential");
        let cfg = SimConfig { duration_s: 4_000.0, warmup_s: 100.0, replications: 1, seed };
        let slow = apply_deviation(&m, &[SubsystemDeviation::new("S", 2.0, 3.0).unwrap()]).unwrap();
        let (a, b) = (simulate(&m, &cfg).unwrap(), simulate(&slow, &cfg).unwrap());
        prop_assert!(mean_s(&b) >= mean_s(&a));
    }
}
