mod common;

use perf_bridge::detector::{run_pipeline, DetectorConfig};
use perf_bridge::perfdata::{load_measurements, load_traces};
use perf_bridge::qpn::{load_model, WorkloadSpec};
use perf_bridge::synth::{
    generate_scenario, inject_slowdown, oracle_end_to_end, workload_variants, Injection, ScenarioSpec,
};
use perf_bridge::Error;
use proptest::prelude::*;

fn quick(seed: u64) -> DetectorConfig {
    let mut c = DetectorConfig::default();
    c.sim.duration_s = 1_000.0;
    c.sim.warmup_s = 100.0;
    c.sim.replications = 1;
    c.sim.seed = seed;
    c
}

#[test]
fn two_subsystem_spec_has_seven_components() {
    let sc = generate_scenario(&ScenarioSpec::two_subsystem_example()).unwrap();
    assert_eq!(sc.system_graph.len(), 7);
    assert_eq!(sc.model.queueing_places().count(), 2);
    assert_eq!(generate_scenario(&ScenarioSpec::two_subsystem_example()).unwrap(), sc);
}

#[test]
fn saturating_spec_is_rejected() {
    let mut spec = ScenarioSpec::two_subsystem_example();
    let sc = generate_scenario(&spec).unwrap();
    let busiest = sc.utilization(&spec.workload).values().copied().fold(0.0, f64::max);
    spec.workload.arrival_rate_per_s *= 1.2 / busiest;
    match generate_scenario(&spec) {
        Err(Error::Unstable { rho, .. }) => assert!((rho - 1.2).abs() < 1e-9),
        other => panic!("expected an unstable workload, got {other:?}"),
    }
}

#[test]
fn artifacts_survive_a_round_trip_through_files() {
    let sc = generate_scenario(&ScenarioSpec::default_scenario()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    sc.write_to_dir(dir.path()).unwrap();
    let p = |f: &str| dir.path().join(f);
    assert_eq!(load_measurements(p("baseline.csv")).unwrap(), sc.baseline);
    assert_eq!(load_traces(p("local_traces.csv")).unwrap(), sc.local_traces);
    assert_eq!(load_traces(p("system_traces.csv")).unwrap(), sc.system_traces);
    assert_eq!(load_model(p("model.toml")).unwrap(), sc.model);
    assert_eq!(WorkloadSpec::load(p("workload.toml")).unwrap(), sc.spec.workload);
    assert_eq!(ScenarioSpec::load(p("scenario.toml")).unwrap(), sc.spec);
}

#[test]
fn injection_examples() {
    let sc = generate_scenario(&ScenarioSpec::default_scenario()).unwrap();
    let id = sc.components()[3].clone();
    let before = sc.baseline.get(&id).unwrap().mean();
    for (intensity, factor) in [(2.5, 3.5), (0.1, 1.1), (0.0, 1.0)] {
        let upd = inject_slowdown(&sc.baseline, &Injection::new(id.clone(), intensity).unwrap(), 1).unwrap();
        let after = upd.get(&id).unwrap().mean();
        assert!((after / before - factor).abs() < 0.05 * factor, "{intensity}: {after} vs {before}");
    }
    let unknown = Injection::new(perf_bridge::perfdata::ComponentId::new("nope", "x").unwrap(), 0.5).unwrap();
    assert!(inject_slowdown(&sc.baseline, &unknown, 1).is_err());
    assert!(Injection::new(id, -0.5).is_err());
}

#[test]
fn variant_examples() {
    let mut base = ScenarioSpec::default_scenario().workload;
    base.arrival_rate_per_s = 50.0;
    let v = workload_variants(&base).unwrap();
    assert_eq!(v.len(), 3);
    assert_eq!(v[0].arrival_rate_per_s, 75.0);
    let mix = |w: &WorkloadSpec| w.request_classes.iter().map(|c| c.mix_probability).collect::<Vec<_>>();
    assert_eq!(mix(&base), [0.6, 0.4]);
    assert_eq!(mix(&v[1]), [0.4, 0.6]);
    assert_eq!(v[2].arrival_rate_per_s, 75.0);
    assert_eq!(mix(&v[2]), mix(&v[1]));

    let sc = generate_scenario(&ScenarioSpec::default_scenario()).unwrap();
    let err = sc.workload_variants(4.0).unwrap_err();
    assert!(err.to_string().contains("smaller rate factor"), "{err}");
}

#[test]
fn oracle_sanity() {
    let sc = generate_scenario(&ScenarioSpec::default_scenario()).unwrap();
    let [l1, _, _] = sc.select_locations().unwrap();
    let w = &sc.spec.workload;
    let none = oracle_end_to_end(&sc, &Injection::new(l1.clone(), 0.0).unwrap(), w, &quick(1)).unwrap();
    assert!(!none.overall_regression);
    let heavy = Injection::new(l1.clone(), 2.5).unwrap();
    let big = oracle_end_to_end(&sc, &heavy, w, &quick(1)).unwrap();
    assert!(big.overall_regression);
    // twice the arrivals, twice the extra busy time
    let mut doubled = w.clone();
    doubled.arrival_rate_per_s *= 2.0;
    let mid = Injection::new(l1.clone(), 0.5).unwrap();
    let at_base = oracle_end_to_end(&sc, &mid, w, &quick(2)).unwrap();
    let at_double = oracle_end_to_end(&sc, &mid, &doubled, &quick(2)).unwrap();
    let sub = &l1.subsystem;
    assert!(
        at_double.cpu[sub].mpd_percent > at_base.cpu[sub].mpd_percent,
        "{} vs {}",
        at_double.cpu[sub].mpd_percent,
        at_base.cpu[sub].mpd_percent
    );
}

#[test]
fn detector_and_oracle_agree_on_extremes() {
    let sc = generate_scenario(&ScenarioSpec::default_scenario()).unwrap();
    let [l1, _, _] = sc.select_locations().unwrap();
    let w = &sc.spec.workload;
    for seed in 0..5 {
        let cfg = quick(100 + seed);
        for (intensity, expected) in [(0.0, false), (2.5, true)] {
            let inj = Injection::new(l1.clone(), intensity).unwrap();
            let upd = inject_slowdown(&sc.baseline, &inj, seed).unwrap();
            let predicted = run_pipeline(&sc.baseline, &upd, &sc.local_traces, &sc.system_traces, &sc.model, w, &cfg)
                .unwrap()
                .overall_regression;
            let oracle = oracle_end_to_end(&sc, &inj, w, &cfg).unwrap().overall_regression;
            assert_eq!((predicted, oracle), (expected, expected), "seed {seed}, intensity {intensity}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn generated_scenarios_are_valid(seed in any::<u64>()) {
        let mut spec = ScenarioSpec::default_scenario();
        spec.seed = seed;
        // generous capacity so any random draw stays stable
        spec.workload.arrival_rate_per_s = 1.0;
        let sc = generate_scenario(&spec).unwrap();
        prop_assert!(sc.model.validate().is_ok());
        prop_assert_eq!(sc.system_graph.len(), sc.components().len());
        // the model demand of each subsystem is the sum of its entry means
        for q in sc.model.queueing_places() {
            let sum_ms: f64 = sc.system_graph.top_level().filter(|n| n.id.subsystem == q.subsystem).map(|n| n.mean_exec_ms).sum();
            for &d in q.service_demand_s.values() {
                prop_assert!((d * 1000.0 - sum_ms).abs() <= 1e-9 * sum_ms.max(1.0));
            }
        }
    }

    #[test]
    fn injection_touches_exactly_one_mean(seed in any::<u64>(), pick in 0usize..12, intensity in 0.1f64..3.0) {
        let sc = generate_scenario(&ScenarioSpec::default_scenario()).unwrap();
        let id = sc.components()[pick % sc.components().len()].clone();
        let upd = inject_slowdown(&sc.baseline, &Injection::new(id.clone(), intensity).unwrap(), seed).unwrap();
        for (c, s) in sc.baseline.iter() {
            let u = upd.get(c).unwrap();
            prop_assert_eq!(u.len(), s.len());
            let ratio = u.mean() / s.mean();
            let expected = if *c == id { 1.0 + intensity } else { 1.0 };
            prop_assert!((ratio - expected).abs() < 0.06 * expected, "{c}: ratio {ratio}");
        }
    }
}
