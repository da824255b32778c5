use mirage_simnet::{
    run, scenario_address_exhaustion, scenario_bandwidth_exhaustion, scenario_compromised_routers, RunReport, SimRun,
    SimScenario,
};

fn flows_only(capacity: f64, flows: u32, mirage: bool) -> SimRun {
    let mut cfg = SimRun::new(SimScenario::BandwidthExhaustion);
    cfg.simnet.link_capacity_bps = capacity;
    cfg.simnet.mirage = mirage;
    cfg.simnet.bandwidth.benign_flows = flows;
    cfg.simnet.bandwidth.attack_multiplier = 0.0;
    cfg
}

fn mean_bps(r: &RunReport, entity: &str, from: f64, to: f64) -> f64 {
    r.sum(entity, "throughput_bps", from, to) / (to - from)
}

#[test]
fn empty_scenario_reports_nothing() {
    let r = run(&SimRun::new(SimScenario::Empty), 9).unwrap();
    assert!(r.records.is_empty());
    assert_eq!(r.to_csv(), "time_s,entity_id,metric,value\n");
}

#[test]
fn same_seed_same_bytes() {
    for scenario in [
        SimScenario::BandwidthExhaustion,
        SimScenario::AddressExhaustion,
        SimScenario::CompromisedRouters,
    ] {
        let mut cfg = SimRun::new(scenario);
        cfg.duration_s = 60.0;
        let a = run(&cfg, 4).unwrap().to_csv();
        let b = run(&cfg, 4).unwrap().to_csv();
        assert_eq!(a, b, "{scenario:?}");
        assert_ne!(a, run(&cfg, 5).unwrap().to_csv(), "{scenario:?}");
    }
}

#[test]
fn lone_tcp_flow_fills_the_link() {
    // Hand model: the 64-packet buffer is far above the bandwidth-delay
    // product (about 5 packets at 1 Mbps and 40-60 ms), so halving the window
    // never drains the queue and the link stays busy.
    for mirage in [false, true] {
        let r = run(&flows_only(1e6, 1, mirage), 1).unwrap();
        let u = mean_bps(&r, "benign", 30.0, 300.0) / 1e6;
        assert!((0.85..=1.0).contains(&u), "mirage={mirage} utilization {u}");
    }
}

#[test]
fn two_tcp_flows_share_within_60_40() {
    let r = run(&flows_only(1e6, 2, false), 2).unwrap();
    let a = mean_bps(&r, "benign-0", 30.0, 300.0);
    let b = mean_bps(&r, "benign-1", 30.0, 300.0);
    let share = a / (a + b);
    assert!((0.4..=0.6).contains(&share), "share {share}");
}

#[test]
fn delivered_bytes_bounded_by_capacity() {
    for mirage in [false, true] {
        let r = scenario_bandwidth_exhaustion(1.3, mirage, 3).unwrap();
        let delivered: f64 = r.records.iter().map(|x| x.value).sum::<f64>() / 8.0;
        let cap = 10e6 / 8.0 * 300.0;
        assert!(delivered <= cap + 1000.0, "{delivered} > {cap}");
    }
}

#[test]
fn fifo_half_load_attack_leaves_room() {
    let r = scenario_bandwidth_exhaustion(0.5, false, 1).unwrap();
    assert!(r.summary["benign_fraction_of_capacity"] >= 0.45, "{:?}", r.summary);
}

#[test]
fn no_attack_matches_baseline_in_both_modes() {
    for mirage in [false, true] {
        let r = scenario_bandwidth_exhaustion(0.0, mirage, 1).unwrap();
        assert!(r.summary["benign_fraction_of_capacity"] > 0.95, "{:?}", r.summary);
        assert_eq!(r.summary["attack_bps"], 0.0);
    }
}

#[test]
fn fully_compromised_honest_traffic_gets_nothing() {
    let r = scenario_compromised_routers(1.0, 1.0, 1.0, 1).unwrap();
    assert!(r.summary["honest_share"] < 0.01, "{:?}", r.summary);
    assert_eq!(r.summary["disclosed"], r.summary["honest_held"]);
}

#[test]
fn summary_recomputable_from_records() {
    let r = scenario_compromised_routers(0.5, 1.0, 1.0, 2).unwrap();
    let h = r.sum("honest", "throughput_bps", 30.0, 300.0);
    let a = r.sum("attacker", "throughput_bps", 30.0, 300.0);
    assert!((h / (h + a) - r.summary["honest_share"]).abs() < 1e-12);
    let last = r
        .records
        .iter()
        .rev()
        .find(|x| x.entity_id == "honest" && x.metric == "held_suffixes");
    assert_eq!(last.unwrap().value, r.summary["honest_held"]);
}

#[test]
fn unconditional_grants_scale_with_processes_until_saturation() {
    let ratio = |p| scenario_address_exhaustion(1, p, false, 1).unwrap().summary["ratio"];
    let (r1, r2, r400, r1000) = (ratio(1), ratio(2), ratio(400), ratio(1000));
    assert!((r2 / r1 - 2.0).abs() < 0.1, "r1={r1} r2={r2}");
    // Saturated machine: cpu/B = 1000 grants/s against the lone honest loop's
    // 1/(B/cpu + rtt) = 1/0.021 s, a plateau at 21.
    assert!((r1000 / 21.0 - 1.0).abs() < 0.03, "r1000={r1000}");
    assert!((r400 / r1000 - 1.0).abs() < 0.05, "r400={r400} r1000={r1000}");
}

#[test]
fn holdings_reset_each_interval() {
    let r = scenario_address_exhaustion(2, 4, true, 1).unwrap();
    let times: Vec<f64> = r
        .records
        .iter()
        .filter(|x| x.entity_id == "honest-0")
        .map(|x| x.time_s)
        .collect();
    assert_eq!(times, [300.0, 600.0, 900.0, 1200.0]);
    let honest = r.sum("honest", "held_suffixes", 0.0, 1e9);
    assert_eq!(honest, r.summary["honest_grants"]);
    assert!(r.summary["granted"] <= 4.0 * 1200.0 + 2.0);
}
