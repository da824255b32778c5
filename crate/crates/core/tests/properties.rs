mod common;

use std::collections::HashSet;
use std::sync::Arc;

use common::pushback_oracle::{exhaustive_pushback, random_topology};
use mirage_core::analysis::{
    attack_cost, brute_force_success, default_share_grid, expected_attempts, fair_share, scan_fraction, CostModel,
};
use mirage_core::hop::{active_set, HopConfig, Prefix, Suffix};
use mirage_core::puzzle::{make_puzzle, solve_puzzle, AllocatorState, PendingSolution};
use mirage_core::router::{AclTable, DrrConfig, DrrScheduler, FilterDecision, Packet, SharedAcl};
use mirage_core::topology::{compute_pushback, parse_topology};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PFX: u128 = 0x2001_0db8_0000_0042;

fn hop64(key: u8, n: usize) -> HopConfig {
    HopConfig::new([key; 16], Prefix::new(PFX, 64).unwrap(), n).unwrap()
}

#[test]
fn random_guessing_hits_at_expected_rate() {
    // 24-bit suffix space, 4096 active entries, 200k blind guesses.
    let cfg = HopConfig::new([0x5a; 16], Prefix::new(1, 104).unwrap(), 4096).unwrap();
    let set = active_set(&cfg, 77);
    let p = set.len() as f64 / 2f64.powi(24);
    let q = 200_000u64;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let hits = (0..q)
        .filter(|_| set.contains(Suffix(u128::from(rng.random::<u32>() & 0xff_ffff))))
        .count() as f64;
    let mean = q as f64 * p;
    let sigma = (q as f64 * p * (1.0 - p)).sqrt();
    assert!(
        (hits - mean).abs() <= 3.0 * sigma,
        "hits {hits} mean {mean} sigma {sigma}"
    );
}

#[test]
fn mean_attempts_at_difficulty_8() {
    let h = hop64(1, 1000);
    let attempts: Vec<u64> = (0..1000)
        .map(|k| {
            let (pz, _) = make_puzzle(&h, k, 0, 8, 50_000 + k).unwrap();
            solve_puzzle(&pz).unwrap().attempts
        })
        .collect();
    let mean = attempts.iter().sum::<u64>() as f64 / 1000.0;
    let want = expected_attempts(8);
    assert!((mean - want).abs() <= 0.05 * want, "mean {mean}");
    assert!(attempts.iter().all(|&a| (1..=256).contains(&a)));
}

#[test]
fn solver_never_returns_a_wrong_suffix() {
    let h = hop64(2, 64);
    for k in 0..300u64 {
        let d = (k % 9) as u8;
        let (pz, oracle) = make_puzzle(&h, k % 64, k / 64, d, k).unwrap();
        let sol = solve_puzzle(&pz).unwrap();
        assert_eq!(sol.suffix, oracle.suffix);
        assert!(sol.attempts <= 1 << d);
    }
}

#[test]
fn allocator_shares_track_compute() {
    // Two populations submit equal-work solutions as Poisson streams with
    // rates 1 and 3; the bucket releases fewer grants than are requested.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rates = [4.0, 12.0];
    let mut next = [0.0f64; 2];
    for (k, r) in rates.iter().enumerate() {
        next[k] = -rng.random::<f64>().ln() / r;
    }
    let mut st = AllocatorState::new(2.0, 5.0, 0.0);
    let mut grants = [0u64; 2];
    let mut id = 0u64;
    let dt = 0.25;
    for step in 1..=8000 {
        let now = step as f64 * dt;
        let mut subs = Vec::new();
        for k in 0..2 {
            while next[k] <= now {
                subs.push(PendingSolution {
                    requester: id * 2 + k as u64,
                    difficulty: 10,
                    arrival: next[k],
                    valid: true,
                });
                id += 1;
                next[k] += -rng.random::<f64>().ln() / rates[k];
            }
        }
        for g in st.step(now, subs).grants {
            grants[(g.requester % 2) as usize] += 1;
        }
    }
    let share = grants[0] as f64 / (grants[0] + grants[1]) as f64;
    assert!((share - 0.25).abs() <= 0.1 * 0.25 + 0.01, "share {share}");
    // Conservation: 2000 s at 5 grants/s plus one bucket.
    assert!(st.granted() as f64 <= 2000.0 * 5.0 + 2.0);
}

fn backlogged_shares(weights: &[u32], size: u32, dequeues: usize) -> Vec<f64> {
    let mut s = DrrScheduler::new(DrrConfig {
        queue_limit_packets: 4,
        ..Default::default()
    });
    for (k, &w) in weights.iter().enumerate() {
        s.set_weight(Suffix(k as u128), w);
    }
    let refill = |s: &mut DrrScheduler| {
        for k in 0..weights.len() {
            while s.queue_len(Suffix(k as u128)) < 4 {
                s.enqueue(Packet::new(0, PFX, Suffix(k as u128), size, k as u64, 0.0).unwrap());
            }
        }
    };
    let mut bytes = vec![0u64; weights.len()];
    for _ in 0..dequeues {
        refill(&mut s);
        let p = s.dequeue().unwrap();
        bytes[p.dst_suffix.0 as usize] += u64::from(p.size_bytes);
    }
    let total: u64 = bytes.iter().sum();
    bytes.iter().map(|&b| b as f64 / total as f64).collect()
}

#[test]
fn drr_equal_weights_split_evenly() {
    let s = backlogged_shares(&[1, 1], 300, 10_000);
    // ±1 packet of 300 bytes over 3 MB.
    assert!((s[0] - 0.5).abs() <= 300.0 / 3e6 + 1e-12, "{s:?}");
}

#[test]
fn drr_weighted_oracle() {
    // Oracle: with both queues backlogged, each round grants w*quantum bytes,
    // so long-run shares are w / sum(w).
    let s = backlogged_shares(&[1, 2], 1000, 10_000);
    assert!((s[0] - 1.0 / 3.0).abs() <= 0.02, "{s:?}");
    assert!((s[1] - 2.0 / 3.0).abs() <= 0.02, "{s:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn drr_fair_for_k_backlogged(k in 2usize..8, size in 40u32..1500) {
        let dequeues = 20_000 / k.max(1);
        let s = backlogged_shares(&vec![1; k], size, dequeues);
        let w = (dequeues as f64) * f64::from(size);
        let eps = 1500.0 * k as f64 / w;
        for share in s {
            prop_assert!((share - 1.0 / k as f64).abs() <= eps);
        }
    }

    #[test]
    fn fair_share_sums_to_one(ch in 0.0f64..1e6, ca in 0.0f64..1e6, f in 0.0f64..=1.0) {
        prop_assume!(ch + ca > 0.0);
        let s = fair_share(ch, ca, f).unwrap();
        prop_assert!((s.honest + s.attacker - 1.0).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&s.honest));
        let closed = (ca + f * ch) / (ca + ch);
        prop_assert!((s.attacker - closed).abs() < 1e-12);
    }

    #[test]
    fn fair_share_scale_invariant(ch in 1e-3f64..1e3, ca in 1e-3f64..1e3, f in 0.0f64..=1.0, k in 1e-3f64..1e3) {
        let a = fair_share(ch, ca, f).unwrap().honest;
        let b = fair_share(k * ch, k * ca, f).unwrap().honest;
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn success_rates_monotone_and_bounded(n in 0u64..1u64 << 40, extra in 0u64..1u64 << 30, bits in 1u32..=64) {
        let a = brute_force_success(n, bits);
        let b = brute_force_success(n + extra, bits);
        prop_assert!(a <= b && (0.0..=1.0).contains(&a) && b <= 1.0);
        let s1 = scan_fraction(n >> 20, 1e6, 512.0, 300.0, bits).unwrap();
        let s2 = scan_fraction((n >> 20) + (extra >> 10), 1e6, 512.0, 300.0, bits).unwrap();
        let s3 = scan_fraction(n >> 20, 2e6, 512.0, 300.0, bits).unwrap();
        prop_assert!(s1 <= s2 && s1 <= s3 && s2 <= 1.0 && s3 <= 1.0 && s1 >= 0.0);
    }

    #[test]
    fn pushback_matches_oracle(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (text, attack) = random_topology(&mut rng, 12);
        let map = parse_topology(&text).unwrap();
        let fast = compute_pushback(&map, attack);
        let slow = exhaustive_pushback(&map, attack);
        prop_assert_eq!(&fast.links, &slow.links, "{}", text);
        prop_assert!((fast.weighted_mean_router_hops - slow.mean_router_hops).abs() < 1e-9);
        prop_assert!((fast.weighted_mean_as_hops - slow.mean_as_hops).abs() < 1e-9);
        prop_assert!((fast.filtered_fraction() - slow.weights.values().sum::<f64>()).abs() < 1e-9);
    }
}

#[test]
fn cost_grid_properties() {
    let m = CostModel::default();
    let mut prev = None;
    for x in default_share_grid() {
        let c = attack_cost(&m, x).unwrap();
        assert!(c.with_mirage >= c.without_mirage, "x={x}");
        assert!(c.ratio() >= 100.0, "x={x} ratio={}", c.ratio());
        if let Some((w, wo)) = prev {
            assert!(c.with_mirage > w && c.without_mirage > wo);
        }
        prev = Some((c.with_mirage, c.without_mirage));
    }
}

#[test]
fn random_suffix_stream_passes_at_table_density() {
    let prefix = Prefix::new(3, 104).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let allowed: Vec<Suffix> = (0..3000).map(|_| Suffix(rng.random_range(0..1u128 << 24))).collect();
    let allowed_set: HashSet<_> = allowed.iter().copied().collect();
    let decoys = mirage_core::router::random_decoys(&mut rng, 8, 24, &allowed_set);
    let table = AclTable::new(prefix, 4096)
        .acl_update(allowed_set.iter().copied(), decoys)
        .unwrap();
    let p = table.len() as f64 / 2f64.powi(24);
    let n = 500_000u64;
    let passed = (0..n)
        .filter(|_| {
            let pkt = Packet::new(0, 3, Suffix(rng.random_range(0..1u128 << 24)), 64, 0, 0.0).unwrap();
            table.filter_packet(&pkt) != FilterDecision::Drop
        })
        .count() as f64;
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    assert!(
        (passed - n as f64 * p).abs() <= 3.0 * sigma,
        "passed {passed} expected {}",
        n as f64 * p
    );
}

#[test]
fn readers_never_see_mixed_tables() {
    // Table generation g allows exactly suffixes [g*100, g*100+100).
    let prefix = Prefix::new(PFX, 64).unwrap();
    let gen = |g: u128| (g * 100..g * 100 + 100).map(Suffix);
    let shared = Arc::new(SharedAcl::new(
        AclTable::new(prefix, 128).acl_update(gen(0), []).unwrap(),
    ));
    let writer = {
        let shared = shared.clone();
        std::thread::spawn(move || {
            for g in 1..200u128 {
                shared.update(gen(g), []).unwrap();
            }
        })
    };
    let readers: Vec<_> = (0..4)
        .map(|_| {
            let shared = shared.clone();
            std::thread::spawn(move || {
                for _ in 0..2000 {
                    let snap = shared.snapshot();
                    let min = snap.allowed().iter().min().unwrap().0;
                    let g = min / 100;
                    assert_eq!(min % 100, 0);
                    assert_eq!(snap.allowed().len(), 100);
                    assert!(snap.allowed().iter().all(|s| s.0 / 100 == g));
                }
            })
        })
        .collect();
    writer.join().unwrap();
    for r in readers {
        r.join().unwrap();
    }
}

#[test]
fn pushback_matches_oracle_on_200_topologies_and_fixtures() {
    let mut cases: Vec<(String, f64)> = (0..200u64)
        .map(|seed| random_topology(&mut ChaCha8Rng::seed_from_u64(1000 + seed), 12))
        .collect();
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures");
    for (file, gbps) in [("chain.tsv", 0.05), ("branch.tsv", 0.1)] {
        let text = std::fs::read_to_string(format!("{dir}/{file}")).unwrap();
        cases.push((text, gbps * 1e9));
    }
    let mut congested = 0;
    for (text, attack) in &cases {
        let map = parse_topology(text).unwrap();
        let fast = compute_pushback(&map, *attack);
        let slow = exhaustive_pushback(&map, *attack);
        assert_eq!(fast.links, slow.links, "{text}");
        assert!((fast.weighted_mean_router_hops - slow.mean_router_hops).abs() < 1e-9);
        assert!((fast.weighted_mean_as_hops - slow.mean_as_hops).abs() < 1e-9);
        if !fast.links.is_empty() {
            congested += 1;
        }
    }
    // The generator must actually exercise congestion.
    assert!(congested >= 50, "only {congested} congested topologies");
}
