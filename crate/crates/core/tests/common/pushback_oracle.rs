//! Exhaustive pushback oracle and random topology generator, shared by the
//! core property tests and the acceptance suite.
//!
//! The oracle knows nothing about "farthest congested link". It tries every
//! subset of links as a filter placement. A path's attack traffic is stopped
//! at the first filter it meets (the one farthest from the victim); a
//! placement is sufficient when every path is stopped at or before each
//! congested link it crosses. Among sufficient placements it keeps the one
//! with the least traffic-weighted filtering distance, then the fewest
//! filters, then the lexicographically smallest set.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use mirage_core::topology::{Capacity, TopologyMap};
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub links: BTreeSet<String>,
    pub weights: BTreeMap<String, f64>,
    pub mean_router_hops: f64,
    pub mean_as_hops: f64,
}

pub fn exhaustive_pushback(map: &TopologyMap, attack_bps: f64) -> OracleResult {
    let ids: Vec<&String> = map.links.keys().collect();
    assert!(ids.len() <= 16, "oracle is exponential in link count");
    let index = |id: &str| ids.iter().position(|x| x.as_str() == id).unwrap();
    let w = 1.0 / map.paths.len() as f64;

    let mut load = vec![0.0; ids.len()];
    for p in &map.paths {
        for l in &p.links {
            load[index(l)] += w * attack_bps;
        }
    }
    let congested: Vec<bool> = ids
        .iter()
        .enumerate()
        .map(|(k, id)| matches!(map.links[*id].capacity, Capacity::Known(c) if load[k] > c))
        .collect();
    let hop = |k: usize| map.links[ids[k]].hop;
    let path_links: Vec<Vec<usize>> = map
        .paths
        .iter()
        .map(|p| p.links.iter().map(|l| index(l)).collect())
        .collect();
    let need: Vec<u32> = path_links
        .iter()
        .map(|ls| ls.iter().filter(|&&k| congested[k]).map(|&k| hop(k)).max().unwrap_or(0))
        .collect();

    let mut best: Option<(f64, u32, Vec<String>, u32)> = None;
    for mask in 0u32..(1 << ids.len()) {
        let mut cost = 0.0;
        let mut ok = true;
        for (p, ls) in path_links.iter().enumerate() {
            let first = ls
                .iter()
                .filter(|&&k| mask >> k & 1 == 1)
                .map(|&k| hop(k))
                .max()
                .unwrap_or(0);
            if first < need[p] {
                ok = false;
                break;
            }
            cost += w * f64::from(first);
        }
        if !ok {
            continue;
        }
        let names: Vec<String> = (0..ids.len())
            .filter(|k| mask >> k & 1 == 1)
            .map(|k| ids[k].clone())
            .collect();
        let better = match &best {
            None => true,
            Some((bc, bn, bnames, _)) => {
                cost < bc - 1e-12
                    || ((cost - bc).abs() <= 1e-12
                        && (mask.count_ones() < *bn || (mask.count_ones() == *bn && names < *bnames)))
            }
        };
        if better {
            best = Some((cost, mask.count_ones(), names, mask));
        }
    }
    let (cost, _, _, mask) = best.expect("filtering every link is always sufficient");

    let mut weights = BTreeMap::new();
    let mut as_hops = 0.0;
    for ls in &path_links {
        if let Some(&k) = ls.iter().filter(|&&k| mask >> k & 1 == 1).max_by_key(|&&k| hop(k)) {
            *weights.entry(ids[k].clone()).or_insert(0.0) += w;
            let h = hop(k);
            let ases: BTreeSet<u32> = ls
                .iter()
                .filter(|&&j| hop(j) <= h)
                .map(|&j| map.links[ids[j]].as_number)
                .collect();
            as_hops += w * ases.len() as f64;
        }
    }
    OracleResult {
        links: weights.keys().cloned().collect(),
        weights,
        mean_router_hops: cost,
        mean_as_hops: as_hops,
    }
}

/// Random victim-rooted tree with at most `max_links` links, rendered as a
/// topology file. Returns the text and a total attack rate.
pub fn random_topology<R: Rng>(rng: &mut R, max_links: usize) -> (String, f64) {
    let n = rng.random_range(1..=max_links);
    // parent[k] = downstream link (closer to victim), None = victim.
    let mut parent: Vec<Option<usize>> = Vec::with_capacity(n);
    let mut hop = Vec::with_capacity(n);
    for k in 0..n {
        let p = if k == 0 || rng.random_bool(0.25) {
            None
        } else {
            Some(rng.random_range(0..k))
        };
        hop.push(p.map_or(1, |q: usize| hop[q] + 1));
        parent.push(p);
    }
    let as_of: Vec<u32> = (0..n).map(|_| rng.random_range(1..=4)).collect();
    let caps = [5.0, 10.0, 20.0, 40.0, 80.0, 160.0];

    let mut text = String::from("#mirage-topo v1\n");
    let paths = rng.random_range(1..=8);
    for p in 0..paths {
        let mut cur = Some(rng.random_range(0..n));
        while let Some(k) = cur {
            let estimates = rng.random_range(1..=3);
            for _ in 0..estimates {
                let cap = if rng.random_bool(0.15) {
                    "NA".to_string()
                } else {
                    format!("{}", caps[(k * 7 + rng.random_range(0..2)) % caps.len()])
                };
                let avail = if rng.random_bool(0.2) {
                    format!("{}", caps[rng.random_range(0..caps.len())])
                } else {
                    "NA".to_string()
                };
                text += &format!("p{p}\t{}\tL{k:02}\t{cap}\t{avail}\t{}\n", hop[k], as_of[k]);
            }
            cur = parent[k];
        }
    }
    let attack = [10.0, 30.0, 60.0, 100.0, 200.0][rng.random_range(0..5)];
    (text, attack)
}
