//! Victim-rooted link maps built from per-hop capacity estimates, and the
//! search for pushback links: the links nearest the victim where filtering
//! still keeps every congested link clear of attack traffic.
//!
//! Input is tab-separated text headed by `#mirage-topo v1`, one row per
//! estimate:
//!
//! ```text
//! path_id  hop_index  link_id  capacity_bps|NA  avail_bw_bps|NA  as_number
//! ```
//!
//! `hop_index` counts from the victim (1 = the victim's access link). A link
//! may appear in many paths and carry many estimates; its capacity is the
//! median of the estimates that are not below their available-bandwidth
//! bound. A link with no usable estimate is `Unknown` and never congests.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;
use thiserror::Error;

pub const TOPOLOGY_HEADER: &str = "#mirage-topo v1";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("topology line {line}: {msg}")]
pub struct TopologyError {
    pub line: usize,
    pub msg: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Capacity {
    Known(f64),
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Link {
    pub id: String,
    pub capacity: Capacity,
    pub hop: u32,
    pub as_number: u32,
}

/// One measured path, links ordered from the source towards the victim.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Route {
    pub id: String,
    pub links: Vec<String>,
}

/// A single capacity estimate for one hop of one path.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRow {
    pub path_id: String,
    pub hop: u32,
    pub link_id: String,
    pub capacity_bps: Option<f64>,
    pub avail_bw_bps: Option<f64>,
    pub as_number: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopologyMap {
    pub victim: String,
    pub links: BTreeMap<String, Link>,
    pub paths: Vec<Route>,
}

fn median(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    Some(if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    })
}

fn field_f64(s: &str, name: &str) -> Result<Option<f64>, String> {
    if s == "NA" {
        return Ok(None);
    }
    let v: f64 = s
        .parse()
        .map_err(|_| format!("{name} {s:?} is neither a number nor NA"))?;
    if !v.is_finite() || v < 0.0 {
        return Err(format!("{name} must be finite and non-negative"));
    }
    Ok(Some(v))
}

/// Parses the TSV text form.
pub fn parse_topology(text: &str) -> Result<TopologyMap, TopologyError> {
    let mut rows = Vec::new();
    let mut lines = text.lines().enumerate().skip_while(|(_, l)| l.trim().is_empty());
    match lines.next() {
        Some((_, l)) if l.trim_end() == TOPOLOGY_HEADER => {}
        Some((n, _)) => {
            return Err(TopologyError {
                line: n + 1,
                msg: format!("expected header {TOPOLOGY_HEADER:?}"),
            })
        }
        None => {
            return Err(TopologyError {
                line: 1,
                msg: "empty topology file".into(),
            })
        }
    }
    let mut victim = None;
    for (n, raw) in lines {
        let line_no = n + 1;
        let err = |msg: String| TopologyError { line: line_no, msg };
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if let Some(v) = line.strip_prefix("#victim ") {
            victim = Some(v.trim().to_string());
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
        if cols.len() != 6 {
            return Err(err(format!("expected 6 tab-separated fields, found {}", cols.len())));
        }
        let hop: u32 = cols[1]
            .parse()
            .map_err(|_| err(format!("hop_index {:?} is not a positive integer", cols[1])))?;
        if hop == 0 {
            return Err(err("hop_index starts at 1".into()));
        }
        if cols[0].is_empty() || cols[2].is_empty() {
            return Err(err("path_id and link_id must be non-empty".into()));
        }
        let as_number: u32 = cols[5]
            .parse()
            .map_err(|_| err(format!("as_number {:?} is not an integer", cols[5])))?;
        rows.push((
            line_no,
            EstimateRow {
                path_id: cols[0].to_string(),
                hop,
                link_id: cols[2].to_string(),
                capacity_bps: field_f64(cols[3], "capacity_bps").map_err(err)?,
                avail_bw_bps: field_f64(cols[4], "avail_bw_bps").map_err(err)?,
                as_number,
            },
        ));
    }
    let mut map = build_topology(rows)?;
    if let Some(v) = victim {
        map.victim = v;
    }
    Ok(map)
}

/// Merges estimate rows (tagged with source line numbers) into a map.
pub fn build_topology(rows: Vec<(usize, EstimateRow)>) -> Result<TopologyMap, TopologyError> {
    if rows.is_empty() {
        return Err(TopologyError {
            line: 1,
            msg: "topology has no paths".into(),
        });
    }
    struct LinkAcc {
        hop: u32,
        as_number: u32,
        estimates: Vec<f64>,
    }
    let mut links: BTreeMap<String, LinkAcc> = BTreeMap::new();
    // path -> hop -> (link, first line)
    let mut paths: BTreeMap<String, BTreeMap<u32, (String, usize)>> = BTreeMap::new();
    let mut path_order: Vec<String> = Vec::new();

    for (line, r) in rows {
        let err = |msg: String| TopologyError { line, msg };
        let acc = links.entry(r.link_id.clone()).or_insert(LinkAcc {
            hop: r.hop,
            as_number: r.as_number,
            estimates: Vec::new(),
        });
        if acc.hop != r.hop {
            return Err(err(format!(
                "link {} appears at hop {} and hop {}",
                r.link_id, acc.hop, r.hop
            )));
        }
        if acc.as_number != r.as_number {
            return Err(err(format!(
                "link {} listed in AS {} and AS {}",
                r.link_id, acc.as_number, r.as_number
            )));
        }
        if let Some(c) = r.capacity_bps {
            // Capacity below the measured available bandwidth is a bad probe.
            if r.avail_bw_bps.is_none_or(|a| c >= a) {
                acc.estimates.push(c);
            }
        }
        if !paths.contains_key(&r.path_id) {
            path_order.push(r.path_id.clone());
        }
        let hops = paths.entry(r.path_id.clone()).or_default();
        match hops.get(&r.hop) {
            Some((existing, _)) if *existing != r.link_id => {
                return Err(err(format!(
                    "path {} has two links at hop {}: {} and {}",
                    r.path_id, r.hop, existing, r.link_id
                )))
            }
            Some(_) => {}
            None => {
                hops.insert(r.hop, (r.link_id.clone(), line));
            }
        }
    }

    let mut routes = Vec::with_capacity(path_order.len());
    for pid in path_order {
        let hops = &paths[&pid];
        for (expect, (&hop, (_, line))) in (1u32..).zip(hops) {
            if hop != expect {
                return Err(TopologyError {
                    line: *line,
                    msg: format!("path {pid} skips hop {expect}; paths must reach the victim"),
                });
            }
        }
        let mut seen = BTreeSet::new();
        for (link, line) in hops.values() {
            if !seen.insert(link) {
                return Err(TopologyError {
                    line: *line,
                    msg: format!("path {pid} visits link {link} twice"),
                });
            }
        }
        routes.push(Route {
            id: pid,
            links: hops.values().rev().map(|(l, _)| l.clone()).collect(),
        });
    }

    let links = links
        .into_iter()
        .map(|(id, acc)| {
            let capacity = median(acc.estimates).map_or(Capacity::Unknown, Capacity::Known);
            let link = Link {
                id: id.clone(),
                capacity,
                hop: acc.hop,
                as_number: acc.as_number,
            };
            (id, link)
        })
        .collect();
    Ok(TopologyMap {
        victim: "victim".into(),
        links,
        paths: routes,
    })
}

impl TopologyMap {
    /// Fraction of measured paths crossing each link.
    pub fn path_fractions(&self) -> BTreeMap<String, f64> {
        let total = self.paths.len() as f64;
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for p in &self.paths {
            for l in &p.links {
                *counts.entry(l.clone()).or_default() += 1;
            }
        }
        counts.into_iter().map(|(l, c)| (l, c as f64 / total)).collect()
    }

    pub fn path_fraction(&self, link: &str) -> f64 {
        self.path_fractions().get(link).copied().unwrap_or(0.0)
    }

    /// Distinct AS numbers on `path` from the victim out to `hop` inclusive.
    pub fn as_distance(&self, path: &Route, hop: u32) -> usize {
        path.links
            .iter()
            .map(|l| &self.links[l])
            .filter(|l| l.hop <= hop)
            .map(|l| l.as_number)
            .collect::<BTreeSet<_>>()
            .len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PushbackReport {
    pub links: BTreeSet<String>,
    /// Fraction of attack traffic filtered at each pushback link.
    pub weights: BTreeMap<String, f64>,
    pub weighted_mean_router_hops: f64,
    pub weighted_mean_as_hops: f64,
    /// Attack load on every link before filtering.
    pub link_load: BTreeMap<String, f64>,
    /// Links whose load exceeds a known capacity.
    pub congested: BTreeSet<String>,
}

impl PushbackReport {
    /// Share of attack traffic that has to be pushed back at all.
    pub fn filtered_fraction(&self) -> f64 {
        self.weights.values().sum()
    }
}

/// Attack traffic is spread over paths in proportion to the measured paths.
/// Each path's traffic must be stopped before its farthest congested link,
/// so that link is where filtering for the path has to happen.
pub fn compute_pushback(map: &TopologyMap, total_attack_bps: f64) -> PushbackReport {
    let fractions = map.path_fractions();
    let link_load: BTreeMap<String, f64> = fractions
        .iter()
        .map(|(l, f)| (l.clone(), f * total_attack_bps))
        .collect();
    let congested: BTreeSet<String> = map
        .links
        .values()
        .filter(|l| match l.capacity {
            Capacity::Known(c) => link_load.get(&l.id).copied().unwrap_or(0.0) > c,
            Capacity::Unknown => false,
        })
        .map(|l| l.id.clone())
        .collect();

    let per_path = 1.0 / map.paths.len() as f64;
    let mut weights: BTreeMap<String, f64> = BTreeMap::new();
    let mut router_hops = 0.0;
    let mut as_hops = 0.0;
    let mut hop_of: HashMap<&str, u32> = HashMap::new();
    for l in map.links.values() {
        hop_of.insert(&l.id, l.hop);
    }
    for p in &map.paths {
        let farthest = p
            .links
            .iter()
            .filter(|l| congested.contains(*l))
            .max_by_key(|l| hop_of[l.as_str()]);
        if let Some(l) = farthest {
            let hop = hop_of[l.as_str()];
            *weights.entry(l.clone()).or_default() += per_path;
            router_hops += per_path * f64::from(hop);
            as_hops += per_path * map.as_distance(p, hop) as f64;
        }
    }
    PushbackReport {
        links: weights.keys().cloned().collect(),
        weights,
        weighted_mean_router_hops: router_hops,
        weighted_mean_as_hops: as_hops,
        link_load,
        congested,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(body: &str) -> Result<TopologyMap, TopologyError> {
        parse_topology(&format!("{TOPOLOGY_HEADER}\n{body}"))
    }

    #[test]
    fn single_path_capacities() {
        let m = parse("p1\t3\tL3\t300\tNA\t3\np1\t2\tL2\t200\tNA\t2\np1\t1\tL1\t100\t50\t1\n").unwrap();
        assert_eq!(m.paths[0].links, vec!["L3", "L2", "L1"]);
        assert_eq!(m.links["L1"].capacity, Capacity::Known(100.0));
        assert_eq!(m.links["L2"].capacity, Capacity::Known(200.0));
        assert_eq!(m.links["L3"].hop, 3);
        assert_eq!(m.path_fraction("L2"), 1.0);
    }

    #[test]
    fn median_of_estimates() {
        let m = parse("a\t1\tL1\t10e6\tNA\t1\nb\t1\tL1\t90e6\tNA\t1\nc\t1\tL1\t100e6\tNA\t1\n").unwrap();
        assert_eq!(m.links["L1"].capacity, Capacity::Known(90e6));
        let even = parse("a\t1\tL1\t10\tNA\t1\na\t1\tL1\t20\tNA\t1\n").unwrap();
        assert_eq!(even.links["L1"].capacity, Capacity::Known(15.0));
    }

    #[test]
    fn estimates_below_available_bandwidth_discarded() {
        let m = parse("a\t1\tL1\t10\t20\t1\na\t1\tL1\t5\t6\t1\n").unwrap();
        assert_eq!(m.links["L1"].capacity, Capacity::Unknown);
        let mixed = parse("a\t1\tL1\t10\t20\t1\na\t1\tL1\t50\t20\t1\n").unwrap();
        assert_eq!(mixed.links["L1"].capacity, Capacity::Known(50.0));
        let na = parse("a\t1\tL1\tNA\tNA\t1\n").unwrap();
        assert_eq!(na.links["L1"].capacity, Capacity::Unknown);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        assert_eq!(parse_topology("p\t1\tL\t1\tNA\t1\n").unwrap_err().line, 1);
        assert_eq!(parse("p1\t1\tL1\t10\tNA\n").unwrap_err().line, 2);
        assert_eq!(
            parse("p1\t1\tL1\t10\tNA\t1\np1\tx\tL2\t1\tNA\t1\n").unwrap_err().line,
            3
        );
        assert_eq!(parse("p1\t1\tL1\tfast\tNA\t1\n").unwrap_err().line, 2);
        // Gap between victim and hop 2.
        let e = parse("p1\t2\tL2\t10\tNA\t1\n").unwrap_err();
        assert!(e.msg.contains("skips hop 1"), "{e}");
        // Same link at two distances.
        let e = parse("p1\t1\tL1\t10\tNA\t1\np2\t2\tL1\t10\tNA\t1\np2\t1\tL0\t10\tNA\t1\n").unwrap_err();
        assert_eq!(e.line, 3);
        let e = parse("p1\t1\tL1\t10\tNA\t1\np1\t1\tL9\t10\tNA\t1\n").unwrap_err();
        assert_eq!(e.line, 3);
        assert!(parse("").is_err());
    }

    #[test]
    fn comments_and_victim() {
        let m = parse("#victim www\n# note\n\np1\t1\tL1\t1\tNA\t7\n").unwrap();
        assert_eq!(m.victim, "www");
    }

    #[test]
    fn no_congestion_no_pushback() {
        let m = parse("p1\t2\tL2\t100\tNA\t2\np1\t1\tL1\t100\tNA\t1\n").unwrap();
        let r = compute_pushback(&m, 50.0);
        assert!(r.links.is_empty());
        assert_eq!(r.weighted_mean_router_hops, 0.0);
        assert_eq!(r.filtered_fraction(), 0.0);
    }

    #[test]
    fn chain_pushback() {
        let m = parse("p1\t2\tL2\t100\tNA\t2\np1\t1\tL1\t10\tNA\t1\n").unwrap();
        let r = compute_pushback(&m, 50.0);
        assert_eq!(r.links, BTreeSet::from(["L1".to_string()]));
        assert_eq!(r.weighted_mean_router_hops, 1.0);
        assert_eq!(r.weighted_mean_as_hops, 1.0);
        // Heavier attack congests L2 too; filtering moves outward.
        let r = compute_pushback(&m, 500.0);
        assert_eq!(r.links, BTreeSet::from(["L2".to_string()]));
        assert_eq!(r.weighted_mean_router_hops, 2.0);
        assert_eq!(r.weighted_mean_as_hops, 2.0);
    }

    #[test]
    fn branch_weighted_mean() {
        // Three paths through branch A (congested at hop 2), two through B.
        let mut body = String::new();
        for p in ["a1", "a2", "a3"] {
            body += &format!("{p}\t2\tA\t50\tNA\t20\n{p}\t1\tR\t1000\tNA\t10\n");
        }
        for p in ["b1", "b2"] {
            body += &format!("{p}\t2\tB\t1000\tNA\t30\n{p}\t1\tR\t1000\tNA\t10\n");
        }
        let m = parse(&body).unwrap();
        let r = compute_pushback(&m, 100.0);
        assert_eq!(r.links, BTreeSet::from(["A".to_string()]));
        assert!((r.weighted_mean_router_hops - 1.2).abs() < 1e-12);
        assert!((r.weighted_mean_as_hops - 1.2).abs() < 1e-12);
        assert!((r.weights["A"] - 0.6).abs() < 1e-12);
        assert!((r.link_load["A"] - 60.0).abs() < 1e-9);
    }

    #[test]
    fn unknown_links_never_congest() {
        let m = parse("p1\t1\tL1\tNA\tNA\t1\n").unwrap();
        assert!(compute_pushback(&m, 1e12).links.is_empty());
    }
}
