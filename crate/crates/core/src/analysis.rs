//! Closed-form attack calculators: scanning reach, brute-force success,
//! per-computation fair shares, puzzle work, and attacker cost.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("domain error: {0}")]
    Domain(String),
}

fn domain<T>(msg: impl Into<String>) -> Result<T, AnalysisError> {
    Err(AnalysisError::Domain(msg.into()))
}

/// Fraction of a `suffix_bits`-wide space that `bots` scanners cover within
/// one hopping interval, capped at 1.
pub fn scan_fraction(
    bots: u64,
    probe_rate_bps: f64,
    probe_size_bits: f64,
    interval_s: f64,
    suffix_bits: u32,
) -> Result<f64, AnalysisError> {
    if !(probe_rate_bps >= 0.0 && probe_size_bits > 0.0 && interval_s > 0.0) {
        return domain("probe rate must be non-negative, probe size and interval positive");
    }
    let probes_per_bot = (probe_rate_bps * interval_s / probe_size_bits).floor();
    Ok((bots as f64 * probes_per_bot / 2f64.powi(suffix_bits as i32)).min(1.0))
}

/// Chance that a uniformly random suffix hits one of `active_set_size` entries.
pub fn brute_force_success(active_set_size: u64, suffix_bits: u32) -> f64 {
    (active_set_size as f64 / 2f64.powi(suffix_bits as i32)).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Shares {
    pub honest: f64,
    pub attacker: f64,
}

/// Bandwidth shares when compute buys addresses and a fraction `f` of honest
/// traffic crosses colluding routers that leak and drop it.
pub fn fair_share(c_h: f64, c_a: f64, f: f64) -> Result<Shares, AnalysisError> {
    if !(c_h >= 0.0 && c_a >= 0.0 && c_h.is_finite() && c_a.is_finite()) {
        return domain("compute must be finite and non-negative");
    }
    if c_h + c_a == 0.0 {
        return domain("honest and attacker compute cannot both be zero");
    }
    if !(0.0..=1.0).contains(&f) {
        return domain(format!("compromised fraction {f} outside [0, 1]"));
    }
    let total = c_h + c_a;
    let honest = c_h * (1.0 - f) / total;
    Ok(Shares {
        honest,
        attacker: 1.0 - honest,
    })
}

/// Mean decryptions to solve a difficulty-`d` puzzle: the true key sits at a
/// uniform position among `2^d` candidates.
pub fn expected_attempts(d: u8) -> f64 {
    (2f64.powi(i32::from(d)) + 1.0) / 2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModel {
    /// $ per compute unit per hour.
    pub price_compute_per_unit_hour: f64,
    /// $ per GB transferred.
    pub price_transfer_per_gb: f64,
    pub victim_capacity_bps: f64,
    /// Aggregate honest compute, in the same units as the price.
    pub honest_compute_units: f64,
    pub legit_offered_load_bps: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            price_compute_per_unit_hour: 0.05,
            price_transfer_per_gb: 0.09,
            victim_capacity_bps: 1e9,
            honest_compute_units: 1e5,
            legit_offered_load_bps: 1e9,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<(), AnalysisError> {
        let all = [
            self.price_compute_per_unit_hour,
            self.price_transfer_per_gb,
            self.victim_capacity_bps,
            self.honest_compute_units,
            self.legit_offered_load_bps,
        ];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            domain("cost model parameters must be positive")
        }
    }
}

/// Gigabytes per hour moved at `bps` (1 GB = 8e9 bits).
pub fn gb_per_hour(bps: f64) -> f64 {
    bps * 3600.0 / 8e9
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AttackCost {
    pub without_mirage: f64,
    pub with_mirage: f64,
}

impl AttackCost {
    pub fn ratio(&self) -> f64 {
        self.with_mirage / self.without_mirage
    }
}

/// Hourly cost of claiming share `x` of the victim's capacity. Without the
/// defense, bandwidth alone buys the share; with it, the attacker must match
/// `x / (1 - x)` times the honest compute and still ship the traffic.
pub fn attack_cost(model: &CostModel, x: f64) -> Result<AttackCost, AnalysisError> {
    model.validate()?;
    if !(x > 0.0 && x < 1.0) {
        return domain(format!("desired share {x} outside (0, 1)"));
    }
    let odds = x / (1.0 - x);
    let without = model.price_transfer_per_gb * gb_per_hour(odds * model.legit_offered_load_bps);
    let with = model.price_compute_per_unit_hour * odds * model.honest_compute_units
        + model.price_transfer_per_gb * gb_per_hour(x * model.victim_capacity_bps);
    Ok(AttackCost {
        without_mirage: without,
        with_mirage: with,
    })
}

/// Compute units an attacker needs for share `x`.
pub fn required_compute(model: &CostModel, x: f64) -> Result<f64, AnalysisError> {
    if !(x > 0.0 && x < 1.0) {
        return domain(format!("desired share {x} outside (0, 1)"));
    }
    Ok(x / (1.0 - x) * model.honest_compute_units)
}

/// Share grid `0.01, 0.02, ..., 0.90`.
pub fn default_share_grid() -> Vec<f64> {
    (1..=90).map(|k| f64::from(k) / 100.0).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scan_examples() {
        assert_eq!(scan_fraction(0, 1e6, 64.0, 300.0, 64).unwrap(), 0.0);
        // 2^25 probes per bot, 20000 bots.
        let f = scan_fraction(20_000, 2f64.powi(25), 1.0, 1.0, 64).unwrap();
        assert!((f.log2() - (-24.712288)).abs() < 1e-5, "{}", f.log2());
        assert!((f - 3.638e-8).abs() < 1e-10);
        assert_eq!(scan_fraction(10, 1e6, 64.0, 300.0, 10).unwrap(), 1.0);
        assert!(scan_fraction(1, 1.0, 0.0, 1.0, 64).is_err());
    }

    #[test]
    fn brute_force_examples() {
        let a = brute_force_success(25_000, 64);
        assert!((a - 1.3553e-15).abs() < 1e-18, "{a}");
        let b = brute_force_success(1_005_000, 64);
        assert!((b - 5.4482e-14).abs() < 1e-17, "{b}");
        assert_eq!(brute_force_success(0, 64), 0.0);
    }

    #[test]
    fn fair_share_examples() {
        assert_eq!(fair_share(2.0, 2.0, 0.0).unwrap().honest, 0.5);
        assert_eq!(fair_share(1.0, 3.0, 0.0).unwrap().honest, 0.25);
        let s = fair_share(1.0, 1.0, 0.5).unwrap();
        assert_eq!(s.honest, 0.25);
        assert_eq!(s.attacker, 0.75);
        assert_eq!(fair_share(0.0, 5.0, 0.0).unwrap().honest, 0.0);
        assert!(fair_share(0.0, 0.0, 0.0).is_err());
        assert!(fair_share(-1.0, 1.0, 0.0).is_err());
        assert!(fair_share(1.0, 1.0, 1.5).is_err());
    }

    #[test]
    fn attempts() {
        assert_eq!(expected_attempts(0), 1.0);
        assert_eq!(expected_attempts(1), 1.5);
        assert_eq!(expected_attempts(8), 128.5);
    }

    #[test]
    fn cost_examples() {
        let m = CostModel::default();
        let tiny = attack_cost(&m, 1e-9).unwrap();
        assert!(tiny.with_mirage < 1e-3 && tiny.without_mirage < 1e-6);
        assert_eq!(required_compute(&m, 0.5).unwrap(), m.honest_compute_units);
        let half = attack_cost(&m, 0.5).unwrap();
        // 0.05 * 1e5 + 0.09 * 225 GB versus 0.09 * 450 GB.
        assert!((half.with_mirage - 5020.25).abs() < 1e-9);
        assert!((half.without_mirage - 40.5).abs() < 1e-9);
        assert!(half.ratio() >= 100.0);
        assert!(attack_cost(&m, 0.0).is_err());
        assert!(attack_cost(&m, 1.0).is_err());
        let bad = CostModel {
            victim_capacity_bps: 0.0,
            ..m
        };
        assert!(attack_cost(&bad, 0.5).is_err());
    }

    #[test]
    fn grid_shape() {
        let g = default_share_grid();
        assert_eq!(g.len(), 90);
        assert_eq!(g[0], 0.01);
        assert_eq!(g[89], 0.9);
    }
}
