//! Client compute model: how long one address request takes on a CPU.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClientModel {
    /// Fixed cycles per request (process start, resolve, connect).
    pub base_cycles: f64,
    /// Cycles per trial decryption.
    pub cycles_per_attempt: f64,
    /// CPU speed in cycles per second.
    pub cpu_hz: f64,
    pub processes: u32,
}

impl Default for ClientModel {
    fn default() -> Self {
        ClientModel {
            base_cycles: 1e6,
            cycles_per_attempt: 1e4,
            cpu_hz: 1e9,
            processes: 1,
        }
    }
}

impl ClientModel {
    pub fn validate(&self) -> Result<(), String> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !(pos(self.base_cycles) && pos(self.cpu_hz)) {
            return Err("base_cycles and cpu_hz must be positive".into());
        }
        if !(self.cycles_per_attempt.is_finite() && self.cycles_per_attempt >= 0.0) {
            return Err("cycles_per_attempt must be non-negative".into());
        }
        if self.processes == 0 {
            return Err("processes must be at least 1".into());
        }
        Ok(())
    }
}

/// Samples the trial decryptions needed for difficulty `d`: a normal with
/// mean `2^(d-1)` and standard deviation `2^(d-1)/sqrt(3)`, redrawn until it
/// lands in `[1, 2^d]`.
pub fn sample_attempts<R: Rng + ?Sized>(d: u8, rng: &mut R) -> f64 {
    let hi = 2f64.powi(i32::from(d));
    if hi <= 1.0 {
        return 1.0;
    }
    let mean = hi / 2.0;
    let normal = Normal::new(mean, mean / 3f64.sqrt()).expect("finite parameters");
    loop {
        let n = normal.sample(rng);
        if (1.0..=hi).contains(&n) {
            return n;
        }
    }
}

/// Cycles for one request at difficulty `d`, or just the base cost when the
/// defense is off.
pub fn request_cycles<R: Rng + ?Sized>(m: &ClientModel, d: u8, mirage: bool, rng: &mut R) -> f64 {
    if !mirage || m.cycles_per_attempt == 0.0 {
        return m.base_cycles;
    }
    m.base_cycles + sample_attempts(d, rng) * m.cycles_per_attempt
}

/// Wall-clock seconds for one request on an otherwise idle CPU.
pub fn solve_time<R: Rng + ?Sized>(m: &ClientModel, d: u8, mirage: bool, rng: &mut R) -> f64 {
    request_cycles(m, d, mirage, rng) / m.cpu_hz
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn off_mode_is_base_over_cpu() {
        let m = ClientModel {
            base_cycles: 1e9,
            cycles_per_attempt: 1e6,
            cpu_hz: 1e9,
            processes: 1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(solve_time(&m, 20, false, &mut rng), 1.0);
        let free = ClientModel {
            cycles_per_attempt: 0.0,
            ..m
        };
        assert_eq!(solve_time(&free, 20, true, &mut rng), 1.0);
    }

    #[test]
    fn fixed_attempts_arithmetic() {
        let m = ClientModel {
            base_cycles: 1e9,
            cycles_per_attempt: 1e6,
            cpu_hz: 1e9,
            processes: 1,
        };
        assert!(((m.base_cycles + 100.0 * m.cycles_per_attempt) / m.cpu_hz - 1.1).abs() < 1e-12);
    }

    #[test]
    fn attempts_truncated_with_expected_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(sample_attempts(0, &mut rng), 1.0);
        let xs: Vec<f64> = (0..20_000).map(|_| sample_attempts(10, &mut rng)).collect();
        assert!(xs.iter().all(|&x| (1.0..=1024.0).contains(&x)));
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        // Truncation is symmetric about the mean, so the mean is preserved.
        assert!((mean - 512.0).abs() < 5.0, "{mean}");
    }
}
