use mirage_core::router::DrrConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::ClientModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, SimError> {
    Err(SimError::ConfigInvalid(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimScenario {
    /// Nothing scheduled; useful as a smoke test.
    Empty,
    BandwidthExhaustion,
    AddressExhaustion,
    CompromisedRouters,
}

impl SimScenario {
    pub fn name(self) -> &'static str {
        match self {
            SimScenario::Empty => "empty",
            SimScenario::BandwidthExhaustion => "bandwidth_exhaustion",
            SimScenario::AddressExhaustion => "address_exhaustion",
            SimScenario::CompromisedRouters => "compromised_routers",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PuzzleParams {
    pub base_difficulty: u8,
    pub bucket_capacity: f64,
    /// Grants per second released by the auction.
    pub release_rate: f64,
    /// Seconds between auction rounds.
    pub tick_s: f64,
}

impl Default for PuzzleParams {
    fn default() -> Self {
        PuzzleParams {
            base_difficulty: 18,
            bucket_capacity: 2.0,
            release_rate: 4.0,
            tick_s: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BandwidthParams {
    pub benign_flows: u32,
    /// UDP attack rate as a multiple of the bottleneck capacity.
    pub attack_multiplier: f64,
}

impl Default for BandwidthParams {
    fn default() -> Self {
        BandwidthParams {
            benign_flows: 10,
            attack_multiplier: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AddressParams {
    pub attacker_machines: u32,
    /// Total attacker processes, spread over the machines.
    pub attacker_processes: u32,
    /// Request/reply round trip to the address server.
    pub rtt_s: f64,
    /// Per-machine compute model; `processes` is ignored here.
    pub client: ClientModel,
}

impl Default for AddressParams {
    fn default() -> Self {
        AddressParams {
            attacker_machines: 1,
            attacker_processes: 10,
            rtt_s: 0.02,
            client: ClientModel::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompromisedParams {
    /// Fraction of honest traffic crossing a colluding router.
    pub compromised_fraction: f64,
    pub honest_compute: f64,
    pub attacker_compute: f64,
    /// Attacker flood rate as a multiple of the bottleneck capacity.
    pub attack_load: f64,
    pub difficulty: u8,
    /// Compute model for one unit of compute.
    pub client: ClientModel,
}

impl Default for CompromisedParams {
    fn default() -> Self {
        CompromisedParams {
            compromised_fraction: 0.0,
            honest_compute: 1.0,
            attacker_compute: 1.0,
            attack_load: 1.5,
            difficulty: 19,
            client: ClientModel::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimnetParams {
    pub mirage: bool,
    pub warmup_s: f64,
    pub link_capacity_bps: f64,
    pub propagation_delay_s: f64,
    pub base_rtt_s: f64,
    pub packet_bytes: u32,
    pub fifo_limit_packets: usize,
    pub bandwidth: BandwidthParams,
    pub address: AddressParams,
    pub compromised: CompromisedParams,
}

impl Default for SimnetParams {
    fn default() -> Self {
        SimnetParams {
            mirage: true,
            warmup_s: 30.0,
            link_capacity_bps: 10e6,
            propagation_delay_s: 0.005,
            base_rtt_s: 0.04,
            packet_bytes: 1000,
            fifo_limit_packets: 64,
            bandwidth: BandwidthParams::default(),
            address: AddressParams::default(),
            compromised: CompromisedParams::default(),
        }
    }
}

/// Everything one simulation run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimRun {
    pub scenario: SimScenario,
    pub duration_s: f64,
    /// Hopping interval; address holdings reset at each rollover.
    #[serde(default = "default_interval")]
    pub interval_s: f64,
    #[serde(default)]
    pub router: DrrConfig,
    #[serde(default)]
    pub puzzle: PuzzleParams,
    #[serde(default)]
    pub simnet: SimnetParams,
}

fn default_interval() -> f64 {
    mirage_core::hop::DEFAULT_INTERVAL_SECONDS as f64
}

impl SimRun {
    pub fn new(scenario: SimScenario) -> Self {
        SimRun {
            scenario,
            duration_s: 300.0,
            interval_s: default_interval(),
            router: DrrConfig::default(),
            puzzle: PuzzleParams::default(),
            simnet: SimnetParams::default(),
        }
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), SimError> {
        let s = &self.simnet;
        if !(self.duration_s.is_finite() && self.duration_s >= 0.0) {
            return invalid("duration_s must be finite and non-negative");
        }
        if !(self.interval_s > 0.0) {
            return invalid("interval_s must be positive");
        }
        if !(s.link_capacity_bps > 0.0) {
            return invalid("link_capacity_bps must be positive");
        }
        if !(s.propagation_delay_s >= 0.0 && s.base_rtt_s >= 2.0 * s.propagation_delay_s) {
            return invalid("base_rtt_s must cover the round-trip propagation delay");
        }
        if !(s.warmup_s >= 0.0) {
            return invalid("warmup_s must be non-negative");
        }
        if !(40..=9000).contains(&s.packet_bytes) {
            return invalid("packet_bytes must be in [40, 9000]");
        }
        if s.fifo_limit_packets == 0 || self.router.queue_limit_packets == 0 {
            return invalid("queue limits must be positive");
        }
        if self.router.quantum == 0 {
            return invalid("quantum must be positive");
        }
        if !(s.bandwidth.attack_multiplier >= 0.0) {
            return invalid("attack_multiplier must be non-negative");
        }
        let a = &s.address;
        if a.attacker_machines == 0 || a.attacker_processes < a.attacker_machines {
            return invalid("need attacker_processes >= attacker_machines >= 1");
        }
        if !(a.rtt_s >= 0.0) {
            return invalid("address rtt_s must be non-negative");
        }
        a.client.validate().map_err(SimError::ConfigInvalid)?;
        let c = &s.compromised;
        if !(0.0..=1.0).contains(&c.compromised_fraction) {
            return invalid("compromised_fraction must be in [0, 1]");
        }
        if !(c.honest_compute > 0.0 && c.attacker_compute > 0.0) {
            return invalid("honest_compute and attacker_compute must be positive");
        }
        if !(c.attack_load >= 0.0) {
            return invalid("attack_load must be non-negative");
        }
        c.client.validate().map_err(SimError::ConfigInvalid)?;
        let p = &self.puzzle;
        let max = mirage_core::puzzle::MAX_DIFFICULTY;
        if p.base_difficulty > max || c.difficulty > max {
            return invalid(format!("difficulty above {max}"));
        }
        if !(p.release_rate > 0.0 && p.bucket_capacity >= 1.0 && p.tick_s > 0.0) {
            return invalid("need release_rate > 0, bucket_capacity >= 1, tick_s > 0");
        }
        Ok(())
    }
}
