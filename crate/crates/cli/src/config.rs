use std::net::Ipv6Addr;

use mirage_core::hop::{HopConfig, Prefix, DEFAULT_GRACE_SECONDS, DEFAULT_INTERVAL_SECONDS};
use mirage_core::router::DrrConfig;
use mirage_services::ServicesParams;
use mirage_simnet::{PuzzleParams, SimRun, SimScenario, SimnetParams};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioName {
    BandwidthExhaustion,
    AddressExhaustion,
    CompromisedRouters,
    ClientSession,
}

/// Hopping parameters as written in config files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HopBlock {
    /// 32 hex digits.
    pub master_key: String,
    /// IPv6 network in CIDR form.
    pub prefix: String,
    pub interval_seconds: u64,
    pub grace_seconds: u64,
    pub set_size: usize,
}

impl Default for HopBlock {
    fn default() -> Self {
        HopBlock {
            master_key: "000102030405060708090a0b0c0d0e0f".into(),
            prefix: "2001:db8::/64".into(),
            interval_seconds: DEFAULT_INTERVAL_SECONDS,
            grace_seconds: DEFAULT_GRACE_SECONDS,
            set_size: 4096,
        }
    }
}

impl HopBlock {
    pub fn to_config(&self) -> Result<HopConfig, CliError> {
        let bad = |m: String| CliError::Config(format!("hop: {m}"));
        let key: [u8; 16] = hex::decode(&self.master_key)
            .map_err(|e| bad(format!("master_key: {e}")))?
            .try_into()
            .map_err(|_| bad("master_key must be 32 hex digits".into()))?;
        let (addr, len) = self
            .prefix
            .split_once('/')
            .ok_or_else(|| bad(format!("prefix {:?} is not addr/len", self.prefix)))?;
        let addr: Ipv6Addr = addr.parse().map_err(|e| bad(format!("prefix: {e}")))?;
        let len: u8 = len.parse().map_err(|e| bad(format!("prefix length: {e}")))?;
        if !(8..=120).contains(&len) {
            return Err(bad(format!("prefix length {len} outside [8, 120]")));
        }
        let full = u128::from(addr);
        if full & ((1u128 << (128 - len)) - 1) != 0 {
            return Err(bad(format!("{} has host bits set", self.prefix)));
        }
        let prefix = Prefix::new(full >> (128 - len), len).map_err(|e| bad(e.to_string()))?;
        HopConfig::new(key, prefix, self.set_size)
            .and_then(|h| h.with_timing(self.interval_seconds, self.grace_seconds))
            .map_err(|e| bad(e.to_string()))
    }
}

fn default_duration() -> f64 {
    300.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioName,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    #[serde(default)]
    pub hop: HopBlock,
    #[serde(default)]
    pub puzzle: PuzzleParams,
    #[serde(default)]
    pub router: DrrConfig,
    #[serde(default)]
    pub simnet: SimnetParams,
    #[serde(default)]
    pub services: ServicesParams,
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Parses and checks every block the scenario uses.
    pub fn load(text: &str) -> Result<Self, CliError> {
        let cfg = Self::parse(text)?;
        cfg.hop.to_config()?;
        match cfg.sim_run() {
            Some(run) => run.validate()?,
            None => cfg.services.validate()?,
        }
        Ok(cfg)
    }

    /// Simulator config for the network scenarios.
    pub fn sim_run(&self) -> Option<SimRun> {
        let scenario = match self.scenario {
            ScenarioName::BandwidthExhaustion => SimScenario::BandwidthExhaustion,
            ScenarioName::AddressExhaustion => SimScenario::AddressExhaustion,
            ScenarioName::CompromisedRouters => SimScenario::CompromisedRouters,
            ScenarioName::ClientSession => return None,
        };
        Some(SimRun {
            scenario,
            duration_s: self.duration_s,
            interval_s: self.hop.interval_seconds as f64,
            router: self.router,
            puzzle: self.puzzle,
            simnet: self.simnet,
        })
    }

    pub fn name(&self) -> &'static str {
        match self.scenario {
            ScenarioName::BandwidthExhaustion => "bandwidth_exhaustion",
            ScenarioName::AddressExhaustion => "address_exhaustion",
            ScenarioName::CompromisedRouters => "compromised_routers",
            ScenarioName::ClientSession => "client_session",
        }
    }
}
