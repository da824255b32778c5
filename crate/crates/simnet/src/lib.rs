//! Deterministic discrete-event simulator for the bandwidth-exhaustion,
//! address-exhaustion and compromised-router experiments.
//!
//! Every run draws all randomness from one ChaCha8 generator seeded by the
//! caller, and events are processed in `(time, seq)` order, so a run is a pure
//! function of its config and seed.

pub mod client;
pub mod config;
pub mod event;
mod exhaustion;
pub mod flow;
pub mod link;
mod packet;
pub mod report;

pub use client::{sample_attempts, solve_time, ClientModel};
pub use config::{
    AddressParams, BandwidthParams, CompromisedParams, PuzzleParams, SimError, SimRun, SimScenario, SimnetParams,
};
pub use packet::is_compromised;
pub use report::{Record, RunReport, CSV_HEADER};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run(cfg: &SimRun, seed: u64) -> Result<RunReport, SimError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = RunReport::new(cfg.scenario.name(), seed);
    log::info!("running {} for {} s, seed {seed}", cfg.scenario.name(), cfg.duration_s);
    match cfg.scenario {
        SimScenario::Empty => {}
        SimScenario::BandwidthExhaustion => packet::bandwidth_exhaustion(cfg, &mut rng, &mut report),
        SimScenario::AddressExhaustion => exhaustion::address_exhaustion(cfg, &mut rng, &mut report),
        SimScenario::CompromisedRouters => packet::compromised_routers(cfg, &mut rng, &mut report),
    }
    Ok(report)
}

pub fn scenario_bandwidth_exhaustion(
    attack_multiplier: f64,
    mirage_on: bool,
    seed: u64,
) -> Result<RunReport, SimError> {
    let mut cfg = SimRun::new(SimScenario::BandwidthExhaustion);
    cfg.simnet.mirage = mirage_on;
    cfg.simnet.bandwidth.attack_multiplier = attack_multiplier;
    run(&cfg, seed)
}

pub fn scenario_address_exhaustion(
    attacker_machines: u32,
    attacker_processes: u32,
    mirage_on: bool,
    seed: u64,
) -> Result<RunReport, SimError> {
    let mut cfg = SimRun::new(SimScenario::AddressExhaustion);
    // Four hopping intervals; grant counts are noisy over a single one.
    cfg.duration_s = 1200.0;
    cfg.simnet.mirage = mirage_on;
    cfg.simnet.address.attacker_machines = attacker_machines;
    cfg.simnet.address.attacker_processes = attacker_processes;
    run(&cfg, seed)
}

pub fn scenario_compromised_routers(f: f64, c_h: f64, c_a: f64, seed: u64) -> Result<RunReport, SimError> {
    let mut cfg = SimRun::new(SimScenario::CompromisedRouters);
    cfg.simnet.compromised.compromised_fraction = f;
    cfg.simnet.compromised.honest_compute = c_h;
    cfg.simnet.compromised.attacker_compute = c_a;
    run(&cfg, seed)
}
