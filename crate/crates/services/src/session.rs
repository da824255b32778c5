//! Client sessions: a simulated one on a virtual clock, and a live one over TCP.

use std::collections::HashMap;
use std::time::Duration;

use mirage_core::hop::HopConfig;
use mirage_core::puzzle::{solve_puzzle, PuzzleSolution};
use mirage_simnet::event::{EventKind, EventQueue};
use mirage_simnet::{solve_time, ClientModel, PuzzleParams, RunReport, SimError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dns::{dns_step, resolve, DnsConfig, DnsState};
use crate::driver::{coverage_gaps, ClientDriver, DriverConfig, Step, Target};
use crate::net::Connection;
use crate::puzzle_server::{victim_batch, Auction, PuzzleServerState, SelfService};
use crate::wire::{Body, Envelope};
use crate::{Clock, Service, ServiceError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServerMode {
    SelfService,
    Auction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServicesParams {
    pub dns: DnsConfig,
    pub mode: ServerMode,
    /// Puzzles the victim uploads per interval.
    pub batch_size: usize,
    /// Difficulty of uploaded puzzles; the auction uses `puzzle.base_difficulty`.
    pub difficulty: u8,
    /// One-way client/server latency.
    pub latency_s: f64,
    /// Victim health probes start failing at this time.
    pub attack_start_s: f64,
    /// Relative compute of each simulated client.
    pub clients: Vec<f64>,
    pub client: ClientModel,
    pub backoff_base_s: f64,
    pub backoff_cap_s: f64,
}

impl Default for ServicesParams {
    fn default() -> Self {
        ServicesParams {
            dns: DnsConfig::default(),
            mode: ServerMode::SelfService,
            batch_size: 4096,
            difficulty: 10,
            latency_s: 0.01,
            attack_start_s: 0.0,
            clients: vec![1.0],
            client: ClientModel {
                cycles_per_attempt: 1e6,
                ..ClientModel::default()
            },
            backoff_base_s: 1.0,
            backoff_cap_s: 30.0,
        }
    }
}

impl ServicesParams {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::ConfigInvalid(format!("services: {m}")));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.difficulty > mirage_core::puzzle::MAX_DIFFICULTY {
            return bad("difficulty above 30");
        }
        if !(self.latency_s.is_finite() && self.latency_s >= 0.0) || !self.attack_start_s.is_finite() {
            return bad("latency_s and attack_start_s must be finite and non-negative");
        }
        if self.clients.is_empty() || self.clients.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return bad("clients must list positive compute factors");
        }
        if self.dns.fail_threshold == 0 || self.dns.recover_threshold == 0 || self.dns.probe_period_ms == 0 {
            return bad("dns thresholds and probe period must be positive");
        }
        if !(self.backoff_base_s > 0.0 && self.backoff_cap_s >= self.backoff_base_s) {
            return bad("backoff_base_s must be positive and at most backoff_cap_s");
        }
        self.client
            .validate()
            .map_err(|m| SimError::ConfigInvalid(format!("services.client: {m}")))
    }
}

/// Everything a simulated session needs.
#[derive(Debug, Clone)]
pub struct SessionSpec {
    pub hop: HopConfig,
    pub puzzle: PuzzleParams,
    pub services: ServicesParams,
    pub duration_s: f64,
}

enum Ev {
    Wake(usize),
    Deliver(usize, Target, Envelope),
    Reply(usize, Result<Body, ServiceError>),
    Solved(usize, PuzzleSolution),
    Probe,
    Upload(u64),
    AuctionTick,
    Sample,
}

fn unwrap_reply(env: Envelope) -> Result<Body, ServiceError> {
    match env.body {
        Body::Error { code, message } => Err(ServiceError::from_wire(&code, &message)),
        b => Ok(b),
    }
}

/// Simulated deployment: DNS resolver, puzzle server, victim uploads and one
/// driver per entry of `services.clients`. Solving is real; the time it takes
/// comes from the client CPU model.
pub fn client_session(spec: &SessionSpec, seed: u64) -> Result<RunReport, SimError> {
    let svc = &spec.services;
    svc.validate()?;
    spec.hop
        .validate()
        .map_err(|e| SimError::ConfigInvalid(format!("hop: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = RunReport::new("client_session", seed);
    let (iv, grace) = (spec.hop.interval_seconds, spec.hop.grace_seconds);
    let horizon = spec.duration_s;

    let mut dns = DnsState::new("victim", "puzzle-server", svc.dns.clone());
    let mut server = match svc.mode {
        ServerMode::SelfService => PuzzleServerState::SelfService(SelfService::new(iv)),
        ServerMode::Auction => PuzzleServerState::Auction(Box::new(Auction::new(
            spec.hop.clone(),
            spec.puzzle,
            0.0,
            seed ^ 0x5eed,
        ))),
    };
    let mut drivers: Vec<ClientDriver> = (0..svc.clients.len())
        .map(|i| {
            ClientDriver::new(DriverConfig {
                requester: i as u64,
                interval_seconds: iv,
                grace_seconds: grace,
                backoff_base_s: svc.backoff_base_s,
                backoff_cap_s: svc.backoff_cap_s,
                ..DriverConfig::default()
            })
        })
        .collect();
    let models: Vec<ClientModel> = svc
        .clients
        .iter()
        .map(|c| ClientModel {
            cpu_hz: svc.client.cpu_hz * c,
            ..svc.client
        })
        .collect();

    let mut q: EventQueue<Ev> = EventQueue::new();
    let probe_period = svc.dns.probe_period_ms as f64 / 1000.0;
    q.schedule(probe_period, EventKind::ProbeResult, Ev::Probe);
    if svc.mode == ServerMode::SelfService {
        q.schedule(0.0, EventKind::IntervalRollover, Ev::Upload(0));
    } else {
        q.schedule(spec.puzzle.tick_s, EventKind::TimerFire, Ev::AuctionTick);
    }
    for i in 0..drivers.len() {
        q.schedule(0.0, EventKind::TimerFire, Ev::Wake(i));
    }
    q.schedule(1.0, EventKind::TimerFire, Ev::Sample);
    let mut failover_at = f64::NAN;

    while let Some(ev) = q.pop_until(horizon) {
        let now = ev.time;
        match ev.payload {
            Ev::Wake(i) => match drivers[i].next_step(now) {
                Step::Send(target, body) => {
                    q.schedule(
                        now + svc.latency_s,
                        EventKind::PacketArrival,
                        Ev::Deliver(i, target, Envelope::new(0, body)),
                    );
                }
                Step::Solve(pz) => {
                    let sol = solve_puzzle(&pz).map_err(|e| SimError::ConfigInvalid(format!("puzzle: {e}")))?;
                    let dt = solve_time(&models[i], pz.difficulty, true, &mut rng);
                    q.schedule(now + dt, EventKind::PuzzleSolved, Ev::Solved(i, sol));
                }
                Step::SleepUntil(t) => {
                    if t > now {
                        q.schedule(t, EventKind::TimerFire, Ev::Wake(i));
                    }
                }
            },
            Ev::Deliver(i, target, env) => {
                let reply = match target {
                    Target::Dns => {
                        let (address, ttl_s) = resolve(&dns);
                        Some(env.reply(Body::ResolveReply {
                            address,
                            ttl_s,
                            mode: dns.mode,
                        }))
                    }
                    Target::Server(_) => server.handle(&env, i as u64, now),
                };
                if let Some(r) = reply {
                    q.schedule(
                        now + svc.latency_s,
                        EventKind::PacketArrival,
                        Ev::Reply(i, unwrap_reply(r)),
                    );
                }
            }
            Ev::Reply(i, r) => {
                let before = drivers[i].history().len();
                drivers[i].on_reply(now, r);
                if drivers[i].history().len() > before {
                    report.push(now, format!("client-{i}"), "acquired", 1.0);
                }
                q.schedule(now, EventKind::TimerFire, Ev::Wake(i));
            }
            Ev::Solved(i, sol) => {
                let before = drivers[i].history().len();
                drivers[i].on_solved(now, &sol);
                if drivers[i].history().len() > before {
                    report.push(now, format!("client-{i}"), "acquired", 1.0);
                }
                q.schedule(now, EventKind::TimerFire, Ev::Wake(i));
            }
            Ev::Probe => {
                let before = dns.mode;
                dns = dns_step(dns, now < svc.attack_start_s);
                if dns.mode != before {
                    if failover_at.is_nan() {
                        failover_at = now;
                    }
                    report.push(
                        now,
                        "dns",
                        "under_attack",
                        f64::from(u8::from(dns.mode != crate::DnsMode::Normal)),
                    );
                }
                q.schedule(now + probe_period, EventKind::ProbeResult, Ev::Probe);
            }
            Ev::Upload(t) => {
                // Each batch goes up a little before its interval starts.
                let batch = victim_batch(&spec.hop, t, svc.difficulty, svc.batch_size, seed ^ t)
                    .map_err(|e| SimError::ConfigInvalid(format!("puzzle: {e}")))?;
                server.upload(batch);
                let lead = (iv as f64 / 10.0).min(5.0);
                q.schedule(
                    ((t + 1) * iv) as f64 - lead,
                    EventKind::IntervalRollover,
                    Ev::Upload(t + 1),
                );
            }
            Ev::AuctionTick => {
                for (token, env) in server.tick(now) {
                    q.schedule(
                        now + svc.latency_s,
                        EventKind::PacketArrival,
                        Ev::Reply(token as usize, unwrap_reply(env)),
                    );
                }
                q.schedule(now + spec.puzzle.tick_s, EventKind::TimerFire, Ev::AuctionTick);
            }
            Ev::Sample => {
                for (i, d) in drivers.iter().enumerate() {
                    report.push(
                        now,
                        format!("client-{i}"),
                        "valid_suffixes",
                        d.valid_at(now).len() as f64,
                    );
                }
                q.schedule(now + 1.0, EventKind::TimerFire, Ev::Sample);
            }
        }
    }

    for (i, d) in drivers.iter().enumerate() {
        let acquired = d.history().len() as f64;
        report.summary.insert(format!("client-{i}.acquired"), acquired);
        let first = d.history().first().map_or(horizon, |h| h.acquired_at);
        let gap = coverage_gaps(d.history(), iv, grace, first, horizon)
            .iter()
            .map(|(a, b)| b - a)
            .fold(0.0, f64::max);
        report.summary.insert(format!("client-{i}.max_gap_s"), gap);
    }
    if !failover_at.is_nan() {
        report.summary.insert("failover_s".into(), failover_at);
    }
    Ok(report)
}

/// Drives `driver` against live services until `until` on `clock`, solving
/// puzzles on this thread.
pub fn run_live_session(
    driver: &mut ClientDriver,
    dns_addr: &str,
    clock: &dyn Clock,
    until: f64,
) -> Result<(), ServiceError> {
    let timeout = Duration::from_secs(2);
    let mut conns: HashMap<String, Connection> = HashMap::new();
    loop {
        let now = clock.now();
        if now >= until {
            return Ok(());
        }
        match driver.next_step(now) {
            Step::Send(target, body) => {
                let addr = match target {
                    Target::Dns => dns_addr.to_string(),
                    Target::Server(a) => a,
                };
                let reply = match conns.entry(addr.clone()) {
                    std::collections::hash_map::Entry::Occupied(mut e) => e.get_mut().call(body),
                    std::collections::hash_map::Entry::Vacant(v) => {
                        Connection::connect(&addr, timeout).and_then(|c| v.insert(c).call(body))
                    }
                };
                if matches!(reply, Err(ServiceError::Io(_) | ServiceError::Protocol(_))) {
                    conns.remove(&addr);
                }
                driver.on_reply(clock.now(), reply);
            }
            Step::Solve(pz) => match solve_puzzle(&pz) {
                Ok(sol) => driver.on_solved(clock.now(), &sol),
                Err(e) => driver.on_reply(clock.now(), Err(ServiceError::Protocol(e.to_string()))),
            },
            Step::SleepUntil(t) => {
                let dt = (t.min(until) - clock.now()).max(0.0);
                std::thread::sleep(Duration::from_secs_f64(dt.max(0.001)));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use mirage_core::hop::Prefix;

    pub(crate) fn spec(clients: Vec<f64>, duration_s: f64) -> SessionSpec {
        SessionSpec {
            hop: HopConfig::new([5; 16], Prefix::new(0x2001_0db8_0000_0002, 64).unwrap(), 4096)
                .unwrap()
                .with_timing(60, 5)
                .unwrap(),
            puzzle: PuzzleParams::default(),
            services: ServicesParams {
                clients,
                ..ServicesParams::default()
            },
            duration_s,
        }
    }

    #[test]
    fn failover_follows_three_probe_periods() {
        let r = client_session(&spec(vec![1.0], 20.0), 1).unwrap();
        assert_eq!(r.summary["failover_s"], 6.0);
        assert!(r.summary["client-0.acquired"] > 10.0);
    }

    #[test]
    fn no_attack_means_no_puzzles() {
        let mut s = spec(vec![1.0], 30.0);
        s.services.attack_start_s = 1e9;
        let r = client_session(&s, 1).unwrap();
        assert_eq!(r.summary["client-0.acquired"], 0.0);
        assert!(!r.summary.contains_key("failover_s"));
    }

    #[test]
    fn summary_matches_records() {
        let r = client_session(&spec(vec![1.0, 2.0], 100.0), 3).unwrap();
        for i in 0..2 {
            let e = format!("client-{i}");
            assert_eq!(r.sum(&e, "acquired", 0.0, 1e9), r.summary[&format!("{e}.acquired")]);
        }
    }

    #[test]
    fn auction_session_acquires_through_grants() {
        let mut s = spec(vec![1.0], 60.0);
        s.services.mode = ServerMode::Auction;
        s.puzzle.base_difficulty = 8;
        let r = client_session(&s, 2).unwrap();
        // A single requester never competes, so every solution is granted
        // once the bucket has a token.
        assert!(r.summary["client-0.acquired"] > 20.0, "{:?}", r.summary);
    }

    #[test]
    fn deterministic_per_seed() {
        let s = spec(vec![1.0, 3.0], 120.0);
        assert_eq!(
            client_session(&s, 8).unwrap().to_csv(),
            client_session(&s, 8).unwrap().to_csv()
        );
    }
}
