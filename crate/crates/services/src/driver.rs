//! Client side of the protocol as a poll-driven state machine.
//!
//! The driver never does I/O itself. A runner asks [`ClientDriver::next_step`]
//! what to do, performs it (over TCP, or inside a simulation) and feeds the
//! outcome back through [`ClientDriver::on_reply`] or
//! [`ClientDriver::on_solved`]. The loop is the continuous-solving client:
//! resolve, fetch, solve, hold, fetch again.

use mirage_core::hop::Suffix;
use mirage_core::puzzle::{Puzzle, PuzzleSolution};
use serde::{Deserialize, Serialize};

use crate::wire::{Body, DnsMode};
use crate::ServiceError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriverConfig {
    pub requester: u64,
    pub name: String,
    pub interval_seconds: u64,
    pub grace_seconds: u64,
    pub backoff_base_s: f64,
    pub backoff_cap_s: f64,
}

impl Default for DriverConfig {
    fn default() -> Self {
        DriverConfig {
            requester: 0,
            name: "victim.example".into(),
            interval_seconds: mirage_core::hop::DEFAULT_INTERVAL_SECONDS,
            grace_seconds: mirage_core::hop::DEFAULT_GRACE_SECONDS,
            backoff_base_s: 1.0,
            backoff_cap_s: 30.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Target {
    Dns,
    Server(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    Send(Target, Body),
    Solve(Puzzle),
    SleepUntil(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Held {
    pub suffix: Suffix,
    pub interval: u64,
    pub acquired_at: f64,
}

impl Held {
    /// Interval during which routers accept the suffix, grace included.
    pub fn window(&self, interval_seconds: u64, grace_seconds: u64) -> (f64, f64) {
        let start = (self.interval * interval_seconds) as f64;
        let end = ((self.interval + 1) * interval_seconds + grace_seconds) as f64;
        (start.max(self.acquired_at), end)
    }
}

#[derive(Debug, Clone)]
struct Route {
    address: String,
    expires: f64,
    mode: DnsMode,
}

#[derive(Debug, Clone, PartialEq)]
enum Phase {
    Ready,
    Awaiting,
    Solving(Puzzle, bool),
    Submit(Body),
    Sleep(f64),
}

#[derive(Debug, Clone)]
pub struct ClientDriver {
    pub cfg: DriverConfig,
    route: Option<Route>,
    phase: Phase,
    failures: u32,
    history: Vec<Held>,
    rr: usize,
}

impl ClientDriver {
    pub fn new(cfg: DriverConfig) -> Self {
        ClientDriver {
            cfg,
            route: None,
            phase: Phase::Ready,
            failures: 0,
            history: Vec::new(),
            rr: 0,
        }
    }

    pub fn next_step(&mut self, now: f64) -> Step {
        loop {
            match &self.phase {
                Phase::Sleep(until) if now < *until => return Step::SleepUntil(*until),
                Phase::Sleep(_) => self.phase = Phase::Ready,
                Phase::Awaiting => return Step::SleepUntil(now),
                Phase::Solving(pz, _) => return Step::Solve(*pz),
                Phase::Submit(body) => {
                    let body = body.clone();
                    self.phase = Phase::Awaiting;
                    return Step::Send(self.server_target(), body);
                }
                Phase::Ready => break,
            }
        }
        match &self.route {
            Some(r) if now < r.expires => {
                if r.mode == DnsMode::Normal {
                    // The victim is reachable directly; nothing to solve.
                    self.phase = Phase::Sleep(r.expires);
                    return Step::SleepUntil(r.expires);
                }
                self.phase = Phase::Awaiting;
                Step::Send(
                    self.server_target(),
                    Body::GetPuzzle {
                        requester: self.cfg.requester,
                    },
                )
            }
            _ => {
                self.route = None;
                self.phase = Phase::Awaiting;
                Step::Send(
                    Target::Dns,
                    Body::Resolve {
                        name: self.cfg.name.clone(),
                    },
                )
            }
        }
    }

    fn server_target(&self) -> Target {
        Target::Server(self.route.as_ref().map_or_else(String::new, |r| r.address.clone()))
    }

    pub fn on_reply(&mut self, now: f64, reply: Result<Body, ServiceError>) {
        match reply {
            Ok(Body::ResolveReply { address, ttl_s, mode }) => {
                self.failures = 0;
                self.route = Some(Route {
                    address,
                    expires: now + ttl_s as f64,
                    mode,
                });
                self.phase = Phase::Ready;
            }
            Ok(Body::PuzzleMsg { puzzle, submit }) => {
                self.failures = 0;
                self.phase = Phase::Solving(puzzle, submit);
            }
            Ok(Body::Grant { suffix, interval, .. }) => {
                self.failures = 0;
                self.hold(suffix, interval, now);
                self.phase = Phase::Ready;
            }
            // The server remembers the new difficulty; just ask again.
            Ok(Body::Escalate { .. }) => self.phase = Phase::Ready,
            Ok(other) => self.back_off(now, &ServiceError::Protocol(format!("unexpected {other:?}"))),
            Err(e) => self.back_off(now, &e),
        }
    }

    pub fn on_solved(&mut self, now: f64, sol: &PuzzleSolution) {
        let Phase::Solving(pz, submit) = self.phase.clone() else {
            return;
        };
        if submit {
            self.phase = Phase::Submit(Body::SubmitSolution {
                requester: self.cfg.requester,
                index: pz.index,
                interval: pz.interval,
                suffix: sol.suffix.value,
            });
        } else {
            self.hold(sol.suffix.value, pz.interval, now);
            self.phase = Phase::Ready;
        }
    }

    fn back_off(&mut self, now: f64, e: &ServiceError) {
        self.failures += 1;
        let exp = self.failures.saturating_sub(1).min(30) as i32;
        let mut delay = (self.cfg.backoff_base_s * 2f64.powi(exp)).min(self.cfg.backoff_cap_s);
        match e {
            // Fresh puzzles appear at the next rollover.
            ServiceError::BatchExhausted => delay = delay.min(self.until_rollover(now)),
            ServiceError::Io(_) => self.route = None,
            _ => {}
        }
        log::debug!("requester {}: {e}; retrying in {delay:.3} s", self.cfg.requester);
        self.phase = Phase::Sleep(now + delay);
    }

    fn until_rollover(&self, now: f64) -> f64 {
        let i = self.cfg.interval_seconds.max(1) as f64;
        ((now / i).floor() + 1.0) * i - now + 1e-3
    }

    fn hold(&mut self, suffix: Suffix, interval: u64, now: f64) {
        self.history.push(Held {
            suffix,
            interval,
            acquired_at: now,
        });
    }

    /// Every suffix ever acquired, in order.
    pub fn history(&self) -> &[Held] {
        &self.history
    }

    pub fn valid_at(&self, now: f64) -> Vec<Suffix> {
        self.history
            .iter()
            .filter(|h| {
                let (a, b) = h.window(self.cfg.interval_seconds, self.cfg.grace_seconds);
                a <= now && now < b
            })
            .map(|h| h.suffix)
            .collect()
    }

    /// Destination for the next packet, rotating over the valid suffixes.
    pub fn next_destination(&mut self, now: f64) -> Option<Suffix> {
        let valid = self.valid_at(now);
        if valid.is_empty() {
            return None;
        }
        self.rr = self.rr.wrapping_add(1);
        Some(valid[self.rr % valid.len()])
    }

    pub fn failures(&self) -> u32 {
        self.failures
    }
}

/// Stretches of `[from, to)` during which none of `held` was valid.
pub fn coverage_gaps(held: &[Held], interval_seconds: u64, grace_seconds: u64, from: f64, to: f64) -> Vec<(f64, f64)> {
    let mut windows: Vec<(f64, f64)> = held
        .iter()
        .map(|h| h.window(interval_seconds, grace_seconds))
        .filter(|&(a, b)| a < b)
        .collect();
    windows.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut gaps = Vec::new();
    let mut covered = from;
    for (a, b) in windows {
        if a > covered && covered < to {
            gaps.push((covered, a.min(to)));
        }
        covered = covered.max(b);
    }
    if covered < to {
        gaps.push((covered, to));
    }
    gaps
}
