//! Health-checked resolver: points clients at the victim until probes fail,
//! then at the puzzle server until the victim has recovered.

use serde::{Deserialize, Serialize};

use crate::wire::{Body, DnsMode, Envelope};
use crate::{Service, ServiceError, Token};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DnsConfig {
    pub ttl_seconds: u64,
    /// Consecutive failed probes that trigger failover.
    pub fail_threshold: u32,
    /// Consecutive successful probes that end it.
    pub recover_threshold: u32,
    pub probe_period_ms: u64,
}

impl Default for DnsConfig {
    fn default() -> Self {
        DnsConfig {
            ttl_seconds: 5,
            fail_threshold: 3,
            recover_threshold: 5,
            probe_period_ms: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DnsState {
    pub victim: String,
    pub puzzle_server: String,
    pub cfg: DnsConfig,
    pub mode: DnsMode,
    fail_streak: u32,
    ok_streak: u32,
}

impl DnsState {
    pub fn new(victim: impl Into<String>, puzzle_server: impl Into<String>, cfg: DnsConfig) -> Self {
        DnsState {
            victim: victim.into(),
            puzzle_server: puzzle_server.into(),
            cfg,
            mode: DnsMode::Normal,
            fail_streak: 0,
            ok_streak: 0,
        }
    }

    pub fn record(&self) -> &str {
        match self.mode {
            DnsMode::Normal => &self.victim,
            DnsMode::UnderAttack => &self.puzzle_server,
        }
    }
}

pub fn dns_step(mut st: DnsState, probe_ok: bool) -> DnsState {
    if probe_ok {
        st.fail_streak = 0;
        st.ok_streak += 1;
        if st.mode == DnsMode::UnderAttack && st.ok_streak >= st.cfg.recover_threshold {
            st.mode = DnsMode::Normal;
            st.ok_streak = 0;
        }
    } else {
        st.ok_streak = 0;
        st.fail_streak += 1;
        if st.mode == DnsMode::Normal && st.fail_streak >= st.cfg.fail_threshold {
            st.mode = DnsMode::UnderAttack;
            st.fail_streak = 0;
        }
    }
    st
}

pub fn resolve(st: &DnsState) -> (String, u64) {
    (st.record().to_string(), st.cfg.ttl_seconds)
}

/// Resolver answering every name with the current record. Each tick collects
/// one health probe outcome; `None` means no outcome is available yet.
pub struct DnsService<P> {
    pub state: DnsState,
    probe: P,
}

impl<P: FnMut() -> Option<bool>> DnsService<P> {
    pub fn new(state: DnsState, probe: P) -> Self {
        DnsService { state, probe }
    }
}

impl<P: FnMut() -> Option<bool>> Service for DnsService<P> {
    fn handle(&mut self, req: &Envelope, _token: Token, _now: f64) -> Option<Envelope> {
        let body = match &req.body {
            Body::Resolve { .. } => {
                let (address, ttl_s) = resolve(&self.state);
                Body::ResolveReply {
                    address,
                    ttl_s,
                    mode: self.state.mode,
                }
            }
            other => Body::error(&ServiceError::Unsupported(format!("{other:?}"))),
        };
        Some(req.reply(body))
    }

    fn tick(&mut self, _now: f64) -> Vec<(Token, Envelope)> {
        let Some(ok) = (self.probe)() else {
            return Vec::new();
        };
        let before = self.state.mode;
        self.state = dns_step(self.state.clone(), ok);
        if self.state.mode != before {
            log::info!("dns record now {} ({:?})", self.state.record(), self.state.mode);
        }
        Vec::new()
    }

    fn tick_period(&self) -> Option<f64> {
        Some(self.state.cfg.probe_period_ms as f64 / 1000.0)
    }
}
