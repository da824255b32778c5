//! Loopback services: the DNS failover resolver, the puzzle distribution
//! server and the client driver that talks to both.
//!
//! Handlers are plain state machines implementing [`Service`]; the TCP
//! transport in [`net`] and the in-process simulation in [`session`] drive the
//! same code.

pub mod dns;
pub mod driver;
pub mod net;
pub mod puzzle_server;
pub mod session;
pub mod wire;

use std::time::{SystemTime, UNIX_EPOCH};

use thiserror::Error;

pub use dns::{dns_step, resolve, DnsConfig, DnsState};
pub use driver::{coverage_gaps, ClientDriver, DriverConfig, Held, Step, Target};
pub use net::{spawn_server, Connection, ServerHandle};
pub use puzzle_server::{victim_batch, Auction, Batch, PuzzleServerState, SelfService};
pub use session::{client_session, run_live_session, ServerMode, ServicesParams, SessionSpec};
pub use wire::{Body, DnsMode, Envelope, PROTOCOL_VERSION};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ServiceError {
    #[error("no puzzles left for this interval")]
    BatchExhausted,
    #[error("solution does not match the puzzle")]
    InvalidSolution,
    #[error("no outstanding puzzle with that index")]
    UnknownPuzzle,
    #[error("unsupported request: {0}")]
    Unsupported(String),
    #[error("unsupported protocol version {0}")]
    UnsupportedVersion(u32),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::BatchExhausted => "batch_exhausted",
            ServiceError::InvalidSolution => "invalid_solution",
            ServiceError::UnknownPuzzle => "unknown_puzzle",
            ServiceError::Unsupported(_) => "unsupported",
            ServiceError::UnsupportedVersion(_) => "unsupported_version",
            ServiceError::Protocol(_) => "protocol",
            ServiceError::Io(_) => "io",
        }
    }

    /// Rebuilds an error from an `Error` reply.
    pub fn from_wire(code: &str, message: &str) -> ServiceError {
        match code {
            "batch_exhausted" => ServiceError::BatchExhausted,
            "invalid_solution" => ServiceError::InvalidSolution,
            "unknown_puzzle" => ServiceError::UnknownPuzzle,
            "unsupported" => ServiceError::Unsupported(message.to_string()),
            "io" => ServiceError::Io(message.to_string()),
            _ => ServiceError::Protocol(format!("{code}: {message}")),
        }
    }
}

impl From<std::io::Error> for ServiceError {
    fn from(e: std::io::Error) -> Self {
        ServiceError::Io(e.to_string())
    }
}

/// Identifies the connection a deferred reply goes back to.
pub type Token = u64;

/// A request handler. Calls are serialized by whoever drives it.
pub trait Service {
    /// Immediate reply, or `None` to answer later from [`Service::tick`].
    fn handle(&mut self, req: &Envelope, token: Token, now: f64) -> Option<Envelope>;

    fn tick(&mut self, _now: f64) -> Vec<(Token, Envelope)> {
        Vec::new()
    }

    /// Seconds between ticks; `None` means the service never ticks.
    fn tick_period(&self) -> Option<f64> {
        None
    }
}

pub trait Clock: Send + Sync {
    /// Seconds since the Unix epoch, or since the start of a simulation.
    fn now(&self) -> f64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> f64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0.0, |d| d.as_secs_f64())
    }
}
