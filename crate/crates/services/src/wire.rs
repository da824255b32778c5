//! Newline-delimited JSON messages.
//!
//! Every line is one envelope: `{"type": ..., "req_id": n, "version": 1,
//! "body": {...}}`. Replies echo the request's `req_id`.

use mirage_core::hop::Suffix;
use mirage_core::puzzle::Puzzle;
use serde::{Deserialize, Serialize};

use crate::ServiceError;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DnsMode {
    Normal,
    UnderAttack,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "body")]
pub enum Body {
    Resolve {
        name: String,
    },
    ResolveReply {
        address: String,
        ttl_s: u64,
        mode: DnsMode,
    },
    GetPuzzle {
        requester: u64,
    },
    PuzzleMsg {
        puzzle: Puzzle,
        /// Auction puzzles must be submitted; self-service ones are simply solved.
        submit: bool,
    },
    SubmitSolution {
        requester: u64,
        index: u64,
        interval: u64,
        suffix: Suffix,
    },
    Grant {
        suffix: Suffix,
        interval: u64,
        slot: u64,
    },
    Escalate {
        new_difficulty: u8,
    },
    Error {
        code: String,
        message: String,
    },
}

impl Body {
    pub fn error(e: &ServiceError) -> Body {
        Body::Error {
            code: e.code().to_string(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub req_id: u64,
    pub version: u32,
    #[serde(flatten)]
    pub body: Body,
}

impl Envelope {
    pub fn new(req_id: u64, body: Body) -> Self {
        Envelope {
            req_id,
            version: PROTOCOL_VERSION,
            body,
        }
    }

    pub fn reply(&self, body: Body) -> Self {
        Envelope::new(self.req_id, body)
    }

    /// One line, newline-terminated.
    pub fn encode(&self) -> String {
        let mut s = serde_json::to_string(self).expect("envelope always serializes");
        s.push('\n');
        s
    }

    pub fn decode(line: &str) -> Result<Self, ServiceError> {
        let env: Envelope = serde_json::from_str(line.trim_end()).map_err(|e| ServiceError::Protocol(e.to_string()))?;
        if env.version != PROTOCOL_VERSION {
            return Err(ServiceError::UnsupportedVersion(env.version));
        }
        Ok(env)
    }
}
