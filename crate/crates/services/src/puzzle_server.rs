//! Puzzle distribution.
//!
//! Self-service mode hands out puzzles the victim generated and uploaded; the
//! server never sees the master key and never verifies anything. Auction mode
//! is the trusted prototype: it mints puzzles at each requester's current
//! difficulty and runs the leaky-bucket allocator over submitted solutions.

use std::collections::{BTreeMap, HashMap};

use mirage_core::hop::{HopConfig, Suffix};
use mirage_core::puzzle::{
    make_puzzle, make_puzzle_with, verify_claim, AllocatorState, PendingSolution, Puzzle, PuzzleError, PuzzleOracle,
};
use mirage_simnet::PuzzleParams;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::wire::{Body, Envelope};
use crate::{Service, ServiceError, Token};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub interval: u64,
    pub puzzles: Vec<Puzzle>,
}

/// What the victim uploads each interval: one puzzle per slot `0..count`.
pub fn victim_batch(hop: &HopConfig, interval: u64, d: u8, count: usize, seed: u64) -> Result<Batch, PuzzleError> {
    let count = count.min(hop.set_size) as u64;
    let puzzles = (0..count)
        .map(|i| make_puzzle(hop, i, interval, d, seed ^ (interval << 20) ^ i).map(|(p, _)| p))
        .collect::<Result<_, _>>()?;
    Ok(Batch { interval, puzzles })
}

#[derive(Debug, Default)]
struct Served {
    puzzles: Vec<Puzzle>,
    next: usize,
}

/// Untrusted distributor: holds puzzles and nothing else.
#[derive(Debug)]
pub struct SelfService {
    interval_seconds: u64,
    batches: BTreeMap<u64, Served>,
}

impl SelfService {
    pub fn new(interval_seconds: u64) -> Self {
        SelfService {
            interval_seconds: interval_seconds.max(1),
            batches: BTreeMap::new(),
        }
    }

    pub fn interval_at(&self, now: f64) -> u64 {
        (now.max(0.0) / self.interval_seconds as f64).floor() as u64
    }

    /// Batches may arrive ahead of their interval; they are held until then.
    pub fn upload(&mut self, batch: Batch) {
        self.batches.insert(
            batch.interval,
            Served {
                puzzles: batch.puzzles,
                next: 0,
            },
        );
    }

    /// Next unserved puzzle of the current interval, falling back to the
    /// previous interval's leftovers.
    pub fn serve(&mut self, now: f64) -> Result<Puzzle, ServiceError> {
        let t = self.interval_at(now);
        self.batches.retain(|&i, _| i + 1 >= t);
        for i in [Some(t), t.checked_sub(1)].into_iter().flatten() {
            if let Some(b) = self.batches.get_mut(&i) {
                if let Some(p) = b.puzzles.get(b.next) {
                    b.next += 1;
                    return Ok(*p);
                }
            }
        }
        Err(ServiceError::BatchExhausted)
    }

    pub fn remaining(&self, interval: u64) -> usize {
        self.batches.get(&interval).map_or(0, |b| b.puzzles.len() - b.next)
    }
}

struct Waiting {
    token: Token,
    req_id: u64,
    requester: u64,
    suffix: Suffix,
    interval: u64,
}

/// Trusted prototype server holding the hopping key.
pub struct Auction {
    hop: HopConfig,
    params: PuzzleParams,
    allocator: AllocatorState,
    rng: ChaCha8Rng,
    next_index: u64,
    difficulty: HashMap<u64, u8>,
    outstanding: HashMap<(u64, u64, u64), (Puzzle, PuzzleOracle)>,
    arrivals: Vec<PendingSolution>,
    waiting: HashMap<u64, Waiting>,
    next_submission: u64,
    grants_sent: u64,
}

impl Auction {
    pub fn new(hop: HopConfig, params: PuzzleParams, now: f64, seed: u64) -> Self {
        Auction {
            allocator: AllocatorState::new(params.bucket_capacity, params.release_rate, now),
            hop,
            params,
            rng: ChaCha8Rng::seed_from_u64(seed),
            next_index: 0,
            difficulty: HashMap::new(),
            outstanding: HashMap::new(),
            arrivals: Vec::new(),
            waiting: HashMap::new(),
            next_submission: 0,
            grants_sent: 0,
        }
    }

    pub fn difficulty_of(&self, requester: u64) -> u8 {
        *self.difficulty.get(&requester).unwrap_or(&self.params.base_difficulty)
    }

    pub fn serve(&mut self, requester: u64, now: f64) -> Result<Puzzle, ServiceError> {
        let t = self.hop.interval_at(now.max(0.0) as u64);
        let i = self.next_index % self.hop.set_size as u64;
        self.next_index += 1;
        let d = self.difficulty_of(requester);
        let (pz, oracle) = make_puzzle_with(&self.hop, i, t, d, &mut self.rng)
            .map_err(|e| ServiceError::Unsupported(e.to_string()))?;
        self.outstanding.insert((requester, i, t), (pz, oracle));
        Ok(pz)
    }

    /// Queues a claimed solution for the next auction round. Each puzzle can
    /// be submitted once.
    #[allow(clippy::too_many_arguments)]
    pub fn submit(
        &mut self,
        requester: u64,
        index: u64,
        interval: u64,
        claimed: Suffix,
        token: Token,
        req_id: u64,
        now: f64,
    ) -> Result<(), ServiceError> {
        let (pz, oracle) = self
            .outstanding
            .remove(&(requester, index, interval))
            .ok_or(ServiceError::UnknownPuzzle)?;
        if !verify_claim(&pz, claimed, oracle.suffix.value) {
            return Err(ServiceError::InvalidSolution);
        }
        let id = self.next_submission;
        self.next_submission += 1;
        self.arrivals.push(PendingSolution {
            requester: id,
            difficulty: pz.difficulty,
            arrival: now,
            valid: true,
        });
        self.waiting.insert(
            id,
            Waiting {
                token,
                req_id,
                requester,
                suffix: claimed,
                interval,
            },
        );
        Ok(())
    }

    /// One auction round. Winners get their address; everyone else is told to
    /// come back one bit harder.
    pub fn tick(&mut self, now: f64) -> Vec<(Token, Envelope)> {
        let out = self.allocator.step(now, std::mem::take(&mut self.arrivals));
        let mut replies = Vec::new();
        for g in out.grants {
            let w = self
                .waiting
                .remove(&g.requester)
                .expect("every pending solution has a waiter");
            self.difficulty.remove(&w.requester);
            self.grants_sent += 1;
            let body = Body::Grant {
                suffix: w.suffix,
                interval: w.interval,
                slot: g.slot,
            };
            replies.push((w.token, Envelope::new(w.req_id, body)));
        }
        for e in out.escalations {
            let w = self
                .waiting
                .remove(&e.requester)
                .expect("every pending solution has a waiter");
            let d = self
                .difficulty
                .entry(w.requester)
                .or_insert(self.params.base_difficulty);
            *d = (*d).max(e.new_difficulty);
            let body = Body::Escalate {
                new_difficulty: e.new_difficulty,
            };
            replies.push((w.token, Envelope::new(w.req_id, body)));
        }
        let t = self.hop.interval_at(now.max(0.0) as u64);
        self.outstanding.retain(|&(_, _, i), _| i + 1 >= t);
        replies
    }

    /// Allocator tokens spent.
    pub fn tokens_spent(&self) -> u64 {
        self.allocator.granted()
    }

    /// Grant replies produced.
    pub fn grants_sent(&self) -> u64 {
        self.grants_sent
    }
}

pub enum PuzzleServerState {
    SelfService(SelfService),
    Auction(Box<Auction>),
}

impl PuzzleServerState {
    pub fn serve_puzzle(&mut self, requester: u64, now: f64) -> Result<Body, ServiceError> {
        match self {
            PuzzleServerState::SelfService(s) => s.serve(now).map(|puzzle| Body::PuzzleMsg { puzzle, submit: false }),
            PuzzleServerState::Auction(a) => a
                .serve(requester, now)
                .map(|puzzle| Body::PuzzleMsg { puzzle, submit: true }),
        }
    }

    /// Accepts a victim upload; the auction server mints its own puzzles.
    pub fn upload(&mut self, batch: Batch) {
        if let PuzzleServerState::SelfService(s) = self {
            s.upload(batch);
        }
    }
}

impl Service for PuzzleServerState {
    fn handle(&mut self, req: &Envelope, token: Token, now: f64) -> Option<Envelope> {
        let body = match (&req.body, &mut *self) {
            (Body::GetPuzzle { requester }, st) => st.serve_puzzle(*requester, now),
            (
                Body::SubmitSolution {
                    requester,
                    index,
                    interval,
                    suffix,
                },
                PuzzleServerState::Auction(a),
            ) => match a.submit(*requester, *index, *interval, *suffix, token, req.req_id, now) {
                Ok(()) => return None,
                Err(e) => Err(e),
            },
            (other, _) => Err(ServiceError::Unsupported(format!("{other:?}"))),
        };
        Some(req.reply(body.unwrap_or_else(|e| Body::error(&e))))
    }

    fn tick(&mut self, now: f64) -> Vec<(Token, Envelope)> {
        match self {
            PuzzleServerState::SelfService(_) => Vec::new(),
            PuzzleServerState::Auction(a) => a.tick(now),
        }
    }

    fn tick_period(&self) -> Option<f64> {
        match self {
            PuzzleServerState::SelfService(_) => None,
            PuzzleServerState::Auction(a) => Some(a.params.tick_s),
        }
    }
}
