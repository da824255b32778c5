//! Trapdoor puzzles whose solution is an active address suffix, and the
//! leaky-bucket auction that rations suffix grants by puzzle difficulty.
//!
//! The victim encrypts `R || suffix` under a fresh 128-bit key and publishes
//! the ciphertext, `R`, and the key with its low `d` bits cleared. A client
//! recovers the suffix by trying all `2^d` completions of the key; the victim
//! knows the answer without any search because it derived the suffix itself.

use aes::cipher::{generic_array::GenericArray, BlockDecrypt, BlockEncrypt, KeyInit};
use aes::Aes128;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hex_serde::{u128_hex, u64_hex};
use crate::hop::{derive_suffix, AddressSuffix, HopConfig, Prefix, Suffix};

pub const MAX_DIFFICULTY: u8 = 30;
/// Length of the canonical binary encoding.
pub const PUZZLE_WIRE_LEN: usize = 59;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PuzzleError {
    #[error("difficulty {0} outside [0, {MAX_DIFFICULTY}]")]
    DifficultyOutOfRange(u8),
    #[error("check value width {0} unsupported; puzzles need a prefix length in [32, 64]")]
    UnsupportedWidth(u8),
    #[error("no key completion decrypts to the check value")]
    Unsolvable,
    #[error("malformed puzzle: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Puzzle {
    pub prefix: Prefix,
    /// Width of the check value `R`; always `128 - suffix_bits`.
    pub r_bits: u8,
    pub difficulty: u8,
    #[serde(with = "u64_hex")]
    pub check: u64,
    #[serde(with = "u128_hex")]
    pub cipher: u128,
    #[serde(with = "u128_hex")]
    pub partial_key: u128,
    pub index: u64,
    pub interval: u64,
}

/// Server-side trapdoor: the full key and the suffix it hides.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PuzzleOracle {
    pub key: u128,
    pub suffix: AddressSuffix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PuzzleSolution {
    pub suffix: AddressSuffix,
    pub attempts: u64,
    pub solved_key: u128,
}

fn low_mask(bits: u32) -> u128 {
    if bits >= 128 {
        u128::MAX
    } else {
        (1u128 << bits) - 1
    }
}

fn aes(key: u128) -> Aes128 {
    Aes128::new(GenericArray::from_slice(&key.to_be_bytes()))
}

fn check_width(prefix: &Prefix) -> Result<u8, PuzzleError> {
    // R must fit the 8-byte wire field and leave false positives negligible.
    if (32..=64).contains(&prefix.len) {
        Ok(prefix.len)
    } else {
        Err(PuzzleError::UnsupportedWidth(prefix.len))
    }
}

impl Puzzle {
    pub fn suffix_bits(&self) -> u32 {
        128 - u32::from(self.r_bits)
    }

    pub fn validate(&self) -> Result<(), PuzzleError> {
        if self.difficulty > MAX_DIFFICULTY {
            return Err(PuzzleError::DifficultyOutOfRange(self.difficulty));
        }
        let r = check_width(&self.prefix)?;
        if r != self.r_bits {
            return Err(PuzzleError::Malformed(format!(
                "r_bits {} does not complement prefix length {}",
                self.r_bits, self.prefix.len
            )));
        }
        if r < 64 && self.check >> r != 0 {
            return Err(PuzzleError::Malformed("check value wider than r_bits".into()));
        }
        if self.partial_key & low_mask(u32::from(self.difficulty)) != 0 {
            return Err(PuzzleError::Malformed("partial key has withheld bits set".into()));
        }
        Ok(())
    }

    /// Canonical big-endian layout:
    /// `P | r | d | R(8) | cipher(16) | partial_key(16) | i(8) | T(8)`.
    pub fn to_bytes(&self) -> [u8; PUZZLE_WIRE_LEN] {
        let mut out = [0u8; PUZZLE_WIRE_LEN];
        out[0] = self.prefix.len;
        out[1] = self.r_bits;
        out[2] = self.difficulty;
        out[3..11].copy_from_slice(&self.check.to_be_bytes());
        out[11..27].copy_from_slice(&self.cipher.to_be_bytes());
        out[27..43].copy_from_slice(&self.partial_key.to_be_bytes());
        out[43..51].copy_from_slice(&self.index.to_be_bytes());
        out[51..59].copy_from_slice(&self.interval.to_be_bytes());
        out
    }

    /// Inverse of [`Puzzle::to_bytes`]. The layout carries only the prefix
    /// length, so the caller supplies the prefix bits (known from resolution).
    pub fn from_bytes(buf: &[u8], prefix_bits: u128) -> Result<Self, PuzzleError> {
        if buf.len() != PUZZLE_WIRE_LEN {
            return Err(PuzzleError::Malformed(format!(
                "expected {PUZZLE_WIRE_LEN} bytes, got {}",
                buf.len()
            )));
        }
        let u64_at = |o: usize| u64::from_be_bytes(buf[o..o + 8].try_into().unwrap());
        let u128_at = |o: usize| u128::from_be_bytes(buf[o..o + 16].try_into().unwrap());
        let prefix = Prefix::new(prefix_bits, buf[0]).map_err(|e| PuzzleError::Malformed(e.to_string()))?;
        let pz = Puzzle {
            prefix,
            r_bits: buf[1],
            difficulty: buf[2],
            check: u64_at(3),
            cipher: u128_at(11),
            partial_key: u128_at(27),
            index: u64_at(43),
            interval: u64_at(51),
        };
        pz.validate()?;
        Ok(pz)
    }
}

/// Builds puzzle `i` of interval `t` at difficulty `d`. All randomness comes
/// from `rng_seed`.
pub fn make_puzzle(
    hop: &HopConfig,
    i: u64,
    t: u64,
    d: u8,
    rng_seed: u64,
) -> Result<(Puzzle, PuzzleOracle), PuzzleError> {
    let mut rng = ChaCha20Rng::seed_from_u64(rng_seed);
    make_puzzle_with(hop, i, t, d, &mut rng)
}

pub fn make_puzzle_with<R: Rng + ?Sized>(
    hop: &HopConfig,
    i: u64,
    t: u64,
    d: u8,
    rng: &mut R,
) -> Result<(Puzzle, PuzzleOracle), PuzzleError> {
    if d > MAX_DIFFICULTY {
        return Err(PuzzleError::DifficultyOutOfRange(d));
    }
    let r = check_width(&hop.prefix)?;
    let suffix = derive_suffix(hop, i, t);
    let key: u128 = rng.random();
    let check = rng.random::<u64>() & (low_mask(u32::from(r)) as u64);
    let suffix_bits = hop.suffix_bits();
    let plaintext = (u128::from(check) << suffix_bits) | suffix.value.0;
    let mut block = GenericArray::from(plaintext.to_be_bytes());
    aes(key).encrypt_block(&mut block);
    let puzzle = Puzzle {
        prefix: hop.prefix,
        r_bits: r,
        difficulty: d,
        check,
        cipher: u128::from_be_bytes(block.into()),
        partial_key: key & !low_mask(u32::from(d)),
        index: i,
        interval: t,
    };
    Ok((puzzle, PuzzleOracle { key, suffix }))
}

/// Exhaustive search over the withheld key bits, lowest candidate first.
pub fn solve_puzzle(pz: &Puzzle) -> Result<PuzzleSolution, PuzzleError> {
    pz.validate()?;
    let suffix_bits = pz.suffix_bits();
    let ct = pz.cipher.to_be_bytes();
    let want = u128::from(pz.check);
    for k in 0..(1u128 << pz.difficulty) {
        let key = pz.partial_key | k;
        let mut block = GenericArray::from(ct);
        aes(key).decrypt_block(&mut block);
        let pt = u128::from_be_bytes(block.into());
        if pt >> suffix_bits == want {
            return Ok(PuzzleSolution {
                suffix: AddressSuffix {
                    value: Suffix(pt & low_mask(suffix_bits)),
                    index: pz.index,
                    interval: pz.interval,
                },
                attempts: k as u64 + 1,
                solved_key: key,
            });
        }
    }
    Err(PuzzleError::Unsolvable)
}

/// Trapdoor check: the victim already knows which suffix a puzzle hides.
pub fn verify_claim(_pz: &Puzzle, claimed: Suffix, oracle: Suffix) -> bool {
    claimed == oracle
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendingSolution {
    pub requester: u64,
    pub difficulty: u8,
    pub arrival: f64,
    pub valid: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grant {
    pub requester: u64,
    pub slot: u64,
    pub difficulty: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Escalation {
    pub requester: u64,
    pub new_difficulty: u8,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AllocatorOutcome {
    pub grants: Vec<Grant>,
    pub escalations: Vec<Escalation>,
    /// Requesters whose submissions failed validation.
    pub rejected: Vec<u64>,
}

/// Leaky bucket of address grants. Tokens drip in at `release_rate` per
/// second; each step hands them to the hardest pending solutions and tells
/// everyone else to come back with a harder puzzle.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocatorState {
    pub bucket_capacity: f64,
    pub release_rate: f64,
    pub tokens: f64,
    pub pending: Vec<PendingSolution>,
    last_update: f64,
    next_slot: u64,
}

impl AllocatorState {
    /// Starts with an empty bucket at time `now`.
    pub fn new(bucket_capacity: f64, release_rate: f64, now: f64) -> Self {
        assert!(bucket_capacity >= 1.0 && release_rate > 0.0);
        AllocatorState {
            bucket_capacity,
            release_rate,
            tokens: 0.0,
            pending: Vec::new(),
            last_update: now,
            next_slot: 0,
        }
    }

    pub fn with_tokens(mut self, tokens: f64) -> Self {
        self.tokens = tokens.clamp(0.0, self.bucket_capacity);
        self
    }

    /// Total grants issued so far.
    pub fn granted(&self) -> u64 {
        self.next_slot
    }

    pub fn step(&mut self, now: f64, new_solutions: impl IntoIterator<Item = PendingSolution>) -> AllocatorOutcome {
        if now > self.last_update {
            self.tokens = (self.tokens + self.release_rate * (now - self.last_update)).min(self.bucket_capacity);
            self.last_update = now;
        }

        let mut out = AllocatorOutcome::default();
        for s in new_solutions {
            if s.valid {
                self.pending.push(s);
            } else {
                out.rejected.push(s.requester);
            }
        }
        if self.pending.is_empty() {
            return out;
        }

        // Hardest first, then earliest, then lowest id.
        self.pending.sort_by(|a, b| {
            b.difficulty
                .cmp(&a.difficulty)
                .then(a.arrival.total_cmp(&b.arrival))
                .then(a.requester.cmp(&b.requester))
        });
        let mut rest = std::mem::take(&mut self.pending).into_iter();
        while self.tokens >= 1.0 {
            let Some(s) = rest.next() else { break };
            self.tokens -= 1.0;
            out.grants.push(Grant {
                requester: s.requester,
                slot: self.next_slot,
                difficulty: s.difficulty,
            });
            self.next_slot += 1;
        }
        out.escalations.extend(rest.map(|s| Escalation {
            requester: s.requester,
            new_difficulty: (s.difficulty + 1).min(MAX_DIFFICULTY),
        }));
        out
    }
}
