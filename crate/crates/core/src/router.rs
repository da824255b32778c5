//! Upstream dataplane: destination-suffix ACL with decoy leak detection, and
//! per-destination deficit round robin.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt::Write as _;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hop::{AddressTree, Prefix, Suffix};

pub const DEFAULT_QUANTUM: u32 = 1500;
pub const DEFAULT_QUEUE_LIMIT: usize = 64;
pub const DEFAULT_DECOYS: usize = 8;
pub const MIN_PACKET: u32 = 40;
pub const MAX_PACKET: u32 = 9000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RouterError {
    #[error("ACL update needs {requested} entries but the per-victim bound is {max}")]
    AclOverflow { requested: usize, max: usize },
    #[error("suffix {0} is listed as both allowed and decoy")]
    DecoyOverlap(Suffix),
    #[error("packet size {0} outside [{MIN_PACKET}, {MAX_PACKET}]")]
    PacketSize(u32),
    #[error("ACL snapshot line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub src: u64,
    pub dst_prefix: u128,
    pub dst_suffix: Suffix,
    pub size_bytes: u32,
    pub flow_id: u64,
    pub timestamp: f64,
}

impl Packet {
    pub fn new(
        src: u64,
        dst_prefix: u128,
        dst_suffix: Suffix,
        size_bytes: u32,
        flow_id: u64,
        timestamp: f64,
    ) -> Result<Self, RouterError> {
        if !(MIN_PACKET..=MAX_PACKET).contains(&size_bytes) {
            return Err(RouterError::PacketSize(size_bytes));
        }
        Ok(Packet {
            src,
            dst_prefix,
            dst_suffix,
            size_bytes,
            flow_id,
            timestamp,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterDecision {
    Forward,
    Drop,
    /// Traffic to a decoy: only a leaked ACL can produce it.
    ForwardAndAlarm,
}

/// Suffixes a victim currently accepts, plus decoys that no client is ever
/// given. Immutable once built apart from the decoy hit counters.
#[derive(Debug)]
pub struct AclTable {
    prefix: Prefix,
    allowed: HashSet<Suffix>,
    decoys: HashMap<Suffix, Arc<AtomicU64>>,
    max_entries: usize,
}

impl AclTable {
    pub fn new(prefix: Prefix, max_entries: usize) -> Self {
        AclTable {
            prefix,
            allowed: HashSet::new(),
            decoys: HashMap::new(),
            max_entries,
        }
    }

    pub fn prefix(&self) -> Prefix {
        self.prefix
    }

    pub fn max_entries(&self) -> usize {
        self.max_entries
    }

    pub fn allowed(&self) -> &HashSet<Suffix> {
        &self.allowed
    }

    pub fn decoys(&self) -> impl Iterator<Item = Suffix> + '_ {
        self.decoys.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.allowed.len() + self.decoys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn filter_packet(&self, pkt: &Packet) -> FilterDecision {
        if pkt.dst_prefix != self.prefix.bits {
            // Not addressed to the protected victim.
            return FilterDecision::Forward;
        }
        if self.allowed.contains(&pkt.dst_suffix) {
            FilterDecision::Forward
        } else if let Some(hits) = self.decoys.get(&pkt.dst_suffix) {
            hits.fetch_add(1, Ordering::Relaxed);
            FilterDecision::ForwardAndAlarm
        } else {
            FilterDecision::Drop
        }
    }

    /// Builds the replacement table. Decoys present in both tables keep
    /// sharing their hit counter.
    pub fn acl_update(
        &self,
        new_allowed: impl IntoIterator<Item = Suffix>,
        new_decoys: impl IntoIterator<Item = Suffix>,
    ) -> Result<AclTable, RouterError> {
        let allowed: HashSet<Suffix> = new_allowed.into_iter().collect();
        let decoy_set: HashSet<Suffix> = new_decoys.into_iter().collect();
        let requested = allowed.len() + decoy_set.len();
        if requested > self.max_entries {
            return Err(RouterError::AclOverflow {
                requested,
                max: self.max_entries,
            });
        }
        if let Some(s) = allowed.intersection(&decoy_set).min() {
            return Err(RouterError::DecoyOverlap(*s));
        }
        let decoys = decoy_set
            .into_iter()
            .map(|s| {
                let c = self.decoys.get(&s).cloned().unwrap_or_default();
                (s, c)
            })
            .collect();
        Ok(AclTable {
            prefix: self.prefix,
            allowed,
            decoys,
            max_entries: self.max_entries,
        })
    }

    pub fn decoy_hits(&self, s: Suffix) -> Option<u64> {
        self.decoys.get(&s).map(|c| c.load(Ordering::Relaxed))
    }

    /// Decoys that have seen traffic, sorted by suffix.
    pub fn detect_leak(&self) -> Vec<(Suffix, u64)> {
        let mut hit: Vec<_> = self
            .decoys
            .iter()
            .map(|(s, c)| (*s, c.load(Ordering::Relaxed)))
            .filter(|(_, n)| *n > 0)
            .collect();
        hit.sort();
        hit
    }

    /// Snapshot text: one hex suffix per line, decoys as `#decoy <hex>`.
    pub fn to_snapshot(&self) -> String {
        let mut allowed: Vec<_> = self.allowed.iter().collect();
        allowed.sort();
        let mut decoys: Vec<_> = self.decoys.keys().collect();
        decoys.sort();
        let mut out = String::new();
        for s in allowed {
            let _ = writeln!(out, "{s}");
        }
        for s in decoys {
            let _ = writeln!(out, "#decoy {s}");
        }
        out
    }
}

/// Parses an ACL snapshot into (allowed, decoys). Blank lines and other
/// `#` comments are skipped.
pub fn parse_acl_snapshot(text: &str) -> Result<(Vec<Suffix>, Vec<Suffix>), RouterError> {
    let mut allowed = Vec::new();
    let mut decoys = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let err = |msg: String| RouterError::Parse { line: n + 1, msg };
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("#decoy ") {
            decoys.push(Suffix(crate::parse_u128(rest.trim()).map_err(err)?));
        } else if line.starts_with('#') {
            continue;
        } else {
            allowed.push(Suffix(crate::parse_u128(line).map_err(err)?));
        }
    }
    Ok((allowed, decoys))
}

/// Draws `count` random suffixes outside `exclude`.
pub fn random_decoys<R: Rng + ?Sized>(
    rng: &mut R,
    count: usize,
    suffix_bits: u32,
    exclude: &HashSet<Suffix>,
) -> Vec<Suffix> {
    let mask = if suffix_bits >= 128 {
        u128::MAX
    } else {
        (1u128 << suffix_bits) - 1
    };
    let mut out = Vec::with_capacity(count);
    let mut seen = HashSet::new();
    while out.len() < count {
        let s = Suffix(rng.random::<u128>() & mask);
        if !exclude.contains(&s) && seen.insert(s) {
            out.push(s);
        }
    }
    out
}

/// Table holder that lets readers keep filtering against a consistent
/// snapshot while a management push swaps in a new one.
#[derive(Debug)]
pub struct SharedAcl {
    current: RwLock<Arc<AclTable>>,
}

impl SharedAcl {
    pub fn new(table: AclTable) -> Self {
        SharedAcl {
            current: RwLock::new(Arc::new(table)),
        }
    }

    pub fn snapshot(&self) -> Arc<AclTable> {
        self.current.read().unwrap().clone()
    }

    pub fn update(
        &self,
        new_allowed: impl IntoIterator<Item = Suffix>,
        new_decoys: impl IntoIterator<Item = Suffix>,
    ) -> Result<(), RouterError> {
        let mut guard = self.current.write().unwrap();
        let next = guard.acl_update(new_allowed, new_decoys)?;
        *guard = Arc::new(next);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DrrConfig {
    pub quantum: u32,
    /// Tail-drop bound per destination queue.
    pub queue_limit_packets: usize,
    /// Optional bound on bytes across all queues.
    pub buffer_limit_bytes: Option<u64>,
}

impl Default for DrrConfig {
    fn default() -> Self {
        DrrConfig {
            quantum: DEFAULT_QUANTUM,
            queue_limit_packets: DEFAULT_QUEUE_LIMIT,
            buffer_limit_bytes: None,
        }
    }
}

#[derive(Debug, Default)]
struct DestQueue {
    packets: VecDeque<Packet>,
    deficit: u64,
}

/// Deficit round robin keyed by destination suffix.
#[derive(Debug)]
pub struct DrrScheduler {
    cfg: DrrConfig,
    queues: HashMap<Suffix, DestQueue>,
    weights: HashMap<Suffix, u32>,
    active: VecDeque<Suffix>,
    /// Whether the queue at the front of `active` already got this round's quantum.
    head_credited: bool,
    buffered_bytes: u64,
    buffered_packets: usize,
}

impl DrrScheduler {
    pub fn new(cfg: DrrConfig) -> Self {
        assert!(cfg.quantum > 0);
        DrrScheduler {
            cfg,
            queues: HashMap::new(),
            weights: HashMap::new(),
            active: VecDeque::new(),
            head_credited: false,
            buffered_bytes: 0,
            buffered_packets: 0,
        }
    }

    pub fn config(&self) -> DrrConfig {
        self.cfg
    }

    pub fn set_weight(&mut self, dst: Suffix, weight: u32) {
        assert!(weight > 0, "DRR weights must be positive");
        self.weights.insert(dst, weight);
    }

    /// Adaptive-tree mode: level-`l` addresses get weight `2^l`.
    pub fn set_tree_weights(&mut self, tree: &AddressTree) {
        for (s, w) in tree.weights() {
            self.set_weight(s, w as u32);
        }
    }

    pub fn weight(&self, dst: Suffix) -> u32 {
        self.weights.get(&dst).copied().unwrap_or(1)
    }

    pub fn len(&self) -> usize {
        self.buffered_packets
    }

    pub fn is_empty(&self) -> bool {
        self.buffered_packets == 0
    }

    pub fn buffered_bytes(&self) -> u64 {
        self.buffered_bytes
    }

    pub fn queue_len(&self, dst: Suffix) -> usize {
        self.queues.get(&dst).map_or(0, |q| q.packets.len())
    }

    pub fn deficit(&self, dst: Suffix) -> u64 {
        self.queues.get(&dst).map_or(0, |q| q.deficit)
    }

    /// Appends to the destination's queue; `false` means tail drop.
    pub fn enqueue(&mut self, pkt: Packet) -> bool {
        let size = u64::from(pkt.size_bytes);
        if let Some(limit) = self.cfg.buffer_limit_bytes {
            if self.buffered_bytes + size > limit {
                return false;
            }
        }
        let dst = pkt.dst_suffix;
        let q = self.queues.entry(dst).or_default();
        if q.packets.len() >= self.cfg.queue_limit_packets {
            return false;
        }
        if q.packets.is_empty() {
            self.active.push_back(dst);
        }
        q.packets.push_back(pkt);
        self.buffered_bytes += size;
        self.buffered_packets += 1;
        true
    }

    pub fn dequeue(&mut self) -> Option<Packet> {
        loop {
            let dst = *self.active.front()?;
            let quantum = u64::from(self.weight(dst)) * u64::from(self.cfg.quantum);
            let q = self.queues.get_mut(&dst).expect("active queue exists");
            if !self.head_credited {
                q.deficit += quantum;
                self.head_credited = true;
            }
            let head = u64::from(q.packets.front().expect("active queue non-empty").size_bytes);
            if head <= q.deficit {
                let pkt = q.packets.pop_front().unwrap();
                q.deficit -= head;
                self.buffered_bytes -= head;
                self.buffered_packets -= 1;
                if q.packets.is_empty() {
                    q.deficit = 0;
                    self.queues.remove(&dst);
                    self.active.pop_front();
                    self.head_credited = false;
                }
                return Some(pkt);
            }
            self.active.rotate_left(1);
            self.head_credited = false;
        }
    }
}
