//! Time-varying active address sets.
//!
//! Every interval the victim's reachable addresses are regenerated from a
//! master key: suffix `i` of interval `T` is the leading `suffix_bits` bits of
//! `SHA-256(AES-128_key(be64(i) || be64(T)))`. Anyone holding the key (the
//! victim, its upstream routers via ACL pushes) can enumerate the set; anyone
//! else sees uniformly random 64-bit suffixes.

use std::collections::{BTreeMap, HashSet};
use std::net::Ipv6Addr;

use aes::cipher::{generic_array::GenericArray, BlockEncrypt, KeyInit};
use aes::Aes128;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::hex_serde::{key_hex, u128_hex};

pub const DEFAULT_PREFIX_LEN: u8 = 64;
pub const DEFAULT_INTERVAL_SECONDS: u64 = 300;
pub const DEFAULT_GRACE_SECONDS: u64 = 30;
/// Largest adaptive tree we are willing to materialize (node count bound 2^20).
pub const MAX_TREE_DEPTH: u32 = 19;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HopError {
    #[error("prefix length {0} outside [8, 120]")]
    PrefixLength(u8),
    #[error("prefix value {value:#x} does not fit in {len} bits")]
    PrefixValue { value: u128, len: u8 },
    #[error("interval_seconds must be positive")]
    ZeroInterval,
    #[error("grace_seconds ({grace}) must be below interval_seconds ({interval})")]
    GraceTooLong { grace: u64, interval: u64 },
    #[error("set_size must be positive")]
    EmptySet,
    #[error("tree depth {0} exceeds the supported maximum of {MAX_TREE_DEPTH}")]
    DepthTooLarge(u32),
}

/// Network prefix shared by all of a victim's addresses, right-aligned in `len` bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Prefix {
    #[serde(with = "u128_hex")]
    pub bits: u128,
    pub len: u8,
}

impl Prefix {
    pub fn new(bits: u128, len: u8) -> Result<Self, HopError> {
        let p = Prefix { bits, len };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), HopError> {
        if !(8..=120).contains(&self.len) {
            return Err(HopError::PrefixLength(self.len));
        }
        if self.bits >> self.len != 0 {
            return Err(HopError::PrefixValue {
                value: self.bits,
                len: self.len,
            });
        }
        Ok(())
    }

    pub fn suffix_bits(&self) -> u32 {
        128 - u32::from(self.len)
    }

    /// Joins the prefix with a suffix into a full IPv6 address.
    pub fn address(&self, suffix: Suffix) -> Ipv6Addr {
        Ipv6Addr::from((self.bits << self.suffix_bits()) | suffix.0)
    }
}

/// The host part of an address, at most `128 - prefix_len` bits wide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Suffix(#[serde(with = "u128_hex")] pub u128);

impl std::fmt::Display for Suffix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:x}", self.0)
    }
}

/// A derived suffix together with the slot and interval it was derived for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AddressSuffix {
    pub value: Suffix,
    pub index: u64,
    pub interval: u64,
}

#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HopConfig {
    #[serde(with = "key_hex")]
    pub master_key: [u8; 16],
    pub prefix: Prefix,
    pub interval_seconds: u64,
    pub grace_seconds: u64,
    /// Addresses per interval.
    pub set_size: usize,
}

impl std::fmt::Debug for HopConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HopConfig")
            .field("master_key", &"<redacted>")
            .field("prefix", &self.prefix)
            .field("interval_seconds", &self.interval_seconds)
            .field("grace_seconds", &self.grace_seconds)
            .field("set_size", &self.set_size)
            .finish()
    }
}

impl HopConfig {
    /// Config with the default 5 minute interval, 30 s grace window.
    pub fn new(master_key: [u8; 16], prefix: Prefix, set_size: usize) -> Result<Self, HopError> {
        let cfg = HopConfig {
            master_key,
            prefix,
            interval_seconds: DEFAULT_INTERVAL_SECONDS,
            grace_seconds: DEFAULT_GRACE_SECONDS,
            set_size,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_timing(mut self, interval_seconds: u64, grace_seconds: u64) -> Result<Self, HopError> {
        self.interval_seconds = interval_seconds;
        self.grace_seconds = grace_seconds;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), HopError> {
        self.prefix.validate()?;
        if self.interval_seconds == 0 {
            return Err(HopError::ZeroInterval);
        }
        if self.grace_seconds >= self.interval_seconds {
            return Err(HopError::GraceTooLong {
                grace: self.grace_seconds,
                interval: self.interval_seconds,
            });
        }
        if self.set_size == 0 {
            return Err(HopError::EmptySet);
        }
        Ok(())
    }

    pub fn suffix_bits(&self) -> u32 {
        self.prefix.suffix_bits()
    }

    pub fn interval_at(&self, now_seconds: u64) -> u64 {
        now_seconds / self.interval_seconds
    }

    /// First second of interval `t`.
    pub fn interval_start(&self, t: u64) -> u64 {
        t * self.interval_seconds
    }

    pub(crate) fn cipher(&self) -> Aes128 {
        Aes128::new(GenericArray::from_slice(&self.master_key))
    }
}

fn truncate(digest: &[u8], bits: u32) -> u128 {
    let mut head = [0u8; 16];
    head.copy_from_slice(&digest[..16]);
    let v = u128::from_be_bytes(head);
    if bits >= 128 {
        v
    } else {
        v >> (128 - bits)
    }
}

fn derive_with(cipher: &Aes128, suffix_bits: u32, i: u64, t: u64, salt: u32) -> u128 {
    let mut block = [0u8; 16];
    block[..8].copy_from_slice(&i.to_be_bytes());
    block[8..].copy_from_slice(&t.to_be_bytes());
    let mut block = GenericArray::from(block);
    cipher.encrypt_block(&mut block);
    let mut h = Sha256::new();
    h.update(block);
    if salt > 0 {
        h.update(salt.to_be_bytes());
    }
    truncate(&h.finalize(), suffix_bits)
}

/// Suffix `i` of interval `t`.
pub fn derive_suffix(cfg: &HopConfig, i: u64, t: u64) -> AddressSuffix {
    AddressSuffix {
        value: Suffix(derive_with(&cfg.cipher(), cfg.suffix_bits(), i, t, 0)),
        index: i,
        interval: t,
    }
}

/// Variant used to re-draw a colliding suffix: a non-zero salt is appended to
/// the hash input. `salt == 0` is exactly [`derive_suffix`].
pub fn derive_suffix_salted(cfg: &HopConfig, i: u64, t: u64, salt: u32) -> AddressSuffix {
    AddressSuffix {
        value: Suffix(derive_with(&cfg.cipher(), cfg.suffix_bits(), i, t, salt)),
        index: i,
        interval: t,
    }
}

/// The suffixes reachable during one interval, keyed by value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActiveSet {
    pub interval: u64,
    members: BTreeMap<Suffix, u64>,
}

impl ActiveSet {
    pub fn contains(&self, s: Suffix) -> bool {
        self.members.contains_key(&s)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Slot index the suffix was derived from, if it is a member.
    pub fn index_of(&self, s: Suffix) -> Option<u64> {
        self.members.get(&s).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = AddressSuffix> + '_ {
        let interval = self.interval;
        self.members
            .iter()
            .map(move |(&value, &index)| AddressSuffix { value, index, interval })
    }

    pub fn suffixes(&self) -> impl Iterator<Item = Suffix> + '_ {
        self.members.keys().copied()
    }
}

/// `{ derive_suffix(cfg, i, t) : i in 0..set_size }`. Colliding values keep the
/// lowest index, so the set may hold fewer than `set_size` entries.
pub fn active_set(cfg: &HopConfig, t: u64) -> ActiveSet {
    let cipher = cfg.cipher();
    let bits = cfg.suffix_bits();
    let mut members = BTreeMap::new();
    for i in 0..cfg.set_size as u64 {
        members.entry(Suffix(derive_with(&cipher, bits, i, t, 0))).or_insert(i);
    }
    ActiveSet { interval: t, members }
}

/// Whether `now_seconds` falls inside the post-rollover grace window.
pub fn in_grace(cfg: &HopConfig, now_seconds: u64) -> bool {
    now_seconds >= cfg.interval_seconds && now_seconds % cfg.interval_seconds < cfg.grace_seconds
}

/// True when `s` belongs to the current interval's set, or to the previous
/// interval's set while the grace window is still open.
pub fn is_active(cfg: &HopConfig, s: Suffix, now_seconds: u64) -> bool {
    let t = cfg.interval_at(now_seconds);
    if active_set(cfg, t).contains(s) {
        return true;
    }
    in_grace(cfg, now_seconds) && active_set(cfg, t - 1).contains(s)
}

/// Every suffix `is_active` would accept at `now_seconds`.
pub fn accepted_suffixes(cfg: &HopConfig, now_seconds: u64) -> HashSet<Suffix> {
    let t = cfg.interval_at(now_seconds);
    let mut out: HashSet<Suffix> = active_set(cfg, t).suffixes().collect();
    if in_grace(cfg, now_seconds) {
        out.extend(active_set(cfg, t - 1).suffixes());
    }
    out
}

/// Binary-tree organization of an interval's address set. Level `l` holds
/// `2^l` addresses, each scheduled with weight `2^l`, so an address one level
/// closer to the root gets half the priority of one a level deeper.
#[derive(Debug, Clone)]
pub struct AddressTree {
    pub depth: u32,
    pub interval: u64,
    pub levels: Vec<Vec<AddressSuffix>>,
}

impl AddressTree {
    pub fn level_weight(level: u32) -> u64 {
        1u64 << level
    }

    pub fn node_count(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }

    /// (suffix, level) pairs in breadth-first order.
    pub fn nodes(&self) -> impl Iterator<Item = (AddressSuffix, u32)> + '_ {
        self.levels
            .iter()
            .enumerate()
            .flat_map(|(l, nodes)| nodes.iter().map(move |n| (*n, l as u32)))
    }

    /// Scheduling weight per suffix, for feeding a weighted DRR.
    pub fn weights(&self) -> impl Iterator<Item = (Suffix, u64)> + '_ {
        self.nodes().map(|(n, l)| (n.value, Self::level_weight(l)))
    }
}

pub fn tree_index(level: u32, position: u64) -> u64 {
    (1u64 << level) - 1 + position
}

pub fn build_adaptive_tree(cfg: &HopConfig, depth: u32, t: u64) -> Result<AddressTree, HopError> {
    if depth > MAX_TREE_DEPTH {
        return Err(HopError::DepthTooLarge(depth));
    }
    let cipher = cfg.cipher();
    let bits = cfg.suffix_bits();
    let mut seen = HashSet::new();
    let mut levels = Vec::with_capacity(depth as usize + 1);
    for level in 0..=depth {
        let width = 1u64 << level;
        let mut nodes = Vec::with_capacity(width as usize);
        for k in 0..width {
            let idx = tree_index(level, k);
            let mut salt = 0u32;
            let value = loop {
                let v = derive_with(&cipher, bits, idx, t, salt);
                if seen.insert(v) {
                    break v;
                }
                salt += 1;
            };
            nodes.push(AddressSuffix {
                value: Suffix(value),
                index: idx,
                interval: t,
            });
        }
        levels.push(nodes);
    }
    Ok(AddressTree {
        depth,
        interval: t,
        levels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(key: [u8; 16], prefix_len: u8, n: usize) -> HopConfig {
        HopConfig::new(key, Prefix::new(0x2001_0db8, prefix_len).unwrap(), n).unwrap()
    }

    // Frozen from an independent AES-128/SHA-256 implementation (Python `cryptography` + hashlib).
    #[test]
    fn golden_vectors() {
        let zero = cfg([0; 16], 64, 1);
        assert_eq!(derive_suffix(&zero, 0, 0).value, Suffix(0x558075540a46e624));
        assert_eq!(derive_suffix(&zero, 1, 0).value, Suffix(0xeff063c2f6e039ad));

        let mut key = [0u8; 16];
        key.iter_mut().enumerate().for_each(|(i, b)| *b = i as u8);
        let c = cfg(key, 64, 1);
        assert_eq!(derive_suffix(&c, 7, 123456).value, Suffix(0x35b880f0d9761c6a));
        let c24 = cfg(key, 104, 1);
        assert_eq!(derive_suffix(&c24, 7, 123456).value, Suffix(0x35b880));
    }

    #[test]
    fn deterministic() {
        let c = cfg([9; 16], 64, 1);
        assert_eq!(derive_suffix(&c, 42, 17), derive_suffix(&c, 42, 17));
    }

    #[test]
    fn thousand_distinct() {
        let c = cfg([3; 16], 64, 1000);
        let set: HashSet<_> = (0..1000).map(|i| derive_suffix(&c, i, 5).value).collect();
        assert_eq!(set.len(), 1000);
    }

    #[test]
    fn singleton_set() {
        let c = cfg([1; 16], 64, 1);
        let s = active_set(&c, 11);
        assert_eq!(s.len(), 1);
        assert!(s.contains(derive_suffix(&c, 0, 11).value));
    }

    #[test]
    fn full_interval_population() {
        let c = cfg([2; 16], 64, 5000);
        assert_eq!(active_set(&c, 0).len(), 5000);
    }

    #[test]
    fn consecutive_intervals_disjoint() {
        for k in 0u8..100 {
            let mut key = [k; 16];
            key[0] = k.wrapping_mul(31);
            let c = cfg(key, 64, 50);
            let a = active_set(&c, 1000);
            let b = active_set(&c, 1001);
            assert!(a.suffixes().all(|s| !b.contains(s)), "key {k}");
        }
    }

    #[test]
    fn small_suffix_space_dedups() {
        // 8 bits of suffix, 400 draws: collisions are certain.
        let c = cfg([4; 16], 120, 400);
        let s = active_set(&c, 0);
        assert!(s.len() <= 256);
        assert!(s.len() < 400);
        assert!(s.iter().all(|a| a.value.0 < 256));
    }

    #[test]
    fn grace_window() {
        let c = cfg([5; 16], 64, 20).with_timing(300, 30).unwrap();
        let old = derive_suffix(&c, 3, 0).value;
        let cur = derive_suffix(&c, 3, 1).value;
        assert!(is_active(&c, cur, 300 + 100));
        assert!(is_active(&c, old, 299));
        assert!(is_active(&c, old, 310));
        assert!(is_active(&c, old, 329));
        assert!(!is_active(&c, old, 330));
        assert!(!is_active(&c, old, 331));
        // No previous interval before time zero.
        assert!(!is_active(&c, derive_suffix(&c, 0, 1).value, 10));
    }

    #[test]
    fn accepted_set_size() {
        let c = cfg([6; 16], 64, 30).with_timing(60, 10).unwrap();
        for now in [0u64, 5, 59, 60, 65, 69, 70, 119, 125] {
            let acc = accepted_suffixes(&c, now);
            assert!(acc.len() <= 2 * c.set_size);
            let cur: HashSet<_> = active_set(&c, c.interval_at(now)).suffixes().collect();
            if now % 60 >= 10 || now < 60 {
                assert_eq!(acc, cur, "now={now}");
            } else {
                assert!(acc.len() > cur.len());
            }
        }
    }

    #[test]
    fn invalid_configs() {
        let p = Prefix::new(1, 64).unwrap();
        assert_eq!(Prefix::new(0, 7), Err(HopError::PrefixLength(7)));
        assert_eq!(Prefix::new(0, 121), Err(HopError::PrefixLength(121)));
        assert!(matches!(Prefix::new(0x1ff, 8), Err(HopError::PrefixValue { .. })));
        let c = HopConfig::new([0; 16], p, 1).unwrap();
        assert_eq!(c.clone().with_timing(0, 0), Err(HopError::ZeroInterval));
        assert!(matches!(
            c.clone().with_timing(30, 30),
            Err(HopError::GraceTooLong { .. })
        ));
        assert_eq!(HopConfig::new([0; 16], p, 0), Err(HopError::EmptySet));
    }

    #[test]
    fn tree_shapes() {
        let c = cfg([7; 16], 64, 1);
        let t0 = build_adaptive_tree(&c, 0, 3).unwrap();
        assert_eq!(t0.node_count(), 1);
        assert_eq!(t0.levels[0][0], derive_suffix(&c, 0, 3));

        let t2 = build_adaptive_tree(&c, 2, 3).unwrap();
        let sizes: Vec<_> = t2.levels.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![1, 2, 4]);
        let w: Vec<_> = (0..3).map(AddressTree::level_weight).collect();
        assert_eq!(w, vec![1, 2, 4]);
        assert_eq!(t2.levels[2][1].index, 4);
        assert_eq!(t2.levels[2][1], derive_suffix(&c, 4, 3));

        assert_eq!(build_adaptive_tree(&c, 20, 0).unwrap_err(), HopError::DepthTooLarge(20));
    }

    #[test]
    fn tree_invariants_up_to_depth_16() {
        let c = cfg([8; 16], 64, 1);
        let t = build_adaptive_tree(&c, 16, 9).unwrap();
        for (l, nodes) in t.levels.iter().enumerate() {
            assert_eq!(nodes.len(), 1 << l);
            if l > 0 {
                assert_eq!(
                    2 * AddressTree::level_weight(l as u32 - 1),
                    AddressTree::level_weight(l as u32)
                );
            }
        }
        let distinct: HashSet<_> = t.nodes().map(|(n, _)| n.value).collect();
        assert_eq!(distinct.len(), (1 << 17) - 1);
    }

    #[test]
    fn tree_regenerates_collisions() {
        // 10-bit suffixes and 255 nodes force several collisions.
        let c = cfg([10; 16], 118, 1);
        let t = build_adaptive_tree(&c, 7, 0).unwrap();
        let distinct: HashSet<_> = t.nodes().map(|(n, _)| n.value).collect();
        assert_eq!(distinct.len(), 255);
    }

    #[test]
    fn address_join() {
        let p = Prefix::new(0x2001_0db8_0000_0001, 64).unwrap();
        let a = p.address(Suffix(0xabcd));
        assert_eq!(a.to_string(), "2001:db8:0:1::abcd");
    }

    #[test]
    fn config_json_roundtrip() {
        let c = cfg([0xab; 16], 64, 12);
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains("abababab"));
        let back: HopConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
        assert!(!format!("{c:?}").contains("abab"));
    }
}
