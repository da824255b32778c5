//! Hex string encodings for wide integers in JSON documents.

use serde::{de::Error, Deserialize, Deserializer, Serializer};

pub fn parse_u128(s: &str) -> Result<u128, String> {
    let s = s.trim_start_matches("0x");
    if s.is_empty() || s.len() > 32 {
        return Err(format!("expected 1..=32 hex digits, got {:?}", s));
    }
    u128::from_str_radix(s, 16).map_err(|e| format!("bad hex {s:?}: {e}"))
}

pub mod u128_hex {
    use super::*;

    pub fn serialize<S: Serializer>(v: &u128, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{v:032x}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u128, D::Error> {
        let s = String::deserialize(d)?;
        parse_u128(&s).map_err(D::Error::custom)
    }
}

pub mod u64_hex {
    use super::*;

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{v:016x}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        let s = String::deserialize(d)?;
        let v = parse_u128(&s).map_err(D::Error::custom)?;
        u64::try_from(v).map_err(|_| D::Error::custom("value exceeds 64 bits"))
    }
}

pub mod key_hex {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[u8; 16], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 16], D::Error> {
        let s = String::deserialize(d)?;
        let bytes = hex::decode(&s).map_err(D::Error::custom)?;
        bytes
            .try_into()
            .map_err(|_| D::Error::custom("key must be exactly 16 bytes (32 hex digits)"))
    }
}
