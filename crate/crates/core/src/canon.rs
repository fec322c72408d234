//! Canonical serialization, content hashing and seed derivation.
//!
//! Every stage file is written as JSON with lexicographically sorted object
//! keys, so the SHA-256 of a file is a stable content address. Random streams
//! are derived from hashed seed material instead of one shared generator,
//! which keeps results independent of iteration order and thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::Result;

/// Serialize `value` as compact JSON with sorted object keys.
pub fn to_canonical_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let value = sort_keys(serde_json::to_value(value)?);
    Ok(serde_json::to_string(&value)?)
}

/// Pretty variant of [`to_canonical_json`] for human-facing single documents.
pub fn to_canonical_json_pretty<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let value = sort_keys(serde_json::to_value(value)?);
    let mut out = serde_json::to_string_pretty(&value)?;
    out.push('\n');
    Ok(out)
}

fn sort_keys(value: Value) -> Value {
    match value {
        Value::Object(map) => {
            let mut entries: Vec<(String, Value)> = map.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            let mut sorted = Map::new();
            for (k, v) in entries {
                sorted.insert(k, sort_keys(v));
            }
            Value::Object(sorted)
        }
        Value::Array(items) => Value::Array(items.into_iter().map(sort_keys).collect()),
        other => other,
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash a sequence of byte strings, length-prefixing each so that
/// `["ab", "c"]` and `["a", "bc"]` differ.
pub fn hash_parts(parts: &[&[u8]]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    hasher.finalize().into()
}

/// Derive a 64-bit seed from labelled seed material.
pub fn derive_seed(parts: &[&[u8]]) -> u64 {
    let digest = hash_parts(parts);
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// A ChaCha8 stream keyed by [`derive_seed`] over `parts`.
pub fn rng_for(parts: &[&[u8]]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(parts))
}
