use serde::{Deserialize, Serialize};

use crate::text;
use crate::{Error, Result};

pub const HASH_BITS: u32 = 18;
pub const HASH_DIM: usize = 1 << HASH_BITS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeaturizerConfig {
    /// Add option texts to the question features.
    pub include_options: bool,
    pub bits: u32,
}

impl Default for FeaturizerConfig {
    fn default() -> Self {
        FeaturizerConfig {
            include_options: true,
            bits: HASH_BITS,
        }
    }
}

impl FeaturizerConfig {
    pub fn dim(&self) -> usize {
        1 << self.bits
    }
}

/// Sparse vector with entries sorted by index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    dim: usize,
    entries: Vec<(u32, f64)>,
}

impl FeatureVector {
    pub fn new(dim: usize, mut entries: Vec<(u32, f64)>) -> Result<Self> {
        entries.sort_by_key(|e| e.0);
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::InvalidData(format!("repeated feature index {}", w[0].0)));
            }
        }
        if let Some(&(i, v)) = entries.iter().find(|(i, v)| *i as usize >= dim || !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "feature ({i}, {v}) out of range or not finite for dim {dim}"
            )));
        }
        Ok(FeatureVector { dim, entries })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn indices(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.iter().map(|e| e.0)
    }

    pub fn dot(&self, weights: &[f64]) -> f64 {
        self.entries.iter().map(|&(i, v)| weights[i as usize] * v).sum()
    }

    pub fn norm_squared(&self) -> f64 {
        self.entries.iter().map(|e| e.1 * e.1).sum()
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Bucket and sign for one feature string: the low `bits` bits of the hash
/// pick the bucket, the top bit picks the sign.
pub fn bucket(feature: &str, bits: u32) -> (u32, f64) {
    let h = fnv1a64(feature.as_bytes());
    let index = (h & ((1u64 << bits) - 1)) as u32;
    let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
    (index, sign)
}

/// Feature strings before hashing: `q:` unigrams and bigrams of the
/// question, then `o:` unigrams and bigrams of each option.
pub fn feature_strings(question: &str, options: &[&str], config: &FeaturizerConfig) -> Vec<String> {
    let mut out = Vec::new();
    let mut push_ngrams = |prefix: &str, source: &str| {
        let toks = text::tokens(source);
        for t in &toks {
            out.push(format!("{prefix}:{t}"));
        }
        for w in toks.windows(2) {
            out.push(format!("{prefix}:{} {}", w[0], w[1]));
        }
    };
    push_ngrams("q", question);
    if config.include_options {
        for opt in options {
            push_ngrams("o", opt);
        }
    }
    out
}

/// Signed hashed counts, L2-normalised.
pub fn featurize(question: &str, options: &[&str], config: &FeaturizerConfig) -> FeatureVector {
    let mut acc = std::collections::BTreeMap::<u32, f64>::new();
    for f in feature_strings(question, options, config) {
        let (index, sign) = bucket(&f, config.bits);
        *acc.entry(index).or_insert(0.0) += sign;
    }
    let entries: Vec<(u32, f64)> = acc.into_iter().filter(|e| e.1 != 0.0).collect();
    let norm = entries.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt();
    let entries = if norm > 0.0 {
        entries.into_iter().map(|(i, v)| (i, v / norm)).collect()
    } else {
        entries
    };
    FeatureVector {
        dim: config.dim(),
        entries,
    }
}
