//! Text normalization, tokenization and hashed n-gram featurization.
//!
//! Tokens and token bigrams are mapped into a fixed number of embedding rows
//! with seeded 64-bit FNV-1a: the hasher state starts at the FNV offset basis
//! XOR `hash_seed` (seed 0 is plain FNV-1a) and then consumes the UTF-8 bytes
//! of the token, or of `left_right` for a bigram. Unigram and bigram ids index
//! separate tables, so the two id spaces never interact.

use std::hash::Hasher;

use fnv::FnvHasher;
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeaturizerConfig {
    pub hash_buckets: u32,
    pub hash_seed: u64,
    pub lowercase: bool,
    pub unicode_normalize: bool,
}

impl Default for FeaturizerConfig {
    fn default() -> Self {
        Self {
            hash_buckets: 1 << 14,
            hash_seed: 0,
            lowercase: true,
            unicode_normalize: true,
        }
    }
}

impl FeaturizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hash_buckets < 2 || !self.hash_buckets.is_power_of_two() {
            return Err(Error::ConfigInvalid(format!(
                "hash_buckets must be a power of two >= 2, got {}",
                self.hash_buckets
            )));
        }
        Ok(())
    }

    fn bucket(&self, bytes: &[&[u8]]) -> u32 {
        let mut hasher = FnvHasher::with_key(FNV_OFFSET_BASIS ^ self.hash_seed);
        for part in bytes {
            hasher.write(part);
        }
        // power-of-two bucket count, so masking is the modulus
        (hasher.finish() & u64::from(self.hash_buckets - 1)) as u32
    }
}

/// Hashed n-gram ids of one sentence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureIds {
    pub unigram_ids: Vec<u32>,
    pub bigram_ids: Vec<u32>,
    /// Number of unigram tokens.
    pub token_count: usize,
}

pub fn normalize(text: &str, cfg: &FeaturizerConfig) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    if cfg.lowercase {
        out = out.to_lowercase();
    }
    if cfg.unicode_normalize {
        out = out.nfc().collect();
    }
    out
}

fn is_punctuation(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace() && !is_combining_mark(c)
}

// Combining marks stay attached to their base letter when text is not NFC.
fn is_combining_mark(c: char) -> bool {
    unicode_normalization::char::is_combining_mark(c)
}

/// Splits on whitespace and isolates every punctuation character as its own
/// token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if c.is_whitespace() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
        } else if is_punctuation(c) {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.push(c.to_string());
        } else {
            current.push(c);
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

pub fn featurize<S: AsRef<str>>(tokens: &[S], cfg: &FeaturizerConfig) -> Result<FeatureIds> {
    if tokens.is_empty() {
        return Err(Error::EmptySentence);
    }
    let unigram_ids = tokens
        .iter()
        .map(|t| cfg.bucket(&[t.as_ref().as_bytes()]))
        .collect();
    let bigram_ids = tokens
        .windows(2)
        .map(|w| cfg.bucket(&[w[0].as_ref().as_bytes(), b"_", w[1].as_ref().as_bytes()]))
        .collect();
    Ok(FeatureIds {
        unigram_ids,
        bigram_ids,
        token_count: tokens.len(),
    })
}

/// `normalize` → `tokenize` → `featurize` in one call.
pub fn featurize_text(text: &str, cfg: &FeaturizerConfig) -> Result<FeatureIds> {
    featurize(&tokenize(&normalize(text, cfg)), cfg)
}
