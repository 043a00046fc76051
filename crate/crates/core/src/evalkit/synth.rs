//! Synthetic bilingual corpora built from a token substitution cipher.
//!
//! Source word `i` is spelled `s<i in base 26>`; its translation is target
//! word `π(i)`, spelled `t<π(i) in base 26>`. `π` depends only on
//! `cipher_seed` and `vocab_size`, so corpora drawn with different `seed`s
//! share one language pair.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::miner::{DocCorpus, Document};
use crate::trainer::SentencePair;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpusConfig {
    pub seed: u64,
    pub num_pairs: usize,
    pub vocab_size: usize,
    /// Inclusive token-count bounds of a source sentence.
    pub sentence_length_range: (usize, usize),
    pub cipher_seed: u64,
    /// Chance of inserting a random target word after each target token.
    pub noise_rate: f64,
    /// Chance of swapping each adjacent target token pair.
    pub reorder_rate: f64,
    /// Sentences per confusable family; 1 disables sharing.
    pub family_size: usize,
    /// Fraction of each sentence's tokens shared across its family.
    pub shared_fraction: f64,
    pub sentences_per_doc: usize,
    /// Chance of inserting an unrelated sentence after each target document
    /// sentence.
    pub doc_noise_rate: f64,
    /// Chance of dropping each target document sentence.
    pub doc_deletion_rate: f64,
}

impl Default for SynthCorpusConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            num_pairs: 1000,
            vocab_size: 200,
            sentence_length_range: (5, 12),
            cipher_seed: 7,
            noise_rate: 0.0,
            reorder_rate: 0.0,
            family_size: 1,
            shared_fraction: 0.5,
            sentences_per_doc: 20,
            doc_noise_rate: 0.0,
            doc_deletion_rate: 0.0,
        }
    }
}

impl SynthCorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ConfigInvalid(m.to_string()));
        let (lo, hi) = self.sentence_length_range;
        if self.vocab_size < 10 {
            return bad("vocab_size must be >= 10");
        }
        if lo < 1 || hi < lo {
            return bad("sentence lengths must satisfy 1 <= min <= max");
        }
        if self.family_size < 1 || self.sentences_per_doc < 1 {
            return bad("family_size and sentences_per_doc must be >= 1");
        }
        for (name, p) in [
            ("noise_rate", self.noise_rate),
            ("reorder_rate", self.reorder_rate),
            ("shared_fraction", self.shared_fraction),
            ("doc_noise_rate", self.doc_noise_rate),
            ("doc_deletion_rate", self.doc_deletion_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::ConfigInvalid(format!("{name} must lie in [0, 1]")));
            }
        }
        Ok(())
    }

    /// `cipher()[i]` is the target word index translating source word `i`.
    pub fn cipher(&self) -> Vec<usize> {
        let mut perm: Vec<usize> = (0..self.vocab_size).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(self.cipher_seed));
        perm
    }
}

fn base26(mut i: usize, prefix: char) -> String {
    let mut digits = Vec::new();
    loop {
        digits.push(b'a' + (i % 26) as u8);
        i /= 26;
        if i == 0 {
            break;
        }
    }
    digits.reverse();
    let mut s = String::with_capacity(digits.len() + 1);
    s.push(prefix);
    s.extend(digits.into_iter().map(char::from));
    s
}

pub fn source_word(i: usize) -> String {
    base26(i, 's')
}

pub fn target_word(i: usize) -> String {
    base26(i, 't')
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub pairs: Vec<SentencePair>,
    /// Contiguous blocks of `pairs`' sources; sentence ids index `pairs`.
    pub source_docs: DocCorpus,
    /// Translations of the source documents with noise sentences inserted
    /// and sentences deleted, under shuffled ids.
    pub target_docs: DocCorpus,
    /// Source doc id → target doc id.
    pub gold: BTreeMap<String, String>,
}

struct Generator<'a> {
    cfg: &'a SynthCorpusConfig,
    cipher: Vec<usize>,
}

impl Generator<'_> {
    fn translate(&self, tokens: &[usize], rng: &mut ChaCha8Rng) -> String {
        let mut out: Vec<usize> = tokens.iter().map(|&t| self.cipher[t]).collect();
        if self.cfg.reorder_rate > 0.0 {
            for i in 0..out.len().saturating_sub(1) {
                if rng.gen_bool(self.cfg.reorder_rate) {
                    out.swap(i, i + 1);
                }
            }
        }
        if self.cfg.noise_rate > 0.0 {
            let mut noisy = Vec::with_capacity(out.len() * 2);
            for t in out {
                noisy.push(t);
                if rng.gen_bool(self.cfg.noise_rate) {
                    noisy.push(rng.gen_range(0..self.cfg.vocab_size));
                }
            }
            out = noisy;
        }
        join(out.into_iter().map(target_word))
    }

    fn random_sentence(&self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let (lo, hi) = self.cfg.sentence_length_range;
        let len = rng.gen_range(lo..=hi);
        (0..len).map(|_| rng.gen_range(0..self.cfg.vocab_size)).collect()
    }
}

fn join(words: impl Iterator<Item = String>) -> String {
    words.collect::<Vec<_>>().join(" ")
}

pub fn make_synthetic_corpus(cfg: &SynthCorpusConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let gen = Generator {
        cfg,
        cipher: cfg.cipher(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (lo, hi) = cfg.sentence_length_range;

    let mut sentences: Vec<Vec<usize>> = Vec::with_capacity(cfg.num_pairs);
    while sentences.len() < cfg.num_pairs {
        let len = rng.gen_range(lo..=hi);
        let shared = if cfg.family_size > 1 {
            (cfg.shared_fraction * len as f64).round() as usize
        } else {
            0
        };
        let core: Vec<usize> = (0..shared).map(|_| rng.gen_range(0..cfg.vocab_size)).collect();
        for _ in 0..cfg.family_size.min(cfg.num_pairs - sentences.len()) {
            let mut s = core.clone();
            s.extend((shared..len).map(|_| rng.gen_range(0..cfg.vocab_size)));
            if shared > 0 {
                s.shuffle(&mut rng);
            }
            sentences.push(s);
        }
    }
    if cfg.family_size > 1 {
        sentences.shuffle(&mut rng);
    }
    let pairs: Vec<SentencePair> = sentences
        .iter()
        .map(|s| {
            let target = gen.translate(s, &mut rng);
            SentencePair::new(join(s.iter().map(|&t| source_word(t))), target)
        })
        .collect();

    // Documents draw from their own stream so they never perturb the pairs.
    let mut drng = ChaCha8Rng::seed_from_u64(cfg.seed);
    drng.set_stream(1);
    let num_docs = pairs.len().div_ceil(cfg.sentences_per_doc);
    let width = num_docs.to_string().len().max(3);
    let mut labels: Vec<usize> = (0..num_docs).collect();
    labels.shuffle(&mut drng);

    let mut source_docs = DocCorpus {
        documents: Vec::with_capacity(num_docs),
        sentences: pairs.iter().map(|p| p.source.clone()).collect(),
    };
    let mut target_blocks: Vec<(String, Vec<String>)> = Vec::with_capacity(num_docs);
    let mut gold = BTreeMap::new();
    for (d, ids) in (0..pairs.len())
        .collect::<Vec<_>>()
        .chunks(cfg.sentences_per_doc)
        .enumerate()
    {
        let src_id = format!("src-{d:0width$}");
        let tgt_id = format!("tgt-{:0width$}", labels[d]);
        let mut texts = Vec::new();
        for &i in ids {
            if !drng.gen_bool(cfg.doc_deletion_rate) {
                texts.push(pairs[i].target.clone());
            }
            if drng.gen_bool(cfg.doc_noise_rate) {
                let noise = gen.random_sentence(&mut drng);
                texts.push(gen.translate(&noise, &mut drng));
            }
        }
        if texts.is_empty() {
            texts.push(pairs[ids[0]].target.clone());
        }
        source_docs.documents.push(Document {
            doc_id: src_id.clone(),
            sentence_ids: ids.to_vec(),
        });
        gold.insert(src_id, tgt_id.clone());
        target_blocks.push((tgt_id, texts));
    }
    target_blocks.sort_by(|a, b| a.0.cmp(&b.0));
    let mut target_docs = DocCorpus::default();
    for (doc_id, texts) in target_blocks {
        let start = target_docs.sentences.len();
        target_docs.sentences.extend(texts);
        target_docs.documents.push(Document {
            doc_id,
            sentence_ids: (start..target_docs.sentences.len()).collect(),
        });
    }
    Ok(SynthCorpus {
        pairs,
        source_docs,
        target_docs,
        gold,
    })
}
