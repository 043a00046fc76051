//! Line-oriented corpus files.
//!
//! Parallel corpora hold `source<TAB>target` per line. Document corpora hold
//! `doc_id<TAB>sentence_index<TAB>text`, with each document's indices forming
//! `0..m` in any order.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::miner::{DocCorpus, Document};
use crate::trainer::SentencePair;

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
}

/// One sentence per line.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    Ok(lines(&read_text(path)?).map(|(_, l)| l.to_string()).collect())
}

pub fn parse_parallel(text: &str, path: &str) -> Result<Vec<SentencePair>> {
    lines(text)
        .map(|(line, l)| {
            let err = |message: &str| Error::Parse {
                path: path.to_string(),
                line,
                message: message.to_string(),
            };
            let mut parts = l.split('\t');
            let (Some(src), Some(tgt), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(err("expected exactly one tab"));
            };
            if src.trim().is_empty() || tgt.trim().is_empty() {
                return Err(err("empty side"));
            }
            Ok(SentencePair::new(src, tgt))
        })
        .collect()
}

pub fn read_parallel(path: &Path) -> Result<Vec<SentencePair>> {
    parse_parallel(&read_text(path)?, &path.display().to_string())
}

pub fn write_parallel(path: &Path, pairs: &[SentencePair]) -> Result<()> {
    let mut out = String::new();
    for p in pairs {
        let _ = writeln!(out, "{}\t{}", p.source, p.target);
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Documents keep the order of their first record.
pub fn parse_documents(text: &str, path: &str) -> Result<DocCorpus> {
    let mut order: Vec<String> = Vec::new();
    let mut docs: HashMap<String, BTreeMap<usize, (String, usize)>> = HashMap::new();
    for (line, l) in lines(text) {
        let err = |message: String| Error::Parse {
            path: path.to_string(),
            line,
            message,
        };
        let mut parts = l.splitn(3, '\t');
        let (Some(doc), Some(idx), Some(sentence)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(err("expected doc_id<TAB>index<TAB>text".into()));
        };
        if doc.is_empty() {
            return Err(err("empty doc_id".into()));
        }
        if sentence.trim().is_empty() || sentence.contains('\t') {
            return Err(err("sentence text must be non-empty and tab-free".into()));
        }
        let idx: usize = idx
            .parse()
            .map_err(|_| err(format!("sentence index {idx:?} is not a non-negative integer")))?;
        let entry = docs.entry(doc.to_string()).or_insert_with(|| {
            order.push(doc.to_string());
            BTreeMap::new()
        });
        if let Some((_, first)) = entry.insert(idx, (sentence.to_string(), line)) {
            return Err(err(format!("sentence {idx} of {doc:?} already given on line {first}")));
        }
    }
    let mut corpus = DocCorpus::default();
    for doc_id in order {
        let sentences = docs.remove(&doc_id).expect("recorded in order");
        let start = corpus.sentences.len();
        for (expected, (idx, (text, line))) in sentences.into_iter().enumerate() {
            if idx != expected {
                return Err(Error::Parse {
                    path: path.to_string(),
                    line,
                    message: format!("document {doc_id:?} skips sentence index {expected}"),
                });
            }
            corpus.sentences.push(text);
        }
        corpus.documents.push(Document {
            doc_id,
            sentence_ids: (start..corpus.sentences.len()).collect(),
        });
    }
    Ok(corpus)
}

pub fn read_documents(path: &Path) -> Result<DocCorpus> {
    parse_documents(&read_text(path)?, &path.display().to_string())
}

pub fn write_documents(path: &Path, corpus: &DocCorpus) -> Result<()> {
    let mut out = String::new();
    for doc in &corpus.documents {
        for (i, &s) in doc.sentence_ids.iter().enumerate() {
            let _ = writeln!(out, "{}\t{i}\t{}", doc.doc_id, corpus.sentences[s]);
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
