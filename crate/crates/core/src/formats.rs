//! JSONL record schemas shared by the command-line pipelines.
//!
//! Every file is UTF-8, one JSON object per line, and every record carries a
//! `"format_version"` field (currently 1). On input the field may be omitted.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decode::{Candidate, NBestList};
use crate::example::Example;

pub const FORMAT_VERSION: u32 = 1;

fn current_version() -> u32 {
    FORMAT_VERSION
}

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
}

impl FormatError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        FormatError::Io {
            path: path.to_owned(),
            source,
        }
    }
}

pub fn open(path: &Path) -> Result<BufReader<File>, FormatError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| FormatError::io(path, e))
}

/// Iterates `(line number, record)` pairs, skipping blank lines.
pub fn jsonl_records<T, R>(reader: R) -> impl Iterator<Item = Result<(usize, T), FormatError>>
where
    T: DeserializeOwned,
    R: BufRead,
{
    reader.lines().enumerate().filter_map(|(i, line)| {
        let line_no = i + 1;
        match line {
            Err(e) => Some(Err(FormatError::Parse {
                line: line_no,
                message: e.to_string(),
            })),
            Ok(l) if l.trim().is_empty() => None,
            Ok(l) => {
                Some(
                    serde_json::from_str(&l)
                        .map(|rec| (line_no, rec))
                        .map_err(|e| FormatError::Parse {
                            line: line_no,
                            message: e.to_string(),
                        }),
                )
            }
        }
    })
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>, FormatError> {
    jsonl_records(open(path)?).collect()
}

pub fn write_jsonl<T: Serialize, W: Write>(mut out: W, records: &[T]) -> io::Result<()> {
    for rec in records {
        serde_json::to_writer(&mut out, rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

fn check_version(line: usize, version: u32) -> Result<(), FormatError> {
    if version == FORMAT_VERSION {
        Ok(())
    } else {
        Err(FormatError::Invalid {
            line,
            message: format!("unsupported format_version {version}"),
        })
    }
}

/// Input example: `{"id", "passage": [...], "answer": [...], "reference_question"?: [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    #[serde(default = "current_version")]
    pub format_version: u32,
    pub id: String,
    pub passage: Vec<String>,
    pub answer: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_question: Option<Vec<String>>,
}

impl From<&Example> for ExampleRecord {
    fn from(ex: &Example) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            id: ex.id.clone(),
            passage: ex.passage.clone(),
            answer: ex.answer.clone(),
            reference_question: ex.reference_question.clone(),
        }
    }
}

/// Reads an examples file; ids must be unique and passages and answers
/// non-empty.
pub fn read_examples<R: BufRead>(reader: R) -> Result<Vec<Example>, FormatError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for item in jsonl_records::<ExampleRecord, _>(reader) {
        let (line, rec) = item?;
        check_version(line, rec.format_version)?;
        let invalid = |message: String| FormatError::Invalid { line, message };
        if rec.passage.is_empty() {
            return Err(invalid(format!("example {:?} has an empty passage", rec.id)));
        }
        if rec.answer.is_empty() {
            return Err(invalid(format!("example {:?} has an empty answer", rec.id)));
        }
        if !seen.insert(rec.id.clone()) {
            return Err(invalid(format!("duplicate example id {:?}", rec.id)));
        }
        out.push(Example {
            id: rec.id,
            passage: rec.passage,
            answer: rec.answer,
            reference_question: rec.reference_question,
        });
    }
    Ok(out)
}

pub fn load_examples(path: &Path) -> Result<Vec<Example>, FormatError> {
    read_examples(open(path)?)
}

/// N-best output: `{"id", "candidates": [{"tokens", "log_prob", "aligned_positions", "complete"}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NBestRecord {
    #[serde(default = "current_version")]
    pub format_version: u32,
    pub id: String,
    pub candidates: Vec<Candidate>,
}

impl From<&NBestList> for NBestRecord {
    fn from(list: &NBestList) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            id: list.id.clone(),
            candidates: list.candidates.clone(),
        }
    }
}

pub fn read_nbest<R: BufRead>(reader: R) -> Result<Vec<NBestList>, FormatError> {
    let mut out = Vec::new();
    for item in jsonl_records::<NBestRecord, _>(reader) {
        let (line, rec) = item?;
        check_version(line, rec.format_version)?;
        if rec.candidates.is_empty() {
            return Err(FormatError::Invalid {
                line,
                message: format!("n-best list {:?} has no candidates", rec.id),
            });
        }
        out.push(NBestList {
            id: rec.id,
            candidates: rec.candidates,
        });
    }
    Ok(out)
}

pub fn load_nbest(path: &Path) -> Result<Vec<NBestList>, FormatError> {
    read_nbest(open(path)?)
}

/// Step distribution in a trace record: dense, or sparse with the leftover
/// mass optionally spread evenly over the unlisted ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DistRecord {
    Dense(Vec<f64>),
    Sparse {
        /// Token id (as a decimal string key) to probability.
        sparse: BTreeMap<String, f64>,
        #[serde(default)]
        rest_uniform: bool,
    },
}

impl DistRecord {
    pub fn densify(&self, vocab_size: usize) -> Result<Vec<f64>, String> {
        match self {
            DistRecord::Dense(v) => {
                if v.len() != vocab_size {
                    return Err(format!(
                        "distribution has {} entries, vocabulary has {vocab_size}",
                        v.len()
                    ));
                }
                Ok(v.clone())
            }
            DistRecord::Sparse { sparse, rest_uniform } => {
                let mut dense = vec![0.0; vocab_size];
                let mut listed = vec![false; vocab_size];
                let mut listed_mass = 0.0;
                for (key, &p) in sparse {
                    let id: usize = key
                        .parse()
                        .map_err(|_| format!("sparse key {key:?} is not a token id"))?;
                    let slot = dense.get_mut(id).ok_or_else(|| {
                        format!("sparse id {id} out of range for vocabulary of size {vocab_size}")
                    })?;
                    *slot = p;
                    listed[id] = true;
                    listed_mass += p;
                }
                let unlisted = listed.iter().filter(|l| !**l).count();
                if *rest_uniform && unlisted > 0 {
                    let rest = (1.0 - listed_mass).max(0.0) / unlisted as f64;
                    for (slot, _) in dense.iter_mut().zip(&listed).filter(|(_, l)| !**l) {
                        *slot = rest;
                    }
                }
                Ok(dense)
            }
        }
    }
}

/// `{"id", "prefix": [token ids], "dist": ..., "attention": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    #[serde(default = "current_version")]
    pub format_version: u32,
    pub id: String,
    pub prefix: Vec<u32>,
    pub dist: DistRecord,
    pub attention: Vec<f64>,
}

/// `{"id", "question": space-joined string, "answer": string}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaPredictionRecord {
    #[serde(default = "current_version")]
    pub format_version: u32,
    pub id: String,
    pub question: String,
    pub answer: String,
}

/// One reranked candidate as written by the rerank pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankedCandidateRecord {
    pub tokens: Vec<String>,
    pub log_prob: f64,
    pub aligned_positions: Vec<usize>,
    pub complete: bool,
    pub predicted_answer: String,
    pub score1: f64,
    pub score2: f64,
    pub combined: f64,
    pub old_rank: usize,
    pub new_rank: usize,
}

/// Reranked output; `candidates` are in new-rank order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankedRecord {
    #[serde(default = "current_version")]
    pub format_version: u32,
    pub id: String,
    pub lambda2: f64,
    pub top1_changed: bool,
    pub candidates: Vec<RerankedCandidateRecord>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples_parse_and_validate() {
        let good = "{\"id\":\"a\",\"passage\":[\"x\"],\"answer\":[\"x\"]}\n\n{\"format_version\":1,\"id\":\"b\",\"passage\":[\"y\"],\"answer\":[\"y\"],\"reference_question\":[\"q\"]}\n";
        let ex = read_examples(good.as_bytes()).unwrap();
        assert_eq!(ex.len(), 2);
        assert_eq!(ex[1].reference_question.as_deref(), Some(&["q".to_string()][..]));

        let dup = "{\"id\":\"a\",\"passage\":[\"x\"],\"answer\":[\"x\"]}\n{\"id\":\"a\",\"passage\":[\"x\"],\"answer\":[\"x\"]}\n";
        assert!(matches!(
            read_examples(dup.as_bytes()),
            Err(FormatError::Invalid { line: 2, .. })
        ));

        let empty = "{\"id\":\"a\",\"passage\":[],\"answer\":[\"x\"]}\n";
        assert!(matches!(
            read_examples(empty.as_bytes()),
            Err(FormatError::Invalid { line: 1, .. })
        ));

        let broken = "{\"id\":\"a\",\"passage\":[\"x\"],\"answer\":[\"x\"]}\n{oops\n";
        assert!(matches!(
            read_examples(broken.as_bytes()),
            Err(FormatError::Parse { line: 2, .. })
        ));

        let future = "{\"format_version\":7,\"id\":\"a\",\"passage\":[\"x\"],\"answer\":[\"x\"]}\n";
        assert!(matches!(
            read_examples(future.as_bytes()),
            Err(FormatError::Invalid { .. })
        ));
    }

    #[test]
    fn sparse_dist_densifies() {
        let rec: DistRecord =
            serde_json::from_str(r#"{"sparse":{"1":0.5,"3":0.1},"rest_uniform":true}"#).unwrap();
        let d = rec.densify(5).unwrap();
        assert_eq!(d[1], 0.5);
        assert_eq!(d[3], 0.1);
        for i in [0, 2, 4] {
            assert!((d[i] - 0.4 / 3.0).abs() < 1e-15);
        }
        let plain: DistRecord = serde_json::from_str(r#"{"sparse":{"0":1.0}}"#).unwrap();
        assert_eq!(plain.densify(3).unwrap(), vec![1.0, 0.0, 0.0]);
        let oob: DistRecord = serde_json::from_str(r#"{"sparse":{"9":1.0}}"#).unwrap();
        assert!(oob.densify(3).is_err());
        let junk: DistRecord = serde_json::from_str(r#"{"sparse":{"x":1.0}}"#).unwrap();
        assert!(junk.densify(3).is_err());
        let dense = DistRecord::Dense(vec![0.5, 0.5]);
        assert!(dense.densify(3).is_err());
    }
}
