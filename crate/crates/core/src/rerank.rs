//! QA-based reranking of n-best question candidates.
//!
//! Each candidate is handed to a QA oracle together with the passage. The
//! predicted answer is compared with the gold answer by character-set F1
//! (`score2`) and mixed with the decoder log probability (`score1`):
//!
//! ```text
//! combined = (1 - lambda2) * score1 + lambda2 * score2
//! ```

use std::collections::{HashMap, HashSet};
use std::io::BufRead;
use std::path::Path;

use thiserror::Error;

use crate::decode::{Candidate, NBestList};
use crate::formats::{self, FormatError, QaPredictionRecord, FORMAT_VERSION};

#[derive(Debug, Error)]
pub enum RerankError {
    #[error("lambda2 must lie in [0, 1], got {0}")]
    InvalidLambda(f64),
    #[error("n-best list {0:?} is empty")]
    EmptyNBest(String),
    #[error("no recorded answer for example {example_id:?}, question {question:?}")]
    OracleMiss { example_id: String, question: String },
    #[error("QA oracle failed on candidate {rank} of {example_id:?} ({question:?}): {source}")]
    Oracle {
        example_id: String,
        rank: usize,
        question: String,
        #[source]
        source: Box<RerankError>,
    },
    #[error("line {line}: duplicate QA prediction for ({id:?}, {question:?})")]
    DuplicatePrediction {
        line: usize,
        id: String,
        question: String,
    },
    #[error(transparent)]
    Format(#[from] FormatError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RerankConfig {
    pub lambda2: f64,
    /// Divide `score1` by the candidate length (end marker included for
    /// complete candidates). Off by default.
    pub length_normalize: bool,
}

impl RerankConfig {
    pub fn new(lambda2: f64) -> Result<Self, RerankError> {
        if !(0.0..=1.0).contains(&lambda2) {
            return Err(RerankError::InvalidLambda(lambda2));
        }
        Ok(Self {
            lambda2,
            length_normalize: false,
        })
    }
}

impl Default for RerankConfig {
    fn default() -> Self {
        Self {
            lambda2: 0.2,
            length_normalize: false,
        }
    }
}

fn char_set(s: &str) -> HashSet<char> {
    s.chars()
        .filter(|c| !c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect()
}

/// Character-level F1 between two answers viewed as sets of characters.
///
/// Whitespace is ignored and characters are lowercased. Returns 0 when either
/// set is empty.
pub fn char_f1(predicted: &str, gold: &str) -> f64 {
    let a = char_set(predicted);
    let b = char_set(gold);
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let common = a.intersection(&b).count();
    // 2PR / (P + R) with P = common/|A|, R = common/|B|
    (2 * common) as f64 / (a.len() + b.len()) as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateScore {
    pub score1: f64,
    pub score2: f64,
    pub combined: f64,
}

pub fn combined_score(score1: f64, score2: f64, config: &RerankConfig) -> f64 {
    (1.0 - config.lambda2) * score1 + config.lambda2 * score2
}

/// What the oracle is asked.
#[derive(Debug, Clone, Copy)]
pub struct QaQuery<'a> {
    pub example_id: &'a str,
    pub passage: &'a [String],
    pub question: &'a [String],
}

/// Answers a question about a passage. Must be deterministic.
pub trait QaOracle: Send + Sync {
    fn predict_answer(&self, query: &QaQuery<'_>) -> Result<String, RerankError>;
}

/// Passage span of at most `max_span` tokens covering the most question
/// tokens. Ties go to the shorter span, then the earlier one. The span is
/// returned space-joined.
pub fn toy_span_oracle(passage: &[String], question: &[String], max_span: usize) -> String {
    let in_question: HashSet<&str> = question.iter().map(String::as_str).collect();
    let hits: Vec<usize> = passage
        .iter()
        .map(|w| in_question.contains(w.as_str()) as usize)
        .collect();
    let mut best: Option<(usize, usize, usize)> = None; // (overlap, len, start)
    for len in 1..=max_span.max(1).min(passage.len()) {
        let mut overlap: usize = hits[..len].iter().sum();
        for start in 0..=passage.len() - len {
            if start > 0 {
                overlap = overlap + hits[start + len - 1] - hits[start - 1];
            }
            if best.is_none_or(|(b, _, _)| overlap > b) {
                best = Some((overlap, len, start));
            }
        }
    }
    match best {
        Some((_, len, start)) => passage[start..start + len].join(" "),
        None => String::new(),
    }
}

/// [`toy_span_oracle`] as a [`QaOracle`].
#[derive(Debug, Clone, Copy)]
pub struct ToySpanOracle {
    pub max_span: usize,
}

impl ToySpanOracle {
    pub fn new(max_span: usize) -> Self {
        Self {
            max_span: max_span.max(1),
        }
    }
}

impl Default for ToySpanOracle {
    fn default() -> Self {
        Self::new(4)
    }
}

impl QaOracle for ToySpanOracle {
    fn predict_answer(&self, query: &QaQuery<'_>) -> Result<String, RerankError> {
        Ok(toy_span_oracle(query.passage, query.question, self.max_span))
    }
}

/// Answers from recorded predictions keyed by `(example id, question)`.
#[derive(Debug, Clone, Default)]
pub struct ReplayQaOracle {
    answers: HashMap<(String, String), String>,
}

impl ReplayQaOracle {
    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self, RerankError> {
        let mut answers = HashMap::new();
        for item in formats::jsonl_records::<QaPredictionRecord, _>(reader) {
            let (line, rec) = item?;
            if rec.format_version != FORMAT_VERSION {
                return Err(FormatError::Invalid {
                    line,
                    message: format!("unsupported format_version {}", rec.format_version),
                }
                .into());
            }
            let key = (rec.id, rec.question);
            if answers.contains_key(&key) {
                let (id, question) = key;
                return Err(RerankError::DuplicatePrediction { line, id, question });
            }
            answers.insert(key, rec.answer);
        }
        Ok(Self { answers })
    }

    pub fn load(path: &Path) -> Result<Self, RerankError> {
        Self::from_reader(formats::open(path)?)
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }
}

impl QaOracle for ReplayQaOracle {
    fn predict_answer(&self, query: &QaQuery<'_>) -> Result<String, RerankError> {
        let question = query.question.join(" ");
        self.answers
            .get(&(query.example_id.to_owned(), question.clone()))
            .cloned()
            .ok_or_else(|| RerankError::OracleMiss {
                example_id: query.example_id.to_owned(),
                question,
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RerankedCandidate {
    pub candidate: Candidate,
    pub predicted_answer: String,
    pub score: CandidateScore,
    /// 1-based position in the decoder's list.
    pub old_rank: usize,
    /// 1-based position after reranking.
    pub new_rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RerankedList {
    pub id: String,
    /// In new-rank order.
    pub candidates: Vec<RerankedCandidate>,
}

impl RerankedList {
    pub fn top(&self) -> &RerankedCandidate {
        &self.candidates[0]
    }

    pub fn top1_changed(&self) -> bool {
        self.candidates[0].old_rank != 1
    }
}

fn decoder_score(c: &Candidate, config: &RerankConfig) -> f64 {
    if config.length_normalize {
        let len = c.tokens.len() + c.complete as usize;
        c.log_prob / len.max(1) as f64
    } else {
        c.log_prob
    }
}

/// Rescores and re-sorts one n-best list. The sort is stable, so equal
/// combined scores keep the decoder's order.
pub fn rerank(
    nbest: &NBestList,
    passage: &[String],
    gold_answer: &str,
    oracle: &dyn QaOracle,
    config: &RerankConfig,
) -> Result<RerankedList, RerankError> {
    if nbest.candidates.is_empty() {
        return Err(RerankError::EmptyNBest(nbest.id.clone()));
    }
    let mut scored = Vec::with_capacity(nbest.candidates.len());
    for (i, cand) in nbest.candidates.iter().enumerate() {
        let query = QaQuery {
            example_id: &nbest.id,
            passage,
            question: &cand.tokens,
        };
        let predicted = oracle.predict_answer(&query).map_err(|e| RerankError::Oracle {
            example_id: nbest.id.clone(),
            rank: i + 1,
            question: cand.question(),
            source: Box::new(e),
        })?;
        let score1 = decoder_score(cand, config);
        let score2 = char_f1(&predicted, gold_answer);
        scored.push(RerankedCandidate {
            candidate: cand.clone(),
            predicted_answer: predicted,
            score: CandidateScore {
                score1,
                score2,
                combined: combined_score(score1, score2, config),
            },
            old_rank: i + 1,
            new_rank: 0,
        });
    }
    scored.sort_by(|a, b| b.score.combined.total_cmp(&a.score.combined));
    for (i, c) in scored.iter_mut().enumerate() {
        c.new_rank = i + 1;
    }
    Ok(RerankedList {
        id: nbest.id.clone(),
        candidates: scored,
    })
}
