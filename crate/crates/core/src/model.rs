//! Generator models behind the decoder.
//!
//! A model is opened once per example ([`GeneratorModel::begin_session`]) and
//! then queried with token-id prefixes that start with the sequence-start
//! marker. Three implementations ship here:
//!
//! * [`ReplayModel`] answers from a recorded [`DecodingTrace`];
//! * [`ToyModel`], a smoothed bigram model with a lexical-match attention rule;
//! * [`RecordingModel`], a wrapper that captures every step of another model
//!   so it can be written out as a trace.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decode::{check_simplex, StepOutput};
use crate::example::Example;
use crate::formats::{self, DistRecord, FormatError, TraceRecord, FORMAT_VERSION};
use crate::vocab::{TokenId, VocabError, Vocabulary, BOS, EOS_WORD};

/// Unit-sum tolerance applied when loading recorded distributions.
pub const TRACE_SUM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("trace has no entry for example {example_id:?} with prefix {prefix:?}")]
    TraceMiss {
        example_id: String,
        prefix: Vec<TokenId>,
    },
    #[error("example {0:?} has an empty passage")]
    EmptyPassage(String),
    #[error(
        "recorded attention for example {example_id:?} has {attention} positions, passage has {passage}"
    )]
    AttentionLength {
        example_id: String,
        attention: usize,
        passage: usize,
    },
    #[error("toy corpus is empty")]
    EmptyCorpus,
    #[error("toy corpus entry {0:?} has no reference question")]
    MissingQuestion(String),
    #[error("smoothing constant must be finite and > 0, got {0}")]
    InvalidSmoothing(f64),
    #[error(transparent)]
    Vocab(#[from] VocabError),
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("line {line}: entry ({id:?}, {prefix:?}): {reason}")]
    Invalid {
        line: usize,
        id: String,
        prefix: Vec<u32>,
        reason: String,
    },
}

/// A per-example decoding session.
pub trait ModelSession {
    /// Step output after `prefix`, which begins with the start marker.
    fn step(&mut self, prefix: &[TokenId]) -> Result<StepOutput, ModelError>;
}

/// A question generator. Step outputs must be a pure function of the
/// example and the prefix.
pub trait GeneratorModel: Send + Sync {
    fn vocab(&self) -> &Vocabulary;

    fn begin_session<'a>(&'a self, example: &'a Example) -> Result<Box<dyn ModelSession + 'a>, ModelError>;
}

type TraceKey = (String, Vec<TokenId>);

/// Recorded step outputs keyed by exact `(example id, prefix)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DecodingTrace {
    steps: HashMap<TraceKey, StepOutput>,
}

impl DecodingTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn insert(&mut self, example_id: &str, prefix: Vec<TokenId>, step: StepOutput) {
        self.steps.insert((example_id.to_owned(), prefix), step);
    }

    /// Recorded output for `(example_id, prefix)`; exact-match only.
    pub fn replay_step(&self, example_id: &str, prefix: &[TokenId]) -> Result<&StepOutput, ModelError> {
        // HashMap<(String, Vec)> cannot be probed with borrowed parts
        self.steps
            .get(&(example_id.to_owned(), prefix.to_vec()))
            .ok_or_else(|| ModelError::TraceMiss {
                example_id: example_id.to_owned(),
                prefix: prefix.to_vec(),
            })
    }

    /// Parses and validates trace JSONL from a reader.
    pub fn from_reader<R: BufRead>(reader: R, vocab: &Vocabulary) -> Result<Self, TraceError> {
        let mut trace = DecodingTrace::new();
        let mut attention_len: HashMap<String, usize> = HashMap::new();
        for item in formats::jsonl_records::<TraceRecord, _>(reader) {
            let (line, rec) = item?;
            let invalid = |reason: String| TraceError::Invalid {
                line,
                id: rec.id.clone(),
                prefix: rec.prefix.clone(),
                reason,
            };
            if rec.format_version != FORMAT_VERSION {
                return Err(invalid(format!(
                    "unsupported format_version {}",
                    rec.format_version
                )));
            }
            let prefix: Vec<TokenId> = rec.prefix.iter().map(|&i| TokenId(i)).collect();
            for &id in &prefix {
                vocab.check(id).map_err(|e| invalid(e.to_string()))?;
            }
            let distribution = rec.dist.densify(vocab.len()).map_err(invalid)?;
            check_simplex("distribution", &distribution, TRACE_SUM_TOLERANCE).map_err(invalid)?;
            check_simplex("attention", &rec.attention, TRACE_SUM_TOLERANCE).map_err(invalid)?;
            let expected = *attention_len.entry(rec.id.clone()).or_insert(rec.attention.len());
            if expected != rec.attention.len() {
                return Err(invalid(format!(
                    "attention has {} positions, earlier entries for this example have {expected}",
                    rec.attention.len()
                )));
            }
            let key = (rec.id.clone(), prefix);
            if trace.steps.contains_key(&key) {
                return Err(invalid("duplicate (id, prefix) entry".into()));
            }
            trace
                .steps
                .insert(key, StepOutput::new(distribution, rec.attention.clone()));
        }
        Ok(trace)
    }

    /// Records in a stable order (by id, then prefix), dense distributions.
    pub fn to_records(&self) -> Vec<TraceRecord> {
        let ordered: BTreeMap<&TraceKey, &StepOutput> = self.steps.iter().collect();
        ordered
            .into_iter()
            .map(|((id, prefix), step)| TraceRecord {
                format_version: FORMAT_VERSION,
                id: id.clone(),
                prefix: prefix.iter().map(|t| t.0).collect(),
                dist: DistRecord::Dense(step.distribution.clone()),
                attention: step.attention.clone(),
            })
            .collect()
    }
}

/// Loads a trace JSONL file, validating every entry against `vocab`.
pub fn load_trace(path: &Path, vocab: &Vocabulary) -> Result<DecodingTrace, TraceError> {
    let reader = formats::open(path)?;
    DecodingTrace::from_reader(reader, vocab)
}

/// Replays a recorded trace.
#[derive(Debug, Clone)]
pub struct ReplayModel {
    vocab: Vocabulary,
    trace: DecodingTrace,
}

impl ReplayModel {
    pub fn new(vocab: Vocabulary, trace: DecodingTrace) -> Self {
        Self { vocab, trace }
    }

    pub fn trace(&self) -> &DecodingTrace {
        &self.trace
    }
}

struct ReplaySession<'a> {
    trace: &'a DecodingTrace,
    example: &'a Example,
}

impl ModelSession for ReplaySession<'_> {
    fn step(&mut self, prefix: &[TokenId]) -> Result<StepOutput, ModelError> {
        let out = self.trace.replay_step(&self.example.id, prefix)?;
        if out.attention.len() != self.example.passage.len() {
            return Err(ModelError::AttentionLength {
                example_id: self.example.id.clone(),
                attention: out.attention.len(),
                passage: self.example.passage.len(),
            });
        }
        Ok(out.clone())
    }
}

impl GeneratorModel for ReplayModel {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn begin_session<'a>(&'a self, example: &'a Example) -> Result<Box<dyn ModelSession + 'a>, ModelError> {
        Ok(Box::new(ReplaySession {
            trace: &self.trace,
            example,
        }))
    }
}

/// Smoothed bigram question model.
///
/// `P(w | prev) = (count(prev, w) + alpha) / (count(prev) + alpha * (|V| - 1))`
/// for every `w` except the start marker, which gets 0. Attention is uniform
/// over passage positions holding the previous generated word, or uniform
/// over the whole passage when there is no such position.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    vocab: Vocabulary,
    smoothing: f64,
    transitions: HashMap<TokenId, BTreeMap<TokenId, u32>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ToyModelFile {
    format_version: u32,
    smoothing: f64,
    vocab: Vec<String>,
    bigrams: Vec<(u32, u32, u32)>,
}

impl ToyModel {
    /// Counts bigrams over the corpus questions, each wrapped in start and
    /// end markers. The vocabulary covers every passage, answer and question
    /// word in first-seen order.
    pub fn train(corpus: &[Example], smoothing: f64) -> Result<Self, ModelError> {
        if corpus.is_empty() {
            return Err(ModelError::EmptyCorpus);
        }
        if !(smoothing.is_finite() && smoothing > 0.0) {
            return Err(ModelError::InvalidSmoothing(smoothing));
        }
        let mut questions = Vec::with_capacity(corpus.len());
        for ex in corpus {
            let q = ex
                .reference_question
                .as_ref()
                .ok_or_else(|| ModelError::MissingQuestion(ex.id.clone()))?;
            questions.push(q);
        }
        let vocab = Vocabulary::from_words(corpus.iter().flat_map(|ex| {
            ex.passage
                .iter()
                .chain(&ex.answer)
                .chain(ex.reference_question.iter().flatten())
        }));
        let mut transitions: HashMap<TokenId, BTreeMap<TokenId, u32>> = HashMap::new();
        for q in questions {
            let mut prev = BOS;
            for id in vocab.encode(q).into_iter().chain([crate::vocab::EOS]) {
                *transitions.entry(prev).or_default().entry(id).or_insert(0) += 1;
                prev = id;
            }
        }
        Ok(Self {
            vocab,
            smoothing,
            transitions,
        })
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    pub fn bigram_count(&self, prev: TokenId, next: TokenId) -> u32 {
        self.transitions
            .get(&prev)
            .and_then(|row| row.get(&next))
            .copied()
            .unwrap_or(0)
    }

    /// Next-token distribution after `prev`.
    pub fn distribution(&self, prev: TokenId) -> Vec<f64> {
        let n = self.vocab.len();
        let row = self.transitions.get(&prev);
        let total: u32 = row.map(|r| r.values().sum()).unwrap_or(0);
        let denom = total as f64 + self.smoothing * (n - 1) as f64;
        (0..n)
            .map(|i| {
                let id = TokenId(i as u32);
                if id == BOS {
                    0.0
                } else {
                    let c = row.and_then(|r| r.get(&id)).copied().unwrap_or(0);
                    (c as f64 + self.smoothing) / denom
                }
            })
            .collect()
    }

    /// Lexical-match attention over `passage` given the previous word.
    pub fn attention(passage: &[String], prev_word: &str) -> Vec<f64> {
        let hits = passage.iter().filter(|w| *w == prev_word).count();
        if hits == 0 {
            let w = 1.0 / passage.len() as f64;
            vec![w; passage.len()]
        } else {
            let w = 1.0 / hits as f64;
            passage
                .iter()
                .map(|p| if p == prev_word { w } else { 0.0 })
                .collect()
        }
    }

    pub fn to_json(&self) -> String {
        let mut bigrams: Vec<(u32, u32, u32)> = self
            .transitions
            .iter()
            .flat_map(|(prev, row)| row.iter().map(move |(next, &c)| (prev.0, next.0, c)))
            .collect();
        bigrams.sort_unstable();
        let file = ToyModelFile {
            format_version: FORMAT_VERSION,
            smoothing: self.smoothing,
            vocab: self.vocab.words().to_vec(),
            bigrams,
        };
        serde_json::to_string(&file).expect("toy model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, FormatError> {
        let file: ToyModelFile = serde_json::from_str(s).map_err(|e| FormatError::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        let bad = |message: String| FormatError::Invalid { line: 1, message };
        if file.format_version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format_version {}", file.format_version)));
        }
        if !(file.smoothing.is_finite() && file.smoothing > 0.0) {
            return Err(bad(format!("smoothing must be > 0, got {}", file.smoothing)));
        }
        let vocab = Vocabulary::from_id_order(file.vocab).map_err(|e| bad(e.to_string()))?;
        let mut transitions: HashMap<TokenId, BTreeMap<TokenId, u32>> = HashMap::new();
        for (prev, next, count) in file.bigrams {
            for id in [prev, next] {
                vocab.check(TokenId(id)).map_err(|e| bad(e.to_string()))?;
            }
            transitions
                .entry(TokenId(prev))
                .or_default()
                .insert(TokenId(next), count);
        }
        Ok(Self {
            vocab,
            smoothing: file.smoothing,
            transitions,
        })
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        let text = std::fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
        Self::from_json(&text)
    }
}

struct ToySession<'a> {
    model: &'a ToyModel,
    passage: &'a [String],
}

impl ModelSession for ToySession<'_> {
    fn step(&mut self, prefix: &[TokenId]) -> Result<StepOutput, ModelError> {
        let prev = prefix.last().copied().unwrap_or(BOS);
        self.model.vocab.check(prev)?;
        let prev_word = self.model.vocab.word(prev).unwrap_or(EOS_WORD);
        Ok(StepOutput::new(
            self.model.distribution(prev),
            ToyModel::attention(self.passage, prev_word),
        ))
    }
}

impl GeneratorModel for ToyModel {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn begin_session<'a>(&'a self, example: &'a Example) -> Result<Box<dyn ModelSession + 'a>, ModelError> {
        if example.passage.is_empty() {
            return Err(ModelError::EmptyPassage(example.id.clone()));
        }
        Ok(Box::new(ToySession {
            model: self,
            passage: &example.passage,
        }))
    }
}

/// Wraps a model and keeps every step output it produces.
pub struct RecordingModel<'m> {
    inner: &'m dyn GeneratorModel,
    recorded: Mutex<DecodingTrace>,
}

impl<'m> RecordingModel<'m> {
    pub fn new(inner: &'m dyn GeneratorModel) -> Self {
        Self {
            inner,
            recorded: Mutex::new(DecodingTrace::new()),
        }
    }

    pub fn into_trace(self) -> DecodingTrace {
        self.recorded.into_inner().unwrap_or_else(|e| e.into_inner())
    }
}

struct RecordingSession<'a> {
    inner: Box<dyn ModelSession + 'a>,
    example_id: &'a str,
    sink: &'a Mutex<DecodingTrace>,
}

impl ModelSession for RecordingSession<'_> {
    fn step(&mut self, prefix: &[TokenId]) -> Result<StepOutput, ModelError> {
        let out = self.inner.step(prefix)?;
        let mut sink = self.sink.lock().unwrap_or_else(|e| e.into_inner());
        sink.insert(self.example_id, prefix.to_vec(), out.clone());
        Ok(out)
    }
}

impl GeneratorModel for RecordingModel<'_> {
    fn vocab(&self) -> &Vocabulary {
        self.inner.vocab()
    }

    fn begin_session<'a>(&'a self, example: &'a Example) -> Result<Box<dyn ModelSession + 'a>, ModelError> {
        Ok(Box::new(RecordingSession {
            inner: self.inner.begin_session(example)?,
            example_id: &example.id,
            sink: &self.recorded,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::EOS;

    fn corpus() -> Vec<Example> {
        vec![Example::from_text(
            "ex1",
            "teaching started in 1794 .",
            "1794",
            Some("when did teaching start"),
        )]
    }

    #[test]
    fn toy_bigram_prefers_observed_successor() {
        let model = ToyModel::train(&corpus(), 0.1).unwrap();
        let v = model.vocab();
        let when = v.id("when").unwrap();
        let did = v.id("did").unwrap();
        let dist = model.distribution(when);
        let (argmax, _) = dist
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .unwrap();
        assert_eq!(argmax, did.index());
        // (1 + 0.1) / (1 + 0.1 * (|V| - 1))
        let expected = 1.1 / (1.0 + 0.1 * (v.len() - 1) as f64);
        assert!((dist[did.index()] - expected).abs() < 1e-15);
        assert_eq!(dist[BOS.index()], 0.0);
        assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(model.bigram_count(v.id("start").unwrap(), EOS), 1);
    }

    #[test]
    fn toy_unseen_context_is_uniform() {
        let model = ToyModel::train(&corpus(), 0.5).unwrap();
        let dist = model.distribution(model.vocab().id("1794").unwrap());
        let u = 1.0 / (model.vocab().len() - 1) as f64;
        assert!(dist[1..].iter().all(|&p| (p - u).abs() < 1e-15));
    }

    #[test]
    fn toy_attention_rule() {
        let passage: Vec<String> = "the cat saw the dog".split(' ').map(String::from).collect();
        assert_eq!(
            ToyModel::attention(&passage, "the"),
            vec![0.5, 0.0, 0.0, 0.5, 0.0]
        );
        assert_eq!(
            ToyModel::attention(&passage, "dog"),
            vec![0.0, 0.0, 0.0, 0.0, 1.0]
        );
        assert_eq!(ToyModel::attention(&passage, "<s>"), vec![0.2; 5]);
    }

    #[test]
    fn toy_train_errors() {
        assert_eq!(ToyModel::train(&[], 0.1), Err(ModelError::EmptyCorpus));
        assert_eq!(
            ToyModel::train(&corpus(), 0.0),
            Err(ModelError::InvalidSmoothing(0.0))
        );
        let no_q = vec![Example::from_text("x", "a b", "a", None)];
        assert_eq!(
            ToyModel::train(&no_q, 0.1),
            Err(ModelError::MissingQuestion("x".into()))
        );
    }

    #[test]
    fn toy_json_round_trip() {
        let model = ToyModel::train(&corpus(), 0.25).unwrap();
        let back = ToyModel::from_json(&model.to_json()).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn toy_session_rejects_empty_passage() {
        let model = ToyModel::train(&corpus(), 0.1).unwrap();
        let ex = Example::new::<&str>("e", &[], &["x"]);
        assert!(matches!(
            model.begin_session(&ex),
            Err(ModelError::EmptyPassage(_))
        ));
    }

    #[test]
    fn replay_exact_prefix_semantics() {
        let vocab = Vocabulary::from_words(["a", "b"]);
        let mut trace = DecodingTrace::new();
        let step = StepOutput::new(vec![0.0, 0.2, 0.0, 0.4, 0.4], vec![1.0]);
        trace.insert("ex1", vec![BOS], step.clone());
        trace.insert("ex1", vec![BOS, TokenId(3)], step.clone());
        assert_eq!(trace.replay_step("ex1", &[BOS]).unwrap(), &step);
        let miss = trace.replay_step("ex1", &[BOS, TokenId(4)]).unwrap_err();
        assert_eq!(
            miss,
            ModelError::TraceMiss {
                example_id: "ex1".into(),
                prefix: vec![BOS, TokenId(4)]
            }
        );
        assert!(trace.replay_step("ex2", &[BOS]).is_err());

        let model = ReplayModel::new(vocab, trace);
        let ex = Example::new("ex1", &["a", "b"], &["a"]);
        let mut s = model.begin_session(&ex).unwrap();
        assert!(matches!(s.step(&[BOS]), Err(ModelError::AttentionLength { .. })));
    }
}
