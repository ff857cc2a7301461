//! Beam search with partial-copy probability re-adjustment.
//!
//! At every step the model's output distribution `P` is rescaled as
//! `P(w) * (1 + lambda1 * C(w, s))`, where `s` is the passage word carrying
//! the highest attention weight and `C` is the thresholded overlap rate, and
//! then renormalized. Scores are raw sums of log adjusted probabilities.

use std::collections::HashMap;
use std::rc::Rc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::example::Example;
use crate::model::{GeneratorModel, ModelError};
use crate::morpho::{MorphoError, OverlapScorer, OverlapThreshold};
use crate::vocab::{TokenId, Vocabulary, BOS, EOS};

/// Tolerance on the unit sum of step distributions and attention vectors.
pub const STEP_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecodeError {
    #[error("attention vector is empty")]
    EmptyAttention,
    #[error("attention has {attention} positions but the passage has {passage} tokens")]
    AttentionLength { attention: usize, passage: usize },
    #[error("distribution has {got} entries, vocabulary has {expected}")]
    DistributionLength { got: usize, expected: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Morpho(#[from] MorphoError),
    #[error("model step failed for example {example_id:?} at prefix {prefix:?}: {source}")]
    Model {
        example_id: String,
        prefix: Vec<TokenId>,
        #[source]
        source: ModelError,
    },
    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

/// One decoder step: a distribution over the vocabulary and attention
/// weights over passage positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutput {
    pub distribution: Vec<f64>,
    pub attention: Vec<f64>,
}

impl StepOutput {
    pub fn new(distribution: Vec<f64>, attention: Vec<f64>) -> Self {
        Self {
            distribution,
            attention,
        }
    }

    /// Checks non-negativity and unit sums of both vectors within `tolerance`.
    pub fn validate(&self, tolerance: f64) -> Result<(), String> {
        check_simplex("distribution", &self.distribution, tolerance)?;
        check_simplex("attention", &self.attention, tolerance)
    }
}

pub(crate) fn check_simplex(what: &str, v: &[f64], tolerance: f64) -> Result<(), String> {
    if v.is_empty() {
        return Err(format!("{what} is empty"));
    }
    if let Some((i, x)) = v.iter().enumerate().find(|(_, x)| !x.is_finite() || **x < 0.0) {
        return Err(format!("{what}[{i}] = {x} is not a finite non-negative weight"));
    }
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > tolerance {
        return Err(format!("{what} sums to {sum}, expected 1 within {tolerance:e}"));
    }
    Ok(())
}

/// Partial-copy settings: threshold `gamma` and boost strength `lambda1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartialCopyConfig {
    pub gamma: OverlapThreshold,
    pub lambda1: f64,
    pub enabled: bool,
    /// Lowercase both words before computing the overlap.
    pub case_fold: bool,
}

impl PartialCopyConfig {
    pub fn new(gamma: f64, lambda1: f64) -> Result<Self, DecodeError> {
        let gamma = OverlapThreshold::new(gamma)?;
        if !(lambda1.is_finite() && lambda1 >= 0.0) {
            return Err(DecodeError::Config(format!(
                "lambda1 must be a finite value >= 0, got {lambda1}"
            )));
        }
        Ok(Self {
            gamma,
            lambda1,
            enabled: true,
            case_fold: false,
        })
    }

    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    fn is_active(&self) -> bool {
        self.enabled && self.lambda1 != 0.0
    }
}

impl Default for PartialCopyConfig {
    fn default() -> Self {
        Self {
            gamma: OverlapThreshold::DEFAULT,
            lambda1: 1.0,
            enabled: true,
            case_fold: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BeamConfig {
    pub beam_size: usize,
    pub max_length: usize,
    pub nbest_size: usize,
}

impl BeamConfig {
    pub fn new(beam_size: usize, max_length: usize, nbest_size: usize) -> Result<Self, DecodeError> {
        if beam_size == 0 || max_length == 0 || nbest_size == 0 {
            return Err(DecodeError::Config(
                "beam size, max length and n-best size must all be positive".into(),
            ));
        }
        if nbest_size > beam_size {
            return Err(DecodeError::Config(format!(
                "n-best size {nbest_size} exceeds beam size {beam_size}"
            )));
        }
        Ok(Self {
            beam_size,
            max_length,
            nbest_size,
        })
    }

    pub fn greedy(max_length: usize) -> Self {
        Self {
            beam_size: 1,
            max_length,
            nbest_size: 1,
        }
    }
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            beam_size: 20,
            max_length: 30,
            nbest_size: 20,
        }
    }
}

/// A partial or finished question under construction. `tokens` never holds
/// the start or end markers; `complete` records whether the end marker was
/// emitted (its probability is included in `log_prob`).
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<TokenId>,
    pub log_prob: f64,
    pub aligned_positions: Vec<usize>,
    pub complete: bool,
}

impl Hypothesis {
    fn root() -> Self {
        Self {
            tokens: Vec::new(),
            log_prob: 0.0,
            aligned_positions: Vec::new(),
            complete: false,
        }
    }

    /// Model prefix for the next step: start marker followed by the tokens.
    pub fn prefix(&self) -> Vec<TokenId> {
        let mut p = Vec::with_capacity(self.tokens.len() + 1);
        p.push(BOS);
        p.extend_from_slice(&self.tokens);
        p
    }
}

/// One n-best entry as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub tokens: Vec<String>,
    pub log_prob: f64,
    pub aligned_positions: Vec<usize>,
    pub complete: bool,
}

impl Candidate {
    pub fn question(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Candidates for one example, sorted by non-increasing `log_prob`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NBestList {
    pub id: String,
    pub candidates: Vec<Candidate>,
}

impl NBestList {
    pub fn top(&self) -> Option<&Candidate> {
        self.candidates.first()
    }
}

/// Index of the largest attention weight; the smallest index wins ties.
pub fn aligned_source_position(attention: &[f64]) -> Result<usize, DecodeError> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &w) in attention.iter().enumerate() {
        match best {
            Some((_, b)) if w <= b => {}
            _ => best = Some((i, w)),
        }
    }
    best.map(|(i, _)| i).ok_or(DecodeError::EmptyAttention)
}

/// Per-session memo of overlap rates between every vocabulary word and a
/// passage word.
pub struct CopyAdjuster<'v> {
    vocab: &'v Vocabulary,
    config: PartialCopyConfig,
    cache: HashMap<String, Rc<Vec<f64>>>,
}

impl<'v> CopyAdjuster<'v> {
    pub fn new(vocab: &'v Vocabulary, config: PartialCopyConfig) -> Self {
        Self {
            vocab,
            config,
            cache: HashMap::new(),
        }
    }

    /// Thresholded overlap of each vocabulary entry with `source`. Reserved
    /// markers always get 0.
    pub fn overlaps(&mut self, source: &str) -> Result<Rc<Vec<f64>>, DecodeError> {
        if let Some(c) = self.cache.get(source) {
            return Ok(Rc::clone(c));
        }
        let scorer = OverlapScorer::new(source, self.config.gamma, self.config.case_fold);
        let mut rates = Vec::with_capacity(self.vocab.len());
        for (id, word) in self.vocab.words().iter().enumerate() {
            if Vocabulary::is_reserved(TokenId(id as u32)) {
                rates.push(0.0);
            } else {
                rates.push(scorer.score(word)?);
            }
        }
        let rates = Rc::new(rates);
        self.cache.insert(source.to_owned(), Rc::clone(&rates));
        Ok(rates)
    }

    /// Re-adjusted, renormalized distribution for one step.
    ///
    /// When the mechanism is off, `lambda1` is zero, or no vocabulary word
    /// overlaps the aligned passage word, every multiplier is 1 and the input
    /// distribution is returned unchanged.
    pub fn adjust(&mut self, step: &StepOutput, passage: &[String]) -> Result<Vec<f64>, DecodeError> {
        if step.distribution.len() != self.vocab.len() {
            return Err(DecodeError::DistributionLength {
                got: step.distribution.len(),
                expected: self.vocab.len(),
            });
        }
        if !self.config.is_active() {
            return Ok(step.distribution.clone());
        }
        let pos = aligned_source_position(&step.attention)?;
        let source = passage.get(pos).ok_or(DecodeError::AttentionLength {
            attention: step.attention.len(),
            passage: passage.len(),
        })?;
        let rates = self.overlaps(source)?;
        if rates.iter().all(|&c| c == 0.0) {
            return Ok(step.distribution.clone());
        }
        let lambda1 = self.config.lambda1;
        let mut adjusted: Vec<f64> = step
            .distribution
            .iter()
            .zip(rates.iter())
            .map(|(&p, &c)| p * (1.0 + lambda1 * c))
            .collect();
        let total: f64 = adjusted.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(DecodeError::Invariant(format!(
                "adjusted distribution has total mass {total}"
            )));
        }
        for p in &mut adjusted {
            *p /= total;
        }
        Ok(adjusted)
    }
}

/// Applies the partial-copy re-adjustment to a single step output.
pub fn adjust_distribution(
    step: &StepOutput,
    passage: &[String],
    vocab: &Vocabulary,
    config: &PartialCopyConfig,
) -> Result<Vec<f64>, DecodeError> {
    CopyAdjuster::new(vocab, *config).adjust(step, passage)
}

struct Expansion {
    parent: usize,
    token: TokenId,
    log_prob: f64,
    aligned: usize,
}

/// Beam search over `model` for one example.
///
/// Each step expands every live hypothesis by every vocabulary token (except
/// the start marker and zero-probability tokens), ranks all expansions by
/// cumulative log probability (ties keep parent then token order) and keeps
/// the top `beam_size`. Expansions ending in the end marker move to the
/// finished pool. Search stops once `beam_size` hypotheses have finished or
/// `max_length` steps have run. If fewer than `nbest_size` finished, the best
/// length-truncated hypotheses fill the list.
pub fn beam_search(
    model: &dyn GeneratorModel,
    example: &Example,
    beam: &BeamConfig,
    copy: &PartialCopyConfig,
) -> Result<Vec<Hypothesis>, DecodeError> {
    let vocab = model.vocab();
    let mut adjuster = CopyAdjuster::new(vocab, *copy);
    let mut session = model
        .begin_session(example)
        .map_err(|source| DecodeError::Model {
            example_id: example.id.clone(),
            prefix: Vec::new(),
            source,
        })?;

    let mut live = vec![Hypothesis::root()];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for _ in 0..beam.max_length {
        if live.is_empty() || finished.len() >= beam.beam_size {
            break;
        }
        let mut expansions = Vec::new();
        for (parent, hyp) in live.iter().enumerate() {
            let prefix = hyp.prefix();
            let step = session.step(&prefix).map_err(|source| DecodeError::Model {
                example_id: example.id.clone(),
                prefix: prefix.clone(),
                source,
            })?;
            if step.attention.len() != example.passage.len() {
                return Err(DecodeError::AttentionLength {
                    attention: step.attention.len(),
                    passage: example.passage.len(),
                });
            }
            let aligned = aligned_source_position(&step.attention)?;
            let dist = adjuster.adjust(&step, &example.passage)?;
            for (id, &p) in dist.iter().enumerate() {
                let token = TokenId(id as u32);
                if token == BOS || p <= 0.0 {
                    continue;
                }
                expansions.push(Expansion {
                    parent,
                    token,
                    log_prob: hyp.log_prob + p.ln(),
                    aligned,
                });
            }
        }
        // stable: equal scores keep (parent, token) order
        expansions.sort_by(|a, b| b.log_prob.total_cmp(&a.log_prob));
        expansions.truncate(beam.beam_size);

        let mut next = Vec::with_capacity(expansions.len());
        for e in expansions {
            let parent = &live[e.parent];
            if e.token == EOS {
                finished.push(Hypothesis {
                    tokens: parent.tokens.clone(),
                    log_prob: e.log_prob,
                    aligned_positions: parent.aligned_positions.clone(),
                    complete: true,
                });
            } else {
                let mut tokens = parent.tokens.clone();
                tokens.push(e.token);
                let mut aligned_positions = parent.aligned_positions.clone();
                aligned_positions.push(e.aligned);
                next.push(Hypothesis {
                    tokens,
                    log_prob: e.log_prob,
                    aligned_positions,
                    complete: false,
                });
            }
        }
        live = next;
    }

    finished.sort_by(|a, b| b.log_prob.total_cmp(&a.log_prob));
    finished.truncate(beam.nbest_size);
    if finished.len() < beam.nbest_size {
        let missing = beam.nbest_size - finished.len();
        finished.extend(
            live.into_iter()
                .filter(|h| h.tokens.len() == beam.max_length)
                .take(missing),
        );
        finished.sort_by(|a, b| b.log_prob.total_cmp(&a.log_prob));
    }
    Ok(finished)
}

/// Runs [`beam_search`] and renders the result as an [`NBestList`].
pub fn decode_nbest(
    model: &dyn GeneratorModel,
    example: &Example,
    beam: &BeamConfig,
    copy: &PartialCopyConfig,
) -> Result<NBestList, DecodeError> {
    let vocab = model.vocab();
    let hyps = beam_search(model, example, beam, copy)?;
    Ok(NBestList {
        id: example.id.clone(),
        candidates: hyps
            .into_iter()
            .map(|h| Candidate {
                tokens: vocab.decode(&h.tokens),
                log_prob: h.log_prob,
                aligned_positions: h.aligned_positions,
                complete: h.complete,
            })
            .collect(),
    })
}
