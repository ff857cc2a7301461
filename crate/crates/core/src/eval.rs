//! Evaluation and analysis: corpus BLEU, sentence BLEU-4, generic-template
//! counts, copy rate and before/after rerank tallies.

use std::collections::HashMap;
use std::fmt;
use std::hash::Hash;

use serde::Serialize;
use thiserror::Error;

use crate::morpho::{thresholded_overlap, OverlapThreshold};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("BLEU order must be in 1..=4, got {0}")]
    InvalidOrder(usize),
    #[error("invalid template pattern {pattern:?}: {reason}")]
    InvalidPattern { pattern: String, reason: String },
}

/// Whitespace tokenization of pre-tokenized text, lowercased unless
/// `lowercase` is false.
pub fn tokenize(text: &str, lowercase: bool) -> Vec<String> {
    text.split_whitespace()
        .map(|t| if lowercase { t.to_lowercase() } else { t.to_owned() })
        .collect()
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram matches and total candidate n-grams.
fn clipped_matches<T: Eq + Hash>(candidate: &[T], reference: &[T], n: usize) -> (usize, usize) {
    let cand = ngram_counts(candidate, n);
    let refs = ngram_counts(reference, n);
    let matched = cand
        .iter()
        .map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0)))
        .sum();
    (matched, candidate.len().saturating_sub(n - 1))
}

fn brevity_penalty(candidate_len: usize, reference_len: usize) -> f64 {
    if candidate_len == 0 {
        0.0
    } else if candidate_len < reference_len {
        (1.0 - reference_len as f64 / candidate_len as f64).exp()
    } else {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BleuReport {
    /// BLEU-1 .. BLEU-max_n, as percentages.
    pub bleu: Vec<f64>,
    pub brevity_penalty: f64,
    /// Clipped n-gram precisions for orders 1..=max_n.
    pub precisions: Vec<f64>,
    pub candidate_length: usize,
    pub reference_length: usize,
    pub candidate_count: usize,
}

impl BleuReport {
    /// BLEU-`n` percentage, if computed.
    pub fn bleu_n(&self, n: usize) -> Option<f64> {
        n.checked_sub(1).and_then(|i| self.bleu.get(i)).copied()
    }
}

impl fmt::Display for BleuReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, b) in self.bleu.iter().enumerate() {
            writeln!(f, "bleu_{} = {:.4}", i + 1, b)?;
        }
        for (i, p) in self.precisions.iter().enumerate() {
            writeln!(f, "precision_{} = {:.6}", i + 1, p)?;
        }
        writeln!(f, "brevity_penalty = {:.6}", self.brevity_penalty)?;
        writeln!(f, "candidate_length = {}", self.candidate_length)?;
        writeln!(f, "reference_length = {}", self.reference_length)?;
        write!(f, "candidate_count = {}", self.candidate_count)
    }
}

/// Corpus-level BLEU with one reference per candidate.
///
/// N-gram matches are clipped by reference counts and summed over the corpus;
/// BLEU-n is the geometric mean of precisions 1..=n times the brevity penalty
/// `exp(1 - r/c)` (when `c < r`). No smoothing: once a precision is zero that
/// order and all higher ones score 0.
pub fn corpus_bleu<S: AsRef<str> + Eq + Hash>(
    candidates: &[Vec<S>],
    references: &[Vec<S>],
    max_n: usize,
) -> Result<BleuReport, EvalError> {
    if !(1..=4).contains(&max_n) {
        return Err(EvalError::InvalidOrder(max_n));
    }
    if candidates.len() != references.len() {
        return Err(EvalError::LengthMismatch {
            left: candidates.len(),
            right: references.len(),
        });
    }
    if candidates.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let mut matched = vec![0usize; max_n];
    let mut total = vec![0usize; max_n];
    let mut c_len = 0;
    let mut r_len = 0;
    for (cand, reference) in candidates.iter().zip(references) {
        c_len += cand.len();
        r_len += reference.len();
        for n in 1..=max_n {
            let (m, t) = clipped_matches(cand, reference, n);
            matched[n - 1] += m;
            total[n - 1] += t;
        }
    }
    let precisions: Vec<f64> = matched
        .iter()
        .zip(&total)
        .map(|(&m, &t)| if t == 0 { 0.0 } else { m as f64 / t as f64 })
        .collect();
    let bp = brevity_penalty(c_len, r_len);
    let mut bleu = Vec::with_capacity(max_n);
    let mut log_sum = 0.0;
    let mut dead = false;
    for (i, &p) in precisions.iter().enumerate() {
        dead |= p == 0.0;
        if dead {
            bleu.push(0.0);
            continue;
        }
        log_sum += p.ln();
        let n = (i + 1) as f64;
        bleu.push(100.0 * bp * (log_sum / n).exp());
    }
    Ok(BleuReport {
        bleu,
        brevity_penalty: bp,
        precisions,
        candidate_length: c_len,
        reference_length: r_len,
        candidate_count: candidates.len(),
    })
}

/// Sentence-level BLEU-4 in `[0, 1]`.
///
/// Unigram precision is unsmoothed; orders 2..=4 use add-one smoothing
/// `(m + 1) / (t + 1)`. A zero unigram precision gives 0.
pub fn sentence_bleu4<S: AsRef<str> + Eq + Hash>(candidate: &[S], reference: &[S]) -> f64 {
    let (m1, t1) = clipped_matches(candidate, reference, 1);
    if m1 == 0 || t1 == 0 {
        return 0.0;
    }
    let mut log_sum = (m1 as f64 / t1 as f64).ln();
    for n in 2..=4 {
        let (m, t) = clipped_matches(candidate, reference, n);
        log_sum += ((m + 1) as f64 / (t + 1) as f64).ln();
    }
    brevity_penalty(candidate.len(), reference.len()) * (log_sum / 4.0).exp()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum PatternToken {
    Literal(String),
    Alternation(Vec<String>),
}

/// A prefix template such as `what is/was the name of ...?`.
///
/// Words match literally (case-insensitive); a word containing `/` is an
/// alternation slot whose matched branch is counted separately; a trailing
/// `...` (optionally followed by `?`) matches anything.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TemplatePattern {
    source: String,
    tokens: Vec<PatternToken>,
}

impl TemplatePattern {
    pub fn parse(pattern: &str) -> Result<Self, EvalError> {
        let invalid = |reason: &str| EvalError::InvalidPattern {
            pattern: pattern.to_owned(),
            reason: reason.to_owned(),
        };
        let mut words: Vec<&str> = pattern.split_whitespace().collect();
        if let Some(last) = words.last_mut() {
            let trimmed = last.trim_end_matches('?');
            if let Some(head) = trimmed.strip_suffix("...") {
                if head.is_empty() {
                    words.pop();
                } else {
                    *last = head;
                }
            }
        }
        if words.is_empty() {
            return Err(invalid("no words before the wildcard"));
        }
        let mut tokens = Vec::with_capacity(words.len());
        let mut slots = 0;
        for w in words {
            if w.contains("...") {
                return Err(invalid("wildcard is only allowed at the end"));
            }
            let w = w.to_lowercase();
            if w.contains('/') {
                let alts: Vec<String> = w.split('/').map(str::to_owned).collect();
                if alts.iter().any(String::is_empty) {
                    return Err(invalid("empty alternative"));
                }
                slots += 1;
                tokens.push(PatternToken::Alternation(alts));
            } else {
                tokens.push(PatternToken::Literal(w));
            }
        }
        if slots > 1 {
            return Err(invalid("at most one alternation slot is supported"));
        }
        Ok(Self {
            source: pattern.to_owned(),
            tokens,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Branch labels: one per alternative, or a single empty label.
    pub fn slots(&self) -> Vec<String> {
        self.tokens
            .iter()
            .find_map(|t| match t {
                PatternToken::Alternation(a) => Some(a.clone()),
                PatternToken::Literal(_) => None,
            })
            .unwrap_or_else(|| vec![String::new()])
    }

    /// Index into [`slots`](Self::slots) of the matched branch, if the
    /// question starts with this template.
    pub fn match_slot<S: AsRef<str>>(&self, question: &[S]) -> Option<usize> {
        if question.len() < self.tokens.len() {
            return None;
        }
        let mut slot = 0;
        for (pt, word) in self.tokens.iter().zip(question) {
            let word = word.as_ref().to_lowercase();
            match pt {
                PatternToken::Literal(l) if *l == word => {}
                PatternToken::Alternation(alts) => slot = alts.iter().position(|a| *a == word)?,
                PatternToken::Literal(_) => return None,
            }
        }
        Some(slot)
    }
}

/// Built-in generic-question templates.
pub const DEFAULT_TEMPLATES: [&str; 5] = [
    "what is/was the name of ...?",
    "what type of ...?",
    "what is/was another name ...?",
    "what is/was the total ...?",
    "what is/was it ...?",
];

pub fn default_templates() -> Vec<TemplatePattern> {
    DEFAULT_TEMPLATES
        .iter()
        .map(|p| TemplatePattern::parse(p).expect("built-in template parses"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TemplateCount {
    pub pattern: String,
    /// `(branch, count)` pairs; a single `("", n)` for patterns without a slot.
    pub by_slot: Vec<(String, usize)>,
}

impl TemplateCount {
    pub fn total(&self) -> usize {
        self.by_slot.iter().map(|(_, c)| c).sum()
    }
}

/// Counts, per pattern and branch, the questions that start with it.
pub fn count_templates<S: AsRef<str>>(
    questions: &[Vec<S>],
    patterns: &[TemplatePattern],
) -> Vec<TemplateCount> {
    patterns
        .iter()
        .map(|p| {
            let slots = p.slots();
            let mut counts = vec![0usize; slots.len()];
            for q in questions {
                if let Some(s) = p.match_slot(q) {
                    counts[s] += 1;
                }
            }
            TemplateCount {
                pattern: p.source().to_owned(),
                by_slot: slots.into_iter().zip(counts).collect(),
            }
        })
        .collect()
}

/// True for tokens with no alphanumeric characters.
pub fn is_punctuation(token: &str) -> bool {
    !token.chars().any(char::is_alphanumeric)
}

/// Fraction of non-punctuation question tokens that have some passage token
/// with a non-zero thresholded overlap. 0 when the question has no words.
pub fn copy_rate<S: AsRef<str>>(question: &[S], passage: &[S], gamma: OverlapThreshold) -> f64 {
    let words: Vec<&str> = question
        .iter()
        .map(AsRef::as_ref)
        .filter(|t| !is_punctuation(t))
        .collect();
    if words.is_empty() {
        return 0.0;
    }
    let copied = words
        .iter()
        .filter(|w| {
            passage
                .iter()
                .any(|s| thresholded_overlap(w, s.as_ref(), gamma).is_ok_and(|c| c > 0.0))
        })
        .count();
    copied as f64 / words.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CopyRateReport {
    pub per_question: Vec<f64>,
    pub mean: f64,
}

pub fn copy_rate_report<S: AsRef<str>>(
    questions: &[Vec<S>],
    passages: &[Vec<S>],
    gamma: OverlapThreshold,
) -> Result<CopyRateReport, EvalError> {
    if questions.len() != passages.len() {
        return Err(EvalError::LengthMismatch {
            left: questions.len(),
            right: passages.len(),
        });
    }
    if questions.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let per_question: Vec<f64> = questions
        .iter()
        .zip(passages)
        .map(|(q, p)| copy_rate(q, p, gamma))
        .collect();
    let mean = per_question.iter().sum::<f64>() / per_question.len() as f64;
    Ok(CopyRateReport { per_question, mean })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RerankDelta {
    pub improved: usize,
    pub worsened: usize,
    pub unchanged: usize,
}

/// Per-example sentence BLEU-4 before vs after, with strict comparisons.
pub fn rerank_delta<S: AsRef<str> + Eq + Hash>(
    before: &[Vec<S>],
    after: &[Vec<S>],
    references: &[Vec<S>],
) -> Result<RerankDelta, EvalError> {
    if before.len() != after.len() {
        return Err(EvalError::LengthMismatch {
            left: before.len(),
            right: after.len(),
        });
    }
    if before.len() != references.len() {
        return Err(EvalError::LengthMismatch {
            left: before.len(),
            right: references.len(),
        });
    }
    let mut delta = RerankDelta {
        improved: 0,
        worsened: 0,
        unchanged: 0,
    };
    for ((b, a), r) in before.iter().zip(after).zip(references) {
        let sb = sentence_bleu4(b, r);
        let sa = sentence_bleu4(a, r);
        if sa > sb {
            delta.improved += 1;
        } else if sa < sb {
            delta.worsened += 1;
        } else {
            delta.unchanged += 1;
        }
    }
    Ok(delta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> Vec<String> {
        tokenize(s, true)
    }

    #[test]
    fn bleu_perfect_match() {
        let corpus = vec![
            t("when did teaching start ?"),
            t("what school did massey university combine with ?"),
        ];
        let r = corpus_bleu(&corpus, &corpus, 4).unwrap();
        assert_eq!(r.bleu, vec![100.0; 4]);
        assert_eq!(r.brevity_penalty, 1.0);
    }

    #[test]
    fn bleu_clipping() {
        let r = corpus_bleu(&[t("the the the")], &[t("the cat")], 1).unwrap();
        assert!((r.precisions[0] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn bleu_brevity_penalty() {
        let r = corpus_bleu(
            &[t("when did teaching start")],
            &[t("when did teaching start ?")],
            4,
        )
        .unwrap();
        assert!((r.brevity_penalty - (1.0f64 - 5.0 / 4.0).exp()).abs() < 1e-15);
        assert!((r.bleu_n(4).unwrap() - 100.0 * (-0.25f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn bleu_zero_precision_kills_higher_orders() {
        let r = corpus_bleu(&[t("a b c")], &[t("a c b")], 4).unwrap();
        assert!(r.bleu[0] > 0.0);
        assert_eq!(r.precisions[1], 0.0);
        assert_eq!(&r.bleu[1..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn bleu_errors() {
        let empty: Vec<Vec<String>> = vec![];
        assert_eq!(corpus_bleu(&empty, &empty, 4), Err(EvalError::EmptyCorpus));
        assert_eq!(
            corpus_bleu(&[t("a")], &[], 4),
            Err(EvalError::LengthMismatch { left: 1, right: 0 })
        );
        assert_eq!(
            corpus_bleu(&[t("a")], &[t("a")], 5),
            Err(EvalError::InvalidOrder(5))
        );
    }

    #[test]
    fn sentence_bleu_cases() {
        let q = t("what school did massey university combine with ?");
        assert!(sentence_bleu4(&q, &q) >= 0.99);
        assert!(sentence_bleu4(&t("a b c d e"), &t("v w x y z")) < 0.05);
        // independently computed: (5/6 * 4/6 * 2/5 * 1/4)^(1/4)
        let s = sentence_bleu4(
            &t("what did the school combine with"),
            &t("what did the college combine with"),
        );
        assert!((s - 0.48549177170732344).abs() < 1e-12, "{s}");
    }

    #[test]
    fn template_parsing_and_matching() {
        let pats = default_templates();
        let counts = count_templates(&[t("what is the name of the river ?")], &pats);
        assert_eq!(
            counts[0].by_slot,
            vec![("is".to_string(), 1), ("was".to_string(), 0)]
        );
        assert!(counts[1..].iter().all(|c| c.total() == 0));

        let none = count_templates(&[t("who amalgamated with massey university ?")], &pats);
        assert!(none.iter().all(|c| c.total() == 0));

        let qs = vec![
            t("what type of rock is it ?"),
            t("what was it called ?"),
            t("where is it ?"),
        ];
        let c = count_templates(&qs, &pats);
        assert_eq!(c.iter().map(TemplateCount::total).sum::<usize>(), 2);
        assert_eq!(c[1].by_slot, vec![(String::new(), 1)]);
        assert_eq!(c[4].by_slot[1].1, 1);
    }

    #[test]
    fn template_wildcard_may_be_empty_and_case_insensitive() {
        let p = TemplatePattern::parse("What is/was it ...?").unwrap();
        assert_eq!(p.match_slot(&t("what was it")), Some(1));
        assert_eq!(p.match_slot(&["WHAT", "IS", "IT", "?"]), Some(0));
        assert_eq!(p.match_slot(&t("what is")), None);
    }

    #[test]
    fn template_parse_errors() {
        assert!(TemplatePattern::parse("...?").is_err());
        assert!(TemplatePattern::parse("what ... is").is_err());
        assert!(TemplatePattern::parse("what is/ ...").is_err());
        assert!(TemplatePattern::parse("a/b c/d").is_err());
    }

    #[test]
    fn copy_rate_cases() {
        let g = OverlapThreshold::DEFAULT;
        let passage = t("teaching started in 1794 .");
        assert_eq!(copy_rate(&t("when did teaching start ?"), &passage, g), 0.5);
        assert_eq!(copy_rate(&t("teaching started in 1794"), &passage, g), 1.0);
        assert_eq!(copy_rate(&t("xyz qqq"), &passage, g), 0.0);
        assert_eq!(copy_rate(&t("? ."), &passage, g), 0.0);
    }

    #[test]
    fn rerank_delta_cases() {
        let refs = vec![
            t("what was forbidden in all provinces ?"),
            t("when did teaching start ?"),
        ];
        let other = vec![t("x y z"), t("p q r")];
        assert_eq!(
            rerank_delta(&refs, &refs, &refs).unwrap(),
            RerankDelta {
                improved: 0,
                worsened: 0,
                unchanged: 2
            }
        );
        assert_eq!(
            rerank_delta(&other, &refs, &refs).unwrap(),
            RerankDelta {
                improved: 2,
                worsened: 0,
                unchanged: 0
            }
        );
        assert!(rerank_delta(&refs, &other[..1], &refs).is_err());
    }
}
