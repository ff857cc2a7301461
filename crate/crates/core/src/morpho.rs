//! Character-level morphological overlap between words.
//!
//! Two words are compared through the longest common subsequence (LCS) of
//! their Unicode scalar values. The overlap rate is
//!
//! ```text
//! C = 2 * |LCS(w1, w2)| / (|w1| + |w2|)
//! ```
//!
//! and is zeroed below a threshold `gamma` so that incidental shared letters
//! ("a" in "append" / "start", C = 2/11) do not count as a copy.
//!
//! Note: for "start" / "started" this formula gives 10/12 = 0.8333. A value of
//! 0.71 (= 5/7, i.e. |LCS| / |w2|) is sometimes quoted for that pair; the
//! formula above is what is implemented.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MorphoError {
    #[error("overlap rate is undefined for two empty words")]
    BothEmpty,
    #[error("overlap threshold must lie in [0, 1], got {0}")]
    InvalidThreshold(f64),
}

/// Overlap threshold `gamma` in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct OverlapThreshold(f64);

impl OverlapThreshold {
    /// Threshold used in the reference experiments.
    pub const DEFAULT: OverlapThreshold = OverlapThreshold(0.7);

    pub fn new(gamma: f64) -> Result<Self, MorphoError> {
        if (0.0..=1.0).contains(&gamma) {
            Ok(OverlapThreshold(gamma))
        } else {
            Err(MorphoError::InvalidThreshold(gamma))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for OverlapThreshold {
    fn default() -> Self {
        Self::DEFAULT
    }
}

impl fmt::Display for OverlapThreshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Length of the longest common subsequence of two character slices.
///
/// Classic two-row dynamic program, `O(|a| * |b|)` time and `O(min)` space.
pub fn lcs_len_chars(a: &[char], b: &[char]) -> usize {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    if short.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; short.len() + 1];
    let mut cur = vec![0usize; short.len() + 1];
    for &x in long {
        for (j, &y) in short.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[short.len()]
}

/// Length of the longest common subsequence of two words, compared by
/// Unicode scalar value.
pub fn lcs_length(w1: &str, w2: &str) -> usize {
    let a: Vec<char> = w1.chars().collect();
    let b: Vec<char> = w2.chars().collect();
    lcs_len_chars(&a, &b)
}

fn rate_chars(a: &[char], b: &[char]) -> Result<f64, MorphoError> {
    let total = a.len() + b.len();
    if total == 0 {
        return Err(MorphoError::BothEmpty);
    }
    if a == b {
        return Ok(1.0);
    }
    Ok((2 * lcs_len_chars(a, b)) as f64 / total as f64)
}

/// Overlap rate `2 |LCS| / (|w1| + |w2|)`, in `[0, 1]`.
pub fn overlap_rate(w1: &str, w2: &str) -> Result<f64, MorphoError> {
    let a: Vec<char> = w1.chars().collect();
    let b: Vec<char> = w2.chars().collect();
    rate_chars(&a, &b)
}

/// Overlap rate, or exactly `0.0` when it falls below `gamma`.
pub fn thresholded_overlap(w1: &str, w2: &str, gamma: OverlapThreshold) -> Result<f64, MorphoError> {
    let c = overlap_rate(w1, w2)?;
    Ok(apply_threshold(c, gamma))
}

#[inline]
pub(crate) fn apply_threshold(c: f64, gamma: OverlapThreshold) -> f64 {
    if c >= gamma.0 {
        c
    } else {
        0.0
    }
}

/// Compares words against one fixed source word, reusing its decoded
/// characters. Optionally case-folds both sides first.
#[derive(Debug, Clone)]
pub struct OverlapScorer {
    source: Vec<char>,
    gamma: OverlapThreshold,
    case_fold: bool,
}

impl OverlapScorer {
    pub fn new(source: &str, gamma: OverlapThreshold, case_fold: bool) -> Self {
        Self {
            source: prepare(source, case_fold),
            gamma,
            case_fold,
        }
    }

    /// Thresholded overlap between `word` and the source word.
    pub fn score(&self, word: &str) -> Result<f64, MorphoError> {
        let w = prepare(word, self.case_fold);
        rate_chars(&w, &self.source).map(|c| apply_threshold(c, self.gamma))
    }
}

fn prepare(word: &str, case_fold: bool) -> Vec<char> {
    if case_fold {
        word.chars().flat_map(char::to_lowercase).collect()
    } else {
        word.chars().collect()
    }
}
