//! Quick randomized invariant checks runnable from the command line.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::decode::{adjust_distribution, PartialCopyConfig, StepOutput};
use crate::eval::corpus_bleu;
use crate::morpho::{lcs_length, overlap_rate, thresholded_overlap, OverlapThreshold};
use crate::rerank::char_f1;
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub trials: usize,
    pub failure: Option<String>,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }
}

fn random_word(rng: &mut ChaCha8Rng, alphabet: &[char], max_len: usize) -> String {
    let len = rng.random_range(0..=max_len);
    (0..len)
        .map(|_| alphabet[rng.random_range(0..alphabet.len())])
        .collect()
}

/// Subsequence enumeration; only for short words.
fn lcs_by_enumeration(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let k = mask.count_ones() as usize;
        if k <= best {
            continue;
        }
        let mut rest = b.iter();
        if (0..a.len())
            .filter(|i| mask & (1 << i) != 0)
            .all(|i| rest.any(|&c| c == a[i]))
        {
            best = k;
        }
    }
    best
}

fn run<F>(name: &'static str, trials: usize, mut body: F) -> CheckOutcome
where
    F: FnMut(usize) -> Result<(), String>,
{
    let failure = (0..trials).find_map(|t| body(t).err());
    CheckOutcome {
        name,
        trials,
        failure,
    }
}

/// Runs every check with the given seed.
pub fn run_all(seed: u64) -> Vec<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let abc = ['a', 'b', 'c'];
    let mut out = Vec::new();

    out.push(run("lcs matches enumeration", 300, |_| {
        let (a, b) = (random_word(&mut rng, &abc, 8), random_word(&mut rng, &abc, 8));
        let (dp, brute) = (lcs_length(&a, &b), lcs_by_enumeration(&a, &b));
        if dp == brute && dp == lcs_length(&b, &a) {
            Ok(())
        } else {
            Err(format!("{a:?}/{b:?}: dp {dp}, enumeration {brute}"))
        }
    }));

    out.push(run("thresholded overlap never in (0, gamma)", 300, |_| {
        let (a, b) = (random_word(&mut rng, &abc, 6), random_word(&mut rng, &abc, 6));
        if a.is_empty() && b.is_empty() {
            return Ok(());
        }
        let g = OverlapThreshold::new(rng.random_range(0.0..=1.0)).expect("in range");
        let c = thresholded_overlap(&a, &b, g).map_err(|e| e.to_string())?;
        let raw = overlap_rate(&a, &b).map_err(|e| e.to_string())?;
        if (c == 0.0 || c >= g.value()) && (0.0..=1.0).contains(&raw) {
            Ok(())
        } else {
            Err(format!("{a:?}/{b:?} gamma {g}: {c}"))
        }
    }));

    let vocab = Vocabulary::from_words(["start", "started", "starts", "name", "teaching", "the"]);
    let passage: Vec<String> = ["teaching", "started", "the"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    out.push(run("adjusted odds ratio", 200, |_| {
        let mut dist: Vec<f64> = (0..vocab.len()).map(|_| rng.random_range(0.01..1.0)).collect();
        let s: f64 = dist.iter().sum();
        dist.iter_mut().for_each(|p| *p /= s);
        let mut att: Vec<f64> = (0..passage.len()).map(|_| rng.random_range(0.0..1.0)).collect();
        let s: f64 = att.iter().sum();
        att.iter_mut().for_each(|p| *p /= s);
        let lambda1 = [0.5, 1.0, 2.0][rng.random_range(0..3)];
        let cfg = PartialCopyConfig::new(0.7, lambda1).expect("valid");
        let step = StepOutput::new(dist.clone(), att.clone());
        let adj = adjust_distribution(&step, &passage, &vocab, &cfg).map_err(|e| e.to_string())?;
        let src = &passage[crate::decode::aligned_source_position(&att).map_err(|e| e.to_string())?];
        let c = |w: &str| thresholded_overlap(w, src, cfg.gamma).unwrap_or(0.0);
        let (u, v) = (3usize, 4usize);
        let (wu, wv) = (&vocab.words()[u], &vocab.words()[v]);
        let want = (1.0 + lambda1 * c(wu)) / (1.0 + lambda1 * c(wv)) * dist[u] / dist[v];
        let got = adj[u] / adj[v];
        let sum: f64 = adj.iter().sum();
        if (got - want).abs() <= 1e-9 * want.abs().max(1.0) && (sum - 1.0).abs() < 1e-9 {
            Ok(())
        } else {
            Err(format!("ratio {got} vs {want}, sum {sum}"))
        }
    }));

    out.push(run("char F1 symmetric", 300, |_| {
        let letters = ['a', 'b', 'c', 'd', ' ', 'E'];
        let (a, b) = (
            random_word(&mut rng, &letters, 8),
            random_word(&mut rng, &letters, 8),
        );
        let (x, y) = (char_f1(&a, &b), char_f1(&b, &a));
        if x == y && (0.0..=1.0).contains(&x) {
            Ok(())
        } else {
            Err(format!("{a:?}/{b:?}: {x} vs {y}"))
        }
    }));

    out.push(run("BLEU of corpus against itself", 20, |_| {
        let words = ["what", "is", "the", "name", "of", "river", "?"];
        let corpus: Vec<Vec<&str>> = (0..5)
            .map(|_| {
                (0..rng.random_range(4..10))
                    .map(|_| words[rng.random_range(0..words.len())])
                    .collect()
            })
            .collect();
        let r = corpus_bleu(&corpus, &corpus, 4).map_err(|e| e.to_string())?;
        if r.bleu.iter().all(|&b| b == 100.0) {
            Ok(())
        } else {
            Err(format!("{:?}", r.bleu))
        }
    }));

    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for outcome in run_all(7) {
            assert!(outcome.passed(), "{}: {:?}", outcome.name, outcome.failure);
        }
    }
}
