//! Shared fixtures for the benchmarks.

use qgrank_core::{Example, StepOutput, ToyModel, Vocabulary};

const ROOTS: [&str; 8] = [
    "found",
    "establish",
    "construct",
    "publish",
    "discover",
    "develop",
    "invent",
    "amalgamate",
];

/// A toy generator trained on `n` template questions, plus `n` test examples
/// whose passages open with an inflected form of the question verb.
pub fn toy_setup(n: usize) -> (ToyModel, Vec<Example>) {
    let train: Vec<Example> = (0..n)
        .map(|i| {
            let r = ROOTS[i % ROOTS.len()];
            Example::from_text(
                &format!("t{i}"),
                &format!("the {r} of the city happened in {}", 1800 + i),
                &format!("{}", 1800 + i),
                Some(&format!("when did they {r} the city ?")),
            )
        })
        .collect();
    let test = (0..n)
        .map(|i| {
            let r = ROOTS[(i * 3) % ROOTS.len()];
            Example::from_text(
                &format!("e{i}"),
                &format!("{r}ed in {} the city grew near the river", 1900 + i),
                "the river",
                None,
            )
        })
        .collect();
    let model = ToyModel::train(&train, 0.1).expect("non-empty corpus");
    (model, test)
}

/// A vocabulary of `size` words with morphological families, a matching
/// step output and a passage.
pub fn step_fixture(size: usize) -> (Vocabulary, StepOutput, Vec<String>) {
    let words: Vec<String> = (0..size)
        .map(|i| {
            let r = ROOTS[i % ROOTS.len()];
            match i / ROOTS.len() % 4 {
                0 => r.to_owned(),
                1 => format!("{r}s"),
                2 => format!("{r}ing"),
                _ => format!("{r}{i}"),
            }
        })
        .collect();
    let vocab = Vocabulary::from_words(&words);
    let n = vocab.len();
    let raw: Vec<f64> = (0..n)
        .map(|i| if i == 0 { 0.0 } else { 1.0 + (i % 7) as f64 })
        .collect();
    let z: f64 = raw.iter().sum();
    let passage: Vec<String> = ["the", "city", "was", "founded", "in", "1850"]
        .map(str::to_owned)
        .to_vec();
    let attention = vec![0.05, 0.1, 0.05, 0.6, 0.1, 0.1];
    let step = StepOutput::new(raw.iter().map(|x| x / z).collect(), attention);
    (vocab, step, passage)
}

/// A synthetic corpus of `n` candidate/reference question pairs.
pub fn bleu_corpus(n: usize) -> (Vec<Vec<String>>, Vec<Vec<String>>) {
    let pool = [
        "what", "when", "did", "the", "city", "river", "was", "founded", "who", "built", "?",
    ];
    let sentence = |seed: usize, len: usize| -> Vec<String> {
        (0..len)
            .map(|k| pool[(seed * 7 + k * 3 + k * k) % pool.len()].to_owned())
            .collect()
    };
    let cands = (0..n).map(|i| sentence(i, 6 + i % 9)).collect();
    let refs = (0..n).map(|i| sentence(i + 1, 7 + i % 5)).collect();
    (cands, refs)
}
