use proptest::prelude::*;

use qgrank_core::eval::copy_rate;
use qgrank_core::{
    adjust_distribution, beam_search, char_f1, combined_score, corpus_bleu, lcs_length, overlap_rate, rerank,
    thresholded_overlap, BeamConfig, Candidate, Example, NBestList, OverlapThreshold, PartialCopyConfig,
    RerankConfig, StepOutput, ToyModel, ToySpanOracle, Vocabulary,
};

const WORDS: [&str; 12] = [
    "start", "started", "starting", "name", "named", "found", "founded", "the", "river", "of", "city", "what",
];

fn word() -> impl Strategy<Value = String> {
    prop::sample::select(&WORDS[..]).prop_map(str::to_owned)
}

fn short_word() -> impl Strategy<Value = String> {
    "[abc]{0,8}"
}

fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, n).prop_filter_map("zero mass", |v| {
        let z: f64 = v.iter().sum();
        (z > 1e-3).then(|| v.iter().map(|x| x / z).collect())
    })
}

/// A vocabulary, one step output over it and a passage.
fn step_case() -> impl Strategy<Value = (Vocabulary, StepOutput, Vec<String>)> {
    (
        prop::collection::vec(word(), 1..6),
        prop::collection::vec(word(), 1..5),
    )
        .prop_flat_map(|(words, passage)| {
            let vocab = Vocabulary::from_words(&words);
            let n = vocab.len();
            let m = passage.len();
            (Just(vocab), simplex(n), simplex(m), Just(passage))
                .prop_map(|(v, d, a, p)| (v, StepOutput::new(d, a), p))
        })
}

proptest! {
    #[test]
    fn lcs_is_symmetric_and_bounded(a in short_word(), b in short_word()) {
        let l = lcs_length(&a, &b);
        prop_assert_eq!(l, lcs_length(&b, &a));
        prop_assert!(l <= a.len().min(b.len()));
        prop_assert_eq!(lcs_length(&a, &a), a.len());
    }

    #[test]
    fn overlap_is_one_on_identity(a in "[a-z]{1,10}") {
        prop_assert_eq!(overlap_rate(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn overlap_in_unit_interval_and_symmetric(a in "[a-z]{0,10}", b in "[a-z]{1,10}") {
        let c = overlap_rate(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&c));
        prop_assert_eq!(c, overlap_rate(&b, &a).unwrap());
    }

    #[test]
    fn threshold_is_monotone(a in "[a-e]{1,8}", b in "[a-e]{1,8}", g1 in 0.0f64..=1.0, g2 in 0.0f64..=1.0) {
        let (lo, hi) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
        let t_lo = thresholded_overlap(&a, &b, OverlapThreshold::new(lo).unwrap()).unwrap();
        let t_hi = thresholded_overlap(&a, &b, OverlapThreshold::new(hi).unwrap()).unwrap();
        prop_assert!(t_hi <= t_lo);
        prop_assert!(t_hi == 0.0 || t_hi >= hi);
    }

    #[test]
    fn adjusted_distribution_properties((vocab, step, passage) in step_case(), lambda1 in 0.0f64..3.0) {
        let cfg = PartialCopyConfig::new(0.7, lambda1).unwrap();
        let adj = adjust_distribution(&step, &passage, &vocab, &cfg).unwrap();
        prop_assert!((adj.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        prop_assert!(adj.iter().all(|&p| p >= 0.0));

        let mut s = 0;
        for (i, &a) in step.attention.iter().enumerate() {
            if a > step.attention[s] { s = i; }
        }
        let c: Vec<f64> = (0..vocab.len())
            .map(|i| {
                if i < 3 { 0.0 } else {
                    thresholded_overlap(&vocab.words()[i], &passage[s], OverlapThreshold::DEFAULT).unwrap()
                }
            })
            .collect();
        let any_boost = lambda1 > 0.0 && c.iter().zip(&step.distribution).any(|(c, p)| *c > 0.0 && *p > 0.0);
        for i in 0..vocab.len() {
            let p = step.distribution[i];
            if c[i] == 0.0 {
                // words without overlap never gain mass
                prop_assert!(adj[i] <= p * (1.0 + 1e-12));
                if !any_boost {
                    prop_assert_eq!(adj[i], p);
                }
            }
        }
    }

    #[test]
    fn beam_output_shape(seed in 0u64..500, beam_size in 1usize..6, max_length in 1usize..7) {
        let questions = ["when did teaching start ?", "who founded the city ?", "what is the name of the river ?"];
        let q = questions[(seed % 3) as usize];
        let corpus: Vec<Example> = questions
            .iter()
            .enumerate()
            .map(|(i, q)| Example::from_text(&i.to_string(), "the city started near the river", "river", Some(q)))
            .collect();
        let toy = ToyModel::train(&corpus, 0.05 + (seed % 7) as f64 * 0.1).unwrap();
        let ex = Example::from_text("x", "teaching started in the city", "city", Some(q));
        let nbest = 1 + (seed as usize % beam_size);
        let beam = BeamConfig::new(beam_size, max_length, nbest).unwrap();
        let hyps = beam_search(&toy, &ex, &beam, &PartialCopyConfig::default()).unwrap();
        prop_assert!(hyps.len() <= nbest);
        prop_assert!(!hyps.is_empty());
        prop_assert!(hyps.windows(2).all(|w| w[0].log_prob >= w[1].log_prob));
        for h in &hyps {
            prop_assert!(h.complete || h.tokens.len() == max_length);
            prop_assert!(h.tokens.len() <= max_length);
            prop_assert_eq!(h.aligned_positions.len(), h.tokens.len());
            prop_assert!(h.aligned_positions.iter().all(|&p| p < ex.passage.len()));
        }
    }

    #[test]
    fn rerank_extremes(
        lps in prop::collection::vec(-20.0f64..0.0, 1..8),
        qs in prop::collection::vec(prop::collection::vec(word(), 1..5), 8),
        passage in prop::collection::vec(word(), 2..8),
    ) {
        let mut lps = lps;
        lps.sort_by(|a, b| b.total_cmp(a));
        let nbest = NBestList {
            id: "x".into(),
            candidates: lps
                .iter()
                .zip(&qs)
                .map(|(&lp, q)| Candidate { tokens: q.clone(), log_prob: lp, aligned_positions: vec![0; q.len()], complete: true })
                .collect(),
        };
        let gold = passage[passage.len() / 2].clone();
        let oracle = ToySpanOracle::default();

        let r0 = rerank(&nbest, &passage, &gold, &oracle, &RerankConfig::new(0.0).unwrap()).unwrap();
        prop_assert!(r0.candidates.iter().all(|c| c.old_rank == c.new_rank));
        prop_assert!(!r0.top1_changed());

        let r1 = rerank(&nbest, &passage, &gold, &oracle, &RerankConfig::new(1.0).unwrap()).unwrap();
        let f1: Vec<f64> = r1.candidates.iter().map(|c| c.score.score2).collect();
        prop_assert!(f1.windows(2).all(|w| w[0] >= w[1]));
        for c in &r1.candidates {
            prop_assert_eq!(c.score.combined, c.score.score2);
        }
    }

    #[test]
    fn rerank_is_shift_invariant(
        lps in prop::collection::vec(-20.0f64..0.0, 2..8),
        qs in prop::collection::vec(prop::collection::vec(word(), 1..5), 8),
        passage in prop::collection::vec(word(), 2..8),
        shift in -5.0f64..5.0,
        lambda2 in 0.0f64..=1.0,
    ) {
        // dyadic values keep the shifted sums exact
        let snap = |x: f64| (x * 64.0).round() / 64.0;
        let shift = snap(shift);
        let build = |delta: f64| NBestList {
            id: "x".into(),
            candidates: lps
                .iter()
                .zip(&qs)
                .map(|(&lp, q)| Candidate { tokens: q.clone(), log_prob: snap(lp) + delta, aligned_positions: vec![0; q.len()], complete: true })
                .collect(),
        };
        let gold = passage[0].clone();
        let cfg = RerankConfig::new(lambda2).unwrap();
        let oracle = ToySpanOracle::default();
        let a = rerank(&build(0.0), &passage, &gold, &oracle, &cfg).unwrap();
        let b = rerank(&build(shift), &passage, &gold, &oracle, &cfg).unwrap();
        // a candidate may only move between positions whose scores tie
        for (i, y) in b.candidates.iter().enumerate() {
            let x = &a.candidates[i];
            if x.old_rank != y.old_rank {
                let y_in_a = a.candidates.iter().find(|c| c.old_rank == y.old_rank).unwrap();
                prop_assert!((x.score.combined - y_in_a.score.combined).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn crossover_weight(s1a in -10.0f64..0.0, s1b in -10.0f64..0.0, s2a in 0.0f64..=1.0, s2b in 0.0f64..=1.0) {
        // a leads on the decoder score, b on the QA score
        prop_assume!(s1a > s1b + 1e-3 && s2b > s2a + 1e-3);
        let star = (s1a - s1b) / ((s1a - s1b) + (s2b - s2a));
        let at = |l: f64| {
            let cfg = RerankConfig::new(l).unwrap();
            combined_score(s1a, s2a, &cfg) - combined_score(s1b, s2b, &cfg)
        };
        prop_assert!(at(star).abs() < 1e-9);
        if star > 1e-6 { prop_assert!(at(star * 0.5) > 0.0); }
        if star < 1.0 - 1e-6 { prop_assert!(at(star + (1.0 - star) * 0.5) < 0.0); }
    }

    #[test]
    fn char_f1_symmetric_and_bounded(a in "[a-d ]{0,10}", b in "[a-d ]{0,10}") {
        let f = char_f1(&a, &b);
        prop_assert_eq!(f, char_f1(&b, &a));
        prop_assert!((0.0..=1.0).contains(&f));
    }

    #[test]
    fn bleu_ignores_sentence_order(
        pairs in prop::collection::vec((prop::collection::vec(word(), 1..9), prop::collection::vec(word(), 1..9)), 1..10),
        rot in 0usize..10,
    ) {
        let (c, r): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
        let k = rot % pairs.len();
        let mut c2 = c.clone();
        let mut r2 = r.clone();
        c2.rotate_left(k);
        r2.rotate_left(k);
        let a = corpus_bleu(&c, &r, 4).unwrap();
        let b = corpus_bleu(&c2, &r2, 4).unwrap();
        for (x, y) in a.bleu.iter().zip(&b.bleu) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        prop_assert!(a.bleu.iter().all(|&x| (0.0..=100.0 + 1e-9).contains(&x)));
    }

    #[test]
    fn copy_rate_monotone_in_gamma(
        q in prop::collection::vec(word(), 1..8),
        p in prop::collection::vec(word(), 1..8),
        g1 in 0.0f64..=1.0,
        g2 in 0.0f64..=1.0,
    ) {
        let (lo, hi) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
        let r_lo = copy_rate(&q, &p, OverlapThreshold::new(lo).unwrap());
        let r_hi = copy_rate(&q, &p, OverlapThreshold::new(hi).unwrap());
        prop_assert!(r_hi <= r_lo);
        prop_assert!((0.0..=1.0).contains(&r_lo));
    }
}
