//! Decoding and reranking toolkit for answer-aware question generation.
//!
//! * [`morpho`]: character LCS and thresholded overlap rates between words.
//! * [`decode`]: beam search that boosts morphological variants of the
//!   attended passage word (partial copy).
//! * [`model`]: the generator interface, trace replay and a toy bigram model.
//! * [`rerank`]: QA-based n-best reranking with character-set F1.
//! * [`eval`]: BLEU, generic-template counts, copy rate, rerank win/loss.
//! * [`formats`]: JSONL schemas for examples, n-best lists, traces and QA
//!   predictions.

pub mod decode;
pub mod eval;
pub mod example;
pub mod formats;
pub mod model;
pub mod morpho;
pub mod rerank;
pub mod selfcheck;
pub mod vocab;

pub use decode::{
    adjust_distribution, aligned_source_position, beam_search, decode_nbest, BeamConfig, Candidate,
    CopyAdjuster, DecodeError, Hypothesis, NBestList, PartialCopyConfig, StepOutput,
};
pub use eval::{
    copy_rate, corpus_bleu, count_templates, default_templates, rerank_delta, sentence_bleu4, BleuReport,
    EvalError, RerankDelta, TemplatePattern,
};
pub use example::Example;
pub use model::{
    load_trace, DecodingTrace, GeneratorModel, ModelError, ModelSession, RecordingModel, ReplayModel,
    ToyModel,
};
pub use morpho::{lcs_length, overlap_rate, thresholded_overlap, MorphoError, OverlapThreshold};
pub use rerank::{
    char_f1, combined_score, rerank, toy_span_oracle, CandidateScore, QaOracle, ReplayQaOracle, RerankConfig,
    RerankError, RerankedList, ToySpanOracle,
};
pub use vocab::{TokenId, Vocabulary, BOS, EOS, UNK};
