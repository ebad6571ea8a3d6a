//! Query text similarity, retrieval scoring and error labels.

pub mod errors;
pub mod keys;
pub mod retrieval;
pub mod text;

pub use errors::{classify_error, ErrorLabel, Outcome};
pub use keys::{match_keys, normalize_key, KeyMatch, KeyMatchResult, MatchStage, SEMANTIC_THRESHOLD};
pub use retrieval::{
    common_suffix, prf, score_multi_step, score_single_step, PathScores, RetrievalScores,
    SingleStepResult,
};
pub use text::{bleu, corpus_bleu, meteor, rouge_l, text_scores, tokenize, TextScores};
