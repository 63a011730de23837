//! Summary and classification metrics, all exactly computable and checked
//! against brute-force oracles in the test suite.

pub mod classification;
pub mod rouge;

pub use classification::{
    binary_accuracy_excluding, classification_report, ClassReportRow, ClassificationReport,
    ConfusionMatrix,
};
pub use rouge::{
    mean_scores, rouge_l, rouge_l_tokens, rouge_n, rouge_n_tokens, tokenize, RougeScore, TextNorm,
};
