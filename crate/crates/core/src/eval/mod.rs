//! Automatic text-generation metrics and the error taxonomy.

pub mod metrics;
pub mod taxonomy;

pub use metrics::{bleu, lcs_len, rouge_l, rouge_n, score_corpus, Prf, Scores, METRIC_SETTINGS};
pub use taxonomy::{classify_errors, error_table, ErrorLabels, ErrorReport, ErrorRow, ObjectForms, SlotLexicon, SlotsUnavailable};
