//! Caption, QA and SCE metrics plus report assembly.

mod classify;
mod report;
mod text;

pub use classify::{classification_report, parse_sce_prediction, BinaryConfusion, ClassificationReport};
pub use report::{
    closed_qa_accuracy, evaluate, join_predictions, load_bertscores, load_predictions, load_references, EvalReport,
    MetricCell, PredictionRecord, ScopeReport,
};
pub use text::{lcs_length, normalize_answer, rouge_l_f1, rouge_l_f1_tokens, tokenize};

use thiserror::Error;

use crate::records::RecordError;

pub const REPORT_TEXT_FILE: &str = "eval_report.txt";
pub const REPORT_RECORDS_FILE: &str = "eval_report.records";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no rows to score")]
    EmptyInput,
    #[error("{predictions} predictions do not match {references} references")]
    LengthMismatch { predictions: usize, references: usize },
    #[error("no prediction for reference {0}")]
    UnmatchedReference(String),
    #[error("duplicate prediction for {0}")]
    DuplicatePrediction(String),
    #[error("duplicate reference row {0}")]
    DuplicateReference(String),
    #[error("classification row {0} has no reference label")]
    MissingLabel(String),
    #[error(transparent)]
    Record(#[from] RecordError),
}
