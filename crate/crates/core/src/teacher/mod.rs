//! Teacher annotation: response grammar, deterministic mock, batch client and HTTP adapter.

mod client;
mod grammar;
mod http;
mod mock;

pub use client::{
    AnnotationOutcome, ClientConfig, RequestError, TeacherClient, TeacherRequest, Transport, TransportFailure,
};
pub use grammar::{parse_annotations, render_response, ParseError, BLOCK_END, BLOCK_START};
pub use http::{EndpointConfig, EndpointError, HttpTransport};
pub use mock::{mock_teacher, mock_teacher_with, MockTeacher};

use std::fmt;

use crate::telemetry::SceClass;

/// Closed answers longer than this many normalized tokens are rejected.
pub const MAX_CLOSED_ANSWER_TOKENS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum QaKind {
    Open,
    Closed,
}

impl QaKind {
    pub fn as_str(self) -> &'static str {
        match self {
            QaKind::Open => "open",
            QaKind::Closed => "closed",
        }
    }
}

impl fmt::Display for QaKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QaPair {
    pub question: String,
    pub answer: String,
    pub kind: QaKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TeacherAnnotation {
    pub clip_id: String,
    pub caption: String,
    pub qa: Vec<QaPair>,
    pub sce_label: SceClass,
    pub raw_response: String,
}
