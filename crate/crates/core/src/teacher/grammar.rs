//! Strict parser for the fenced annotation block.
//!
//! ```text
//! ===ANNOTATION===
//! CAPTION: <one line>
//! Q[open]: <text>
//! A: <text>
//! Q[closed]: <text>
//! A: <text>
//! SCE: <normal|near-collision|collision>
//! ===END===
//! ```
//!
//! Only the first block counts. Text before and after it is ignored; inside it,
//! blank lines are skipped and every other line must match the grammar.

use thiserror::Error;

use super::{QaKind, QaPair, TeacherAnnotation, MAX_CLOSED_ANSWER_TOKENS};
use crate::eval::normalize_answer;
use crate::telemetry::SceClass;

pub const BLOCK_START: &str = "===ANNOTATION===";
pub const BLOCK_END: &str = "===END===";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("clip {clip_id}: no complete {BLOCK_START} ... {BLOCK_END} block")]
    MissingBlock { clip_id: String },
    #[error("clip {clip_id}: bad field {field}: {reason}")]
    BadField {
        clip_id: String,
        field: String,
        reason: String,
    },
    #[error("clip {clip_id}: caption missing or empty")]
    EmptyCaption { clip_id: String },
    #[error("clip {clip_id}: unknown SCE label {label:?}")]
    UnknownSceLabel { clip_id: String, label: String },
}

impl ParseError {
    /// Short variant name, stable across releases; used in run reports.
    pub fn kind(&self) -> &'static str {
        match self {
            ParseError::MissingBlock { .. } => "MissingBlock",
            ParseError::BadField { .. } => "BadField",
            ParseError::EmptyCaption { .. } => "EmptyCaption",
            ParseError::UnknownSceLabel { .. } => "UnknownSceLabel",
        }
    }
}

enum Line<'a> {
    Caption(&'a str),
    Question(QaKind, &'a str),
    Answer(&'a str),
    Sce(&'a str),
}

fn classify(line: &str) -> Option<Line<'_>> {
    let value = |prefix: &str| line.strip_prefix(prefix).map(str::trim);
    if let Some(v) = value("CAPTION:") {
        Some(Line::Caption(v))
    } else if let Some(v) = value("Q[open]:") {
        Some(Line::Question(QaKind::Open, v))
    } else if let Some(v) = value("Q[closed]:") {
        Some(Line::Question(QaKind::Closed, v))
    } else if let Some(v) = value("A:") {
        Some(Line::Answer(v))
    } else {
        value("SCE:").map(Line::Sce)
    }
}

fn block_body(raw: &str) -> Option<Vec<&str>> {
    let mut lines = raw.lines().map(str::trim);
    lines.by_ref().find(|l| *l == BLOCK_START)?;
    let mut body = Vec::new();
    for line in lines {
        if line == BLOCK_END {
            return Some(body);
        }
        if !line.is_empty() {
            body.push(line);
        }
    }
    None
}

/// Total over arbitrary input: returns an annotation or a typed error.
pub fn parse_annotations(raw: &str, clip_id: &str) -> Result<TeacherAnnotation, ParseError> {
    let bad = |field: &str, reason: String| ParseError::BadField {
        clip_id: clip_id.to_string(),
        field: field.to_string(),
        reason,
    };
    let body = block_body(raw).ok_or_else(|| ParseError::MissingBlock {
        clip_id: clip_id.to_string(),
    })?;
    let mut lines = body.into_iter().peekable();

    let caption = match lines.peek().copied().and_then(classify) {
        Some(Line::Caption(c)) if !c.is_empty() => {
            lines.next();
            c.to_string()
        }
        _ => {
            return Err(ParseError::EmptyCaption {
                clip_id: clip_id.to_string(),
            })
        }
    };

    let mut qa = Vec::new();
    let mut label = None;
    while let Some(line) = lines.next() {
        if label.is_some() {
            return Err(bad("SCE", format!("unexpected line after label: {}", preview(line))));
        }
        match classify(line) {
            Some(Line::Question(kind, question)) => {
                if question.is_empty() {
                    return Err(bad("Q", "empty question".into()));
                }
                let answer = match lines.next().and_then(classify) {
                    Some(Line::Answer(a)) if !a.is_empty() => a,
                    Some(Line::Answer(_)) => return Err(bad("A", "empty answer".into())),
                    _ => return Err(bad("A", format!("question {:?} has no answer line", preview(question)))),
                };
                if kind == QaKind::Closed {
                    let n = normalize_answer(answer).split_whitespace().count();
                    if n > MAX_CLOSED_ANSWER_TOKENS {
                        return Err(bad("A", format!("closed answer has {n} tokens")));
                    }
                }
                qa.push(QaPair {
                    question: question.to_string(),
                    answer: answer.to_string(),
                    kind,
                });
            }
            Some(Line::Sce(token)) => {
                label = Some(token.parse::<SceClass>().map_err(|_| ParseError::UnknownSceLabel {
                    clip_id: clip_id.to_string(),
                    label: token.to_string(),
                })?);
            }
            Some(Line::Caption(_)) => return Err(bad("CAPTION", "duplicate caption".into())),
            Some(Line::Answer(_)) => return Err(bad("A", "answer without a question".into())),
            None => return Err(bad("line", format!("unrecognized: {}", preview(line)))),
        }
    }
    let sce_label = label.ok_or_else(|| bad("SCE", "missing label".into()))?;
    Ok(TeacherAnnotation {
        clip_id: clip_id.to_string(),
        caption,
        qa,
        sce_label,
        raw_response: raw.to_string(),
    })
}

fn preview(s: &str) -> String {
    const MAX: usize = 40;
    match s.char_indices().nth(MAX) {
        Some((i, _)) => format!("{}...", &s[..i]),
        None => s.to_string(),
    }
}

/// Serializes fields into the block grammar. Inputs must be single-line.
pub fn render_response(caption: &str, qa: &[QaPair], label: SceClass) -> String {
    let mut out = format!("{BLOCK_START}\nCAPTION: {caption}\n");
    for pair in qa {
        out.push_str(&format!("Q[{}]: {}\nA: {}\n", pair.kind, pair.question, pair.answer));
    }
    out.push_str(&format!("SCE: {label}\n{BLOCK_END}\n"));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const WELL_FORMED: &str = "Sure, here is the annotation.\n\
        ===ANNOTATION===\n\
        CAPTION: A car brakes hard and hits the van ahead.\n\
        Q[open]: What happens at the event?\n\
        A: The ego car collides with a van.\n\
        \n\
        Q[closed]: Is it raining?\n\
        A: no\n\
        SCE: collision\n\
        ===END===\n\
        Trailing chatter is ignored.";

    #[test]
    fn well_formed_block() {
        let a = parse_annotations(WELL_FORMED, "demo-1").unwrap();
        assert_eq!(a.qa.len(), 2);
        assert_eq!(a.qa[0].kind, QaKind::Open);
        assert_eq!(a.qa[1].answer, "no");
        assert_eq!(a.sce_label, SceClass::Collision);
        assert_eq!(a.caption, "A car brakes hard and hits the van ahead.");
        assert_eq!(a.raw_response, WELL_FORMED);
    }

    #[test]
    fn missing_caption() {
        let raw = "===ANNOTATION===\nQ[open]: x?\nA: y\nSCE: normal\n===END===";
        assert!(matches!(
            parse_annotations(raw, "c"),
            Err(ParseError::EmptyCaption { .. })
        ));
        let raw = "===ANNOTATION===\nCAPTION:   \nSCE: normal\n===END===";
        assert!(matches!(
            parse_annotations(raw, "c"),
            Err(ParseError::EmptyCaption { .. })
        ));
    }

    #[test]
    fn non_canonical_label() {
        let raw = "===ANNOTATION===\nCAPTION: x\nSCE: crash\n===END===";
        match parse_annotations(raw, "c") {
            Err(ParseError::UnknownSceLabel { label, .. }) => assert_eq!(label, "crash"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn structural_errors() {
        let cases = [
            ("no block at all", "MissingBlock"),
            ("===ANNOTATION===\nCAPTION: x\nSCE: normal\n", "MissingBlock"),
            ("===ANNOTATION===\nCAPTION: x\n===END===", "BadField"),
            (
                "===ANNOTATION===\nCAPTION: x\nQ[open]: q\nSCE: normal\n===END===",
                "BadField",
            ),
            (
                "===ANNOTATION===\nCAPTION: x\nA: stray\nSCE: normal\n===END===",
                "BadField",
            ),
            (
                "===ANNOTATION===\nCAPTION: x\nSCE: normal\nCAPTION: y\n===END===",
                "BadField",
            ),
            (
                "===ANNOTATION===\nCAPTION: x\nnoise\nSCE: normal\n===END===",
                "BadField",
            ),
            (
                "===ANNOTATION===\nCAPTION: x\nQ[closed]: q?\nA: one two three four five six\nSCE: normal\n===END===",
                "BadField",
            ),
        ];
        for (raw, kind) in cases {
            assert_eq!(parse_annotations(raw, "c").unwrap_err().kind(), kind, "{raw:?}");
        }
    }

    #[test]
    fn closed_answer_limit_counts_normalized_tokens() {
        // the leading article is stripped, leaving 5 tokens
        let raw =
            "===ANNOTATION===\nCAPTION: x\nQ[closed]: q?\nA: The one two three four five!\nSCE: normal\n===END===";
        assert!(parse_annotations(raw, "c").is_ok());
    }

    #[test]
    fn only_first_block_counts() {
        let raw = format!("{WELL_FORMED}\n===ANNOTATION===\nCAPTION: other\nSCE: normal\n===END===");
        assert_eq!(parse_annotations(&raw, "c").unwrap().sce_label, SceClass::Collision);
    }

    #[test]
    fn render_round_trip() {
        let qa = vec![
            QaPair {
                question: "What?".into(),
                answer: "Something.".into(),
                kind: QaKind::Open,
            },
            QaPair {
                question: "Yes?".into(),
                answer: "yes".into(),
                kind: QaKind::Closed,
            },
        ];
        let raw = render_response("A caption.", &qa, SceClass::NearCollision);
        let a = parse_annotations(&raw, "c").unwrap();
        assert_eq!(a.qa, qa);
        assert_eq!(a.sce_label, SceClass::NearCollision);
    }

    proptest! {
        #[test]
        fn parser_is_total(raw in "\\PC{0,200}") {
            let _ = parse_annotations(&raw, "fuzz");
        }

        #[test]
        fn parser_is_total_near_grammar(lines in proptest::collection::vec(
            prop_oneof![
                Just("===ANNOTATION===".to_string()),
                Just("===END===".to_string()),
                "CAPTION:[ a-z]{0,6}",
                "Q\\[(open|closed|x)\\]:[ a-z?]{0,6}",
                "A:[ a-z]{0,14}",
                "SCE: (normal|near-collision|collision|crash|)",
                "[ -~]{0,10}",
            ],
            0..14,
        )) {
            let raw = lines.join("\n");
            if let Ok(a) = parse_annotations(&raw, "fuzz") {
                prop_assert!(!a.caption.is_empty());
                for p in &a.qa {
                    prop_assert!(!p.question.is_empty() && !p.answer.is_empty());
                }
            }
        }
    }
}
