//! Deterministic stand-in for the remote teacher.
//!
//! The mock reads back what the prompt encodes: telemetry lines, the expert flag
//! header and per-frame object counts. The label comes from thresholding the
//! largest encoded |a_x|. Expert flags can raise it but never lower it, since
//! block-averaged telemetry smooths short spikes below the raw-trace thresholds.

use std::collections::BTreeMap;
use std::time::Duration;

use sha2::{Digest, Sha256};

use super::client::{TeacherRequest, Transport, TransportFailure};
use super::grammar::render_response;
use super::{QaKind, QaPair, MAX_CLOSED_ANSWER_TOKENS};
use crate::eval::normalize_answer;
use crate::prompt::{PromptBundle, PromptSegment, TELEMETRY_MARKER};
use crate::semantic::SceThresholds;
use crate::telemetry::SceClass;

/// One decoded telemetry line; numbers keep their prompt spelling.
struct EncodedTelemetry<'a> {
    t: &'a str,
    ax: &'a str,
    ax_value: f64,
    v: &'a str,
}

fn parse_telemetry_line(line: &str) -> Option<EncodedTelemetry<'_>> {
    let mut t = None;
    let mut ax = None;
    let mut v = None;
    for token in line.split_whitespace() {
        if let Some(rest) = token.strip_prefix("t=") {
            t = Some(rest.trim_end_matches('s'));
        } else if let Some(rest) = token.strip_prefix(TELEMETRY_MARKER) {
            ax = rest.split([',', ']']).next();
        } else if let Some(rest) = token.strip_prefix("v=") {
            v = Some(rest.trim_end_matches("m/s"));
        }
    }
    let ax = ax?;
    Some(EncodedTelemetry {
        t: t.unwrap_or("?"),
        ax,
        ax_value: ax.parse().ok()?,
        v: v.unwrap_or("?"),
    })
}

fn flag_label(header: &str) -> SceClass {
    if header.contains("crash detected") {
        SceClass::Collision
    } else if header.contains("maneuver ") {
        SceClass::NearCollision
    } else {
        SceClass::Normal
    }
}

fn severity(c: SceClass) -> u8 {
    match c {
        SceClass::Normal => 0,
        SceClass::NearCollision => 1,
        SceClass::Collision => 2,
    }
}

/// Largest per-frame count for each detected class.
fn class_counts(texts: &[&str]) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for line in texts.iter().filter(|l| l.starts_with("frame ")) {
        let Some((_, rest)) = line.split_once(": ") else {
            continue;
        };
        let counts = rest.split("; ").next().unwrap_or("");
        for item in counts.split(", ") {
            if let Some((class, n)) = item.rsplit_once('×') {
                if let Ok(n) = n.parse::<usize>() {
                    let e = out.entry(class.to_string()).or_insert(0);
                    *e = (*e).max(n);
                }
            }
        }
    }
    out
}

fn digest(bundle: &PromptBundle, seed: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(bundle.system_prompt.as_bytes());
    h.update([0]);
    h.update(bundle.user_text().as_bytes());
    h.update([0, u8::from(bundle.include_imu)]);
    h.update(bundle.template_version.as_bytes());
    h.finalize().into()
}

fn event_phrase(label: SceClass) -> &'static str {
    match label {
        SceClass::Collision => "a collision",
        SceClass::NearCollision => "a near-collision",
        SceClass::Normal => "normal driving",
    }
}

/// Grammar-conformant response, deterministic in (bundle, seed).
pub fn mock_teacher(bundle: &PromptBundle, seed: u64) -> String {
    mock_teacher_with(bundle, seed, &SceThresholds::default())
}

pub fn mock_teacher_with(bundle: &PromptBundle, seed: u64, thresholds: &SceThresholds) -> String {
    let texts: Vec<&str> = bundle
        .user_segments
        .iter()
        .filter_map(|s| match s {
            PromptSegment::Text(t) => Some(t.as_str()),
            PromptSegment::FrameRef(_) => None,
        })
        .collect();
    let header = texts
        .first()
        .and_then(|h| h.lines().find_map(|l| l.split_once(": ").map(|(_, f)| f)))
        .unwrap_or("no expert flags");
    let peak = if bundle.include_imu {
        texts
            .iter()
            .filter(|t| t.contains(TELEMETRY_MARKER))
            .filter_map(|t| parse_telemetry_line(t))
            .filter(|e| e.ax_value.is_finite())
            .fold(None::<EncodedTelemetry>, |best, e| match best {
                Some(b) if b.ax_value.abs() >= e.ax_value.abs() => Some(b),
                _ => Some(e),
            })
    } else {
        None
    };

    let from_flags = flag_label(header);
    let label = match &peak {
        Some(p) => {
            let from_imu = thresholds.classify_peak(p.ax_value.abs());
            if severity(from_flags) > severity(from_imu) {
                from_flags
            } else {
                from_imu
            }
        }
        None => from_flags,
    };

    let h = digest(bundle, seed);
    let opening = ["The dashcam footage shows", "This clip shows", "The recording captures"][h[0] as usize % 3];
    let event = event_phrase(label);
    let (caption, event_answer) = match &peak {
        Some(p) => (
            format!(
                "{opening} {event}; longitudinal acceleration peaks at {} m/s2 at t={}s while the vehicle moves at {} m/s.",
                p.ax, p.t, p.v
            ),
            format!("The clip shows {event}, with the strongest acceleration of {} m/s2 at t={}s.", p.ax, p.t),
        ),
        None => (
            format!("{opening} {event} according to the expert models ({header})."),
            format!("The clip shows {event}; no telemetry is available."),
        ),
    };

    let counts = class_counts(&texts);
    let top = counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(c, _)| c.as_str());
    let top_answer = match top {
        None => "none".to_string(),
        Some(c)
            if normalize_answer(c).split_whitespace().count() <= MAX_CLOSED_ANSWER_TOKENS
                && !normalize_answer(c).is_empty() =>
        {
            c.to_string()
        }
        Some(_) => "other".to_string(),
    };
    let motion = match &peak {
        Some(p) => QaPair {
            question: "How is the vehicle moving at the moment of peak acceleration?".into(),
            answer: format!(
                "It travels at {} m/s with a longitudinal acceleration of {} m/s2.",
                p.v, p.ax
            ),
            kind: QaKind::Open,
        },
        None => QaPair {
            question: "Which objects appear in the scene?".into(),
            answer: if counts.is_empty() {
                "No objects are detected by the expert models.".into()
            } else {
                let names: Vec<&str> = counts.keys().map(String::as_str).collect();
                format!("The expert models detect {}.", names.join(", "))
            },
            kind: QaKind::Open,
        },
    };
    let qa = vec![
        QaPair {
            question: "What happens around the event?".into(),
            answer: event_answer,
            kind: QaKind::Open,
        },
        motion,
        QaPair {
            question: "Does the clip contain a collision?".into(),
            answer: if label == SceClass::Collision { "yes" } else { "no" }.into(),
            kind: QaKind::Closed,
        },
        QaPair {
            question: "Which object class is detected most often?".into(),
            answer: top_answer,
            kind: QaKind::Closed,
        },
    ];
    render_response(&caption, &qa, label)
}

/// [`Transport`] that answers every request with [`mock_teacher`].
#[derive(Debug, Clone, Copy)]
pub struct MockTeacher {
    pub seed: u64,
    pub thresholds: SceThresholds,
}

impl MockTeacher {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            thresholds: SceThresholds::default(),
        }
    }
}

impl Transport for MockTeacher {
    fn send(&self, request: &TeacherRequest, _timeout: Duration) -> Result<String, TransportFailure> {
        Ok(mock_teacher_with(&request.bundle, self.seed, &self.thresholds))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::PromptBuilder;
    use crate::semantic::{BBox, Detection, Maneuver, SemanticMetadata};
    use crate::sync::{EventWindow, FrameTelemetry, SyncedFrame, SyncedSequence};
    use crate::teacher::parse_annotations;
    use crate::telemetry::Source;
    use proptest::prelude::*;

    fn sequence(ax: &[f64], with_tel: bool) -> SyncedSequence {
        let window = EventWindow {
            t_e: 5.2,
            t_start: 1.2,
            t_end: 7.2,
            n_frames: 18,
            target_fps: 3.0,
        };
        let frames = (1..=18)
            .map(|k| SyncedFrame {
                k,
                t_s: window.frame_time(k),
                raw_frame_index: 36 + (k - 1) * 10,
                telemetry: with_tel.then(|| FrameTelemetry {
                    accel: [ax.get(k - 1).copied().unwrap_or(0.0), 0.1, 9.8],
                    delta_angle_deg: 0.0,
                    speed_mps: 12.0,
                }),
            })
            .collect();
        SyncedSequence {
            clip_id: "demo-1".into(),
            source: Source::Private,
            window,
            frames,
        }
    }

    fn bundle(ax: &[f64], meta: &SemanticMetadata, include_imu: bool) -> PromptBundle {
        PromptBuilder::default()
            .build_bundle(&sequence(ax, true), meta, include_imu)
            .unwrap()
    }

    #[test]
    fn quotes_extreme_and_labels_collision() {
        let mut ax = vec![0.3; 18];
        ax[12] = -11.3;
        let raw = mock_teacher(&bundle(&ax, &SemanticMetadata::default(), true), 1);
        let a = parse_annotations(&raw, "demo-1").unwrap();
        assert!(a.caption.contains("-11.30"), "{}", a.caption);
        assert_eq!(a.sce_label, SceClass::Collision);
    }

    #[test]
    fn thresholds_on_encoded_values() {
        let label = |peak: f64| {
            let mut ax = vec![0.0; 18];
            ax[5] = peak;
            parse_annotations(&mock_teacher(&bundle(&ax, &SemanticMetadata::default(), true), 0), "c")
                .unwrap()
                .sce_label
        };
        assert_eq!(label(3.9), SceClass::Normal);
        assert_eq!(label(-5.0), SceClass::NearCollision);
        assert_eq!(label(10.5), SceClass::Collision);
    }

    #[test]
    fn without_imu_uses_flags_only() {
        let mut ax = vec![0.0; 18];
        ax[0] = -15.0;
        let calm = SemanticMetadata::default();
        let raw = mock_teacher(&bundle(&ax, &calm, false), 3);
        assert_eq!(parse_annotations(&raw, "c").unwrap().sce_label, SceClass::Normal);
        assert!(!raw.contains("-15.00"));

        let swerve = SemanticMetadata {
            maneuver: Some(Maneuver::Swerve),
            ..Default::default()
        };
        let raw = mock_teacher(&bundle(&ax, &swerve, false), 3);
        assert_eq!(parse_annotations(&raw, "c").unwrap().sce_label, SceClass::NearCollision);

        let crash = SemanticMetadata {
            crash_detected: true,
            ..Default::default()
        };
        let raw = mock_teacher(&bundle(&ax, &crash, false), 3);
        assert_eq!(parse_annotations(&raw, "c").unwrap().sce_label, SceClass::Collision);
    }

    #[test]
    fn deterministic_per_bundle_and_seed() {
        let b = bundle(&[1.0; 18], &SemanticMetadata::default(), true);
        assert_eq!(mock_teacher(&b, 9), mock_teacher(&b, 9));
        let openings: std::collections::BTreeSet<String> = (0..32)
            .map(|s| mock_teacher(&b, s).lines().nth(1).unwrap().to_string())
            .collect();
        assert!(openings.len() > 1);
    }

    #[test]
    fn most_frequent_class_answer() {
        let det = |k, class: &str| Detection {
            k,
            class: class.into(),
            bbox: BBox::new(0.1, 0.1, 0.2, 0.2).unwrap(),
            track_id: None,
        };
        let meta = SemanticMetadata {
            detections: vec![det(1, "car"), det(1, "car"), det(2, "pedestrian")],
            ..Default::default()
        };
        let a = parse_annotations(&mock_teacher(&bundle(&[0.0; 18], &meta, true), 0), "c").unwrap();
        assert_eq!(a.qa[3].answer, "car");
    }

    fn arb_meta() -> impl Strategy<Value = SemanticMetadata> {
        let det = (
            1usize..=18,
            "[a-z]{1,8}( [a-z]{1,8}){0,7}",
            0.0f64..0.5,
            0.0f64..0.5,
            proptest::option::of(0u64..50),
        )
            .prop_map(|(k, class, x, y, track_id)| Detection {
                k,
                class,
                bbox: BBox::new(x, y, x + 0.3, y + 0.3).unwrap(),
                track_id,
            });
        (
            any::<bool>(),
            proptest::option::of(prop_oneof![
                Just(Maneuver::HardBrake),
                Just(Maneuver::Swerve),
                Just(Maneuver::None),
                "[a-z_]{1,10}".prop_map(Maneuver::Other),
            ]),
            any::<bool>(),
            proptest::option::of(0.0f64..=1.0),
            proptest::collection::vec(det, 0..20),
        )
            .prop_map(
                |(crash_detected, maneuver, traffic_light_violation, stop_sign_severity, detections)| {
                    SemanticMetadata {
                        crash_detected,
                        maneuver,
                        traffic_light_violation,
                        stop_sign_severity,
                        detections,
                    }
                },
            )
    }

    proptest! {
        #[test]
        fn mock_output_always_parses(
            ax in proptest::collection::vec(-40.0f64..40.0, 18),
            meta in arb_meta(),
            include_imu in any::<bool>(),
            with_tel in any::<bool>(),
            seed in any::<u64>(),
        ) {
            let b = PromptBuilder::default()
                .build_bundle(&sequence(&ax, with_tel), &meta, include_imu)
                .unwrap();
            let raw = mock_teacher(&b, seed);
            let a = parse_annotations(&raw, "p");
            prop_assert!(a.is_ok(), "{:?}\n{}", a, raw);
            prop_assert_eq!(a.unwrap().qa.len(), 4);
        }
    }
}
