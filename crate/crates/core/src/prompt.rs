//! Teacher and student prompt rendering.
//!
//! Templates are plain text files with `{name}` placeholders. The built-in set is
//! compiled in from `templates/`; a directory with the same file names overrides it.
//! `template_version` is the first 8 hex characters of a SHA-256 over every template,
//! so any edit to a template changes the version recorded in emitted datasets.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::semantic::{summarize_metadata, MetadataSummary, SemanticMetadata};
use crate::sync::{SyncedFrame, SyncedSequence};

/// Marker every telemetry line starts its acceleration field with.
pub const TELEMETRY_MARKER: &str = "a=[";

/// Default number of QA pairs the teacher is asked for.
pub const DEFAULT_QA_PAIRS: usize = 10;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("unknown task profile {0:?}")]
    UnknownProfile(String),
    #[error("expected {expected} frames with one summary line each, got {frames} frames and {lines} lines")]
    FrameCountMismatch {
        expected: usize,
        frames: usize,
        lines: usize,
    },
    #[error("template {name}: {source}")]
    Io {
        name: &'static str,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskProfile {
    CaptionAndQa,
}

impl FromStr for TaskProfile {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "caption_and_qa" => Ok(TaskProfile::CaptionAndQa),
            other => Err(PromptError::UnknownProfile(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PromptSegment {
    /// Reference to synchronized frame `k` (1-based).
    FrameRef(usize),
    Text(String),
}

/// Everything the teacher needs for one clip, minus the frame pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptBundle {
    pub system_prompt: String,
    pub user_segments: Vec<PromptSegment>,
    pub include_imu: bool,
    pub template_version: String,
}

impl PromptBundle {
    /// Deterministic text form of the user prompt, with frames as `<frame k>`.
    pub fn user_text(&self) -> String {
        flatten_segments(&self.user_segments)
    }

    pub fn frame_refs(&self) -> Vec<usize> {
        self.user_segments
            .iter()
            .filter_map(|s| match s {
                PromptSegment::FrameRef(k) => Some(*k),
                PromptSegment::Text(_) => None,
            })
            .collect()
    }
}

pub fn flatten_segments(segments: &[PromptSegment]) -> String {
    let parts: Vec<String> = segments
        .iter()
        .map(|s| match s {
            PromptSegment::FrameRef(k) => format!("<frame {k}>"),
            PromptSegment::Text(t) => t.clone(),
        })
        .collect();
    parts.join("\n")
}

const TEMPLATE_FILES: [&str; 5] = [
    "system_caption_and_qa.txt",
    "telemetry_line.txt",
    "user_header.txt",
    "student_caption.txt",
    "student_sce.txt",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub system_caption_and_qa: String,
    pub telemetry_line: String,
    pub user_header: String,
    pub student_caption: String,
    pub student_sce: String,
}

impl PromptTemplates {
    pub fn builtin() -> Self {
        Self::from_texts([
            include_str!("../templates/system_caption_and_qa.txt"),
            include_str!("../templates/telemetry_line.txt"),
            include_str!("../templates/user_header.txt"),
            include_str!("../templates/student_caption.txt"),
            include_str!("../templates/student_sce.txt"),
        ])
    }

    /// Loads all template files from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut texts: [String; 5] = Default::default();
        for (slot, name) in texts.iter_mut().zip(TEMPLATE_FILES) {
            *slot = fs::read_to_string(dir.join(name)).map_err(|source| PromptError::Io { name, source })?;
        }
        Ok(Self::from_texts(texts.each_ref().map(String::as_str)))
    }

    fn from_texts(texts: [&str; 5]) -> Self {
        let t = texts.map(|s| s.trim_end_matches(['\n', '\r']).to_string());
        let [system_caption_and_qa, telemetry_line, user_header, student_caption, student_sce] = t;
        Self {
            system_caption_and_qa,
            telemetry_line,
            user_header,
            student_caption,
            student_sce,
        }
    }

    pub fn version(&self) -> String {
        let mut hasher = Sha256::new();
        for (name, text) in TEMPLATE_FILES.iter().zip(self.texts()) {
            hasher.update(name.as_bytes());
            hasher.update([0]);
            hasher.update(text.as_bytes());
            hasher.update([0]);
        }
        hex::encode(hasher.finalize())[..8].to_string()
    }

    fn texts(&self) -> [&str; 5] {
        [
            &self.system_caption_and_qa,
            &self.telemetry_line,
            &self.user_header,
            &self.student_caption,
            &self.student_sce,
        ]
    }
}

/// Replaces each `{name}` with its value; unknown placeholders are left alone.
pub fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (name, value) in values {
        out = out.replace(&format!("{{{name}}}"), value);
    }
    out
}

/// Two decimals, never rendering a negative zero.
pub fn fixed2(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".to_string()
    } else {
        s
    }
}

fn signed2(v: f64) -> String {
    let s = fixed2(v);
    if s.starts_with('-') {
        s
    } else {
        format!("+{s}")
    }
}

/// Renders prompts from a fixed template set.
#[derive(Debug, Clone)]
pub struct PromptBuilder {
    templates: PromptTemplates,
    version: String,
    qa_pairs: usize,
}

impl Default for PromptBuilder {
    fn default() -> Self {
        Self::new(PromptTemplates::builtin())
    }
}

impl PromptBuilder {
    pub fn new(templates: PromptTemplates) -> Self {
        let version = templates.version();
        Self {
            templates,
            version,
            qa_pairs: DEFAULT_QA_PAIRS,
        }
    }

    pub fn with_qa_pairs(mut self, n: usize) -> Self {
        self.qa_pairs = n;
        self
    }

    pub fn template_version(&self) -> &str {
        &self.version
    }

    pub fn templates(&self) -> &PromptTemplates {
        &self.templates
    }

    pub fn render_system_prompt(&self, profile: TaskProfile) -> String {
        match profile {
            TaskProfile::CaptionAndQa => fill(
                &self.templates.system_caption_and_qa,
                &[("qa_pairs", &self.qa_pairs.to_string())],
            ),
        }
    }

    /// `t=+0.00s a=[x,y,z]m/s2 dA=..deg v=..m/s` with time relative to the event.
    /// `None` for frames without telemetry.
    pub fn format_telemetry_line(&self, frame: &SyncedFrame, t_e: f64) -> Option<String> {
        let t = frame.telemetry?;
        Some(fill(
            &self.templates.telemetry_line,
            &[
                ("t_rel", &signed2(frame.t_s - t_e)),
                ("ax", &fixed2(t.accel[0])),
                ("ay", &fixed2(t.accel[1])),
                ("az", &fixed2(t.accel[2])),
                ("dA", &fixed2(t.delta_angle_deg)),
                ("v", &fixed2(t.speed_mps)),
            ],
        ))
    }

    /// Teacher user prompt: a header with the global expert flags, then each frame
    /// reference followed by its telemetry line (unless dropped) and semantic line.
    pub fn render_user_prompt(
        &self,
        seq: &SyncedSequence,
        summary: &MetadataSummary,
        include_imu: bool,
    ) -> Result<Vec<PromptSegment>, PromptError> {
        let expected = seq.window.n_frames;
        if seq.frames.len() != expected || summary.frame_lines.len() != expected {
            return Err(PromptError::FrameCountMismatch {
                expected,
                frames: seq.frames.len(),
                lines: summary.frame_lines.len(),
            });
        }
        let mut segments = vec![PromptSegment::Text(fill(
            &self.templates.user_header,
            &[("flags", &summary.header)],
        ))];
        for (frame, line) in seq.frames.iter().zip(&summary.frame_lines) {
            segments.push(PromptSegment::FrameRef(frame.k));
            if include_imu {
                if let Some(tel) = self.format_telemetry_line(frame, seq.window.t_e) {
                    segments.push(PromptSegment::Text(tel));
                }
            }
            segments.push(PromptSegment::Text(line.clone()));
        }
        Ok(segments)
    }

    /// Teacher bundle for a clip. IMU is included only when requested and available.
    pub fn build_bundle(
        &self,
        seq: &SyncedSequence,
        meta: &SemanticMetadata,
        include_imu: bool,
    ) -> Result<PromptBundle, PromptError> {
        let include_imu = include_imu && seq.has_telemetry();
        let summary = summarize_metadata(meta, &seq.frames);
        Ok(PromptBundle {
            system_prompt: self.render_system_prompt(TaskProfile::CaptionAndQa),
            user_segments: self.render_user_prompt(seq, &summary, include_imu)?,
            include_imu,
            template_version: self.version.clone(),
        })
    }

    /// Student input: an instruction followed by the frames and, when kept, telemetry.
    /// Expert metadata is never part of the student prompt.
    pub fn render_student_prompt(
        &self,
        instruction: &str,
        seq: &SyncedSequence,
        include_imu: bool,
    ) -> Vec<PromptSegment> {
        let mut segments = vec![PromptSegment::Text(instruction.to_string())];
        for frame in &seq.frames {
            segments.push(PromptSegment::FrameRef(frame.k));
            if include_imu {
                if let Some(tel) = self.format_telemetry_line(frame, seq.window.t_e) {
                    segments.push(PromptSegment::Text(tel));
                }
            }
        }
        segments
    }
}

impl fmt::Display for PromptSegment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PromptSegment::FrameRef(k) => write!(f, "<frame {k}>"),
            PromptSegment::Text(t) => f.write_str(t),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantic::{BBox, Detection};
    use crate::sync::{EventWindow, FrameTelemetry};
    use crate::telemetry::Source;

    fn frame(t_s: f64, ax: f64, az: f64, da: f64, v: f64) -> SyncedFrame {
        SyncedFrame {
            k: 1,
            t_s,
            raw_frame_index: 0,
            telemetry: Some(FrameTelemetry {
                accel: [ax, 0.0, az],
                delta_angle_deg: da,
                speed_mps: v,
            }),
        }
    }

    fn sequence(with_telemetry: bool) -> SyncedSequence {
        let window = EventWindow {
            t_e: 8.0,
            t_start: 4.0,
            t_end: 10.0,
            n_frames: 18,
            target_fps: 3.0,
        };
        let frames = (1..=18)
            .map(|k| SyncedFrame {
                k,
                t_s: window.frame_time(k),
                raw_frame_index: 120 + 10 * (k - 1),
                telemetry: with_telemetry.then_some(FrameTelemetry {
                    accel: [-(k as f64) * 0.5, 0.1, 9.81],
                    delta_angle_deg: 0.3,
                    speed_mps: 13.0,
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

    #[test]
    fn telemetry_line_examples() {
        let b = PromptBuilder::default();
        assert_eq!(
            b.format_telemetry_line(&frame(4.0, -11.30, 9.81, 0.0, 13.0), 8.0)
                .unwrap(),
            "t=-4.00s a=[-11.30,0.00,9.81]m/s2 dA=0.00deg v=13.00m/s"
        );
        assert_eq!(
            b.format_telemetry_line(&frame(8.0, 0.0, 0.0, 0.0, 0.0), 8.0).unwrap(),
            "t=+0.00s a=[0.00,0.00,0.00]m/s2 dA=0.00deg v=0.00m/s"
        );
        // negated constant-rate gyro block: 33 * -9 / 100
        let da = -(33.0 * 9.0) / 100.0;
        let line = b.format_telemetry_line(&frame(8.0, 0.0, 0.0, da, 0.0), 8.0).unwrap();
        assert!(line.contains("dA=-2.97deg"), "{line}");
        // tiny negatives must not print as -0.00
        let line = b
            .format_telemetry_line(&frame(7.999, -0.001, 0.0, 0.0, 0.0), 8.0)
            .unwrap();
        assert_eq!(line, "t=+0.00s a=[0.00,0.00,0.00]m/s2 dA=0.00deg v=0.00m/s");
    }

    #[test]
    fn system_prompt_is_stable_and_versioned() {
        let b = PromptBuilder::default();
        let s = b.render_system_prompt(TaskProfile::CaptionAndQa);
        assert!(s.contains("===ANNOTATION===\nCAPTION: <one line, no newlines>"));
        assert!(s.contains("SCE: <normal|near-collision|collision>\n===END==="));
        assert!(s.contains("Write 10 question-answer pairs"));
        assert_eq!(s, b.render_system_prompt(TaskProfile::CaptionAndQa));
        assert!(matches!(
            "captions".parse::<TaskProfile>(),
            Err(PromptError::UnknownProfile(_))
        ));

        let mut edited = PromptTemplates::builtin();
        edited.system_caption_and_qa.push_str("\nBe concise.");
        let b2 = PromptBuilder::new(edited);
        assert_ne!(b.template_version(), b2.template_version());
        assert_ne!(s, b2.render_system_prompt(TaskProfile::CaptionAndQa));
        assert_eq!(b.template_version().len(), 8);
        assert!(b.template_version().chars().all(|c| c.is_ascii_hexdigit()));
    }

    #[test]
    fn template_dir_matches_builtin() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("templates");
        assert_eq!(PromptTemplates::load_dir(&dir).unwrap(), PromptTemplates::builtin());
        assert!(PromptTemplates::load_dir(Path::new("/nonexistent")).is_err());
    }

    #[test]
    fn user_prompt_structure() {
        let b = PromptBuilder::default();
        let seq = sequence(true);
        let meta = SemanticMetadata::default();
        let bundle = b.build_bundle(&seq, &meta, true).unwrap();
        assert_eq!(bundle.frame_refs(), (1..=18).collect::<Vec<_>>());
        let tel_segments = bundle
            .user_segments
            .iter()
            .filter(|s| matches!(s, PromptSegment::Text(t) if t.contains(TELEMETRY_MARKER)))
            .count();
        assert!(tel_segments >= 18);
        assert_eq!(bundle.user_text().matches("no detections").count(), 18);

        let dropped = b.build_bundle(&seq, &meta, false).unwrap();
        assert!(!dropped.include_imu);
        assert!(!dropped.user_text().contains(TELEMETRY_MARKER));
        assert_eq!(dropped.frame_refs().len(), 18);
        assert_eq!(dropped.user_text().matches("no detections").count(), 18);

        // requesting IMU for a video-only clip yields a telemetry-free bundle
        let video = b.build_bundle(&sequence(false), &meta, true).unwrap();
        assert!(!video.include_imu);
        assert!(!video.user_text().contains(TELEMETRY_MARKER));
    }

    #[test]
    fn frame_count_mismatch() {
        let b = PromptBuilder::default();
        let seq = sequence(true);
        let summary = MetadataSummary {
            header: "no expert flags".into(),
            frame_lines: vec!["x".into(); 17],
        };
        assert!(matches!(
            b.render_user_prompt(&seq, &summary, true),
            Err(PromptError::FrameCountMismatch { .. })
        ));
    }

    #[test]
    fn semantic_lines_follow_frames() {
        let b = PromptBuilder::default();
        let meta = SemanticMetadata {
            crash_detected: true,
            detections: vec![Detection {
                k: 2,
                class: "car".into(),
                bbox: BBox::new(0.2, 0.3, 0.4, 0.5).unwrap(),
                track_id: Some(4),
            }],
            ..Default::default()
        };
        let text = b.build_bundle(&sequence(true), &meta, true).unwrap().user_text();
        assert!(text.starts_with("Clip of 18 frames at 3 fps around the event at t=0.\nExpert models: expert flags: crash detected\n<frame 1>\n"));
        assert!(text.contains("<frame 2>\nt=-3.67s a=[-1.00,0.10,9.81]m/s2 dA=0.30deg v=13.00m/s\nframe 2: car×1; car#4 (0.30,0.40)\n<frame 3>"));
    }

    #[test]
    fn student_prompt_omits_semantics() {
        let b = PromptBuilder::default();
        let seq = sequence(true);
        let with = flatten_segments(&b.render_student_prompt("Q?", &seq, true));
        let without = flatten_segments(&b.render_student_prompt("Q?", &seq, false));
        assert_eq!(with.matches(TELEMETRY_MARKER).count(), 18);
        assert!(!without.contains(TELEMETRY_MARKER));
        assert!(!with.contains("frame 1:"));
        assert!(without.starts_with("Q?\n<frame 1>\n<frame 2>"));
    }
}
