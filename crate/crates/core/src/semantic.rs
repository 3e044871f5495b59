//! Expert-model outputs for a clip and a rule-based stand-in SCE classifier.
//!
//! The crash detector, maneuver model, traffic-light and stop-sign pipelines are
//! external producers. This module owns their file contract and the text summary fed
//! to the teacher prompt.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::records::{Record, RecordError};
use crate::sync::{peak_abs_index, SyncedFrame};
use crate::telemetry::{ImuTrace, SceClass};

/// Highest valid frame ordinal in a detection.
pub const MAX_FRAME_ORDINAL: usize = 18;

#[derive(Debug, Error)]
pub enum SemanticError {
    #[error("missing file {0}")]
    MissingFile(std::path::PathBuf),
    #[error("malformed semantic record: {0}")]
    MalformedRecord(String),
    #[error("bounding box out of range: ({x1}, {y1}, {x2}, {y2})")]
    OutOfRangeBBox { x1: f64, y1: f64, x2: f64, y2: f64 },
    #[error("stop sign severity {0} outside [0, 1]")]
    OutOfRangeSeverity(f64),
    #[error("detection frame ordinal {0} outside 1..=18")]
    OutOfRangeFrame(usize),
    #[error("empty series")]
    EmptySeries,
    #[error("invalid thresholds: near-collision {near} must be in [0, collision {collision}]")]
    InvalidThresholds { near: f64, collision: f64 },
}

impl From<RecordError> for SemanticError {
    fn from(e: RecordError) -> Self {
        SemanticError::MalformedRecord(e.to_string())
    }
}

/// Harsh-maneuver category. Producers may emit categories beyond the named ones.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Maneuver {
    HardBrake,
    HardTurn,
    HardAcceleration,
    Swerve,
    None,
    Other(String),
}

impl Maneuver {
    pub fn as_str(&self) -> &str {
        match self {
            Maneuver::HardBrake => "hard_brake",
            Maneuver::HardTurn => "hard_turn",
            Maneuver::HardAcceleration => "hard_acceleration",
            Maneuver::Swerve => "swerve",
            Maneuver::None => "none",
            Maneuver::Other(s) => s,
        }
    }

    pub fn parse(token: &str) -> Maneuver {
        match token {
            "hard_brake" => Maneuver::HardBrake,
            "hard_turn" => Maneuver::HardTurn,
            "hard_acceleration" => Maneuver::HardAcceleration,
            "swerve" => Maneuver::Swerve,
            "none" => Maneuver::None,
            other => Maneuver::Other(other.to_string()),
        }
    }

    pub fn is_harsh(&self) -> bool {
        !matches!(self, Maneuver::None)
    }
}

impl fmt::Display for Maneuver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

/// Normalized bounding box, `0 ≤ x1 < x2 ≤ 1` and `0 ≤ y1 < y2 ≤ 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, SemanticError> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if [x1, y1, x2, y2].iter().all(|&v| in_unit(v)) && x1 < x2 && y1 < y2 {
            Ok(Self { x1, y1, x2, y2 })
        } else {
            Err(SemanticError::OutOfRangeBBox { x1, y1, x2, y2 })
        }
    }

    pub fn centroid(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    /// Frame ordinal, 1..=18.
    pub k: usize,
    pub class: String,
    pub bbox: BBox,
    pub track_id: Option<u64>,
}

impl Detection {
    fn canonical_cmp(&self, other: &Self) -> Ordering {
        self.class
            .cmp(&other.class)
            .then(self.track_id.cmp(&other.track_id))
            .then(self.bbox.x1.total_cmp(&other.bbox.x1))
            .then(self.bbox.y1.total_cmp(&other.bbox.y1))
            .then(self.bbox.x2.total_cmp(&other.bbox.x2))
            .then(self.bbox.y2.total_cmp(&other.bbox.y2))
    }

    fn encode(&self) -> String {
        let track = self.track_id.map(|t| t.to_string()).unwrap_or_default();
        let b = &self.bbox;
        format!(
            "{},{},{},{},{},{},{}",
            self.k, self.class, b.x1, b.y1, b.x2, b.y2, track
        )
    }

    fn decode(item: &str) -> Result<Self, SemanticError> {
        let parts: Vec<&str> = item.split(',').collect();
        let malformed = |why: &str| SemanticError::MalformedRecord(format!("detection {item:?}: {why}"));
        if parts.len() != 7 {
            return Err(malformed("expected 7 comma-separated values"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| malformed("bad coordinate"));
        let k: usize = parts[0].parse().map_err(|_| malformed("bad frame ordinal"))?;
        if !(1..=MAX_FRAME_ORDINAL).contains(&k) {
            return Err(SemanticError::OutOfRangeFrame(k));
        }
        let class = parts[1];
        if !valid_class(class) {
            return Err(malformed("bad class label"));
        }
        let bbox = BBox::new(num(parts[2])?, num(parts[3])?, num(parts[4])?, num(parts[5])?)?;
        let track_id = match parts[6] {
            "" => None,
            t => Some(t.parse().map_err(|_| malformed("bad track id"))?),
        };
        Ok(Detection {
            k,
            class: class.to_string(),
            bbox,
            track_id,
        })
    }
}

/// Class labels are embedded in comma/semicolon lists and single-line prompts.
fn valid_class(class: &str) -> bool {
    !class.is_empty() && !class.contains([',', ';']) && !class.chars().any(char::is_control)
}

/// Aggregate expert outputs for one clip.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SemanticMetadata {
    pub crash_detected: bool,
    pub maneuver: Option<Maneuver>,
    pub traffic_light_violation: bool,
    pub stop_sign_severity: Option<f64>,
    pub detections: Vec<Detection>,
}

impl SemanticMetadata {
    pub fn validate(&self) -> Result<(), SemanticError> {
        if let Some(s) = self.stop_sign_severity {
            if !(0.0..=1.0).contains(&s) {
                return Err(SemanticError::OutOfRangeSeverity(s));
            }
        }
        for d in &self.detections {
            if !(1..=MAX_FRAME_ORDINAL).contains(&d.k) {
                return Err(SemanticError::OutOfRangeFrame(d.k));
            }
            BBox::new(d.bbox.x1, d.bbox.y1, d.bbox.x2, d.bbox.y2)?;
            if !valid_class(&d.class) {
                return Err(SemanticError::MalformedRecord(format!("bad class label {:?}", d.class)));
            }
        }
        Ok(())
    }

    pub fn has_flags(&self) -> bool {
        self.crash_detected
            || self.traffic_light_violation
            || self.stop_sign_severity.is_some()
            || self.maneuver.as_ref().is_some_and(Maneuver::is_harsh)
    }

    pub fn to_record(&self) -> Record {
        let detections: Vec<String> = self.detections.iter().map(Detection::encode).collect();
        Record::new()
            .with("crash_detected", self.crash_detected)
            .with_opt("maneuver", self.maneuver.as_ref())
            .with("traffic_light_violation", self.traffic_light_violation)
            .with_opt("stop_sign_severity", self.stop_sign_severity)
            .with("detections", detections.join(";"))
    }

    pub fn from_record(r: &Record) -> Result<Self, SemanticError> {
        let detections = match r.get("detections") {
            None | Some("") => Vec::new(),
            Some(raw) => raw.split(';').map(Detection::decode).collect::<Result<_, _>>()?,
        };
        let meta = SemanticMetadata {
            crash_detected: r.parse_bool("crash_detected")?,
            maneuver: r.parse_opt::<String>("maneuver")?.map(|m| Maneuver::parse(&m)),
            traffic_light_violation: r.parse_bool("traffic_light_violation")?,
            stop_sign_severity: r.parse_opt("stop_sign_severity")?,
            detections,
        };
        meta.validate()?;
        Ok(meta)
    }
}

/// Reads a semantic metadata file holding exactly one record.
pub fn load_semantic_metadata(path: &Path) -> Result<SemanticMetadata, SemanticError> {
    if !path.exists() {
        return Err(SemanticError::MissingFile(path.to_path_buf()));
    }
    let records = crate::records::read_records(path)?;
    match records.as_slice() {
        [one] => SemanticMetadata::from_record(one),
        other => Err(SemanticError::MalformedRecord(format!(
            "expected exactly one record, found {}",
            other.len()
        ))),
    }
}

pub fn write_semantic_metadata(path: &Path, meta: &SemanticMetadata) -> Result<(), RecordError> {
    crate::records::write_records(path, [&meta.to_record()])
}

/// `|a_x|` thresholds for the heuristic classifier, m/s².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceThresholds {
    pub collision_mps2: f64,
    pub near_collision_mps2: f64,
}

impl Default for SceThresholds {
    fn default() -> Self {
        Self {
            collision_mps2: 10.0,
            near_collision_mps2: 4.0,
        }
    }
}

impl SceThresholds {
    pub fn validate(&self) -> Result<(), SemanticError> {
        let (near, collision) = (self.near_collision_mps2, self.collision_mps2);
        if near.is_finite() && collision.is_finite() && 0.0 <= near && near <= collision {
            Ok(())
        } else {
            Err(SemanticError::InvalidThresholds { near, collision })
        }
    }

    pub fn classify_peak(&self, peak_abs: f64) -> SceClass {
        if peak_abs >= self.collision_mps2 {
            SceClass::Collision
        } else if peak_abs >= self.near_collision_mps2 {
            SceClass::NearCollision
        } else {
            SceClass::Normal
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceAssessment {
    pub class: SceClass,
    /// Index of the extreme `|a_x|` sample within the window.
    pub peak_index: usize,
    pub peak_abs: f64,
}

/// Threshold rule on the peak longitudinal acceleration.
pub fn assess_accel_x(accel_x: &[f64], thresholds: &SceThresholds) -> Result<SceAssessment, SemanticError> {
    thresholds.validate()?;
    let peak_index = peak_abs_index(accel_x).ok_or(SemanticError::EmptySeries)?;
    let peak_abs = accel_x[peak_index].abs();
    Ok(SceAssessment {
        class: thresholds.classify_peak(peak_abs),
        peak_index,
        peak_abs,
    })
}

/// Rule-based SCE label for an IMU window.
pub fn heuristic_sce_classifier(window: &ImuTrace, thresholds: &SceThresholds) -> Result<SceClass, SemanticError> {
    assess_accel_x(&window.accel().x, thresholds).map(|a| a.class)
}

/// Prompt-ready text view of the metadata: one header line plus one line per frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetadataSummary {
    pub header: String,
    pub frame_lines: Vec<String>,
}

fn header_line(meta: &SemanticMetadata) -> String {
    if !meta.has_flags() {
        return "no expert flags".to_string();
    }
    let mut flags = Vec::new();
    if meta.crash_detected {
        flags.push("crash detected".to_string());
    }
    if let Some(m) = meta.maneuver.as_ref().filter(|m| m.is_harsh()) {
        flags.push(format!("maneuver {m}"));
    }
    if meta.traffic_light_violation {
        flags.push("traffic light violation".to_string());
    }
    if let Some(s) = meta.stop_sign_severity {
        flags.push(format!("stop sign severity {s:.2}"));
    }
    format!("expert flags: {}", flags.join(", "))
}

fn frame_line(k: usize, dets: &[&Detection]) -> String {
    if dets.is_empty() {
        return format!("frame {k}: no detections");
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for d in dets {
        *counts.entry(d.class.as_str()).or_default() += 1;
    }
    let counts: Vec<String> = counts.iter().map(|(c, n)| format!("{c}×{n}")).collect();
    let objects: Vec<String> = dets
        .iter()
        .map(|d| {
            let (cx, cy) = d.bbox.centroid();
            let id = d.track_id.map(|t| format!("#{t}")).unwrap_or_default();
            format!("{}{id} ({cx:.2},{cy:.2})", d.class)
        })
        .collect();
    format!("frame {k}: {}; {}", counts.join(", "), objects.join(", "))
}

/// Per-frame object counts and centroids plus the global flag header.
pub fn summarize_metadata(meta: &SemanticMetadata, frames: &[SyncedFrame]) -> MetadataSummary {
    let mut sorted: Vec<&Detection> = meta.detections.iter().collect();
    sorted.sort_by(|a, b| a.canonical_cmp(b));
    let frame_lines = frames
        .iter()
        .map(|f| {
            let dets: Vec<&Detection> = sorted.iter().copied().filter(|d| d.k == f.k).collect();
            frame_line(f.k, &dets)
        })
        .collect();
    MetadataSummary {
        header: header_line(meta),
        frame_lines,
    }
}
