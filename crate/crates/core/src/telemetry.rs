//! Raw clip, sensor and label types plus their CSV / record loaders.
//!
//! Units are fixed once data is loaded: acceleration in m/s², angular rate in °/s and
//! speed in m/s. Accelerometer channels keep gravity. The x axis is assumed to be
//! longitudinal, with braking showing up as negative values.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::records::{Record, RecordError};

pub const IMU_RATE_HZ: f64 = 100.0;
pub const GPS_RATE_HZ: f64 = 1.0;
pub const STANDARD_GRAVITY: f64 = 9.80665;
const KMH_PER_MPS: f64 = 3.6;
/// Allowed relative deviation of the median sample spacing from the nominal rate.
const RATE_TOLERANCE: f64 = 0.01;

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad header: {0}")]
    BadHeader(String),
    #[error("line {line}: malformed row ({reason})")]
    MalformedRow { line: usize, reason: String },
    #[error("line {line}: non-finite sample")]
    NonFiniteSample { line: usize },
    #[error("line {line}: invalid value ({reason})")]
    InvalidValue { line: usize, reason: String },
    #[error("median sample spacing {median_dt_s}s deviates from {expected_dt_s}s by more than 1%")]
    RateMismatch { median_dt_s: f64, expected_dt_s: f64 },
    #[error("too few samples: {actual} < {required}")]
    TooFewSamples { actual: usize, required: usize },
    #[error("channel {channel} has {actual} samples, expected {expected}")]
    LengthMismatch {
        channel: &'static str,
        actual: usize,
        expected: usize,
    },
    #[error("channel {channel} has a non-finite value at index {index}")]
    NonFiniteValue { channel: &'static str, index: usize },
    #[error("negative speed at index {index}")]
    NegativeSpeed { index: usize },
    #[error("invalid clip manifest: {0}")]
    InvalidManifest(String),
    #[error("duplicate clip_id {0:?}")]
    DuplicateClipId(String),
    #[error(transparent)]
    Record(#[from] RecordError),
}

/// Three equally long per-axis series.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Axes {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

impl Axes {
    pub fn new(x: Vec<f64>, y: Vec<f64>, z: Vec<f64>) -> Self {
        Self { x, y, z }
    }

    pub fn constant(value: f64, len: usize) -> Self {
        Self::new(vec![value; len], vec![value; len], vec![value; len])
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    fn channels(&self) -> [&[f64]; 3] {
        [&self.x, &self.y, &self.z]
    }

    fn slice(&self, start: usize, end: usize) -> Axes {
        Axes::new(
            self.x[start..end].to_vec(),
            self.y[start..end].to_vec(),
            self.z[start..end].to_vec(),
        )
    }
}

fn check_channel(channel: &'static str, data: &[f64], expected: usize) -> Result<(), TelemetryError> {
    if data.len() != expected {
        return Err(TelemetryError::LengthMismatch {
            channel,
            actual: data.len(),
            expected,
        });
    }
    match data.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(TelemetryError::NonFiniteValue { channel, index }),
        None => Ok(()),
    }
}

/// Triaxial accelerometer (m/s²) and gyroscope (°/s) sampled at 100 Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuTrace {
    accel: Axes,
    gyro: Axes,
    start_time_s: f64,
}

impl ImuTrace {
    pub fn new(accel: Axes, gyro: Axes, start_time_s: f64) -> Result<Self, TelemetryError> {
        let n = accel.len();
        if n == 0 {
            return Err(TelemetryError::TooFewSamples { actual: 0, required: 1 });
        }
        let names = [["ax", "ay", "az"], ["gx", "gy", "gz"]];
        for (axes, names) in [&accel, &gyro].into_iter().zip(names) {
            for (data, name) in axes.channels().into_iter().zip(names) {
                check_channel(name, data, n)?;
            }
        }
        if !start_time_s.is_finite() {
            return Err(TelemetryError::NonFiniteValue { channel: "t", index: 0 });
        }
        Ok(Self {
            accel,
            gyro,
            start_time_s,
        })
    }

    pub fn accel(&self) -> &Axes {
        &self.accel
    }

    pub fn gyro(&self) -> &Axes {
        &self.gyro
    }

    pub fn start_time_s(&self) -> f64 {
        self.start_time_s
    }

    pub fn sample_rate_hz(&self) -> f64 {
        IMU_RATE_HZ
    }

    pub fn len(&self) -> usize {
        self.accel.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accel.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / IMU_RATE_HZ
    }

    /// Samples `[start, start + len)` as a new trace with its own start time.
    pub fn section(&self, start: usize, len: usize) -> Option<ImuTrace> {
        let end = start.checked_add(len)?;
        if len == 0 || end > self.len() {
            return None;
        }
        Some(ImuTrace {
            accel: self.accel.slice(start, end),
            gyro: self.gyro.slice(start, end),
            start_time_s: self.start_time_s + start as f64 / IMU_RATE_HZ,
        })
    }
}

/// GPS speed (m/s) sampled at 1 Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct GpsTrace {
    speed: Vec<f64>,
    start_time_s: f64,
}

impl GpsTrace {
    pub fn new(speed: Vec<f64>, start_time_s: f64) -> Result<Self, TelemetryError> {
        if speed.len() < 2 {
            return Err(TelemetryError::TooFewSamples {
                actual: speed.len(),
                required: 2,
            });
        }
        check_channel("speed", &speed, speed.len())?;
        if let Some(index) = speed.iter().position(|&v| v < 0.0) {
            return Err(TelemetryError::NegativeSpeed { index });
        }
        if !start_time_s.is_finite() {
            return Err(TelemetryError::NonFiniteValue { channel: "t", index: 0 });
        }
        Ok(Self { speed, start_time_s })
    }

    pub fn speed(&self) -> &[f64] {
        &self.speed
    }

    pub fn start_time_s(&self) -> f64 {
        self.start_time_s
    }

    pub fn sample_rate_hz(&self) -> f64 {
        GPS_RATE_HZ
    }

    pub fn len(&self) -> usize {
        self.speed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speed.is_empty()
    }

    pub fn time_of(&self, index: usize) -> f64 {
        self.start_time_s + index as f64 / GPS_RATE_HZ
    }
}

/// Safety-critical event severity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SceClass {
    Normal,
    NearCollision,
    Collision,
}

impl SceClass {
    pub const ALL: [SceClass; 3] = [SceClass::Normal, SceClass::NearCollision, SceClass::Collision];

    /// Canonical label token.
    pub fn as_str(self) -> &'static str {
        match self {
            SceClass::Normal => "normal",
            SceClass::NearCollision => "near-collision",
            SceClass::Collision => "collision",
        }
    }

    /// Binary collapse: near-collision and collision are the positive class.
    pub fn is_event(self) -> bool {
        !matches!(self, SceClass::Normal)
    }
}

impl fmt::Display for SceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown SCE label {0:?}")]
pub struct UnknownSceLabel(pub String);

impl FromStr for SceClass {
    type Err = UnknownSceLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SceClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| UnknownSceLabel(s.to_string()))
    }
}

/// Where a clip came from. Test partitions are kept apart per source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Source {
    Private,
    Bddx,
    Nexar,
}

impl Source {
    pub const ALL: [Source; 3] = [Source::Private, Source::Bddx, Source::Nexar];

    pub fn as_str(self) -> &'static str {
        match self {
            Source::Private => "private",
            Source::Bddx => "bddx",
            Source::Nexar => "nexar",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Source::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown source {s:?} (expected private|bddx|nexar)"))
    }
}

/// Per-clip description. Optional paths are relative to the manifest file's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipManifest {
    pub clip_id: String,
    pub source: Source,
    pub duration_s: f64,
    pub fps: f64,
    pub width: u32,
    pub height: u32,
    /// Frame file pattern containing `{index}` or `{index:0N}`.
    pub frame_path_pattern: String,
    pub imu_path: Option<PathBuf>,
    pub gps_path: Option<PathBuf>,
    pub semantic_path: Option<PathBuf>,
    /// Event time used when the clip has no IMU to detect it from.
    pub event_time_s: Option<f64>,
}

impl ClipManifest {
    pub fn validate(&self) -> Result<(), TelemetryError> {
        let bad = |m: String| Err(TelemetryError::InvalidManifest(m));
        if self.clip_id.is_empty() {
            return bad("empty clip_id".into());
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return bad(format!("{}: duration_s must be > 0", self.clip_id));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return bad(format!("{}: fps must be > 0", self.clip_id));
        }
        if let Some(t) = self.event_time_s {
            if !t.is_finite() || t < 0.0 || t > self.duration_s {
                return bad(format!("{}: event_time_s outside the clip", self.clip_id));
            }
        }
        Ok(())
    }

    /// Number of raw frames in the clip.
    pub fn total_frames(&self) -> usize {
        ((self.duration_s * self.fps).round() as usize).max(1)
    }

    /// Expands the frame path pattern for one raw frame index.
    pub fn frame_path(&self, index: usize) -> String {
        expand_index_pattern(&self.frame_path_pattern, index)
    }

    pub fn to_record(&self) -> Record {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        Record::new()
            .with("clip_id", &self.clip_id)
            .with("source", self.source)
            .with("duration_s", self.duration_s)
            .with("fps", self.fps)
            .with("width", self.width)
            .with("height", self.height)
            .with("frame_path_pattern", &self.frame_path_pattern)
            .with_opt("imu_path", path(&self.imu_path))
            .with_opt("gps_path", path(&self.gps_path))
            .with_opt("semantic_path", path(&self.semantic_path))
            .with_opt("event_time_s", self.event_time_s)
    }

    pub fn from_record(r: &Record) -> Result<Self, RecordError> {
        let path = |key| r.parse_opt::<String>(key).map(|o| o.map(PathBuf::from));
        Ok(Self {
            clip_id: r.require("clip_id")?.to_string(),
            source: r.parse("source")?,
            duration_s: r.parse("duration_s")?,
            fps: r.parse("fps")?,
            width: r.parse("width")?,
            height: r.parse("height")?,
            frame_path_pattern: r.require("frame_path_pattern")?.to_string(),
            imu_path: path("imu_path")?,
            gps_path: path("gps_path")?,
            semantic_path: path("semantic_path")?,
            event_time_s: r.parse_opt("event_time_s")?,
        })
    }
}

fn expand_index_pattern(pattern: &str, index: usize) -> String {
    let Some(open) = pattern.find("{index") else {
        return pattern.to_string();
    };
    let Some(close) = pattern[open..].find('}').map(|c| open + c) else {
        return pattern.to_string();
    };
    let spec = &pattern[open + "{index".len()..close];
    let rendered = match spec.strip_prefix(":0").and_then(|w| w.parse::<usize>().ok()) {
        Some(width) => format!("{index:0width$}"),
        None if spec.is_empty() => index.to_string(),
        None => return pattern.to_string(),
    };
    format!("{}{}{}", &pattern[..open], rendered, &pattern[close + 1..])
}

/// Loads a manifest file; clip ids must be unique.
pub fn load_manifest(path: &Path) -> Result<Vec<ClipManifest>, TelemetryError> {
    if !path.exists() {
        return Err(TelemetryError::MissingFile(path.to_path_buf()));
    }
    let clips = crate::records::read_typed(path, ClipManifest::from_record)?;
    let mut seen = std::collections::BTreeSet::new();
    for clip in &clips {
        clip.validate()?;
        if !seen.insert(clip.clip_id.as_str()) {
            return Err(TelemetryError::DuplicateClipId(clip.clip_id.clone()));
        }
    }
    Ok(clips)
}

pub fn write_manifest(path: &Path, clips: &[ClipManifest]) -> Result<(), TelemetryError> {
    let records: Vec<Record> = clips.iter().map(ClipManifest::to_record).collect();
    crate::records::write_records(path, &records)?;
    Ok(())
}

#[derive(Debug, Clone, Copy)]
enum Unit {
    MetersPerSecondSquared,
    StandardGravity,
    DegreesPerSecond,
    RadiansPerSecond,
    MetersPerSecond,
    KilometersPerHour,
}

impl Unit {
    fn to_canonical(self, v: f64) -> f64 {
        match self {
            Unit::StandardGravity => v * STANDARD_GRAVITY,
            Unit::RadiansPerSecond => v.to_degrees(),
            Unit::KilometersPerHour => v / KMH_PER_MPS,
            _ => v,
        }
    }
}

fn parse_column(name: &str, expected_prefix: &str, units: &[(&str, Unit)]) -> Result<Unit, TelemetryError> {
    let suffix = name
        .trim()
        .strip_prefix(expected_prefix)
        .and_then(|s| s.strip_prefix('_'))
        .ok_or_else(|| TelemetryError::BadHeader(format!("expected column {expected_prefix}_<unit>, got {name:?}")))?;
    units
        .iter()
        .find(|(u, _)| *u == suffix)
        .map(|(_, unit)| *unit)
        .ok_or_else(|| TelemetryError::BadHeader(format!("unsupported unit {suffix:?} for {expected_prefix}")))
}

struct Table {
    units: Vec<Unit>,
    times: Vec<f64>,
    columns: Vec<Vec<f64>>,
    lines: Vec<usize>,
}

fn read_table(path: &Path, columns: &[(&str, &[(&str, Unit)])]) -> Result<Table, TelemetryError> {
    if !path.exists() {
        return Err(TelemetryError::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| io_from_csv(path, e))?;
    let header = reader.headers().map_err(|e| io_from_csv(path, e))?.clone();
    let width = columns.len() + 1;
    if header.len() != width || header.get(0) != Some("t_s") {
        return Err(TelemetryError::BadHeader(format!(
            "expected t_s followed by {} data columns, got {:?}",
            columns.len(),
            header.iter().collect::<Vec<_>>()
        )));
    }
    let units = columns
        .iter()
        .enumerate()
        .map(|(i, (prefix, allowed))| parse_column(&header[i + 1], prefix, allowed))
        .collect::<Result<Vec<_>, _>>()?;

    let mut table = Table {
        units,
        times: Vec::new(),
        columns: vec![Vec::new(); columns.len()],
        lines: Vec::new(),
    };
    for row in reader.records() {
        let row = row.map_err(|e| match e.position() {
            Some(p) => TelemetryError::MalformedRow {
                line: p.line() as usize,
                reason: e.to_string(),
            },
            None => io_from_csv(path, e),
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        if row.len() != width {
            return Err(TelemetryError::MalformedRow {
                line,
                reason: format!("expected {width} columns, found {}", row.len()),
            });
        }
        let mut values = Vec::with_capacity(width);
        for field in row.iter() {
            let v: f64 = field.parse().map_err(|_| TelemetryError::MalformedRow {
                line,
                reason: format!("not a number: {field:?}"),
            })?;
            if !v.is_finite() {
                return Err(TelemetryError::NonFiniteSample { line });
            }
            values.push(v);
        }
        if let Some(&prev) = table.times.last() {
            if values[0] <= prev {
                return Err(TelemetryError::MalformedRow {
                    line,
                    reason: "timestamps must be strictly increasing".into(),
                });
            }
        }
        table.times.push(values[0]);
        for (col, (v, unit)) in table.columns.iter_mut().zip(values[1..].iter().zip(&table.units)) {
            col.push(unit.to_canonical(*v));
        }
        table.lines.push(line);
    }
    Ok(table)
}

fn io_from_csv(path: &Path, e: csv::Error) -> TelemetryError {
    TelemetryError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    }
}

fn check_rate(times: &[f64], rate_hz: f64) -> Result<(), TelemetryError> {
    if times.len() < 2 {
        return Ok(());
    }
    let mut dts: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    dts.sort_by(f64::total_cmp);
    let mid = dts.len() / 2;
    let median = if dts.len().is_multiple_of(2) {
        (dts[mid - 1] + dts[mid]) / 2.0
    } else {
        dts[mid]
    };
    let expected = 1.0 / rate_hz;
    if ((median - expected) / expected).abs() > RATE_TOLERANCE {
        return Err(TelemetryError::RateMismatch {
            median_dt_s: median,
            expected_dt_s: expected,
        });
    }
    Ok(())
}

const ACCEL_UNITS: &[(&str, Unit)] = &[("mps2", Unit::MetersPerSecondSquared), ("g", Unit::StandardGravity)];
const GYRO_UNITS: &[(&str, Unit)] = &[("dps", Unit::DegreesPerSecond), ("rads", Unit::RadiansPerSecond)];
const SPEED_UNITS: &[(&str, Unit)] = &[("mps", Unit::MetersPerSecond), ("kmh", Unit::KilometersPerHour)];

/// Loads a 100 Hz IMU CSV (`t_s,ax_*,ay_*,az_*,gx_*,gy_*,gz_*`).
pub fn load_imu_trace(path: &Path) -> Result<ImuTrace, TelemetryError> {
    let table = read_table(
        path,
        &[
            ("ax", ACCEL_UNITS),
            ("ay", ACCEL_UNITS),
            ("az", ACCEL_UNITS),
            ("gx", GYRO_UNITS),
            ("gy", GYRO_UNITS),
            ("gz", GYRO_UNITS),
        ],
    )?;
    if table.times.is_empty() {
        return Err(TelemetryError::TooFewSamples { actual: 0, required: 1 });
    }
    check_rate(&table.times, IMU_RATE_HZ)?;
    let mut cols = table.columns.into_iter();
    let mut next = || cols.next().unwrap_or_default();
    let accel = Axes::new(next(), next(), next());
    let gyro = Axes::new(next(), next(), next());
    ImuTrace::new(accel, gyro, table.times[0])
}

/// Loads a 1 Hz GPS CSV (`t_s,speed_*`).
pub fn load_gps_trace(path: &Path) -> Result<GpsTrace, TelemetryError> {
    let table = read_table(path, &[("speed", SPEED_UNITS)])?;
    if table.times.len() < 2 {
        return Err(TelemetryError::TooFewSamples {
            actual: table.times.len(),
            required: 2,
        });
    }
    let speed = table.columns.into_iter().next().unwrap_or_default();
    if let Some(i) = speed.iter().position(|&v| v < 0.0) {
        return Err(TelemetryError::InvalidValue {
            line: table.lines[i],
            reason: format!("negative speed {}", speed[i]),
        });
    }
    check_rate(&table.times, GPS_RATE_HZ)?;
    GpsTrace::new(speed, table.times[0])
}

fn write_text(path: &Path, text: &str) -> Result<(), TelemetryError> {
    let mut f = fs::File::create(path).map_err(|source| TelemetryError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    f.write_all(text.as_bytes()).map_err(|source| TelemetryError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes an IMU trace in canonical units.
pub fn write_imu_trace(path: &Path, trace: &ImuTrace) -> Result<(), TelemetryError> {
    let mut out = String::from("t_s,ax_mps2,ay_mps2,az_mps2,gx_dps,gy_dps,gz_dps\n");
    let (a, g) = (trace.accel(), trace.gyro());
    for i in 0..trace.len() {
        let t = trace.start_time_s() + i as f64 / IMU_RATE_HZ;
        out.push_str(&format!(
            "{t},{},{},{},{},{},{}\n",
            a.x[i], a.y[i], a.z[i], g.x[i], g.y[i], g.z[i]
        ));
    }
    write_text(path, &out)
}

pub fn write_gps_trace(path: &Path, trace: &GpsTrace) -> Result<(), TelemetryError> {
    let mut out = String::from("t_s,speed_mps\n");
    for (i, v) in trace.speed().iter().enumerate() {
        out.push_str(&format!("{},{v}\n", trace.time_of(i)));
    }
    write_text(path, &out)
}
