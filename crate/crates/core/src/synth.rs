//! Synthetic IMU/GPS traces with known event profiles, and demo corpus generation.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::records::{write_records, Record, RecordError};
use crate::semantic::{write_semantic_metadata, BBox, Detection, Maneuver, SemanticMetadata, MAX_FRAME_ORDINAL};
use crate::telemetry::{
    write_gps_trace, write_imu_trace, write_manifest, Axes, ClipManifest, GpsTrace, ImuTrace, SceClass, Source,
    TelemetryError, GPS_RATE_HZ, IMU_RATE_HZ,
};

pub const DEFAULT_DURATION_S: f64 = 16.0;
pub const DEFAULT_COLLISION_AMPLITUDE: f64 = -11.3;
pub const DEFAULT_NEAR_COLLISION_AMPLITUDE: f64 = -6.0;
pub const DEFAULT_SPIKE_WIDTH_MS: f64 = 150.0;
pub const DEFAULT_YAW_PULSE_DPS: f64 = 25.0;
pub const DEFAULT_YAW_PULSE_WIDTH_MS: f64 = 800.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error("cannot create {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthProfile {
    pub kind: SceClass,
    pub event_time_s: f64,
    /// Signed peak of the a_x spike; negative is deceleration. Unused for `Normal`.
    pub spike_amplitude: f64,
    pub spike_width_ms: f64,
    pub base_speed: f64,
    pub noise_sigma: f64,
    /// Peak of the ω_z pulse added for near-collisions.
    pub yaw_pulse_dps: f64,
    pub seed: u64,
}

impl SynthProfile {
    pub fn new(kind: SceClass, event_time_s: f64, seed: u64) -> Self {
        let spike_amplitude = match kind {
            SceClass::Collision => DEFAULT_COLLISION_AMPLITUDE,
            SceClass::NearCollision => DEFAULT_NEAR_COLLISION_AMPLITUDE,
            SceClass::Normal => 0.0,
        };
        Self {
            kind,
            event_time_s,
            spike_amplitude,
            spike_width_ms: DEFAULT_SPIKE_WIDTH_MS,
            base_speed: 12.0,
            noise_sigma: 0.05,
            yaw_pulse_dps: DEFAULT_YAW_PULSE_DPS,
            seed,
        }
    }

    pub fn validate(&self, duration_s: f64) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidProfile(m));
        if !(duration_s.is_finite() && duration_s > 0.0) {
            return bad(format!("duration {duration_s} must be positive"));
        }
        if !(self.event_time_s.is_finite() && (0.0..=duration_s).contains(&self.event_time_s)) {
            return bad(format!("event time {} outside [0, {duration_s}]", self.event_time_s));
        }
        if !(self.spike_width_ms.is_finite() && self.spike_width_ms > 0.0) {
            return bad(format!("spike width {} ms must be positive", self.spike_width_ms));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad(format!("noise sigma {} must be non-negative", self.noise_sigma));
        }
        if !(self.base_speed.is_finite() && self.base_speed >= 0.0) {
            return bad(format!("base speed {} must be non-negative", self.base_speed));
        }
        if !(self.spike_amplitude.is_finite() && self.yaw_pulse_dps.is_finite()) {
            return bad("amplitudes must be finite".into());
        }
        Ok(())
    }

    fn has_spike(&self) -> bool {
        self.kind.is_event()
    }

    /// Analytic integral of the a_x spike, in m/s.
    pub fn spike_area(&self) -> f64 {
        if self.has_spike() {
            2.0 * self.spike_amplitude * (self.spike_width_ms / 1000.0) / PI
        } else {
            0.0
        }
    }
}

/// Half-cosine pulse of peak `amplitude` and total width `width_s`, centred at `center`.
pub fn half_cosine(t: f64, center: f64, width_s: f64, amplitude: f64) -> f64 {
    let dt = t - center;
    if dt.abs() > width_s / 2.0 {
        0.0
    } else {
        amplitude * (PI * dt / width_s).cos()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub kind: SceClass,
    pub event_time_s: f64,
    pub spike_amplitude: f64,
    pub spike_width_ms: f64,
    pub spike_area: f64,
    pub noise_sigma: f64,
    pub base_speed: f64,
    pub seed: u64,
}

impl GroundTruth {
    pub fn to_record(&self, clip_id: &str, source: Source) -> Record {
        Record::new()
            .with("clip_id", clip_id)
            .with("source", source)
            .with("kind", self.kind)
            .with("event_time_s", self.event_time_s)
            .with("spike_amplitude", self.spike_amplitude)
            .with("spike_width_ms", self.spike_width_ms)
            .with("spike_area", self.spike_area)
            .with("noise_sigma", self.noise_sigma)
            .with("base_speed", self.base_speed)
            .with("seed", self.seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthTrace {
    pub imu: ImuTrace,
    pub gps: GpsTrace,
    pub truth: GroundTruth,
}

/// Noise is drawn per sample in channel order ax, ay, az, gx, gy, gz from a
/// ChaCha8 stream seeded by the profile, so traces are bit-identical per seed.
pub fn synth_trace(profile: &SynthProfile, duration_s: f64) -> Result<SynthTrace, SynthError> {
    profile.validate(duration_s)?;
    let n = (duration_s * IMU_RATE_HZ).round() as usize;
    let width_s = profile.spike_width_ms / 1000.0;
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    let noise = Normal::new(0.0, profile.noise_sigma).map_err(|e| SynthError::InvalidProfile(e.to_string()))?;

    let mut accel = Axes::constant(0.0, n);
    let mut gyro = Axes::constant(0.0, n);
    for i in 0..n {
        if profile.noise_sigma > 0.0 {
            for ch in [
                &mut accel.x,
                &mut accel.y,
                &mut accel.z,
                &mut gyro.x,
                &mut gyro.y,
                &mut gyro.z,
            ] {
                ch[i] = noise.sample(&mut rng);
            }
        }
        let t = i as f64 / IMU_RATE_HZ;
        if profile.has_spike() {
            accel.x[i] += half_cosine(t, profile.event_time_s, width_s, profile.spike_amplitude);
        }
        if profile.kind == SceClass::NearCollision {
            gyro.z[i] += half_cosine(
                t,
                profile.event_time_s,
                DEFAULT_YAW_PULSE_WIDTH_MS / 1000.0,
                profile.yaw_pulse_dps,
            );
        }
    }

    // speed changes linearly across the spike by its integral
    let n_gps = ((duration_s * GPS_RATE_HZ).round() as usize).max(2);
    let area = profile.spike_area();
    let speed = (0..n_gps)
        .map(|j| {
            let t = j as f64 / GPS_RATE_HZ;
            let ramp = ((t - (profile.event_time_s - width_s / 2.0)) / width_s).clamp(0.0, 1.0);
            (profile.base_speed + area * ramp).max(0.0)
        })
        .collect();

    Ok(SynthTrace {
        imu: ImuTrace::new(accel, gyro, 0.0)?,
        gps: GpsTrace::new(speed, 0.0)?,
        truth: GroundTruth {
            kind: profile.kind,
            event_time_s: profile.event_time_s,
            spike_amplitude: if profile.has_spike() {
                profile.spike_amplitude
            } else {
                0.0
            },
            spike_width_ms: profile.spike_width_ms,
            spike_area: area,
            noise_sigma: profile.noise_sigma,
            base_speed: profile.base_speed,
            seed: profile.seed,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KindChoice {
    Fixed(SceClass),
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceChoice {
    Fixed(Source),
    Mixed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub n: usize,
    pub kind: KindChoice,
    pub source: SourceChoice,
    pub seed: u64,
    pub duration_s: f64,
    pub noise_sigma: f64,
}

impl CorpusSpec {
    pub fn new(n: usize, seed: u64) -> Self {
        Self {
            n,
            kind: KindChoice::Mixed,
            source: SourceChoice::Mixed,
            seed,
            duration_s: DEFAULT_DURATION_S,
            noise_sigma: 0.05,
        }
    }
}

pub const CORPUS_MANIFEST: &str = "manifest.records";
pub const CORPUS_GROUND_TRUTH: &str = "ground_truth.records";

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusClip {
    pub manifest: ClipManifest,
    pub truth: GroundTruth,
    pub semantic: SemanticMetadata,
    /// `None` for video-only sources.
    pub trace: Option<SynthTrace>,
}

fn pick<T: Copy>(rng: &mut ChaCha8Rng, items: &[T]) -> T {
    items[rng.random_range(0..items.len())]
}

fn synth_semantic(rng: &mut ChaCha8Rng, kind: SceClass) -> SemanticMetadata {
    const CLASSES: [&str; 4] = ["car", "truck", "pedestrian", "cyclist"];
    let mut detections = Vec::new();
    for track in 0..rng.random_range(1..4u64) {
        let class = pick(rng, &CLASSES);
        let (x, y) = (rng.random_range(0.05..0.6), rng.random_range(0.2..0.6));
        let (w, h) = (rng.random_range(0.05..0.3), rng.random_range(0.05..0.3));
        let first = rng.random_range(1..=MAX_FRAME_ORDINAL);
        for k in first..=MAX_FRAME_ORDINAL.min(first + rng.random_range(2..10)) {
            let drift = (k - first) as f64 * 0.005;
            detections.push(Detection {
                k,
                class: class.to_string(),
                bbox: BBox::new(x + drift, y, x + drift + w, y + h).expect("box inside the unit square"),
                track_id: Some(track + 1),
            });
        }
    }
    SemanticMetadata {
        crash_detected: kind == SceClass::Collision,
        maneuver: match kind {
            SceClass::Collision => Some(Maneuver::HardBrake),
            SceClass::NearCollision if rng.random_bool(0.5) => Some(Maneuver::Swerve),
            SceClass::NearCollision => Some(Maneuver::HardBrake),
            SceClass::Normal => Some(Maneuver::None),
        },
        traffic_light_violation: false,
        stop_sign_severity: None,
        detections,
    }
}

/// Generates `spec.n` clips in memory. Event times lie on the 10 ms sample grid.
pub fn synth_corpus(spec: &CorpusSpec) -> Result<Vec<CorpusClip>, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut clips = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let kind = match spec.kind {
            KindChoice::Fixed(k) => k,
            KindChoice::Mixed => pick(&mut rng, &SceClass::ALL),
        };
        let source = match spec.source {
            SourceChoice::Fixed(s) => s,
            SourceChoice::Mixed => pick(&mut rng, &Source::ALL),
        };
        let lo = (4.5f64).min(spec.duration_s / 2.0);
        let hi = (spec.duration_s - 2.5).max(lo);
        let ticks = rng.random_range((lo * 100.0).round() as u64..=(hi * 100.0).round() as u64);
        let event_time_s = ticks as f64 / 100.0;
        let mut profile = SynthProfile::new(kind, event_time_s, rng.random());
        profile.noise_sigma = spec.noise_sigma;
        profile.base_speed = rng.random_range(6.0..20.0);
        profile.spike_amplitude = match kind {
            SceClass::Collision => -rng.random_range(8.0..15.0),
            SceClass::NearCollision => -rng.random_range(5.0..7.0),
            SceClass::Normal => 0.0,
        };
        let semantic = synth_semantic(&mut rng, kind);
        let trace = synth_trace(&profile, spec.duration_s)?;

        let clip_id = format!("{source}-{i:04}");
        let has_imu = source != Source::Nexar;
        let manifest = ClipManifest {
            clip_id: clip_id.clone(),
            source,
            duration_s: spec.duration_s,
            fps: 30.0,
            width: 1280,
            height: 720,
            frame_path_pattern: format!("frames/{clip_id}/{{index:05}}.jpg"),
            imu_path: has_imu.then(|| PathBuf::from(format!("imu/{clip_id}.csv"))),
            gps_path: has_imu.then(|| PathBuf::from(format!("gps/{clip_id}.csv"))),
            semantic_path: Some(PathBuf::from(format!("semantic/{clip_id}.records"))),
            event_time_s: (!has_imu).then_some(event_time_s),
        };
        clips.push(CorpusClip {
            manifest,
            truth: trace.truth.clone(),
            semantic,
            trace: has_imu.then_some(trace),
        });
    }
    Ok(clips)
}

/// Writes CSV traces, semantic files, the manifest and the ground-truth records under `out_dir`.
pub fn write_corpus(clips: &[CorpusClip], out_dir: &Path) -> Result<(), SynthError> {
    for sub in ["imu", "gps", "semantic"] {
        let dir = out_dir.join(sub);
        fs::create_dir_all(&dir).map_err(|source| SynthError::Io { path: dir, source })?;
    }
    for clip in clips {
        let m = &clip.manifest;
        if let (Some(trace), Some(imu), Some(gps)) = (&clip.trace, &m.imu_path, &m.gps_path) {
            write_imu_trace(&out_dir.join(imu), &trace.imu)?;
            write_gps_trace(&out_dir.join(gps), &trace.gps)?;
        }
        if let Some(sem) = &m.semantic_path {
            write_semantic_metadata(&out_dir.join(sem), &clip.semantic)?;
        }
    }
    let manifests: Vec<ClipManifest> = clips.iter().map(|c| c.manifest.clone()).collect();
    write_manifest(&out_dir.join(CORPUS_MANIFEST), &manifests)?;
    let truth: Vec<Record> = clips
        .iter()
        .map(|c| c.truth.to_record(&c.manifest.clip_id, c.manifest.source))
        .collect();
    write_records(&out_dir.join(CORPUS_GROUND_TRUTH), &truth)?;
    Ok(())
}
