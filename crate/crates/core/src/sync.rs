//! Event timestamping, event windowing and 100 Hz → 3 fps telemetry alignment.
//!
//! The event time `t_e` is the sample with the largest `|a_x|`. A 6 s window runs from
//! 4 s before to 2 s after it and is sampled at 3 fps, which gives 18 frames. For each
//! frame `k` (1-based) the sensor stream is cut into blocks of `W = ⌊f_s / 3⌋` samples:
//!
//! ```text
//! a_sync[k]  = (1/W) · Σ_{n=(k-1)W+1}^{kW} a_raw[n]
//! Δα_sync[k] = Σ_{n=(k-1)W+1}^{kW} ω_z[n] / f_s
//! ```
//!
//! Blocks are defined by sample index, starting at the sample nearest `t_start`, so the
//! last `600 - 18·33 = 6` samples of a 6 s window are discarded. GPS speed is linearly
//! interpolated at the frame times `t_k = t_start + (k-1)/3`.

use std::fmt::Write as _;

use thiserror::Error;

use crate::records::{join_list, Record, RecordError};
use crate::telemetry::{ClipManifest, GpsTrace, ImuTrace, Source, IMU_RATE_HZ};

#[derive(Debug, Error)]
pub enum SyncError {
    #[error("empty series")]
    EmptySeries,
    #[error("clip is {duration_s}s long, at least {required_s}s are needed")]
    ClipTooShort { duration_s: f64, required_s: f64 },
    #[error("window has {actual} samples, {required} are needed")]
    WindowTooShort { actual: usize, required: usize },
    #[error("GPS trace has {actual} samples, at least 2 are needed")]
    TooFewSamples { actual: usize },
    #[error("invalid sync config: {0}")]
    InvalidConfig(String),
    #[error("clip {0} has IMU or GPS data but not both")]
    IncompleteTelemetry(String),
}

/// Rates and window geometry. Only the defaults (100 Hz → 3 fps, 4 s + 2 s) are validated
/// against the reference pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncConfig {
    pub sensor_rate_hz: f64,
    pub target_fps: f64,
    pub pre_event_s: f64,
    pub post_event_s: f64,
}

impl Default for SyncConfig {
    fn default() -> Self {
        Self {
            sensor_rate_hz: IMU_RATE_HZ,
            target_fps: 3.0,
            pre_event_s: 4.0,
            post_event_s: 2.0,
        }
    }
}

impl SyncConfig {
    /// Samples per frame block, `⌊f_s / target_fps⌋`.
    pub fn block_size(&self) -> usize {
        (self.sensor_rate_hz / self.target_fps).floor() as usize
    }

    pub fn window_s(&self) -> f64 {
        self.pre_event_s + self.post_event_s
    }

    pub fn n_frames(&self) -> usize {
        (self.window_s() * self.target_fps).round() as usize
    }

    /// Sensor samples consumed by the block equations (`n_frames · W`).
    pub fn required_samples(&self) -> usize {
        self.n_frames() * self.block_size()
    }

    pub fn validate(&self) -> Result<(), SyncError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !(positive(self.sensor_rate_hz) && positive(self.target_fps)) {
            return Err(SyncError::InvalidConfig("rates must be positive".into()));
        }
        if !(self.pre_event_s >= 0.0 && self.post_event_s >= 0.0 && positive(self.window_s())) {
            return Err(SyncError::InvalidConfig("window must have positive width".into()));
        }
        if self.block_size() == 0 || self.n_frames() == 0 {
            return Err(SyncError::InvalidConfig("sensor rate must exceed target fps".into()));
        }
        Ok(())
    }
}

/// The aligned 6 s analysis window around an event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventWindow {
    pub t_e: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub n_frames: usize,
    pub target_fps: f64,
}

impl EventWindow {
    /// Time of frame `k` (1-based): the start of its block.
    pub fn frame_time(&self, k: usize) -> f64 {
        self.t_start + (k - 1) as f64 / self.target_fps
    }

    pub fn frame_times(&self) -> Vec<f64> {
        (1..=self.n_frames).map(|k| self.frame_time(k)).collect()
    }

    pub fn width_s(&self) -> f64 {
        self.t_end - self.t_start
    }
}

/// Index of the largest `|x|`, earliest on ties.
pub fn peak_abs_index(series: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in series.iter().enumerate() {
        let mag = v.abs();
        if best.is_none_or(|(_, m)| mag > m) {
            best = Some((i, mag));
        }
    }
    best.map(|(i, _)| i)
}

/// Time of the sample with maximum `|a_x|`, ties broken by the earliest sample.
pub fn detect_event_timestamp(accel_x: &[f64], start_time_s: f64, sample_rate_hz: f64) -> Result<f64, SyncError> {
    let idx = peak_abs_index(accel_x).ok_or(SyncError::EmptySeries)?;
    Ok(start_time_s + idx as f64 / sample_rate_hz)
}

/// Places the `[t_e - pre, t_e + post]` window, sliding it the minimum amount needed to
/// keep it inside `[0, clip_duration]`.
pub fn clamp_event_window(t_e: f64, clip_duration_s: f64, cfg: &SyncConfig) -> Result<EventWindow, SyncError> {
    let width = cfg.window_s();
    if clip_duration_s.is_nan() || clip_duration_s < width {
        return Err(SyncError::ClipTooShort {
            duration_s: clip_duration_s,
            required_s: width,
        });
    }
    let latest_start = clip_duration_s - width;
    let t_start = (t_e - cfg.pre_event_s).clamp(0.0, latest_start);
    Ok(EventWindow {
        t_e,
        t_start,
        t_end: t_start + width,
        n_frames: cfg.n_frames(),
        target_fps: cfg.target_fps,
    })
}

/// Raw video frame index nearest each frame time, clamped into the clip.
pub fn select_frame_indices(window: &EventWindow, raw_fps: f64, total_frames: usize) -> Vec<usize> {
    let last = total_frames.saturating_sub(1) as f64;
    (1..=window.n_frames)
        .map(|k| (window.frame_time(k) * raw_fps).round().clamp(0.0, last) as usize)
        .collect()
}

/// Neumaier-compensated sum.
fn compensated_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn block_sums(series: &[f64], cfg: &SyncConfig) -> Result<Vec<f64>, SyncError> {
    cfg.validate()?;
    let required = cfg.required_samples();
    if series.len() < required {
        return Err(SyncError::WindowTooShort {
            actual: series.len(),
            required,
        });
    }
    Ok(series[..required]
        .chunks_exact(cfg.block_size())
        .map(compensated_sum)
        .collect())
}

/// Per-axis block means; samples past `n_frames · W` are ignored.
pub fn block_average_accel(x: &[f64], y: &[f64], z: &[f64], cfg: &SyncConfig) -> Result<Vec<[f64; 3]>, SyncError> {
    let w = cfg.block_size() as f64;
    let (sx, sy, sz) = (block_sums(x, cfg)?, block_sums(y, cfg)?, block_sums(z, cfg)?);
    Ok(sx
        .iter()
        .zip(&sy)
        .zip(&sz)
        .map(|((a, b), c)| [a / w, b / w, c / w])
        .collect())
}

/// Per-frame heading change in degrees by rectangular integration of `ω_z` (°/s).
pub fn integrate_gyro_z(omega_z: &[f64], cfg: &SyncConfig) -> Result<Vec<f64>, SyncError> {
    Ok(block_sums(omega_z, cfg)?
        .into_iter()
        .map(|s| s / cfg.sensor_rate_hz)
        .collect())
}

/// Piecewise-linear speed at each query time, holding the endpoint values outside the trace.
pub fn interpolate_speed(gps: &GpsTrace, times: &[f64]) -> Result<Vec<f64>, SyncError> {
    let v = gps.speed();
    if v.len() < 2 {
        return Err(SyncError::TooFewSamples { actual: v.len() });
    }
    let last = (v.len() - 1) as f64;
    Ok(times
        .iter()
        .map(|&t| {
            let u = (t - gps.start_time_s()) * gps.sample_rate_hz();
            if u <= 0.0 {
                v[0]
            } else if u >= last {
                v[v.len() - 1]
            } else {
                let i = u.floor() as usize;
                let frac = u - i as f64;
                v[i] + frac * (v[i + 1] - v[i])
            }
        })
        .collect())
}

/// Telemetry attached to one synchronized frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameTelemetry {
    /// Block-averaged acceleration (x, y, z) in m/s².
    pub accel: [f64; 3],
    /// Heading change since the previous frame, degrees.
    pub delta_angle_deg: f64,
    /// Interpolated GPS speed, m/s.
    pub speed_mps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyncedFrame {
    /// Frame ordinal, 1-based.
    pub k: usize,
    pub t_s: f64,
    pub raw_frame_index: usize,
    /// `None` for video-only clips.
    pub telemetry: Option<FrameTelemetry>,
}

/// The 18 aligned frames of one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncedSequence {
    pub clip_id: String,
    pub source: Source,
    pub window: EventWindow,
    pub frames: Vec<SyncedFrame>,
}

impl SyncedSequence {
    pub fn has_telemetry(&self) -> bool {
        self.frames.iter().all(|f| f.telemetry.is_some()) && !self.frames.is_empty()
    }

    pub fn to_record(&self) -> Record {
        let tel: Vec<FrameTelemetry> = self.frames.iter().filter_map(|f| f.telemetry).collect();
        let col = |f: fn(&FrameTelemetry) -> f64| join_list(&tel.iter().map(f).collect::<Vec<_>>());
        let indices: Vec<usize> = self.frames.iter().map(|f| f.raw_frame_index).collect();
        Record::new()
            .with("clip_id", &self.clip_id)
            .with("source", self.source)
            .with("t_e", self.window.t_e)
            .with("t_start", self.window.t_start)
            .with("t_end", self.window.t_end)
            .with("target_fps", self.window.target_fps)
            .with("n_frames", self.window.n_frames)
            .with("frame_indices", join_list(&indices))
            .with("telemetry", self.has_telemetry())
            .with("ax", col(|t| t.accel[0]))
            .with("ay", col(|t| t.accel[1]))
            .with("az", col(|t| t.accel[2]))
            .with("d_angle_deg", col(|t| t.delta_angle_deg))
            .with("speed_mps", col(|t| t.speed_mps))
    }

    pub fn from_record(r: &Record) -> Result<Self, RecordError> {
        let window = EventWindow {
            t_e: r.parse("t_e")?,
            t_start: r.parse("t_start")?,
            t_end: r.parse("t_end")?,
            n_frames: r.parse("n_frames")?,
            target_fps: r.parse("target_fps")?,
        };
        let indices = r.parse_usize_list("frame_indices")?;
        if indices.len() != window.n_frames {
            return Err(RecordError::bad_value(
                "frame_indices",
                r.require("frame_indices")?,
                format!("expected {} entries", window.n_frames),
            ));
        }
        let telemetry = if r.parse_bool("telemetry")? {
            let cols = ["ax", "ay", "az", "d_angle_deg", "speed_mps"]
                .into_iter()
                .map(|key| {
                    let v = r.parse_f64_list(key)?;
                    if v.len() != window.n_frames {
                        return Err(RecordError::bad_value(key, r.require(key)?, "wrong length"));
                    }
                    Ok(v)
                })
                .collect::<Result<Vec<_>, RecordError>>()?;
            Some(
                (0..window.n_frames)
                    .map(|i| FrameTelemetry {
                        accel: [cols[0][i], cols[1][i], cols[2][i]],
                        delta_angle_deg: cols[3][i],
                        speed_mps: cols[4][i],
                    })
                    .collect::<Vec<_>>(),
            )
        } else {
            None
        };
        let frames = indices
            .into_iter()
            .enumerate()
            .map(|(i, raw)| SyncedFrame {
                k: i + 1,
                t_s: window.frame_time(i + 1),
                raw_frame_index: raw,
                telemetry: telemetry.as_ref().map(|t| t[i]),
            })
            .collect();
        Ok(Self {
            clip_id: r.require("clip_id")?.to_string(),
            source: r.parse("source")?,
            window,
            frames,
        })
    }

    /// Plain-text table of the aligned frames, for debugging.
    pub fn render_table(&self) -> String {
        let w = &self.window;
        let mut out = format!(
            "clip {} ({}): t_e={:.2}s window=[{:.2}, {:.2}]s\n",
            self.clip_id, self.source, w.t_e, w.t_start, w.t_end
        );
        out.push_str("  k     t_s  frame       ax       ay       az   dA_deg    v_mps\n");
        for f in &self.frames {
            let _ = write!(out, "{:>3} {:>7.3} {:>6}", f.k, f.t_s, f.raw_frame_index);
            match f.telemetry {
                Some(t) => {
                    let _ = writeln!(
                        out,
                        " {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>8.3}",
                        t.accel[0], t.accel[1], t.accel[2], t.delta_angle_deg, t.speed_mps
                    );
                }
                None => out.push_str("        -        -        -        -        -\n"),
            }
        }
        out
    }
}

/// Full alignment for a clip with IMU and GPS: detect, window, pick frames, resample.
pub fn build_synced_sequence(
    imu: &ImuTrace,
    gps: &GpsTrace,
    manifest: &ClipManifest,
    cfg: &SyncConfig,
) -> Result<SyncedSequence, SyncError> {
    cfg.validate()?;
    let t_e = detect_event_timestamp(&imu.accel().x, imu.start_time_s(), cfg.sensor_rate_hz)?;
    let window = clamp_event_window(t_e, manifest.duration_s, cfg)?;

    let required = cfg.required_samples();
    let offset = ((window.t_start - imu.start_time_s()) * cfg.sensor_rate_hz).round();
    let available = if offset < 0.0 {
        0
    } else {
        imu.len().saturating_sub(offset as usize)
    };
    if offset < 0.0 || available < required {
        return Err(SyncError::WindowTooShort {
            actual: available,
            required,
        });
    }
    let section = imu
        .section(offset as usize, required)
        .ok_or(SyncError::WindowTooShort {
            actual: available,
            required,
        })?;

    let accel = block_average_accel(&section.accel().x, &section.accel().y, &section.accel().z, cfg)?;
    let dalpha = integrate_gyro_z(&section.gyro().z, cfg)?;
    let times = window.frame_times();
    let speed = interpolate_speed(gps, &times)?;
    let indices = select_frame_indices(&window, manifest.fps, manifest.total_frames());

    let frames = (0..window.n_frames)
        .map(|i| SyncedFrame {
            k: i + 1,
            t_s: times[i],
            raw_frame_index: indices[i],
            telemetry: Some(FrameTelemetry {
                accel: accel[i],
                delta_angle_deg: dalpha[i],
                speed_mps: speed[i],
            }),
        })
        .collect();
    Ok(SyncedSequence {
        clip_id: manifest.clip_id.clone(),
        source: manifest.source,
        window,
        frames,
    })
}

/// Frame selection for a clip without telemetry. The event time comes from the manifest,
/// or the clip midpoint when none is given.
pub fn build_video_sequence(manifest: &ClipManifest, cfg: &SyncConfig) -> Result<SyncedSequence, SyncError> {
    cfg.validate()?;
    let t_e = manifest.event_time_s.unwrap_or(manifest.duration_s / 2.0);
    let window = clamp_event_window(t_e, manifest.duration_s, cfg)?;
    let indices = select_frame_indices(&window, manifest.fps, manifest.total_frames());
    let frames = indices
        .into_iter()
        .enumerate()
        .map(|(i, raw)| SyncedFrame {
            k: i + 1,
            t_s: window.frame_time(i + 1),
            raw_frame_index: raw,
            telemetry: None,
        })
        .collect();
    Ok(SyncedSequence {
        clip_id: manifest.clip_id.clone(),
        source: manifest.source,
        window,
        frames,
    })
}
