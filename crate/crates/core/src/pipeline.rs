//! File-to-file pipeline stages. Each stage reads explicit inputs, writes
//! deterministic outputs sorted by clip id, and reports per-clip failures
//! instead of aborting the batch.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::{write_dataset, ClipFailure, DatasetBuilder, DatasetError, RunReport, TrainingManifest};
use crate::eval::{self, EvalError, EvalReport};
use crate::prompt::{PromptBuilder, PromptError};
use crate::records::{read_typed, write_records, Record, RecordError};
use crate::semantic::{load_semantic_metadata, SemanticMetadata};
use crate::sync::{build_synced_sequence, build_video_sequence, SyncConfig, SyncError, SyncedSequence};
use crate::teacher::{parse_annotations, ClientConfig, TeacherAnnotation, TeacherClient, TeacherRequest, Transport};
use crate::telemetry::{load_gps_trace, load_imu_trace, load_manifest, ClipManifest, TelemetryError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error(transparent)]
    Sync(#[from] SyncError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot build worker pool: {0}")]
    Pool(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn base_dir(manifest_path: &Path) -> &Path {
    manifest_path.parent().unwrap_or(Path::new("."))
}

fn with_pool<R: Send>(jobs: usize, f: impl FnOnce() -> R + Send) -> Result<R, PipelineError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| PipelineError::Pool(e.to_string()))?;
    Ok(pool.install(f))
}

/// Telemetry needs both IMU and GPS; clips with neither are video-only.
pub fn sync_clip(clip: &ClipManifest, base: &Path, cfg: &SyncConfig) -> Result<SyncedSequence, String> {
    match (&clip.imu_path, &clip.gps_path) {
        (Some(imu), Some(gps)) => {
            let imu = load_imu_trace(&base.join(imu)).map_err(|e| e.to_string())?;
            let gps = load_gps_trace(&base.join(gps)).map_err(|e| e.to_string())?;
            build_synced_sequence(&imu, &gps, clip, cfg).map_err(|e| e.to_string())
        }
        (None, None) => build_video_sequence(clip, cfg).map_err(|e| e.to_string()),
        _ => Err(SyncError::IncompleteTelemetry(clip.clip_id.clone()).to_string()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyncOutcome {
    pub sequences: Vec<SyncedSequence>,
    pub failures: Vec<ClipFailure>,
}

pub fn sync_manifest(manifest_path: &Path, cfg: &SyncConfig, jobs: usize) -> Result<SyncOutcome, PipelineError> {
    cfg.validate()?;
    let clips = load_manifest(manifest_path)?;
    let base = base_dir(manifest_path);
    let results: Vec<(String, Result<SyncedSequence, String>)> = with_pool(jobs, || {
        clips
            .par_iter()
            .map(|c| (c.clip_id.clone(), sync_clip(c, base, cfg)))
            .collect()
    })?;
    let mut sequences = Vec::new();
    let mut failures = Vec::new();
    for (clip_id, r) in results {
        match r {
            Ok(s) => sequences.push(s),
            Err(reason) => failures.push(ClipFailure { clip_id, reason }),
        }
    }
    sequences.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    failures.sort();
    Ok(SyncOutcome { sequences, failures })
}

pub fn write_sync_records(path: &Path, sequences: &[SyncedSequence]) -> Result<(), PipelineError> {
    let records: Vec<Record> = sequences.iter().map(SyncedSequence::to_record).collect();
    write_records(path, &records)?;
    Ok(())
}

pub fn load_sync_records(path: &Path) -> Result<Vec<SyncedSequence>, PipelineError> {
    Ok(read_typed(path, SyncedSequence::from_record)?)
}

/// One `<clip_id>.txt` table per sequence.
pub fn write_sync_tables(dir: &Path, sequences: &[SyncedSequence]) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for s in sequences {
        let path = dir.join(format!("{}.txt", s.clip_id));
        fs::write(&path, s.render_table()).map_err(io_err(&path))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnnotationStatus {
    Ok,
    Failed,
}

impl AnnotationStatus {
    fn as_str(self) -> &'static str {
        match self {
            AnnotationStatus::Ok => "ok",
            AnnotationStatus::Failed => "failed",
        }
    }
}

/// One line of the annotations file. `raw_response` is kept for audit even when
/// parsing failed; `status` is `ok` only for responses that parsed.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationEntry {
    pub clip_id: String,
    pub status: AnnotationStatus,
    pub attempts: u32,
    pub error: Option<String>,
    pub run_seed: u64,
    pub template_version: String,
    pub raw_response: Option<String>,
}

impl AnnotationEntry {
    pub fn to_record(&self) -> Record {
        Record::new()
            .with("clip_id", &self.clip_id)
            .with("status", self.status.as_str())
            .with("attempts", self.attempts)
            .with_opt("error", self.error.as_deref())
            .with("run_seed", self.run_seed)
            .with("template_version", &self.template_version)
            .with_opt("raw_response", self.raw_response.as_deref())
    }

    pub fn from_record(r: &Record) -> Result<Self, RecordError> {
        let status = match r.require("status")? {
            "ok" => AnnotationStatus::Ok,
            "failed" => AnnotationStatus::Failed,
            other => return Err(RecordError::bad_value("status", other, "expected ok|failed")),
        };
        Ok(Self {
            clip_id: r.require("clip_id")?.to_string(),
            status,
            attempts: r.parse("attempts")?,
            error: r.parse_opt("error")?,
            run_seed: r.parse("run_seed")?,
            template_version: r.require("template_version")?.to_string(),
            raw_response: r.parse_opt("raw_response")?,
        })
    }

    pub fn annotation(&self) -> Result<TeacherAnnotation, String> {
        match (&self.status, &self.raw_response) {
            (AnnotationStatus::Ok, Some(raw)) => parse_annotations(raw, &self.clip_id).map_err(|e| e.to_string()),
            _ => Err(format!(
                "annotation failed: {}",
                self.error.as_deref().unwrap_or("no response recorded")
            )),
        }
    }
}

pub fn load_annotations(path: &Path) -> Result<Vec<AnnotationEntry>, PipelineError> {
    Ok(read_typed(path, AnnotationEntry::from_record)?)
}

pub struct AnnotateOptions<'a> {
    pub prompts: &'a PromptBuilder,
    pub client: ClientConfig,
    pub run_seed: u64,
    pub retry_failed: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AnnotateSummary {
    pub requested: usize,
    pub succeeded: usize,
    pub failed: usize,
    /// Clips whose existing entry was kept without a request.
    pub reused: usize,
    /// Failed entries in the written file, including reused ones.
    pub failed_total: usize,
}

fn load_semantic(clip: Option<&ClipManifest>, base: &Path) -> Result<SemanticMetadata, String> {
    match clip.and_then(|c| c.semantic_path.as_ref()) {
        Some(p) => load_semantic_metadata(&base.join(p)).map_err(|e| e.to_string()),
        None => Ok(SemanticMetadata::default()),
    }
}

/// Annotates every synced clip. Existing `ok` entries in `out_path` are reused;
/// existing failures are reused too unless `retry_failed` is set.
pub fn annotate<T: Transport>(
    manifest_path: &Path,
    sync_path: &Path,
    out_path: &Path,
    transport: T,
    opts: &AnnotateOptions<'_>,
) -> Result<AnnotateSummary, PipelineError> {
    let manifest: BTreeMap<String, ClipManifest> = load_manifest(manifest_path)?
        .into_iter()
        .map(|c| (c.clip_id.clone(), c))
        .collect();
    let base = base_dir(manifest_path);
    let sequences = load_sync_records(sync_path)?;
    let mut existing: BTreeMap<String, AnnotationEntry> = if out_path.exists() {
        load_annotations(out_path)?
            .into_iter()
            .map(|e| (e.clip_id.clone(), e))
            .collect()
    } else {
        BTreeMap::new()
    };

    let template_version = opts.prompts.template_version().to_string();
    let failed_entry = |clip_id: &str, attempts: u32, error: String, raw: Option<String>| AnnotationEntry {
        clip_id: clip_id.to_string(),
        status: AnnotationStatus::Failed,
        attempts,
        error: Some(error),
        run_seed: opts.run_seed,
        template_version: template_version.clone(),
        raw_response: raw,
    };

    let mut summary = AnnotateSummary::default();
    let mut entries: BTreeMap<String, AnnotationEntry> = BTreeMap::new();
    let mut requests = Vec::new();
    for seq in &sequences {
        if let Some(prev) = existing.remove(&seq.clip_id) {
            if prev.status == AnnotationStatus::Ok || !opts.retry_failed {
                summary.reused += 1;
                entries.insert(seq.clip_id.clone(), prev);
                continue;
            }
        }
        let clip = manifest.get(&seq.clip_id);
        let bundle = load_semantic(clip, base)
            .and_then(|meta| opts.prompts.build_bundle(seq, &meta, true).map_err(|e| e.to_string()));
        match bundle {
            Ok(bundle) => {
                let frame_images = seq
                    .frames
                    .iter()
                    .map(|f| match clip {
                        Some(c) => base.join(c.frame_path(f.raw_frame_index)).display().to_string(),
                        None => String::new(),
                    })
                    .collect();
                requests.push(TeacherRequest {
                    clip_id: seq.clip_id.clone(),
                    bundle,
                    frame_images,
                });
            }
            Err(e) => {
                summary.failed += 1;
                entries.insert(
                    seq.clip_id.clone(),
                    failed_entry(&seq.clip_id, 0, format!("Prompt: {e}"), None),
                );
            }
        }
    }

    summary.requested = requests.len();
    let client = TeacherClient::new(transport, opts.client.clone());
    for (req, result) in requests.iter().zip(client.annotate_batch(&requests)) {
        let entry = match result {
            Ok(out) => match parse_annotations(&out.response, &req.clip_id) {
                Ok(_) => {
                    summary.succeeded += 1;
                    AnnotationEntry {
                        clip_id: req.clip_id.clone(),
                        status: AnnotationStatus::Ok,
                        attempts: out.attempts,
                        error: None,
                        run_seed: opts.run_seed,
                        template_version: template_version.clone(),
                        raw_response: Some(out.response),
                    }
                }
                Err(e) => {
                    summary.failed += 1;
                    failed_entry(
                        &req.clip_id,
                        out.attempts,
                        format!("{}: {e}", e.kind()),
                        Some(out.response),
                    )
                }
            },
            Err(e) => {
                summary.failed += 1;
                failed_entry(&req.clip_id, e.attempts(), format!("{}: {e}", e.kind()), None)
            }
        };
        entries.insert(req.clip_id.clone(), entry);
    }

    summary.failed_total = entries
        .values()
        .filter(|e| e.status == AnnotationStatus::Failed)
        .count();
    let records: Vec<Record> = entries.values().map(AnnotationEntry::to_record).collect();
    write_records(out_path, &records)?;
    Ok(summary)
}

/// Pairs every manifest clip with its sync record and parsed annotation; clips
/// missing either become failures.
pub fn build_dataset(
    manifest_path: &Path,
    sync_path: &Path,
    annotations_path: &Path,
    out_dir: &Path,
    builder: &DatasetBuilder,
) -> Result<RunReport, PipelineError> {
    let clips = load_manifest(manifest_path)?;
    let mut sequences: BTreeMap<String, SyncedSequence> = load_sync_records(sync_path)?
        .into_iter()
        .map(|s| (s.clip_id.clone(), s))
        .collect();
    let mut annotations: BTreeMap<String, AnnotationEntry> = load_annotations(annotations_path)?
        .into_iter()
        .map(|e| (e.clip_id.clone(), e))
        .collect();

    let mut pairs = Vec::new();
    let mut failures = Vec::new();
    let mut ids: Vec<&str> = clips.iter().map(|c| c.clip_id.as_str()).collect();
    ids.sort_unstable();
    for id in ids {
        let fail = |reason: String| ClipFailure {
            clip_id: id.to_string(),
            reason,
        };
        let Some(seq) = sequences.remove(id) else {
            failures.push(fail("no sync record".into()));
            continue;
        };
        let Some(entry) = annotations.remove(id) else {
            failures.push(fail("not annotated".into()));
            continue;
        };
        match entry.annotation() {
            Ok(a) => pairs.push((a, seq)),
            Err(reason) => failures.push(fail(reason)),
        }
    }
    let run = builder.build(&pairs, failures)?;
    write_dataset(&run, &builder.manifest_record(&TrainingManifest::default()), out_dir)?;
    Ok(run.report)
}

/// Scores predictions against reference rows and writes both report files into `out_dir`.
pub fn evaluate_files(
    references: &[&Path],
    predictions: &Path,
    bertscore: Option<&Path>,
    out_dir: &Path,
) -> Result<EvalReport, PipelineError> {
    let refs = eval::load_references(references)?;
    let preds = eval::load_predictions(predictions)?;
    let rows = eval::join_predictions(&refs, &preds)?;
    let bert = match bertscore {
        Some(p) => eval::load_bertscores(p)?,
        None => BTreeMap::new(),
    };
    let mut seeds: Vec<u64> = refs.iter().map(|r| r.run_seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let report = eval::evaluate(&rows, &bert, seeds)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let text = out_dir.join(eval::REPORT_TEXT_FILE);
    fs::write(&text, report.render_text()).map_err(io_err(&text))?;
    write_records(&out_dir.join(eval::REPORT_RECORDS_FILE), &report.to_records())?;
    Ok(report)
}
