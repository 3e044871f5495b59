//! Training examples, IMU drop-out, clip-keyed splits and dataset run output.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::prompt::{flatten_segments, PromptBuilder};
use crate::records::{join_list, write_records, Record, RecordError};
use crate::sync::{FrameTelemetry, SyncedSequence};
use crate::teacher::{QaKind, TeacherAnnotation};
use crate::telemetry::{SceClass, Source};

/// Probability that a clip's telemetry is withheld from student prompts.
pub const IMU_DROPOUT_PROBABILITY: f64 = 0.5;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("split ratios {0} must be non-negative and sum to 1")]
    BadRatios(String),
    #[error("duplicate example id {0}")]
    DuplicateExampleId(String),
    #[error("annotation for {annotation} paired with sync record for {sequence}")]
    ClipMismatch { annotation: String, sequence: String },
    #[error("source keep probability {0} outside [0, 1]")]
    BadKeepProbability(f64),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Record(#[from] RecordError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Split::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| format!("unknown split {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    Caption,
    OpenQa,
    ClosedQa,
    SceCls,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Caption, Task::OpenQa, Task::ClosedQa, Task::SceCls];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Caption => "caption",
            Task::OpenQa => "open_qa",
            Task::ClosedQa => "closed_qa",
            Task::SceCls => "sce_cls",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Task::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| format!("unknown task {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.90,
            val: 0.05,
            test: 0.05,
        }
    }
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self, DatasetError> {
        let r = Self { train, val, test };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let parts = [self.train, self.val, self.test];
        let ok = parts.iter().all(|p| p.is_finite() && *p >= 0.0) && (parts.iter().sum::<f64>() - 1.0).abs() <= 1e-9;
        if ok {
            Ok(())
        } else {
            Err(DatasetError::BadRatios(self.to_string()))
        }
    }
}

impl fmt::Display for SplitRatios {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.train, self.val, self.test)
    }
}

/// `train,val,test`, e.g. `0.9,0.05,0.05`.
impl FromStr for SplitRatios {
    type Err = DatasetError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || DatasetError::BadRatios(s.to_string());
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_, _>>()?;
        match parts[..] {
            [train, val, test] => SplitRatios::new(train, val, test).map_err(|_| bad()),
            _ => Err(bad()),
        }
    }
}

fn hash64(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    let digest = h.finalize();
    u64::from_be_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

fn unit_interval(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Bernoulli(0.5) keyed on (run_seed, clip_id); independent of iteration order and platform.
pub fn imu_dropout_decision(run_seed: u64, clip_id: &str) -> bool {
    hash64(&[b"dropout:", &run_seed.to_le_bytes(), clip_id.as_bytes()]) < 1u64 << 63
}

/// Split depends on the clip id alone so every example of a clip lands together.
pub fn assign_split(clip_id: &str, ratios: &SplitRatios) -> Result<Split, DatasetError> {
    ratios.validate()?;
    let u = unit_interval(hash64(&[b"split:", clip_id.as_bytes()]));
    Ok(if u < ratios.train {
        Split::Train
    } else if u < ratios.train + ratios.val {
        Split::Val
    } else {
        Split::Test
    })
}

fn keep_for_mixing(run_seed: u64, clip_id: &str, keep_probability: f64) -> bool {
    keep_probability >= 1.0
        || unit_interval(hash64(&[b"keep:", &run_seed.to_le_bytes(), clip_id.as_bytes()])) < keep_probability
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub example_id: String,
    pub clip_id: String,
    pub source: Source,
    pub split: Split,
    pub task: Task,
    pub run_seed: u64,
    pub template_version: String,
    pub sce_label: SceClass,
    pub frame_indices: Vec<usize>,
    pub telemetry: Option<Vec<FrameTelemetry>>,
    pub prompt_text: String,
    pub target_text: String,
}

impl TrainingExample {
    pub fn to_record(&self) -> Record {
        let tel = self.telemetry.as_deref().unwrap_or_default();
        let col = |f: fn(&FrameTelemetry) -> f64| join_list(&tel.iter().map(f).collect::<Vec<_>>());
        Record::new()
            .with("example_id", &self.example_id)
            .with("clip_id", &self.clip_id)
            .with("source", self.source)
            .with("split", self.split)
            .with("task", self.task)
            .with("run_seed", self.run_seed)
            .with("template_version", &self.template_version)
            .with("sce_label", self.sce_label)
            .with("frame_indices", join_list(&self.frame_indices))
            .with("telemetry", self.telemetry.is_some())
            .with("ax", col(|t| t.accel[0]))
            .with("ay", col(|t| t.accel[1]))
            .with("az", col(|t| t.accel[2]))
            .with("d_angle_deg", col(|t| t.delta_angle_deg))
            .with("speed_mps", col(|t| t.speed_mps))
            .with("prompt_text", &self.prompt_text)
            .with("target_text", &self.target_text)
    }

    pub fn from_record(r: &Record) -> Result<Self, RecordError> {
        let frame_indices = r.parse_usize_list("frame_indices")?;
        let telemetry = if r.parse_bool("telemetry")? {
            let cols: Vec<Vec<f64>> = ["ax", "ay", "az", "d_angle_deg", "speed_mps"]
                .into_iter()
                .map(|k| r.parse_f64_list(k))
                .collect::<Result<_, _>>()?;
            if let Some(i) = cols.iter().position(|c| c.len() != frame_indices.len()) {
                let key = ["ax", "ay", "az", "d_angle_deg", "speed_mps"][i];
                return Err(RecordError::bad_value(
                    key,
                    r.require(key)?,
                    "length differs from frame_indices",
                ));
            }
            Some(
                (0..frame_indices.len())
                    .map(|i| FrameTelemetry {
                        accel: [cols[0][i], cols[1][i], cols[2][i]],
                        delta_angle_deg: cols[3][i],
                        speed_mps: cols[4][i],
                    })
                    .collect(),
            )
        } else {
            None
        };
        Ok(Self {
            example_id: r.require("example_id")?.to_string(),
            clip_id: r.require("clip_id")?.to_string(),
            source: r.parse("source")?,
            split: r.parse("split")?,
            task: r.parse("task")?,
            run_seed: r.parse("run_seed")?,
            template_version: r.require("template_version")?.to_string(),
            sce_label: r.parse("sce_label")?,
            frame_indices,
            telemetry,
            prompt_text: r.require("prompt_text")?.to_string(),
            target_text: r.require("target_text")?.to_string(),
        })
    }
}

/// Student training hyperparameters, emitted with every dataset run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingManifest {
    pub adapter_method: String,
    pub rank: u32,
    pub alpha: u32,
    pub learning_rate: f64,
    pub batch_size: u32,
    pub image_width: u32,
    pub image_height: u32,
    pub clip_seconds: u32,
    pub fps: u32,
    pub neftune_noise: f64,
    pub frozen: Vec<String>,
    pub student_model_id: String,
}

impl Default for TrainingManifest {
    fn default() -> Self {
        Self {
            adapter_method: "DoRA".into(),
            rank: 32,
            alpha: 64,
            learning_rate: 5e-5,
            batch_size: 32,
            image_width: 420,
            image_height: 240,
            clip_seconds: 6,
            fps: 3,
            neftune_noise: 5.0,
            frozen: vec!["vision_encoder".into(), "projection".into()],
            student_model_id: "Qwen2.5-VL-7B-Instruct".into(),
        }
    }
}

impl TrainingManifest {
    pub fn to_record(&self) -> Record {
        Record::new()
            .with("adapter_method", &self.adapter_method)
            .with("rank", self.rank)
            .with("alpha", self.alpha)
            .with("learning_rate", self.learning_rate)
            .with("batch_size", self.batch_size)
            .with(
                "image_resolution",
                format!("{}x{}", self.image_width, self.image_height),
            )
            .with("clip_seconds", self.clip_seconds)
            .with("fps", self.fps)
            .with("neftune_noise", self.neftune_noise)
            .with("frozen", self.frozen.join(","))
            .with("student_model_id", &self.student_model_id)
    }
}

/// A clip that produced no examples, with a one-line reason.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct ClipFailure {
    pub clip_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub run_seed: u64,
    pub template_version: String,
    pub clips_built: usize,
    pub clips_excluded: usize,
    pub dropout_clips: usize,
    pub telemetry_free_clips: usize,
    pub counts: BTreeMap<(Split, Source, Task), usize>,
    pub failures: Vec<ClipFailure>,
}

impl RunReport {
    pub fn total_examples(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn dropout_rate(&self) -> f64 {
        if self.clips_built == 0 {
            0.0
        } else {
            self.dropout_clips as f64 / self.clips_built as f64
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::from("dataset run report\n");
        out.push_str(&format!("run_seed: {}\n", self.run_seed));
        out.push_str(&format!("template_version: {}\n", self.template_version));
        out.push_str(&format!(
            "clips: {} built, {} failed, {} excluded by source mixing\n",
            self.clips_built,
            self.failures.len(),
            self.clips_excluded
        ));
        out.push_str(&format!(
            "imu dropout: {} of {} clips ({:.4})\n",
            self.dropout_clips,
            self.clips_built,
            self.dropout_rate()
        ));
        out.push_str(&format!("telemetry-free clips: {}\n", self.telemetry_free_clips));
        out.push_str(&format!("examples: {}\n\n", self.total_examples()));

        let header: Vec<&str> = Task::ALL.iter().map(|t| t.as_str()).collect();
        out.push_str(&format!(
            "{:<6} {:<8} {:>8} {:>8} {:>9} {:>8} {:>8}\n",
            "split", "source", header[0], header[1], header[2], header[3], "total"
        ));
        for split in Split::ALL {
            for source in Source::ALL {
                let row: Vec<usize> = Task::ALL
                    .iter()
                    .map(|&t| self.counts.get(&(split, source, t)).copied().unwrap_or(0))
                    .collect();
                out.push_str(&format!(
                    "{:<6} {:<8} {:>8} {:>8} {:>9} {:>8} {:>8}\n",
                    split.as_str(),
                    source.as_str(),
                    row[0],
                    row[1],
                    row[2],
                    row[3],
                    row.iter().sum::<usize>()
                ));
            }
        }
        out.push_str("\nfailures:\n");
        if self.failures.is_empty() {
            out.push_str("  none\n");
        }
        for f in &self.failures {
            out.push_str(&format!("  {}: {}\n", f.clip_id, f.reason));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRun {
    /// Sorted by example id.
    pub examples: Vec<TrainingExample>,
    pub report: RunReport,
}

pub struct DatasetBuilder {
    prompts: PromptBuilder,
    run_seed: u64,
    ratios: SplitRatios,
    force_dropout: bool,
    source_keep: BTreeMap<Source, f64>,
}

impl DatasetBuilder {
    pub fn new(run_seed: u64) -> Self {
        Self {
            prompts: PromptBuilder::default(),
            run_seed,
            ratios: SplitRatios::default(),
            force_dropout: false,
            source_keep: BTreeMap::new(),
        }
    }

    pub fn with_prompts(mut self, prompts: PromptBuilder) -> Self {
        self.prompts = prompts;
        self
    }

    pub fn with_ratios(mut self, ratios: SplitRatios) -> Result<Self, DatasetError> {
        ratios.validate()?;
        self.ratios = ratios;
        Ok(self)
    }

    /// Withholds telemetry from every example regardless of the drop-out draw.
    pub fn force_imu_dropout(mut self, force: bool) -> Self {
        self.force_dropout = force;
        self
    }

    /// Keeps each clip of `source` with probability `p`, keyed on (run_seed, clip_id).
    pub fn with_source_keep(mut self, source: Source, p: f64) -> Result<Self, DatasetError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(DatasetError::BadKeepProbability(p));
        }
        self.source_keep.insert(source, p);
        Ok(self)
    }

    pub fn run_seed(&self) -> u64 {
        self.run_seed
    }

    pub fn dropout_decision(&self, clip_id: &str) -> bool {
        self.force_dropout || imu_dropout_decision(self.run_seed, clip_id)
    }

    /// One caption example, one per QA pair and one classification example.
    /// Telemetry is kept only when not dropped, present, and the source is not video-only.
    pub fn build_examples(
        &self,
        annotation: &TeacherAnnotation,
        seq: &SyncedSequence,
        drop_imu: bool,
    ) -> Result<Vec<TrainingExample>, DatasetError> {
        if annotation.clip_id != seq.clip_id {
            return Err(DatasetError::ClipMismatch {
                annotation: annotation.clip_id.clone(),
                sequence: seq.clip_id.clone(),
            });
        }
        let include_imu = !drop_imu && seq.has_telemetry() && seq.source != Source::Nexar;
        let split = assign_split(&seq.clip_id, &self.ratios)?;
        let telemetry = include_imu.then(|| seq.frames.iter().filter_map(|f| f.telemetry).collect::<Vec<_>>());
        let frame_indices: Vec<usize> = seq.frames.iter().map(|f| f.raw_frame_index).collect();
        let prompt =
            |instruction: &str| flatten_segments(&self.prompts.render_student_prompt(instruction, seq, include_imu));
        let templates = self.prompts.templates();
        let make = |task: Task, idx: usize, prompt_text: String, target_text: String| TrainingExample {
            example_id: format!("{}:{}:{}", seq.clip_id, task, idx),
            clip_id: seq.clip_id.clone(),
            source: seq.source,
            split,
            task,
            run_seed: self.run_seed,
            template_version: self.prompts.template_version().to_string(),
            sce_label: annotation.sce_label,
            frame_indices: frame_indices.clone(),
            telemetry: telemetry.clone(),
            prompt_text,
            target_text,
        };

        let mut out = vec![make(
            Task::Caption,
            0,
            prompt(&templates.student_caption),
            annotation.caption.clone(),
        )];
        for (i, pair) in annotation.qa.iter().enumerate() {
            let task = match pair.kind {
                QaKind::Open => Task::OpenQa,
                QaKind::Closed => Task::ClosedQa,
            };
            out.push(make(task, i, prompt(&pair.question), pair.answer.clone()));
        }
        out.push(make(
            Task::SceCls,
            0,
            prompt(&templates.student_sce),
            annotation.sce_label.as_str().to_string(),
        ));
        Ok(out)
    }

    /// Builds every clip in parallel and assembles the sorted run.
    pub fn build(
        &self,
        clips: &[(TeacherAnnotation, SyncedSequence)],
        mut failures: Vec<ClipFailure>,
    ) -> Result<DatasetRun, DatasetError> {
        let kept: Vec<&(TeacherAnnotation, SyncedSequence)> = clips
            .iter()
            .filter(|(_, seq)| {
                let p = self.source_keep.get(&seq.source).copied().unwrap_or(1.0);
                keep_for_mixing(self.run_seed, &seq.clip_id, p)
            })
            .collect();
        let built: Vec<(bool, Vec<TrainingExample>)> = kept
            .par_iter()
            .map(|(annotation, seq)| {
                let drop = self.dropout_decision(&seq.clip_id);
                self.build_examples(annotation, seq, drop).map(|ex| (drop, ex))
            })
            .collect::<Result<_, _>>()?;

        let mut examples: Vec<TrainingExample> = Vec::new();
        let mut dropout_clips = 0;
        let mut telemetry_free_clips = 0;
        for (drop, ex) in built {
            dropout_clips += usize::from(drop);
            telemetry_free_clips += usize::from(ex.first().is_some_and(|e| e.telemetry.is_none()));
            examples.extend(ex);
        }
        examples.sort_by(|a, b| a.example_id.cmp(&b.example_id));
        check_unique(&examples)?;

        let mut counts = BTreeMap::new();
        for e in &examples {
            *counts.entry((e.split, e.source, e.task)).or_insert(0) += 1;
        }
        failures.sort();
        Ok(DatasetRun {
            report: RunReport {
                run_seed: self.run_seed,
                template_version: self.prompts.template_version().to_string(),
                clips_built: kept.len(),
                clips_excluded: clips.len() - kept.len(),
                dropout_clips,
                telemetry_free_clips,
                counts,
                failures,
            },
            examples,
        })
    }

    pub fn manifest_record(&self, manifest: &TrainingManifest) -> Record {
        let mut r = manifest.to_record();
        r.push("run_seed", self.run_seed);
        r.push("template_version", self.prompts.template_version());
        r.push("split_ratios", self.ratios);
        r.push("imu_dropout_probability", IMU_DROPOUT_PROBABILITY);
        r.push("imu_dropout_forced", self.force_dropout);
        r
    }
}

fn check_unique(examples: &[TrainingExample]) -> Result<(), DatasetError> {
    let mut seen = BTreeSet::new();
    for e in examples {
        if !seen.insert(e.example_id.as_str()) {
            return Err(DatasetError::DuplicateExampleId(e.example_id.clone()));
        }
    }
    Ok(())
}

pub const TRAIN_FILE: &str = "train.records";
pub const VAL_FILE: &str = "val.records";
pub const MANIFEST_FILE: &str = "manifest.records";
pub const REPORT_FILE: &str = "report.txt";

pub fn test_file_name(source: Source) -> String {
    format!("test.{source}.records")
}

/// Writes split files (test bucketed per source), the manifest and the report.
/// Every file is written even when empty.
pub fn write_dataset(run: &DatasetRun, manifest: &Record, out_dir: &Path) -> Result<(), DatasetError> {
    check_unique(&run.examples)?;
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| DatasetError::Io { path, source }
    };
    fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let rows = |pred: &dyn Fn(&TrainingExample) -> bool| {
        run.examples
            .iter()
            .filter(|e| pred(e))
            .map(TrainingExample::to_record)
            .collect::<Vec<_>>()
    };

    write_records(&out_dir.join(TRAIN_FILE), &rows(&|e| e.split == Split::Train))?;
    write_records(&out_dir.join(VAL_FILE), &rows(&|e| e.split == Split::Val))?;
    for source in Source::ALL {
        write_records(
            &out_dir.join(test_file_name(source)),
            &rows(&|e| e.split == Split::Test && e.source == source),
        )?;
    }
    write_records(&out_dir.join(MANIFEST_FILE), [manifest])?;
    let report = out_dir.join(REPORT_FILE);
    fs::write(&report, run.report.render()).map_err(io(&report))?;
    Ok(())
}
