//! Dataset pipeline for safety-critical event (SCE) understanding from dashcam video
//! with synchronized IMU and GPS telemetry.
//!
//! Stages, each usable on its own and chained by the `scepipe` binary:
//!
//! - [`synth`] generates clips with known event times and labels.
//! - [`sync`] detects the event, places the 6 s window and aligns telemetry to 18 frames.
//! - [`semantic`] and [`prompt`] turn a synced clip into a teacher prompt.
//! - [`teacher`] sends prompts to an annotating model and parses its structured reply.
//! - [`dataset`] assembles split, per-task training records with IMU drop-out.
//! - [`eval`] scores predictions with ROUGE-L, closed-QA accuracy and SCE metrics.
//!
//! Every on-disk artifact uses the line-oriented format in [`records`].

pub mod cli;
pub mod dataset;
pub mod eval;
pub mod pipeline;
pub mod prompt;
pub mod records;
pub mod semantic;
pub mod sync;
pub mod synth;
pub mod teacher;
pub mod telemetry;

pub use dataset::{DatasetBuilder, SplitRatios, TrainingExample, TrainingManifest};
pub use eval::{evaluate, EvalReport};
pub use prompt::{PromptBuilder, PromptBundle};
pub use semantic::{SceThresholds, SemanticMetadata};
pub use sync::{build_synced_sequence, SyncConfig, SyncedSequence};
pub use teacher::{parse_annotations, TeacherAnnotation, TeacherClient};
pub use telemetry::{ClipManifest, GpsTrace, ImuTrace, SceClass, Source};
