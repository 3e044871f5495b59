//! Command-line front end. Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::dataset::{DatasetBuilder, SplitRatios};
use crate::pipeline::{self, AnnotateOptions};
use crate::prompt::{PromptBuilder, PromptTemplates, DEFAULT_QA_PAIRS};
use crate::semantic::SceThresholds;
use crate::sync::SyncConfig;
use crate::synth::{synth_corpus, write_corpus, CorpusSpec, KindChoice, SourceChoice, DEFAULT_DURATION_S};
use crate::teacher::{ClientConfig, EndpointConfig, HttpTransport, MockTeacher};
use crate::telemetry::{SceClass, Source};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "scepipe", version, about = "Dashcam SCE dataset pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus with known event times and labels.
    Synth(SynthArgs),
    /// Align telemetry to the event-centred frame window.
    Sync(SyncArgs),
    /// Request teacher annotations for every synced clip.
    Annotate(AnnotateArgs),
    /// Assemble split training files from synced clips and annotations.
    Build(BuildArgs),
    /// Score predictions against reference rows.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    n: usize,
    /// normal | near-collision | collision | mixed
    #[arg(long, default_value = "mixed", value_parser = parse_kind)]
    kind: KindChoice,
    /// private | bddx | nexar | mixed
    #[arg(long, default_value = "mixed", value_parser = parse_source)]
    source: SourceChoice,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_DURATION_S)]
    duration: f64,
    #[arg(long, default_value_t = 0.05)]
    noise_sigma: f64,
}

#[derive(Debug, Args)]
struct SyncArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write one human-readable table per clip into this directory.
    #[arg(long)]
    tables: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Debug, Args)]
struct AnnotateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    sync: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, conflicts_with = "endpoint", required_unless_present = "endpoint")]
    mock_teacher: bool,
    /// TOML file describing an OpenAI-compatible endpoint.
    #[arg(long)]
    endpoint: Option<PathBuf>,
    #[arg(long)]
    retry_failed: bool,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_QA_PAIRS)]
    qa_pairs: usize,
    /// Mock teacher only.
    #[arg(long)]
    collision_threshold: Option<f64>,
    /// Mock teacher only.
    #[arg(long)]
    near_collision_threshold: Option<f64>,
}

#[derive(Debug, Args)]
struct BuildArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    sync: PathBuf,
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    /// train,val,test
    #[arg(long, default_value = "0.9,0.05,0.05")]
    ratios: SplitRatios,
    /// Drop telemetry from every prompt.
    #[arg(long)]
    no_imu: bool,
    /// Keep probability for Nexar clips.
    #[arg(long)]
    nexar_keep: Option<f64>,
    #[arg(long)]
    templates: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Reference example files (test or val records).
    #[arg(long, required = true, num_args = 1..)]
    references: Vec<PathBuf>,
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    bertscore: Option<PathBuf>,
}

fn parse_kind(s: &str) -> Result<KindChoice, String> {
    match s {
        "mixed" => Ok(KindChoice::Mixed),
        _ => s.parse::<SceClass>().map(KindChoice::Fixed).map_err(|e| e.to_string()),
    }
}

fn parse_source(s: &str) -> Result<SourceChoice, String> {
    match s {
        "mixed" => Ok(SourceChoice::Mixed),
        _ => s.parse::<Source>().map(SourceChoice::Fixed),
    }
}

enum Failure {
    Usage(String),
    Runtime(String),
}

fn runtime<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Runtime(e.to_string())
}

fn usage<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Usage(e.to_string())
}

pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Sync(a) => sync(a),
        Command::Annotate(a) => annotate(a),
        Command::Build(a) => build(a),
        Command::Eval(a) => eval(a),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            EXIT_FAILURE
        }
    }
}

fn prompts(templates: Option<&Path>) -> Result<PromptBuilder, Failure> {
    match templates {
        Some(dir) => Ok(PromptBuilder::new(PromptTemplates::load_dir(dir).map_err(runtime)?)),
        None => Ok(PromptBuilder::default()),
    }
}

fn synth(a: SynthArgs) -> Result<i32, Failure> {
    let spec = CorpusSpec {
        kind: a.kind,
        source: a.source,
        duration_s: a.duration,
        noise_sigma: a.noise_sigma,
        ..CorpusSpec::new(a.n, a.seed)
    };
    let clips = synth_corpus(&spec).map_err(usage)?;
    write_corpus(&clips, &a.out).map_err(runtime)?;
    println!("wrote {} clips to {}", clips.len(), a.out.display());
    Ok(EXIT_OK)
}

fn sync(a: SyncArgs) -> Result<i32, Failure> {
    let outcome = pipeline::sync_manifest(&a.manifest, &SyncConfig::default(), a.jobs).map_err(runtime)?;
    pipeline::write_sync_records(&a.out, &outcome.sequences).map_err(runtime)?;
    if let Some(dir) = &a.tables {
        pipeline::write_sync_tables(dir, &outcome.sequences).map_err(runtime)?;
    }
    for f in &outcome.failures {
        eprintln!("sync failed for {}: {}", f.clip_id, f.reason);
    }
    println!(
        "synced {} clips, {} failed",
        outcome.sequences.len(),
        outcome.failures.len()
    );
    Ok(if outcome.failures.is_empty() {
        EXIT_OK
    } else {
        EXIT_FAILURE
    })
}

fn annotate(a: AnnotateArgs) -> Result<i32, Failure> {
    let prompts = prompts(a.templates.as_deref())?.with_qa_pairs(a.qa_pairs);
    let summary = if let Some(path) = &a.endpoint {
        if a.collision_threshold.is_some() || a.near_collision_threshold.is_some() {
            return Err(usage("thresholds apply to --mock-teacher only"));
        }
        let endpoint = EndpointConfig::load(path).map_err(usage)?;
        let mut client = endpoint.client_config();
        if let Some(j) = a.jobs {
            client.concurrency = j;
        }
        let opts = AnnotateOptions {
            prompts: &prompts,
            client,
            run_seed: a.seed,
            retry_failed: a.retry_failed,
        };
        pipeline::annotate(&a.manifest, &a.sync, &a.out, HttpTransport::new(&endpoint), &opts).map_err(runtime)?
    } else {
        let defaults = SceThresholds::default();
        let thresholds = SceThresholds {
            collision_mps2: a.collision_threshold.unwrap_or(defaults.collision_mps2),
            near_collision_mps2: a.near_collision_threshold.unwrap_or(defaults.near_collision_mps2),
        };
        thresholds.validate().map_err(usage)?;
        let client = ClientConfig {
            concurrency: a.jobs.unwrap_or(ClientConfig::default().concurrency),
            ..ClientConfig::default()
        };
        let opts = AnnotateOptions {
            prompts: &prompts,
            client,
            run_seed: a.seed,
            retry_failed: a.retry_failed,
        };
        let teacher = MockTeacher {
            seed: a.seed,
            thresholds,
        };
        pipeline::annotate(&a.manifest, &a.sync, &a.out, teacher, &opts).map_err(runtime)?
    };
    println!(
        "requested {}, succeeded {}, failed {}, reused {}",
        summary.requested, summary.succeeded, summary.failed, summary.reused
    );
    Ok(if summary.failed_total == 0 {
        EXIT_OK
    } else {
        EXIT_FAILURE
    })
}

fn build(a: BuildArgs) -> Result<i32, Failure> {
    let mut builder = DatasetBuilder::new(a.seed)
        .with_prompts(prompts(a.templates.as_deref())?)
        .with_ratios(a.ratios)
        .map_err(usage)?
        .force_imu_dropout(a.no_imu);
    if let Some(p) = a.nexar_keep {
        builder = builder.with_source_keep(Source::Nexar, p).map_err(usage)?;
    }
    let report = pipeline::build_dataset(&a.manifest, &a.sync, &a.annotations, &a.out, &builder).map_err(runtime)?;
    print!("{}", report.render());
    Ok(EXIT_OK)
}

fn eval(a: EvalArgs) -> Result<i32, Failure> {
    let refs: Vec<&Path> = a.references.iter().map(PathBuf::as_path).collect();
    let report = pipeline::evaluate_files(&refs, &a.predictions, a.bertscore.as_deref(), &a.out).map_err(runtime)?;
    print!("{}", report.render_text());
    Ok(EXIT_OK)
}
