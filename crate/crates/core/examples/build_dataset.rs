//! Runs synth, sync, mock annotation and dataset assembly in a temporary
//! directory and prints the run report.

use scepipe::dataset::DatasetBuilder;
use scepipe::pipeline::{self, AnnotateOptions};
use scepipe::prompt::PromptBuilder;
use scepipe::sync::SyncConfig;
use scepipe::synth::{synth_corpus, write_corpus, CorpusSpec, CORPUS_MANIFEST};
use scepipe::teacher::{ClientConfig, MockTeacher};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let root = dir.path();
    write_corpus(&synth_corpus(&CorpusSpec::new(40, 1))?, &root.join("corpus"))?;
    let manifest = root.join("corpus").join(CORPUS_MANIFEST);

    let synced = pipeline::sync_manifest(&manifest, &SyncConfig::default(), 2)?;
    let sync_path = root.join("sync.records");
    pipeline::write_sync_records(&sync_path, &synced.sequences)?;

    let prompts = PromptBuilder::default();
    let opts = AnnotateOptions {
        prompts: &prompts,
        client: ClientConfig::default(),
        run_seed: 42,
        retry_failed: false,
    };
    let ann_path = root.join("annotations.records");
    pipeline::annotate(&manifest, &sync_path, &ann_path, MockTeacher::new(42), &opts)?;

    let report = pipeline::build_dataset(
        &manifest,
        &sync_path,
        &ann_path,
        &root.join("dataset"),
        &DatasetBuilder::new(42),
    )?;
    print!("{}", report.render());
    Ok(())
}
