//! Builds the teacher bundle for a synthetic clip and the matching student prompt
//! with and without telemetry.

use scepipe::prompt::{flatten_segments, PromptBuilder};
use scepipe::sync::{build_synced_sequence, SyncConfig};
use scepipe::synth::{synth_corpus, CorpusSpec, KindChoice, SourceChoice};
use scepipe::telemetry::{SceClass, Source};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = CorpusSpec {
        kind: KindChoice::Fixed(SceClass::NearCollision),
        source: SourceChoice::Fixed(Source::Bddx),
        ..CorpusSpec::new(1, 21)
    };
    let clip = synth_corpus(&spec)?.remove(0);
    let trace = clip.trace.as_ref().expect("bddx clips carry telemetry");
    let seq = build_synced_sequence(&trace.imu, &trace.gps, &clip.manifest, &SyncConfig::default())?;

    let prompts = PromptBuilder::default();
    let bundle = prompts.build_bundle(&seq, &clip.semantic, true)?;
    println!("template version {}", bundle.template_version);
    println!("--- system ---\n{}", bundle.system_prompt);
    println!("--- user ---\n{}", bundle.user_text());

    let instruction = &prompts.templates().student_sce;
    for include_imu in [true, false] {
        let student = prompts.render_student_prompt(instruction, &seq, include_imu);
        println!("--- student (imu: {include_imu}) ---\n{}", flatten_segments(&student));
    }
    Ok(())
}
