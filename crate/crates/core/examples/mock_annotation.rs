//! Runs the deterministic mock teacher through the batch client and parses the
//! responses, one line per clip.

use scepipe::prompt::PromptBuilder;
use scepipe::semantic::SemanticMetadata;
use scepipe::sync::{build_synced_sequence, build_video_sequence, SyncConfig};
use scepipe::synth::{synth_corpus, CorpusSpec};
use scepipe::teacher::{parse_annotations, ClientConfig, MockTeacher, TeacherClient, TeacherRequest};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let clips = synth_corpus(&CorpusSpec::new(6, 8))?;
    let cfg = SyncConfig::default();
    let prompts = PromptBuilder::default();

    let mut requests = Vec::new();
    for clip in &clips {
        let seq = match &clip.trace {
            Some(t) => build_synced_sequence(&t.imu, &t.gps, &clip.manifest, &cfg)?,
            None => build_video_sequence(&clip.manifest, &cfg)?,
        };
        let meta: &SemanticMetadata = &clip.semantic;
        requests.push(TeacherRequest {
            clip_id: seq.clip_id.clone(),
            bundle: prompts.build_bundle(&seq, meta, true)?,
            frame_images: seq
                .frames
                .iter()
                .map(|f| clip.manifest.frame_path(f.raw_frame_index))
                .collect(),
        });
    }

    let client = TeacherClient::new(MockTeacher::new(42), ClientConfig::default());
    for (clip, result) in clips.iter().zip(client.annotate_batch(&requests)) {
        let outcome = result?;
        let ann = parse_annotations(&outcome.response, &outcome.clip_id)?;
        println!(
            "{:<22} truth={:<15} teacher={:<15} qa={}",
            ann.clip_id,
            clip.truth.kind,
            ann.sce_label,
            ann.qa.len()
        );
        println!("    {}", ann.caption);
    }
    Ok(())
}
