//! Renders expert flags and per-frame detections into prompt-ready lines.

use scepipe::semantic::{summarize_metadata, BBox, Detection, Maneuver, SemanticMetadata};
use scepipe::sync::{build_video_sequence, SyncConfig};
use scepipe::synth::{synth_corpus, CorpusSpec, SourceChoice};
use scepipe::telemetry::Source;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = CorpusSpec {
        source: SourceChoice::Fixed(Source::Nexar),
        ..CorpusSpec::new(1, 5)
    };
    let clip = synth_corpus(&spec)?.remove(0);
    let seq = build_video_sequence(&clip.manifest, &SyncConfig::default())?;

    let detection = |k, class: &str, track| -> Result<Detection, Box<dyn std::error::Error>> {
        Ok(Detection {
            k,
            class: class.to_string(),
            bbox: BBox::new(0.40, 0.35, 0.52, 0.70)?,
            track_id: Some(track),
        })
    };
    let meta = SemanticMetadata {
        crash_detected: false,
        maneuver: Some(Maneuver::Swerve),
        traffic_light_violation: true,
        stop_sign_severity: None,
        detections: vec![
            detection(12, "pedestrian", 4)?,
            detection(13, "pedestrian", 4)?,
            detection(13, "car", 9)?,
        ],
    };
    meta.validate()?;

    let summary = summarize_metadata(&meta, &seq.frames);
    println!("{}", summary.header);
    for line in summary.frame_lines.iter().filter(|l| !l.ends_with("none")) {
        println!("{line}");
    }
    Ok(())
}
