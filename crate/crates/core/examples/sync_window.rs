//! Aligns one synthetic collision clip to its 18-frame event window and prints
//! the per-frame telemetry table.

use scepipe::sync::{build_synced_sequence, SyncConfig};
use scepipe::synth::{synth_corpus, CorpusSpec, KindChoice, SourceChoice};
use scepipe::telemetry::{SceClass, Source};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = CorpusSpec {
        kind: KindChoice::Fixed(SceClass::Collision),
        source: SourceChoice::Fixed(Source::Private),
        ..CorpusSpec::new(1, 11)
    };
    let clip = synth_corpus(&spec)?.remove(0);
    let trace = clip.trace.as_ref().expect("private clips carry telemetry");

    let cfg = SyncConfig::default();
    let seq = build_synced_sequence(&trace.imu, &trace.gps, &clip.manifest, &cfg)?;
    println!(
        "injected t_e = {:.2} s, detected t_e = {:.2} s, window [{:.2}, {:.2}]",
        clip.truth.event_time_s, seq.window.t_e, seq.window.t_start, seq.window.t_end
    );
    print!("{}", seq.render_table());
    Ok(())
}
