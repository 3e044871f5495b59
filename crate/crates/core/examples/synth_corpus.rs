//! Generates a small mixed corpus and prints each clip's ground truth.
//!
//! `cargo run --example synth_corpus -- [out_dir]` also writes the corpus to disk.

use scepipe::synth::{synth_corpus, write_corpus, CorpusSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let clips = synth_corpus(&CorpusSpec::new(8, 3))?;
    println!("{:<22} {:<15} {:>8} {:>10}", "clip", "kind", "t_e (s)", "amplitude");
    for clip in &clips {
        let t = &clip.truth;
        println!(
            "{:<22} {:<15} {:>8.2} {:>10.2}",
            clip.manifest.clip_id, t.kind, t.event_time_s, t.spike_amplitude
        );
    }
    if let Some(dir) = std::env::args().nth(1) {
        write_corpus(&clips, dir.as_ref())?;
        println!("wrote {} clips to {dir}", clips.len());
    }
    Ok(())
}
