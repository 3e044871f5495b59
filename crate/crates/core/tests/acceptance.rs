//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits non-zero if any fails.
//!
//! Runs sequentially on one thread so the timing criteria measure single-core cost.
//! `UPDATE_GOLDEN=1` rewrites the end-to-end tree hash fixture.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use scepipe::dataset::{
    assign_split, imu_dropout_decision, test_file_name, Split, SplitRatios, TrainingExample, TrainingManifest,
    IMU_DROPOUT_PROBABILITY, TRAIN_FILE, VAL_FILE,
};
use scepipe::eval::{classification_report, normalize_answer, parse_sce_prediction, rouge_l_f1, BinaryConfusion};
use scepipe::prompt::PromptBuilder;
use scepipe::records::read_typed;
use scepipe::semantic::{heuristic_sce_classifier, SceThresholds};
use scepipe::sync::{
    block_average_accel, build_synced_sequence, build_video_sequence, detect_event_timestamp, integrate_gyro_z,
    SyncConfig,
};
use scepipe::synth::{synth_corpus, synth_trace, CorpusSpec, SynthProfile};
use scepipe::teacher::{mock_teacher, parse_annotations, QaKind, MAX_CLOSED_ANSWER_TOKENS};
use scepipe::telemetry::{Axes, ClipManifest, GpsTrace, ImuTrace, SceClass, Source, IMU_RATE_HZ};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn clip(clip_id: &str, duration_s: f64) -> ClipManifest {
    ClipManifest {
        clip_id: clip_id.to_string(),
        source: Source::Private,
        duration_s,
        fps: 30.0,
        width: 1280,
        height: 720,
        frame_path_pattern: "f/{index:05}.jpg".into(),
        imu_path: None,
        gps_path: None,
        semantic_path: None,
        event_time_s: None,
    }
}

/// Independent window placement and per-sample sums; no shared code with the engine.
fn naive_blocks(ax: &[f64], signal: &[f64], duration_s: f64) -> (Vec<f64>, Vec<f64>) {
    let mut peak = 0;
    for i in 0..ax.len() {
        if ax[i].abs() > ax[peak].abs() {
            peak = i;
        }
    }
    let t_e = peak as f64 / 100.0;
    let mut t_start = t_e - 4.0;
    if t_start < 0.0 {
        t_start = 0.0;
    }
    if t_start > duration_s - 6.0 {
        t_start = duration_s - 6.0;
    }
    let offset = (t_start * 100.0).round() as usize;
    let mut means = Vec::new();
    let mut angles = Vec::new();
    for k in 0..18 {
        let mut s = 0.0;
        for j in 0..33 {
            s += signal[offset + 33 * k + j];
        }
        means.push(s / 33.0);
        angles.push(s / 100.0);
    }
    (means, angles)
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let cfg = SyncConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_accel, mut worst_gyro) = (0.0f64, 0.0f64);
    for n in 0..1000 {
        let duration_s = rng.random_range(6..=20) as f64;
        let len = (duration_s * IMU_RATE_HZ) as usize;
        let mut series = || (0..len).map(|_| rng.random_range(-20.0..20.0)).collect::<Vec<f64>>();
        let accel = Axes::new(series(), series(), series());
        let gyro = Axes::new(series(), series(), series());
        let imu = ImuTrace::new(accel.clone(), gyro.clone(), 0.0).map_err(|e| e.to_string())?;
        let gps = GpsTrace::new(vec![10.0; duration_s as usize + 1], 0.0).map_err(|e| e.to_string())?;
        let seq =
            build_synced_sequence(&imu, &gps, &clip(&format!("w{n}"), duration_s), &cfg).map_err(|e| e.to_string())?;
        for (axis, series) in [&accel.x, &accel.y, &accel.z].into_iter().enumerate() {
            let (expect, _) = naive_blocks(&accel.x, series, duration_s);
            for (f, e) in seq.frames.iter().zip(&expect) {
                worst_accel = worst_accel.max((f.telemetry.unwrap().accel[axis] - e).abs());
            }
        }
        let (_, expect) = naive_blocks(&accel.x, &gyro.z, duration_s);
        for (f, e) in seq.frames.iter().zip(&expect) {
            worst_gyro = worst_gyro.max((f.telemetry.unwrap().delta_angle_deg - e).abs());
        }
        // The primitives on an aligned slice, without the window logic.
        let blocks = block_average_accel(&accel.x, &accel.y, &accel.z, &cfg).map_err(|e| e.to_string())?;
        let dalpha = integrate_gyro_z(&gyro.z, &cfg).map_err(|e| e.to_string())?;
        for k in 0..18 {
            let s: f64 = accel.y[33 * k..33 * (k + 1)].iter().sum();
            let g: f64 = gyro.z[33 * k..33 * (k + 1)].iter().sum();
            worst_accel = worst_accel.max((blocks[k][1] - s / 33.0).abs());
            worst_gyro = worst_gyro.max((dalpha[k] - g / 100.0).abs());
        }
    }
    let elapsed = started.elapsed();
    check(
        worst_accel <= 1e-12 && worst_gyro <= 1e-9 && elapsed < Duration::from_secs(5),
        format!("max |accel err| {worst_accel:.2e}, max |gyro err| {worst_gyro:.2e}, {elapsed:.2?} for 1000 windows"),
    )
}

fn criterion_2() -> Outcome {
    let cfg = SyncConfig::default();
    let m = TrainingManifest::default();
    let seq = build_video_sequence(&clip("c", 16.0), &cfg).map_err(|e| e.to_string())?;
    let ratios = SplitRatios::default();
    let checks = [
        ("W", cfg.block_size() == 33),
        ("window width", (seq.window.width_s() - 6.0).abs() < 1e-12),
        ("frames", cfg.n_frames() == 18 && seq.frames.len() == 18),
        ("fps", cfg.target_fps == 3.0),
        ("drop-out", IMU_DROPOUT_PROBABILITY == 0.5),
        ("splits", (ratios.train, ratios.val, ratios.test) == (0.90, 0.05, 0.05)),
        ("adapter", m.adapter_method == "DoRA"),
        ("rank", m.rank == 32),
        ("alpha", m.alpha == 64),
        ("lr", m.learning_rate == 5e-5),
        ("batch", m.batch_size == 32),
        ("resolution", (m.image_width, m.image_height) == (420, 240)),
        ("neftune", m.neftune_noise == 5.0),
        (
            "frozen",
            m.frozen.iter().any(|f| f == "vision_encoder") && m.frozen.iter().any(|f| f == "projection"),
        ),
    ];
    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    check(
        failed.is_empty(),
        if failed.is_empty() {
            format!("{} constants match", checks.len())
        } else {
            format!("mismatched: {}", failed.join(", "))
        },
    )
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut misses = 0;
    for _ in 0..200 {
        let t = rng.random_range(50u64..=1550) as f64 / 100.0;
        let mut p = SynthProfile::new(SceClass::Collision, t, rng.random());
        p.spike_amplitude = -rng.random_range(8.0..=15.0);
        p.noise_sigma = rng.random_range(0.0..=0.1);
        let trace = synth_trace(&p, 16.0).map_err(|e| e.to_string())?;
        let found = detect_event_timestamp(&trace.imu.accel().x, trace.imu.start_time_s(), IMU_RATE_HZ)
            .map_err(|e| e.to_string())?;
        let err = (found - t).abs();
        worst = worst.max(err);
        if err > 0.01 + 1e-9 {
            misses += 1;
        }
    }
    check(
        misses == 0,
        format!("200 traces, {misses} outside ±0.01 s, worst error {worst:.3} s"),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let thresholds = SceThresholds::default();
    let mut agree = BTreeMap::new();
    for kind in SceClass::ALL {
        for _ in 0..300 {
            let t = rng.random_range(50u64..=1550) as f64 / 100.0;
            let mut p = SynthProfile::new(kind, t, rng.random());
            p.noise_sigma = rng.random_range(0.0..=0.1);
            let trace = synth_trace(&p, 16.0).map_err(|e| e.to_string())?;
            let got = heuristic_sce_classifier(&trace.imu, &thresholds).map_err(|e| e.to_string())?;
            *agree.entry(kind.as_str()).or_insert(0) += usize::from(got == kind);
        }
    }
    let total: usize = agree.values().sum();
    check(total == 900, format!("agreement per class {agree:?} of 300"))
}

fn frac(hits: usize, n: usize) -> f64 {
    hits as f64 / n as f64
}

fn criterion_5(e2e_dataset: Option<&Path>) -> Outcome {
    let dropped = (0..10_000)
        .filter(|i| imu_dropout_decision(42, &format!("clip-{i:05}")))
        .count();
    let drop_rate = frac(dropped, 10_000);

    let ratios = SplitRatios::default();
    let mut counts = BTreeMap::new();
    for i in 0..100_000 {
        let s = assign_split(&format!("clip-{i:06}"), &ratios).map_err(|e| e.to_string())?;
        *counts.entry(s).or_insert(0usize) += 1;
    }
    let got = |s| frac(counts.get(&s).copied().unwrap_or(0), 100_000);
    let split_err = [(Split::Train, 0.90), (Split::Val, 0.05), (Split::Test, 0.05)]
        .into_iter()
        .map(|(s, target)| (got(s) - target).abs())
        .fold(0.0, f64::max);

    let Some(dir) = e2e_dataset else {
        return Err("demo corpus dataset unavailable (end-to-end run failed)".into());
    };
    let mut files = vec![dir.join(TRAIN_FILE), dir.join(VAL_FILE)];
    files.extend(Source::ALL.map(|s| dir.join(test_file_name(s))));
    let mut seen: BTreeMap<String, BTreeSet<Split>> = BTreeMap::new();
    for f in &files {
        for ex in read_typed(f, TrainingExample::from_record).map_err(|e| e.to_string())? {
            seen.entry(ex.clip_id).or_default().insert(ex.split);
        }
    }
    let leaked = seen.values().filter(|s| s.len() > 1).count();
    check(
        (0.48..=0.52).contains(&drop_rate) && split_err <= 0.01 && leaked == 0,
        format!(
            "drop-out {drop_rate:.4}, max split deviation {split_err:.4}, {leaked} leaked of {} clips",
            seen.len()
        ),
    )
}

/// Fifty spellings of a near-collision label, many of which contain "collision" as a substring.
fn adversarial_near_collisions() -> Vec<String> {
    let cores = [
        "near-collision",
        "Near-Collision",
        "NEAR COLLISION",
        "near  collision",
        "near_collision",
        "near\u{2013}collision",
        "near\ncollision",
        "near miss",
        "Near-miss",
        "nearcollision",
    ];
    let frames = [
        "{}",
        "SCE: {}",
        "The clip shows a {}, not a collision.",
        "collision? no, {}",
        "**{}** (almost a crash)",
    ];
    let mut out = Vec::new();
    for f in frames {
        for c in cores {
            out.push(f.replace("{}", c));
        }
    }
    out
}

fn criterion_6() -> Outcome {
    let cat = rouge_l_f1("the cat sat", "the cat ran");
    let ident = rouge_l_f1("a truck merges left", "a truck merges left");
    let empty = rouge_l_f1("", "the cat ran");
    let rouge_ok = (cat - 2.0 / 3.0).abs() <= 1e-12 && (ident - 1.0).abs() <= 1e-12 && empty.abs() <= 1e-12;

    use SceClass::*;
    let r = classification_report(
        &[Some(Collision), Some(Normal), Some(NearCollision), Some(Normal)],
        &[Collision, Normal, Collision, NearCollision],
    )
    .map_err(|e| e.to_string())?;
    let confusion_ok = r.sce3_accuracy == 0.5
        && r.binary
            == BinaryConfusion {
                tp: 2,
                fp: 0,
                fn_: 1,
                tn: 1,
            }
        && r.precision_pos == 1.0
        && r.recall_pos == 2.0 / 3.0
        && r.binary_accuracy == 0.75;

    let adversarial = adversarial_near_collisions();
    let wrong: Vec<&String> = adversarial
        .iter()
        .filter(|s| parse_sce_prediction(s) == Some(Collision))
        .collect();
    check(
        rouge_ok && confusion_ok && wrong.is_empty() && adversarial.len() == 50,
        format!(
            "rouge cat={cat:.15} identity={ident} empty={empty}; confusion {:?}; {} of {} adversarial parsed as collision {wrong:?}",
            r.binary,
            wrong.len(),
            adversarial.len()
        ),
    )
}

fn run_cli(args: &[&str], cwd: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_scepipe"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "off")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "`scepipe {}` exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

/// Stand-in student output: exact on even rows, truncated to the first half on odd rows.
fn write_predictions(dataset: &Path, out: &Path) -> Result<(), String> {
    let mut lines = Vec::new();
    for s in Source::ALL {
        for (i, ex) in read_typed(&dataset.join(test_file_name(s)), TrainingExample::from_record)
            .map_err(|e| e.to_string())?
            .into_iter()
            .enumerate()
        {
            let words: Vec<&str> = ex.target_text.split_whitespace().collect();
            let text = if i % 2 == 0 {
                words.join(" ")
            } else {
                words[..words.len() / 2].join(" ")
            };
            lines.push(format!("example_id={}\tprediction_text={}", ex.example_id, text));
        }
    }
    fs::write(out, lines.join("\n") + "\n").map_err(|e| e.to_string())
}

fn run_e2e(root: &Path) -> Result<(), String> {
    run_cli(&["synth", "--out", "corpus", "--n", "20", "--seed", "1"], root)?;
    run_cli(
        &["sync", "--manifest", "corpus/manifest.records", "--out", "sync.records"],
        root,
    )?;
    run_cli(
        &[
            "annotate",
            "--manifest",
            "corpus/manifest.records",
            "--sync",
            "sync.records",
            "--out",
            "annotations.records",
            "--mock-teacher",
            "--seed",
            "42",
        ],
        root,
    )?;
    run_cli(
        &[
            "build",
            "--manifest",
            "corpus/manifest.records",
            "--sync",
            "sync.records",
            "--annotations",
            "annotations.records",
            "--out",
            "dataset",
            "--seed",
            "42",
        ],
        root,
    )?;
    write_predictions(&root.join("dataset"), &root.join("predictions.records"))?;
    let mut args = vec![
        "eval",
        "--predictions",
        "predictions.records",
        "--out",
        "eval",
        "--references",
    ];
    let refs: Vec<String> = Source::ALL
        .iter()
        .map(|s| format!("dataset/{}", test_file_name(*s)))
        .collect();
    args.extend(refs.iter().map(String::as_str));
    run_cli(&args, root)
}

/// SHA-256 over every file's relative path and contents, in sorted path order.
fn tree_hash(root: &Path) -> Result<String, String> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_dir() {
                walk(&path, out)?;
            } else {
                out.push(path);
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    walk(root, &mut files).map_err(|e| e.to_string())?;
    files.sort();
    let mut h = Sha256::new();
    for f in files {
        let rel = f.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
        let bytes = fs::read(&f).map_err(|e| e.to_string())?;
        h.update(rel.as_bytes());
        h.update([0]);
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

fn criterion_7(first: &Path, second: &Path) -> Outcome {
    let started = Instant::now();
    run_e2e(first)?;
    let elapsed = started.elapsed();
    run_e2e(second)?;
    let (a, b) = (tree_hash(first)?, tree_hash(second)?);

    let golden_path = crate_dir().join("tests/golden/e2e_tree.sha256");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::create_dir_all(golden_path.parent().unwrap()).map_err(|e| e.to_string())?;
        fs::write(&golden_path, format!("{a}\n")).map_err(|e| e.to_string())?;
    }
    let golden = fs::read_to_string(&golden_path).map_err(|e| format!("{}: {e}", golden_path.display()))?;
    check(
        a == b && a == golden.trim() && elapsed < Duration::from_secs(60),
        format!(
            "tree hash {a}, rerun {}, golden {}, {elapsed:.2?}",
            if a == b { "identical" } else { "differs" },
            golden.trim()
        ),
    )
}

const MUTATION_TOKENS: &[&str] = &[
    "===ANNOTATION===",
    "===END===",
    "CAPTION:",
    "Q[open]:",
    "Q[closed]:",
    "Q[",
    "A:",
    "SCE:",
    "SCE: near-collision",
    "\n",
    "\r\n",
    "\t",
    ":",
    "é",
    "\u{0}",
    "\u{feff}",
    "🚗",
    "collision",
    "yes yes yes yes yes yes",
];

fn mutate(rng: &mut ChaCha8Rng, base: &str) -> String {
    let mut s: Vec<char> = base.chars().collect();
    for _ in 0..rng.random_range(1..=4) {
        let n = s.len();
        match rng.random_range(0..7) {
            0 if n > 0 => {
                let a = rng.random_range(0..n);
                let b = (a + rng.random_range(1..=40)).min(n);
                s.drain(a..b);
            }
            1 => {
                let at = rng.random_range(0..=n);
                let tok = MUTATION_TOKENS[rng.random_range(0..MUTATION_TOKENS.len())];
                s.splice(at..at, tok.chars());
            }
            2 if n > 0 => {
                let at = rng.random_range(0..n);
                s[at] = char::from_u32(rng.random_range(0..0x3000)).unwrap_or('?');
            }
            3 if n > 0 => s.truncate(rng.random_range(0..n)),
            4 => {
                let text: String = s.iter().collect();
                let mut lines: Vec<&str> = text.lines().collect();
                if lines.len() > 1 {
                    let (i, j) = (rng.random_range(0..lines.len()), rng.random_range(0..lines.len()));
                    lines.swap(i, j);
                }
                s = lines.join("\n").chars().collect();
            }
            5 => {
                let text: String = s.iter().collect();
                let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
                if !lines.is_empty() {
                    let i = rng.random_range(0..lines.len());
                    let dup = lines[i].clone();
                    lines.insert(i, dup);
                }
                s = lines.join("\n").chars().collect();
            }
            _ => {
                let text: String = s.iter().collect();
                s = if rng.random_bool(0.5) {
                    text.to_uppercase()
                } else {
                    text.to_lowercase()
                }
                .chars()
                .collect();
            }
        }
    }
    s.into_iter().collect()
}

fn criterion_8() -> Outcome {
    let clips = synth_corpus(&CorpusSpec::new(12, 8)).map_err(|e| e.to_string())?;
    let prompts = PromptBuilder::default();
    let cfg = SyncConfig::default();
    let mut bases = Vec::new();
    for c in &clips {
        let seq = match &c.trace {
            Some(t) => build_synced_sequence(&t.imu, &t.gps, &c.manifest, &cfg),
            None => build_video_sequence(&c.manifest, &cfg),
        }
        .map_err(|e| e.to_string())?;
        let bundle = prompts
            .build_bundle(&seq, &c.semantic, true)
            .map_err(|e| e.to_string())?;
        bases.push(mock_teacher(&bundle, 42));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut crashes, mut accepted, mut invalid) = (0, 0, 0);
    let mut kinds: BTreeMap<&'static str, usize> = BTreeMap::new();
    let hook = panic::take_hook();
    panic::set_hook(Box::new(|_| {}));
    for i in 0..10_000 {
        let input = mutate(&mut rng, &bases[i % bases.len()]);
        match panic::catch_unwind(AssertUnwindSafe(|| parse_annotations(&input, "fuzz"))) {
            Err(_) => crashes += 1,
            Ok(Ok(a)) => {
                accepted += 1;
                let closed_ok =
                    a.qa.iter()
                        .filter(|q| q.kind == QaKind::Closed)
                        .all(|q| normalize_answer(&q.answer).split_whitespace().count() <= MAX_CLOSED_ANSWER_TOKENS);
                if a.caption.trim().is_empty() || !closed_ok {
                    invalid += 1;
                }
            }
            Ok(Err(e)) => *kinds.entry(e.kind()).or_insert(0) += 1,
        }
    }
    panic::set_hook(hook);
    check(
        crashes == 0 && invalid == 0,
        format!("10000 inputs: {crashes} crashes, {accepted} parsed ({invalid} invalid), typed errors {kinds:?}"),
    )
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    // `cargo test -- --list` and filters are not meaningful for this harness.
    if args.iter().any(|a| a == "--list") {
        return;
    }

    let work = tempfile::tempdir().expect("tempdir");
    let (first, second) = (work.path().join("run1"), work.path().join("run2"));
    fs::create_dir_all(&first).unwrap();
    fs::create_dir_all(&second).unwrap();

    let (c1, c2, c3, c4) = (criterion_1(), criterion_2(), criterion_3(), criterion_4());
    // The end-to-end run produces the demo dataset that criterion 5 inspects.
    let c7 = criterion_7(&first, &second);
    let dataset = first.join("dataset");
    let results = [
        ("1 sync oracle", c1),
        ("2 constants", c2),
        ("3 event recovery", c3),
        ("4 closed-loop classification", c4),
        (
            "5 statistical knobs",
            criterion_5(dataset.is_dir().then_some(dataset.as_path())),
        ),
        ("6 metric correctness", criterion_6()),
        ("7 end-to-end determinism", c7),
        ("8 parser fuzz", criterion_8()),
    ];

    let mut failed = 0;
    for (name, r) in &results {
        match r {
            Ok(d) => println!("PASS  criterion {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL  criterion {name}: {d}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
