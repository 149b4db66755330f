//! End-to-end tests of the `phrasegen` binary.

use phrasegen::midi::{render_midi, QNote, QuantizedScore};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_phrasegen"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn phrasegen");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// A small deterministic corpus: `n` 12-bar songs labeled "i4A8" with
/// melody and piano activity in every bar.
fn write_fixture_corpus(root: &Path, n: usize, time_sig_three_four: bool) -> (PathBuf, PathBuf) {
    let midi_dir = root.join("midi");
    let labels_dir = root.join("labels");
    std::fs::create_dir_all(&midi_dir).unwrap();
    std::fs::create_dir_all(&labels_dir).unwrap();
    for i in 0..n {
        let mut q = QuantizedScore::empty(16, 12);
        for bar in 0..12u32 {
            q.tracks[0].push(QNote {
                pitch: 60 + ((bar as usize + i) % 12) as u8,
                onset_step: bar * 16,
                duration_steps: 4,
            });
            q.tracks[2].push(QNote { pitch: 43, onset_step: bar * 16, duration_steps: 8 });
            q.tracks[2].push(QNote { pitch: 47, onset_step: bar * 16 + 8, duration_steps: 4 });
        }
        let mut bytes = render_midi(&q, 120.0);
        if time_sig_three_four {
            // rewrite the 4/4 meta event into 3/4 (numerator byte)
            let pos = bytes
                .windows(4)
                .position(|w| w == [0xff, 0x58, 0x04, 4])
                .expect("time signature event");
            bytes[pos + 3] = 3;
        }
        std::fs::write(midi_dir.join(format!("song{i:03}.mid")), bytes).unwrap();
        std::fs::write(labels_dir.join(format!("song{i:03}.txt")), "i4A8").unwrap();
    }
    (midi_dir, labels_dir)
}

#[test]
fn preprocess_is_deterministic_and_counts_match() {
    let tmp = tempfile::tempdir().unwrap();
    let (midi_dir, labels_dir) = write_fixture_corpus(tmp.path(), 12, false);
    let out1 = tmp.path().join("out1");
    let out2 = tmp.path().join("out2");
    for out in [&out1, &out2] {
        let output = run_ok(bin().args([
            "preprocess",
            "--midi-dir",
            midi_dir.to_str().unwrap(),
            "--labels-dir",
            labels_dir.to_str().unwrap(),
            "--out-dir",
            out.to_str().unwrap(),
            "--seed",
            "7",
        ]));
        let stdout = String::from_utf8_lossy(&output.stdout).to_string();
        assert!(stdout.contains("songs in:          12"), "{stdout}");
        assert!(stdout.contains("4-bar samples:     36"), "{stdout}");
        assert!(stdout.contains("hollow dropped:    0"), "{stdout}");
    }
    let m1 = std::fs::read(out1.join("manifest.json")).unwrap();
    let m2 = std::fs::read(out2.join("manifest.json")).unwrap();
    assert_eq!(m1, m2, "same seed must give identical manifests");
    assert!(out1.join("phrase_train.tensors").exists());
    assert!(out1.join("song_test.tensors").exists());
    assert!(out1.join("run_record_preprocess.json").exists());
}

#[test]
fn preprocess_of_non_four_four_corpus_exits_with_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let (midi_dir, labels_dir) = write_fixture_corpus(tmp.path(), 10, true);
    let out = bin()
        .args([
            "preprocess",
            "--midi-dir",
            midi_dir.to_str().unwrap(),
            "--labels-dir",
            labels_dir.to_str().unwrap(),
            "--out-dir",
            tmp.path().join("out").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "expected data-error exit");
    assert!(String::from_utf8_lossy(&out.stderr).contains("no phrase samples"));
}

#[test]
fn usage_errors_exit_one() {
    let out = bin().args(["preprocess", "--nonsense"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out2 = bin()
        .args([
            "preprocess",
            "--midi-dir",
            "x",
            "--labels-dir",
            "y",
            "--out-dir",
            "z",
            "--steps-per-bar",
            "7",
        ])
        .output()
        .unwrap();
    assert_eq!(out2.status.code(), Some(1), "steps-per-bar must be multiple of 4");
}

#[test]
fn train_smoke_writes_checkpoint_and_log() {
    let tmp = tempfile::tempdir().unwrap();
    let (midi_dir, labels_dir) = write_fixture_corpus(tmp.path(), 12, false);
    let data = tmp.path().join("data");
    run_ok(bin().args([
        "preprocess",
        "--midi-dir",
        midi_dir.to_str().unwrap(),
        "--labels-dir",
        labels_dir.to_str().unwrap(),
        "--out-dir",
        data.to_str().unwrap(),
    ]));
    let run = tmp.path().join("run");
    let output = run_ok(bin().args([
        "train",
        "--manifest",
        data.join("manifest.json").to_str().unwrap(),
        "--model",
        "structure",
        "--out-dir",
        run.to_str().unwrap(),
        "--epochs",
        "60",
        "--max-steps",
        "50",
        "--batch-size",
        "4",
        "--seed",
        "3",
    ]));
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("steps: 50"), "{stdout}");
    assert!(run.join("last.ckpt").exists());
    assert!(run.join("best.ckpt").exists());
    let log = std::fs::read_to_string(run.join("metrics.ndjson")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines.len(), 50, "one log line per weight update");
    for line in lines {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for field in ["step", "lr", "beta", "recon_structure", "kld", "total"] {
            assert!(v.get(field).is_some(), "missing {field} in {line}");
        }
    }
}

#[test]
fn config_file_fills_flags_and_flags_win() {
    let tmp = tempfile::tempdir().unwrap();
    let (midi_dir, labels_dir) = write_fixture_corpus(tmp.path(), 10, false);
    std::fs::write(tmp.path().join("cfg.txt"), "seed = 11\nmax-phrases = 2\n").unwrap();
    let out_cfg = tmp.path().join("out_cfg");
    run_ok(bin().args([
        "preprocess",
        "--midi-dir",
        midi_dir.to_str().unwrap(),
        "--labels-dir",
        labels_dir.to_str().unwrap(),
        "--out-dir",
        out_cfg.to_str().unwrap(),
        "--config",
        tmp.path().join("cfg.txt").to_str().unwrap(),
    ]));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_cfg.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 11);
    assert_eq!(manifest["max_phrases"], 2);

    // explicit flag overrides the config value
    let out_flag = tmp.path().join("out_flag");
    run_ok(bin().args([
        "preprocess",
        "--midi-dir",
        midi_dir.to_str().unwrap(),
        "--labels-dir",
        labels_dir.to_str().unwrap(),
        "--out-dir",
        out_flag.to_str().unwrap(),
        "--config",
        tmp.path().join("cfg.txt").to_str().unwrap(),
        "--seed",
        "99",
    ]));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_flag.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 99);
}

#[test]
fn generate_writes_midi_and_sidecars_then_evaluate_self_is_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt_dir = tmp.path().join("ckpts");
    run_ok(bin().args(["toy-checkpoints", "--out-dir", ckpt_dir.to_str().unwrap()]));
    let songs = tmp.path().join("songs");
    let output = run_ok(bin().args([
        "generate",
        "--phrase-checkpoint",
        ckpt_dir.join("phrase_toy.ckpt").to_str().unwrap(),
        "--structure-checkpoint",
        ckpt_dir.join("structure_toy.ckpt").to_str().unwrap(),
        "--out-dir",
        songs.to_str().unwrap(),
        "--n-songs",
        "10",
        "--seed",
        "5",
    ]));
    let stdout = String::from_utf8_lossy(&output.stdout);
    for i in 0..10 {
        let midi_path = songs.join(format!("song_{i:03}.mid"));
        let sidecar_path = songs.join(format!("song_{i:03}.json"));
        assert!(midi_path.exists() && sidecar_path.exists(), "song {i} missing\n{stdout}");
        // every file parses back cleanly
        let bytes = std::fs::read(&midi_path).unwrap();
        phrasegen::midi::parse_midi(&bytes).expect("generated MIDI must re-parse");
        let sidecar: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&sidecar_path).unwrap()).unwrap();
        assert!(sidecar["structure"].as_str().unwrap().len() >= 2);
    }

    let report_dir = tmp.path().join("report");
    run_ok(bin().args([
        "evaluate",
        "--corpus-a",
        songs.to_str().unwrap(),
        "--corpus-b",
        songs.to_str().unwrap(),
        "--out-dir",
        report_dir.to_str().unwrap(),
    ]));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(report_dir.join("report.json")).unwrap())
            .unwrap();
    for d in report["deltas"]["empty_bar_rate"].as_array().unwrap() {
        assert_eq!(d.as_f64().unwrap(), 0.0);
    }
    for d in report["deltas"]["entropy_by_bar"].as_array().unwrap() {
        assert_eq!(d.as_f64().unwrap(), 0.0);
    }
    assert!(report_dir.join("chord_profile_a.csv").exists());
}

#[test]
fn generate_is_deterministic_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt_dir = tmp.path().join("ckpts");
    run_ok(bin().args(["toy-checkpoints", "--out-dir", ckpt_dir.to_str().unwrap()]));
    let mut hashes = Vec::new();
    for out in ["a", "b"] {
        let dir = tmp.path().join(out);
        run_ok(bin().args([
            "generate",
            "--phrase-checkpoint",
            ckpt_dir.join("phrase_toy.ckpt").to_str().unwrap(),
            "--structure-checkpoint",
            ckpt_dir.join("structure_toy.ckpt").to_str().unwrap(),
            "--out-dir",
            dir.to_str().unwrap(),
            "--n-songs",
            "2",
            "--seed",
            "42",
        ]));
        hashes.push(std::fs::read(dir.join("song_001.mid")).unwrap());
    }
    assert_eq!(hashes[0], hashes[1], "same seed must give identical songs");
}

#[test]
fn evaluate_rejects_missing_corpus() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin()
        .args([
            "evaluate",
            "--corpus-a",
            tmp.path().join("nope").to_str().unwrap(),
            "--corpus-b",
            tmp.path().join("nope2").to_str().unwrap(),
            "--out-dir",
            tmp.path().join("r").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
