//! The four pipeline commands and their shared plumbing.

use crate::{CliError, CliResult};
use phrasegen::corpus::pipeline::{self, Manifest, PreprocessConfig};
use phrasegen::corpus::{
    parse_structure_labels, render_labels, segment_phrases, split_to_4bar_unfiltered,
    truncate_structure_to, PhraseLabel, SongStructure,
};
use phrasegen::generation::{assemble_song, generate_structure, sample_latent, AssemblePolicy};
use phrasegen::graphs::tensors_to_sample;
use phrasegen::metrics::{corpus_report, profile_csv, render_comparison, CorpusData};
use phrasegen::midi::{self, parse_midi, quantize};
use phrasegen::model::{Checkpoint, GraphInput, GraphSpec, GraphVae, ModelKind};
use phrasegen::training::{self, evaluate_reconstruction, TrainConfig, TrainSink};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

fn data_err(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| data_err(format!("{}: {e}", path.display())))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

/// Every command leaves a deterministic record of what it ran with.
fn write_run_record(out_dir: &Path, command: &str, detail: serde_json::Value) -> CliResult<()> {
    let record = json!({ "command": command, "detail": detail });
    let path = out_dir.join(format!("run_record_{command}.json"));
    let text = serde_json::to_string_pretty(&record).map_err(data_err)?;
    std::fs::write(&path, text).map_err(|e| data_err(format!("{}: {e}", path.display())))?;
    Ok(())
}

// ---------------------------------------------------------------- preprocess

pub struct PreprocessArgs {
    pub midi_dir: PathBuf,
    pub labels_dir: PathBuf,
    pub out_dir: PathBuf,
    pub steps_per_bar: u32,
    pub seed: u64,
    pub max_phrases: usize,
}

pub fn cmd_preprocess(args: &PreprocessArgs) -> CliResult<()> {
    if args.steps_per_bar == 0 || args.steps_per_bar % 4 != 0 {
        return Err(CliError::Usage("--steps-per-bar must be a positive multiple of 4".into()));
    }
    if args.max_phrases == 0 || args.max_phrases > 12 {
        return Err(CliError::Usage("--max-phrases must be in 1..=12".into()));
    }
    let cfg = PreprocessConfig {
        steps_per_bar: args.steps_per_bar,
        seed: args.seed,
        max_phrases: args.max_phrases,
    };
    let manifest = pipeline::preprocess_dirs(&args.midi_dir, &args.labels_dir, &args.out_dir, &cfg)
        .map_err(data_err)?;
    let s = &manifest.stats;
    println!("songs in:          {}", s.songs_in);
    println!("4/4 songs kept:    {}", s.songs_four_four);
    println!("phrases labeled:   {}", s.phrases_labeled);
    println!("4-bar samples:     {}", s.samples_emitted);
    println!("hollow dropped:    {}", s.hollow_dropped);
    println!(
        "splits:            train {} / val {} / test {} songs",
        manifest.split.train.len(),
        manifest.split.val.len(),
        manifest.split.test.len()
    );
    if !s.songs_failed.is_empty() {
        println!("failed songs:      {}", s.songs_failed.len());
        for f in &s.songs_failed {
            println!("  {}: {}", f.id, f.reason);
        }
    }
    if s.samples_emitted == 0 {
        return Err(CliError::Data("no phrase samples were produced (no 4/4 input?)".into()));
    }
    write_run_record(
        &args.out_dir,
        "preprocess",
        json!({
            "midi_dir": args.midi_dir,
            "labels_dir": args.labels_dir,
            "steps_per_bar": args.steps_per_bar,
            "seed": args.seed,
            "max_phrases": args.max_phrases,
            "manifest_sha256": sha256_file(&args.out_dir.join(pipeline::MANIFEST_NAME))?,
        }),
    )
}

// --------------------------------------------------------------------- train

pub struct TrainArgs {
    pub manifest: PathBuf,
    pub model: ModelKind,
    pub out_dir: PathBuf,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub beta_warmup: Option<u64>,
    pub beta_increment: Option<f64>,
    pub beta_interval: Option<u64>,
    pub seed: u64,
    pub max_steps: Option<u64>,
}

fn load_inputs(
    manifest_dir: &Path,
    manifest: &Manifest,
    model: ModelKind,
    spec: &GraphSpec,
    split: &str,
) -> CliResult<Vec<GraphInput>> {
    let tensors = match model {
        ModelKind::Phrase => pipeline::load_phrase_split(manifest_dir, manifest, split),
        ModelKind::Song => pipeline::load_song_split(manifest_dir, manifest, split),
    }
    .map_err(data_err)?;
    tensors
        .iter()
        .map(|(s, c)| GraphInput::from_tensors(spec, s, c).map_err(data_err))
        .collect()
}

pub fn cmd_train(args: &TrainArgs) -> CliResult<()> {
    let manifest = pipeline::load_manifest(&args.manifest).map_err(data_err)?;
    let manifest_dir = args.manifest.parent().unwrap_or(Path::new("."));
    let spec = match args.model {
        ModelKind::Phrase => GraphSpec::phrase_with_steps(manifest.steps_per_bar),
        ModelKind::Song => GraphSpec::song_default(),
    };
    let mut cfg = match args.model {
        ModelKind::Phrase => TrainConfig::phrase_defaults(),
        ModelKind::Song => TrainConfig::song_defaults(),
    };
    cfg.seed = args.seed;
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.lr {
        cfg.lr_initial = v;
    }
    if let Some(v) = args.beta_warmup {
        cfg.beta_warmup_steps = v;
    }
    if let Some(v) = args.beta_increment {
        cfg.beta_increment = v;
    }
    if let Some(v) = args.beta_interval {
        cfg.beta_interval_steps = v;
    }
    cfg.max_steps = args.max_steps;

    let train_data = load_inputs(manifest_dir, &manifest, args.model, &spec, "train")?;
    let val_data = load_inputs(manifest_dir, &manifest, args.model, &spec, "val")?;
    if train_data.is_empty() {
        return Err(CliError::Data("train split is empty".into()));
    }
    std::fs::create_dir_all(&args.out_dir).map_err(data_err)?;
    let log_path = args.out_dir.join("metrics.ndjson");
    let log = std::fs::File::create(&log_path).map_err(data_err)?;
    let mut sink = TrainSink {
        log: Some(Box::new(std::io::BufWriter::new(log))),
        checkpoint_dir: Some(args.out_dir.clone()),
    };

    let vae = GraphVae::new(spec, cfg.seed).map_err(data_err)?;
    println!(
        "training {:?} model: {} train / {} val examples, batch {}, {} epochs{}",
        args.model,
        train_data.len(),
        val_data.len(),
        cfg.batch_size,
        cfg.epochs,
        cfg.max_steps.map(|s| format!(", capped at {s} steps")).unwrap_or_default()
    );
    let outcome = training::train(vae, &train_data, &val_data, &cfg, &mut sink).map_err(|e| {
        match e {
            training::TrainError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            other => data_err(other),
        }
    })?;
    let first = outcome.losses.first().map(|l| l.total).unwrap_or(f64::NAN);
    let last = outcome.losses.last().map(|l| l.total).unwrap_or(f64::NAN);
    println!("steps: {}  loss: {first:.4} -> {last:.4}", outcome.steps);
    if let Some(v) = outcome.best_val_loss {
        println!("best validation loss: {v:.4}");
    }
    let eval_data = if val_data.is_empty() { &train_data } else { &val_data };
    let report = evaluate_reconstruction(&outcome.vae, eval_data).map_err(data_err)?;
    println!(
        "reconstruction: activation F1 {:.3}, activation acc {:.3}, primary acc {:.3}, secondary acc {:.3}",
        report.activation_f1, report.activation_accuracy, report.primary_accuracy, report.secondary_accuracy
    );
    write_run_record(
        &args.out_dir,
        "train",
        json!({
            "manifest": args.manifest,
            "model": format!("{:?}", args.model),
            "config": cfg,
            "steps": outcome.steps,
            "last_checkpoint_sha256": sha256_file(&args.out_dir.join("last.ckpt"))?,
            "reconstruction": report,
        }),
    )
}

// ------------------------------------------------------------------ generate

pub struct GenerateArgs {
    pub phrase_checkpoint: PathBuf,
    pub structure_checkpoint: PathBuf,
    pub out_dir: PathBuf,
    pub n_songs: usize,
    pub seed: u64,
    pub threshold: f64,
    pub delta_scale: f64,
    pub key_filter: bool,
    pub tempo: f64,
}

/// Sidecar written next to every generated MIDI file.
#[derive(Debug, Serialize, Deserialize)]
pub struct SongSidecar {
    pub song_index: usize,
    pub structure: String,
    pub n_bars: u32,
    pub seed: u64,
    pub phrase_seed: u64,
    pub policy: AssemblePolicy,
    pub phrase_checkpoint_sha256: String,
    pub structure_checkpoint_sha256: String,
}

fn load_vae(path: &Path, kind: ModelKind) -> CliResult<GraphVae> {
    let ckpt = Checkpoint::load(path).map_err(data_err)?;
    if ckpt.spec.kind != kind {
        return Err(CliError::Data(format!(
            "{} holds a {:?} model, expected {:?}",
            path.display(),
            ckpt.spec.kind,
            kind
        )));
    }
    ckpt.into_vae().map_err(data_err)
}

pub fn cmd_generate(args: &GenerateArgs) -> CliResult<()> {
    if args.n_songs == 0 {
        return Err(CliError::Usage("--n-songs must be positive".into()));
    }
    if !(0.0..=1.0).contains(&args.threshold) {
        return Err(CliError::Usage("--threshold must be in [0, 1]".into()));
    }
    let phrase_vae = load_vae(&args.phrase_checkpoint, ModelKind::Phrase)?;
    let structure_vae = load_vae(&args.structure_checkpoint, ModelKind::Song)?;
    let phrase_sha = sha256_file(&args.phrase_checkpoint)?;
    let structure_sha = sha256_file(&args.structure_checkpoint)?;
    std::fs::create_dir_all(&args.out_dir).map_err(data_err)?;
    let policy = AssemblePolicy {
        threshold: args.threshold,
        delta_scale: args.delta_scale,
        key_filter: args.key_filter,
        ..Default::default()
    };
    let mut structure_rng = rand_chacha::ChaCha8Rng::seed_from_u64(args.seed);
    for i in 0..args.n_songs {
        let z = sample_latent(&mut structure_rng, structure_vae.spec.latent_dim);
        let structure = generate_structure(&structure_vae, &z).map_err(data_err)?;
        let phrase_seed = args.seed.wrapping_add(0x9e37_79b9).wrapping_add(i as u64);
        let song = assemble_song(&structure, &phrase_vae, phrase_seed, &policy).map_err(data_err)?;
        let bytes = midi::render_midi(&song, args.tempo);
        let midi_path = args.out_dir.join(format!("song_{i:03}.mid"));
        std::fs::write(&midi_path, bytes).map_err(data_err)?;
        let sidecar = SongSidecar {
            song_index: i,
            structure: render_labels(&structure.phrases),
            n_bars: song.n_bars,
            seed: args.seed,
            phrase_seed,
            policy: policy.clone(),
            phrase_checkpoint_sha256: phrase_sha.clone(),
            structure_checkpoint_sha256: structure_sha.clone(),
        };
        let sidecar_path = args.out_dir.join(format!("song_{i:03}.json"));
        std::fs::write(&sidecar_path, serde_json::to_string_pretty(&sidecar).map_err(data_err)?)
            .map_err(data_err)?;
        println!(
            "song_{i:03}: {} ({} bars, {} notes)",
            sidecar.structure,
            song.n_bars,
            song.note_count()
        );
    }
    write_run_record(
        &args.out_dir,
        "generate",
        json!({
            "n_songs": args.n_songs,
            "seed": args.seed,
            "policy": policy,
            "tempo": args.tempo,
            "phrase_checkpoint_sha256": phrase_sha,
            "structure_checkpoint_sha256": structure_sha,
        }),
    )
}

// ------------------------------------------------------------------ evaluate

pub struct EvaluateArgs {
    pub corpus_a: PathBuf,
    pub corpus_b: PathBuf,
    pub out_dir: PathBuf,
    pub split: String,
    pub steps_per_bar: u32,
}

/// A corpus argument is either a dataset `manifest.json` or a directory
/// of (generated) MIDI files with optional structure sidecars.
fn load_corpus(path: &Path, split: &str, steps_per_bar: u32) -> CliResult<CorpusData> {
    if path.is_file() {
        load_manifest_corpus(path, split)
    } else if path.is_dir() {
        load_midi_dir_corpus(path, steps_per_bar)
    } else {
        Err(CliError::Data(format!("{} is neither a manifest nor a directory", path.display())))
    }
}

fn split_selected(split: &str, candidate: &str) -> bool {
    split == "all" || split == candidate
}

fn load_manifest_corpus(path: &Path, split: &str) -> CliResult<CorpusData> {
    let manifest = pipeline::load_manifest(path).map_err(data_err)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut corpus = CorpusData::default();
    for part in ["train", "val", "test"] {
        if !split_selected(split, part) {
            continue;
        }
        for (s, c) in pipeline::load_phrase_split(dir, &manifest, part).map_err(data_err)? {
            corpus
                .phrases
                .push(tensors_to_sample(&s, &c, manifest.steps_per_bar).map_err(data_err)?);
        }
    }
    for song in &manifest.songs {
        if !split_selected(split, &song.split) {
            continue;
        }
        let labels = parse_structure_labels(&song.labels).map_err(data_err)?;
        corpus.structures.push(SongStructure { phrases: labels, source_id: song.id.clone() });
    }
    Ok(corpus)
}

fn load_midi_dir_corpus(dir: &Path, steps_per_bar: u32) -> CliResult<CorpusData> {
    let mut corpus = CorpusData::default();
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| data_err(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("mid") || e.eq_ignore_ascii_case("midi"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Data(format!("no MIDI files in {}", dir.display())));
    }
    for path in paths {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("song").to_string();
        let bytes = std::fs::read(&path).map_err(|e| data_err(format!("{}: {e}", path.display())))?;
        let score = parse_midi(&bytes).map_err(data_err)?;
        let quantized = quantize(&score, steps_per_bar).map_err(data_err)?;
        let sidecar_path = path.with_extension("json");
        let labels: Vec<PhraseLabel> = if sidecar_path.exists() {
            let text = std::fs::read_to_string(&sidecar_path).map_err(data_err)?;
            let sidecar: SongSidecar = serde_json::from_str(&text)
                .map_err(|e| data_err(format!("{}: {e}", sidecar_path.display())))?;
            parse_structure_labels(&sidecar.structure).map_err(data_err)?
        } else {
            // no structure information: treat the whole file as one phrase
            vec![PhraseLabel::new('A', quantized.n_bars.max(1))]
        };
        let total: u32 = labels.iter().map(|l| l.length_bars).sum();
        let mut padded = quantized;
        if padded.n_bars < total {
            padded.n_bars = total; // trailing silent bars are real bars here
        }
        let slices = segment_phrases(&padded, &labels).map_err(data_err)?;
        for sample in split_to_4bar_unfiltered(&stem, &slices) {
            corpus.phrases.push(sample.score);
        }
        if sidecar_path.exists() {
            corpus
                .structures
                .push(truncate_structure_to(&labels, &stem, 12).map_err(data_err)?);
        }
    }
    Ok(corpus)
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> CliResult<()> {
    if !["all", "train", "val", "test"].contains(&args.split.as_str()) {
        return Err(CliError::Usage(format!("--split {:?} is not one of all/train/val/test", args.split)));
    }
    let a = load_corpus(&args.corpus_a, &args.split, args.steps_per_bar)?;
    let b = load_corpus(&args.corpus_b, &args.split, args.steps_per_bar)?;
    let report = corpus_report(&a, &b).map_err(data_err)?;
    std::fs::create_dir_all(&args.out_dir).map_err(data_err)?;
    let json_path = args.out_dir.join("report.json");
    std::fs::write(&json_path, serde_json::to_string_pretty(&report).map_err(data_err)?)
        .map_err(data_err)?;
    std::fs::write(args.out_dir.join("chord_profile_a.csv"), profile_csv(&report.a.chord_profile))
        .map_err(data_err)?;
    std::fs::write(args.out_dir.join("chord_profile_b.csv"), profile_csv(&report.b.chord_profile))
        .map_err(data_err)?;
    let table = render_comparison(&report, "corpus A", "corpus B");
    print!("{table}");
    println!("report written to {}", json_path.display());
    write_run_record(
        &args.out_dir,
        "evaluate",
        json!({
            "corpus_a": args.corpus_a,
            "corpus_b": args.corpus_b,
            "split": args.split,
            "n_phrases_a": report.a.n_phrases,
            "n_phrases_b": report.b.n_phrases,
        }),
    )
}

/// Writes a deterministic untrained checkpoint pair with small widths;
/// a fixture generator for smoke tests and demos.
pub fn cmd_toy_checkpoints(dir: &Path, seed: u64) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(data_err)?;
    let phrase = GraphVae::new(GraphSpec::tiny(ModelKind::Phrase), seed).map_err(data_err)?;
    let song = GraphVae::new(GraphSpec::tiny(ModelKind::Song), seed.wrapping_add(1)).map_err(data_err)?;
    let phrase_path = dir.join("phrase_toy.ckpt");
    let song_path = dir.join("structure_toy.ckpt");
    Checkpoint::from_vae(&phrase, 0).save(&phrase_path).map_err(data_err)?;
    Checkpoint::from_vae(&song, 0).save(&song_path).map_err(data_err)?;
    println!("{}", phrase_path.display());
    println!("{}", song_path.display());
    Ok(())
}
