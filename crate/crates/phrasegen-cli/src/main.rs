//! `phrasegen`: preprocess a labeled MIDI corpus, train the phrase and
//! song-structure VAEs, generate songs, and compare corpus statistics.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric
//! failure.

mod commands;
mod config;

use clap::{Parser, Subcommand, ValueEnum};
use config::ConfigFile;
use phrasegen::model::ModelKind;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> CliError {
        CliError::Usage(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    Phrase,
    Structure,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> ModelKind {
        match m {
            ModelArg::Phrase => ModelKind::Phrase,
            ModelArg::Structure => ModelKind::Song,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "phrasegen",
    about = "Hierarchical symbolic music pipeline: phrases and song structures",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse MIDI + structure labels into a tensor dataset with
    /// 70/20/10 song-level splits.
    Preprocess {
        /// Directory of .mid/.midi files.
        #[arg(long)]
        midi_dir: PathBuf,
        /// Directory holding one <stem>.txt label file per song.
        #[arg(long)]
        labels_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Grid resolution (multiple of 4).
        #[arg(long)]
        steps_per_bar: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
        /// Keep at most this many phrases per song (<= 12).
        #[arg(long)]
        max_phrases: Option<usize>,
        /// key = value config file; explicit flags win.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train the phrase or song-structure VAE on a preprocessed
    /// dataset.
    Train {
        /// Path to manifest.json from `preprocess`.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        model: ModelArg,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Initial learning rate.
        #[arg(long)]
        lr: Option<f64>,
        /// Steps with beta = 0 before KL annealing starts.
        #[arg(long)]
        beta_warmup: Option<u64>,
        #[arg(long)]
        beta_increment: Option<f64>,
        #[arg(long)]
        beta_interval: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Stop after this many weight updates even mid-epoch.
        #[arg(long)]
        max_steps: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Sample song structures and phrases from two checkpoints and
    /// write MIDI files plus JSON sidecars.
    Generate {
        #[arg(long)]
        phrase_checkpoint: PathBuf,
        #[arg(long)]
        structure_checkpoint: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        n_songs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Structure-activation threshold (notes below it stay off).
        #[arg(long)]
        threshold: Option<f64>,
        /// Latent perturbation between segments of one phrase.
        #[arg(long)]
        delta_scale: Option<f64>,
        /// Re-decode phrases whose key disagrees with the song
        /// majority.
        #[arg(long)]
        key_filter: bool,
        /// Tempo stamped on rendered files (BPM).
        #[arg(long)]
        tempo: Option<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Compare the corpus statistics of two corpora (dataset manifests
    /// or directories of MIDI files).
    Evaluate {
        /// manifest.json or a MIDI directory.
        #[arg(long)]
        corpus_a: PathBuf,
        #[arg(long)]
        corpus_b: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Which dataset split(s) to read from manifests.
        #[arg(long)]
        split: Option<String>,
        #[arg(long)]
        steps_per_bar: Option<u32>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write a pair of small untrained checkpoints (test fixture).
    #[command(hide = true)]
    ToyCheckpoints {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn load_config(path: &Option<PathBuf>) -> CliResult<ConfigFile> {
    match path {
        Some(p) => Ok(ConfigFile::load(p)?),
        None => Ok(ConfigFile::default()),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Preprocess {
            midi_dir,
            labels_dir,
            out_dir,
            mut steps_per_bar,
            mut seed,
            mut max_phrases,
            config,
        } => {
            let cfg = load_config(&config)?;
            cfg.fill(&mut steps_per_bar, "steps-per-bar")?;
            cfg.fill(&mut seed, "seed")?;
            cfg.fill(&mut max_phrases, "max-phrases")?;
            commands::cmd_preprocess(&commands::PreprocessArgs {
                midi_dir,
                labels_dir,
                out_dir,
                steps_per_bar: steps_per_bar.unwrap_or(16),
                seed: seed.unwrap_or(0),
                max_phrases: max_phrases.unwrap_or(12),
            })
        }
        Command::Train {
            manifest,
            model,
            out_dir,
            mut epochs,
            mut batch_size,
            mut lr,
            mut beta_warmup,
            mut beta_increment,
            mut beta_interval,
            mut seed,
            mut max_steps,
            config,
        } => {
            let cfg = load_config(&config)?;
            cfg.fill(&mut epochs, "epochs")?;
            cfg.fill(&mut batch_size, "batch-size")?;
            cfg.fill(&mut lr, "lr")?;
            cfg.fill(&mut beta_warmup, "beta-warmup")?;
            cfg.fill(&mut beta_increment, "beta-increment")?;
            cfg.fill(&mut beta_interval, "beta-interval")?;
            cfg.fill(&mut seed, "seed")?;
            cfg.fill(&mut max_steps, "max-steps")?;
            commands::cmd_train(&commands::TrainArgs {
                manifest,
                model: model.into(),
                out_dir,
                epochs,
                batch_size,
                lr,
                beta_warmup,
                beta_increment,
                beta_interval,
                seed: seed.unwrap_or(0),
                max_steps,
            })
        }
        Command::Generate {
            phrase_checkpoint,
            structure_checkpoint,
            out_dir,
            mut n_songs,
            mut seed,
            mut threshold,
            mut delta_scale,
            key_filter,
            mut tempo,
            config,
        } => {
            let cfg = load_config(&config)?;
            cfg.fill(&mut n_songs, "n-songs")?;
            cfg.fill(&mut seed, "seed")?;
            cfg.fill(&mut threshold, "threshold")?;
            cfg.fill(&mut delta_scale, "delta-scale")?;
            cfg.fill(&mut tempo, "tempo")?;
            commands::cmd_generate(&commands::GenerateArgs {
                phrase_checkpoint,
                structure_checkpoint,
                out_dir,
                n_songs: n_songs.unwrap_or(1),
                seed: seed.unwrap_or(0),
                threshold: threshold.unwrap_or(0.5),
                delta_scale: delta_scale.unwrap_or(0.1),
                key_filter,
                tempo: tempo.unwrap_or(120.0),
            })
        }
        Command::Evaluate {
            corpus_a,
            corpus_b,
            out_dir,
            mut split,
            mut steps_per_bar,
            config,
        } => {
            let cfg = load_config(&config)?;
            cfg.fill(&mut split, "split")?;
            cfg.fill(&mut steps_per_bar, "steps-per-bar")?;
            commands::cmd_evaluate(&commands::EvaluateArgs {
                corpus_a,
                corpus_b,
                out_dir,
                split: split.unwrap_or_else(|| "all".to_string()),
                steps_per_bar: steps_per_bar.unwrap_or(16),
            })
        }
        Command::ToyCheckpoints { out_dir, seed } => commands::cmd_toy_checkpoints(&out_dir, seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version as "errors" with successful exit
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}
