//! Directory-level preprocessing: MIDI + label files in, dataset
//! manifest + tensor files out.
//!
//! Input layout: a directory of `.mid`/`.midi` files and a labels
//! directory holding one `<stem>.txt` structure-label file per song.
//! Output: `manifest.json` plus one phrase-tensor and one song-tensor
//! file per split.
//!
//! The phrase dataset keeps 4/4 songs only; the song-structure dataset
//! keeps every song with parseable labels, since phrase types and
//! lengths do not depend on the meter.

use super::{
    make_splits, parse_structure_labels, render_labels, segment_phrases, split_to_4bar_with_stats,
    truncate_structure_to, DatasetSplit, PhraseLabel, PhraseSample, SongStructure,
};
use crate::graphs::{build_phrase_graph, build_song_graph, io as tensor_io, ContentTensor, StructureTensor};
use crate::midi::{is_four_four, parse_midi, quantize};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("no MIDI files found in {0}")]
    EmptyInput(PathBuf),
    #[error(transparent)]
    Corpus(#[from] super::CorpusError),
    #[error(transparent)]
    TensorIo(#[from] tensor_io::TensorIoError),
    #[error("manifest error: {0}")]
    Manifest(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy)]
pub struct PreprocessConfig {
    pub steps_per_bar: u32,
    pub seed: u64,
    pub max_phrases: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig { steps_per_bar: 16, seed: 0, max_phrases: super::MAX_PHRASES }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct PreprocessStats {
    pub songs_in: usize,
    pub songs_four_four: usize,
    pub songs_failed: Vec<FailedSong>,
    pub phrases_labeled: usize,
    pub samples_emitted: usize,
    pub hollow_dropped: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FailedSong {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SampleEntry {
    pub id: String,
    pub song_id: String,
    pub phrase_index: usize,
    pub segment_index: usize,
    pub label: PhraseLabel,
    pub split: String,
    /// Position inside the split's phrase tensor file.
    pub index_in_split: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SongEntry {
    pub id: String,
    pub labels: String,
    pub n_phrases: usize,
    pub split: String,
    /// Position inside the split's song tensor file.
    pub index_in_split: usize,
}

/// The dataset manifest written next to the tensor files.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub steps_per_bar: u32,
    pub max_phrases: usize,
    pub stats: PreprocessStats,
    pub split: DatasetSplit,
    /// split name -> tensor file name, relative to the manifest.
    pub phrase_files: BTreeMap<String, String>,
    pub song_files: BTreeMap<String, String>,
    pub samples: Vec<SampleEntry>,
    pub songs: Vec<SongEntry>,
}

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_NAME: &str = "manifest.json";

/// One song's preprocessing output.
struct SongResult {
    id: String,
    four_four: bool,
    samples: Vec<PhraseSample>,
    structure: Option<SongStructure>,
    n_labels: usize,
    hollow_dropped: usize,
    error: Option<String>,
}

fn process_song(
    id: &str,
    midi_bytes: &[u8],
    label_text: &str,
    cfg: &PreprocessConfig,
) -> SongResult {
    let mut result = SongResult {
        id: id.to_string(),
        four_four: false,
        samples: Vec::new(),
        structure: None,
        n_labels: 0,
        hollow_dropped: 0,
        error: None,
    };
    let labels = match parse_structure_labels(label_text) {
        Ok(l) if !l.is_empty() => l,
        Ok(_) => {
            result.error = Some("empty label file".into());
            return result;
        }
        Err(e) => {
            result.error = Some(e.to_string());
            return result;
        }
    };
    result.n_labels = labels.len();
    result.structure = truncate_structure_to(&labels, id, cfg.max_phrases).ok();

    let score = match parse_midi(midi_bytes) {
        Ok(s) => s,
        Err(e) => {
            result.error = Some(e.to_string());
            return result;
        }
    };
    if !is_four_four(&score) {
        return result; // structure kept, phrase samples skipped
    }
    result.four_four = true;
    let quantized = match quantize(&score, cfg.steps_per_bar) {
        Ok(q) => q,
        Err(e) => {
            result.error = Some(e.to_string());
            return result;
        }
    };
    match segment_phrases(&quantized, &labels) {
        Ok(slices) => {
            let (samples, dropped) = split_to_4bar_with_stats(id, &slices);
            result.samples = samples;
            result.hollow_dropped = dropped;
        }
        Err(e) => result.error = Some(e.to_string()),
    }
    result
}

/// Lists `(song_id, midi_path, label_path)` triplets, sorted by id.
fn discover_songs(midi_dir: &Path, labels_dir: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>, PipelineError> {
    let mut songs = Vec::new();
    for entry in std::fs::read_dir(midi_dir).map_err(io_err(midi_dir))? {
        let entry = entry.map_err(io_err(midi_dir))?;
        let path = entry.path();
        let is_midi = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("mid") || e.eq_ignore_ascii_case("midi"));
        if !is_midi {
            continue;
        }
        let stem = match path.file_stem().and_then(|s| s.to_str()) {
            Some(s) => s.to_string(),
            None => continue,
        };
        let label_path = labels_dir.join(format!("{stem}.txt"));
        songs.push((stem, path, label_path));
    }
    songs.sort();
    if songs.is_empty() {
        return Err(PipelineError::EmptyInput(midi_dir.to_path_buf()));
    }
    Ok(songs)
}

/// Runs the whole preprocessing pipeline and writes `manifest.json`
/// plus tensor files under `out_dir`. Deterministic for a fixed input
/// set and seed.
pub fn preprocess_dirs(
    midi_dir: &Path,
    labels_dir: &Path,
    out_dir: &Path,
    cfg: &PreprocessConfig,
) -> Result<Manifest, PipelineError> {
    let songs = discover_songs(midi_dir, labels_dir)?;
    let results: Vec<SongResult> = songs
        .par_iter()
        .map(|(id, midi_path, label_path)| {
            let midi_bytes = match std::fs::read(midi_path) {
                Ok(b) => b,
                Err(e) => {
                    return SongResult {
                        id: id.clone(),
                        four_four: false,
                        samples: Vec::new(),
                        structure: None,
                        n_labels: 0,
                        hollow_dropped: 0,
                        error: Some(format!("cannot read MIDI: {e}")),
                    }
                }
            };
            let label_text = match std::fs::read_to_string(label_path) {
                Ok(t) => t,
                Err(e) => {
                    return SongResult {
                        id: id.clone(),
                        four_four: false,
                        samples: Vec::new(),
                        structure: None,
                        n_labels: 0,
                        hollow_dropped: 0,
                        error: Some(format!("cannot read labels: {e}")),
                    }
                }
            };
            process_song(id, &midi_bytes, &label_text, cfg)
        })
        .collect();
    build_dataset(results, out_dir, cfg)
}

fn build_dataset(
    results: Vec<SongResult>,
    out_dir: &Path,
    cfg: &PreprocessConfig,
) -> Result<Manifest, PipelineError> {
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;

    let mut stats = PreprocessStats { songs_in: results.len(), ..Default::default() };
    let kept: Vec<&SongResult> = results
        .iter()
        .filter(|r| {
            if let Some(reason) = &r.error {
                stats.songs_failed.push(FailedSong { id: r.id.clone(), reason: reason.clone() });
            }
            r.structure.is_some() || !r.samples.is_empty()
        })
        .collect();
    stats.songs_four_four = kept.iter().filter(|r| r.four_four).count();
    stats.phrases_labeled = kept.iter().map(|r| r.n_labels).sum();
    stats.samples_emitted = kept.iter().map(|r| r.samples.len()).sum();
    stats.hollow_dropped = kept.iter().map(|r| r.hollow_dropped).sum();

    let song_ids: Vec<String> = kept.iter().map(|r| r.id.clone()).collect();
    let split = make_splits(&song_ids, cfg.seed)?;

    let mut samples = Vec::new();
    let mut song_entries = Vec::new();
    let mut phrase_tensors: BTreeMap<String, Vec<(StructureTensor, ContentTensor)>> = BTreeMap::new();
    let mut song_tensors: BTreeMap<String, Vec<(StructureTensor, ContentTensor)>> = BTreeMap::new();
    for part in ["train", "val", "test"] {
        phrase_tensors.insert(part.into(), Vec::new());
        song_tensors.insert(part.into(), Vec::new());
    }

    for result in &kept {
        let part = split
            .partition_of(&result.id)
            .ok_or_else(|| PipelineError::Manifest(format!("song {} missing from split", result.id)))?;
        for sample in &result.samples {
            let graph = build_phrase_graph(&sample.score);
            let bucket = phrase_tensors.get_mut(part).unwrap();
            samples.push(SampleEntry {
                id: sample.source.id(),
                song_id: sample.source.song_id.clone(),
                phrase_index: sample.source.phrase_index,
                segment_index: sample.source.segment_index,
                label: sample.label,
                split: part.to_string(),
                index_in_split: bucket.len(),
            });
            bucket.push((graph.s, graph.c));
        }
        if let Some(structure) = &result.structure {
            let graph = build_song_graph(structure);
            let bucket = song_tensors.get_mut(part).unwrap();
            song_entries.push(SongEntry {
                id: result.id.clone(),
                labels: render_labels(&structure.phrases),
                n_phrases: structure.phrases.len(),
                split: part.to_string(),
                index_in_split: bucket.len(),
            });
            bucket.push((graph.s, graph.c));
        }
    }

    let mut phrase_files = BTreeMap::new();
    let mut song_files = BTreeMap::new();
    for part in ["train", "val", "test"] {
        let phrase_name = format!("phrase_{part}.tensors");
        tensor_io::write_tensor_file(&out_dir.join(&phrase_name), &phrase_tensors[part])?;
        phrase_files.insert(part.to_string(), phrase_name);
        let song_name = format!("song_{part}.tensors");
        tensor_io::write_tensor_file(&out_dir.join(&song_name), &song_tensors[part])?;
        song_files.insert(part.to_string(), song_name);
    }

    let manifest = Manifest {
        version: MANIFEST_VERSION,
        seed: cfg.seed,
        steps_per_bar: cfg.steps_per_bar,
        max_phrases: cfg.max_phrases,
        stats,
        split,
        phrase_files,
        song_files,
        samples,
        songs: song_entries,
    };
    let manifest_path = out_dir.join(MANIFEST_NAME);
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| PipelineError::Manifest(e.to_string()))?;
    std::fs::write(&manifest_path, json).map_err(io_err(&manifest_path))?;
    Ok(manifest)
}

pub fn load_manifest(path: &Path) -> Result<Manifest, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Manifest(e.to_string()))
}

/// Loads one split's phrase tensors, in manifest order.
pub fn load_phrase_split(
    manifest_dir: &Path,
    manifest: &Manifest,
    split: &str,
) -> Result<Vec<(StructureTensor, ContentTensor)>, PipelineError> {
    let name = manifest
        .phrase_files
        .get(split)
        .ok_or_else(|| PipelineError::Manifest(format!("no phrase file for split {split:?}")))?;
    Ok(tensor_io::read_tensor_file(&manifest_dir.join(name))?)
}

/// Loads one split's song tensors, in manifest order.
pub fn load_song_split(
    manifest_dir: &Path,
    manifest: &Manifest,
    split: &str,
) -> Result<Vec<(StructureTensor, ContentTensor)>, PipelineError> {
    let name = manifest
        .song_files
        .get(split)
        .ok_or_else(|| PipelineError::Manifest(format!("no song file for split {split:?}")))?;
    Ok(tensor_io::read_tensor_file(&manifest_dir.join(name))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::midi::{render_midi, QNote, QuantizedScore};

    /// Builds a deterministic little corpus on disk: `n` songs, each
    /// 12 bars labeled "i4A8", every bar carrying melody and piano
    /// onsets.
    pub fn write_fixture_corpus(root: &Path, n: usize) -> (PathBuf, PathBuf) {
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
                q.tracks[2].push(QNote { pitch: 40, onset_step: bar * 16, duration_steps: 8 });
            }
            std::fs::write(midi_dir.join(format!("song{i:03}.mid")), render_midi(&q, 120.0)).unwrap();
            std::fs::write(labels_dir.join(format!("song{i:03}.txt")), "i4A8").unwrap();
        }
        (midi_dir, labels_dir)
    }

    #[test]
    fn fixture_corpus_preprocesses_deterministically() {
        let tmp = tempfile::tempdir().unwrap();
        let (midi_dir, labels_dir) = write_fixture_corpus(tmp.path(), 12);
        let out1 = tmp.path().join("out1");
        let out2 = tmp.path().join("out2");
        let cfg = PreprocessConfig { seed: 3, ..Default::default() };
        let m1 = preprocess_dirs(&midi_dir, &labels_dir, &out1, &cfg).unwrap();
        let m2 = preprocess_dirs(&midi_dir, &labels_dir, &out2, &cfg).unwrap();
        assert_eq!(m1, m2);

        // 12 songs, each i4 + A8 -> 1 + 2 = 3 samples, nothing hollow
        assert_eq!(m1.stats.songs_in, 12);
        assert_eq!(m1.stats.songs_four_four, 12);
        assert_eq!(m1.stats.samples_emitted, 36);
        assert_eq!(m1.stats.hollow_dropped, 0);
        assert_eq!(m1.samples.len(), 36);
        assert_eq!(m1.songs.len(), 12);
        let (tr, va, te) = (m1.split.train.len(), m1.split.val.len(), m1.split.test.len());
        assert_eq!((tr, va, te), (8, 2, 2));

        // tensor files agree with the manifest index
        let train = load_phrase_split(&out1, &m1, "train").unwrap();
        let n_train = m1.samples.iter().filter(|s| s.split == "train").count();
        assert_eq!(train.len(), n_train);
        let songs_train = load_song_split(&out1, &m1, "train").unwrap();
        assert_eq!(songs_train.len(), tr);
    }

    #[test]
    fn bad_songs_are_reported_not_fatal() {
        let tmp = tempfile::tempdir().unwrap();
        let (midi_dir, labels_dir) = write_fixture_corpus(tmp.path(), 11);
        // corrupt one label file
        std::fs::write(labels_dir.join("song000.txt"), "A0").unwrap();
        let out = tmp.path().join("out");
        let m = preprocess_dirs(&midi_dir, &labels_dir, &out, &PreprocessConfig::default()).unwrap();
        assert_eq!(m.stats.songs_failed.len(), 1);
        assert_eq!(m.stats.songs_failed[0].id, "song000");
        assert_eq!(m.songs.len(), 10);
    }

    #[test]
    fn empty_input_dir_is_an_error() {
        let tmp = tempfile::tempdir().unwrap();
        let midi_dir = tmp.path().join("midi");
        std::fs::create_dir_all(&midi_dir).unwrap();
        let result = preprocess_dirs(&midi_dir, tmp.path(), &tmp.path().join("out"), &PreprocessConfig::default());
        assert!(matches!(result, Err(PipelineError::EmptyInput(_))));
    }
}
