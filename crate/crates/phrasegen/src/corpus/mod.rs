//! Corpus preprocessing: phrase labels, segmentation, 4-bar samples,
//! and dataset splits.
//!
//! A song comes in as a quantized score plus a structure-label string
//! like `"i4A8B8o4"` (one letter per phrase, followed by its length in
//! bars). Songs are cut into labeled phrase slices, phrases longer
//! than four bars are split into consecutive 4-bar samples, and
//! samples containing two adjacent all-track-empty bars are dropped.

pub mod pipeline;

use crate::midi::{QNote, QuantizedScore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Hard cap on phrases kept per song.
pub const MAX_PHRASES: usize = 12;

/// Bars per phrase sample.
pub const SAMPLE_BARS: u32 = 4;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("bad label syntax: {0}")]
    BadLabelSyntax(String),
    #[error("labels claim {claimed} bars but the score has {available}")]
    LabelOverrun { claimed: u32, available: u32 },
    #[error("empty label list")]
    EmptyLabels,
    #[error("need at least 10 songs to split, got {0}")]
    TooFewSongs(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PhraseClass {
    Intro,
    Outro,
    Bridge,
    Melodic,
    NonMelodic,
}

/// One structure-label token: a phrase letter and its length in bars.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PhraseLabel {
    pub letter: char,
    pub length_bars: u32,
    pub phrase_class: PhraseClass,
}

impl PhraseLabel {
    pub fn new(letter: char, length_bars: u32) -> PhraseLabel {
        PhraseLabel {
            letter,
            length_bars,
            phrase_class: class_of(letter),
        }
    }

    pub fn is_melodic(&self) -> bool {
        self.phrase_class == PhraseClass::Melodic
    }
}

fn class_of(letter: char) -> PhraseClass {
    match letter {
        'i' => PhraseClass::Intro,
        'o' => PhraseClass::Outro,
        'b' => PhraseClass::Bridge,
        c if c.is_ascii_uppercase() => PhraseClass::Melodic,
        _ => PhraseClass::NonMelodic,
    }
}

/// A song's phrase sequence, truncated to [`MAX_PHRASES`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SongStructure {
    pub phrases: Vec<PhraseLabel>,
    pub source_id: String,
}

/// Where a phrase sample came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SampleSource {
    pub song_id: String,
    pub phrase_index: usize,
    pub segment_index: usize,
}

impl SampleSource {
    pub fn id(&self) -> String {
        format!("{}:p{}:s{}", self.song_id, self.phrase_index, self.segment_index)
    }
}

/// A 4-bar, 3-track slice of a song.
#[derive(Debug, Clone, PartialEq)]
pub struct PhraseSample {
    pub score: QuantizedScore,
    pub source: SampleSource,
    pub label: PhraseLabel,
}

/// Song-level membership in train/val/test.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn partition_of(&self, id: &str) -> Option<&'static str> {
        if self.train.iter().any(|x| x == id) {
            Some("train")
        } else if self.val.iter().any(|x| x == id) {
            Some("val")
        } else if self.test.iter().any(|x| x == id) {
            Some("test")
        } else {
            None
        }
    }
}

/// Parses a structure-label token stream such as `"i4A8B8o4"`.
///
/// Classes: `i` intro, `o` outro, `b` bridge, other uppercase melodic,
/// other lowercase non-melodic. ASCII whitespace between tokens is
/// tolerated.
pub fn parse_structure_labels(text: &str) -> Result<Vec<PhraseLabel>, CorpusError> {
    let mut labels = Vec::new();
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        if c.is_ascii_whitespace() {
            chars.next();
            continue;
        }
        if !c.is_ascii_alphabetic() {
            return Err(CorpusError::BadLabelSyntax(format!("unexpected character {c:?}")));
        }
        chars.next();
        let mut digits = String::new();
        while let Some(&d) = chars.peek() {
            if d.is_ascii_digit() {
                digits.push(d);
                chars.next();
            } else {
                break;
            }
        }
        if digits.is_empty() {
            return Err(CorpusError::BadLabelSyntax(format!("letter {c:?} without a bar count")));
        }
        let length_bars: u32 = digits
            .parse()
            .map_err(|_| CorpusError::BadLabelSyntax(format!("bar count {digits:?} out of range")))?;
        if length_bars == 0 {
            return Err(CorpusError::BadLabelSyntax(format!("zero-length phrase {c:?}")));
        }
        labels.push(PhraseLabel::new(c, length_bars));
    }
    Ok(labels)
}

/// Cuts a song into one score slice per label, in order.
///
/// Slice `k` covers bars `[sum(len[..k]), sum(len[..=k]))`. Onsets are
/// re-based to slice-local steps; notes overhanging the slice end are
/// clipped at the boundary. Notes beyond the labeled span are ignored.
pub fn segment_phrases(
    score: &QuantizedScore,
    labels: &[PhraseLabel],
) -> Result<Vec<(PhraseLabel, QuantizedScore)>, CorpusError> {
    let claimed: u32 = labels.iter().map(|l| l.length_bars).sum();
    if claimed > score.n_bars {
        return Err(CorpusError::LabelOverrun { claimed, available: score.n_bars });
    }
    let mut out = Vec::with_capacity(labels.len());
    let mut start_bar = 0u32;
    for label in labels {
        out.push((*label, slice_bars(score, start_bar, label.length_bars)));
        start_bar += label.length_bars;
    }
    Ok(out)
}

/// Copies bars `[start_bar, start_bar + n_bars)` into a new score with
/// local onsets, clipping durations at the slice end.
pub fn slice_bars(score: &QuantizedScore, start_bar: u32, n_bars: u32) -> QuantizedScore {
    let spb = score.steps_per_bar;
    let lo = start_bar * spb;
    let hi = lo + n_bars * spb;
    let mut slice = QuantizedScore::empty(spb, n_bars);
    for (t, notes) in score.tracks.iter().enumerate() {
        for n in notes {
            if n.onset_step >= lo && n.onset_step < hi {
                let onset = n.onset_step - lo;
                let duration = n.duration_steps.min(hi - n.onset_step);
                slice.tracks[t].push(QNote { pitch: n.pitch, onset_step: onset, duration_steps: duration });
            }
        }
    }
    slice
}

/// Splits labeled slices into 4-bar samples.
///
/// An `L`-bar slice yields `floor(L/4)` full samples front to back; a
/// trailing remainder of 1-3 bars is zero-padded to 4 bars. Segments
/// whose real content (before padding) has two adjacent all-track-empty
/// bars are dropped.
pub fn split_to_4bar(
    song_id: &str,
    slices: &[(PhraseLabel, QuantizedScore)],
) -> Vec<PhraseSample> {
    split_to_4bar_with_stats(song_id, slices).0
}

/// Like [`split_to_4bar`] but keeps hollow samples. Used when slicing
/// generated songs for evaluation, where empty bars are part of the
/// signal being measured.
pub fn split_to_4bar_unfiltered(
    song_id: &str,
    slices: &[(PhraseLabel, QuantizedScore)],
) -> Vec<PhraseSample> {
    split_impl(song_id, slices, false).0
}

/// Like [`split_to_4bar`], also returning how many samples the
/// hollow-bar rule dropped.
pub fn split_to_4bar_with_stats(
    song_id: &str,
    slices: &[(PhraseLabel, QuantizedScore)],
) -> (Vec<PhraseSample>, usize) {
    split_impl(song_id, slices, true)
}

fn split_impl(
    song_id: &str,
    slices: &[(PhraseLabel, QuantizedScore)],
    drop_hollow: bool,
) -> (Vec<PhraseSample>, usize) {
    let mut samples = Vec::new();
    let mut dropped = 0;
    for (phrase_index, (label, slice)) in slices.iter().enumerate() {
        let n_segments = slice.n_bars.div_ceil(SAMPLE_BARS);
        for segment_index in 0..n_segments {
            let start = segment_index * SAMPLE_BARS;
            let take = (slice.n_bars - start).min(SAMPLE_BARS);
            let mut score = slice_bars(slice, start, take);
            // the hollow rule looks at real content only, before padding
            if drop_hollow && has_adjacent_empty_bars(&score) {
                dropped += 1;
                continue;
            }
            score.n_bars = SAMPLE_BARS; // pad trailing remainders with empty bars
            score.normalize();
            samples.push(PhraseSample {
                score,
                source: SampleSource {
                    song_id: song_id.to_string(),
                    phrase_index,
                    segment_index: segment_index as usize,
                },
                label: *label,
            });
        }
    }
    (samples, dropped)
}

/// Renders labels back to their token-stream form, e.g. `"i4A8B8o4"`.
pub fn render_labels(labels: &[PhraseLabel]) -> String {
    labels
        .iter()
        .map(|l| format!("{}{}", l.letter, l.length_bars))
        .collect()
}

/// True (drop) iff two adjacent bars are both empty across all tracks.
pub fn drop_if_hollow(sample: &PhraseSample) -> bool {
    has_adjacent_empty_bars(&sample.score)
}

/// True iff some pair of adjacent bars has no onset in any track.
pub fn has_adjacent_empty_bars(score: &QuantizedScore) -> bool {
    let bar_empty = |bar: u32| (0..3).all(|t| !score.bar_has_onset(t, bar));
    (1..score.n_bars).any(|b| bar_empty(b - 1) && bar_empty(b))
}

/// Keeps the first [`MAX_PHRASES`] labels of a song.
pub fn truncate_structure(labels: &[PhraseLabel], source_id: &str) -> Result<SongStructure, CorpusError> {
    truncate_structure_to(labels, source_id, MAX_PHRASES)
}

/// Keeps the first `max_phrases` labels of a song.
pub fn truncate_structure_to(
    labels: &[PhraseLabel],
    source_id: &str,
    max_phrases: usize,
) -> Result<SongStructure, CorpusError> {
    if labels.is_empty() {
        return Err(CorpusError::EmptyLabels);
    }
    Ok(SongStructure {
        phrases: labels[..labels.len().min(max_phrases)].to_vec(),
        source_id: source_id.to_string(),
    })
}

/// Deterministic 70/20/10 split at song level.
///
/// Ids are sorted before the seeded shuffle, so membership depends only
/// on the id set and the seed, not on input order.
pub fn make_splits(ids: &[String], seed: u64) -> Result<DatasetSplit, CorpusError> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    if ids.len() < 10 {
        return Err(CorpusError::TooFewSongs(ids.len()));
    }
    let mut sorted: Vec<String> = ids.to_vec();
    sorted.sort();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    sorted.shuffle(&mut rng);

    let n = sorted.len() as f64;
    let n_train = (0.7 * n).round() as usize;
    let n_val = (0.2 * n).round() as usize;
    let train = sorted[..n_train].to_vec();
    let val = sorted[n_train..n_train + n_val].to_vec();
    let test = sorted[n_train + n_val..].to_vec();
    Ok(DatasetSplit { train, val, test, seed })
}
