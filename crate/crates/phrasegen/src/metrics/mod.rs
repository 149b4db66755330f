//! Corpus statistics: empty-bar rates, used pitch classes, key-relative
//! chord/melody degree profiles, melody pitch entropy, and song
//! structure distributions, plus side-by-side comparison reports.

pub mod key;

pub use key::{best_key, chord_degree, pitch_class_histogram, Key, Mode};

use crate::corpus::SongStructure;
use crate::graphs::group_chords;
use crate::midi::{QuantizedScore, TrackRole};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("phrase has no notes, key is undefined")]
    EmptyPhrase,
    #[error("corpus is empty")]
    EmptyCorpus,
}

/// Percentage of bars with no onset in the given track, over a corpus
/// of phrases.
pub fn empty_bar_rate(phrases: &[QuantizedScore], track: usize) -> f64 {
    let mut total = 0u64;
    let mut empty = 0u64;
    for score in phrases {
        for bar in 0..score.n_bars {
            total += 1;
            if !score.bar_has_onset(track, bar) {
                empty += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        100.0 * empty as f64 / total as f64
    }
}

/// Distinct pitch classes a track uses inside one bar.
pub fn used_pitch_classes(score: &QuantizedScore, track: usize, bar: u32) -> usize {
    let lo = bar * score.steps_per_bar;
    let hi = lo + score.steps_per_bar;
    let mut seen = [false; 12];
    for n in &score.tracks[track] {
        if n.onset_step >= lo && n.onset_step < hi {
            seen[usize::from(n.pitch % 12)] = true;
        }
    }
    seen.iter().filter(|&&b| b).count()
}

/// Mean used-pitch-class count per bar for a track, over bars where the
/// track plays at all.
pub fn mean_used_pitch_classes(phrases: &[QuantizedScore], track: usize) -> f64 {
    let mut sum = 0usize;
    let mut bars = 0usize;
    for score in phrases {
        for bar in 0..score.n_bars {
            let upc = used_pitch_classes(score, track, bar);
            if upc > 0 {
                sum += upc;
                bars += 1;
            }
        }
    }
    if bars == 0 {
        0.0
    } else {
        sum as f64 / bars as f64
    }
}

/// Krumhansl-Schmuckler key inference over the phrase's
/// duration-weighted pitch-class histogram.
pub fn infer_key(score: &QuantizedScore) -> Result<Key, MetricsError> {
    if score.note_count() == 0 {
        return Err(MetricsError::EmptyPhrase);
    }
    Ok(best_key(&pitch_class_histogram(score)))
}

/// Shannon entropy (bits) of the melody-pitch distribution in one bar,
/// weighting distinct MIDI pitches by onset count. Empty bars score 0.
pub fn melody_pitch_entropy(score: &QuantizedScore, bar: u32) -> f64 {
    let lo = bar * score.steps_per_bar;
    let hi = lo + score.steps_per_bar;
    let mut counts: BTreeMap<u8, u32> = BTreeMap::new();
    for n in &score.tracks[TrackRole::Melody.index()] {
        if n.onset_step >= lo && n.onset_step < hi {
            *counts.entry(n.pitch).or_default() += 1;
        }
    }
    let total: u32 = counts.values().sum();
    if total == 0 {
        return 0.0;
    }
    let mut h = 0.0;
    for &c in counts.values() {
        let p = f64::from(c) / f64::from(total);
        h -= p * p.log2();
    }
    h
}

/// A 4 x 7 percent matrix (bar position x scale degree) plus the share
/// of events that matched a diatonic degree at all.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegreeProfile {
    /// `rows[bar][degree-1]`, each non-empty row summing to 100.
    pub rows: [[f64; 7]; 4],
    /// Raw counts behind the rows.
    pub counts: [[u64; 7]; 4],
    /// Percentage of events with a diatonic assignment.
    pub coverage: f64,
}

impl DegreeProfile {
    fn from_counts(counts: [[u64; 7]; 4], included: u64, excluded: u64) -> DegreeProfile {
        let mut rows = [[0.0; 7]; 4];
        for (bar, row) in counts.iter().enumerate() {
            let total: u64 = row.iter().sum();
            if total > 0 {
                for (d, &c) in row.iter().enumerate() {
                    rows[bar][d] = 100.0 * c as f64 / total as f64;
                }
            }
        }
        let coverage = if included + excluded == 0 {
            100.0
        } else {
            100.0 * included as f64 / (included + excluded) as f64
        };
        DegreeProfile { rows, counts, coverage }
    }
}

fn bar_of(score: &QuantizedScore, onset: u32) -> usize {
    ((onset / score.steps_per_bar) as usize).min(3)
}

/// Chord frequency by scale degree and bar position: every piano-track
/// chord node gets a degree by diatonic-triad template match against
/// the phrase's inferred key; non-diatonic nodes are excluded from
/// numerator and denominator. Phrases without notes are skipped.
pub fn chord_degree_profile(phrases: &[QuantizedScore]) -> DegreeProfile {
    let mut counts = [[0u64; 7]; 4];
    let mut included = 0u64;
    let mut excluded = 0u64;
    for score in phrases {
        let Ok(key) = infer_key(score) else { continue };
        for node in group_chords(score) {
            if node.track != TrackRole::Piano.index() {
                continue;
            }
            let mut pcs: Vec<u8> = node.notes.iter().map(|&(p, _)| p % 12).collect();
            pcs.sort_unstable();
            pcs.dedup();
            match chord_degree(&pcs, &key) {
                Some(degree) => {
                    counts[bar_of(score, node.onset_step)][degree - 1] += 1;
                    included += 1;
                }
                None => excluded += 1,
            }
        }
    }
    DegreeProfile::from_counts(counts, included, excluded)
}

/// Melody pitch-class frequency by scale degree and bar position;
/// non-diatonic pitches are excluded.
pub fn melody_degree_profile(phrases: &[QuantizedScore]) -> DegreeProfile {
    let mut counts = [[0u64; 7]; 4];
    let mut included = 0u64;
    let mut excluded = 0u64;
    for score in phrases {
        let Ok(key) = infer_key(score) else { continue };
        for n in &score.tracks[TrackRole::Melody.index()] {
            match key.degree_of(n.pitch % 12) {
                Some(degree) => {
                    counts[bar_of(score, n.onset_step)][degree - 1] += 1;
                    included += 1;
                }
                None => excluded += 1,
            }
        }
    }
    DegreeProfile::from_counts(counts, included, excluded)
}

/// Mean melody pitch entropy per bar position (empty bars count as 0).
pub fn mean_entropy_by_bar(phrases: &[QuantizedScore]) -> [f64; 4] {
    let mut sums = [0.0; 4];
    let mut n = 0usize;
    for score in phrases {
        for bar in 0..4u32 {
            sums[bar as usize] += melody_pitch_entropy(score, bar);
        }
        n += 1;
    }
    if n > 0 {
        for s in &mut sums {
            *s /= n as f64;
        }
    }
    sums
}

/// Mean and population standard deviation.
fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureStats {
    pub n_songs: usize,
    pub n_phrases_mean: f64,
    pub n_phrases_std: f64,
    pub u_phrases_mean: f64,
    pub u_phrases_std: f64,
    pub length_mean: f64,
    pub length_std: f64,
    /// Phrase length -> percent of all phrases.
    pub length_histogram: BTreeMap<u32, f64>,
    /// Phrase letter -> percent of all phrases.
    pub type_histogram: BTreeMap<char, f64>,
}

/// Distribution statistics over (already truncated) song structures.
pub fn song_structure_stats(structures: &[SongStructure]) -> StructureStats {
    let n_phrases: Vec<f64> = structures.iter().map(|s| s.phrases.len() as f64).collect();
    let u_phrases: Vec<f64> = structures
        .iter()
        .map(|s| {
            let mut distinct: Vec<(char, u32)> =
                s.phrases.iter().map(|p| (p.letter, p.length_bars)).collect();
            distinct.sort_unstable();
            distinct.dedup();
            distinct.len() as f64
        })
        .collect();
    let lengths: Vec<f64> = structures
        .iter()
        .flat_map(|s| s.phrases.iter().map(|p| f64::from(p.length_bars)))
        .collect();
    let total_phrases = lengths.len().max(1) as f64;
    let mut length_histogram = BTreeMap::new();
    let mut type_histogram = BTreeMap::new();
    for s in structures {
        for p in &s.phrases {
            *length_histogram.entry(p.length_bars).or_insert(0.0) += 100.0 / total_phrases;
            *type_histogram.entry(p.letter).or_insert(0.0) += 100.0 / total_phrases;
        }
    }
    let (n_mean, n_std) = mean_std(&n_phrases);
    let (u_mean, u_std) = mean_std(&u_phrases);
    let (l_mean, l_std) = mean_std(&lengths);
    StructureStats {
        n_songs: structures.len(),
        n_phrases_mean: n_mean,
        n_phrases_std: n_std,
        u_phrases_mean: u_mean,
        u_phrases_std: u_std,
        length_mean: l_mean,
        length_std: l_std,
        length_histogram,
        type_histogram,
    }
}

/// A corpus to report on: 4-bar phrases and/or song structures.
#[derive(Debug, Clone, Default)]
pub struct CorpusData {
    pub phrases: Vec<QuantizedScore>,
    pub structures: Vec<SongStructure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_phrases: usize,
    /// Per-track percentages in role order Melody, Bridge, Piano.
    pub empty_bar_rate: [f64; 3],
    /// Per-track mean used pitch classes per active bar.
    pub used_pitch_classes: [f64; 3],
    pub chord_profile: DegreeProfile,
    pub melody_profile: DegreeProfile,
    /// Mean melody pitch entropy per bar position (bits).
    pub entropy_by_bar: [f64; 4],
    pub structure: Option<StructureStats>,
}

/// Computes every phrase metric (and structure stats when structures
/// are present) for one corpus.
pub fn metrics_report(corpus: &CorpusData) -> MetricsReport {
    let phrases = &corpus.phrases;
    MetricsReport {
        n_phrases: phrases.len(),
        empty_bar_rate: [
            empty_bar_rate(phrases, 0),
            empty_bar_rate(phrases, 1),
            empty_bar_rate(phrases, 2),
        ],
        used_pitch_classes: [
            mean_used_pitch_classes(phrases, 0),
            mean_used_pitch_classes(phrases, 1),
            mean_used_pitch_classes(phrases, 2),
        ],
        chord_profile: chord_degree_profile(phrases),
        melody_profile: melody_degree_profile(phrases),
        entropy_by_bar: mean_entropy_by_bar(phrases),
        structure: (!corpus.structures.is_empty()).then(|| song_structure_stats(&corpus.structures)),
    }
}

/// Two corpora side by side with per-metric differences (b - a).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub a: MetricsReport,
    pub b: MetricsReport,
    pub deltas: MetricsDeltas,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsDeltas {
    pub empty_bar_rate: [f64; 3],
    pub used_pitch_classes: [f64; 3],
    pub chord_profile: [[f64; 7]; 4],
    pub melody_profile: [[f64; 7]; 4],
    pub entropy_by_bar: [f64; 4],
    pub n_phrases_mean: Option<f64>,
    pub u_phrases_mean: Option<f64>,
    pub length_mean: Option<f64>,
}

pub fn corpus_report(a: &CorpusData, b: &CorpusData) -> Result<ComparisonReport, MetricsError> {
    if a.phrases.is_empty() && a.structures.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    if b.phrases.is_empty() && b.structures.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let ra = metrics_report(a);
    let rb = metrics_report(b);
    let mut chord = [[0.0; 7]; 4];
    let mut melody = [[0.0; 7]; 4];
    for bar in 0..4 {
        for d in 0..7 {
            chord[bar][d] = rb.chord_profile.rows[bar][d] - ra.chord_profile.rows[bar][d];
            melody[bar][d] = rb.melody_profile.rows[bar][d] - ra.melody_profile.rows[bar][d];
        }
    }
    let deltas = MetricsDeltas {
        empty_bar_rate: std::array::from_fn(|i| rb.empty_bar_rate[i] - ra.empty_bar_rate[i]),
        used_pitch_classes: std::array::from_fn(|i| {
            rb.used_pitch_classes[i] - ra.used_pitch_classes[i]
        }),
        chord_profile: chord,
        melody_profile: melody,
        entropy_by_bar: std::array::from_fn(|i| rb.entropy_by_bar[i] - ra.entropy_by_bar[i]),
        n_phrases_mean: match (&ra.structure, &rb.structure) {
            (Some(sa), Some(sb)) => Some(sb.n_phrases_mean - sa.n_phrases_mean),
            _ => None,
        },
        u_phrases_mean: match (&ra.structure, &rb.structure) {
            (Some(sa), Some(sb)) => Some(sb.u_phrases_mean - sa.u_phrases_mean),
            _ => None,
        },
        length_mean: match (&ra.structure, &rb.structure) {
            (Some(sa), Some(sb)) => Some(sb.length_mean - sa.length_mean),
            _ => None,
        },
    };
    Ok(ComparisonReport { a: ra, b: rb, deltas })
}

/// Plain-text table of a comparison, shaped like the published metric
/// tables.
pub fn render_comparison(r: &ComparisonReport, name_a: &str, name_b: &str) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    let _ = writeln!(out, "Empty Bar (%) and Used Pitch Class per track");
    let _ = writeln!(out, "{:<12} {:>7} {:>7} {:>7}   {:>6} {:>6} {:>6}", "", "EB:M", "EB:B", "EB:P", "UPC:M", "UPC:B", "UPC:P");
    for (name, rep) in [(name_a, &r.a), (name_b, &r.b)] {
        let _ = writeln!(
            out,
            "{:<12} {:>7.2} {:>7.2} {:>7.2}   {:>6.2} {:>6.2} {:>6.2}",
            name,
            rep.empty_bar_rate[0],
            rep.empty_bar_rate[1],
            rep.empty_bar_rate[2],
            rep.used_pitch_classes[0],
            rep.used_pitch_classes[1],
            rep.used_pitch_classes[2],
        );
    }
    for (title, get) in [
        ("Chord degrees (%) by bar", true),
        ("Melody degrees (%) by bar", false),
    ] {
        let _ = writeln!(out, "\n{title}");
        let _ = writeln!(out, "{:<12} bar   I/1    II/2   III/3  IV/4   V/5    VI/6   VII/7", "");
        for (name, rep) in [(name_a, &r.a), (name_b, &r.b)] {
            let profile = if get { &rep.chord_profile } else { &rep.melody_profile };
            for (bar, row) in profile.rows.iter().enumerate() {
                let _ = write!(out, "{:<12} {:>3}  ", if bar == 0 { name } else { "" }, bar + 1);
                for v in row {
                    let _ = write!(out, "{v:>6.1} ");
                }
                let _ = writeln!(out);
            }
        }
    }
    let _ = writeln!(out, "\nMelody pitch entropy by bar (bits)");
    for (name, rep) in [(name_a, &r.a), (name_b, &r.b)] {
        let _ = writeln!(
            out,
            "{:<12} {:>6.3} {:>6.3} {:>6.3} {:>6.3}",
            name, rep.entropy_by_bar[0], rep.entropy_by_bar[1], rep.entropy_by_bar[2], rep.entropy_by_bar[3]
        );
    }
    for (name, rep) in [(name_a, &r.a), (name_b, &r.b)] {
        if let Some(s) = &rep.structure {
            let _ = writeln!(
                out,
                "\n{name} structures: N_phrases {:.2} +- {:.2}, U_phrases {:.2} +- {:.2}, length {:.2} +- {:.2}",
                s.n_phrases_mean, s.n_phrases_std, s.u_phrases_mean, s.u_phrases_std, s.length_mean, s.length_std
            );
        }
    }
    out
}

/// CSV export of a degree profile: one row per bar position.
pub fn profile_csv(profile: &DegreeProfile) -> String {
    let mut out = String::from("bar,d1,d2,d3,d4,d5,d6,d7\n");
    for (bar, row) in profile.rows.iter().enumerate() {
        out.push_str(&format!(
            "{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}\n",
            bar + 1,
            row[0],
            row[1],
            row[2],
            row[3],
            row[4],
            row[5],
            row[6]
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_structure_labels;
    use crate::midi::QNote;

    fn qnote(pitch: u8, onset: u32, dur: u32) -> QNote {
        QNote { pitch, onset_step: onset, duration_steps: dur }
    }

    fn phrase_with(melody: &[(u8, u32)], piano: &[(u8, u32)]) -> QuantizedScore {
        let mut q = QuantizedScore::empty(16, 4);
        for &(p, s) in melody {
            q.tracks[0].push(qnote(p, s, 2));
        }
        for &(p, s) in piano {
            q.tracks[2].push(qnote(p, s, 4));
        }
        q
    }

    #[test]
    fn empty_bar_rate_cases() {
        // one empty melody bar of four
        let q = phrase_with(&[(60, 0), (62, 16), (64, 32)], &[]);
        assert_eq!(empty_bar_rate(&[q.clone()], 0), 25.0);
        let full = phrase_with(&[(60, 0), (60, 16), (60, 32), (60, 48)], &[]);
        assert_eq!(empty_bar_rate(&[full], 0), 0.0);
        assert_eq!(empty_bar_rate(&[q], 1), 100.0);
    }

    #[test]
    fn upc_counts_distinct_classes() {
        // C4 E4 G4 C5 in one bar -> 3 distinct classes
        let q = phrase_with(&[(60, 0), (64, 2), (67, 4), (72, 6)], &[]);
        assert_eq!(used_pitch_classes(&q, 0, 0), 3);
        assert_eq!(used_pitch_classes(&q, 0, 1), 0);
        assert!((mean_used_pitch_classes(&[q], 0) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn key_of_c_major_scale() {
        let scale: Vec<(u8, u32)> = [60, 62, 64, 65, 67, 69, 71, 72]
            .iter()
            .enumerate()
            .map(|(i, &p)| (p, (i * 2) as u32))
            .collect();
        let q = phrase_with(&scale, &[]);
        let key = infer_key(&q).unwrap();
        assert_eq!(key, Key { tonic: 0, mode: Mode::Major });
    }

    #[test]
    fn key_inference_is_transposition_equivariant() {
        let scale: Vec<(u8, u32)> = [60, 62, 64, 65, 67, 69, 71, 72]
            .iter()
            .enumerate()
            .map(|(i, &p)| (p, (i * 2) as u32))
            .collect();
        for shift in 0..12u8 {
            let moved: Vec<(u8, u32)> = scale.iter().map(|&(p, s)| (p + shift, s)).collect();
            let key = infer_key(&phrase_with(&moved, &[])).unwrap();
            assert_eq!(key.tonic, shift % 12, "shift {shift}");
            assert_eq!(key.mode, Mode::Major);
        }
    }

    #[test]
    fn single_pitch_key_matches_brute_force_oracle() {
        // independent oracle: recompute all 24 correlations directly
        let q = phrase_with(&[(69, 0)], &[]); // A4
        let inferred = infer_key(&q).unwrap();
        let hist = pitch_class_histogram(&q);
        let mut expect = Key { tonic: 0, mode: Mode::Major };
        let mut best = f64::NEG_INFINITY;
        for tonic in 0..12u8 {
            for mode in [Mode::Major, Mode::Minor] {
                let profile = match mode {
                    Mode::Major => key::KK_MAJOR,
                    Mode::Minor => key::KK_MINOR,
                };
                let mut rotated = [0.0f64; 12];
                for (pc, r) in rotated.iter_mut().enumerate() {
                    *r = profile[(pc + 12 - tonic as usize) % 12];
                }
                let score = key::correlation(&hist, &rotated);
                if score > best {
                    best = score;
                    expect = Key { tonic, mode };
                }
            }
        }
        assert_eq!(inferred, expect);
        assert_eq!(inferred.tonic, 9, "single A should pick a tonic-A key under argmax");
    }

    #[test]
    fn empty_phrase_has_no_key() {
        let q = QuantizedScore::empty(16, 4);
        assert!(matches!(infer_key(&q), Err(MetricsError::EmptyPhrase)));
    }

    #[test]
    fn entropy_closed_forms() {
        let two_even = phrase_with(&[(60, 0), (60, 2), (67, 4), (67, 6)], &[]);
        assert!((melody_pitch_entropy(&two_even, 0) - 1.0).abs() < 1e-12);
        let single = phrase_with(&[(60, 0), (60, 2), (60, 4)], &[]);
        assert_eq!(melody_pitch_entropy(&single, 0), 0.0);
        let four = phrase_with(&[(60, 0), (62, 2), (64, 4), (66, 6)], &[]);
        assert!((melody_pitch_entropy(&four, 0) - 2.0).abs() < 1e-12);
        assert_eq!(melody_pitch_entropy(&single, 3), 0.0);
    }

    #[test]
    fn chord_profile_single_chord_corpus() {
        // tonic-heavy C-major melody so the key is unambiguous, then a
        // G-B-D chord in bar 0 of the piano
        let mut q = QuantizedScore::empty(16, 4);
        q.tracks[0].extend([
            qnote(60, 0, 8),
            qnote(64, 8, 4),
            qnote(67, 12, 4),
            qnote(60, 16, 8),
            qnote(65, 24, 4),
            qnote(62, 28, 4),
            qnote(69, 32, 4),
            qnote(71, 36, 4),
            qnote(72, 40, 8),
            qnote(60, 48, 16),
        ]);
        for p in [55u8, 59, 62] {
            q.tracks[2].push(qnote(p, 0, 2));
        }
        assert_eq!(infer_key(&q).unwrap(), Key { tonic: 0, mode: Mode::Major });
        let profile = chord_degree_profile(&[q]);
        assert_eq!(profile.rows[0][4], 100.0, "V should own bar 1: {:?}", profile.rows[0]);
        assert_eq!(profile.counts[0][4], 1);
        assert_eq!(profile.coverage, 100.0);
    }

    #[test]
    fn melody_profile_spec_example() {
        // key C pinned by tonic-heavy bars 0/2/3, then {E, E, G} in bar 1
        let mut q = QuantizedScore::empty(16, 4);
        q.tracks[0].extend([
            qnote(60, 0, 12),
            qnote(67, 12, 4),
            qnote(64, 16, 2),
            qnote(64, 18, 2),
            qnote(67, 20, 2),
            qnote(60, 32, 16),
            qnote(65, 48, 4),
            qnote(62, 52, 4),
            qnote(71, 56, 4),
            qnote(60, 60, 4),
        ]);
        assert_eq!(infer_key(&q).unwrap(), Key { tonic: 0, mode: Mode::Major });
        let profile = melody_degree_profile(&[q]);
        assert!((profile.rows[1][2] - 200.0 / 3.0).abs() < 1e-9);
        assert!((profile.rows[1][4] - 100.0 / 3.0).abs() < 1e-9);
        let row_sum: f64 = profile.rows[1].iter().sum();
        assert!((row_sum - 100.0).abs() < 1e-6);
    }

    #[test]
    fn structure_stats_spec_example() {
        let labels = parse_structure_labels("i4A8A8B8o4").unwrap();
        let stats = song_structure_stats(&[SongStructure { phrases: labels, source_id: "s".into() }]);
        assert_eq!(stats.n_phrases_mean, 5.0);
        assert_eq!(stats.u_phrases_mean, 4.0);
        assert_eq!(stats.length_histogram[&8], 60.0);
        assert_eq!(stats.length_histogram[&4], 40.0);
        assert_eq!(stats.n_phrases_std, 0.0);
    }

    #[test]
    fn corpus_vs_itself_has_zero_deltas() {
        let q = phrase_with(&[(60, 0), (64, 8), (67, 16), (72, 32)], &[(48, 0), (55, 16)]);
        let labels = parse_structure_labels("i4A8").unwrap();
        let corpus = CorpusData {
            phrases: vec![q],
            structures: vec![SongStructure { phrases: labels, source_id: "x".into() }],
        };
        let cmp = corpus_report(&corpus, &corpus).unwrap();
        assert!(cmp.deltas.empty_bar_rate.iter().all(|&d| d == 0.0));
        assert!(cmp.deltas.used_pitch_classes.iter().all(|&d| d == 0.0));
        assert!(cmp.deltas.entropy_by_bar.iter().all(|&d| d == 0.0));
        assert_eq!(cmp.deltas.n_phrases_mean, Some(0.0));
        let text = render_comparison(&cmp, "a", "b");
        assert!(text.contains("Empty Bar"));
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let empty = CorpusData::default();
        let full = CorpusData { phrases: vec![phrase_with(&[(60, 0)], &[])], structures: vec![] };
        assert!(matches!(corpus_report(&empty, &full), Err(MetricsError::EmptyCorpus)));
    }

    #[test]
    fn profile_rows_sum_to_hundred() {
        let mut phrases = Vec::new();
        for seed in 0..5u8 {
            let melody: Vec<(u8, u32)> =
                (0..8).map(|i| (57 + ((seed + i) % 14), (i as u32) * 7 % 64)).collect();
            let piano: Vec<(u8, u32)> = (0..4).map(|i| (40 + ((seed + i) % 10), (i as u32) * 16)).collect();
            phrases.push(phrase_with(&melody, &piano));
        }
        for profile in [chord_degree_profile(&phrases), melody_degree_profile(&phrases)] {
            for row in &profile.rows {
                let sum: f64 = row.iter().sum();
                assert!(sum == 0.0 || (sum - 100.0).abs() < 1e-6, "row sums to {sum}");
            }
        }
    }
}
