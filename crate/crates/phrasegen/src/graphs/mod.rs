//! Typed-edge graph representations for both hierarchy levels.
//!
//! Bar level: each node is a chord — all notes sharing one onset step
//! within one track — connected by Track edges (consecutive in the same
//! track), Onset edges (same onset across tracks), and Next edges (the
//! earliest strictly-later node in each other track). Phrase level:
//! each node is a labeled phrase in one of 12 slots, connected by Next
//! edges (consecutive phrases) and SameClass edges (consecutive phrases
//! of the same melodic/non-melodic class).
//!
//! Every graph also carries a boolean structure tensor `S` marking
//! which (track, position) cells hold a node, and a content tensor `C`
//! of per-node tokens. Both graph levels share the same tensor layout,
//! which is what the VAE consumes; [`tensors_to_sample`] and
//! [`tensors_to_structure`] invert decoded tensors back into music.

pub mod io;

use crate::corpus::{PhraseLabel, SongStructure};
use crate::midi::{QNote, QuantizedScore};
use std::collections::BTreeMap;
use thiserror::Error;

/// Maximum simultaneous notes kept per chord node.
pub const M_MAX: usize = 12;
/// Duration tokens run 1..=64 steps (a full 4-bar span at 16 steps/bar).
pub const MAX_DURATION_STEPS: u32 = 64;
/// Pitch vocabulary: MIDI pitches 0..=127 plus PAD.
pub const PITCH_PAD: u8 = 128;
pub const PITCH_VOCAB: usize = 129;
/// Duration vocabulary: PAD (0) plus 1..=64.
pub const DURATION_PAD: u8 = 0;
pub const DURATION_VOCAB: usize = 65;
/// Phrase slots in a song graph.
pub const SONG_SLOTS: usize = 12;
/// Phrase-type vocabulary: PAD, i, o, b, A, B, C, D, x.
pub const TYPE_VOCAB: usize = 9;
/// Length vocabulary: PAD plus 1..=32 bars.
pub const LENGTH_VOCAB: usize = 33;
pub const MAX_PHRASE_LENGTH_BARS: u32 = 32;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("tensor shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Boolean node-activation grid, `n_tracks` x `n_positions`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructureTensor {
    pub n_tracks: usize,
    pub n_positions: usize,
    data: Vec<bool>,
}

impl StructureTensor {
    pub fn zeros(n_tracks: usize, n_positions: usize) -> StructureTensor {
        StructureTensor { n_tracks, n_positions, data: vec![false; n_tracks * n_positions] }
    }

    pub fn get(&self, track: usize, pos: usize) -> bool {
        self.data[track * self.n_positions + pos]
    }

    pub fn set(&mut self, track: usize, pos: usize, value: bool) {
        self.data[track * self.n_positions + pos] = value;
    }

    pub fn count_active(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }
}

/// Per-cell content tokens, `n_tracks` x `n_positions` x `m_max` slots.
///
/// For phrase graphs the planes hold (pitch, duration) tokens; for song
/// graphs (`m_max` = 1) they hold (type, length) tokens. PAD fills
/// every slot not backed by a note.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContentTensor {
    pub n_tracks: usize,
    pub n_positions: usize,
    pub m_max: usize,
    pub pitch: Vec<u8>,
    pub duration: Vec<u8>,
}

impl ContentTensor {
    pub fn padded(n_tracks: usize, n_positions: usize, m_max: usize, pitch_pad: u8, duration_pad: u8) -> ContentTensor {
        let n = n_tracks * n_positions * m_max;
        ContentTensor {
            n_tracks,
            n_positions,
            m_max,
            pitch: vec![pitch_pad; n],
            duration: vec![duration_pad; n],
        }
    }

    pub fn slot(&self, track: usize, pos: usize, m: usize) -> usize {
        (track * self.n_positions + pos) * self.m_max + m
    }
}

/// Edge type indices shared by both graph levels. Phrase graphs use all
/// three; song graphs use Next and Within (their SameClass edges).
pub const EDGE_NEXT: usize = 0;
/// Consecutive nodes within one track (phrase) or one class row (song).
pub const EDGE_WITHIN: usize = 1;
pub const EDGE_ONSET: usize = 2;

pub type EdgeList = Vec<(u32, u32)>;

/// All notes sharing one onset step within one track.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChordNode {
    pub track: usize,
    pub onset_step: u32,
    /// (pitch, duration) sorted by pitch ascending, pitches distinct,
    /// at most [`M_MAX`] entries.
    pub notes: Vec<(u8, u32)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhraseGraph {
    pub nodes: Vec<ChordNode>,
    /// Indexed by [`EDGE_NEXT`], [`EDGE_WITHIN`], [`EDGE_ONSET`];
    /// undirected, stored as (lo, hi) pairs.
    pub edges: [EdgeList; 3],
    pub s: StructureTensor,
    pub c: ContentTensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SongGraph {
    /// One label per occupied slot, in slot order.
    pub phrases: Vec<PhraseLabel>,
    /// Indexed by [`EDGE_NEXT`], [`EDGE_WITHIN`] (= SameClass).
    pub edges: [EdgeList; 2],
    /// 2 x 12: row 0 melodic, row 1 non-melodic.
    pub s: StructureTensor,
    /// (type, length) tokens at each occupied (row, slot) cell.
    pub c: ContentTensor,
}

/// Groups a score's notes into chord nodes, ordered by (track, onset).
///
/// Duplicate pitches within a node keep the longer duration; nodes with
/// more than [`M_MAX`] notes keep the lowest pitches; durations clamp
/// to [`MAX_DURATION_STEPS`].
pub fn group_chords(score: &QuantizedScore) -> Vec<ChordNode> {
    let mut nodes = Vec::new();
    for (track, notes) in score.tracks.iter().enumerate() {
        let mut by_onset: BTreeMap<u32, Vec<(u8, u32)>> = BTreeMap::new();
        for n in notes {
            by_onset
                .entry(n.onset_step)
                .or_default()
                .push((n.pitch, n.duration_steps.clamp(1, MAX_DURATION_STEPS)));
        }
        for (onset_step, mut chord) in by_onset {
            chord.sort_by_key(|&(pitch, dur)| (pitch, std::cmp::Reverse(dur)));
            chord.dedup_by_key(|&mut (pitch, _)| pitch);
            chord.truncate(M_MAX);
            nodes.push(ChordNode { track, onset_step, notes: chord });
        }
    }
    nodes
}

/// Phrase-graph edges over (track, onset) cells in node order.
fn phrase_edges(cells: &[(usize, u32)]) -> [EdgeList; 3] {
    let mut next = Vec::new();
    let mut within = Vec::new();
    let mut onset = Vec::new();
    let n = cells.len();
    for i in 0..n {
        let (ti, si) = cells[i];
        for j in (i + 1)..n {
            let (tj, sj) = cells[j];
            if ti == tj {
                // cells are sorted by (track, onset): j is i's successor
                // within the track iff adjacent in the list
                if j == i + 1 {
                    within.push((i as u32, j as u32));
                }
            } else if si == sj {
                onset.push((i as u32, j as u32));
            }
        }
        // earliest strictly-later node in each other track
        for other in 0..3 {
            if other == ti {
                continue;
            }
            if let Some(j) = (0..n)
                .filter(|&j| cells[j].0 == other && cells[j].1 > si)
                .min_by_key(|&j| cells[j].1)
            {
                let pair = (i.min(j) as u32, i.max(j) as u32);
                next.push(pair);
            }
        }
    }
    next.sort_unstable();
    next.dedup();
    [next, within, onset]
}

/// Builds the full bar-level graph for a (usually 4-bar) score.
pub fn build_phrase_graph(score: &QuantizedScore) -> PhraseGraph {
    let nodes = group_chords(score);
    let cells: Vec<(usize, u32)> = nodes.iter().map(|n| (n.track, n.onset_step)).collect();
    let edges = phrase_edges(&cells);
    let n_positions = (score.n_bars * score.steps_per_bar) as usize;
    let mut s = StructureTensor::zeros(3, n_positions);
    let mut c = ContentTensor::padded(3, n_positions, M_MAX, PITCH_PAD, DURATION_PAD);
    for node in &nodes {
        s.set(node.track, node.onset_step as usize, true);
        for (m, &(pitch, dur)) in node.notes.iter().enumerate() {
            let slot = c.slot(node.track, node.onset_step as usize, m);
            c.pitch[slot] = pitch;
            c.duration[slot] = dur as u8;
        }
    }
    PhraseGraph { nodes, edges, s, c }
}

/// Reconstructs the active (track, onset) cells of a structure tensor
/// in canonical (track, position) order.
pub fn phrase_cells(s: &StructureTensor) -> Vec<(usize, u32)> {
    let mut cells = Vec::new();
    for track in 0..s.n_tracks {
        for pos in 0..s.n_positions {
            if s.get(track, pos) {
                cells.push((track, pos as u32));
            }
        }
    }
    cells
}

/// Derives phrase-graph edges from a structure tensor alone; the
/// decoder uses this to run graph convolutions over decoded structure.
pub fn phrase_edges_from_structure(s: &StructureTensor) -> [EdgeList; 3] {
    phrase_edges(&phrase_cells(s))
}

/// Token for a phrase label's type: PAD, i, o, b, A, B, C, D, x.
/// Melodic letters beyond D collapse to D; non-melodic letters other
/// than i/o/b collapse to x.
pub fn type_token(label: &PhraseLabel) -> u8 {
    use crate::corpus::PhraseClass::*;
    match label.phrase_class {
        Intro => 1,
        Outro => 2,
        Bridge => 3,
        Melodic => 4 + (label.letter as u8 - b'A').min(3),
        NonMelodic => 8,
    }
}

/// Inverse of [`type_token`]; `None` for PAD or out-of-vocabulary values.
pub fn type_letter(token: u8) -> Option<char> {
    match token {
        1 => Some('i'),
        2 => Some('o'),
        3 => Some('b'),
        4..=7 => Some((b'A' + token - 4) as char),
        8 => Some('x'),
        _ => None,
    }
}

/// Builds the phrase-level song graph from a (truncated) structure.
pub fn build_song_graph(structure: &SongStructure) -> SongGraph {
    let n = structure.phrases.len().min(SONG_SLOTS);
    let phrases = structure.phrases[..n].to_vec();
    let mut s = StructureTensor::zeros(2, SONG_SLOTS);
    let mut c = ContentTensor::padded(2, SONG_SLOTS, 1, 0, 0);
    for (slot, label) in phrases.iter().enumerate() {
        let row = if label.is_melodic() { 0 } else { 1 };
        s.set(row, slot, true);
        let idx = c.slot(row, slot, 0);
        c.pitch[idx] = type_token(label);
        c.duration[idx] = label.length_bars.min(MAX_PHRASE_LENGTH_BARS) as u8;
    }
    let mut next = Vec::new();
    let mut same_class = Vec::new();
    for p in 0..n {
        if p + 1 < n {
            next.push((p as u32, (p + 1) as u32));
        }
        if let Some(q) = (p + 1..n).find(|&q| phrases[q].is_melodic() == phrases[p].is_melodic()) {
            same_class.push((p as u32, q as u32));
        }
    }
    SongGraph { phrases, edges: [next, same_class], s, c }
}

/// Occupied slots of a song structure tensor in slot order, with the
/// melodic row winning when both rows are set. Returns (row, slot).
pub fn song_cells(s: &StructureTensor) -> Vec<(usize, u32)> {
    let mut cells = Vec::new();
    for slot in 0..s.n_positions {
        if s.get(0, slot) {
            cells.push((0, slot as u32));
        } else if s.get(1, slot) {
            cells.push((1, slot as u32));
        }
    }
    cells
}

/// Derives song-graph edges from a structure tensor alone.
pub fn song_edges_from_structure(s: &StructureTensor) -> [EdgeList; 2] {
    let cells = song_cells(s);
    let mut next = Vec::new();
    let mut same_class = Vec::new();
    for i in 0..cells.len() {
        if i + 1 < cells.len() {
            next.push((i as u32, (i + 1) as u32));
        }
        if let Some(j) = (i + 1..cells.len()).find(|&j| cells[j].0 == cells[i].0) {
            same_class.push((i as u32, j as u32));
        }
    }
    [next, same_class]
}

/// Inverts (S, C) tensors into a quantized score.
///
/// The exact inverse of [`build_phrase_graph`] on valid tensors. Slots
/// whose pitch or duration token is PAD are skipped; active cells left
/// with no notes are dropped; duplicate pitches keep the longer
/// duration.
pub fn tensors_to_sample(
    s: &StructureTensor,
    c: &ContentTensor,
    steps_per_bar: u32,
) -> Result<QuantizedScore, GraphError> {
    if s.n_tracks != 3 || c.n_tracks != 3 || s.n_positions != c.n_positions {
        return Err(GraphError::ShapeMismatch(format!(
            "expected 3 x N phrase tensors, got S {}x{}, C {}x{}",
            s.n_tracks, s.n_positions, c.n_tracks, c.n_positions
        )));
    }
    if s.n_positions % steps_per_bar as usize != 0 {
        return Err(GraphError::ShapeMismatch(format!(
            "{} positions not divisible by {} steps per bar",
            s.n_positions, steps_per_bar
        )));
    }
    let mut score = QuantizedScore::empty(steps_per_bar, (s.n_positions / steps_per_bar as usize) as u32);
    for track in 0..3 {
        for pos in 0..s.n_positions {
            if !s.get(track, pos) {
                continue;
            }
            let mut notes: Vec<(u8, u32)> = Vec::new();
            for m in 0..c.m_max {
                let slot = c.slot(track, pos, m);
                let (pitch, dur) = (c.pitch[slot], c.duration[slot]);
                if pitch == PITCH_PAD || dur == DURATION_PAD {
                    continue;
                }
                if pitch as usize >= PITCH_VOCAB || dur as usize >= DURATION_VOCAB {
                    return Err(GraphError::ShapeMismatch(format!(
                        "content token ({pitch}, {dur}) outside vocabulary"
                    )));
                }
                notes.push((pitch, u32::from(dur)));
            }
            notes.sort_by_key(|&(pitch, dur)| (pitch, std::cmp::Reverse(dur)));
            notes.dedup_by_key(|&mut (pitch, _)| pitch);
            for (pitch, dur) in notes {
                score.tracks[track].push(QNote { pitch, onset_step: pos as u32, duration_steps: dur });
            }
        }
    }
    score.normalize();
    Ok(score)
}

/// Inverts (S2, C) tensors into a song structure.
///
/// When both rows are set at a slot the melodic row wins; occupied
/// slots are compacted into a contiguous prefix; slots whose type or
/// length token is PAD are dropped. May return an empty structure for
/// degenerate tensors — generation guarantees at least one phrase.
pub fn tensors_to_structure(s: &StructureTensor, c: &ContentTensor) -> Result<SongStructure, GraphError> {
    if s.n_tracks != 2 || c.n_tracks != 2 || s.n_positions != c.n_positions || c.m_max != 1 {
        return Err(GraphError::ShapeMismatch(format!(
            "expected 2 x {SONG_SLOTS} song tensors, got S {}x{}, C {}x{}x{}",
            s.n_tracks, s.n_positions, c.n_tracks, c.n_positions, c.m_max
        )));
    }
    let mut phrases = Vec::new();
    for (row, slot) in song_cells(s) {
        let idx = c.slot(row, slot as usize, 0);
        let (type_tok, length_tok) = (c.pitch[idx], c.duration[idx]);
        if type_tok as usize >= TYPE_VOCAB || length_tok as usize >= LENGTH_VOCAB {
            return Err(GraphError::ShapeMismatch(format!(
                "structure token ({type_tok}, {length_tok}) outside vocabulary"
            )));
        }
        let Some(letter) = type_letter(type_tok) else { continue };
        if length_tok == 0 {
            continue;
        }
        phrases.push(PhraseLabel::new(letter, u32::from(length_tok)));
    }
    Ok(SongStructure { phrases, source_id: "decoded".to_string() })
}
