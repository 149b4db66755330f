//! Standard MIDI File I/O and step-grid quantization.
//!
//! Scores always carry exactly three tracks in the fixed role order
//! Melody < Bridge < Piano. Quantization snaps note onsets and
//! durations onto a per-bar step grid (16 steps per bar by default)
//! and is restricted to 4/4 material.

mod parse;
mod write;

pub use parse::parse_midi;
pub use write::render_midi;

use thiserror::Error;

/// Default quantization grid: sixteenth notes in 4/4.
pub const DEFAULT_STEPS_PER_BAR: u32 = 16;

/// PPQ used for all rendered output files.
pub const RENDER_PPQ: u16 = 480;

/// Velocity stamped on every rendered note.
pub const RENDER_VELOCITY: u8 = 80;

#[derive(Debug, Error)]
pub enum MidiError {
    #[error("malformed MIDI data: {0}")]
    MalformedMidi(String),
    #[error("unsupported MIDI format: {0}")]
    UnsupportedFormat(String),
    #[error("score is not in 4/4 time")]
    NotFourFour,
}

/// The three instrument roles of a score, in fixed order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub enum TrackRole {
    Melody = 0,
    Bridge = 1,
    Piano = 2,
}

impl TrackRole {
    pub const ALL: [TrackRole; 3] = [TrackRole::Melody, TrackRole::Bridge, TrackRole::Piano];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            TrackRole::Melody => "MELODY",
            TrackRole::Bridge => "BRIDGE",
            TrackRole::Piano => "PIANO",
        }
    }

    /// Role claimed by a track name, if any (case-insensitive).
    pub fn from_name(name: &str) -> Option<TrackRole> {
        match name.trim().to_ascii_uppercase().as_str() {
            "MELODY" => Some(TrackRole::Melody),
            "BRIDGE" => Some(TrackRole::Bridge),
            "PIANO" => Some(TrackRole::Piano),
            _ => None,
        }
    }
}

/// A tick-timed note as read from a MIDI file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RawNote {
    /// MIDI pitch number, 0-127.
    pub pitch: u8,
    pub onset_ticks: u64,
    /// Always >= 1; zero-length on/off pairs are clamped up.
    pub duration_ticks: u64,
    /// 1-127.
    pub velocity: u8,
    /// Index of the role track this note belongs to (0-2).
    pub track_index: usize,
}

/// A time signature event: (tick, numerator, denominator).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeSignature {
    pub tick: u64,
    pub numerator: u8,
    pub denominator: u8,
}

/// A parsed score: three role tracks of tick-timed notes.
#[derive(Debug, Clone, PartialEq)]
pub struct Score {
    /// Ticks per quarter note.
    pub ppq: u16,
    pub tempo_bpm: f64,
    pub time_signatures: Vec<TimeSignature>,
    /// Indexed by [`TrackRole`]: Melody, Bridge, Piano.
    pub tracks: [Vec<RawNote>; 3],
}

impl Score {
    pub fn empty(ppq: u16) -> Score {
        Score {
            ppq,
            tempo_bpm: 120.0,
            time_signatures: Vec::new(),
            tracks: [Vec::new(), Vec::new(), Vec::new()],
        }
    }

    pub fn note_count(&self) -> usize {
        self.tracks.iter().map(Vec::len).sum()
    }
}

/// A note on the quantization grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct QNote {
    pub pitch: u8,
    pub onset_step: u32,
    /// Always >= 1.
    pub duration_steps: u32,
}

/// A score snapped onto a fixed per-bar step grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedScore {
    pub steps_per_bar: u32,
    pub n_bars: u32,
    /// Indexed by [`TrackRole`].
    pub tracks: [Vec<QNote>; 3],
}

impl QuantizedScore {
    pub fn empty(steps_per_bar: u32, n_bars: u32) -> QuantizedScore {
        QuantizedScore {
            steps_per_bar,
            n_bars,
            tracks: [Vec::new(), Vec::new(), Vec::new()],
        }
    }

    pub fn n_steps(&self) -> u32 {
        self.n_bars * self.steps_per_bar
    }

    pub fn note_count(&self) -> usize {
        self.tracks.iter().map(Vec::len).sum()
    }

    /// True iff `track` has at least one onset inside `bar`.
    pub fn bar_has_onset(&self, track: usize, bar: u32) -> bool {
        let lo = bar * self.steps_per_bar;
        let hi = lo + self.steps_per_bar;
        self.tracks[track]
            .iter()
            .any(|n| n.onset_step >= lo && n.onset_step < hi)
    }

    /// Sorts every track by (onset, pitch) - the canonical note order.
    pub fn normalize(&mut self) {
        for track in &mut self.tracks {
            track.sort_by_key(|n| (n.onset_step, n.pitch, n.duration_steps));
        }
    }
}

/// True iff every declared time signature is 4/4. A score with no
/// time-signature events counts as 4/4 (the SMF default).
pub fn is_four_four(score: &Score) -> bool {
    score
        .time_signatures
        .iter()
        .all(|ts| ts.numerator == 4 && ts.denominator == 4)
}

fn round_half_away(x: f64) -> u64 {
    // x is never negative here; `round` ties away from zero.
    x.round() as u64
}

/// Snaps a 4/4 score onto a `steps_per_bar` grid.
///
/// Onsets and durations round to the nearest step (ties away from
/// zero); durations clamp to at least one step. Notes that collide at
/// the same (track, onset step, pitch) after rounding are merged,
/// keeping the longer duration.
pub fn quantize(score: &Score, steps_per_bar: u32) -> Result<QuantizedScore, MidiError> {
    assert!(steps_per_bar > 0 && steps_per_bar % 4 == 0, "steps_per_bar must be a positive multiple of 4");
    if !is_four_four(score) {
        return Err(MidiError::NotFourFour);
    }
    let step_ticks = 4.0 * f64::from(score.ppq) / f64::from(steps_per_bar);
    let mut tracks: [Vec<QNote>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (t, notes) in score.tracks.iter().enumerate() {
        let mut quantized: Vec<QNote> = notes
            .iter()
            .map(|n| QNote {
                pitch: n.pitch,
                onset_step: round_half_away(n.onset_ticks as f64 / step_ticks) as u32,
                duration_steps: (round_half_away(n.duration_ticks as f64 / step_ticks) as u32).max(1),
            })
            .collect();
        quantized.sort_by_key(|n| (n.onset_step, n.pitch, std::cmp::Reverse(n.duration_steps)));
        quantized.dedup_by(|b, a| {
            // sorted longest-first within a (onset, pitch) group, so the kept
            // element already has the longer duration
            a.onset_step == b.onset_step && a.pitch == b.pitch
        });
        tracks[t] = quantized;
    }
    let max_end = tracks
        .iter()
        .flatten()
        .map(|n| u64::from(n.onset_step) + u64::from(n.duration_steps))
        .max()
        .unwrap_or(0);
    let n_bars = (max_end as u32).div_ceil(steps_per_bar);
    Ok(QuantizedScore {
        steps_per_bar,
        n_bars,
        tracks,
    })
}
