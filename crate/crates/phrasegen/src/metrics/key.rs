//! Krumhansl-Schmuckler key finding and scale-degree assignment.

use crate::midi::QuantizedScore;
use serde::{Deserialize, Serialize};

/// Krumhansl-Kessler major profile, C at index 0.
pub const KK_MAJOR: [f64; 12] =
    [6.35, 2.23, 3.48, 2.33, 4.38, 4.09, 2.52, 5.19, 2.39, 3.66, 2.29, 2.88];
/// Krumhansl-Kessler minor profile, C at index 0.
pub const KK_MINOR: [f64; 12] =
    [6.33, 2.68, 3.52, 5.38, 2.60, 3.53, 2.54, 4.75, 3.98, 2.69, 3.34, 3.17];

pub const MAJOR_SCALE: [u8; 7] = [0, 2, 4, 5, 7, 9, 11];
/// Natural minor.
pub const MINOR_SCALE: [u8; 7] = [0, 2, 3, 5, 7, 8, 10];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Mode {
    Major,
    Minor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Key {
    /// Pitch class 0-11, C = 0.
    pub tonic: u8,
    pub mode: Mode,
}

impl Key {
    pub fn scale(&self) -> [u8; 7] {
        let base = match self.mode {
            Mode::Major => MAJOR_SCALE,
            Mode::Minor => MINOR_SCALE,
        };
        base.map(|d| (d + self.tonic) % 12)
    }

    /// Diatonic triad (root, third, fifth) of 1-based degree..
    pub fn triad(&self, degree: usize) -> [u8; 3] {
        let scale = self.scale();
        [scale[degree - 1], scale[(degree + 1) % 7], scale[(degree + 3) % 7]]
    }

    /// 1-based scale degree of a pitch class, if diatonic.
    pub fn degree_of(&self, pitch_class: u8) -> Option<usize> {
        self.scale().iter().position(|&pc| pc == pitch_class).map(|i| i + 1)
    }
}

impl std::fmt::Display for Key {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        const NAMES: [&str; 12] =
            ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"];
        write!(
            f,
            "{} {}",
            NAMES[self.tonic as usize % 12],
            match self.mode {
                Mode::Major => "major",
                Mode::Minor => "minor",
            }
        )
    }
}

/// Duration-weighted pitch-class histogram over all tracks.
pub fn pitch_class_histogram(score: &QuantizedScore) -> [f64; 12] {
    let mut hist = [0.0; 12];
    for track in &score.tracks {
        for n in track {
            hist[usize::from(n.pitch % 12)] += f64::from(n.duration_steps);
        }
    }
    hist
}

/// Pearson correlation; 0 when either side has zero variance.
pub fn correlation(x: &[f64; 12], y: &[f64; 12]) -> f64 {
    let mx = x.iter().sum::<f64>() / 12.0;
    let my = y.iter().sum::<f64>() / 12.0;
    let mut num = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for i in 0..12 {
        let (dx, dy) = (x[i] - mx, y[i] - my);
        num += dx * dy;
        vx += dx * dx;
        vy += dy * dy;
    }
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        num / (vx * vy).sqrt()
    }
}

/// Correlation of a histogram against one rotated profile.
pub fn key_score(hist: &[f64; 12], key: Key) -> f64 {
    let profile = match key.mode {
        Mode::Major => &KK_MAJOR,
        Mode::Minor => &KK_MINOR,
    };
    let mut rotated = [0.0; 12];
    for (pc, r) in rotated.iter_mut().enumerate() {
        *r = profile[(pc + 12 - key.tonic as usize) % 12];
    }
    correlation(hist, &rotated)
}

/// Best of the 24 candidate keys; ties break toward the lower tonic,
/// then Major.
pub fn best_key(hist: &[f64; 12]) -> Key {
    let mut best = Key { tonic: 0, mode: Mode::Major };
    let mut best_score = f64::NEG_INFINITY;
    for tonic in 0..12u8 {
        for mode in [Mode::Major, Mode::Minor] {
            let key = Key { tonic, mode };
            let score = key_score(hist, key);
            if score > best_score {
                best_score = score;
                best = key;
            }
        }
    }
    best
}

/// Template match of a chord's pitch-class set against the key's seven
/// diatonic triads: the degree with the largest overlap wins, ties go
/// to the lower degree, zero overlap is non-diatonic (`None`). Returns
/// a 1-based degree.
pub fn chord_degree(pitch_classes: &[u8], key: &Key) -> Option<usize> {
    let mut best: Option<(usize, usize)> = None; // (overlap, degree)
    for degree in 1..=7 {
        let triad = key.triad(degree);
        let overlap = pitch_classes.iter().filter(|pc| triad.contains(pc)).count();
        if overlap > 0 && best.is_none_or(|(b, _)| overlap > b) {
            best = Some((overlap, degree));
        }
    }
    best.map(|(_, d)| d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn c_major_scale_and_triads() {
        let key = Key { tonic: 0, mode: Mode::Major };
        assert_eq!(key.scale(), [0, 2, 4, 5, 7, 9, 11]);
        assert_eq!(key.triad(1), [0, 4, 7]); // C E G
        assert_eq!(key.triad(5), [7, 11, 2]); // G B D
        assert_eq!(key.triad(7), [11, 2, 5]); // B D F
    }

    #[test]
    fn a_minor_scale() {
        let key = Key { tonic: 9, mode: Mode::Minor };
        assert_eq!(key.scale(), [9, 11, 0, 2, 4, 5, 7]);
        assert_eq!(key.degree_of(0), Some(3));
        assert_eq!(key.degree_of(1), None);
    }

    #[test]
    fn chord_degree_template_match() {
        let key = Key { tonic: 0, mode: Mode::Major };
        assert_eq!(chord_degree(&[7, 11, 2], &key), Some(5));
        assert_eq!(chord_degree(&[0, 4, 7], &key), Some(1));
        // single non-diatonic pitch class
        assert_eq!(chord_degree(&[1], &key), None);
        // ties go to the lower degree: {0} overlaps I, IV, VI equally
        assert_eq!(chord_degree(&[0], &key), Some(1));
    }

    #[test]
    fn correlation_basics() {
        let x = KK_MAJOR;
        assert!((correlation(&x, &x) - 1.0).abs() < 1e-12);
        let flat = [1.0; 12];
        assert_eq!(correlation(&flat, &x), 0.0);
    }
}
