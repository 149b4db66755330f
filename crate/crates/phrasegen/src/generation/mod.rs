//! Sampling and song assembly: draw latent codes, decode phrases and
//! structures, and stitch full songs together.
//!
//! Assembly policy: every distinct phrase letter gets one cached base
//! latent. A phrase of `L` bars decodes `ceil(L/4)` 4-bar segments;
//! segment `k` decodes `slerp(Z, Z + delta_k, k / max(1, K-1))` where
//! `delta_k` is a small perturbation seeded by (letter, k), so repeated
//! letters produce identical material. Segments concatenate in time
//! and each phrase is trimmed to its labeled length.

use crate::corpus::{slice_bars, SongStructure};
use crate::graphs::{tensors_to_sample, tensors_to_structure, GraphError, StructureTensor};
use crate::metrics::{infer_key, Key};
use crate::midi::QuantizedScore;
use crate::model::{GraphVae, ModelError, ModelKind};
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("slerp endpoints must be nonzero")]
    ZeroVector,
    #[error("checkpoint mismatch: {0}")]
    SpecMismatch(String),
    #[error("structure has no phrases")]
    EmptyStructure,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// How [`assemble_song`] turns a structure into music.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssemblePolicy {
    /// Structure-activation threshold for phrase decoding.
    pub threshold: f64,
    /// Perturbation size as a fraction of the base latent's norm.
    pub delta_scale: f64,
    /// Re-decode phrases whose inferred key disagrees with the song
    /// majority.
    pub key_filter: bool,
    pub max_key_retries: u32,
}

impl Default for AssemblePolicy {
    fn default() -> Self {
        AssemblePolicy { threshold: 0.5, delta_scale: 0.1, key_filter: false, max_key_retries: 4 }
    }
}

/// A standard-normal latent vector, deterministic in the rng state.
pub fn sample_latent(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect()
}

/// Decodes one 4-bar, 3-track phrase from a latent code.
pub fn generate_phrase(
    vae: &GraphVae,
    z: &[f64],
    threshold: f64,
) -> Result<QuantizedScore, GenerationError> {
    if vae.spec.kind != ModelKind::Phrase {
        return Err(GenerationError::SpecMismatch("phrase decoding needs a phrase checkpoint".into()));
    }
    let out = vae.decode_latent(z, threshold)?;
    let steps_per_bar = vae.spec.chunk_len as u32;
    let mut score = tensors_to_sample(&out.s_hat, &out.c, steps_per_bar)?;
    score.n_bars = (vae.spec.n_positions / vae.spec.chunk_len) as u32;
    Ok(score)
}

/// Decodes a song structure from a latent code. Occupied slots compact
/// to a contiguous prefix; if thresholding leaves nothing, the single
/// most probable slot is forced active with PAD masked out of its
/// content, so the result always has 1..=12 phrases.
pub fn generate_structure(vae: &GraphVae, z: &[f64]) -> Result<SongStructure, GenerationError> {
    if vae.spec.kind != ModelKind::Song {
        return Err(GenerationError::SpecMismatch("structure decoding needs a song checkpoint".into()));
    }
    let out = vae.decode_latent(z, 0.5)?;
    let structure = tensors_to_structure(&out.s_hat, &out.c)?;
    if !structure.phrases.is_empty() {
        return Ok(structure);
    }
    let best = out
        .s_probs
        .iter()
        .enumerate()
        .max_by(|(_, a), (_, b)| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let (n_pos, (row, slot)) = (vae.spec.n_positions, (best / vae.spec.n_positions, best % vae.spec.n_positions));
    let mut s_forced = StructureTensor::zeros(vae.spec.n_tracks, n_pos);
    s_forced.set(row, slot, true);
    let c = vae.decode_content_for(z, &s_forced, true)?;
    Ok(tensors_to_structure(&s_forced, &c)?)
}

/// Spherical linear interpolation between two latent vectors; falls
/// back to linear interpolation for (anti)parallel endpoints.
pub fn slerp(z1: &[f64], z2: &[f64], t: f64) -> Result<Vec<f64>, GenerationError> {
    assert_eq!(z1.len(), z2.len(), "slerp endpoints must have equal dims");
    let n1 = norm(z1);
    let n2 = norm(z2);
    if n1 == 0.0 || n2 == 0.0 {
        return Err(GenerationError::ZeroVector);
    }
    let cos = (dot(z1, z2) / (n1 * n2)).clamp(-1.0, 1.0);
    let omega = cos.acos();
    let sin_omega = omega.sin();
    if sin_omega.abs() < 1e-9 {
        return Ok(z1.iter().zip(z2).map(|(a, b)| (1.0 - t) * a + t * b).collect());
    }
    let w1 = ((1.0 - t) * omega).sin() / sin_omega;
    let w2 = (t * omega).sin() / sin_omega;
    Ok(z1.iter().zip(z2).map(|(a, b)| w1 * a + w2 * b).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn mix_seed(seed: u64, letter: char, k: u64) -> u64 {
    // splitmix64-style mixing of (seed, letter, segment)
    let mut x = seed
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(letter as u64)
        .wrapping_mul(0xbf58_476d_1ce4_e5b9)
        .wrapping_add(k);
    x ^= x >> 30;
    x = x.wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^= x >> 27;
    x
}

/// Perturbation for segment `k` of letter `letter`, scaled to
/// `scale * norm(base)`.
fn segment_delta(seed: u64, letter: char, k: u64, dim: usize, magnitude: f64) -> Vec<f64> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(mix_seed(seed, letter, k));
    let raw = sample_latent(&mut rng, dim);
    let n = norm(&raw);
    if n == 0.0 {
        return vec![0.0; dim];
    }
    raw.into_iter().map(|x| x * magnitude / n).collect()
}

/// Decodes a whole song from its structure. Deterministic in
/// (structure, seed, policy).
pub fn assemble_song(
    structure: &SongStructure,
    phrase_vae: &GraphVae,
    seed: u64,
    policy: &AssemblePolicy,
) -> Result<QuantizedScore, GenerationError> {
    if phrase_vae.spec.kind != ModelKind::Phrase {
        return Err(GenerationError::SpecMismatch("assembly needs a phrase checkpoint".into()));
    }
    if structure.phrases.is_empty() {
        return Err(GenerationError::EmptyStructure);
    }
    let dim = phrase_vae.spec.latent_dim;
    let steps_per_bar = phrase_vae.spec.chunk_len as u32;

    // one cached base latent per distinct letter, in first-appearance order
    let mut base_rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut base: std::collections::BTreeMap<char, Vec<f64>> = std::collections::BTreeMap::new();
    for label in &structure.phrases {
        base.entry(label.letter).or_insert_with(|| sample_latent(&mut base_rng, dim));
    }

    let mut phrase_scores = Vec::with_capacity(structure.phrases.len());
    for label in &structure.phrases {
        let z_base = &base[&label.letter];
        let score = decode_phrase_span(phrase_vae, z_base, label.letter, label.length_bars, seed, policy)?;
        phrase_scores.push(score);
    }

    if policy.key_filter {
        apply_key_filter(phrase_vae, structure, &base, &mut phrase_scores, seed, policy)?;
    }

    let total_bars: u32 = structure.phrases.iter().map(|l| l.length_bars).sum();
    let mut song = QuantizedScore::empty(steps_per_bar, total_bars);
    let mut offset_bars = 0u32;
    for score in &phrase_scores {
        let offset_steps = offset_bars * steps_per_bar;
        for t in 0..3 {
            for n in &score.tracks[t] {
                let mut shifted = *n;
                shifted.onset_step += offset_steps;
                song.tracks[t].push(shifted);
            }
        }
        offset_bars += score.n_bars;
    }
    song.normalize();
    Ok(song)
}

/// Decodes ceil(L/4) interpolated segments for one phrase and trims to
/// L bars.
fn decode_phrase_span(
    vae: &GraphVae,
    z_base: &[f64],
    letter: char,
    length_bars: u32,
    seed: u64,
    policy: &AssemblePolicy,
) -> Result<QuantizedScore, GenerationError> {
    let bars_per_segment = (vae.spec.n_positions / vae.spec.chunk_len) as u32;
    let steps_per_bar = vae.spec.chunk_len as u32;
    let k_total = length_bars.div_ceil(bars_per_segment);
    let mut span = QuantizedScore::empty(steps_per_bar, k_total * bars_per_segment);
    for k in 0..k_total {
        let z_k = if policy.delta_scale == 0.0 {
            z_base.to_vec()
        } else {
            let magnitude = policy.delta_scale * norm(z_base);
            let delta = segment_delta(seed, letter, u64::from(k), z_base.len(), magnitude);
            let target: Vec<f64> = z_base.iter().zip(&delta).map(|(a, d)| a + d).collect();
            let t = f64::from(k) / f64::from(k_total.saturating_sub(1).max(1));
            slerp(z_base, &target, t)?
        };
        let segment = generate_phrase(vae, &z_k, policy.threshold)?;
        let offset = k * bars_per_segment * steps_per_bar;
        for t in 0..3 {
            for n in &segment.tracks[t] {
                let mut shifted = *n;
                shifted.onset_step += offset;
                span.tracks[t].push(shifted);
            }
        }
    }
    let mut trimmed = slice_bars(&span, 0, length_bars);
    trimmed.normalize();
    Ok(trimmed)
}

/// Re-decodes phrases whose inferred key disagrees with the majority.
fn apply_key_filter(
    vae: &GraphVae,
    structure: &SongStructure,
    base: &std::collections::BTreeMap<char, Vec<f64>>,
    phrase_scores: &mut [QuantizedScore],
    seed: u64,
    policy: &AssemblePolicy,
) -> Result<(), GenerationError> {
    let keys: Vec<Option<Key>> = phrase_scores.iter().map(|s| infer_key(s).ok()).collect();
    let mut counts: std::collections::BTreeMap<Key, usize> = std::collections::BTreeMap::new();
    for key in keys.iter().flatten() {
        *counts.entry(*key).or_default() += 1;
    }
    let Some((majority, _)) = counts.into_iter().max_by_key(|&(_, c)| c) else {
        return Ok(());
    };
    for (i, label) in structure.phrases.iter().enumerate() {
        if keys[i].is_none() || keys[i] == Some(majority) {
            continue;
        }
        let z_base = &base[&label.letter];
        for retry in 1..=policy.max_key_retries {
            let magnitude = policy.delta_scale.max(0.05) * norm(z_base);
            let delta = segment_delta(seed, label.letter, 1_000 + u64::from(retry), z_base.len(), magnitude);
            let z_retry: Vec<f64> = z_base.iter().zip(&delta).map(|(a, d)| a + d).collect();
            let candidate =
                decode_phrase_span(vae, &z_retry, label.letter, label.length_bars, seed, policy)?;
            if infer_key(&candidate).ok() == Some(majority) {
                phrase_scores[i] = candidate;
                break;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_structure_labels;
    use crate::model::GraphSpec;
    use rand_chacha::ChaCha8Rng;

    fn phrase_vae() -> GraphVae {
        GraphVae::new(GraphSpec::tiny(ModelKind::Phrase), 900).unwrap()
    }

    fn song_vae() -> GraphVae {
        GraphVae::new(GraphSpec::tiny(ModelKind::Song), 901).unwrap()
    }

    fn structure(text: &str) -> SongStructure {
        SongStructure { phrases: parse_structure_labels(text).unwrap(), source_id: "t".into() }
    }

    #[test]
    fn sample_latent_is_seed_deterministic() {
        let a = sample_latent(&mut ChaCha8Rng::seed_from_u64(5), 16);
        let b = sample_latent(&mut ChaCha8Rng::seed_from_u64(5), 16);
        let c = sample_latent(&mut ChaCha8Rng::seed_from_u64(6), 16);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn latent_norm_concentrates() {
        // chi-square: norm^2 of a 512-dim draw is 512 +- 3*sqrt(2*512)
        let z = sample_latent(&mut ChaCha8Rng::seed_from_u64(7), 512);
        let norm2: f64 = z.iter().map(|x| x * x).sum();
        assert!((norm2 - 512.0).abs() < 3.0 * (2.0 * 512.0f64).sqrt(), "norm^2 = {norm2}");
    }

    #[test]
    fn slerp_endpoints_are_exact() {
        let z1 = vec![1.0, 2.0, -0.5];
        let z2 = vec![-0.3, 0.7, 1.1];
        assert_eq!(slerp(&z1, &z2, 0.0).unwrap(), z1);
        assert_eq!(slerp(&z1, &z2, 1.0).unwrap(), z2);
    }

    #[test]
    fn slerp_halfway_between_orthogonal_units() {
        let z1 = vec![1.0, 0.0];
        let z2 = vec![0.0, 1.0];
        let mid = slerp(&z1, &z2, 0.5).unwrap();
        let n = (mid[0] * mid[0] + mid[1] * mid[1]).sqrt();
        assert!((n - 1.0).abs() < 1e-12);
        let angle = mid[1].atan2(mid[0]);
        assert!((angle - std::f64::consts::FRAC_PI_4).abs() < 1e-12);
    }

    #[test]
    fn slerp_rejects_zero_vectors() {
        assert!(matches!(
            slerp(&[0.0, 0.0], &[1.0, 0.0], 0.5),
            Err(GenerationError::ZeroVector)
        ));
    }

    #[test]
    fn threshold_one_gives_empty_phrase() {
        let vae = phrase_vae();
        let z = sample_latent(&mut ChaCha8Rng::seed_from_u64(1), 8);
        let score = generate_phrase(&vae, &z, 1.0).unwrap();
        assert_eq!(score.note_count(), 0);
        assert_eq!(score.n_bars, 4);
    }

    #[test]
    fn generated_structures_are_always_valid() {
        let vae = song_vae();
        for seed in 0..30 {
            let z = sample_latent(&mut ChaCha8Rng::seed_from_u64(seed), 8);
            let s = generate_structure(&vae, &z).unwrap();
            assert!(
                (1..=12).contains(&s.phrases.len()),
                "seed {seed} gave {} phrases",
                s.phrases.len()
            );
            for p in &s.phrases {
                assert!((1..=32).contains(&p.length_bars));
            }
        }
    }

    #[test]
    fn kind_mismatch_is_rejected() {
        let z = vec![0.0; 8];
        assert!(matches!(
            generate_phrase(&song_vae(), &z, 0.5),
            Err(GenerationError::SpecMismatch(_))
        ));
        assert!(matches!(
            generate_structure(&phrase_vae(), &z),
            Err(GenerationError::SpecMismatch(_))
        ));
    }

    #[test]
    fn assembled_song_length_equals_structure_sum() {
        let vae = phrase_vae();
        let s = structure("i4A8B6o4");
        let song = assemble_song(&s, &vae, 11, &AssemblePolicy::default()).unwrap();
        assert_eq!(song.n_bars, 22);
        let max_step = song
            .tracks
            .iter()
            .flatten()
            .map(|n| n.onset_step)
            .max()
            .unwrap_or(0);
        assert!(max_step < song.n_steps());
    }

    #[test]
    fn repeated_letters_with_zero_delta_are_identical() {
        let vae = phrase_vae();
        let policy = AssemblePolicy { delta_scale: 0.0, ..Default::default() };
        let song = assemble_song(&structure("A4A4"), &vae, 3, &policy).unwrap();
        let first: Vec<_> = song.tracks[0].iter().filter(|n| n.onset_step < 64).collect();
        let second: Vec<_> = song.tracks[0]
            .iter()
            .filter(|n| n.onset_step >= 64)
            .map(|n| {
                let mut m = *n;
                m.onset_step -= 64;
                m
            })
            .collect();
        assert_eq!(first.len(), second.len());
        for (a, b) in first.iter().zip(second.iter()) {
            assert_eq!(**a, *b);
        }
    }

    #[test]
    fn eight_bar_phrase_with_zero_delta_repeats_its_segment() {
        let vae = phrase_vae();
        let policy = AssemblePolicy { delta_scale: 0.0, ..Default::default() };
        let song = assemble_song(&structure("A8"), &vae, 3, &policy).unwrap();
        assert_eq!(song.n_bars, 8);
        // both segments decode the same latent; the second one ends at
        // the phrase boundary, so its overhanging durations are clipped
        for t in 0..3 {
            let first: Vec<crate::midi::QNote> = song.tracks[t]
                .iter()
                .filter(|n| n.onset_step < 64)
                .map(|n| {
                    let mut m = *n;
                    m.duration_steps = m.duration_steps.min(64 - m.onset_step);
                    m
                })
                .collect();
            let second: Vec<crate::midi::QNote> = song.tracks[t]
                .iter()
                .filter(|n| n.onset_step >= 64)
                .map(|n| {
                    let mut m = *n;
                    m.onset_step -= 64;
                    m
                })
                .collect();
            assert_eq!(first, second, "track {t} segments differ");
        }
    }

    #[test]
    fn single_intro_structure_gives_four_bar_song() {
        let vae = phrase_vae();
        let song = assemble_song(&structure("i4"), &vae, 8, &AssemblePolicy::default()).unwrap();
        assert_eq!(song.n_bars, 4);
    }

    #[test]
    fn assembly_is_deterministic() {
        let vae = phrase_vae();
        let s = structure("i4A8b4A8o4");
        let policy = AssemblePolicy::default();
        let a = assemble_song(&s, &vae, 21, &policy).unwrap();
        let b = assemble_song(&s, &vae, 21, &policy).unwrap();
        assert_eq!(a, b);
        let c = assemble_song(&s, &vae, 22, &policy).unwrap();
        assert!(a != c || a.note_count() == 0);
    }
}
