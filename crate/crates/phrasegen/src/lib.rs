//! Hierarchical symbolic pop music toolkit.
//!
//! Two graph variational autoencoders cover two levels of musical
//! structure: a phrase model over 4-bar, 3-track polyphonic phrases
//! (Melody / Bridge / Piano) and a song model over sequences of up to
//! 12 labeled phrases. Around them sit the pieces needed to go from a
//! directory of MIDI files to trained models, generated songs, and
//! corpus-level statistics:
//!
//! - [`midi`] — Standard MIDI File parsing, step-grid quantization, and
//!   rendering back to SMF.
//! - [`corpus`] — phrase-label parsing, phrase segmentation, 4-bar
//!   splitting, and deterministic train/val/test splits.
//! - [`graphs`] — typed-edge graph construction for both hierarchy
//!   levels, plus the structure/content tensor encoding and its inverse.
//! - [`model`] — the VAE itself: relational graph convolutions, a
//!   convolutional structure path, latent sampling, and mirrored
//!   decoders, all over a reverse-mode tape so gradients are exact.
//! - [`training`] — beta/learning-rate schedules, Adam, the training
//!   loop, and reconstruction evaluation.
//! - [`generation`] — latent sampling, spherical interpolation, and
//!   full-song assembly from a generated structure.
//! - [`metrics`] — key inference and the corpus statistics used to
//!   compare generated output against ground truth.

pub mod corpus;
pub mod generation;
pub mod graphs;
pub mod metrics;
pub mod midi;
pub mod model;
pub mod training;

pub use midi::{QuantizedScore, RawNote, Score, TrackRole};
