//! Model geometry: one [`GraphSpec`] drives both the 3-track phrase
//! VAE and the 2-row song-structure VAE.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    Phrase,
    Song,
}

/// Everything that determines tensor shapes and parameter layout.
///
/// The paper-level knobs are `latent_dim` (512) and `n_gcn_layers` (8);
/// the remaining widths are implementation constants recorded in every
/// checkpoint header.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphSpec {
    pub kind: ModelKind,
    /// Structure-tensor rows: 3 instrument tracks or 2 melodic-class rows.
    pub n_tracks: usize,
    /// Structure-tensor columns: 64 steps or 12 phrase slots.
    pub n_positions: usize,
    /// Positions pooled into one chunk (a bar of 16 steps, or 3 slots).
    pub chunk_len: usize,
    /// Content slots per node: up to 12 chord notes, or 1 phrase label.
    pub m_max: usize,
    /// Pitch (129) or phrase-type (9) vocabulary, PAD included.
    pub vocab_primary: usize,
    /// Duration (65) or length (33) vocabulary, PAD included.
    pub vocab_secondary: usize,
    pub pad_primary: usize,
    pub pad_secondary: usize,
    pub n_edge_types: usize,
    pub latent_dim: usize,
    pub n_gcn_layers: usize,
    pub d_embed_primary: usize,
    pub d_embed_secondary: usize,
    /// Node state width inside the graph convolutions.
    pub d_node: usize,
    /// Content embedding (Zc) width.
    pub d_content: usize,
    /// Structure embedding (Zs) width.
    pub d_structure: usize,
    /// Merged code (Zg) width.
    pub d_merge: usize,
    /// Channels of the two structure-path convolution layers.
    pub conv_channels: [usize; 2],
}

impl GraphSpec {
    pub fn phrase_default() -> GraphSpec {
        GraphSpec::phrase_with_steps(16)
    }

    /// Phrase spec on a custom grid: 4 bars of `steps_per_bar` steps.
    pub fn phrase_with_steps(steps_per_bar: u32) -> GraphSpec {
        let spb = steps_per_bar as usize;
        GraphSpec {
            kind: ModelKind::Phrase,
            n_tracks: 3,
            n_positions: 4 * spb,
            chunk_len: spb,
            m_max: crate::graphs::M_MAX,
            vocab_primary: crate::graphs::PITCH_VOCAB,
            vocab_secondary: crate::graphs::DURATION_VOCAB,
            pad_primary: crate::graphs::PITCH_PAD as usize,
            pad_secondary: crate::graphs::DURATION_PAD as usize,
            n_edge_types: 3,
            latent_dim: 512,
            n_gcn_layers: 8,
            d_embed_primary: 48,
            d_embed_secondary: 16,
            d_node: 64,
            d_content: 256,
            d_structure: 128,
            d_merge: 512,
            conv_channels: [32, 64],
        }
    }

    pub fn song_default() -> GraphSpec {
        GraphSpec {
            kind: ModelKind::Song,
            n_tracks: 2,
            n_positions: crate::graphs::SONG_SLOTS,
            chunk_len: 3,
            m_max: 1,
            vocab_primary: crate::graphs::TYPE_VOCAB,
            vocab_secondary: crate::graphs::LENGTH_VOCAB,
            pad_primary: 0,
            pad_secondary: 0,
            n_edge_types: 2,
            latent_dim: 512,
            n_gcn_layers: 8,
            d_embed_primary: 16,
            d_embed_secondary: 8,
            d_node: 32,
            d_content: 64,
            d_structure: 32,
            d_merge: 256,
            conv_channels: [8, 16],
        }
    }

    /// Small spec for gradient checks and fast tests: latent 8, 2 GCN
    /// layers, narrow everything.
    pub fn tiny(kind: ModelKind) -> GraphSpec {
        let mut spec = match kind {
            ModelKind::Phrase => GraphSpec::phrase_default(),
            ModelKind::Song => GraphSpec::song_default(),
        };
        spec.latent_dim = 8;
        spec.n_gcn_layers = 2;
        spec.d_embed_primary = 4;
        spec.d_embed_secondary = 3;
        spec.d_node = 6;
        spec.d_content = 8;
        spec.d_structure = 6;
        spec.d_merge = 10;
        spec.conv_channels = [3, 4];
        spec
    }

    pub fn n_chunks(&self) -> usize {
        self.n_positions / self.chunk_len
    }

    /// Extra per-node input features: track one-hot, position-within-chunk
    /// one-hot, chunk one-hot.
    pub fn feature_dim(&self) -> usize {
        self.n_tracks + self.chunk_len + self.n_chunks()
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.n_positions % self.chunk_len != 0 {
            return Err(format!(
                "n_positions {} not divisible by chunk_len {}",
                self.n_positions, self.chunk_len
            ));
        }
        if self.latent_dim == 0 || self.n_gcn_layers == 0 || self.m_max == 0 {
            return Err("latent_dim, n_gcn_layers, m_max must be positive".into());
        }
        if self.pad_primary >= self.vocab_primary || self.pad_secondary >= self.vocab_secondary {
            return Err("PAD token outside vocabulary".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_training_setup() {
        for spec in [GraphSpec::phrase_default(), GraphSpec::song_default()] {
            assert_eq!(spec.latent_dim, 512);
            assert_eq!(spec.n_gcn_layers, 8);
            spec.validate().unwrap();
        }
    }

    #[test]
    fn phrase_geometry() {
        let spec = GraphSpec::phrase_default();
        assert_eq!(spec.n_positions, 64);
        assert_eq!(spec.n_chunks(), 4);
        assert_eq!((spec.vocab_primary, spec.vocab_secondary), (129, 65));
        assert_eq!(spec.n_edge_types, 3);
    }

    #[test]
    fn song_geometry() {
        let spec = GraphSpec::song_default();
        assert_eq!(spec.n_positions, 12);
        assert_eq!(spec.n_chunks(), 4);
        assert_eq!((spec.vocab_primary, spec.vocab_secondary), (9, 33));
        assert_eq!(spec.n_edge_types, 2);
    }

    #[test]
    fn tiny_is_valid() {
        for kind in [ModelKind::Phrase, ModelKind::Song] {
            let spec = GraphSpec::tiny(kind);
            assert_eq!(spec.latent_dim, 8);
            assert_eq!(spec.n_gcn_layers, 2);
            spec.validate().unwrap();
        }
    }
}
