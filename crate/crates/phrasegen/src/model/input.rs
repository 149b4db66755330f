//! Per-example graph data in the layout the VAE consumes: node cells,
//! per-type neighbor lists, token targets, and the flat structure
//! target.

use super::spec::{GraphSpec, ModelKind};
use super::ModelError;
use crate::graphs::{
    phrase_cells, phrase_edges_from_structure, song_cells, song_edges_from_structure,
    ContentTensor, StructureTensor,
};

/// One example, ready for encoding or teacher-forced decoding.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInput {
    /// (track/row, position) per node, in canonical order.
    pub cells: Vec<(usize, u32)>,
    /// Per edge type: (gather rows, destination segments), both
    /// directions of every undirected edge.
    pub neighbors: Vec<(Vec<usize>, Vec<usize>)>,
    /// Chunk id of each node.
    pub node_chunk: Vec<usize>,
    /// Row index into the primary/secondary embedding per real
    /// (non-PAD) note, with the owning node.
    pub note_node: Vec<usize>,
    pub note_primary: Vec<usize>,
    pub note_secondary: Vec<usize>,
    /// Content targets over all `m_max` slots of every node (PAD is a
    /// legitimate class).
    pub target_primary: Vec<usize>,
    pub target_secondary: Vec<usize>,
    /// Flat 0/1 structure target, track-major.
    pub s_target: Vec<f64>,
}

impl GraphInput {
    pub fn n_nodes(&self) -> usize {
        self.cells.len()
    }

    /// Builds an input from dataset tensors, validating shapes and
    /// vocabulary bounds against the spec.
    pub fn from_tensors(
        spec: &GraphSpec,
        s: &StructureTensor,
        c: &ContentTensor,
    ) -> Result<GraphInput, ModelError> {
        if s.n_tracks != spec.n_tracks
            || s.n_positions != spec.n_positions
            || c.n_tracks != spec.n_tracks
            || c.n_positions != spec.n_positions
            || c.m_max != spec.m_max
        {
            return Err(ModelError::ShapeMismatch(format!(
                "tensors {}x{} / m_max {} do not match spec {}x{} / m_max {}",
                s.n_tracks, s.n_positions, c.m_max, spec.n_tracks, spec.n_positions, spec.m_max
            )));
        }
        let mut input = GraphInput::from_structure(spec, s);
        for (node, &(track, pos)) in input.cells.clone().iter().enumerate() {
            for m in 0..spec.m_max {
                let slot = c.slot(track, pos as usize, m);
                let (p, d) = (c.pitch[slot] as usize, c.duration[slot] as usize);
                if p >= spec.vocab_primary || d >= spec.vocab_secondary {
                    return Err(ModelError::ShapeMismatch(format!(
                        "content token ({p}, {d}) outside vocabulary at node {node} slot {m}"
                    )));
                }
                input.target_primary.push(p);
                input.target_secondary.push(d);
                if p != spec.pad_primary && d != spec.pad_secondary {
                    input.note_node.push(node);
                    input.note_primary.push(p);
                    input.note_secondary.push(d);
                }
            }
        }
        Ok(input)
    }

    /// Builds the node set and edges implied by a structure tensor
    /// alone; content fields stay empty. This is the decoder's view of
    /// its own predicted structure.
    pub fn from_structure(spec: &GraphSpec, s: &StructureTensor) -> GraphInput {
        let (cells, edge_lists) = match spec.kind {
            ModelKind::Phrase => (phrase_cells(s), phrase_edges_from_structure(s).to_vec()),
            ModelKind::Song => (song_cells(s), song_edges_from_structure(s).to_vec()),
        };
        let node_chunk = cells.iter().map(|&(_, pos)| pos as usize / spec.chunk_len).collect();
        let neighbors = edge_lists
            .iter()
            .map(|edges| {
                let mut gather = Vec::with_capacity(edges.len() * 2);
                let mut seg = Vec::with_capacity(edges.len() * 2);
                for &(u, v) in edges {
                    gather.push(v as usize);
                    seg.push(u as usize);
                    gather.push(u as usize);
                    seg.push(v as usize);
                }
                (gather, seg)
            })
            .collect();
        let mut s_target = vec![0.0; spec.n_tracks * spec.n_positions];
        for &(track, pos) in &cells {
            s_target[track * spec.n_positions + pos as usize] = 1.0;
        }
        GraphInput {
            cells,
            neighbors,
            node_chunk,
            note_node: Vec::new(),
            note_primary: Vec::new(),
            note_secondary: Vec::new(),
            target_primary: Vec::new(),
            target_secondary: Vec::new(),
            s_target,
        }
    }

    /// Validates externally supplied edge lists against the node count.
    pub fn check_edges(&self) -> Result<(), ModelError> {
        let n = self.n_nodes();
        for (gather, seg) in &self.neighbors {
            if gather.iter().chain(seg.iter()).any(|&i| i >= n) {
                return Err(ModelError::IndexOutOfRange(format!(
                    "edge endpoint beyond {n} nodes"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::build_phrase_graph;
    use crate::midi::{QNote, QuantizedScore};

    #[test]
    fn input_from_phrase_tensors() {
        let mut q = QuantizedScore::empty(16, 4);
        q.tracks[0].push(QNote { pitch: 60, onset_step: 0, duration_steps: 4 });
        q.tracks[2].push(QNote { pitch: 40, onset_step: 0, duration_steps: 8 });
        q.tracks[2].push(QNote { pitch: 47, onset_step: 0, duration_steps: 8 });
        let g = build_phrase_graph(&q);
        let spec = GraphSpec::phrase_default();
        let input = GraphInput::from_tensors(&spec, &g.s, &g.c).unwrap();
        assert_eq!(input.n_nodes(), 2);
        assert_eq!(input.note_node, vec![0, 1, 1]);
        assert_eq!(input.note_primary, vec![60, 40, 47]);
        assert_eq!(input.target_primary.len(), 2 * spec.m_max);
        assert_eq!(input.s_target.iter().sum::<f64>(), 2.0);
        // onset edge between the two nodes, both directions
        assert_eq!(input.neighbors[2].0, vec![1, 0]);
        assert_eq!(input.neighbors[2].1, vec![0, 1]);
        input.check_edges().unwrap();
    }

    #[test]
    fn empty_structure_yields_empty_input() {
        let spec = GraphSpec::phrase_default();
        let s = StructureTensor::zeros(3, 64);
        let input = GraphInput::from_structure(&spec, &s);
        assert_eq!(input.n_nodes(), 0);
        assert!(input.neighbors.iter().all(|(g, s)| g.is_empty() && s.is_empty()));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let spec = GraphSpec::song_default();
        let s = StructureTensor::zeros(3, 64);
        let c = ContentTensor::padded(3, 64, 12, 128, 0);
        assert!(matches!(
            GraphInput::from_tensors(&spec, &s, &c),
            Err(ModelError::ShapeMismatch(_))
        ));
    }
}
