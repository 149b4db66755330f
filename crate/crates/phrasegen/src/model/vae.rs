//! The graph VAE: a content path (note -> chord -> relational graph
//! convolutions -> chunk pooling -> Zc), a convolutional structure path
//! (S -> Zs), a merge producing Zg and (mu, sigma), and decoders that
//! mirror both paths. The same machinery serves the 3-track phrase
//! model and the 2-row song-structure model; [`GraphSpec`] decides.

use super::autograd::{Tape, Tensor, VarId};
use super::input::GraphInput;
use super::params::{ParamGrads, ParamSet};
use super::spec::GraphSpec;
use super::ModelError;
use crate::graphs::{ContentTensor, StructureTensor};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

/// Latent quantities of one encoded example.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBundle {
    pub zc: Vec<f64>,
    pub zs: Vec<f64>,
    pub zg: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Sampled latent; equals `mu` when encoding deterministically.
    pub z: Vec<f64>,
}

/// Loss components of one forward pass. For the song model the
/// "pitch"/"duration" slots hold the type/length token losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon_structure: f64,
    pub recon_pitch: f64,
    pub recon_duration: f64,
    pub kld: f64,
    pub beta: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.recon_structure.is_finite()
            && self.recon_pitch.is_finite()
            && self.recon_duration.is_finite()
            && self.kld.is_finite()
            && self.total.is_finite()
    }
}

/// Teacher-forced reconstruction of one example, decoded from `mu`.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    /// Structure activation probabilities, track-major.
    pub s_probs: Vec<f64>,
    /// Argmax content tokens over every (ground-truth node, slot).
    pub pred_primary: Vec<usize>,
    pub pred_secondary: Vec<usize>,
}

#[derive(Debug)]
struct GcnLayerIdx {
    self_w: usize,
    type_w: Vec<usize>,
    bias: usize,
}

#[derive(Debug)]
struct ParamIndex {
    emb_primary: usize,
    emb_secondary: usize,
    note_w: usize,
    note_b: usize,
    chord_w: usize,
    chord_b: usize,
    enc_gcn: Vec<GcnLayerIdx>,
    enc_content_w: usize,
    enc_content_b: usize,
    conv1_w: usize,
    conv1_b: usize,
    conv2_w: usize,
    conv2_b: usize,
    enc_struct_w: usize,
    enc_struct_b: usize,
    merge_w: usize,
    merge_b: usize,
    head_w: usize,
    head_b: usize,
    dec_in_w: usize,
    dec_in_b: usize,
    dec_struct_fc_w: usize,
    dec_struct_fc_b: usize,
    deconv2_w: usize,
    deconv2_b: usize,
    deconv1_w: usize,
    deconv1_b: usize,
    dec_content_fc_w: usize,
    dec_content_fc_b: usize,
    dec_node_w: usize,
    dec_node_b: usize,
    dec_gcn: Vec<GcnLayerIdx>,
    head_primary_w: usize,
    head_primary_b: usize,
    head_secondary_w: usize,
    head_secondary_b: usize,
}

/// One relational graph convolution: self transform plus, per edge
/// type, a linear transform of the mean over that type's neighbors,
/// then ReLU. Isolated nodes see only the self term.
pub fn rgcn_layer(
    tape: &mut Tape<'_>,
    h: VarId,
    neighbors: &[(Vec<usize>, Vec<usize>)],
    self_w: VarId,
    type_ws: &[VarId],
    bias: VarId,
) -> VarId {
    let n_nodes = tape.value(h).rows();
    let mut pre = tape.matmul(h, self_w);
    pre = tape.add_row(pre, bias);
    for ((gather, seg), &w) in neighbors.iter().zip(type_ws) {
        if gather.is_empty() {
            continue;
        }
        let msgs = tape.gather_rows(h, gather);
        let agg = tape.segment_mean(msgs, seg, n_nodes);
        let transformed = tape.matmul(agg, w);
        pre = tape.add(pre, transformed);
    }
    tape.relu(pre)
}

/// Z = mu + sigma * eps with eps drawn fresh from `rng`.
pub fn reparameterize(
    mu: &[f64],
    sigma: &[f64],
    rng: &mut impl rand::Rng,
) -> Result<Vec<f64>, ModelError> {
    if mu.len() != sigma.len() {
        return Err(ModelError::ShapeMismatch(format!(
            "mu has {} dims, sigma {}",
            mu.len(),
            sigma.len()
        )));
    }
    if sigma.iter().any(|&s| s <= 0.0 || !s.is_finite()) {
        return Err(ModelError::NonPositiveSigma);
    }
    Ok(mu
        .iter()
        .zip(sigma)
        .map(|(&m, &s)| m + s * rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect())
}

struct EncodedVars {
    zc: VarId,
    zs: VarId,
    zg: VarId,
    mu: VarId,
    logsigma: VarId,
}

#[derive(Debug)]
pub struct GraphVae {
    pub spec: GraphSpec,
    pub params: ParamSet,
    idx: ParamIndex,
}

impl GraphVae {
    /// Fresh model with Glorot-initialized weights, deterministic in
    /// `seed`.
    pub fn new(spec: GraphSpec, seed: u64) -> Result<GraphVae, ModelError> {
        spec.validate().map_err(ModelError::ShapeMismatch)?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let d_note_in = spec.d_embed_primary + spec.d_embed_secondary;
        let feat = spec.feature_dim();
        let n_chunks = spec.n_chunks();
        let [c1, c2] = spec.conv_channels;

        let gcn_stack = |p: &mut ParamSet, rng: &mut rand_chacha::ChaCha8Rng, prefix: &str| {
            (0..spec.n_gcn_layers)
                .map(|l| GcnLayerIdx {
                    self_w: p.add_glorot(&format!("{prefix}.gcn{l}.self.w"), &[spec.d_node, spec.d_node], rng),
                    type_w: (0..spec.n_edge_types)
                        .map(|e| p.add_glorot(&format!("{prefix}.gcn{l}.type{e}.w"), &[spec.d_node, spec.d_node], rng))
                        .collect(),
                    bias: p.add_zeros(&format!("{prefix}.gcn{l}.b"), &[spec.d_node]),
                })
                .collect::<Vec<_>>()
        };

        let idx = ParamIndex {
            emb_primary: p.add_glorot("enc.emb.primary", &[spec.vocab_primary, spec.d_embed_primary], &mut rng),
            emb_secondary: p.add_glorot("enc.emb.secondary", &[spec.vocab_secondary, spec.d_embed_secondary], &mut rng),
            note_w: p.add_glorot("enc.note.w", &[d_note_in, spec.d_node], &mut rng),
            note_b: p.add_zeros("enc.note.b", &[spec.d_node]),
            chord_w: p.add_glorot("enc.chord.w", &[spec.d_node + feat, spec.d_node], &mut rng),
            chord_b: p.add_zeros("enc.chord.b", &[spec.d_node]),
            enc_gcn: gcn_stack(&mut p, &mut rng, "enc"),
            enc_content_w: p.add_glorot("enc.content.w", &[n_chunks * spec.d_node, spec.d_content], &mut rng),
            enc_content_b: p.add_zeros("enc.content.b", &[spec.d_content]),
            conv1_w: p.add_glorot("enc.conv1.w", &[c1, spec.n_tracks, 3], &mut rng),
            conv1_b: p.add_zeros("enc.conv1.b", &[c1]),
            conv2_w: p.add_glorot("enc.conv2.w", &[c2, c1, spec.chunk_len], &mut rng),
            conv2_b: p.add_zeros("enc.conv2.b", &[c2]),
            enc_struct_w: p.add_glorot("enc.structure.w", &[c2 * n_chunks, spec.d_structure], &mut rng),
            enc_struct_b: p.add_zeros("enc.structure.b", &[spec.d_structure]),
            merge_w: p.add_glorot("merge.w", &[spec.d_content + spec.d_structure, spec.d_merge], &mut rng),
            merge_b: p.add_zeros("merge.b", &[spec.d_merge]),
            head_w: p.add_glorot("latent.head.w", &[spec.d_merge, 2 * spec.latent_dim], &mut rng),
            head_b: p.add_zeros("latent.head.b", &[2 * spec.latent_dim]),
            dec_in_w: p.add_glorot("dec.in.w", &[spec.latent_dim, spec.d_merge], &mut rng),
            dec_in_b: p.add_zeros("dec.in.b", &[spec.d_merge]),
            dec_struct_fc_w: p.add_glorot("dec.structure.fc.w", &[spec.d_merge, c2 * n_chunks], &mut rng),
            dec_struct_fc_b: p.add_zeros("dec.structure.fc.b", &[c2 * n_chunks]),
            deconv2_w: p.add_glorot("dec.deconv2.w", &[c2, c1, spec.chunk_len], &mut rng),
            deconv2_b: p.add_zeros("dec.deconv2.b", &[c1]),
            deconv1_w: p.add_glorot("dec.deconv1.w", &[c1, spec.n_tracks, 3], &mut rng),
            deconv1_b: p.add_zeros("dec.deconv1.b", &[spec.n_tracks]),
            dec_content_fc_w: p.add_glorot("dec.content.fc.w", &[spec.d_merge, n_chunks * spec.d_node], &mut rng),
            dec_content_fc_b: p.add_zeros("dec.content.fc.b", &[n_chunks * spec.d_node]),
            dec_node_w: p.add_glorot("dec.node.w", &[spec.d_node + feat, spec.d_node], &mut rng),
            dec_node_b: p.add_zeros("dec.node.b", &[spec.d_node]),
            dec_gcn: gcn_stack(&mut p, &mut rng, "dec"),
            head_primary_w: p.add_glorot("dec.head.primary.w", &[spec.d_node, spec.m_max * spec.vocab_primary], &mut rng),
            head_primary_b: p.add_zeros("dec.head.primary.b", &[spec.m_max * spec.vocab_primary]),
            head_secondary_w: p.add_glorot("dec.head.secondary.w", &[spec.d_node, spec.m_max * spec.vocab_secondary], &mut rng),
            head_secondary_b: p.add_zeros("dec.head.secondary.b", &[spec.m_max * spec.vocab_secondary]),
        };
        Ok(GraphVae { spec, params: p, idx })
    }

    /// Rebuilds the index for a parameter set loaded from a checkpoint.
    /// The set must have the exact layout `new` would create.
    pub fn from_parts(spec: GraphSpec, params: ParamSet) -> Result<GraphVae, ModelError> {
        let fresh = GraphVae::new(spec.clone(), 0)?;
        if fresh.params.entries.len() != params.entries.len() {
            return Err(ModelError::SpecMismatch(format!(
                "checkpoint has {} parameters, spec expects {}",
                params.entries.len(),
                fresh.params.entries.len()
            )));
        }
        for (a, b) in fresh.params.entries.iter().zip(&params.entries) {
            if a.name != b.name || a.shape != b.shape {
                return Err(ModelError::SpecMismatch(format!(
                    "parameter {} {:?} does not match expected {} {:?}",
                    b.name, b.shape, a.name, a.shape
                )));
            }
        }
        Ok(GraphVae { spec, params, idx: fresh.idx })
    }

    /// Per-node constant features: track one-hot, position-within-chunk
    /// one-hot, chunk one-hot.
    fn features(&self, input: &GraphInput) -> Tensor {
        let feat = self.spec.feature_dim();
        let mut t = Tensor::zeros(&[input.n_nodes(), feat]);
        for (i, &(track, pos)) in input.cells.iter().enumerate() {
            let pos = pos as usize;
            let row = &mut t.data[i * feat..(i + 1) * feat];
            row[track] = 1.0;
            row[self.spec.n_tracks + pos % self.spec.chunk_len] = 1.0;
            row[self.spec.n_tracks + self.spec.chunk_len + pos / self.spec.chunk_len] = 1.0;
        }
        t
    }

    fn gcn_pass(
        &self,
        tape: &mut Tape<'_>,
        mut h: VarId,
        input: &GraphInput,
        layers: &[GcnLayerIdx],
    ) -> VarId {
        for layer in layers {
            let self_w = tape.param(layer.self_w);
            let type_ws: Vec<VarId> = layer.type_w.iter().map(|&i| tape.param(i)).collect();
            let bias = tape.param(layer.bias);
            h = rgcn_layer(tape, h, &input.neighbors, self_w, &type_ws, bias);
        }
        h
    }

    fn encode_tape(&self, tape: &mut Tape<'_>, input: &GraphInput) -> EncodedVars {
        let spec = &self.spec;
        let n_nodes = input.n_nodes();
        let n_chunks = spec.n_chunks();

        // content path: notes -> chords -> graph conv -> chunk pooling
        let emb_p = tape.param(self.idx.emb_primary);
        let emb_s = tape.param(self.idx.emb_secondary);
        let notes_p = tape.gather_rows(emb_p, &input.note_primary);
        let notes_s = tape.gather_rows(emb_s, &input.note_secondary);
        let notes = tape.concat_cols(notes_p, notes_s);
        let note_w = tape.param(self.idx.note_w);
        let note_b = tape.param(self.idx.note_b);
        let notes = tape.matmul(notes, note_w);
        let notes = tape.add_row(notes, note_b);
        let notes = tape.relu(notes);
        let pooled = tape.segment_mean(notes, &input.note_node, n_nodes);
        let features = tape.constant(self.features(input));
        let chord_in = tape.concat_cols(pooled, features);
        let chord_w = tape.param(self.idx.chord_w);
        let chord_b = tape.param(self.idx.chord_b);
        let chords = tape.matmul(chord_in, chord_w);
        let chords = tape.add_row(chords, chord_b);
        let chords = tape.relu(chords);
        let h = self.gcn_pass(tape, chords, input, &self.idx.enc_gcn);
        let chunks = tape.segment_mean(h, &input.node_chunk, n_chunks);
        let flat = tape.reshape(chunks, &[1, n_chunks * spec.d_node]);
        let content_w = tape.param(self.idx.enc_content_w);
        let content_b = tape.param(self.idx.enc_content_b);
        let zc = tape.matmul(flat, content_w);
        let zc = tape.add_row(zc, content_b);
        let zc = tape.relu(zc);

        // structure path: two convolutions over S
        let s = tape.constant(Tensor::from_vec(
            &[spec.n_tracks, spec.n_positions],
            input.s_target.clone(),
        ));
        let c1w = tape.param(self.idx.conv1_w);
        let c1b = tape.param(self.idx.conv1_b);
        let s1 = tape.conv1d(s, c1w, c1b, 1, 1);
        let s1 = tape.relu(s1);
        let c2w = tape.param(self.idx.conv2_w);
        let c2b = tape.param(self.idx.conv2_b);
        let s2 = tape.conv1d(s1, c2w, c2b, spec.chunk_len, 0);
        let s2 = tape.relu(s2);
        let s_flat = tape.reshape(s2, &[1, spec.conv_channels[1] * n_chunks]);
        let sw = tape.param(self.idx.enc_struct_w);
        let sb = tape.param(self.idx.enc_struct_b);
        let zs = tape.matmul(s_flat, sw);
        let zs = tape.add_row(zs, sb);
        let zs = tape.relu(zs);

        // merge and project to (mu, log sigma)
        let cat = tape.concat_cols(zc, zs);
        let mw = tape.param(self.idx.merge_w);
        let mb = tape.param(self.idx.merge_b);
        let zg = tape.matmul(cat, mw);
        let zg = tape.add_row(zg, mb);
        let zg = tape.relu(zg);
        let hw = tape.param(self.idx.head_w);
        let hb = tape.param(self.idx.head_b);
        let head = tape.matmul(zg, hw);
        let head = tape.add_row(head, hb);
        let mu = tape.slice_cols(head, 0, spec.latent_dim);
        let logsigma = tape.slice_cols(head, spec.latent_dim, 2 * spec.latent_dim);
        EncodedVars { zc, zs, zg, mu, logsigma }
    }

    /// Shared decoder trunk.
    fn dec_hidden(&self, tape: &mut Tape<'_>, z: VarId) -> VarId {
        let w = tape.param(self.idx.dec_in_w);
        let b = tape.param(self.idx.dec_in_b);
        let h = tape.matmul(z, w);
        let h = tape.add_row(h, b);
        tape.relu(h)
    }

    /// Structure logits [n_tracks, n_positions], mirroring the encoder's
    /// convolutional path.
    fn decode_structure_tape(&self, tape: &mut Tape<'_>, hidden: VarId) -> VarId {
        let spec = &self.spec;
        let n_chunks = spec.n_chunks();
        let [_, c2] = spec.conv_channels;
        let w = tape.param(self.idx.dec_struct_fc_w);
        let b = tape.param(self.idx.dec_struct_fc_b);
        let f = tape.matmul(hidden, w);
        let f = tape.add_row(f, b);
        let f = tape.relu(f);
        let grid = tape.reshape(f, &[c2, n_chunks]);
        let d2w = tape.param(self.idx.deconv2_w);
        let d2b = tape.param(self.idx.deconv2_b);
        let up = tape.conv1d_transpose(grid, d2w, d2b, spec.chunk_len, 0);
        let up = tape.relu(up);
        let d1w = tape.param(self.idx.deconv1_w);
        let d1b = tape.param(self.idx.deconv1_b);
        tape.conv1d_transpose(up, d1w, d1b, 1, 1)
    }

    /// Content logits for the node set of `input`:
    /// ([n_nodes*m_max, vocab_primary], [n_nodes*m_max, vocab_secondary]).
    fn decode_content_tape(
        &self,
        tape: &mut Tape<'_>,
        hidden: VarId,
        input: &GraphInput,
    ) -> (VarId, VarId) {
        let spec = &self.spec;
        let n_nodes = input.n_nodes();
        let n_chunks = spec.n_chunks();
        let w = tape.param(self.idx.dec_content_fc_w);
        let b = tape.param(self.idx.dec_content_fc_b);
        let g = tape.matmul(hidden, w);
        let g = tape.add_row(g, b);
        let g = tape.relu(g);
        let chunk_states = tape.reshape(g, &[n_chunks, spec.d_node]);
        let node_base = tape.gather_rows(chunk_states, &input.node_chunk);
        let features = tape.constant(self.features(input));
        let node_in = tape.concat_cols(node_base, features);
        let nw = tape.param(self.idx.dec_node_w);
        let nb = tape.param(self.idx.dec_node_b);
        let nodes = tape.matmul(node_in, nw);
        let nodes = tape.add_row(nodes, nb);
        let nodes = tape.relu(nodes);
        let h = self.gcn_pass(tape, nodes, input, &self.idx.dec_gcn);
        let pw = tape.param(self.idx.head_primary_w);
        let pb = tape.param(self.idx.head_primary_b);
        let logits_p = tape.matmul(h, pw);
        let logits_p = tape.add_row(logits_p, pb);
        let logits_p = tape.reshape(logits_p, &[n_nodes * spec.m_max, spec.vocab_primary]);
        let sw = tape.param(self.idx.head_secondary_w);
        let sb = tape.param(self.idx.head_secondary_b);
        let logits_s = tape.matmul(h, sw);
        let logits_s = tape.add_row(logits_s, sb);
        let logits_s = tape.reshape(logits_s, &[n_nodes * spec.m_max, spec.vocab_secondary]);
        (logits_p, logits_s)
    }

    /// Deterministic encoding: Z = mu.
    pub fn encode(&self, input: &GraphInput) -> Result<LatentBundle, ModelError> {
        let mut tape = Tape::new(&self.params);
        let vars = self.encode_tape(&mut tape, input);
        let mu = tape.value(vars.mu).data.clone();
        let sigma: Vec<f64> = tape.value(vars.logsigma).data.iter().map(|x| x.exp()).collect();
        let bundle = LatentBundle {
            zc: tape.value(vars.zc).data.clone(),
            zs: tape.value(vars.zs).data.clone(),
            zg: tape.value(vars.zg).data.clone(),
            z: mu.clone(),
            mu,
            sigma,
        };
        let finite = bundle.mu.iter().chain(&bundle.sigma).chain(&bundle.zg).all(|x| x.is_finite());
        if !finite {
            return Err(ModelError::NonFinite("encoder produced NaN/Inf".into()));
        }
        Ok(bundle)
    }

    /// Full training pass: encode, reparameterize with the given noise,
    /// decode both paths (content teacher-forced on the ground-truth
    /// structure), and reduce to a [`LossBreakdown`]. Gradients of
    /// `total` accumulate into `grads` when provided.
    pub fn training_loss(
        &self,
        input: &GraphInput,
        beta: f64,
        eps: &[f64],
        grads: Option<&mut ParamGrads>,
    ) -> Result<LossBreakdown, ModelError> {
        if eps.len() != self.spec.latent_dim {
            return Err(ModelError::ShapeMismatch(format!(
                "noise has {} dims, latent is {}",
                eps.len(),
                self.spec.latent_dim
            )));
        }
        let mut tape = Tape::new(&self.params);
        let vars = self.encode_tape(&mut tape, input);
        let sigma = tape.exp(vars.logsigma);
        let noise = tape.mul_const(sigma, eps);
        let z = tape.add(vars.mu, noise);
        let hidden = self.dec_hidden(&mut tape, z);
        let s_logits = self.decode_structure_tape(&mut tape, hidden);
        let (logits_p, logits_s) = self.decode_content_tape(&mut tape, hidden, input);

        let recon_structure = tape.bce_with_logits_mean(s_logits, &input.s_target);
        let recon_pitch = tape.cross_entropy_mean(logits_p, &input.target_primary);
        let recon_duration = tape.cross_entropy_mean(logits_s, &input.target_secondary);
        let kld = tape.gauss_kld(vars.mu, vars.logsigma);
        let weighted_kld = tape.scale(kld, beta);
        let recon = tape.add(recon_structure, recon_pitch);
        let recon = tape.add(recon, recon_duration);
        let total = tape.add(recon, weighted_kld);

        let breakdown = LossBreakdown {
            recon_structure: tape.value(recon_structure).data[0],
            recon_pitch: tape.value(recon_pitch).data[0],
            recon_duration: tape.value(recon_duration).data[0],
            kld: tape.value(kld).data[0],
            beta,
            total: tape.value(total).data[0],
        };
        if !breakdown.is_finite() {
            return Err(ModelError::NonFinite(format!("loss diverged: {breakdown:?}")));
        }
        if let Some(grads) = grads {
            tape.backward(total, grads);
        }
        Ok(breakdown)
    }

    /// Decodes a latent vector: structure probabilities binarize at
    /// `threshold`, then the content path runs over the graph implied
    /// by the binarized structure and fills argmax tokens at active
    /// cells.
    pub fn decode_latent(&self, z: &[f64], threshold: f64) -> Result<DecodeOutput, ModelError> {
        if z.len() != self.spec.latent_dim {
            return Err(ModelError::ShapeMismatch(format!(
                "latent has {} dims, expected {}",
                z.len(),
                self.spec.latent_dim
            )));
        }
        let spec = &self.spec;
        let mut tape = Tape::new(&self.params);
        let zv = tape.constant(Tensor::from_vec(&[1, spec.latent_dim], z.to_vec()));
        let hidden = self.dec_hidden(&mut tape, zv);
        let s_logits = self.decode_structure_tape(&mut tape, hidden);
        let s_probs = tape.sigmoid(s_logits);
        let probs = tape.value(s_probs).data.clone();
        let mut s_hat = StructureTensor::zeros(spec.n_tracks, spec.n_positions);
        for track in 0..spec.n_tracks {
            for pos in 0..spec.n_positions {
                if probs[track * spec.n_positions + pos] >= threshold {
                    s_hat.set(track, pos, true);
                }
            }
        }
        let c = self.fill_content(&mut tape, hidden, &s_hat, false);
        Ok(DecodeOutput { s_probs: probs, s_hat, c })
    }

    /// Content-only decode for an externally chosen structure tensor.
    /// With `mask_pad`, the argmax skips the PAD class, so every active
    /// cell receives real tokens.
    pub fn decode_content_for(
        &self,
        z: &[f64],
        s_hat: &StructureTensor,
        mask_pad: bool,
    ) -> Result<ContentTensor, ModelError> {
        if z.len() != self.spec.latent_dim {
            return Err(ModelError::ShapeMismatch(format!(
                "latent has {} dims, expected {}",
                z.len(),
                self.spec.latent_dim
            )));
        }
        let mut tape = Tape::new(&self.params);
        let zv = tape.constant(Tensor::from_vec(&[1, self.spec.latent_dim], z.to_vec()));
        let hidden = self.dec_hidden(&mut tape, zv);
        Ok(self.fill_content(&mut tape, hidden, s_hat, mask_pad))
    }

    fn fill_content(
        &self,
        tape: &mut Tape<'_>,
        hidden: VarId,
        s_hat: &StructureTensor,
        mask_pad: bool,
    ) -> ContentTensor {
        let spec = &self.spec;
        let input = GraphInput::from_structure(spec, s_hat);
        let (logits_p, logits_s) = self.decode_content_tape(tape, hidden, &input);
        let skip_p = mask_pad.then_some(spec.pad_primary);
        let skip_s = mask_pad.then_some(spec.pad_secondary);
        let tokens_p = argmax_rows_skipping(tape.value(logits_p), skip_p);
        let tokens_s = argmax_rows_skipping(tape.value(logits_s), skip_s);
        let (pad_p, pad_s) = (spec.pad_primary as u8, spec.pad_secondary as u8);
        let mut c = ContentTensor::padded(spec.n_tracks, spec.n_positions, spec.m_max, pad_p, pad_s);
        for (node, &(track, pos)) in input.cells.iter().enumerate() {
            for m in 0..spec.m_max {
                let slot = c.slot(track, pos as usize, m);
                c.pitch[slot] = tokens_p[node * spec.m_max + m] as u8;
                c.duration[slot] = tokens_s[node * spec.m_max + m] as u8;
            }
        }
        c
    }

    /// Evaluation pass: encode to mu, decode the structure path, and
    /// decode content teacher-forced on the ground-truth structure.
    pub fn reconstruct(&self, input: &GraphInput) -> Result<Reconstruction, ModelError> {
        let mut tape = Tape::new(&self.params);
        let vars = self.encode_tape(&mut tape, input);
        let hidden = self.dec_hidden(&mut tape, vars.mu);
        let s_logits = self.decode_structure_tape(&mut tape, hidden);
        let s_probs = tape.sigmoid(s_logits);
        let (logits_p, logits_s) = self.decode_content_tape(&mut tape, hidden, input);
        Ok(Reconstruction {
            s_probs: tape.value(s_probs).data.clone(),
            pred_primary: argmax_rows(tape.value(logits_p)),
            pred_secondary: argmax_rows(tape.value(logits_s)),
        })
    }
}

/// Decoded tensors plus the raw structure probabilities they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutput {
    /// Track-major activation probabilities.
    pub s_probs: Vec<f64>,
    pub s_hat: StructureTensor,
    pub c: ContentTensor,
}

fn argmax_rows(t: &Tensor) -> Vec<usize> {
    argmax_rows_skipping(t, None)
}

/// Row-wise argmax, optionally excluding one class; ties keep the
/// lowest index.
fn argmax_rows_skipping(t: &Tensor, skip: Option<usize>) -> Vec<usize> {
    let n = t.cols();
    t.data
        .chunks(n)
        .map(|row| {
            let mut best = usize::MAX;
            let mut best_val = f64::NEG_INFINITY;
            for (i, &v) in row.iter().enumerate() {
                if Some(i) == skip {
                    continue;
                }
                if v > best_val {
                    best_val = v;
                    best = i;
                }
            }
            if best == usize::MAX {
                0
            } else {
                best
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::build_phrase_graph;
    use crate::midi::{QNote, QuantizedScore};
    use crate::model::spec::ModelKind;
    use rand::SeedableRng;

    fn tiny_phrase_input() -> (GraphSpec, GraphInput) {
        let spec = GraphSpec::tiny(ModelKind::Phrase);
        let mut q = QuantizedScore::empty(16, 4);
        q.tracks[0].push(QNote { pitch: 7, onset_step: 0, duration_steps: 4 });
        q.tracks[0].push(QNote { pitch: 9, onset_step: 8, duration_steps: 4 });
        q.tracks[2].push(QNote { pitch: 3, onset_step: 0, duration_steps: 8 });
        q.tracks[2].push(QNote { pitch: 5, onset_step: 8, duration_steps: 8 });
        let g = build_phrase_graph(&q);
        let input = GraphInput::from_tensors(&spec, &g.s, &g.c).unwrap();
        assert_eq!(input.n_nodes(), 4);
        (spec, input)
    }

    #[test]
    fn rgcn_layer_with_zero_weights_is_bias_constant() {
        let mut ps = ParamSet::new();
        ps.add("h", &[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        ps.add("self", &[2, 2], vec![0.0; 4]);
        ps.add("type0", &[2, 2], vec![0.0; 4]);
        ps.add("bias", &[2], vec![0.5, -1.0]);
        let mut tape = Tape::new(&ps);
        let h = tape.param(0);
        let self_w = tape.param(1);
        let t0 = tape.param(2);
        let bias = tape.param(3);
        let out = rgcn_layer(&mut tape, h, &[(vec![1, 0], vec![0, 1])], self_w, &[t0], bias);
        assert_eq!(tape.value(out).data, vec![0.5, 0.0, 0.5, 0.0, 0.5, 0.0]);
    }

    #[test]
    fn rgcn_layer_without_edges_uses_self_only() {
        let mut ps = ParamSet::new();
        ps.add("h", &[2, 2], vec![1.0, -1.0, 2.0, 0.5]);
        ps.add("self", &[2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        ps.add("type0", &[2, 2], vec![9.0; 4]);
        ps.add("bias", &[2], vec![0.0, 0.0]);
        let mut tape = Tape::new(&ps);
        let h = tape.param(0);
        let self_w = tape.param(1);
        let t0 = tape.param(2);
        let bias = tape.param(3);
        let out = rgcn_layer(&mut tape, h, &[(vec![], vec![])], self_w, &[t0], bias);
        assert_eq!(tape.value(out).data, vec![1.0, 0.0, 2.0, 0.5]);
    }

    /// 3-node path 0-1-2 with identity self weights: hand-computed
    /// dense result.
    #[test]
    fn rgcn_layer_matches_hand_computation_on_path() {
        let mut ps = ParamSet::new();
        ps.add("h", &[3, 2], vec![1.0, 0.0, 0.0, 1.0, 2.0, 2.0]);
        ps.add("self", &[2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        ps.add("type0", &[2, 2], vec![0.5, 0.0, 0.0, 0.5]);
        ps.add("bias", &[2], vec![0.1, 0.1]);
        let mut tape = Tape::new(&ps);
        let h = tape.param(0);
        let self_w = tape.param(1);
        let t0 = tape.param(2);
        let bias = tape.param(3);
        // edges (0,1), (1,2): gather/seg both directions
        let neighbors = vec![(vec![1, 0, 2, 1], vec![0, 1, 1, 2])];
        let out = rgcn_layer(&mut tape, h, &neighbors, self_w, &[t0], bias);
        // node0: h0 + 0.5*h1 + b = (1,0) + (0,0.5) + (0.1,0.1) = (1.1,0.6)
        // node1: h1 + 0.5*mean(h0,h2) + b = (0,1) + (0.75,0.5) + b = (0.85,1.6)
        // node2: h2 + 0.5*h1 + b = (2,2) + (0,0.5) + b = (2.1,2.6)
        let expect = [1.1, 0.6, 0.85, 1.6, 2.1, 2.6];
        for (a, b) in tape.value(out).data.iter().zip(expect) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn encode_is_deterministic_and_finite() {
        let (spec, input) = tiny_phrase_input();
        let vae = GraphVae::new(spec, 11).unwrap();
        let a = vae.encode(&input).unwrap();
        let b = vae.encode(&input).unwrap();
        assert_eq!(a, b);
        assert!(a.sigma.iter().all(|&s| s > 0.0));
        assert_eq!(a.mu.len(), 8);
        assert_eq!(a.z, a.mu);
    }

    #[test]
    fn empty_graph_encodes_finite() {
        let spec = GraphSpec::tiny(ModelKind::Phrase);
        let s = StructureTensor::zeros(3, 64);
        let c = ContentTensor::padded(3, 64, 12, 128, 0);
        let input = GraphInput::from_tensors(&spec, &s, &c).unwrap();
        let vae = GraphVae::new(spec, 5).unwrap();
        let bundle = vae.encode(&input).unwrap();
        assert!(bundle.mu.iter().all(|x| x.is_finite()));
        let loss = vae.training_loss(&input, 0.5, &vec![0.0; 8], None).unwrap();
        assert!(loss.is_finite());
    }

    #[test]
    fn note_order_inside_chord_does_not_change_zc() {
        let spec = GraphSpec::tiny(ModelKind::Phrase);
        let mut q = QuantizedScore::empty(16, 4);
        // one piano chord of three notes plus a melody note
        q.tracks[0].push(QNote { pitch: 8, onset_step: 4, duration_steps: 4 });
        for pitch in [1u8, 3, 5] {
            q.tracks[2].push(QNote { pitch, onset_step: 0, duration_steps: 8 });
        }
        let g = build_phrase_graph(&q);
        let mut input = GraphInput::from_tensors(&spec, &g.s, &g.c).unwrap();
        let vae = GraphVae::new(spec, 3).unwrap();
        let a = vae.encode(&input).unwrap();
        // reverse the chord's three note rows (all belong to one node)
        let chord_rows: Vec<usize> = (0..input.note_node.len())
            .filter(|&r| input.note_node[r] == input.note_node[0])
            .collect();
        assert_eq!(chord_rows.len(), 1); // node 0 is the melody note
        let piano_rows: Vec<usize> = (0..input.note_node.len())
            .filter(|&r| input.note_node[r] == 1)
            .collect();
        assert_eq!(piano_rows.len(), 3);
        input.note_primary[piano_rows[0]..=piano_rows[2]].reverse();
        input.note_secondary[piano_rows[0]..=piano_rows[2]].reverse();
        let b = vae.encode(&input).unwrap();
        // mean pooling is order-invariant up to summation rounding
        for (x, y) in a.zc.iter().zip(&b.zc) {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
        for (x, y) in a.mu.iter().zip(&b.mu) {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }

    #[test]
    fn loss_total_composes_and_beta_zero_ignores_kld() {
        let (spec, input) = tiny_phrase_input();
        let vae = GraphVae::new(spec, 4).unwrap();
        let eps = vec![0.1; 8];
        let l0 = vae.training_loss(&input, 0.0, &eps, None).unwrap();
        let l1 = vae.training_loss(&input, 1.0, &eps, None).unwrap();
        assert!(l0.kld >= 0.0);
        let sum0 = l0.recon_structure + l0.recon_pitch + l0.recon_duration;
        assert!((l0.total - sum0).abs() < 1e-12);
        assert!((l1.total - (sum0 + l1.kld)).abs() < 1e-9);
    }

    #[test]
    fn decode_threshold_one_gives_empty_structure() {
        let spec = GraphSpec::tiny(ModelKind::Phrase);
        let vae = GraphVae::new(spec, 9).unwrap();
        let out = vae.decode_latent(&vec![0.3; 8], 1.0).unwrap();
        assert_eq!(out.s_hat.count_active(), 0);
        assert!(out.c.pitch.iter().all(|&p| p == 128));
        assert!(out.s_probs.iter().all(|&p| p < 1.0));
    }

    #[test]
    fn decode_is_deterministic() {
        let spec = GraphSpec::tiny(ModelKind::Song);
        let vae = GraphVae::new(spec, 2).unwrap();
        let z: Vec<f64> = (0..8).map(|i| (i as f64) * 0.2 - 0.8).collect();
        let a = vae.decode_latent(&z, 0.5).unwrap();
        let b = vae.decode_latent(&z, 0.5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn decode_shape_closure() {
        // decode(reparameterize(encode(x))) has x's tensor shapes
        for kind in [ModelKind::Phrase, ModelKind::Song] {
            let spec = GraphSpec::tiny(kind);
            let (s, c) = match kind {
                ModelKind::Phrase => {
                    let mut q = QuantizedScore::empty(16, 4);
                    q.tracks[0].push(QNote { pitch: 1, onset_step: 0, duration_steps: 2 });
                    let g = build_phrase_graph(&q);
                    (g.s, g.c)
                }
                ModelKind::Song => {
                    let labels = crate::corpus::parse_structure_labels("i4A8").unwrap();
                    let g = crate::graphs::build_song_graph(&crate::corpus::SongStructure {
                        phrases: labels,
                        source_id: "t".into(),
                    });
                    (g.s, g.c)
                }
            };
            let input = GraphInput::from_tensors(&spec, &s, &c).unwrap();
            let vae = GraphVae::new(spec.clone(), 1).unwrap();
            let bundle = vae.encode(&input).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
            let z = reparameterize(&bundle.mu, &bundle.sigma, &mut rng).unwrap();
            let out = vae.decode_latent(&z, 0.5).unwrap();
            assert_eq!((out.s_hat.n_tracks, out.s_hat.n_positions), (s.n_tracks, s.n_positions));
            assert_eq!(
                (out.c.n_tracks, out.c.n_positions, out.c.m_max),
                (c.n_tracks, c.n_positions, c.m_max)
            );
        }
    }

    #[test]
    fn reparameterize_contracts() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let mu = vec![1.0, -2.0];
        // sigma -> 0 limit: z = mu
        let z = reparameterize(&mu, &[1e-300, 1e-300], &mut rng).unwrap();
        assert!((z[0] - 1.0).abs() < 1e-9 && (z[1] + 2.0).abs() < 1e-9);
        // fixed seed reproducibility
        let mut r1 = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut r2 = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        assert_eq!(
            reparameterize(&mu, &[0.5, 0.5], &mut r1).unwrap(),
            reparameterize(&mu, &[0.5, 0.5], &mut r2).unwrap()
        );
        assert!(matches!(
            reparameterize(&mu, &[1.0, 0.0], &mut rng),
            Err(ModelError::NonPositiveSigma)
        ));
        assert!(matches!(
            reparameterize(&mu, &[1.0], &mut rng),
            Err(ModelError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn reparameterize_monte_carlo_mean() {
        // empirical mean of 1e5 draws stays within 4*sigma/sqrt(n)
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(123);
        let (mu, sigma) = (0.7, 1.3);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            sum += reparameterize(&[mu], &[sigma], &mut rng).unwrap()[0];
        }
        let mean = sum / n as f64;
        let bound = 4.0 * sigma / (n as f64).sqrt();
        assert!((mean - mu).abs() < bound, "mean {mean} vs {mu} +- {bound}");
    }
}
