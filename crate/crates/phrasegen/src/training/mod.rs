//! Optimization: beta/learning-rate schedules, Adam, the training
//! loop, reconstruction evaluation, and checkpoint/metric sinks.

use crate::model::{
    Checkpoint, GraphInput, GraphVae, LossBreakdown, ModelError, ParamGrads, ParamSet,
};
use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::PathBuf;
use thiserror::Error;

/// Gradients are accumulated in a fixed number of chunks so results do
/// not depend on how many worker threads rayon happens to use.
const GRAD_CHUNKS: usize = 8;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("non-finite loss at step {step} (batch sample indices {batch:?})")]
    NonFinite { step: u64, batch: Vec<usize> },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("training I/O failed: {0}")]
    Io(#[from] std::io::Error),
}

/// Hyperparameters. Defaults mirror the published training setup:
/// Adam at 1e-4 decayed by (1 - 5e-6) per step after 8000 updates, 150
/// epochs, and a beta ramp of 0.001 per interval after a warmup.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub beta_warmup_steps: u64,
    pub beta_increment: f64,
    pub beta_interval_steps: u64,
    pub lr_initial: f64,
    pub lr_decay_start: u64,
    pub lr_decay_factor: f64,
    pub epochs: usize,
    pub seed: u64,
    pub grad_clip_norm: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Hard cap on total weight updates; `None` runs all epochs.
    pub max_steps: Option<u64>,
}

impl TrainConfig {
    /// Phrase model: batch 32, beta 0 for 5000 steps then +0.001 every
    /// 2000.
    pub fn phrase_defaults() -> TrainConfig {
        TrainConfig {
            batch_size: 32,
            beta_warmup_steps: 5000,
            beta_increment: 0.001,
            beta_interval_steps: 2000,
            ..TrainConfig::base()
        }
    }

    /// Song-structure model: batch 8, beta 0 for 2000 steps then
    /// +0.001 every 800.
    pub fn song_defaults() -> TrainConfig {
        TrainConfig {
            batch_size: 8,
            beta_warmup_steps: 2000,
            beta_increment: 0.001,
            beta_interval_steps: 800,
            ..TrainConfig::base()
        }
    }

    fn base() -> TrainConfig {
        TrainConfig {
            batch_size: 32,
            beta_warmup_steps: 5000,
            beta_increment: 0.001,
            beta_interval_steps: 2000,
            lr_initial: 1e-4,
            lr_decay_start: 8000,
            lr_decay_factor: 1.0 - 5e-6,
            epochs: 150,
            seed: 0,
            grad_clip_norm: 5.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            max_steps: None,
        }
    }
}

/// KL weight at a given optimizer step: zero through the warmup, then
/// one increment per interval.
pub fn beta_schedule(step: u64, cfg: &TrainConfig) -> f64 {
    if step < cfg.beta_warmup_steps {
        0.0
    } else {
        cfg.beta_increment * (1 + (step - cfg.beta_warmup_steps) / cfg.beta_interval_steps) as f64
    }
}

/// Learning rate at a given optimizer step: constant, then exponential
/// decay after `lr_decay_start`.
pub fn lr_schedule(step: u64, cfg: &TrainConfig) -> f64 {
    if step <= cfg.lr_decay_start {
        cfg.lr_initial
    } else {
        cfg.lr_initial * cfg.lr_decay_factor.powf((step - cfg.lr_decay_start) as f64)
    }
}

/// Plain Adam with bias correction.
pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(params: &ParamSet, cfg: &TrainConfig) -> Adam {
        Adam {
            m: params.entries.iter().map(|p| vec![0.0; p.data.len()]).collect(),
            v: params.entries.iter().map(|p| vec![0.0; p.data.len()]).collect(),
            t: 0,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamGrads, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, p) in params.entries.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], &grads.grads[i]);
            for j in 0..p.data.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p.data[j] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// One metrics-log line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub lr: f64,
    pub beta: f64,
    #[serde(flatten)]
    pub loss: LossBreakdown,
}

/// Incremental trainer: owns the model, optimizer state, data order,
/// and noise stream. One [`Trainer::train_step`] = one weight update.
pub struct Trainer {
    pub vae: GraphVae,
    pub cfg: TrainConfig,
    adam: Adam,
    step: u64,
    batches_processed: u64,
    epoch_rng: rand_chacha::ChaCha8Rng,
    noise_rng: rand_chacha::ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
}

impl Trainer {
    pub fn new(vae: GraphVae, cfg: TrainConfig) -> Trainer {
        let adam = Adam::new(&vae.params, &cfg);
        // distinct deterministic streams for data order and latent noise
        let epoch_rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(2).wrapping_add(1));
        let noise_rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(2).wrapping_add(2));
        Trainer {
            vae,
            cfg,
            adam,
            step: 0,
            batches_processed: 0,
            epoch_rng,
            noise_rng,
            order: Vec::new(),
            cursor: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn batches_processed(&self) -> u64 {
        self.batches_processed
    }

    fn next_batch(&mut self, n: usize) -> Vec<usize> {
        use rand::seq::SliceRandom;
        if self.cursor >= self.order.len() || self.order.len() != n {
            self.order = (0..n).collect();
            self.order.shuffle(&mut self.epoch_rng);
            self.cursor = 0;
        }
        let end = (self.cursor + self.cfg.batch_size).min(self.order.len());
        let batch = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        batch
    }

    /// Runs one mini-batch update and returns the batch-mean loss.
    pub fn train_step(&mut self, data: &[GraphInput]) -> Result<LossBreakdown, TrainError> {
        if data.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let batch = self.next_batch(data.len());
        let beta = beta_schedule(self.step, &self.cfg);
        let lr = lr_schedule(self.step, &self.cfg);
        let latent = self.vae.spec.latent_dim;
        let noise: Vec<Vec<f64>> = batch
            .iter()
            .map(|_| {
                (0..latent)
                    .map(|_| self.noise_rng.sample::<f64, _>(rand_distr::StandardNormal))
                    .collect()
            })
            .collect();

        // fixed chunking keeps the gradient reduction order independent
        // of thread scheduling
        let chunk_size = batch.len().div_ceil(GRAD_CHUNKS);
        let jobs: Vec<(usize, &[usize])> = batch
            .chunks(chunk_size)
            .enumerate()
            .map(|(i, c)| (i * chunk_size, c))
            .collect();
        let vae = &self.vae;
        let results: Vec<Result<(Vec<LossBreakdown>, ParamGrads), ModelError>> = jobs
            .par_iter()
            .map(|(offset, chunk)| {
                let mut grads = ParamGrads::zeros_like(&vae.params);
                let mut losses = Vec::with_capacity(chunk.len());
                for (k, &sample) in chunk.iter().enumerate() {
                    let eps = &noise[offset + k];
                    losses.push(vae.training_loss(&data[sample], beta, eps, Some(&mut grads))?);
                }
                Ok((losses, grads))
            })
            .collect();

        let mut grads = ParamGrads::zeros_like(&self.vae.params);
        let mut sums = LossBreakdown {
            recon_structure: 0.0,
            recon_pitch: 0.0,
            recon_duration: 0.0,
            kld: 0.0,
            beta,
            total: 0.0,
        };
        for result in results {
            let (losses, chunk_grads) = result.map_err(|e| match e {
                ModelError::NonFinite(_) => TrainError::NonFinite { step: self.step, batch: batch.clone() },
                other => TrainError::Model(other),
            })?;
            for l in losses {
                sums.recon_structure += l.recon_structure;
                sums.recon_pitch += l.recon_pitch;
                sums.recon_duration += l.recon_duration;
                sums.kld += l.kld;
                sums.total += l.total;
            }
            grads.add_assign(&chunk_grads);
        }
        let inv = 1.0 / batch.len() as f64;
        sums.recon_structure *= inv;
        sums.recon_pitch *= inv;
        sums.recon_duration *= inv;
        sums.kld *= inv;
        sums.total *= inv;
        grads.scale(inv);
        if !grads.all_finite() {
            return Err(TrainError::NonFinite { step: self.step, batch });
        }
        let norm = grads.global_norm();
        if norm > self.cfg.grad_clip_norm {
            grads.scale(self.cfg.grad_clip_norm / norm);
        }
        self.adam.step(&mut self.vae.params, &grads, lr);
        self.step += 1;
        self.batches_processed += 1;
        Ok(sums)
    }
}

/// Where `train` writes its artifacts.
#[derive(Default)]
pub struct TrainSink {
    pub log: Option<Box<dyn Write + Send>>,
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub vae: GraphVae,
    pub steps: u64,
    pub losses: Vec<LossBreakdown>,
    pub best_val_loss: Option<f64>,
}

fn save_checkpoints(
    trainer: &Trainer,
    val_data: &[GraphInput],
    sink: &TrainSink,
    best_val: &mut Option<f64>,
) -> Result<(), TrainError> {
    let Some(dir) = &sink.checkpoint_dir else { return Ok(()) };
    std::fs::create_dir_all(dir)?;
    let ckpt = Checkpoint::from_vae(&trainer.vae, trainer.step_count());
    ckpt.save(&dir.join("last.ckpt"))?;
    if !val_data.is_empty() {
        let val = validation_loss(&trainer.vae, val_data)?;
        if best_val.is_none_or(|b| val < b) {
            *best_val = Some(val);
            ckpt.save(&dir.join("best.ckpt"))?;
        }
    }
    Ok(())
}

/// Teacher-forced reconstruction loss at z = mu with beta = 0; the
/// model-selection criterion for `best.ckpt`.
pub fn validation_loss(vae: &GraphVae, data: &[GraphInput]) -> Result<f64, ModelError> {
    if data.is_empty() {
        return Ok(f64::NAN);
    }
    let zeros = vec![0.0; vae.spec.latent_dim];
    let losses: Vec<Result<f64, ModelError>> = data
        .par_iter()
        .map(|input| Ok(vae.training_loss(input, 0.0, &zeros, None)?.total))
        .collect();
    let mut sum = 0.0;
    for l in losses {
        sum += l?;
    }
    Ok(sum / data.len() as f64)
}

/// Full training run: `cfg.epochs` epochs of shuffled mini-batches,
/// a metrics-log line per step, `last.ckpt` at each epoch end, and
/// `best.ckpt` whenever validation improves.
pub fn train(
    vae: GraphVae,
    train_data: &[GraphInput],
    val_data: &[GraphInput],
    cfg: &TrainConfig,
    sink: &mut TrainSink,
) -> Result<TrainOutcome, TrainError> {
    if train_data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let steps_per_epoch = train_data.len().div_ceil(cfg.batch_size) as u64;
    let mut trainer = Trainer::new(vae, cfg.clone());
    let mut losses = Vec::new();
    let mut best_val: Option<f64> = None;
    'epochs: for _epoch in 0..cfg.epochs {
        for _ in 0..steps_per_epoch {
            if cfg.max_steps.is_some_and(|cap| trainer.step_count() >= cap) {
                break 'epochs;
            }
            let beta = beta_schedule(trainer.step_count(), cfg);
            let lr = lr_schedule(trainer.step_count(), cfg);
            let loss = trainer.train_step(train_data)?;
            if let Some(log) = sink.log.as_mut() {
                let record = StepRecord { step: trainer.step_count() - 1, lr, beta, loss };
                serde_json::to_writer(&mut *log, &record)
                    .map_err(|e| TrainError::Io(std::io::Error::other(e)))?;
                log.write_all(b"\n")?;
            }
            losses.push(loss);
        }
        save_checkpoints(&trainer, val_data, sink, &mut best_val)?;
    }
    // a max_steps cap can stop mid-epoch, before the epoch-end save
    save_checkpoints(&trainer, val_data, sink, &mut best_val)?;
    if let Some(log) = sink.log.as_mut() {
        log.flush()?;
    }
    debug_assert_eq!(trainer.step_count(), trainer.batches_processed());
    Ok(TrainOutcome {
        steps: trainer.step_count(),
        vae: trainer.vae,
        losses,
        best_val_loss: best_val,
    })
}

/// Accuracy summary of teacher-forced reconstruction at z = mu.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub n_examples: usize,
    /// F1 of thresholded structure activations against ground truth,
    /// averaged per example (1.0 when both sides are empty).
    pub activation_f1: f64,
    /// Fraction of structure cells predicted correctly.
    pub activation_accuracy: f64,
    /// Pitch (phrase) or type (song) token accuracy over real slots.
    pub primary_accuracy: f64,
    /// Duration (phrase) or length (song) token accuracy.
    pub secondary_accuracy: f64,
}

/// F1 and cell accuracy of binarized structure probabilities.
pub fn structure_scores(probs: &[f64], targets: &[f64], threshold: f64) -> (f64, f64) {
    let (mut tp, mut fp, mut fneg, mut correct) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &t) in probs.iter().zip(targets) {
        let pred = p >= threshold;
        let truth = t > 0.5;
        match (pred, truth) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
        if pred == truth {
            correct += 1;
        }
    }
    let f1 = if 2 * tp + fp + fneg == 0 {
        1.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
    };
    (f1, correct as f64 / targets.len().max(1) as f64)
}

/// Fraction of non-PAD target slots whose prediction matches.
pub fn token_accuracy(pred: &[usize], target: &[usize], pad: usize) -> Option<f64> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for (&p, &t) in pred.iter().zip(target) {
        if t == pad {
            continue;
        }
        total += 1;
        if p == t {
            hits += 1;
        }
    }
    (total > 0).then(|| hits as f64 / total as f64)
}

/// Decodes mu for every example and scores structure activations plus
/// teacher-forced content tokens.
pub fn evaluate_reconstruction(
    vae: &GraphVae,
    data: &[GraphInput],
) -> Result<ReconstructionReport, ModelError> {
    let results: Vec<Result<_, ModelError>> = data
        .par_iter()
        .map(|input| {
            let recon = vae.reconstruct(input)?;
            let (f1, acc) = structure_scores(&recon.s_probs, &input.s_target, 0.5);
            let primary = token_accuracy(&recon.pred_primary, &input.target_primary, vae.spec.pad_primary);
            let secondary =
                token_accuracy(&recon.pred_secondary, &input.target_secondary, vae.spec.pad_secondary);
            Ok((f1, acc, primary, secondary))
        })
        .collect();
    let mut f1_sum = 0.0;
    let mut acc_sum = 0.0;
    let (mut p_sum, mut p_n) = (0.0, 0usize);
    let (mut s_sum, mut s_n) = (0.0, 0usize);
    let n = data.len();
    for r in results {
        let (f1, acc, primary, secondary) = r?;
        f1_sum += f1;
        acc_sum += acc;
        if let Some(p) = primary {
            p_sum += p;
            p_n += 1;
        }
        if let Some(s) = secondary {
            s_sum += s;
            s_n += 1;
        }
    }
    Ok(ReconstructionReport {
        n_examples: n,
        activation_f1: f1_sum / n.max(1) as f64,
        activation_accuracy: acc_sum / n.max(1) as f64,
        primary_accuracy: if p_n > 0 { p_sum / p_n as f64 } else { 0.0 },
        secondary_accuracy: if s_n > 0 { s_sum / s_n as f64 } else { 0.0 },
    })
}
