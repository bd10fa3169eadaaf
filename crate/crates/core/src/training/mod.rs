//! The pretraining loop: triplets, dual-encoder forward, loss, SGD, bank
//! push, momentum update, checkpoints.

mod checkpoint;

use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::augment_triplet;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::model::{forward, init_params, EncoderPair, NormMode, NormStats, Params};
use crate::objective::{td_loss, MemoryBank, TripletEmbedding};
use crate::sampling::sample_triplet;
use crate::tensor::{Tensor, VideoClip};
use crate::{seeded_rng, VtdlRng};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_DIR, MANIFEST};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr0: f64,
    pub sgd_momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// The learning rate is multiplied by `lr_decay_factor` every this many epochs.
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    pub batch_size: usize,
    /// Smoothing coefficient of the history encoder.
    pub m: f64,
    /// Weight of each batch in the running normalization statistics.
    pub norm_momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 0.01,
            sgd_momentum: 0.9,
            weight_decay: 5e-4,
            epochs: 50,
            lr_decay_every: 10,
            lr_decay_factor: 0.1,
            batch_size: 16,
            m: 0.99,
            norm_momentum: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0) || !(self.lr_decay_factor > 0.0) || self.lr_decay_every == 0 {
            return Err(Error::Config("train learning-rate schedule must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("train.epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.m) || !(0.0..1.0).contains(&self.sgd_momentum) {
            return Err(Error::Config("train.m must lie in [0, 1] and sgd_momentum in [0, 1)".into()));
        }
        if !(self.weight_decay >= 0.0) || !(0.0..=1.0).contains(&self.norm_momentum) {
            return Err(Error::Config("train.weight_decay and norm_momentum out of range".into()));
        }
        Ok(())
    }
}

/// Step-decayed learning rate for a zero-based epoch.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr0 * cfg.lr_decay_factor.powi((epoch / cfg.lr_decay_every) as i32)
}

/// SGD with momentum and L2 weight decay over named encoder parameters.
/// See [`sgd_step`].
pub fn sgd_update(
    params: &mut Params,
    grads: &Params,
    velocity: &mut Params,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    params.check_aligned(grads)?;
    params.check_aligned(velocity)?;
    for (name, g) in grads.iter() {
        if g.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient(name.to_string()));
        }
    }
    sgd_step(params.tensors_mut(), grads.tensors(), velocity.tensors_mut(), lr, momentum, weight_decay)
}

/// In place, element-wise on every tensor:
/// `g' = g + wd * p; v = momentum * v + g'; p -= lr * v`.
pub fn sgd_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    velocity: &mut [Tensor],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::ShapeMismatch { expected: vec![params.len()], got: vec![grads.len(), velocity.len()] });
    }
    for (i, ((p, g), v)) in params.iter().zip(grads).zip(velocity.iter()).enumerate() {
        p.check_same_shape(g)?;
        p.check_same_shape(v)?;
        if g.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient(format!("tensor {i}")));
        }
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity) {
        for ((pv, gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            let g = gv + weight_decay * *pv;
            *vv = momentum * *vv + g;
            *pv -= lr * *vv;
        }
    }
    Ok(())
}

/// Everything that evolves during pretraining.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub pair: EncoderPair,
    pub velocity: Params,
    pub bank: MemoryBank,
    /// Running normalization statistics, tracked from online-encoder batches
    /// and used by both encoders at evaluation time.
    pub norm_stats: NormStats,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed steps.
    pub step: usize,
    pub rng: VtdlRng,
}

impl TrainState {
    /// Fresh parameters, bank and generator, all derived from `cfg.train.seed`.
    pub fn init(cfg: &Config) -> Self {
        let mut rng = seeded_rng(cfg.train.seed);
        let online = init_params(&cfg.model, &mut rng);
        let bank = MemoryBank::init(cfg.objective.bank_size, cfg.model.embed_dim, &mut rng);
        Self {
            velocity: Params::zeros(&cfg.model),
            pair: EncoderPair::new(online, cfg.train.m),
            bank,
            norm_stats: NormStats::new(&cfg.model),
            epoch: 0,
            step: 0,
            rng,
        }
    }

    /// The encoder the run hands back for downstream use.
    pub fn encoder(&self) -> &Params {
        &self.pair.history
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub mean_pos_sim: f64,
    pub mean_neg_sim: f64,
}

/// Switches for isolating parts of a step in tests and diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepControl {
    pub bank_push: bool,
    pub momentum_update: bool,
}

impl Default for StepControl {
    fn default() -> Self {
        Self { bank_push: true, momentum_update: true }
    }
}

/// One iteration over a batch of source videos. Video `i` borrows its
/// external-mix donor from video `i + 1` (cyclically).
pub fn train_step(videos: &[&VideoClip], state: &mut TrainState, cfg: &Config, control: StepControl) -> Result<StepMetrics> {
    if videos.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let lr = lr_at(state.epoch, &cfg.train);
    let b = videos.len();

    // (1) one augmented triplet per video
    let mut triplets = Vec::with_capacity(b);
    for (i, video) in videos.iter().enumerate() {
        let triplet = sample_triplet(video, &cfg.sampling, &mut state.rng)?;
        let donor = (b > 1).then(|| videos[(i + 1) % b]);
        triplets.push(augment_triplet(&triplet, donor, &cfg.basic_aug, &cfg.tca, &mut state.rng)?);
    }

    // (2) anchors through the history encoder, no gradient
    let anchors: Vec<&VideoClip> = triplets.iter().map(|t| &t.anchor).collect();
    let v_a = forward(&state.pair.history, &anchors, NormMode::Batch, false)?.embeddings()?;

    // (3) positives and negatives through the online encoder, as one batch
    let online_in: Vec<&VideoClip> = triplets.iter().map(|t| &t.positive).chain(triplets.iter().map(|t| &t.negative)).collect();
    let acts = forward(&state.pair.online, &online_in, NormMode::Batch, true)?;
    let online_emb = acts.embeddings()?;
    let (v_p, v_n) = online_emb.split_at(b);

    // (4) loss
    let batch: Vec<TripletEmbedding> = (0..b)
        .map(|i| TripletEmbedding { anchor: v_a[i].clone(), positive: v_p[i].clone(), negative: v_n[i].clone() })
        .collect();
    let out = td_loss(&batch, &state.bank, &cfg.objective)?;

    // (5) SGD on the online parameters
    let d_emb: Vec<Vec<f64>> = out.grad_positive.into_iter().chain(out.grad_negative).collect();
    let grads = acts.backward(&state.pair.online, &d_emb)?;
    sgd_update(&mut state.pair.online, &grads, &mut state.velocity, lr, cfg.train.sgd_momentum, cfg.train.weight_decay)?;
    state.norm_stats.update(acts.norm_stats(), cfg.train.norm_momentum);

    // (6) bank, then (7) history
    if control.bank_push && state.bank.capacity() > 0 {
        state.bank.push(&v_a)?;
    }
    if control.momentum_update {
        state.pair.momentum_update()?;
    }

    state.step += 1;
    Ok(StepMetrics {
        step: state.step,
        epoch: state.epoch,
        loss: out.loss,
        lr,
        mean_pos_sim: out.mean_pos_sim,
        mean_neg_sim: out.mean_neg_sim,
    })
}

/// Runs one full epoch: seeded shuffle, then consecutive batches.
pub fn train_epoch(
    dataset: &[VideoClip],
    state: &mut TrainState,
    cfg: &Config,
    mut on_step: impl FnMut(&StepMetrics) -> Result<()>,
) -> Result<()> {
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut state.rng);
    for chunk in order.chunks(cfg.train.batch_size) {
        let videos: Vec<&VideoClip> = chunk.iter().map(|&i| &dataset[i]).collect();
        let metrics = train_step(&videos, state, cfg, StepControl::default())?;
        on_step(&metrics)?;
    }
    state.epoch += 1;
    Ok(())
}

/// Runs pretraining in memory, from `state` until `cfg.train.epochs`.
pub fn pretrain_in_memory(
    dataset: &[VideoClip],
    cfg: &Config,
    state: &mut TrainState,
    mut on_step: impl FnMut(&StepMetrics),
) -> Result<()> {
    check_dataset(dataset, cfg)?;
    while state.epoch < cfg.train.epochs {
        train_epoch(dataset, state, cfg, |m| {
            on_step(m);
            Ok(())
        })?;
    }
    Ok(())
}

fn check_dataset(dataset: &[VideoClip], cfg: &Config) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::Dataset("no training videos".into()));
    }
    let mut rng = seeded_rng(0);
    for video in dataset {
        sample_triplet(video, &cfg.sampling, &mut rng).map_err(|e| match e {
            Error::VideoTooShort { .. } => e,
            other => Error::Dataset(format!("video {}: {other}", video.source_id)),
        })?;
    }
    Ok(())
}

/// Options for [`run_pretrain`].
#[derive(Debug, Clone, Default)]
pub struct PretrainOptions {
    /// Continue from this checkpoint directory.
    pub resume: Option<PathBuf>,
    /// Stop after this many completed epochs, as if interrupted.
    pub stop_after_epoch: Option<usize>,
}

/// Name of the metrics log inside the output directory.
pub const METRICS_LOG: &str = "metrics.jsonl";

/// Pretrains with checkpoints. Every completed epoch atomically replaces
/// `out/latest`; every step appends one JSON line to `out/metrics.jsonl`.
/// Returns the path of the final checkpoint.
pub fn run_pretrain(dataset: &[VideoClip], cfg: &Config, out: &Path, opts: &PretrainOptions) -> Result<PathBuf> {
    cfg.validate()?;
    check_dataset(dataset, cfg)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut state = match &opts.resume {
        Some(dir) => load_checkpoint(dir)?.1,
        None => TrainState::init(cfg),
    };
    let log_path = out.join(METRICS_LOG);
    truncate_log(&log_path, state.step)?;
    let ckpt = out.join(CHECKPOINT_DIR);
    if opts.resume.is_none() || !ckpt.join(MANIFEST).exists() {
        save_checkpoint(&ckpt, &state, cfg)?;
    }

    let mut log = OpenOptions::new().create(true).append(true).open(&log_path).map_err(|e| Error::io(&log_path, e))?;
    while state.epoch < cfg.train.epochs {
        if opts.stop_after_epoch.is_some_and(|stop| state.epoch >= stop) {
            break;
        }
        train_epoch(dataset, &mut state, cfg, |m| {
            let line = serde_json::to_string(m)?;
            writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e))
        })?;
        log.flush().map_err(|e| Error::io(&log_path, e))?;
        save_checkpoint(&ckpt, &state, cfg)?;
    }
    Ok(ckpt)
}

/// Keeps only the first `steps` records, dropping any written after the
/// checkpoint being resumed from.
fn truncate_log(path: &Path, steps: usize) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<String> = BufReader::new(file).lines().take(steps).collect::<std::io::Result<_>>().map_err(|e| Error::io(path, e))?;
    let mut text = lines.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests;
