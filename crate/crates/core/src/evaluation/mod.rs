//! Synthetic motion benchmark and the frozen-encoder linear probe.

mod synth;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::model::{backbone_features, NormMode, NormStats, Params};
use crate::sampling::{sample_clip, SamplingConfig};
use crate::tensor::{CropBox, Tensor, VideoClip};
use crate::training::{load_checkpoint, sgd_step, TrainState};
use crate::seeded_rng;

pub use synth::{
    find_video, generate_synthetic, load_dataset, load_pretrain_videos, save_dataset, video_id, video_rng, Dataset,
    LabeledSplit, Split, SynthConfig, VideoRecipe, DIRECTIONS, LABELS_FILE,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub lr: f64,
    pub epochs: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Scale each feature to zero mean and unit variance using training-split statistics.
    pub standardize: bool,
    /// Source frame at which the probe clip starts.
    pub clip_start: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            epochs: 100,
            momentum: 0.9,
            weight_decay: 0.0,
            batch_size: 32,
            standardize: true,
            clip_start: 0,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("probe needs lr > 0, epochs >= 1 and batch_size >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("probe.momentum must lie in [0, 1) and weight_decay >= 0".into()));
        }
        Ok(())
    }
}

/// Test-split accuracy of a linear probe. `confusion[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub top1: f64,
    /// `None` for classes absent from the test split.
    pub per_class: Vec<Option<f64>>,
    pub confusion: Vec<Vec<usize>>,
}

impl ProbeResult {
    pub fn from_predictions(truth: &[usize], predicted: &[usize], n_classes: usize) -> Self {
        let mut confusion = vec![vec![0; n_classes]; n_classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            confusion[t][p] += 1;
        }
        let correct: usize = (0..n_classes).map(|c| confusion[c][c]).sum();
        let per_class = confusion
            .iter()
            .enumerate()
            .map(|(c, row)| {
                let n: usize = row.iter().sum();
                (n > 0).then(|| row[c] as f64 / n as f64)
            })
            .collect();
        Self { top1: correct as f64 / truth.len().max(1) as f64, per_class, confusion }
    }
}

/// Encoder weights and normalization statistics, read-only.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenEncoder {
    pub params: Params,
    pub norm_stats: NormStats,
}

impl FrozenEncoder {
    /// The encoder a training run returns (the history network).
    pub fn from_state(state: &TrainState) -> Self {
        Self { params: state.encoder().clone(), norm_stats: state.norm_stats.clone() }
    }

    /// Untrained encoder drawn from `cfg.train.seed`.
    pub fn random(cfg: &Config) -> Self {
        Self::from_state(&TrainState::init(cfg))
    }

    pub fn load(dir: &std::path::Path) -> Result<(Config, Self)> {
        let (cfg, state) = load_checkpoint(dir)?;
        Ok((cfg, Self::from_state(&state)))
    }

    /// Pooled backbone features of each clip, computed in batches with the
    /// running statistics so every clip is encoded independently.
    pub fn features(&self, clips: &[VideoClip]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(clips.len());
        for chunk in clips.chunks(32) {
            let refs: Vec<&VideoClip> = chunk.iter().collect();
            out.extend(backbone_features(&self.params, &refs, NormMode::Running(&self.norm_stats))?);
        }
        Ok(out)
    }
}

/// The full-frame clip the probe sees for one source video.
pub fn probe_clip(video: &VideoClip, sampling: &SamplingConfig, start: usize) -> Result<VideoClip> {
    sample_clip(video, start, sampling, CropBox::full(video.height(), video.width()))
}

/// Each clip replaced by its first frame repeated, same length.
pub fn static_clips(clips: &[VideoClip]) -> Vec<VideoClip> {
    clips.iter().map(|c| c.repeat_frame(0)).collect()
}

fn probe_clips(split: &LabeledSplit, cfg: &Config) -> Result<Vec<VideoClip>> {
    split.videos.iter().map(|v| probe_clip(v, &cfg.sampling, cfg.probe.clip_start)).collect()
}

/// Trains a softmax-regression classifier on frozen features and reports
/// its test accuracy. Weights start at zero; minibatches follow a seeded shuffle.
pub fn fit_probe(
    train_x: &[Vec<f64>],
    train_y: &[usize],
    test_x: &[Vec<f64>],
    test_y: &[usize],
    n_classes: usize,
    cfg: &ProbeConfig,
) -> Result<ProbeResult> {
    cfg.validate()?;
    if train_x.is_empty() || test_x.is_empty() || train_x.len() != train_y.len() || test_x.len() != test_y.len() {
        return Err(Error::Dataset("probe needs non-empty, labeled train and test features".into()));
    }
    if train_y.iter().chain(test_y).any(|&y| y >= n_classes) {
        return Err(Error::Dataset(format!("label outside 0..{n_classes}")));
    }
    let d = train_x[0].len();
    if train_x.iter().chain(test_x).any(|x| x.len() != d) {
        return Err(Error::Dataset("feature vectors differ in length".into()));
    }

    let (mean, inv_std) = if cfg.standardize {
        let n = train_x.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| train_x.iter().map(|x| x[j]).sum::<f64>() / n).collect();
        let inv_std = (0..d)
            .map(|j| {
                let var = train_x.iter().map(|x| (x[j] - mean[j]).powi(2)).sum::<f64>() / n;
                if var > 1e-12 { 1.0 / var.sqrt() } else { 0.0 }
            })
            .collect();
        (mean, inv_std)
    } else {
        (vec![0.0; d], vec![1.0; d])
    };
    let prep = |x: &Vec<f64>| -> Vec<f64> { x.iter().zip(&mean).zip(&inv_std).map(|((v, m), s)| (v - m) * s).collect() };
    let train: Vec<Vec<f64>> = train_x.iter().map(prep).collect();
    let test: Vec<Vec<f64>> = test_x.iter().map(prep).collect();

    let c = n_classes;
    let mut params = vec![Tensor::zeros(&[d, c]), Tensor::zeros(&[c])];
    let mut velocity = params.clone();
    let mut rng = seeded_rng(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut logits = vec![0.0; c];
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut gw = vec![0.0; d * c];
            let mut gb = vec![0.0; c];
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                affine(&params, &train[i], &mut logits);
                softmax(&mut logits);
                logits[train_y[i]] -= 1.0;
                for (j, xv) in train[i].iter().enumerate() {
                    for k in 0..c {
                        gw[j * c + k] += scale * xv * logits[k];
                    }
                }
                for k in 0..c {
                    gb[k] += scale * logits[k];
                }
            }
            let grads = [Tensor::new(vec![d, c], gw)?, Tensor::new(vec![c], gb)?];
            sgd_step(&mut params, &grads, &mut velocity, cfg.lr, cfg.momentum, cfg.weight_decay)?;
        }
    }

    let predicted: Vec<usize> = test
        .iter()
        .map(|x| {
            affine(&params, x, &mut logits);
            argmax(&logits)
        })
        .collect();
    Ok(ProbeResult::from_predictions(test_y, &predicted, n_classes))
}

fn affine(params: &[Tensor], x: &[f64], out: &mut [f64]) {
    let c = out.len();
    out.copy_from_slice(params[1].data());
    let w = params[0].data();
    for (j, xv) in x.iter().enumerate() {
        for k in 0..c {
            out[k] += xv * w[j * c + k];
        }
    }
}

fn softmax(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    z.iter_mut().for_each(|v| *v /= sum);
}

/// Lowest index among ties.
fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in z.iter().enumerate() {
        if v > z[best] {
            best = i;
        }
    }
    best
}

/// Linear probe on full-frame clips of the dataset.
pub fn linear_probe(encoder: &FrozenEncoder, data: &Dataset, cfg: &Config) -> Result<ProbeResult> {
    let train = encoder.features(&probe_clips(&data.train, cfg)?)?;
    let test = encoder.features(&probe_clips(&data.test, cfg)?)?;
    fit_probe(&train, &data.train.labels, &test, &data.test.labels, data.n_classes, &cfg.probe)
}

/// The same probe with motion removed: train and test clips are their own
/// first frame repeated.
pub fn appearance_control(encoder: &FrozenEncoder, data: &Dataset, cfg: &Config) -> Result<ProbeResult> {
    let train = encoder.features(&static_clips(&probe_clips(&data.train, cfg)?))?;
    let test = encoder.features(&static_clips(&probe_clips(&data.test, cfg)?))?;
    fit_probe(&train, &data.train.labels, &test, &data.test.labels, data.n_classes, &cfg.probe)
}

/// Probe whose features are the one-hot labels themselves; a harness check.
#[doc(hidden)]
pub fn one_hot_probe(data: &Dataset, cfg: &Config) -> Result<ProbeResult> {
    let one_hot = |labels: &[usize]| -> Vec<Vec<f64>> {
        labels.iter().map(|&l| (0..data.n_classes).map(|k| (k == l) as u8 as f64).collect()).collect()
    };
    fit_probe(
        &one_hot(&data.train.labels),
        &data.train.labels,
        &one_hot(&data.test.labels),
        &data.test.labels,
        data.n_classes,
        &cfg.probe,
    )
}
