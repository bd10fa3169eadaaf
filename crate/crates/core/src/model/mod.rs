//! Small 3D convolutional encoder with a normalized projection head.
//!
//! Each block is a 3x3x3 convolution (unit padding, no bias), per-channel
//! normalization with a learned scale and shift, and a rectifier. The block
//! stack is followed by global average pooling, an affine projection, and L2
//! normalization. Gradients are computed by hand; see [`Activations::backward`].

mod forward;
pub(crate) mod kernels;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tensor, VideoClip};

pub use forward::{forward, Activations, NormMode};

/// Pre-normalization norms below this are rejected as [`Error::ZeroNorm`].
pub const ZERO_NORM_EPS: f64 = 1e-12;
/// Variance floor inside the per-channel normalization.
pub const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub out_channels: usize,
    pub spatial_stride: usize,
    pub temporal_stride: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSpec {
    pub in_channels: usize,
    pub blocks: Vec<BlockSpec>,
    pub embed_dim: usize,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        let block = |out_channels, spatial_stride, temporal_stride| BlockSpec { out_channels, spatial_stride, temporal_stride };
        Self { in_channels: 3, blocks: vec![block(16, 2, 1), block(32, 2, 2), block(64, 2, 2)], embed_dim: 128 }
    }
}

impl EncoderSpec {
    pub fn feature_dim(&self) -> usize {
        self.blocks.last().map_or(self.in_channels, |b| b.out_channels)
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() || self.embed_dim == 0 || !matches!(self.in_channels, 1 | 3) {
            return Err(Error::Config("model needs >= 1 block, embed_dim > 0 and 1 or 3 input channels".into()));
        }
        if self.blocks.iter().any(|b| b.out_channels == 0 || b.spatial_stride == 0 || b.temporal_stride == 0) {
            return Err(Error::Config("model block channels and strides must be positive".into()));
        }
        Ok(())
    }

    /// Names and shapes of every parameter tensor, in canonical order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut cin = self.in_channels;
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("block{i}.conv.weight"), vec![3, 3, 3, cin, b.out_channels]));
            out.push((format!("block{i}.norm.scale"), vec![b.out_channels]));
            out.push((format!("block{i}.norm.shift"), vec![b.out_channels]));
            cin = b.out_channels;
        }
        out.push(("proj.weight".into(), vec![cin, self.embed_dim]));
        out.push(("proj.bias".into(), vec![self.embed_dim]));
        out
    }
}

/// Ordered, named parameter tensors. Gradients and optimizer buffers use
/// the same type so they line up with the parameters entry by entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    spec: EncoderSpec,
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl Params {
    pub fn zeros(spec: &EncoderSpec) -> Self {
        let (names, tensors) = spec.layout().into_iter().map(|(n, s)| (n, Tensor::zeros(&s))).unzip();
        Self { spec: spec.clone(), names, tensors }
    }

    /// Rebuilds parameters from named tensors, checking them against `spec`.
    pub fn from_named(spec: &EncoderSpec, mut named: Vec<(String, Tensor)>) -> Result<Self> {
        let layout = spec.layout();
        if named.len() != layout.len() {
            return Err(Error::CheckpointCorrupt(format!("expected {} tensors, got {}", layout.len(), named.len())));
        }
        let mut tensors = Vec::with_capacity(layout.len());
        for (name, shape) in &layout {
            let pos = named
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| Error::CheckpointCorrupt(format!("missing tensor {name}")))?;
            let (_, t) = named.swap_remove(pos);
            if t.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch { expected: shape.clone(), got: t.shape().to_vec() });
            }
            tensors.push(t);
        }
        Ok(Self { spec: spec.clone(), names: layout.into_iter().map(|(n, _)| n).collect(), tensors })
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter_mut())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &mut self.tensors[i])
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn check_aligned(&self, other: &Params) -> Result<()> {
        if self.names != other.names {
            return Err(Error::ShapeMismatch { expected: vec![self.names.len()], got: vec![other.names.len()] });
        }
        for (a, b) in self.tensors.iter().zip(&other.tensors) {
            a.check_same_shape(b)?;
        }
        Ok(())
    }

    pub(crate) fn block_tensors(&self, block: usize) -> (&Tensor, &Tensor, &Tensor) {
        let i = 3 * block;
        (&self.tensors[i], &self.tensors[i + 1], &self.tensors[i + 2])
    }

    pub(crate) fn projection(&self) -> (&Tensor, &Tensor) {
        let n = self.tensors.len();
        (&self.tensors[n - 2], &self.tensors[n - 1])
    }
}

/// Uniform `[-b, b]` kernels with `b = sqrt(6 / fan_in)`, unit normalization
/// scales, and zero shifts and biases.
pub fn init_params<R: Rng + ?Sized>(spec: &EncoderSpec, rng: &mut R) -> Params {
    let mut params = Params::zeros(spec);
    for (name, t) in params.iter_mut() {
        if name.ends_with(".weight") {
            let bound = init_bound(t.shape());
            t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-bound..=bound));
        } else if name.ends_with(".scale") {
            t.data_mut().fill(1.0);
        }
    }
    params
}

/// Initialization bound for a weight of the given shape (fan-in is every
/// dimension but the last).
pub fn init_bound(shape: &[usize]) -> f64 {
    let fan_in: usize = shape[..shape.len() - 1].iter().product();
    (6.0 / fan_in as f64).sqrt()
}

/// Running per-channel statistics used when normalizing outside training.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<Vec<f64>>,
    pub var: Vec<Vec<f64>>,
}

impl NormStats {
    pub fn new(spec: &EncoderSpec) -> Self {
        Self {
            mean: spec.blocks.iter().map(|b| vec![0.0; b.out_channels]).collect(),
            var: spec.blocks.iter().map(|b| vec![1.0; b.out_channels]).collect(),
        }
    }

    /// Exponential moving average towards `batch` with weight `rate`.
    pub fn update(&mut self, batch: &NormStats, rate: f64) {
        let blend = |dst: &mut Vec<Vec<f64>>, src: &Vec<Vec<f64>>| {
            for (d, s) in dst.iter_mut().flatten().zip(src.iter().flatten()) {
                *d = (1.0 - rate) * *d + rate * s;
            }
        };
        blend(&mut self.mean, &batch.mean);
        blend(&mut self.var, &batch.var);
    }

    pub fn to_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, (m, v)) in self.mean.iter().zip(&self.var).enumerate() {
            out.push((format!("block{i}.norm.running_mean"), Tensor::new(vec![m.len()], m.clone()).unwrap()));
            out.push((format!("block{i}.norm.running_var"), Tensor::new(vec![v.len()], v.clone()).unwrap()));
        }
        out
    }

    pub fn from_tensors(spec: &EncoderSpec, named: &[(String, Tensor)]) -> Result<Self> {
        let mut stats = Self::new(spec);
        for (i, b) in spec.blocks.iter().enumerate() {
            for (key, dst) in [("running_mean", &mut stats.mean[i]), ("running_var", &mut stats.var[i])] {
                let name = format!("block{i}.norm.{key}");
                let t = named
                    .iter()
                    .find(|(n, _)| *n == name)
                    .map(|(_, t)| t)
                    .ok_or_else(|| Error::CheckpointCorrupt(format!("missing tensor {name}")))?;
                if t.len() != b.out_channels {
                    return Err(Error::CheckpointCorrupt(format!("{name} has {} entries", t.len())));
                }
                dst.copy_from_slice(t.data());
            }
        }
        Ok(stats)
    }
}

/// Unit-norm feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Scales `values` to unit norm.
    pub fn normalize(values: Vec<f64>) -> Result<Self> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm >= ZERO_NORM_EPS) {
            return Err(Error::ZeroNorm);
        }
        Ok(Self(values.into_iter().map(|v| v / norm).collect()))
    }

    /// Wraps values that are already unit-norm (within 1e-9).
    pub fn from_unit(values: Vec<f64>) -> Result<Self> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::ZeroNorm);
        }
        Ok(Self(values))
    }

    #[cfg(test)]
    pub(crate) fn from_unit_unchecked(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }
}

/// Online parameters and their momentum-averaged history copy.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderPair {
    pub online: Params,
    pub history: Params,
    pub m: f64,
}

impl EncoderPair {
    /// History starts as an exact copy of the online parameters.
    pub fn new(online: Params, m: f64) -> Self {
        Self { history: online.clone(), online, m }
    }

    /// `history <- m * history + (1 - m) * online`, every element.
    pub fn momentum_update(&mut self) -> Result<()> {
        self.online.check_aligned(&self.history)?;
        let m = self.m;
        for (h, o) in self.history.tensors.iter_mut().zip(&self.online.tensors) {
            for (hv, ov) in h.data_mut().iter_mut().zip(o.data()) {
                *hv = m * *hv + (1.0 - m) * ov;
            }
        }
        Ok(())
    }
}

/// Unit-norm embeddings of `clips`, normalizing with batch statistics.
pub fn encode(params: &Params, clips: &[&VideoClip]) -> Result<Vec<Embedding>> {
    forward(params, clips, NormMode::Batch, false)?.embeddings()
}

/// Pooled block-stack activations (before the projection), one vector per clip.
pub fn backbone_features(params: &Params, clips: &[&VideoClip], mode: NormMode<'_>) -> Result<Vec<Vec<f64>>> {
    Ok(forward(params, clips, mode, false)?.features())
}

#[cfg(test)]
mod tests;
