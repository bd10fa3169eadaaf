//! Dense f64 tensors, video clips, and discrete time derivatives.

mod format;
mod frames;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use format::{decode_tensor, encode_tensor, load_tensor, save_tensor, save_tensor_exact, Precision};
pub use frames::{load_frame_dir, save_clip_pngs, save_frame_png};

/// Row-major dense tensor of 64-bit floats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking that the shape matches the data and every
    /// element is finite.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if shape.is_empty() || shape.contains(&0) || n != data.len() {
            return Err(Error::ShapeDataMismatch { shape, len: data.len() });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        assert!(!shape.is_empty() && shape.iter().all(|&d| d > 0), "invalid shape {shape:?}");
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let mut t = Self::zeros(shape);
        t.data.fill(value);
        t
    }

    /// Builds a tensor by evaluating `f` at every flat index.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let mut t = Self::zeros(shape);
        for (i, v) in t.data.iter_mut().enumerate() {
            *v = f(i);
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the raw buffer. Callers must keep values finite.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { shape: self.shape.clone(), data })
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn check_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch { expected: self.shape.clone(), got: other.shape.clone() });
        }
        Ok(())
    }

    /// Number of elements in one slice along the leading axis.
    fn leading_stride(&self) -> usize {
        self.shape[1..].iter().product()
    }
}

/// Axis-aligned box in pixel coordinates of the source frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CropBox {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl CropBox {
    pub fn new(top: usize, left: usize, height: usize, width: usize) -> Self {
        Self { top, left, height, width }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self { top: 0, left: 0, height, width }
    }

    pub fn fits(&self, height: usize, width: usize) -> bool {
        self.top + self.height <= height && self.left + self.width <= width
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.top && y < self.top + self.height && x >= self.left && x < self.left + self.width
    }

    /// Chebyshev distance between the top-left corners.
    pub fn displacement(&self, other: &CropBox) -> usize {
        self.top.abs_diff(other.top).max(self.left.abs_diff(other.left))
    }
}

/// A `[T, H, W, C]` clip with values in `[0, 1]` and where it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoClip {
    frames: Tensor,
    pub source_id: String,
    pub start_timestep: usize,
    pub temporal_stride: usize,
    pub crop_box: CropBox,
}

impl VideoClip {
    pub fn new(
        frames: Tensor,
        source_id: impl Into<String>,
        start_timestep: usize,
        temporal_stride: usize,
        crop_box: CropBox,
    ) -> Result<Self> {
        validate_frames(&frames)?;
        if temporal_stride == 0 {
            return Err(Error::InvalidClip("temporal stride must be positive".into()));
        }
        Ok(Self { frames, source_id: source_id.into(), start_timestep, temporal_stride, crop_box })
    }

    /// A clip that spans its whole source: start 0, stride 1, full-frame box.
    pub fn from_frames(frames: Tensor, source_id: impl Into<String>) -> Result<Self> {
        let (h, w) = match frames.shape() {
            [_, h, w, _] => (*h, *w),
            s => return Err(Error::InvalidClip(format!("expected rank 4, got shape {s:?}"))),
        };
        Self::new(frames, source_id, 0, 1, CropBox::full(h, w))
    }

    /// Same provenance, new pixel content.
    pub fn with_frames(&self, frames: Tensor) -> Result<Self> {
        validate_frames(&frames)?;
        Ok(Self { frames, ..self.metadata_only() })
    }

    fn metadata_only(&self) -> Self {
        Self {
            frames: Tensor { shape: vec![1], data: vec![0.0] },
            source_id: self.source_id.clone(),
            start_timestep: self.start_timestep,
            temporal_stride: self.temporal_stride,
            crop_box: self.crop_box,
        }
    }

    pub fn frames(&self) -> &Tensor {
        &self.frames
    }

    pub fn into_frames(self) -> Tensor {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.shape[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn height(&self) -> usize {
        self.frames.shape[1]
    }

    pub fn width(&self) -> usize {
        self.frames.shape[2]
    }

    pub fn channels(&self) -> usize {
        self.frames.shape[3]
    }

    pub fn frame_len(&self) -> usize {
        self.frames.leading_stride()
    }

    /// Pixels of frame `j` as a flat `[H, W, C]` slice.
    pub fn frame(&self, j: usize) -> &[f64] {
        let n = self.frame_len();
        &self.frames.data[j * n..(j + 1) * n]
    }

    /// Frame `j` as an owned `[H, W, C]` tensor.
    pub fn frame_tensor(&self, j: usize) -> Tensor {
        Tensor { shape: self.frames.shape[1..].to_vec(), data: self.frame(j).to_vec() }
    }

    /// Clip whose every frame is frame `j` of this one.
    pub fn repeat_frame(&self, j: usize) -> Self {
        let frame = self.frame(j);
        let data = frame.repeat(self.len());
        let frames = Tensor { shape: self.frames.shape.clone(), data };
        Self { frames, ..self.metadata_only() }
    }
}

fn validate_frames(frames: &Tensor) -> Result<()> {
    let &[t, _, _, c] = frames.shape() else {
        return Err(Error::InvalidClip(format!("expected [T, H, W, C], got {:?}", frames.shape())));
    };
    if t < 2 {
        return Err(Error::InvalidClip(format!("need at least 2 frames, got {t}")));
    }
    if c != 1 && c != 3 {
        return Err(Error::InvalidClip(format!("channel count must be 1 or 3, got {c}")));
    }
    if frames.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidClip("pixel values must lie in [0, 1]".into()));
    }
    Ok(())
}

/// k-th forward difference of a tensor along its leading axis.
///
/// The output has `shape[0] - k` slices; slice `j` of the first difference is
/// `x[j + 1] - x[j]`.
pub fn temporal_difference(x: &Tensor, order: usize) -> Result<Tensor> {
    let len = x.shape[0];
    if order >= len {
        return Err(Error::OrderTooLarge { order, len });
    }
    let stride = x.leading_stride();
    let mut cur = x.data.clone();
    let mut steps = len;
    for _ in 0..order {
        steps -= 1;
        for j in 0..steps {
            let (lo, hi) = cur.split_at_mut((j + 1) * stride);
            let prev = &mut lo[j * stride..];
            for (p, n) in prev.iter_mut().zip(&hi[..stride]) {
                *p = *n - *p;
            }
        }
        cur.truncate(steps * stride);
    }
    let mut shape = x.shape.clone();
    shape[0] = steps;
    // order 0 on a one-slice tensor is the only path to zero slices, and it is
    // rejected above
    Ok(Tensor { shape, data: cur })
}

/// k-th forward difference of a clip along time, shape `[T - k, H, W, C]`.
pub fn frame_difference(clip: &VideoClip, order: usize) -> Result<Tensor> {
    if order == 0 {
        return Err(Error::InvalidClip("difference order must be positive".into()));
    }
    temporal_difference(&clip.frames, order)
}
