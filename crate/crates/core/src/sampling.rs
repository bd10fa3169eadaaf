//! Clip sampling and temporal triplet generation.
//!
//! A triplet holds three clips cut from one video: the anchor, a positive at
//! the same start time but a different spatial crop, and a negative whose
//! start lies more than `tau` timesteps away from the anchor's.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::TripletRecord;
use crate::error::{Error, Result};
use crate::tensor::{CropBox, Tensor, VideoClip};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub clip_len: usize,
    pub temporal_stride: usize,
    /// Minimum exclusive gap, in source timesteps, between anchor and negative starts.
    pub tau: usize,
    pub crop_size: usize,
    /// Minimum Chebyshev displacement between anchor and positive crops.
    /// `None` means `crop_size / 4`.
    pub min_crop_offset: Option<usize>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { clip_len: 16, temporal_stride: 4, tau: 2, crop_size: 24, min_crop_offset: None }
    }
}

impl SamplingConfig {
    pub fn min_offset(&self) -> usize {
        self.min_crop_offset.unwrap_or(self.crop_size / 4)
    }

    pub fn validate(&self) -> Result<()> {
        if self.clip_len < 2 {
            return Err(Error::Config("sampling.clip_len must be at least 2".into()));
        }
        if self.temporal_stride == 0 || self.crop_size == 0 {
            return Err(Error::Config("sampling.temporal_stride and crop_size must be positive".into()));
        }
        if self.min_offset() == 0 {
            return Err(Error::Config("sampling.min_crop_offset must be positive".into()));
        }
        Ok(())
    }
}

/// Source frame indices of a strided window, wrapped modulo `len`.
pub fn clip_indices(len: usize, t_start: usize, clip_len: usize, stride: usize) -> Vec<usize> {
    (0..clip_len).map(|i| (t_start + i * stride) % len).collect()
}

/// Cuts a strided, cropped clip out of `video`.
pub fn sample_clip(video: &VideoClip, t_start: usize, cfg: &SamplingConfig, crop: CropBox) -> Result<VideoClip> {
    if !crop.fits(video.height(), video.width()) || crop.height == 0 || crop.width == 0 {
        return Err(Error::CropOutOfBounds(crop));
    }
    let c = video.channels();
    let indices = clip_indices(video.len(), t_start, cfg.clip_len, cfg.temporal_stride);
    let mut data = Vec::with_capacity(indices.len() * crop.height * crop.width * c);
    for &t in &indices {
        let frame = video.frame(t);
        for y in crop.top..crop.top + crop.height {
            let row = (y * video.width() + crop.left) * c;
            data.extend_from_slice(&frame[row..row + crop.width * c]);
        }
    }
    let frames = Tensor::new(vec![indices.len(), crop.height, crop.width, c], data)?;
    let source_box = CropBox::new(
        video.crop_box.top + crop.top,
        video.crop_box.left + crop.left,
        crop.height,
        crop.width,
    );
    VideoClip::new(
        frames,
        video.source_id.clone(),
        video.start_timestep + t_start * video.temporal_stride,
        video.temporal_stride * cfg.temporal_stride,
        source_box,
    )
}

/// Every start `t` in `[0, len)` with `|t_a - t| > tau`, ascending.
pub fn negative_start_candidates(len: usize, t_a: usize, tau: usize) -> Vec<usize> {
    let below = if t_a > tau { (t_a - tau).min(len) } else { 0 };
    let above = t_a.saturating_add(tau).saturating_add(1);
    (0..below).chain(above..len).collect()
}

/// Uniform draw from [`negative_start_candidates`], or `None` when it is empty.
pub fn sample_negative_start<R: Rng + ?Sized>(len: usize, t_a: usize, tau: usize, rng: &mut R) -> Option<usize> {
    let candidates = negative_start_candidates(len, t_a, tau);
    (!candidates.is_empty()).then(|| candidates[rng.random_range(0..candidates.len())])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalTriplet {
    pub anchor: VideoClip,
    pub positive: VideoClip,
    pub negative: VideoClip,
    pub t_a: usize,
    pub t_p: usize,
    pub t_n: usize,
    pub record: TripletRecord,
}

impl TemporalTriplet {
    /// Checks the three structural constraints a triplet must satisfy.
    pub fn check(&self, tau: usize, min_offset: usize) -> std::result::Result<(), String> {
        if self.t_a.abs_diff(self.t_n) <= tau {
            return Err(format!("|t_a - t_n| = {} is not above tau = {tau}", self.t_a.abs_diff(self.t_n)));
        }
        if self.t_p != self.t_a || self.positive.temporal_stride != self.anchor.temporal_stride {
            return Err("positive does not share the anchor's time window".into());
        }
        let d = self.anchor.crop_box.displacement(&self.positive.crop_box);
        if d < min_offset.max(1) {
            return Err(format!("positive crop displaced by {d}, need {min_offset}"));
        }
        Ok(())
    }
}

fn crop_positions(height: usize, width: usize, size: usize) -> Vec<CropBox> {
    let mut out = Vec::with_capacity((height - size + 1) * (width - size + 1));
    for top in 0..=height - size {
        for left in 0..=width - size {
            out.push(CropBox::new(top, left, size, size));
        }
    }
    out
}

/// Draws one temporal triplet from `video`.
///
/// The anchor start is uniform over starts that admit at least one negative;
/// the anchor crop is uniform over crops that admit at least one positive.
pub fn sample_triplet<R: Rng + ?Sized>(video: &VideoClip, cfg: &SamplingConfig, rng: &mut R) -> Result<TemporalTriplet> {
    let len = video.len();
    let (h, w) = (video.height(), video.width());
    let size = cfg.crop_size;
    let offset = cfg.min_offset().max(1);
    if size > h || size > w {
        return Err(Error::FrameTooSmall { height: h, width: w, crop: size, offset });
    }

    let anchors: Vec<usize> = (0..len).filter(|&t| t > cfg.tau || t + cfg.tau + 1 < len).collect();
    if anchors.is_empty() {
        return Err(Error::VideoTooShort { id: video.source_id.clone(), len, tau: cfg.tau });
    }

    let positions = crop_positions(h, w, size);
    let has_partner = |b: &CropBox| positions.iter().any(|o| o.displacement(b) >= offset);
    let anchor_boxes: Vec<CropBox> = positions.iter().copied().filter(has_partner).collect();
    if anchor_boxes.is_empty() {
        return Err(Error::FrameTooSmall { height: h, width: w, crop: size, offset });
    }

    let t_a = anchors[rng.random_range(0..anchors.len())];
    let anchor_box = anchor_boxes[rng.random_range(0..anchor_boxes.len())];
    let partners: Vec<CropBox> = positions.iter().copied().filter(|b| b.displacement(&anchor_box) >= offset).collect();
    let positive_box = partners[rng.random_range(0..partners.len())];
    let t_n = sample_negative_start(len, t_a, cfg.tau, rng).expect("anchor start admits a negative");
    let negative_box = positions[rng.random_range(0..positions.len())];

    Ok(TemporalTriplet {
        anchor: sample_clip(video, t_a, cfg, anchor_box)?,
        positive: sample_clip(video, t_a, cfg, positive_box)?,
        negative: sample_clip(video, t_n, cfg, negative_box)?,
        t_a,
        t_p: t_a,
        t_n,
        record: TripletRecord::default(),
    })
}
