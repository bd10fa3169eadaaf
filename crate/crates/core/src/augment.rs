//! Basic augmentation and temporal consistent augmentation (TCA).
//!
//! TCA blends one static image into every frame of a clip and zeroes one
//! fixed spatial region. Because the blended image and the mask do not vary
//! in time, every temporal difference of the result is the temporal
//! difference of the input scaled by the blend weight.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::TemporalTriplet;
use crate::tensor::{CropBox, Tensor, VideoClip};

/// One applied transform, with the parameters that were drawn for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Transform {
    Resize { height: usize, width: usize },
    Crop { region: CropBox },
    Rotate { degrees: f64 },
    ColorJitter { brightness: f64, contrast: f64 },
    InternalMix { alpha: f64, frame: usize },
    ExternalMix { alpha: f64, donor: String, frame: usize },
    Cutout { region: CropBox },
}

impl Transform {
    pub fn is_tca(&self) -> bool {
        matches!(self, Transform::InternalMix { .. } | Transform::ExternalMix { .. } | Transform::Cutout { .. })
    }

    pub fn is_mix(&self) -> bool {
        matches!(self, Transform::InternalMix { .. } | Transform::ExternalMix { .. })
    }

    pub fn mix_alpha(&self) -> Option<f64> {
        match self {
            Transform::InternalMix { alpha, .. } | Transform::ExternalMix { alpha, .. } => Some(*alpha),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TripletRecord {
    pub anchor: Vec<Transform>,
    pub positive: Vec<Transform>,
    pub negative: Vec<Transform>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasicAugConfig {
    /// Shorter side is resized to `crop_size * s`, `s` drawn from this range.
    pub resize_scale_range: [f64; 2],
    pub crop_size: usize,
    pub brightness_jitter: f64,
    pub contrast_jitter: f64,
    pub max_rotation_deg: f64,
}

impl Default for BasicAugConfig {
    fn default() -> Self {
        Self {
            resize_scale_range: [1.0, 1.15],
            crop_size: 32,
            brightness_jitter: 0.2,
            contrast_jitter: 0.2,
            max_rotation_deg: 10.0,
        }
    }
}

impl BasicAugConfig {
    /// A configuration that leaves a `size`-square clip untouched.
    pub fn identity(size: usize) -> Self {
        Self {
            resize_scale_range: [1.0, 1.0],
            crop_size: size,
            brightness_jitter: 0.0,
            contrast_jitter: 0.0,
            max_rotation_deg: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.resize_scale_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::Config("basic_aug.resize_scale_range must satisfy 0 < low <= high".into()));
        }
        if self.crop_size == 0 {
            return Err(Error::Config("basic_aug.crop_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.brightness_jitter) || !(0.0..1.0).contains(&self.contrast_jitter) {
            return Err(Error::Config("basic_aug jitter half-ranges must lie in [0, 1)".into()));
        }
        if !(0.0..=10.0).contains(&self.max_rotation_deg) {
            return Err(Error::Config("basic_aug.max_rotation_deg must lie in [0, 10]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TcaConfig {
    pub alpha_range: [f64; 2],
    /// Cutout side lengths as fractions of the frame side.
    pub cutout_frac_range: [f64; 2],
    pub enable_cutout: bool,
    pub enable_internal_mix: bool,
    pub enable_external_mix: bool,
    /// Also apply TCA to the negative.
    pub tca_on_negative: bool,
}

impl Default for TcaConfig {
    fn default() -> Self {
        Self {
            alpha_range: [0.5, 1.0],
            cutout_frac_range: [0.2, 0.4],
            enable_cutout: true,
            enable_internal_mix: true,
            enable_external_mix: true,
            tca_on_negative: false,
        }
    }
}

impl TcaConfig {
    pub fn disabled() -> Self {
        Self { enable_cutout: false, enable_internal_mix: false, enable_external_mix: false, ..Self::default() }
    }

    pub fn any_enabled(&self) -> bool {
        self.enable_cutout || self.enable_internal_mix || self.enable_external_mix
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.alpha_range;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::Config("tca.alpha_range must be a sub-interval of [0, 1]".into()));
        }
        let [lo, hi] = self.cutout_frac_range;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::Config("tca.cutout_frac_range must be a sub-interval of [0, 1]".into()));
        }
        Ok(())
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Bilinear resize of one `[h, w, c]` frame with half-pixel centres.
pub(crate) fn resize_frame(src: &[f64], h: usize, w: usize, c: usize, nh: usize, nw: usize) -> Vec<f64> {
    if (h, w) == (nh, nw) {
        return src.to_vec();
    }
    let mut out = Vec::with_capacity(nh * nw * c);
    let sy = h as f64 / nh as f64;
    let sx = w as f64 / nw as f64;
    for y in 0..nh {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f64;
        for x in 0..nw {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f64;
            for ch in 0..c {
                let p = |yy: usize, xx: usize| src[(yy * w + xx) * c + ch];
                let top = p(y0, x0) * (1.0 - wx) + p(y0, x1) * wx;
                let bottom = p(y1, x0) * (1.0 - wx) + p(y1, x1) * wx;
                out.push(top * (1.0 - wy) + bottom * wy);
            }
        }
    }
    out
}

/// Rotation about the frame centre with bilinear sampling and edge replication.
fn rotate_frame(src: &[f64], h: usize, w: usize, c: usize, degrees: f64) -> Vec<f64> {
    let (sin, cos) = degrees.to_radians().sin_cos();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let mut out = Vec::with_capacity(h * w * c);
    for y in 0..h {
        for x in 0..w {
            let dy = y as f64 - cy;
            let dx = x as f64 - cx;
            // inverse map: output pixel -> source location
            let fy = (cy + dx * sin + dy * cos).clamp(0.0, (h - 1) as f64);
            let fx = (cx + dx * cos - dy * sin).clamp(0.0, (w - 1) as f64);
            let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
            let (wy, wx) = (fy - y0 as f64, fx - x0 as f64);
            for ch in 0..c {
                let p = |yy: usize, xx: usize| src[(yy * w + xx) * c + ch];
                let top = p(y0, x0) * (1.0 - wx) + p(y0, x1) * wx;
                let bottom = p(y1, x0) * (1.0 - wx) + p(y1, x1) * wx;
                out.push(top * (1.0 - wy) + bottom * wy);
            }
        }
    }
    out
}

/// Parameters of one basic augmentation, shared by every frame of a clip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasicParams {
    pub resized: (usize, usize),
    pub crop: CropBox,
    pub degrees: f64,
    pub brightness: f64,
    pub contrast: f64,
}

impl BasicParams {
    pub fn draw<R: Rng + ?Sized>(height: usize, width: usize, cfg: &BasicAugConfig, rng: &mut R) -> Result<Self> {
        let scale = uniform(rng, cfg.resize_scale_range);
        let target = (cfg.crop_size as f64 * scale).round() as usize;
        let short = height.min(width);
        let rh = ((height * target) as f64 / short as f64).round() as usize;
        let rw = ((width * target) as f64 / short as f64).round() as usize;
        let size = cfg.crop_size;
        if rh < size || rw < size {
            return Err(Error::CropTooLarge { crop: size, size: rh.min(rw) });
        }
        let top = rng.random_range(0..=rh - size);
        let left = rng.random_range(0..=rw - size);
        let r = cfg.max_rotation_deg;
        let degrees = uniform(rng, [-r, r]);
        let contrast = uniform(rng, [1.0 - cfg.contrast_jitter, 1.0 + cfg.contrast_jitter]);
        let brightness = uniform(rng, [1.0 - cfg.brightness_jitter, 1.0 + cfg.brightness_jitter]);
        Ok(Self { resized: (rh, rw), crop: CropBox::new(top, left, size, size), degrees, brightness, contrast })
    }

    pub fn apply(&self, clip: &VideoClip) -> Result<(VideoClip, Vec<Transform>)> {
        let (h, w, c) = (clip.height(), clip.width(), clip.channels());
        let (rh, rw) = self.resized;
        if !self.crop.fits(rh, rw) {
            return Err(Error::CropTooLarge { crop: self.crop.height.max(self.crop.width), size: rh.min(rw) });
        }
        let mut record = Vec::new();
        if (rh, rw) != (h, w) {
            record.push(Transform::Resize { height: rh, width: rw });
        }
        if self.crop != CropBox::full(rh, rw) {
            record.push(Transform::Crop { region: self.crop });
        }
        if self.degrees != 0.0 {
            record.push(Transform::Rotate { degrees: self.degrees });
        }
        let jitter = self.brightness != 1.0 || self.contrast != 1.0;
        if jitter {
            record.push(Transform::ColorJitter { brightness: self.brightness, contrast: self.contrast });
        }

        let (ch, cw) = (self.crop.height, self.crop.width);
        let mut data = Vec::with_capacity(clip.len() * ch * cw * c);
        for j in 0..clip.len() {
            let resized = resize_frame(clip.frame(j), h, w, c, rh, rw);
            let mut cropped = Vec::with_capacity(ch * cw * c);
            for y in self.crop.top..self.crop.top + ch {
                let row = (y * rw + self.crop.left) * c;
                cropped.extend_from_slice(&resized[row..row + cw * c]);
            }
            let rotated = if self.degrees != 0.0 { rotate_frame(&cropped, ch, cw, c, self.degrees) } else { cropped };
            if jitter {
                data.extend(rotated.into_iter().map(|p| {
                    let contrasted = ((p - 0.5) * self.contrast + 0.5).clamp(0.0, 1.0);
                    (contrasted * self.brightness).clamp(0.0, 1.0)
                }));
            } else {
                data.extend(rotated.into_iter().map(|p| p.clamp(0.0, 1.0)));
            }
        }
        let frames = Tensor::new(vec![clip.len(), ch, cw, c], data)?;
        Ok((clip.with_frames(frames)?, record))
    }
}

/// Resize, crop, rotate and colour-jitter a clip with one parameter draw.
pub fn basic_augment<R: Rng + ?Sized>(
    clip: &VideoClip,
    cfg: &BasicAugConfig,
    rng: &mut R,
) -> Result<(VideoClip, Vec<Transform>)> {
    BasicParams::draw(clip.height(), clip.width(), cfg, rng)?.apply(clip)
}

/// Zeroes `region` in every frame.
pub fn video_cutout(clip: &VideoClip, region: CropBox) -> Result<VideoClip> {
    if !region.fits(clip.height(), clip.width()) {
        return Err(Error::RegionOutOfBounds(region));
    }
    let (w, c) = (clip.width(), clip.channels());
    let mut frames = clip.frames().clone();
    let frame_len = clip.frame_len();
    for frame in frames.data_mut().chunks_exact_mut(frame_len) {
        for y in region.top..region.top + region.height {
            let start = (y * w + region.left) * c;
            frame[start..start + region.width * c].fill(0.0);
        }
    }
    clip.with_frames(frames)
}

/// Blends `mix_frame` into every frame: `alpha * x + (1 - alpha) * mix_frame`.
pub fn tca_mix(clip: &VideoClip, mix_frame: &Tensor, alpha: f64) -> Result<VideoClip> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("mix alpha {alpha} outside [0, 1]")));
    }
    let expected = &clip.frames().shape()[1..];
    if mix_frame.shape() != expected {
        return Err(Error::ShapeMismatch { expected: expected.to_vec(), got: mix_frame.shape().to_vec() });
    }
    let beta = 1.0 - alpha;
    let mut frames = clip.frames().clone();
    for frame in frames.data_mut().chunks_exact_mut(mix_frame.len()) {
        for (p, &n) in frame.iter_mut().zip(mix_frame.data()) {
            // a convex combination; the clamp only absorbs last-bit rounding
            *p = (alpha * *p + beta * n).min(1.0);
        }
    }
    clip.with_frames(frames)
}

/// Stage order of the TCA cascade.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CascadeOrder {
    #[default]
    MixThenCutout,
    /// Cutout before the mixes. The mixes then refill the zeroed region, so
    /// this order is only useful to demonstrate that the check catches it.
    CutoutThenMix,
}

/// Internal mix, external mix, then cutout, each gated by `cfg`.
pub fn apply_tca<R: Rng + ?Sized>(
    clip: &VideoClip,
    donor: Option<&VideoClip>,
    cfg: &TcaConfig,
    rng: &mut R,
) -> Result<(VideoClip, Vec<Transform>)> {
    apply_tca_ordered(clip, donor, cfg, rng, CascadeOrder::MixThenCutout)
}

pub fn apply_tca_ordered<R: Rng + ?Sized>(
    clip: &VideoClip,
    donor: Option<&VideoClip>,
    cfg: &TcaConfig,
    rng: &mut R,
    order: CascadeOrder,
) -> Result<(VideoClip, Vec<Transform>)> {
    let donor = if cfg.enable_external_mix {
        match donor {
            Some(d) if d.source_id != clip.source_id => Some(d),
            _ => return Err(Error::MissingDonor),
        }
    } else {
        None
    };

    let mut out = clip.clone();
    let mut record = Vec::new();
    let (h, w, c) = (clip.height(), clip.width(), clip.channels());

    let cutout = |out: &mut VideoClip, record: &mut Vec<Transform>, rng: &mut R| -> Result<()> {
        if !cfg.enable_cutout {
            return Ok(());
        }
        let rh = ((h as f64 * uniform(rng, cfg.cutout_frac_range)).round() as usize).min(h);
        let rw = ((w as f64 * uniform(rng, cfg.cutout_frac_range)).round() as usize).min(w);
        let region = CropBox::new(rng.random_range(0..=h - rh), rng.random_range(0..=w - rw), rh, rw);
        *out = video_cutout(out, region)?;
        record.push(Transform::Cutout { region });
        Ok(())
    };

    if order == CascadeOrder::CutoutThenMix {
        cutout(&mut out, &mut record, rng)?;
    }
    if cfg.enable_internal_mix {
        let alpha = uniform(rng, cfg.alpha_range);
        let frame = rng.random_range(0..clip.len());
        out = tca_mix(&out, &clip.frame_tensor(frame), alpha)?;
        record.push(Transform::InternalMix { alpha, frame });
    }
    if let Some(donor) = donor {
        let alpha = uniform(rng, cfg.alpha_range);
        let frame = rng.random_range(0..donor.len());
        if donor.channels() != c {
            return Err(Error::ShapeMismatch { expected: vec![h, w, c], got: donor.frames().shape()[1..].to_vec() });
        }
        let pixels = resize_frame(donor.frame(frame), donor.height(), donor.width(), c, h, w);
        let mix_frame = Tensor::new(vec![h, w, c], pixels)?;
        out = tca_mix(&out, &mix_frame, alpha)?;
        record.push(Transform::ExternalMix { alpha, donor: donor.source_id.clone(), frame });
    }
    if order == CascadeOrder::MixThenCutout {
        cutout(&mut out, &mut record, rng)?;
    }
    Ok((out, record))
}

/// Basic augmentation for every member, then TCA for the positive (and the
/// negative when `tca.tca_on_negative` is set).
pub fn augment_triplet<R: Rng + ?Sized>(
    triplet: &TemporalTriplet,
    donor: Option<&VideoClip>,
    ba: &BasicAugConfig,
    tca: &TcaConfig,
    rng: &mut R,
) -> Result<TemporalTriplet> {
    let mut out = triplet.clone();

    let (anchor, rec) = basic_augment(&triplet.anchor, ba, rng)?;
    out.anchor = anchor;
    out.record.anchor.extend(rec);

    let (positive, rec) = basic_augment(&triplet.positive, ba, rng)?;
    out.record.positive.extend(rec);
    let (positive, rec) = apply_tca(&positive, donor, tca, rng)?;
    out.positive = positive;
    out.record.positive.extend(rec);

    let (negative, rec) = basic_augment(&triplet.negative, ba, rng)?;
    out.record.negative.extend(rec);
    out.negative = if tca.tca_on_negative {
        let (negative, rec) = apply_tca(&negative, donor, tca, rng)?;
        out.record.negative.extend(rec);
        negative
    } else {
        negative
    };
    Ok(out)
}
