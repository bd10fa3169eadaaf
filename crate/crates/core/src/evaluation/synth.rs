//! Synthetic moving-square videos whose class is the motion direction.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{load_frame_dir, save_clip_pngs, Tensor, VideoClip};
use crate::{seeded_rng, VtdlRng};

/// File mapping video id to class index inside a dataset directory.
pub const LABELS_FILE: &str = "labels.json";
const TRAIN_PREFIX: &str = "train_";
const TEST_PREFIX: &str = "test_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Motion directions in use, taken in the order up, down, left, right.
    pub n_classes: usize,
    /// Training videos per class (in expectation; labels are drawn).
    pub n_train: usize,
    pub n_test: usize,
    pub frame_size: usize,
    pub clip_len_source: usize,
    pub square_size: usize,
    /// Side of the coarse random grid that is upsampled into the background.
    pub background_cells: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_classes: 4,
            n_train: 128,
            n_test: 32,
            frame_size: 32,
            clip_len_source: 64,
            square_size: 8,
            background_cells: 4,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=4).contains(&self.n_classes) {
            return Err(Error::Config("synth.n_classes must be between 2 and 4".into()));
        }
        if self.clip_len_source < 2 || self.background_cells < 2 || self.square_size == 0 {
            return Err(Error::Config("synth needs clip_len_source >= 2, background_cells >= 2, square_size > 0".into()));
        }
        if self.square_size >= self.frame_size {
            return Err(Error::ConfigInfeasible(format!(
                "square of {} pixels does not fit a {} pixel frame",
                self.square_size, self.frame_size
            )));
        }
        Ok(())
    }
}

/// Per-frame displacement `(dy, dx)` of each class.
pub const DIRECTIONS: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

/// Everything drawn for one video, in draw order.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecipe {
    /// `cells x cells x 3` background grid.
    pub background: Vec<f64>,
    pub color: [f64; 3],
    pub label: usize,
    /// Pixels per frame, 1 or 2.
    pub speed: usize,
    pub start: (usize, usize),
}

impl VideoRecipe {
    pub fn draw<R: Rng + ?Sized>(cfg: &SynthConfig, rng: &mut R) -> Self {
        let cells = cfg.background_cells;
        let background = (0..cells * cells * 3).map(|_| rng.random::<f64>()).collect();
        let color = [rng.random(), rng.random(), rng.random()];
        let label = rng.random_range(0..cfg.n_classes);
        let speed = rng.random_range(1..=2);
        let start = (rng.random_range(0..cfg.frame_size), rng.random_range(0..cfg.frame_size));
        Self { background, color, label, speed, start }
    }

    /// Top-left corner of the square in frame `t`, wrapped onto the torus.
    pub fn position(&self, t: usize, frame_size: usize) -> (usize, usize) {
        let (dy, dx) = DIRECTIONS[self.label];
        let n = frame_size as isize;
        let step = (self.speed * t) as isize;
        let y = (self.start.0 as isize + dy * step).rem_euclid(n);
        let x = (self.start.1 as isize + dx * step).rem_euclid(n);
        (y as usize, x as usize)
    }

    /// The static background as an `[H, W, 3]` frame.
    pub fn background_frame(&self, cfg: &SynthConfig) -> Vec<f64> {
        let (n, cells) = (cfg.frame_size, cfg.background_cells);
        let scale = (cells - 1) as f64 / (n - 1).max(1) as f64;
        let mut out = vec![0.0; n * n * 3];
        for y in 0..n {
            let fy = y as f64 * scale;
            let (y0, wy) = (fy.floor() as usize, fy.fract());
            let y1 = (y0 + 1).min(cells - 1);
            for x in 0..n {
                let fx = x as f64 * scale;
                let (x0, wx) = (fx.floor() as usize, fx.fract());
                let x1 = (x0 + 1).min(cells - 1);
                for c in 0..3 {
                    let g = |r: usize, q: usize| self.background[(r * cells + q) * 3 + c];
                    let top = g(y0, x0) * (1.0 - wx) + g(y0, x1) * wx;
                    let bottom = g(y1, x0) * (1.0 - wx) + g(y1, x1) * wx;
                    out[(y * n + x) * 3 + c] = top * (1.0 - wy) + bottom * wy;
                }
            }
        }
        out
    }

    pub fn render(&self, cfg: &SynthConfig, id: String) -> Result<VideoClip> {
        let n = cfg.frame_size;
        let background = self.background_frame(cfg);
        let mut data = Vec::with_capacity(cfg.clip_len_source * n * n * 3);
        for t in 0..cfg.clip_len_source {
            let mut frame = background.clone();
            let (py, px) = self.position(t, n);
            for i in 0..cfg.square_size {
                for j in 0..cfg.square_size {
                    let (y, x) = ((py + i) % n, (px + j) % n);
                    frame[(y * n + x) * 3..][..3].copy_from_slice(&self.color);
                }
            }
            data.extend_from_slice(&frame);
        }
        VideoClip::from_frames(Tensor::new(vec![cfg.clip_len_source, n, n, 3], data)?, id)
    }
}

/// Videos with class labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledSplit {
    pub videos: Vec<VideoClip>,
    pub labels: Vec<usize>,
}

impl LabeledSplit {
    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n_classes: usize,
    pub train: LabeledSplit,
    pub test: LabeledSplit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn prefix(self) -> &'static str {
        match self {
            Split::Train => TRAIN_PREFIX,
            Split::Test => TEST_PREFIX,
        }
    }

    fn stream(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Test => 1 << 32,
        }
    }
}

/// Generator for video `index` of `split`; each video has its own stream.
pub fn video_rng(cfg: &SynthConfig, split: Split, index: usize) -> VtdlRng {
    let mut rng = seeded_rng(cfg.seed);
    rng.set_stream(split.stream() | index as u64);
    rng
}

pub fn video_id(split: Split, index: usize) -> String {
    format!("{}{index:04}", split.prefix())
}

fn generate_split(cfg: &SynthConfig, split: Split, count: usize) -> Result<LabeledSplit> {
    let mut out = LabeledSplit::default();
    for i in 0..count {
        let recipe = VideoRecipe::draw(cfg, &mut video_rng(cfg, split, i));
        out.videos.push(recipe.render(cfg, video_id(split, i))?);
        out.labels.push(recipe.label);
    }
    Ok(out)
}

/// `n_classes * n_train` training and `n_classes * n_test` test videos.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    Ok(Dataset {
        n_classes: cfg.n_classes,
        train: generate_split(cfg, Split::Train, cfg.n_classes * cfg.n_train)?,
        test: generate_split(cfg, Split::Test, cfg.n_classes * cfg.n_test)?,
    })
}

/// Writes one PNG directory per video plus [`LABELS_FILE`].
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut labels = BTreeMap::new();
    for split in [&dataset.train, &dataset.test] {
        for (video, &label) in split.videos.iter().zip(&split.labels) {
            save_clip_pngs(video, dir.join(&video.source_id))?;
            labels.insert(video.source_id.clone(), label);
        }
    }
    let path = dir.join(LABELS_FILE);
    let text = serde_json::to_string_pretty(&labels)? + "\n";
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn read_labels(dir: &Path) -> Result<BTreeMap<String, usize>> {
    let path = dir.join(LABELS_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))
}

fn checked_child(dir: &Path, id: &str) -> Result<PathBuf> {
    if id.is_empty() || id.contains(['/', '\\']) || id.starts_with('.') {
        return Err(Error::Dataset(format!("invalid video id {id:?}")));
    }
    Ok(dir.join(id))
}

/// Reads a directory written by [`save_dataset`]. Ids are assigned to a
/// split by their `train_` / `test_` prefix.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let labels = read_labels(dir)?;
    let (mut train, mut test) = (LabeledSplit::default(), LabeledSplit::default());
    for (id, &label) in &labels {
        let split = if id.starts_with(TRAIN_PREFIX) {
            &mut train
        } else if id.starts_with(TEST_PREFIX) {
            &mut test
        } else {
            return Err(Error::Dataset(format!("video id {id} has no train_/test_ prefix")));
        };
        split.videos.push(load_frame_dir(checked_child(dir, id)?)?);
        split.labels.push(label);
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::Dataset(format!("{} needs both train_ and test_ videos", dir.display())));
    }
    let n_classes = labels.values().max().map_or(0, |m| m + 1);
    if n_classes < 2 {
        return Err(Error::Dataset("labels.json names fewer than two classes".into()));
    }
    Ok(Dataset { n_classes, train, test })
}

/// Videos for pretraining: the training split when a [`LABELS_FILE`] is
/// present, otherwise every subdirectory in name order.
pub fn load_pretrain_videos(dir: &Path) -> Result<Vec<VideoClip>> {
    if dir.join(LABELS_FILE).exists() {
        let labels = read_labels(dir)?;
        return labels
            .keys()
            .filter(|id| id.starts_with(TRAIN_PREFIX))
            .map(|id| load_frame_dir(checked_child(dir, id)?))
            .collect();
    }
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            dirs.push(path);
        }
    }
    dirs.sort();
    dirs.iter().map(load_frame_dir).collect()
}

/// Loads video `id` from a dataset directory.
pub fn find_video(dir: &Path, id: &str) -> Result<VideoClip> {
    let path = checked_child(dir, id)?;
    if !path.is_dir() {
        return Err(Error::Dataset(format!("no video {id} in {}", dir.display())));
    }
    load_frame_dir(path)
}
