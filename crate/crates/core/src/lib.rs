//! Temporal-discriminative self-supervised learning for video.
//!
//! The crate covers the whole pipeline: sampling temporal triplets from raw
//! clips, temporal consistent augmentation, a small 3D convolutional encoder
//! with hand-written backpropagation, the contrastive objective with a FIFO
//! memory bank and a momentum-averaged history encoder, resumable training,
//! and a synthetic motion benchmark with a linear probe.

// `!(x > 0.0)` style checks are how validation rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod objective;
pub mod sampling;
pub mod selfcheck;
pub mod tensor;
pub mod training;

pub use config::Config;
pub use error::{Error, ErrorKind, Result};
pub use tensor::{CropBox, Tensor, VideoClip};

/// Random generator used throughout the crate.
pub type VtdlRng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> VtdlRng {
    use rand::SeedableRng;
    VtdlRng::seed_from_u64(seed)
}
