//! Input fixtures shared by the benchmarks.

use rand::Rng;
use rand_distr::StandardNormal;
use vtdl_core::model::Embedding;
use vtdl_core::objective::TripletEmbedding;
use vtdl_core::{seeded_rng, Tensor, VideoClip};

/// `n` clips of uniform noise with shape `[t, h, w, 3]`.
pub fn noise_clips(seed: u64, n: usize, t: usize, h: usize, w: usize) -> Vec<VideoClip> {
    let mut rng = seeded_rng(seed);
    (0..n)
        .map(|i| {
            let frames = Tensor::from_fn(&[t, h, w, 3], |_| rng.random::<f64>());
            VideoClip::from_frames(frames, format!("noise{i}")).expect("valid clip")
        })
        .collect()
}

pub fn random_triplets(seed: u64, n: usize, dim: usize) -> Vec<TripletEmbedding> {
    let mut rng = seeded_rng(seed);
    let mut unit = || {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        Embedding::normalize(v).expect("non-zero draw")
    };
    (0..n).map(|_| TripletEmbedding { anchor: unit(), positive: unit(), negative: unit() }).collect()
}
