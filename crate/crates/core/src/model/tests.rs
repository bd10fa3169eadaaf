use rand::Rng;

use super::*;
use crate::seeded_rng;

fn random_clips(seed: u64, n: usize, shape: [usize; 4]) -> Vec<VideoClip> {
    let mut rng = seeded_rng(seed);
    (0..n)
        .map(|i| {
            let frames = Tensor::from_fn(&shape, |_| rng.random::<f64>());
            VideoClip::from_frames(frames, format!("c{i}")).unwrap()
        })
        .collect()
}

fn small_spec() -> EncoderSpec {
    EncoderSpec {
        in_channels: 3,
        blocks: vec![
            BlockSpec { out_channels: 4, spatial_stride: 2, temporal_stride: 1 },
            BlockSpec { out_channels: 6, spatial_stride: 2, temporal_stride: 2 },
        ],
        embed_dim: 8,
    }
}

#[test]
fn init_is_deterministic_and_bounded() {
    let spec = EncoderSpec::default();
    let a = init_params(&spec, &mut seeded_rng(1));
    let b = init_params(&spec, &mut seeded_rng(1));
    assert_eq!(a, b);
    assert_ne!(a, init_params(&spec, &mut seeded_rng(2)));

    let w1 = a.get("block1.conv.weight").unwrap();
    assert_eq!(w1.shape(), &[3, 3, 3, 16, 32]);
    assert_eq!(init_bound(w1.shape()), (6.0f64 / 432.0).sqrt());
    assert!(w1.data().iter().all(|v| v.abs() <= (6.0f64 / 432.0).sqrt()));
    assert!(a.get("proj.bias").unwrap().data().iter().all(|&v| v == 0.0));
    assert!(a.get("block2.norm.shift").unwrap().data().iter().all(|&v| v == 0.0));
    assert!(a.get("block0.norm.scale").unwrap().data().iter().all(|&v| v == 1.0));
}

#[test]
fn embeddings_are_unit_norm() {
    let params = init_params(&EncoderSpec::default(), &mut seeded_rng(3));
    let clips = random_clips(4, 3, [8, 16, 16, 3]);
    let refs: Vec<_> = clips.iter().collect();
    for v in encode(&params, &refs).unwrap() {
        assert_eq!(v.dim(), 128);
        assert!((v.norm() - 1.0).abs() <= 1e-9);
    }
}

#[test]
fn identical_clips_give_identical_embeddings() {
    let params = init_params(&EncoderSpec::default(), &mut seeded_rng(3));
    let clip = &random_clips(5, 1, [8, 16, 16, 3])[0];
    let out = encode(&params, &[clip, clip, clip]).unwrap();
    assert_eq!(out[0], out[1]);
    assert_eq!(out[1], out[2]);
}

#[test]
fn batch_order_does_not_matter() {
    let params = init_params(&EncoderSpec::default(), &mut seeded_rng(6));
    let clips = random_clips(7, 4, [8, 16, 16, 3]);
    let fwd: Vec<_> = clips.iter().collect();
    let rev: Vec<_> = clips.iter().rev().collect();
    let a = encode(&params, &fwd).unwrap();
    let b = encode(&params, &rev).unwrap();
    for (x, y) in a.iter().zip(b.iter().rev()) {
        for (p, q) in x.values().iter().zip(y.values()) {
            assert!((p - q).abs() < 1e-12);
        }
    }
}

#[test]
fn mismatched_batch_is_shape_incompatible() {
    let params = init_params(&EncoderSpec::default(), &mut seeded_rng(6));
    let a = &random_clips(1, 1, [4, 8, 8, 3])[0];
    let b = &random_clips(2, 1, [4, 8, 6, 3])[0];
    assert!(matches!(encode(&params, &[a, b]), Err(Error::ShapeIncompatible(_))));
    let gray = VideoClip::from_frames(Tensor::zeros(&[4, 8, 8, 1]), "g").unwrap();
    assert!(matches!(encode(&params, &[&gray]), Err(Error::ShapeIncompatible(_))));
}

#[test]
fn zero_input_features_are_reproducible() {
    let spec = EncoderSpec::default();
    let params = init_params(&spec, &mut seeded_rng(8));
    let zero = VideoClip::from_frames(Tensor::zeros(&[4, 8, 8, 3]), "z").unwrap();
    let stats = NormStats::new(&spec);
    let a = backbone_features(&params, &[&zero], NormMode::Running(&stats)).unwrap();
    let b = backbone_features(&params, &[&zero], NormMode::Running(&stats)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a[0].len(), 64);
    // no bias anywhere before the projection, so zero stays zero
    assert!(a[0].iter().all(|&v| v == 0.0));
    assert!(matches!(encode(&params, &[&zero]), Err(Error::ZeroNorm)));
}

#[test]
fn identity_mix_leaves_features_unchanged() {
    let params = init_params(&EncoderSpec::default(), &mut seeded_rng(8));
    let clip = &random_clips(9, 1, [4, 8, 8, 3])[0];
    let mixed = crate::augment::tca_mix(clip, &clip.frame_tensor(2), 1.0).unwrap();
    let stats = NormStats::new(params.spec());
    let a = backbone_features(&params, &[clip], NormMode::Running(&stats)).unwrap();
    let b = backbone_features(&params, &[&mixed], NormMode::Running(&stats)).unwrap();
    assert_eq!(a, b);
}

/// Central-difference check of d(sum_i v_i . c_i)/d(theta) on every parameter.
fn check_gradients(mode_running: bool) {
    let spec = small_spec();
    let mut params = init_params(&spec, &mut seeded_rng(10));
    // non-trivial normalization parameters
    let mut rng = seeded_rng(11);
    for (name, t) in params.iter_mut() {
        if name.contains("norm") || name == "proj.bias" {
            t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
        }
    }
    let clips = random_clips(12, 3, [5, 8, 8, 3]);
    let refs: Vec<_> = clips.iter().collect();
    let targets: Vec<Vec<f64>> = (0..3).map(|_| (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let mut stats = NormStats::new(&spec);
    stats.mean.iter_mut().flatten().for_each(|m| *m = 0.1);
    stats.var.iter_mut().flatten().for_each(|v| *v = 0.7);
    let mode = if mode_running { NormMode::Running(&stats) } else { NormMode::Batch };

    let objective = |p: &Params| -> f64 {
        let emb = forward(p, &refs, mode, false).unwrap().embeddings().unwrap();
        emb.iter().zip(&targets).map(|(v, c)| v.values().iter().zip(c).map(|(a, b)| a * b).sum::<f64>()).sum()
    };
    let acts = forward(&params, &refs, mode, true).unwrap();
    let grads = acts.backward(&params, &targets).unwrap();

    let eps = 1e-5;
    let (mut checked, mut failed) = (0, 0);
    for ti in 0..params.tensors().len() {
        for j in 0..params.tensors()[ti].len() {
            let orig = params.tensors()[ti].data()[j];
            params.tensors_mut()[ti].data_mut()[j] = orig + eps;
            let up = objective(&params);
            params.tensors_mut()[ti].data_mut()[j] = orig - eps;
            let down = objective(&params);
            params.tensors_mut()[ti].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let analytic = grads.tensors()[ti].data()[j];
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-8);
            checked += 1;
            if rel > 1e-4 {
                failed += 1;
            }
        }
    }
    assert!(failed * 100 <= checked, "{failed} of {checked} coordinates failed");
}

#[test]
fn gradients_match_central_differences_batch_stats() {
    check_gradients(false);
}

#[test]
fn gradients_match_central_differences_running_stats() {
    check_gradients(true);
}

#[test]
fn momentum_update_extremes() {
    let spec = small_spec();
    let online = init_params(&spec, &mut seeded_rng(1));
    let history = init_params(&spec, &mut seeded_rng(2));

    let mut pair = EncoderPair { online: online.clone(), history: history.clone(), m: 1.0 };
    pair.momentum_update().unwrap();
    assert_eq!(pair.history, history);

    let mut pair = EncoderPair { online: online.clone(), history, m: 0.0 };
    pair.momentum_update().unwrap();
    assert_eq!(pair.history, online);
}

#[test]
fn momentum_history_follows_geometric_series() {
    let spec = small_spec();
    let mut online = Params::zeros(&spec);
    online.tensors_mut().iter_mut().for_each(|t| t.data_mut().fill(1.0));
    let mut pair = EncoderPair { online, history: Params::zeros(&spec), m: 0.99 };
    for n in 1..=500 {
        pair.momentum_update().unwrap();
        let expected = 1.0 - 0.99f64.powi(n);
        assert!(pair.history.tensors().iter().flat_map(|t| t.data()).all(|v| (v - expected).abs() <= 1e-12));
    }
}

#[test]
fn momentum_update_contracts_towards_frozen_online() {
    let spec = small_spec();
    let mut pair = EncoderPair {
        online: init_params(&spec, &mut seeded_rng(1)),
        history: init_params(&spec, &mut seeded_rng(2)),
        m: 0.9,
    };
    let distance = |p: &EncoderPair| -> f64 {
        p.online.tensors().iter().zip(p.history.tensors()).map(|(a, b)| a.sub(b).unwrap().norm().powi(2)).sum::<f64>().sqrt()
    };
    let mut prev = distance(&pair);
    for _ in 0..20 {
        pair.momentum_update().unwrap();
        let d = distance(&pair);
        assert!((d - 0.9 * prev).abs() <= 1e-12 * prev.max(1.0));
        prev = d;
    }
}

#[test]
fn momentum_update_rejects_misaligned_pairs() {
    let mut pair = EncoderPair {
        online: Params::zeros(&small_spec()),
        history: Params::zeros(&EncoderSpec::default()),
        m: 0.5,
    };
    assert!(matches!(pair.momentum_update(), Err(Error::ShapeMismatch { .. })));
}

#[test]
fn params_round_trip_through_named_tensors() {
    let spec = small_spec();
    let params = init_params(&spec, &mut seeded_rng(1));
    let mut named: Vec<_> = params.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
    named.reverse();
    assert_eq!(Params::from_named(&spec, named.clone()).unwrap(), params);
    named.pop();
    assert!(Params::from_named(&spec, named).is_err());
}
