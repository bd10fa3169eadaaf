use super::*;
use crate::augment::BasicAugConfig;
use crate::evaluation::{generate_synthetic, SynthConfig};
use crate::model::{BlockSpec, EncoderSpec};
use crate::sampling::SamplingConfig;

#[allow(clippy::field_reassign_with_default)]
fn tiny_config() -> Config {
    let mut cfg = Config::default();
    cfg.synth = SynthConfig { n_train: 2, n_test: 1, frame_size: 16, square_size: 4, clip_len_source: 16, ..SynthConfig::default() };
    cfg.sampling = SamplingConfig { clip_len: 4, temporal_stride: 2, crop_size: 12, ..SamplingConfig::default() };
    cfg.basic_aug = BasicAugConfig { crop_size: 12, ..BasicAugConfig::default() };
    cfg.model = EncoderSpec {
        in_channels: 3,
        blocks: vec![
            BlockSpec { out_channels: 4, spatial_stride: 2, temporal_stride: 1 },
            BlockSpec { out_channels: 8, spatial_stride: 2, temporal_stride: 2 },
        ],
        embed_dim: 8,
    };
    cfg.objective.bank_size = 8;
    cfg.train.batch_size = 3;
    cfg.train.epochs = 3;
    cfg.validate().unwrap();
    cfg
}

fn tiny_videos(cfg: &Config) -> Vec<VideoClip> {
    generate_synthetic(&cfg.synth).unwrap().train.videos
}

fn bits(p: &Params) -> Vec<u64> {
    p.tensors().iter().flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect()
}

#[test]
fn lr_schedule() {
    let cfg = TrainConfig::default();
    assert_eq!(lr_at(0, &cfg), 0.01);
    assert_eq!(lr_at(9, &cfg), 0.01);
    assert!((lr_at(10, &cfg) - 0.001).abs() < 1e-18);
    let mut expected = 0.01;
    for _ in 0..4 {
        expected *= 0.1;
    }
    assert_eq!(lr_at(49, &cfg), expected);
    assert!((lr_at(49, &cfg) - 1e-6).abs() < 1e-20);
}

#[test]
fn sgd_without_momentum_is_a_gradient_step() {
    let mut p = vec![Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap()];
    let g = vec![Tensor::new(vec![3], vec![0.5, 0.5, -1.0]).unwrap()];
    let mut v = vec![Tensor::zeros(&[3])];
    sgd_step(&mut p, &g, &mut v, 0.1, 0.0, 0.0).unwrap();
    assert_eq!(p[0].data(), &[1.0 - 0.1 * 0.5, -2.0 - 0.1 * 0.5, 0.5 + 0.1]);
}

#[test]
fn sgd_momentum_minimizes_a_quadratic() {
    let mut p = vec![Tensor::new(vec![1], vec![1.0]).unwrap()];
    let mut v = vec![Tensor::zeros(&[1])];
    // scalar oracle of the same recurrence
    let (mut w, mut vel) = (1.0f64, 0.0f64);
    for _ in 0..200 {
        let g = vec![p[0].clone()];
        sgd_step(&mut p, &g, &mut v, 0.1, 0.9, 0.0).unwrap();
        vel = 0.9 * vel + w;
        w -= 0.1 * vel;
    }
    assert_eq!(p[0].data()[0], w);
    assert!(w.abs() < 1e-3, "{w}");
}

#[test]
fn sgd_rejects_bad_gradients() {
    let mut p = vec![Tensor::zeros(&[2])];
    let mut v = vec![Tensor::zeros(&[2])];
    let mut g = Tensor::zeros(&[2]);
    g.data_mut()[1] = f64::NAN;
    assert!(matches!(sgd_step(&mut p, &[g], &mut v, 0.1, 0.9, 0.0), Err(Error::NonFiniteGradient(_))));
    assert!(matches!(sgd_step(&mut p, &[Tensor::zeros(&[3])], &mut v, 0.1, 0.9, 0.0), Err(Error::ShapeMismatch { .. })));

    let spec = tiny_config().model;
    let mut params = Params::zeros(&spec);
    let mut vel = Params::zeros(&spec);
    let mut grads = Params::zeros(&spec);
    grads.get_mut("proj.bias").unwrap().data_mut()[0] = f64::INFINITY;
    match sgd_update(&mut params, &grads, &mut vel, 0.1, 0.9, 0.0) {
        Err(Error::NonFiniteGradient(name)) => assert_eq!(name, "proj.bias"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn weight_decay_reaches_every_tensor() {
    let cfg = tiny_config();
    let mut params = crate::model::init_params(&cfg.model, &mut seeded_rng(1));
    for t in params.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = 1.0);
    }
    let grads = Params::zeros(&cfg.model);
    let mut vel = Params::zeros(&cfg.model);
    sgd_update(&mut params, &grads, &mut vel, 0.5, 0.0, 0.1).unwrap();
    assert!(params.tensors().iter().all(|t| t.data().iter().all(|&v| v == 1.0 - 0.5 * 0.1)));
}

#[test]
fn same_seed_gives_identical_bits() {
    let cfg = tiny_config();
    let videos = tiny_videos(&cfg);
    let run = || {
        let mut state = TrainState::init(&cfg);
        let batch: Vec<&VideoClip> = videos.iter().take(3).collect();
        for _ in 0..3 {
            train_step(&batch, &mut state, &cfg, StepControl::default()).unwrap();
        }
        state
    };
    let (a, b) = (run(), run());
    assert_eq!(bits(&a.pair.online), bits(&b.pair.online));
    assert_eq!(bits(&a.pair.history), bits(&b.pair.history));
    assert_eq!(a, b);
}

#[test]
fn bank_cursor_counts_pushed_anchors() {
    let cfg = tiny_config();
    let videos = tiny_videos(&cfg);
    let mut state = TrainState::init(&cfg);
    let batch: Vec<&VideoClip> = videos.iter().take(cfg.train.batch_size).collect();
    let k = cfg.objective.bank_size;
    for s in 1..=5 {
        train_step(&batch, &mut state, &cfg, StepControl::default()).unwrap();
        assert_eq!(state.bank.cursor(), (s * cfg.train.batch_size) % k);
        assert_eq!(state.step, s);
    }
}

#[test]
fn zero_learning_rate_decouples_the_updates() {
    let mut cfg = tiny_config();
    cfg.train.lr0 = 0.0;
    let videos = tiny_videos(&cfg);
    let mut state = TrainState::init(&cfg);
    for t in state.pair.history.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v *= 0.5);
    }
    let online = state.pair.online.clone();
    let history = state.pair.history.clone();
    let bank = state.bank.clone();
    let batch: Vec<&VideoClip> = videos.iter().take(3).collect();
    train_step(&batch, &mut state, &cfg, StepControl::default()).unwrap();

    assert_eq!(bits(&state.pair.online), bits(&online));
    let m = cfg.train.m;
    for ((h, h0), o) in state.pair.history.tensors().iter().zip(history.tensors()).zip(online.tensors()) {
        for ((a, b), c) in h.data().iter().zip(h0.data()).zip(o.data()) {
            assert_eq!(*a, m * b + (1.0 - m) * c);
        }
    }
    assert_eq!(state.bank.cursor(), 3);
    assert_ne!(state.bank.slots()[..3], bank.slots()[..3]);
    assert_eq!(state.bank.slots()[3..], bank.slots()[3..]);
}

#[test]
fn gradients_never_reach_history_or_bank() {
    let cfg = tiny_config();
    let videos = tiny_videos(&cfg);
    let mut state = TrainState::init(&cfg);
    let history = bits(&state.pair.history);
    let bank = state.bank.clone();
    let online = bits(&state.pair.online);
    let batch: Vec<&VideoClip> = videos.iter().take(3).collect();
    let control = StepControl { bank_push: false, momentum_update: false };
    train_step(&batch, &mut state, &cfg, control).unwrap();
    assert_eq!(bits(&state.pair.history), history);
    assert_eq!(state.bank, bank);
    assert_ne!(bits(&state.pair.online), online);
}

/// History after `t` updates against the closed-form weighted average of
/// the online parameter sequence.
#[test]
fn history_is_an_exponential_average() {
    let spec = EncoderSpec {
        in_channels: 1,
        blocks: vec![BlockSpec { out_channels: 1, spatial_stride: 1, temporal_stride: 1 }],
        embed_dim: 1,
    };
    let mut rng = seeded_rng(3);
    let theta0 = crate::model::init_params(&spec, &mut rng);
    let mut pair = EncoderPair::new(theta0.clone(), 0.99);
    let mut sequence = Vec::new();
    for _ in 0..200 {
        let next = crate::model::init_params(&spec, &mut rng);
        pair.online = next.clone();
        sequence.push(next);
        pair.momentum_update().unwrap();
    }
    let m: f64 = 0.99;
    let t = sequence.len();
    for (idx, h) in pair.history.tensors().iter().enumerate() {
        for (e, &got) in h.data().iter().enumerate() {
            let mut expected = m.powi(t as i32) * theta0.tensors()[idx].data()[e];
            for (s, theta) in sequence.iter().enumerate() {
                expected += (1.0 - m) * m.powi((t - 1 - s) as i32) * theta.tensors()[idx].data()[e];
            }
            assert!((got - expected).abs() <= 1e-10, "{got} vs {expected}");
        }
    }
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let cfg = tiny_config();
    let videos = tiny_videos(&cfg);
    let mut state = TrainState::init(&cfg);
    let batch: Vec<&VideoClip> = videos.iter().take(3).collect();
    train_step(&batch, &mut state, &cfg, StepControl::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join(CHECKPOINT_DIR);
    save_checkpoint(&ckpt, &state, &cfg).unwrap();
    let (cfg2, state2) = load_checkpoint(&ckpt).unwrap();
    assert_eq!(cfg2, cfg);
    assert_eq!(state2, state);
    // overwriting replaces the directory in place
    save_checkpoint(&ckpt, &state, &cfg).unwrap();
    assert_eq!(load_checkpoint(&ckpt).unwrap().1, state);
    let leftovers: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(leftovers, vec![std::ffi::OsString::from(CHECKPOINT_DIR)]);
}

#[test]
fn damaged_checkpoints_are_reported() {
    let cfg = tiny_config();
    let state = TrainState::init(&cfg);
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("c");
    save_checkpoint(&ckpt, &state, &cfg).unwrap();
    fs::remove_file(ckpt.join("history.proj.bias.vtdl")).unwrap();
    assert!(matches!(load_checkpoint(&ckpt), Err(Error::CheckpointCorrupt(_))));

    save_checkpoint(&ckpt, &state, &cfg).unwrap();
    fs::write(ckpt.join("online.proj.weight.vtdl"), b"VTDL").unwrap();
    assert!(matches!(load_checkpoint(&ckpt), Err(Error::CheckpointCorrupt(_))));

    fs::write(ckpt.join(MANIFEST), "{").unwrap();
    assert!(matches!(load_checkpoint(&ckpt), Err(Error::CheckpointCorrupt(_))));
    assert!(matches!(load_checkpoint(&dir.path().join("missing")), Err(Error::CheckpointCorrupt(_))));
}

#[test]
fn resume_reproduces_the_uninterrupted_run() {
    let cfg = tiny_config();
    let videos = tiny_videos(&cfg);
    let full = tempfile::tempdir().unwrap();
    let full_ckpt = run_pretrain(&videos, &cfg, full.path(), &PretrainOptions::default()).unwrap();

    let split = tempfile::tempdir().unwrap();
    let opts = PretrainOptions { stop_after_epoch: Some(1), ..PretrainOptions::default() };
    let ckpt = run_pretrain(&videos, &cfg, split.path(), &opts).unwrap();
    assert_eq!(load_checkpoint(&ckpt).unwrap().1.epoch, 1);
    // a stray record past the checkpoint, as left by an interrupted epoch
    let log = split.path().join(METRICS_LOG);
    let mut text = fs::read_to_string(&log).unwrap();
    text.push_str("{\"step\":999}\n");
    fs::write(&log, text).unwrap();
    let opts = PretrainOptions { resume: Some(ckpt.clone()), ..PretrainOptions::default() };
    run_pretrain(&videos, &cfg, split.path(), &opts).unwrap();

    let (_, a) = load_checkpoint(&full_ckpt).unwrap();
    let (_, b) = load_checkpoint(&ckpt).unwrap();
    assert_eq!(bits(&a.pair.online), bits(&b.pair.online));
    assert_eq!(a, b);
    let steps = cfg.train.epochs * videos.len().div_ceil(cfg.train.batch_size);
    assert_eq!(a.step, steps);
    let full_log = fs::read_to_string(full.path().join(METRICS_LOG)).unwrap();
    assert_eq!(full_log.lines().count(), steps);
    assert_eq!(fs::read_to_string(&log).unwrap(), full_log);

    // resuming a finished run changes nothing
    run_pretrain(&videos, &cfg, split.path(), &PretrainOptions { resume: Some(ckpt.clone()), ..Default::default() }).unwrap();
    assert_eq!(load_checkpoint(&ckpt).unwrap().1, b);
    assert_eq!(fs::read_to_string(&log).unwrap(), full_log);
}

#[test]
fn zero_epochs_is_a_config_error() {
    let mut cfg = tiny_config();
    cfg.train.epochs = 0;
    let dir = tempfile::tempdir().unwrap();
    let err = run_pretrain(&tiny_videos(&tiny_config()), &cfg, dir.path(), &PretrainOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn short_videos_are_rejected_up_front() {
    let cfg = tiny_config();
    let short = VideoClip::from_frames(Tensor::filled(&[3, 16, 16, 3], 0.5), "short").unwrap();
    let err = pretrain_in_memory(&[short], &cfg, &mut TrainState::init(&cfg), |_| {}).unwrap_err();
    match err {
        Error::VideoTooShort { id, .. } => assert_eq!(id, "short"),
        other => panic!("{other:?}"),
    }
}
