//! Invariance suite behind `vtdl selfcheck`.
//!
//! Every property is checked against an oracle written independently of the
//! code under test. A [`Fault`] deliberately breaks one call site so the
//! suite can be shown to catch it.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use serde::Serialize;

use crate::augment::{apply_tca_ordered, CascadeOrder, TcaConfig, Transform};
use crate::error::{Error, Result};
use crate::model::{forward, init_params, BlockSpec, Embedding, EncoderPair, EncoderSpec, NormMode, Params};
use crate::objective::{td_loss, MemoryBank, ObjectiveConfig, TripletEmbedding};
use crate::sampling::{sample_triplet, SamplingConfig};
use crate::tensor::{temporal_difference, Tensor, VideoClip};
use crate::{seeded_rng, VtdlRng};

/// Injected defects, one per documented failure mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Cutout runs before the mixes.
    CascadeOrder,
    /// The history update uses `1 - m` in place of `m`.
    MomentumSwap,
    /// Each batch is pushed into the bank in reverse order.
    FifoReverse,
}

impl Fault {
    pub const ALL: [Fault; 3] = [Fault::CascadeOrder, Fault::MomentumSwap, Fault::FifoReverse];

    pub fn name(self) -> &'static str {
        match self {
            Fault::CascadeOrder => "cascade-order",
            Fault::MomentumSwap => "momentum-swap",
            Fault::FifoReverse => "fifo-reverse",
        }
    }
}

impl FromStr for Fault {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Fault::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown fault {s:?}; expected one of cascade-order, momentum-swap, fifo-reverse")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelfcheckReport {
    pub results: Vec<PropertyResult>,
}

impl SelfcheckReport {
    pub fn all_passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn failed(&self) -> impl Iterator<Item = &PropertyResult> {
        self.results.iter().filter(|r| !r.passed)
    }
}

impl fmt::Display for SelfcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.results.iter().map(|r| r.name.len()).max().unwrap_or(0);
        for r in &self.results {
            let status = if r.passed { "PASS" } else { "FAIL" };
            writeln!(f, "{status}  {:width$}  {:>6.2}s  {}", r.name, r.seconds, r.detail)?;
        }
        Ok(())
    }
}

type Check = fn(Option<Fault>) -> std::result::Result<String, String>;

const CHECKS: [(&str, Check); 6] = [
    ("tca-derivative-scaling", check_tca),
    ("loss-oracle", check_loss),
    ("gradient-check", check_gradients),
    ("bank-fifo", check_fifo),
    ("momentum-contraction", check_momentum),
    ("triplet-constraints", check_triplets),
];

/// Runs every property, optionally with one fault injected.
pub fn run_selfcheck(fault: Option<Fault>) -> SelfcheckReport {
    let results = CHECKS
        .iter()
        .map(|&(name, check)| {
            let start = Instant::now();
            let outcome = check(fault);
            let seconds = start.elapsed().as_secs_f64();
            let (passed, detail) = match outcome {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            PropertyResult { name, passed, detail, seconds }
        })
        .collect();
    SelfcheckReport { results }
}

fn fail(e: Error) -> String {
    format!("error: {e}")
}

fn random_clip(rng: &mut VtdlRng, shape: [usize; 4], id: &str) -> VideoClip {
    let frames = Tensor::from_fn(&shape, |_| rng.random::<f64>());
    VideoClip::from_frames(frames, id).expect("valid random clip")
}

/// Full cascade: outside the cutout region every temporal difference is the
/// input's scaled by the product of the mix coefficients; inside it every
/// frame is zero.
fn check_tca(fault: Option<Fault>) -> std::result::Result<String, String> {
    let order = if fault == Some(Fault::CascadeOrder) { CascadeOrder::CutoutThenMix } else { CascadeOrder::MixThenCutout };
    let mut rng = seeded_rng(11);
    let cfg = TcaConfig::default();
    let (t, h, w) = (16, 32, 32);
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let clip = random_clip(&mut rng, [t, h, w, 3], "clip");
        let donor = random_clip(&mut rng, [t, h, w, 3], "donor");
        let (out, record) = apply_tca_ordered(&clip, Some(&donor), &cfg, &mut rng, order).map_err(fail)?;
        let alpha: f64 = record.iter().filter_map(Transform::mix_alpha).product();
        let region = record
            .iter()
            .find_map(|r| match r {
                Transform::Cutout { region } => Some(*region),
                _ => None,
            })
            .ok_or("no cutout recorded")?;
        for f in 0..t {
            let frame = out.frame(f);
            for y in region.top..region.top + region.height {
                for x in region.left..region.left + region.width {
                    if frame[(y * w + x) * 3..][..3].iter().any(|&v| v != 0.0) {
                        return Err(format!("clip {i}: cutout pixel ({y},{x}) of frame {f} is not zero"));
                    }
                }
            }
        }
        for k in 1..=3 {
            let d_out = temporal_difference(out.frames(), k).map_err(fail)?;
            let d_in = temporal_difference(clip.frames(), k).map_err(fail)?;
            let frame_len = h * w * 3;
            for (idx, (a, b)) in d_out.data().iter().zip(d_in.data()).enumerate() {
                let p = (idx % frame_len) / 3;
                if region.contains(p / w, p % w) {
                    continue;
                }
                worst = worst.max((a - alpha * b).abs());
            }
        }
    }
    if worst <= 1e-12 {
        Ok(format!("20 clips, k=1..3, max error {worst:.1e}"))
    } else {
        Err(format!("max error {worst:.1e} exceeds 1e-12"))
    }
}

fn unit(rng: &mut VtdlRng, dim: usize) -> Embedding {
    let v: Vec<f64> = (0..dim).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
    Embedding::normalize(v).expect("non-zero draw")
}

/// Straight-line evaluation of the loss, no shared code with `td_loss`.
fn oracle_loss(batch: &[TripletEmbedding], bank: &MemoryBank, t: f64) -> f64 {
    let d = |u: &Embedding, v: &Embedding| (u.values().iter().zip(v.values()).map(|(a, b)| a * b).sum::<f64>() / t).exp();
    let mut total = 0.0;
    for s in batch {
        let pos = d(&s.anchor, &s.positive);
        let mut denom = pos + d(&s.anchor, &s.negative);
        for b in bank.slots() {
            denom += d(&s.anchor, b);
        }
        total += -(pos / denom).ln();
    }
    total / batch.len() as f64
}

fn check_loss(_: Option<Fault>) -> std::result::Result<String, String> {
    let mut rng = seeded_rng(12);
    let cfg = ObjectiveConfig { temperature: 0.2, ..ObjectiveConfig::default() };
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let dim = rng.random_range(2..16);
        let b = rng.random_range(1..6);
        let k = rng.random_range(0..12);
        let batch: Vec<TripletEmbedding> = (0..b)
            .map(|_| TripletEmbedding { anchor: unit(&mut rng, dim), positive: unit(&mut rng, dim), negative: unit(&mut rng, dim) })
            .collect();
        let bank = MemoryBank::init(k, dim, &mut rng);
        let got = td_loss(&batch, &bank, &cfg).map_err(fail)?.loss;
        let want = oracle_loss(&batch, &bank, cfg.temperature);
        worst = worst.max((got - want).abs() / want.abs().max(1.0));
    }
    let a = unit(&mut rng, 8);
    let sym = [TripletEmbedding { anchor: a.clone(), positive: a.clone(), negative: a }];
    let log2 = td_loss(&sym, &MemoryBank::init(0, 8, &mut rng), &cfg).map_err(fail)?.loss;
    let sym_err = (log2 - std::f64::consts::LN_2).abs();
    if worst <= 1e-10 && sym_err <= 1e-12 {
        Ok(format!("200 instances, max error {worst:.1e}; symmetric case off by {sym_err:.1e}"))
    } else {
        Err(format!("oracle error {worst:.1e}, symmetric error {sym_err:.1e}"))
    }
}

struct GradFixture {
    online: Vec<VideoClip>,
    anchors: Vec<Embedding>,
    bank: MemoryBank,
    cfg: ObjectiveConfig,
}

impl GradFixture {
    fn loss(&self, params: &Params) -> Result<f64> {
        let refs: Vec<&VideoClip> = self.online.iter().collect();
        let emb = forward(params, &refs, NormMode::Batch, false)?.embeddings()?;
        td_loss(&self.batch(&emb), &self.bank, &self.cfg).map(|o| o.loss)
    }

    fn batch(&self, emb: &[Embedding]) -> Vec<TripletEmbedding> {
        let b = self.anchors.len();
        (0..b)
            .map(|i| TripletEmbedding { anchor: self.anchors[i].clone(), positive: emb[i].clone(), negative: emb[b + i].clone() })
            .collect()
    }
}

/// End-to-end loss gradient against central differences on sampled coordinates.
fn check_gradients(_: Option<Fault>) -> std::result::Result<String, String> {
    let mut rng = seeded_rng(13);
    let spec = EncoderSpec {
        in_channels: 3,
        blocks: vec![
            BlockSpec { out_channels: 4, spatial_stride: 2, temporal_stride: 1 },
            BlockSpec { out_channels: 6, spatial_stride: 2, temporal_stride: 2 },
        ],
        embed_dim: 8,
    };
    let params = init_params(&spec, &mut rng);
    let b = 2;
    let fx = GradFixture {
        online: (0..2 * b).map(|i| random_clip(&mut rng, [4, 8, 8, 3], &format!("c{i}"))).collect(),
        anchors: (0..b).map(|_| unit(&mut rng, 8)).collect(),
        bank: MemoryBank::init(5, 8, &mut rng),
        cfg: ObjectiveConfig { temperature: 0.5, ..ObjectiveConfig::default() },
    };
    let refs: Vec<&VideoClip> = fx.online.iter().collect();
    let acts = forward(&params, &refs, NormMode::Batch, true).map_err(fail)?;
    let out = td_loss(&fx.batch(&acts.embeddings().map_err(fail)?), &fx.bank, &fx.cfg).map_err(fail)?;
    let d_emb: Vec<Vec<f64>> = out.grad_positive.into_iter().chain(out.grad_negative).collect();
    let grads = acts.backward(&params, &d_emb).map_err(fail)?;

    let eps = 1e-5;
    let (mut checked, mut good) = (0, 0);
    for (ti, tensor) in params.tensors().iter().enumerate() {
        for _ in 0..10 {
            let e = rng.random_range(0..tensor.len());
            let mut plus = params.clone();
            plus.tensors_mut()[ti].data_mut()[e] += eps;
            let mut minus = params.clone();
            minus.tensors_mut()[ti].data_mut()[e] -= eps;
            let numeric = (fx.loss(&plus).map_err(fail)? - fx.loss(&minus).map_err(fail)?) / (2.0 * eps);
            let analytic = grads.tensors()[ti].data()[e];
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-8);
            checked += 1;
            good += usize::from(rel <= 1e-4);
        }
    }
    let frac = good as f64 / checked as f64;
    if frac >= 0.99 {
        Ok(format!("{good}/{checked} coordinates within 1e-4"))
    } else {
        Err(format!("only {good}/{checked} coordinates within 1e-4"))
    }
}

/// Batched pushes past capacity leave exactly the last K anchors, oldest first.
fn check_fifo(fault: Option<Fault>) -> std::result::Result<String, String> {
    let mut rng = seeded_rng(14);
    let k = 8;
    let mut bank = MemoryBank::init(k, 4, &mut rng);
    let mut pushed = Vec::new();
    for round in 0..5 {
        let mut batch: Vec<Embedding> = (0..3).map(|_| unit(&mut rng, 4)).collect();
        pushed.extend(batch.iter().cloned());
        if fault == Some(Fault::FifoReverse) {
            batch.reverse();
        }
        bank.push(&batch).map_err(fail)?;
        let want = &pushed[pushed.len().saturating_sub(k)..];
        let held: Vec<&Embedding> = bank.oldest_first().collect();
        let tail = &held[held.len() - want.len()..];
        if tail.iter().zip(want).any(|(a, b)| *a != b) {
            return Err(format!("after push {round} the bank does not hold the last anchors in insertion order"));
        }
    }
    if bank.cursor() != (5 * 3) % k {
        return Err(format!("cursor {} after 15 pushes into {k} slots", bank.cursor()));
    }
    Ok(format!("15 anchors through {k} slots"))
}

/// With the online network frozen the history distance shrinks by exactly
/// `m` per update, and a scalar starting at 0 reaches `1 - m^n`.
fn check_momentum(fault: Option<Fault>) -> std::result::Result<String, String> {
    let m = 0.99;
    let used = if fault == Some(Fault::MomentumSwap) { 1.0 - m } else { m };
    let spec = EncoderSpec {
        in_channels: 1,
        blocks: vec![BlockSpec { out_channels: 1, spatial_stride: 1, temporal_stride: 1 }],
        embed_dim: 1,
    };
    let mut rng = seeded_rng(15);
    let online = init_params(&spec, &mut rng);
    let mut pair = EncoderPair { online: online.clone(), history: Params::zeros(&spec), m: used };
    let mut scalar = EncoderPair { online: Params::zeros(&spec), history: Params::zeros(&spec), m: used };
    scalar.online.tensors_mut().iter_mut().for_each(|t| t.data_mut().fill(1.0));
    let dist = |p: &EncoderPair| -> f64 {
        p.history.tensors().iter().zip(p.online.tensors()).map(|(h, o)| h.sub(o).unwrap().norm().powi(2)).sum::<f64>().sqrt()
    };
    let mut prev = dist(&pair);
    for n in 1..=300 {
        pair.momentum_update().map_err(fail)?;
        scalar.momentum_update().map_err(fail)?;
        let now = dist(&pair);
        if (now - m * prev).abs() > 1e-12 * prev.max(1.0) {
            return Err(format!("update {n}: distance {now:.6e}, expected {:.6e}", m * prev));
        }
        prev = now;
        let want = 1.0 - m.powi(n);
        let got = scalar.history.tensors()[0].data()[0];
        if (got - want).abs() > 1e-12 {
            return Err(format!("update {n}: scalar history {got}, expected 1 - 0.99^{n} = {want}"));
        }
    }
    Ok("300 updates, contraction by m and 1 - m^n".into())
}

fn check_triplets(_: Option<Fault>) -> std::result::Result<String, String> {
    let mut rng = seeded_rng(16);
    let video = random_clip(&mut rng, [100, 32, 32, 1], "v");
    let cfg = SamplingConfig::default();
    for i in 0..1000 {
        let t = sample_triplet(&video, &cfg, &mut rng).map_err(fail)?;
        t.check(cfg.tau, cfg.min_offset()).map_err(|e| format!("triplet {i}: {e}"))?;
        if t.anchor.crop_box == t.positive.crop_box {
            return Err(format!("triplet {i}: positive reuses the anchor crop"));
        }
    }
    Ok("1000 triplets on a 100-frame video".into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pristine_suite_passes() {
        let report = run_selfcheck(None);
        assert!(report.all_passed(), "{report}");
    }

    #[test]
    fn each_fault_is_caught_by_its_property() {
        for (fault, property) in
            [(Fault::CascadeOrder, "tca-derivative-scaling"), (Fault::MomentumSwap, "momentum-contraction"), (Fault::FifoReverse, "bank-fifo")]
        {
            let report = run_selfcheck(Some(fault));
            let failed: Vec<&str> = report.failed().map(|r| r.name).collect();
            assert_eq!(failed, vec![property], "{fault:?}\n{report}");
        }
    }

    #[test]
    fn fault_names_parse() {
        for f in Fault::ALL {
            assert_eq!(f.name().parse::<Fault>().unwrap(), f);
        }
        assert!("nope".parse::<Fault>().is_err());
    }
}
