//! Temporal-discriminative contrastive loss and the FIFO memory bank.
//!
//! For an anchor `a`, positive `p`, intra-video negative `n` and bank slots
//! `B_j`, each sample contributes
//!
//! ```text
//! -log( d(a,p) / (d(a,p) + d(a,n) + sum_j d(a,B_j)) ),   d(u,v) = exp(u.v / T)
//! ```
//!
//! The anchor comes from the history encoder and the bank holds past
//! anchors, so gradients flow only into the positive and the negative.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Embedding;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    Mean,
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub temperature: f64,
    /// Memory bank capacity `K`; zero disables inter-video negatives.
    pub bank_size: usize,
    pub reduction: Reduction,
    /// Include the intra-video negative term.
    pub intra_negative: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self { temperature: 0.07, bank_size: 1024, reduction: Reduction::Mean, intra_negative: true }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config("objective.temperature must be positive".into()));
        }
        Ok(())
    }
}

/// `exp(u . v / T)`.
pub fn similarity(u: &Embedding, v: &Embedding, temperature: f64) -> f64 {
    (u.dot(v) / temperature).exp()
}

/// Embeddings of one triplet. The anchor is treated as a constant.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletEmbedding {
    pub anchor: Embedding,
    pub positive: Embedding,
    pub negative: Embedding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    /// Reduced loss over the batch.
    pub loss: f64,
    pub per_sample: Vec<f64>,
    /// d(loss)/d(positive embedding), per sample.
    pub grad_positive: Vec<Vec<f64>>,
    /// d(loss)/d(negative embedding), per sample.
    pub grad_negative: Vec<Vec<f64>>,
    pub mean_pos_sim: f64,
    pub mean_neg_sim: f64,
}

/// Loss and its gradient with respect to the positive and negative embeddings.
pub fn td_loss(batch: &[TripletEmbedding], bank: &MemoryBank, cfg: &ObjectiveConfig) -> Result<LossOutput> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let t = cfg.temperature;
    let scale = match cfg.reduction {
        Reduction::Mean => 1.0 / batch.len() as f64,
        Reduction::Sum => 1.0,
    };
    let mut out = LossOutput {
        loss: 0.0,
        per_sample: Vec::with_capacity(batch.len()),
        grad_positive: Vec::with_capacity(batch.len()),
        grad_negative: Vec::with_capacity(batch.len()),
        mean_pos_sim: 0.0,
        mean_neg_sim: 0.0,
    };
    for sample in batch {
        let a = &sample.anchor;
        let pos_cos = a.dot(&sample.positive);
        let neg_cos = a.dot(&sample.negative);
        let s_pos = pos_cos / t;
        let s_neg = neg_cos / t;

        // log-sum-exp over every logit in the denominator, shifted by the max
        let bank_logits = bank.slots().iter().map(|b| a.dot(b) / t);
        let mut max = s_pos;
        if cfg.intra_negative {
            max = max.max(s_neg);
        }
        let bank_max = bank_logits.clone().fold(f64::NEG_INFINITY, f64::max);
        max = max.max(bank_max);
        let e_pos = (s_pos - max).exp();
        let e_neg = if cfg.intra_negative { (s_neg - max).exp() } else { 0.0 };
        let e_bank: f64 = bank_logits.map(|s| (s - max).exp()).sum();
        let denom = e_pos + e_neg + e_bank;
        let loss = denom.ln() + max - s_pos;

        let w_pos = e_pos / denom;
        let w_neg = e_neg / denom;
        out.grad_positive.push(a.values().iter().map(|x| scale * (w_pos - 1.0) * x / t).collect());
        out.grad_negative.push(a.values().iter().map(|x| scale * w_neg * x / t).collect());
        out.per_sample.push(loss);
        out.loss += scale * loss;
        out.mean_pos_sim += pos_cos / batch.len() as f64;
        out.mean_neg_sim += neg_cos / batch.len() as f64;
    }
    Ok(out)
}

/// Fixed-capacity ring buffer of past anchor embeddings, overwritten oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    slots: Vec<Embedding>,
    cursor: usize,
}

impl MemoryBank {
    /// `capacity` independent directions drawn uniformly on the unit sphere.
    pub fn init<R: Rng + ?Sized>(capacity: usize, dim: usize, rng: &mut R) -> Self {
        let slots = (0..capacity)
            .map(|_| loop {
                let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                if let Ok(e) = Embedding::normalize(v) {
                    break e;
                }
            })
            .collect();
        Self { slots, cursor: 0 }
    }

    pub fn from_parts(slots: Vec<Embedding>, cursor: usize) -> Result<Self> {
        if (slots.is_empty() && cursor != 0) || (!slots.is_empty() && cursor >= slots.len()) {
            return Err(Error::CheckpointCorrupt(format!("bank cursor {cursor} out of range")));
        }
        Ok(Self { slots, cursor })
    }

    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn slots(&self) -> &[Embedding] {
        &self.slots
    }

    /// Slots from oldest to newest write.
    pub fn oldest_first(&self) -> impl Iterator<Item = &Embedding> {
        self.slots[self.cursor..].iter().chain(&self.slots[..self.cursor])
    }

    /// Writes `anchors` at the cursor, wrapping, and advances it.
    pub fn push(&mut self, anchors: &[Embedding]) -> Result<()> {
        let k = self.capacity();
        if anchors.len() > k {
            return Err(Error::BatchExceedsCapacity { batch: anchors.len(), capacity: k });
        }
        for a in anchors {
            self.slots[self.cursor] = a.clone();
            self.cursor = (self.cursor + 1) % k;
        }
        Ok(())
    }
}
