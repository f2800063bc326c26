//! Contrastive training of the screening encoders with distractor self-pairs.
//!
//! Each batch row pairs a question with one of its gold sources. For every sampled
//! question one distractor is also added, paired with itself as its own query, so the
//! evidence encoder sees distractors as positives of their own row and negatives of
//! every other row. The objective is in-batch InfoNCE over cosine similarities.

use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, QaInstance};
use crate::embedder::EmbeddingModel;
use crate::optim::{AdamW, AdamWConfig, LinearSchedule};
use crate::screener::Screener;
use crate::tensor::{dot, l2_norm, Matrix, SparseVec};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    Gold,
    SelfNegative,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContrastivePair {
    pub query_text: String,
    pub evidence_text: String,
    pub kind: PairKind,
    /// Instance the pair was drawn from.
    pub qid: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    LinearDecay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Softmax temperature over cosine scores. 1.0 exponentiates raw cosines; values
    /// near 0.05 give a much sharper softmax and usually train faster.
    pub temperature: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub schedule: Schedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::paper_screener()
    }
}

impl TrainConfig {
    /// Screening-stage values used with full-size encoders.
    pub fn paper_screener() -> Self {
        TrainConfig {
            batch_size: 256,
            learning_rate: 2e-4,
            epochs: 5,
            temperature: 1.0,
            weight_decay: 0.01,
            seed: 0,
            schedule: Schedule::LinearDecay,
        }
    }

    /// Desk-scale screening values for the hashed encoders.
    pub fn desk_screener() -> Self {
        TrainConfig {
            batch_size: 64,
            learning_rate: 2e-3,
            temperature: 0.05,
            ..TrainConfig::paper_screener()
        }
    }

    /// Refinement-stage values used with a full-size cross-encoder.
    pub fn paper_refiner() -> Self {
        TrainConfig {
            batch_size: 8,
            learning_rate: 2e-5,
            ..TrainConfig::paper_screener()
        }
    }

    /// Desk-scale refinement values for the hashed pair scorer.
    pub fn desk_refiner() -> Self {
        TrainConfig {
            batch_size: 8,
            learning_rate: 3e-3,
            ..TrainConfig::paper_screener()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("{what} must be positive")));
        if self.batch_size == 0 {
            return bad("batch_size");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning_rate must be finite and non-negative".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature");
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(Error::InvalidArgument("weight_decay must be non-negative".into()));
        }
        Ok(())
    }

    pub(crate) fn schedule(&self, total_steps: usize) -> LinearSchedule {
        match self.schedule {
            Schedule::LinearDecay => LinearSchedule {
                base: self.learning_rate,
                total_steps,
            },
        }
    }

    pub(crate) fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub learning_rate: f64,
}

pub fn write_loss_csv(history: &[LossRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for r in history {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::file(path, e))
}

/// Samples `b` distinct instances; each contributes a gold pair and, when it has
/// distractors, one self-negative pair.
pub fn build_nscl_batch(
    instances: &[&QaInstance],
    corpus: &Corpus,
    rng: &mut impl Rng,
    b: usize,
) -> Result<Vec<ContrastivePair>> {
    if b == 0 {
        return Err(Error::InvalidArgument("batch size must be >= 1".into()));
    }
    if b > instances.len() {
        return Err(Error::InsufficientInstances {
            needed: b,
            available: instances.len(),
        });
    }
    let surface = |id: &str| {
        corpus.surface_of(id).ok_or_else(|| Error::DanglingId {
            qid: String::new(),
            id: id.to_string(),
        })
    };
    let mut batch = Vec::with_capacity(2 * b);
    for idx in index::sample(rng, instances.len(), b) {
        let inst = instances[idx];
        let gold = inst.gold_ids.choose(rng).ok_or(Error::EmptyGold)?;
        batch.push(ContrastivePair {
            query_text: inst.question.clone(),
            evidence_text: surface(gold)?,
            kind: PairKind::Gold,
            qid: inst.qid.clone(),
        });
        if let Some(d) = inst.distractor_ids.choose(rng) {
            let text = surface(d)?;
            batch.push(ContrastivePair {
                query_text: text.clone(),
                evidence_text: text,
                kind: PairKind::SelfNegative,
                qid: inst.qid.clone(),
            });
        }
    }
    Ok(batch)
}

/// One side of a pair after encoding, with what the backward pass needs.
struct Encoded {
    features: SparseVec,
    norm: f64,
    /// Unit vector, or `None` for the zero embedding.
    unit: Option<Vec<f64>>,
}

fn encode(model: &EmbeddingModel, text: &str) -> Encoded {
    let features = model.hasher.featurize(text);
    let raw = model.project(&features);
    let norm = l2_norm(&raw);
    let unit = (norm > 1e-12).then(|| raw.iter().map(|x| x / norm).collect());
    Encoded { features, norm, unit }
}

struct Forward {
    queries: Vec<Encoded>,
    evidence: Vec<Encoded>,
    /// `s_ij / τ`.
    logits: Matrix,
    loss: f64,
    /// Row-wise softmax of `logits`.
    probs: Matrix,
}

fn forward(q_model: &EmbeddingModel, e_model: &EmbeddingModel, batch: &[ContrastivePair], temperature: f64) -> Result<Forward> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if temperature.is_nan() || temperature <= 0.0 {
        return Err(Error::InvalidArgument("temperature must be positive".into()));
    }
    let n = batch.len();
    let queries: Vec<Encoded> = batch.iter().map(|p| encode(q_model, &p.query_text)).collect();
    let evidence: Vec<Encoded> = batch.iter().map(|p| encode(e_model, &p.evidence_text)).collect();
    let mut logits = Matrix::zeros(n, n);
    for (i, q) in queries.iter().enumerate() {
        for (j, e) in evidence.iter().enumerate() {
            let cos = match (&q.unit, &e.unit) {
                (Some(a), Some(b)) => dot(a, b).clamp(-1.0, 1.0),
                _ => 0.0,
            };
            logits.set(i, j, cos / temperature);
        }
    }
    let mut probs = Matrix::zeros(n, n);
    let mut loss = 0.0;
    for i in 0..n {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|s| (s - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - row[i];
        for (p, s) in probs.row_mut(i).iter_mut().zip(row) {
            *p = (s - lse).exp();
        }
    }
    Ok(Forward {
        queries,
        evidence,
        logits,
        loss: loss / n as f64,
        probs,
    })
}

/// In-batch InfoNCE loss with diagonal positives. Returns the loss and the cosine
/// similarity matrix (before temperature scaling).
pub fn info_nce_loss(
    q_model: &EmbeddingModel,
    e_model: &EmbeddingModel,
    batch: &[ContrastivePair],
    temperature: f64,
) -> Result<(f64, Matrix)> {
    let fwd = forward(q_model, e_model, batch, temperature)?;
    let mut sims = fwd.logits;
    sims.scale(temperature);
    Ok((fwd.loss, sims))
}

/// InfoNCE over a precomputed similarity matrix; used by tests and diagnostics.
pub fn info_nce_from_similarities(sims: &Matrix, temperature: f64) -> f64 {
    let n = sims.rows();
    let mut loss = 0.0;
    for i in 0..n {
        let row: Vec<f64> = sims.row(i).iter().map(|s| s / temperature).collect();
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
        loss += lse - row[i];
    }
    loss / n as f64
}

#[derive(Debug, Clone)]
pub struct ContrastiveGrads {
    pub loss: f64,
    pub question: Matrix,
    pub evidence: Matrix,
}

/// Backpropagates through `v / ‖v‖`: `∂L/∂v = (g − u (u·g)) / ‖v‖`.
fn through_normalize(unit: &[f64], norm: f64, g: &[f64]) -> Vec<f64> {
    let proj = dot(unit, g);
    unit.iter().zip(g).map(|(u, gv)| (gv - u * proj) / norm).collect()
}

/// Exact gradients of the InfoNCE loss with respect to both projection matrices.
pub fn loss_gradients(
    q_model: &EmbeddingModel,
    e_model: &EmbeddingModel,
    batch: &[ContrastivePair],
    temperature: f64,
) -> Result<ContrastiveGrads> {
    let fwd = forward(q_model, e_model, batch, temperature)?;
    let n = batch.len();
    let d = q_model.dim_out();
    let mut grad_q = Matrix::zeros(q_model.projection.rows(), d);
    let mut grad_e = Matrix::zeros(e_model.projection.rows(), d);

    // ∂L/∂s_ij = (p_ij − δ_ij) / (n τ)
    let mut ds = fwd.probs.clone();
    for i in 0..n {
        let v = ds.get(i, i) - 1.0;
        ds.set(i, i, v);
    }
    ds.scale(1.0 / (n as f64 * temperature));

    for (i, q) in fwd.queries.iter().enumerate() {
        let Some(qu) = &q.unit else { continue };
        let mut g = vec![0.0; d];
        for (j, e) in fwd.evidence.iter().enumerate() {
            if let Some(eu) = &e.unit {
                let w = ds.get(i, j);
                g.iter_mut().zip(eu).for_each(|(gv, ev)| *gv += w * ev);
            }
        }
        grad_q.add_outer_sparse(&q.features, &through_normalize(qu, q.norm, &g));
    }
    for (j, e) in fwd.evidence.iter().enumerate() {
        let Some(eu) = &e.unit else { continue };
        let mut g = vec![0.0; d];
        for (i, q) in fwd.queries.iter().enumerate() {
            if let Some(qu) = &q.unit {
                let w = ds.get(i, j);
                g.iter_mut().zip(qu).for_each(|(gv, qv)| *gv += w * qv);
            }
        }
        grad_e.add_outer_sparse(&e.features, &through_normalize(eu, e.norm, &g));
    }
    Ok(ContrastiveGrads {
        loss: fwd.loss,
        question: grad_q,
        evidence: grad_e,
    })
}

#[derive(Debug, Clone)]
pub struct ScreenerTraining {
    pub screener: Screener,
    pub history: Vec<LossRecord>,
}

/// Trains both encoders for `cfg.epochs × ⌊n / batch_size⌋` steps. Each epoch shuffles
/// the instances and cuts them into consecutive batches.
pub fn train_screener(
    corpus: &Corpus,
    instances: &[&QaInstance],
    init: Screener,
    cfg: &TrainConfig,
) -> Result<ScreenerTraining> {
    cfg.validate()?;
    if instances.len() < cfg.batch_size {
        return Err(Error::InsufficientInstances {
            needed: cfg.batch_size,
            available: instances.len(),
        });
    }
    let mut screener = init;
    let steps_per_epoch = instances.len() / cfg.batch_size;
    let schedule = cfg.schedule(cfg.epochs * steps_per_epoch);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let q_len = screener.question.projection.as_slice().len();
    let e_len = screener.evidence.projection.as_slice().len();
    let mut opt_q = AdamW::new(q_len, cfg.adamw(), true);
    let mut opt_e = AdamW::new(e_len, cfg.adamw(), true);
    let mut history = Vec::with_capacity(cfg.epochs * steps_per_epoch);
    let mut order: Vec<&QaInstance> = instances.to_vec();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks_exact(cfg.batch_size) {
            let step = history.len();
            let batch = build_nscl_batch(chunk, corpus, &mut rng, chunk.len())?;
            let grads = loss_gradients(&screener.question, &screener.evidence, &batch, cfg.temperature)?;
            if !grads.loss.is_finite() || !grads.question.is_finite() || !grads.evidence.is_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            let lr = schedule.lr_at(step);
            opt_q.step(screener.question.projection.as_mut_slice(), grads.question.as_slice(), lr);
            opt_e.step(screener.evidence.projection.as_mut_slice(), grads.evidence.as_slice(), lr);
            history.push(LossRecord {
                step,
                epoch,
                loss: grads.loss,
                learning_rate: lr,
            });
        }
    }
    Ok(ScreenerTraining { screener, history })
}
