//! Initial screening: cosine scoring of every candidate against the question, top-k.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Source};
use crate::embedder::{cosine, EncoderRole, EmbeddingModel, FeatureHasher};
use crate::modelfile::ModelFile;
use crate::{Error, Result};

/// Default screening depth.
pub const DEFAULT_TOP_K: usize = 16;
/// Default score gap for the screening-only selection heuristic.
pub const DEFAULT_EISM_GAP: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub dim: usize,
    pub ngram_orders: Vec<usize>,
    pub dim_out: usize,
    pub hash_seed: u64,
    /// Start both encoders from the same random projection.
    pub tied_init: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            dim: 4096,
            ngram_orders: vec![1, 2],
            dim_out: 128,
            hash_seed: 0x5eed,
            tied_init: true,
        }
    }
}

/// Question and evidence encoders (separate parameter sets, shared hasher).
#[derive(Debug, Clone, PartialEq)]
pub struct Screener {
    pub question: EmbeddingModel,
    pub evidence: EmbeddingModel,
}

impl Screener {
    pub fn init(cfg: &EncoderConfig, seed: u64) -> Result<Self> {
        let hasher = FeatureHasher::new(cfg.dim, cfg.ngram_orders.clone(), cfg.hash_seed)?;
        let evidence_seed = if cfg.tied_init { seed } else { seed.wrapping_add(1) };
        Ok(Screener {
            question: EmbeddingModel::init(hasher.clone(), cfg.dim_out, EncoderRole::Question, seed)?,
            evidence: EmbeddingModel::init(hasher, cfg.dim_out, EncoderRole::Evidence, evidence_seed)?,
        })
    }

    pub fn to_model_file(&self) -> ModelFile {
        let mut f = ModelFile::new(self.question.hasher.clone());
        f.push_matrix("question.projection", &self.question.projection);
        f.push_matrix("evidence.projection", &self.evidence.projection);
        f
    }

    pub fn from_model_file(f: &ModelFile) -> Result<Self> {
        let question = f.matrix("question.projection")?;
        let evidence = f.matrix("evidence.projection")?;
        if question.rows() != f.hasher.dim || question.shape() != evidence.shape() {
            return Err(Error::ModelFormat("screener projections disagree with hasher dimension".into()));
        }
        Ok(Screener {
            question: EmbeddingModel {
                hasher: f.hasher.clone(),
                projection: question,
                role: EncoderRole::Question,
            },
            evidence: EmbeddingModel {
                hasher: f.hasher.clone(),
                projection: evidence,
                role: EncoderRole::Evidence,
            },
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_model_file().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Screener::from_model_file(&ModelFile::load(path)?)
    }

    /// Matching score of every pool source, in pool order.
    pub fn score_pool(&self, corpus: &Corpus, question: &str, pool: &[&Source]) -> Vec<ScoredSource> {
        let q = self.question.embed(question);
        pool.par_iter()
            .map(|s| ScoredSource {
                source_id: s.id.clone(),
                score: cosine(&q, &self.evidence.embed(&corpus.surface(s))),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSource {
    #[serde(rename = "id")]
    pub source_id: String,
    pub score: f64,
}

/// Ranking order: higher score first, then ascending id.
pub fn rank_order(a: &ScoredSource, b: &ScoredSource) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.source_id.cmp(&b.source_id))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenResult {
    pub qid: String,
    pub ranked: Vec<ScoredSource>,
    pub k: usize,
}

impl ScreenResult {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.ranked.iter().map(|s| s.source_id.as_str())
    }

    /// The same ranking cut to its first `k` entries.
    pub fn truncated(&self, k: usize) -> ScreenResult {
        ScreenResult {
            qid: self.qid.clone(),
            ranked: self.ranked.iter().take(k).cloned().collect(),
            k,
        }
    }
}

struct Best(ScoredSource);

impl PartialEq for Best {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Best {}

impl PartialOrd for Best {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Best {
    // Greater means ranked earlier.
    fn cmp(&self, other: &Self) -> Ordering {
        rank_order(&other.0, &self.0)
    }
}

/// Keeps the `k` best scored sources with a bounded heap, returned in ranking order.
pub fn top_k(scored: impl IntoIterator<Item = ScoredSource>, k: usize) -> Vec<ScoredSource> {
    let mut heap: BinaryHeap<Reverse<Best>> = BinaryHeap::with_capacity(k + 1);
    for s in scored {
        heap.push(Reverse(Best(s)));
        if heap.len() > k {
            heap.pop();
        }
    }
    let mut out: Vec<ScoredSource> = heap.into_iter().map(|Reverse(Best(s))| s).collect();
    out.sort_by(rank_order);
    out
}

/// Scores the pool and keeps the top-k. The sentinel must not be part of the pool.
pub fn screen(
    screener: &Screener,
    corpus: &Corpus,
    qid: &str,
    question: &str,
    pool: &[&Source],
    k: usize,
) -> Result<ScreenResult> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    if pool.iter().any(|s| s.is_sentinel()) {
        return Err(Error::InvalidArgument("the sentinel joins the pool only at refinement".into()));
    }
    let mut seen = HashSet::with_capacity(pool.len());
    if let Some(dup) = pool.iter().find(|s| !seen.insert(s.id.as_str())) {
        return Err(Error::DuplicateId(dup.id.clone()));
    }
    let scored = screener.score_pool(corpus, question, pool);
    Ok(ScreenResult {
        qid: qid.to_string(),
        ranked: top_k(scored, k),
        k,
    })
}

/// Screening-only selection: the top source, plus the runner-up when it trails by less
/// than `gap`.
pub fn eism_only_select(result: &ScreenResult, gap: f64) -> Vec<String> {
    match &result.ranked[..] {
        [] => Vec::new(),
        [first] => vec![first.source_id.clone()],
        [first, second, ..] => {
            if first.score - second.score < gap {
                vec![first.source_id.clone(), second.source_id.clone()]
            } else {
                vec![first.source_id.clone()]
            }
        }
    }
}

/// Fraction of gold sources present in the ranking.
pub fn recall_at_k(result: &ScreenResult, gold_ids: &HashSet<&str>) -> Result<f64> {
    if gold_ids.is_empty() {
        return Err(Error::EmptyGold);
    }
    let hits = result.ids().filter(|id| gold_ids.contains(id)).count();
    Ok(hits as f64 / gold_ids.len() as f64)
}
