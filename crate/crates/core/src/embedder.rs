//! Hashed n-gram text encoder with a trainable linear projection.
//!
//! `embed(text) = normalize(Wᵀ · featurize(text))`, where `featurize` is signed feature
//! hashing over word n-grams. A screener owns two of these: one for questions and one
//! for evidence surfaces.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use twox_hash::XxHash64;

use crate::tensor::{dot, l2_norm, Matrix, SparseVec};
use crate::{Error, Result};

const NGRAM_JOINER: u8 = 0x1f;
const ZERO_NORM: f64 = 1e-12;

/// Lowercases and splits on runs of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureHasher {
    pub dim: usize,
    pub ngram_orders: Vec<usize>,
    pub seed: u64,
}

impl Default for FeatureHasher {
    fn default() -> Self {
        FeatureHasher {
            dim: 4096,
            ngram_orders: vec![1, 2],
            seed: 0,
        }
    }
}

impl FeatureHasher {
    pub fn new(dim: usize, ngram_orders: Vec<usize>, seed: u64) -> Result<Self> {
        let hasher = FeatureHasher {
            dim,
            ngram_orders,
            seed,
        };
        hasher.validate()?;
        Ok(hasher)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::InvalidArgument(format!("hash dimension must be >= 2, got {}", self.dim)));
        }
        if self.ngram_orders.is_empty() || self.ngram_orders.contains(&0) {
            return Err(Error::InvalidArgument("n-gram orders must be positive and non-empty".into()));
        }
        Ok(())
    }

    /// Bucket and sign of one feature key. The sign comes from the top hash bit, the
    /// bucket from the remainder.
    pub fn bucket(&self, key: &[u8]) -> (usize, f64) {
        let h = XxHash64::oneshot(self.seed, key);
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        (((h & (u64::MAX >> 1)) % self.dim as u64) as usize, sign)
    }

    pub fn featurize(&self, text: &str) -> SparseVec {
        self.featurize_tokens(&tokenize(text))
    }

    pub fn featurize_tokens(&self, tokens: &[String]) -> SparseVec {
        let mut entries = Vec::new();
        self.push_ngrams(tokens, &mut entries);
        SparseVec::from_entries(self.dim, entries)
    }

    pub(crate) fn push_ngrams(&self, tokens: &[String], entries: &mut Vec<(usize, f64)>) {
        let mut key = Vec::new();
        for &n in &self.ngram_orders {
            for gram in tokens.windows(n) {
                key.clear();
                for (i, tok) in gram.iter().enumerate() {
                    if i > 0 {
                        key.push(NGRAM_JOINER);
                    }
                    key.extend_from_slice(tok.as_bytes());
                }
                entries.push(self.bucket(&key));
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderRole {
    Question,
    Evidence,
}

impl EncoderRole {
    pub fn as_str(self) -> &'static str {
        match self {
            EncoderRole::Question => "question",
            EncoderRole::Evidence => "evidence",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormFlag {
    Unit,
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub vector: Vec<f64>,
    pub norm_flag: NormFlag,
}

impl Embedding {
    pub fn zero(len: usize) -> Self {
        Embedding {
            vector: vec![0.0; len],
            norm_flag: NormFlag::Zero,
        }
    }

    /// Normalizes `v`, or returns the zero embedding when `‖v‖ ≤ 1e-12`.
    pub fn from_raw(v: Vec<f64>) -> Self {
        let norm = l2_norm(&v);
        if norm > ZERO_NORM {
            Embedding {
                vector: v.into_iter().map(|x| x / norm).collect(),
                norm_flag: NormFlag::Unit,
            }
        } else {
            Embedding::zero(v.len())
        }
    }

    pub fn is_zero(&self) -> bool {
        self.norm_flag == NormFlag::Zero
    }
}

/// Cosine matching score of two embeddings; 0 when either is the zero embedding.
pub fn cosine(a: &Embedding, b: &Embedding) -> f64 {
    if a.is_zero() || b.is_zero() {
        return 0.0;
    }
    dot(&a.vector, &b.vector).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    pub hasher: FeatureHasher,
    /// `dim_in × dim_out`.
    pub projection: Matrix,
    pub role: EncoderRole,
}

impl EmbeddingModel {
    /// Gaussian projection with entries of std `1/sqrt(dim_out)`.
    pub fn init(hasher: FeatureHasher, dim_out: usize, role: EncoderRole, seed: u64) -> Result<Self> {
        hasher.validate()?;
        if dim_out == 0 {
            return Err(Error::InvalidArgument("output dimension must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let projection = Matrix::random_normal(hasher.dim, dim_out, 1.0 / (dim_out as f64).sqrt(), &mut rng);
        Ok(EmbeddingModel {
            hasher,
            projection,
            role,
        })
    }

    pub fn dim_out(&self) -> usize {
        self.projection.cols()
    }

    /// Pre-normalization output `Wᵀ · x`.
    pub fn project(&self, features: &SparseVec) -> Vec<f64> {
        self.projection.transpose_mul_sparse(features)
    }

    pub fn embed(&self, text: &str) -> Embedding {
        Embedding::from_raw(self.project(&self.hasher.featurize(text)))
    }

    pub fn is_finite(&self) -> bool {
        self.projection.is_finite()
    }
}
