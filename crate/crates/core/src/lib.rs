//! Progressive evidence refinement for multi-hop, multi-source question answering.
//!
//! The pipeline has two retrieval stages followed by answer assembly:
//!
//! 1. [`screener`]: a dual encoder ([`embedder`]) scores every candidate source against
//!    the question by cosine similarity and keeps the top-k. The encoders are trained
//!    contrastively by [`nscl`], where each sampled distractor joins the batch as its
//!    own query.
//! 2. [`refiner`]: a pair scorer reads `question [SEP] selected... [SEP] candidate` and
//!    greedily grows an ordered evidence chain until the `[STOP]` sentinel wins.
//! 3. [`answerer`]: the chain is laid out as a multi-turn dialogue and answered either by
//!    an extractive baseline or an external generator service.
//!
//! [`evalkit`] holds the metrics, brute-force oracles and the synthetic corpus generator;
//! [`pipeline`] wires the stages over whole corpora.

pub mod answerer;
pub mod corpus;
pub mod embedder;
mod error;
pub mod evalkit;
pub mod modelfile;
pub mod nscl;
pub mod optim;
pub mod pipeline;
pub mod refiner;
pub mod screener;
pub mod tensor;

pub use corpus::{Corpus, Modality, QaInstance, Source, STOP_ID};
pub use embedder::{cosine, tokenize, Embedding, EmbeddingModel, FeatureHasher};
pub use error::{Error, Result};
pub use refiner::{PairScorer, RefineConfig};
pub use screener::{ScreenResult, ScoredSource, Screener};
