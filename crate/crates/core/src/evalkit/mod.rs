//! Metrics, brute-force oracles and the synthetic planted corpus.

mod metrics;
mod oracle;
mod synth;

pub use metrics::{
    answer_em_f1, answer_em_f1_with, normalize_answer, retrieval_prf, NormalizeOptions, Prf, QaReport, QaScore,
    RetrievalReport,
};
pub use oracle::{oracle_greedy, oracle_topk, ScoreTable};
pub use synth::{gen_synthetic, synth_vocab_token, SynthConfig};
