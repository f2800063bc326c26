//! Artifact naming. Every stage output is keyed by a digest of everything it depends on.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

fn digest(value: &impl Serialize) -> String {
    let bytes = serde_json::to_vec(value).expect("config values serialize");
    hex::encode(&Sha256::digest(&bytes)[..8])
}

pub struct Artifacts {
    pub dir: PathBuf,
    screener: String,
    screens: String,
    refiner: String,
    retrieval: String,
    eism: String,
    answers_key: serde_json::Value,
}

impl Artifacts {
    pub fn new(dir: PathBuf, corpus_path: &Path, cfg: &RunConfig) -> anyhow::Result<Self> {
        let corpus_bytes = std::fs::read(corpus_path).with_context(|| format!("reading {}", corpus_path.display()))?;
        let corpus = hex::encode(Sha256::digest(&corpus_bytes));
        let screener = digest(&json!({
            "corpus": corpus,
            "encoder": cfg.encoder,
            "train": cfg.screener_train(),
            "seed": cfg.seed,
        }));
        let screens = digest(&json!({ "screener": screener, "top_k": cfg.top_k }));
        let refiner = digest(&json!({
            "screens": screens,
            "scorer": cfg.scorer,
            "train": cfg.refiner_train(),
            "options": cfg.refiner_options,
            "seed": cfg.seed,
        }));
        let retrieval = digest(&json!({ "refiner": refiner, "refine": cfg.refine }));
        let eism = digest(&json!({ "screens": screens, "gap": cfg.eism_gap }));
        let answers_key = json!({
            "provider": cfg.answer_provider,
            "endpoint": cfg.generator_endpoint,
        });
        Ok(Artifacts {
            dir,
            screener,
            screens,
            refiner,
            retrieval,
            eism,
            answers_key,
        })
    }

    fn file(&self, name: String) -> PathBuf {
        self.dir.join(name)
    }

    pub fn screener_model(&self) -> PathBuf {
        self.file(format!("screener-{}.bin", self.screener))
    }

    pub fn screener_loss(&self) -> PathBuf {
        self.file(format!("screener-{}.loss.csv", self.screener))
    }

    pub fn screener_config(&self) -> PathBuf {
        self.file(format!("screener-{}.toml", self.screener))
    }

    pub fn screens(&self, split: &str) -> PathBuf {
        self.file(format!("screens-{split}-{}.jsonl", self.screens))
    }

    pub fn refiner_model(&self) -> PathBuf {
        self.file(format!("refiner-{}.bin", self.refiner))
    }

    pub fn refiner_loss(&self) -> PathBuf {
        self.file(format!("refiner-{}.loss.csv", self.refiner))
    }

    pub fn refiner_config(&self) -> PathBuf {
        self.file(format!("refiner-{}.toml", self.refiner))
    }

    fn retrieval_stem(&self, split: &str, eism_only: bool) -> String {
        if eism_only {
            format!("retrieval-eism-{split}-{}", self.eism)
        } else {
            format!("retrieval-{split}-{}", self.retrieval)
        }
    }

    pub fn retrieval(&self, split: &str, eism_only: bool) -> PathBuf {
        self.file(format!("{}.jsonl", self.retrieval_stem(split, eism_only)))
    }

    pub fn retrieval_report(&self, split: &str, eism_only: bool) -> PathBuf {
        self.file(format!("{}.report.json", self.retrieval_stem(split, eism_only)))
    }

    pub fn answers(&self, split: &str, eism_only: bool) -> PathBuf {
        let upstream = if eism_only { &self.eism } else { &self.retrieval };
        let key = digest(&json!({ "retrieval": upstream, "answer": self.answers_key }));
        let tag = if eism_only { "eism-" } else { "" };
        self.file(format!("answers-{tag}{split}-{key}.jsonl"))
    }
}
