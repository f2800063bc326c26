//! Run configuration: defaults, TOML loading with deep-merged overrides, profile selection.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use evirefine::nscl::TrainConfig;
use evirefine::refiner::{RefinerTrainOptions, ScorerConfig};
use evirefine::screener::{EncoderConfig, DEFAULT_EISM_GAP, DEFAULT_TOP_K};
use evirefine::RefineConfig;
use serde::{Deserialize, Serialize};

use crate::usage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Training values as published for full-size models.
    Paper,
    /// Values tuned for the hashed encoders on one CPU.
    #[default]
    Desk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    #[default]
    Extractive,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOverrides {
    pub screener_train: TrainConfig,
    pub refiner_train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub profile: Profile,
    pub corpus_path: PathBuf,
    pub model_dir: PathBuf,
    pub top_k: usize,
    pub eism_gap: f64,
    /// Seeds model initialization and every training stage.
    pub seed: u64,
    pub answer_provider: ProviderKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator_endpoint: Option<String>,
    pub generator_timeout_secs: f64,
    pub drop_articles: bool,
    pub refine: RefineConfig,
    pub encoder: EncoderConfig,
    pub scorer: ScorerConfig,
    pub screener_train: TrainConfig,
    pub refiner_train: TrainConfig,
    pub refiner_options: RefinerTrainOptions,
    /// Replaces both training blocks when `profile = "desk"`.
    pub desk: StageOverrides,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            profile: Profile::Desk,
            corpus_path: PathBuf::from("corpus.jsonl"),
            model_dir: PathBuf::from("models"),
            top_k: DEFAULT_TOP_K,
            eism_gap: DEFAULT_EISM_GAP,
            seed: 0,
            answer_provider: ProviderKind::Extractive,
            generator_endpoint: None,
            generator_timeout_secs: 30.0,
            drop_articles: true,
            refine: RefineConfig::default(),
            encoder: EncoderConfig::default(),
            scorer: ScorerConfig::default(),
            screener_train: TrainConfig::paper_screener(),
            refiner_train: TrainConfig::paper_refiner(),
            refiner_options: RefinerTrainOptions::default(),
            desk: StageOverrides {
                screener_train: TrainConfig::desk_screener(),
                refiner_train: TrainConfig::desk_refiner(),
            },
        }
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Dotted paths of keys in `user` that do not survive into `effective`.
fn unknown_keys(user: &toml::Value, effective: &toml::Value, prefix: &str, out: &mut Vec<String>) {
    if let (toml::Value::Table(u), toml::Value::Table(e)) = (user, effective) {
        for (k, v) in u {
            let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            match e.get(k) {
                Some(ev) => unknown_keys(v, ev, &path, out),
                None => out.push(path),
            }
        }
    }
}

impl RunConfig {
    /// Parses a TOML document; absent keys keep their defaults at any depth.
    pub fn from_toml_str(text: &str) -> anyhow::Result<Self> {
        let user: toml::Value = toml::from_str(text).map_err(|e| usage(format!("config: {e}")))?;
        let mut merged = toml::Value::try_from(RunConfig::default()).context("serializing default config")?;
        merge(&mut merged, user.clone());
        let cfg: RunConfig = merged.try_into().map_err(|e| usage(format!("config: {e}")))?;
        let effective = toml::Value::try_from(&cfg).context("serializing config")?;
        let mut unknown = Vec::new();
        unknown_keys(&user, &effective, "", &mut unknown);
        if !unknown.is_empty() {
            return Err(usage(format!("config: unknown keys {}", unknown.join(", "))));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file. Relative paths inside it resolve against the file's directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let mut cfg = RunConfig::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.corpus_path, &mut cfg.model_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.top_k == 0 {
            bail!(usage("config: top_k must be >= 1"));
        }
        if self.refine.m_max == 0 {
            bail!(usage("config: refine.m_max must be >= 1"));
        }
        if self.answer_provider == ProviderKind::External && self.generator_endpoint.is_none() {
            bail!(usage("config: answer_provider = \"external\" needs generator_endpoint"));
        }
        if !(self.generator_timeout_secs > 0.0 && self.generator_timeout_secs.is_finite()) {
            bail!(usage("config: generator_timeout_secs must be positive"));
        }
        for (name, t) in [("screener_train", self.screener_train()), ("refiner_train", self.refiner_train())] {
            t.validate().map_err(|e| usage(format!("config: {name}: {e}")))?;
        }
        Ok(())
    }

    fn stage(&self, paper: &TrainConfig, desk: &TrainConfig) -> TrainConfig {
        let mut t = match self.profile {
            Profile::Paper => paper.clone(),
            Profile::Desk => desk.clone(),
        };
        t.seed = self.seed;
        t
    }

    /// Effective screener training values under the active profile.
    pub fn screener_train(&self) -> TrainConfig {
        self.stage(&self.screener_train, &self.desk.screener_train)
    }

    pub fn refiner_train(&self) -> TrainConfig {
        self.stage(&self.refiner_train, &self.desk.refiner_train)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
    }

    #[test]
    fn defaults_roundtrip_through_toml() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml_str(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }

    #[test]
    fn example_file_matches_defaults() {
        let text = include_str!("../config/example.toml");
        assert_eq!(RunConfig::from_toml_str(text).unwrap(), RunConfig::default());
    }

    #[test]
    fn partial_override_keeps_sibling_defaults() {
        let cfg = RunConfig::from_toml_str("[desk.screener_train]\nepochs = 2\n[refine]\nscore_floor = 0.4\n").unwrap();
        let t = cfg.screener_train();
        assert_eq!(t.epochs, 2);
        assert_eq!(t.batch_size, TrainConfig::desk_screener().batch_size);
        assert_eq!(t.temperature, TrainConfig::desk_screener().temperature);
        assert_eq!(cfg.refine.score_floor, Some(0.4));
        assert_eq!(cfg.refine.m_max, 4);
    }

    #[test]
    fn profile_selects_training_block_and_seed_propagates() {
        let cfg = RunConfig::from_toml_str("profile = \"paper\"\nseed = 9\n").unwrap();
        assert_eq!(cfg.screener_train().batch_size, 256);
        assert_eq!(cfg.refiner_train().learning_rate, 2e-5);
        assert_eq!(cfg.refiner_train().seed, 9);
        assert_eq!(RunConfig::default().screener_train().batch_size, 64);
    }

    #[test]
    fn rejects_bad_configs() {
        for text in [
            "top_k = 0",
            "answer_provider = \"external\"",
            "[encoder]\ndimm = 3",
            "nonsense = 1",
            "top_k = \"many\"",
            "[desk.refiner_train]\nbatch_size = 0",
        ] {
            assert!(RunConfig::from_toml_str(text).is_err(), "{text}");
        }
    }
}
