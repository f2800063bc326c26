use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, QaInstance, Source};
use crate::{Error, Result};

const BODY_TOKENS: usize = 8;
const QUESTION_FROM_GOLD: usize = 4;
const QUESTION_FRESH: usize = 2;
/// General tokens needed so rejection sampling of distractors stays cheap.
const MIN_GENERAL_TOKENS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_instances: usize,
    pub pool_size_per_q: usize,
    pub bridge_fraction: f64,
    pub vocab_size: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_instances: 2500,
            pool_size_per_q: 50,
            bridge_fraction: 0.5,
            vocab_size: 2000,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn n_bridge(&self) -> usize {
        (self.n_instances as f64 * self.bridge_fraction).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.pool_size_per_q < 3 {
            return Err(Error::InvalidArgument("pool_size_per_q must be >= 3".into()));
        }
        if !(0.0..=1.0).contains(&self.bridge_fraction) {
            return Err(Error::InvalidArgument("bridge_fraction must lie in [0, 1]".into()));
        }
        let n_bridge = self.n_bridge();
        if self.vocab_size < n_bridge + MIN_GENERAL_TOKENS {
            return Err(Error::VocabularyTooSmall(format!(
                "{} bridge tokens plus {MIN_GENERAL_TOKENS} general tokens need a vocabulary of {}, got {}",
                n_bridge,
                n_bridge + MIN_GENERAL_TOKENS,
                self.vocab_size
            )));
        }
        Ok(())
    }
}

/// Surface form of vocabulary entry `i`.
pub fn synth_vocab_token(i: usize) -> String {
    format!("w{i:04}")
}

struct Generator {
    rng: ChaCha8Rng,
    n_general: usize,
}

impl Generator {
    /// `k` distinct general tokens, none of them in `exclude`.
    fn fresh(&mut self, k: usize, exclude: &HashSet<usize>) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            let t = self.rng.gen_range(0..self.n_general);
            if !exclude.contains(&t) && !out.contains(&t) {
                out.push(t);
            }
        }
        out
    }

    /// Question built from `QUESTION_FROM_GOLD` tokens of `gold_general` plus fresh tokens
    /// outside `avoid`.
    fn question(&mut self, gold_general: &[usize], avoid: &HashSet<usize>) -> Vec<usize> {
        let mut q: Vec<usize> = gold_general
            .choose_multiple(&mut self.rng, QUESTION_FROM_GOLD)
            .copied()
            .collect();
        q.extend(self.fresh(QUESTION_FRESH, avoid));
        q.shuffle(&mut self.rng);
        q
    }

    fn distractor(&mut self, question: &HashSet<usize>, answer: usize) -> Vec<usize> {
        let exclude = HashSet::from([answer]);
        loop {
            let body = self.fresh(BODY_TOKENS, &exclude);
            if body.iter().filter(|t| question.contains(t)).count() <= 1 {
                return body;
            }
        }
    }
}

fn words(tokens: &[usize]) -> Vec<String> {
    tokens.iter().map(|&t| synth_vocab_token(t)).collect()
}

/// Planted corpus: single-hop questions answerable from one lexically matching source, and
/// bridge questions whose second gold source shares only a unique bridge token with the first.
pub fn gen_synthetic(cfg: &SynthConfig) -> Result<Corpus> {
    cfg.validate()?;
    let n_bridge = cfg.n_bridge();
    let n_general = cfg.vocab_size - n_bridge;
    let mut gen = Generator {
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        n_general,
    };

    let mut kinds: Vec<bool> = (0..cfg.n_instances).map(|i| i < n_bridge).collect();
    kinds.shuffle(&mut gen.rng);

    let mut sources = Vec::with_capacity(cfg.n_instances * cfg.pool_size_per_q);
    let mut instances = Vec::with_capacity(cfg.n_instances);
    let mut next_bridge = n_general;
    for (qi, &is_bridge) in kinds.iter().enumerate() {
        let (question, gold_bodies, answer) = if is_bridge {
            let bridge = next_bridge;
            next_bridge += 1;
            let g1_general = gen.fresh(BODY_TOKENS - 1, &HashSet::new());
            let g1_set: HashSet<usize> = g1_general.iter().copied().collect();
            let question = gen.question(&g1_general, &g1_set);
            let mut used: HashSet<usize> = g1_set.clone();
            used.extend(&question);
            let g2_general = gen.fresh(BODY_TOKENS - 1, &used);
            let answer = *g2_general.choose(&mut gen.rng).expect("non-empty body");
            let mut g1 = g1_general;
            g1.push(bridge);
            g1.shuffle(&mut gen.rng);
            let mut g2 = g2_general;
            g2.push(bridge);
            g2.shuffle(&mut gen.rng);
            (question, vec![g1, g2], answer)
        } else {
            let body = gen.fresh(BODY_TOKENS, &HashSet::new());
            let body_set: HashSet<usize> = body.iter().copied().collect();
            let question = gen.question(&body, &body_set);
            let q_set: HashSet<usize> = question.iter().copied().collect();
            let candidates: Vec<usize> = body.iter().copied().filter(|t| !q_set.contains(t)).collect();
            let answer = *candidates.choose(&mut gen.rng).expect("body outgrows question overlap");
            (question, vec![body], answer)
        };

        let q_set: HashSet<usize> = question.iter().copied().collect();
        let n_gold = gold_bodies.len();
        let mut bodies = gold_bodies;
        for _ in n_gold..cfg.pool_size_per_q {
            bodies.push(gen.distractor(&q_set, answer));
        }

        // Neutral ids: the position of a source in the id order says nothing about its role.
        let mut slots: Vec<usize> = (0..bodies.len()).collect();
        slots.shuffle(&mut gen.rng);
        let base = sources.len();
        let mut ids = vec![String::new(); bodies.len()];
        for (offset, &role) in slots.iter().enumerate() {
            ids[role] = format!("s{:06}", base + offset);
        }
        let mut by_id: Vec<(String, &Vec<usize>)> = ids.iter().cloned().zip(bodies.iter()).collect();
        by_id.sort_by(|a, b| a.0.cmp(&b.0));
        for (id, body) in by_id {
            let w = words(body);
            let source = match sources.len() % 3 {
                0 => Source::text(id, None, w.join(" ")),
                1 => Source::image(id, w.join(" "), None),
                _ => Source::table(id, None, format!("{} ; {}", w[..4].join(" "), w[4..].join(" "))),
            };
            sources.push(source);
        }
        let mut distractor_ids: Vec<String> = ids[n_gold..].to_vec();
        distractor_ids.sort();
        instances.push(QaInstance {
            qid: format!("q{qi:05}"),
            question: words(&question).join(" "),
            gold_ids: ids[..n_gold].to_vec(),
            distractor_ids,
            answer: synth_vocab_token(answer),
        });
    }
    Corpus::new(sources, instances)
}
