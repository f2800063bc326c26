use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf { precision, recall, f1 }
    }
}

/// Set precision, recall and F1 of retrieved ids against gold ids.
pub fn retrieval_prf(retrieved: &HashSet<&str>, gold: &HashSet<&str>) -> Result<Prf> {
    if gold.is_empty() {
        return Err(Error::EmptyGold);
    }
    let hits = retrieved.intersection(gold).count() as f64;
    let precision = if retrieved.is_empty() {
        0.0
    } else {
        hits / retrieved.len() as f64
    };
    Ok(Prf::new(precision, hits / gold.len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizeOptions {
    pub drop_articles: bool,
}

impl Default for NormalizeOptions {
    fn default() -> Self {
        NormalizeOptions { drop_articles: true }
    }
}

/// Lowercase, strip ASCII punctuation, optionally drop `a`/`an`/`the`, collapse whitespace.
pub fn normalize_answer(text: &str, opts: NormalizeOptions) -> String {
    let lowered: String = text
        .to_lowercase()
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    lowered
        .split_whitespace()
        .filter(|t| !(opts.drop_articles && matches!(*t, "a" | "an" | "the")))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn answer_em_f1(prediction: &str, reference: &str) -> (f64, f64) {
    answer_em_f1_with(prediction, reference, NormalizeOptions::default())
}

/// Exact match and bag-of-tokens F1 (with multiplicity) after normalization.
pub fn answer_em_f1_with(prediction: &str, reference: &str, opts: NormalizeOptions) -> (f64, f64) {
    let pred = normalize_answer(prediction, opts);
    let gold = normalize_answer(reference, opts);
    let em = if pred == gold { 1.0 } else { 0.0 };
    let pred_tokens: Vec<&str> = pred.split_whitespace().collect();
    let gold_tokens: Vec<&str> = gold.split_whitespace().collect();
    match (pred_tokens.is_empty(), gold_tokens.is_empty()) {
        (true, true) => return (1.0, 1.0),
        (true, false) | (false, true) => return (0.0, 0.0),
        _ => {}
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &gold_tokens {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &pred_tokens {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return (em, 0.0);
    }
    let p = common as f64 / pred_tokens.len() as f64;
    let r = common as f64 / gold_tokens.len() as f64;
    (em, 2.0 * p * r / (p + r))
}

/// Mean of values summed in sorted order, so the result does not depend on input order.
fn sorted_mean(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub per_qid: BTreeMap<String, Prf>,
    pub mean: Prf,
}

impl RetrievalReport {
    /// Builds from `(qid, retrieved ids, gold ids)` triples.
    pub fn from_predictions<'a, I>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a [String], &'a [String])>,
    {
        let mut per_qid = BTreeMap::new();
        for (qid, retrieved, gold) in rows {
            let r: HashSet<&str> = retrieved.iter().map(String::as_str).collect();
            let g: HashSet<&str> = gold.iter().map(String::as_str).collect();
            per_qid.insert(qid.to_string(), retrieval_prf(&r, &g)?);
        }
        let mean = Prf {
            precision: sorted_mean(per_qid.values().map(|p| p.precision).collect()),
            recall: sorted_mean(per_qid.values().map(|p| p.recall).collect()),
            f1: sorted_mean(per_qid.values().map(|p| p.f1).collect()),
        };
        Ok(RetrievalReport { per_qid, mean })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(self, path)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct QaScore {
    pub em: f64,
    pub token_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct QaReport {
    pub per_qid: BTreeMap<String, QaScore>,
    pub mean: QaScore,
}

impl QaReport {
    /// Builds from `(qid, prediction, reference)` triples; the mean is per question.
    pub fn from_predictions<'a, I>(rows: I, opts: NormalizeOptions) -> Self
    where
        I: IntoIterator<Item = (&'a str, &'a str, &'a str)>,
    {
        let per_qid: BTreeMap<String, QaScore> = rows
            .into_iter()
            .map(|(qid, pred, gold)| {
                let (em, token_f1) = answer_em_f1_with(pred, gold, opts);
                (qid.to_string(), QaScore { em, token_f1 })
            })
            .collect();
        let mean = QaScore {
            em: sorted_mean(per_qid.values().map(|s| s.em).collect()),
            token_f1: sorted_mean(per_qid.values().map(|s| s.token_f1).collect()),
        };
        QaReport { per_qid, mean }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(self, path)
    }
}

fn write_json(value: &impl Serialize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::file(path, e))
}
