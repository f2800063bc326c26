//! Batch drivers over many questions and the JSONL record formats they exchange.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::answerer::Provider;
use crate::corpus::{Corpus, QaInstance};
use crate::evalkit::RetrievalReport;
use crate::refiner::{refine, PairScorer, RefineConfig};
use crate::screener::{eism_only_select, screen, ScreenResult, Screener};
use crate::{Error, Result};

pub const TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
    All,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Eval => "eval",
            Split::All => "all",
        }
    }
}

/// Instances of a split, in file order: the first 80% train, the rest eval.
pub fn split_instances(corpus: &Corpus, split: Split) -> Vec<&QaInstance> {
    let all = corpus.instances();
    let n_train = (all.len() as f64 * TRAIN_FRACTION).round() as usize;
    let slice = match split {
        Split::Train => &all[..n_train],
        Split::Eval => &all[n_train..],
        Split::All => all,
    };
    slice.iter().collect()
}

/// Screens every instance over its own candidate pool. Output order follows `instances`.
pub fn screen_all(screener: &Screener, corpus: &Corpus, instances: &[&QaInstance], k: usize) -> Result<Vec<ScreenResult>> {
    instances
        .par_iter()
        .map(|inst| screen(screener, corpus, &inst.qid, &inst.question, &corpus.pool(inst), k))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalRecord {
    pub qid: String,
    pub retrieved: Vec<String>,
}

/// Greedy refinement over each screened pool.
pub fn retrieve_all(
    scorer: &PairScorer,
    corpus: &Corpus,
    screens: &[ScreenResult],
    cfg: &RefineConfig,
) -> Result<Vec<RetrievalRecord>> {
    screens
        .par_iter()
        .map(|s| {
            let inst = corpus
                .instance(&s.qid)
                .ok_or_else(|| Error::InvalidArgument(format!("screen for unknown qid {}", s.qid)))?;
            Ok(RetrievalRecord {
                qid: s.qid.clone(),
                retrieved: refine(scorer, &inst.question, s, corpus, cfg),
            })
        })
        .collect()
}

/// Screening-only selection for every screened question.
pub fn eism_only_all(screens: &[ScreenResult], gap: f64) -> Vec<RetrievalRecord> {
    screens
        .iter()
        .map(|s| RetrievalRecord {
            qid: s.qid.clone(),
            retrieved: eism_only_select(s, gap),
        })
        .collect()
}

/// Retrieval metrics of `records` against the corpus gold annotations.
pub fn retrieval_report(corpus: &Corpus, records: &[RetrievalRecord]) -> Result<RetrievalReport> {
    let rows = records
        .iter()
        .map(|r| {
            let inst = corpus
                .instance(&r.qid)
                .ok_or_else(|| Error::InvalidArgument(format!("prediction for unknown qid {}", r.qid)))?;
            Ok((r.qid.as_str(), &r.retrieved[..], &inst.gold_ids[..]))
        })
        .collect::<Result<Vec<_>>>()?;
    RetrievalReport::from_predictions(rows)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub qid: String,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provider: Option<Provider>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::file(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
