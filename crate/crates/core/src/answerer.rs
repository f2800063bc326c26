//! Answer generation from retrieved evidence presented as dialogue history.

use std::collections::HashSet;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::{Modality, Source, SurfaceOptions};
use crate::embedder::tokenize;
use crate::{Error, Result};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
pub const MAX_ANSWER_TOKENS: usize = 32;
const FILLER: &str = "Noted.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueTurn {
    pub role: Role,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerRequest {
    pub qid: String,
    pub question: String,
    pub history: Vec<DialogueTurn>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provider {
    Extractive,
    External,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerResult {
    pub qid: String,
    pub answer: String,
    pub provider: Provider,
}

/// One user turn per evidence in retrieval order, each acknowledged by a filler assistant
/// turn, then the question.
pub fn assemble_dialogue(qid: &str, question: &str, retrieved: &[&Source], surface: SurfaceOptions) -> AnswerRequest {
    let mut history = Vec::with_capacity(2 * retrieved.len() + 1);
    for (i, s) in retrieved.iter().enumerate() {
        history.push(DialogueTurn {
            role: Role::User,
            text: format!("Evidence {} ({}): {}", i + 1, s.modality.as_str(), s.text_surface_with(surface)),
            image_ref: (s.modality == Modality::Image).then(|| s.id.clone()),
        });
        history.push(DialogueTurn {
            role: Role::Assistant,
            text: FILLER.to_string(),
            image_ref: None,
        });
    }
    history.push(DialogueTurn {
        role: Role::User,
        text: format!("Question: {question}"),
        image_ref: None,
    });
    AnswerRequest {
        qid: qid.to_string(),
        question: question.to_string(),
        history,
    }
}

/// Picks the evidence sentence with the best question overlap, normalized by sentence length.
pub fn extractive_answer(request: &AnswerRequest, retrieved: &[&Source], surface: SurfaceOptions) -> AnswerResult {
    let question: HashSet<String> = tokenize(&request.question).into_iter().collect();
    let mut best: Option<(&str, f64)> = None;
    let surfaces: Vec<String> = retrieved
        .iter()
        .filter(|s| !s.is_sentinel())
        .map(|s| s.text_surface_with(surface))
        .collect();
    for text in &surfaces {
        for sentence in text.split(['.', '!', '?']).map(str::trim).filter(|s| !s.is_empty()) {
            let tokens = tokenize(sentence);
            let overlap = tokens.iter().collect::<HashSet<_>>().into_iter().filter(|t| question.contains(*t)).count();
            let score = overlap as f64 / (1.0 + tokens.len() as f64);
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((sentence, score));
            }
        }
    }
    let answer = best
        .map(|(s, _)| s.split_whitespace().take(MAX_ANSWER_TOKENS).collect::<Vec<_>>().join(" "))
        .unwrap_or_default();
    AnswerResult {
        qid: request.qid.clone(),
        answer,
        provider: Provider::Extractive,
    }
}

#[derive(Deserialize)]
struct GeneratorResponse {
    answer: String,
}

/// Sends the request to an external generator once. Failures are reported, never retried.
pub fn external_answer(request: &AnswerRequest, endpoint: &str, timeout: Duration) -> Result<AnswerResult> {
    let client = reqwest::blocking::Client::builder()
        .timeout(timeout)
        .build()
        .map_err(|e| Error::GeneratorTransport(e.to_string()))?;
    let transport = |e: reqwest::Error| {
        if e.is_timeout() || e.is_connect() {
            Error::GeneratorTimeout
        } else {
            Error::GeneratorTransport(e.to_string())
        }
    };
    let response = client.post(endpoint).json(request).send().map_err(transport)?;
    let status = response.status();
    if !status.is_success() {
        return Err(Error::GeneratorStatus(status.as_u16()));
    }
    let body = response.bytes().map_err(transport)?;
    let parsed: GeneratorResponse = serde_json::from_slice(&body).map_err(|_| Error::BadGeneratorPayload)?;
    Ok(AnswerResult {
        qid: request.qid.clone(),
        answer: parsed.answer,
        provider: Provider::External,
    })
}
