//! Sources, QA instances and JSONL ingestion.
//!
//! A corpus file holds one JSON record per line, tagged by `"kind"`:
//!
//! ```text
//! {"kind":"source","id":"i1","modality":"image","caption":"a red bridge","object_tags":["bridge"]}
//! {"kind":"instance","qid":"q1","question":"...","gold_ids":["i1"],"distractor_ids":["t9"],"answer":"..."}
//! ```
//!
//! Ingestion validates every invariant and injects the `[STOP]` sentinel, which never
//! appears in the file itself.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Reserved id of the termination sentinel.
pub const STOP_ID: &str = "[STOP]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Image,
    Table,
    Sentinel,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Image => "image",
            Modality::Table => "table",
            Modality::Sentinel => "sentinel",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Source {
    pub id: String,
    pub modality: Modality,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    /// Text body, or serialized table text (cells space-joined, rows joined by `" ; "`).
    /// Empty for images.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub body: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_tags: Option<Vec<String>>,
}

impl Source {
    pub fn text(id: impl Into<String>, title: Option<&str>, body: impl Into<String>) -> Self {
        Source {
            id: id.into(),
            modality: Modality::Text,
            title: title.map(str::to_string),
            body: body.into(),
            caption: None,
            object_tags: None,
        }
    }

    pub fn table(id: impl Into<String>, title: Option<&str>, body: impl Into<String>) -> Self {
        Source {
            modality: Modality::Table,
            ..Source::text(id, title, body)
        }
    }

    pub fn image(id: impl Into<String>, caption: impl Into<String>, tags: Option<Vec<String>>) -> Self {
        Source {
            id: id.into(),
            modality: Modality::Image,
            title: None,
            body: String::new(),
            caption: Some(caption.into()),
            object_tags: tags,
        }
    }

    pub fn stop() -> Self {
        Source {
            id: STOP_ID.to_string(),
            modality: Modality::Sentinel,
            title: None,
            body: String::new(),
            caption: None,
            object_tags: None,
        }
    }

    pub fn is_sentinel(&self) -> bool {
        self.modality == Modality::Sentinel
    }

    /// Canonical text rendering, with object tags included for images.
    pub fn text_surface(&self) -> String {
        self.text_surface_with(SurfaceOptions::default())
    }

    pub fn text_surface_with(&self, opts: SurfaceOptions) -> String {
        let parts: Vec<&str> = match self.modality {
            Modality::Sentinel => return String::new(),
            Modality::Text | Modality::Table => {
                vec![self.title.as_deref().unwrap_or(""), self.body.as_str()]
            }
            Modality::Image => {
                let mut parts = vec![self.caption.as_deref().unwrap_or("")];
                if opts.include_object_tags {
                    if let Some(tags) = &self.object_tags {
                        parts.extend(tags.iter().map(String::as_str));
                    }
                }
                parts
            }
        };
        join_nonempty(parts)
    }
}

fn join_nonempty<'a>(parts: impl IntoIterator<Item = &'a str>) -> String {
    let mut out = String::new();
    for part in parts.into_iter().map(str::trim).filter(|p| !p.is_empty()) {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(part);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurfaceOptions {
    pub include_object_tags: bool,
}

impl Default for SurfaceOptions {
    fn default() -> Self {
        SurfaceOptions {
            include_object_tags: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaInstance {
    pub qid: String,
    pub question: String,
    /// Gold sources in annotated reasoning order (file order).
    pub gold_ids: Vec<String>,
    pub distractor_ids: Vec<String>,
    pub answer: String,
}

impl QaInstance {
    /// Gold followed by distractor ids: the candidate pool of this question.
    pub fn pool_ids(&self) -> impl Iterator<Item = &str> {
        self.gold_ids
            .iter()
            .chain(self.distractor_ids.iter())
            .map(String::as_str)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Record {
    Source(Source),
    Instance(QaInstance),
}

/// Validated, immutable collection of sources and questions.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    sources: IndexMap<String, Source>,
    instances: Vec<QaInstance>,
    stop: Source,
    surface: SurfaceOptions,
}

impl Corpus {
    /// Validates sources and instances and adds the sentinel.
    pub fn new(sources: Vec<Source>, instances: Vec<QaInstance>) -> Result<Self> {
        let mut map = IndexMap::with_capacity(sources.len());
        for source in sources {
            validate_source(&source)?;
            if map.contains_key(&source.id) {
                return Err(Error::DuplicateId(source.id));
            }
            map.insert(source.id.clone(), source);
        }
        let mut qids = HashSet::new();
        for inst in &instances {
            validate_instance(inst, &map)?;
            if !qids.insert(inst.qid.as_str()) {
                return Err(Error::DuplicateId(inst.qid.clone()));
            }
        }
        Ok(Corpus {
            sources: map,
            instances,
            stop: Source::stop(),
            surface: SurfaceOptions::default(),
        })
    }

    pub fn with_surface_options(mut self, surface: SurfaceOptions) -> Self {
        self.surface = surface;
        self
    }

    pub fn surface_options(&self) -> SurfaceOptions {
        self.surface
    }

    /// Looks up a source; `[STOP]` resolves to the sentinel.
    pub fn get(&self, id: &str) -> Option<&Source> {
        if id == STOP_ID {
            Some(&self.stop)
        } else {
            self.sources.get(id)
        }
    }

    pub fn stop_source(&self) -> &Source {
        &self.stop
    }

    /// Surface form of a source under this corpus' surface options. The sentinel renders
    /// as `[STOP]` so that it can take part in composed refiner inputs.
    pub fn surface(&self, source: &Source) -> String {
        if source.is_sentinel() {
            STOP_ID.to_string()
        } else {
            source.text_surface_with(self.surface)
        }
    }

    pub fn surface_of(&self, id: &str) -> Option<String> {
        self.get(id).map(|s| self.surface(s))
    }

    pub fn sources(&self) -> impl Iterator<Item = &Source> {
        self.sources.values()
    }

    pub fn instances(&self) -> &[QaInstance] {
        &self.instances
    }

    pub fn instance(&self, qid: &str) -> Option<&QaInstance> {
        self.instances.iter().find(|i| i.qid == qid)
    }

    /// Candidate sources of an instance (gold and distractors, never the sentinel).
    pub fn pool(&self, inst: &QaInstance) -> Vec<&Source> {
        inst.pool_ids()
            .map(|id| &self.sources[id])
            .collect()
    }

    pub fn modality_counts(&self) -> BTreeMap<Modality, usize> {
        let mut counts = BTreeMap::new();
        for s in self.sources.values() {
            *counts.entry(s.modality).or_insert(0) += 1;
        }
        counts
    }

    pub fn parse_jsonl(text: &str) -> Result<Self> {
        let mut sources = Vec::new();
        let mut instances = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: Record = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?;
            match record {
                Record::Source(s) => sources.push(s),
                Record::Instance(i) => instances.push(i),
            }
        }
        Corpus::new(sources, instances)
    }

    pub fn ingest(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Corpus::parse_jsonl(&text)
    }

    /// Canonical JSONL: sources then instances, each in insertion order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in self.sources.values() {
            out.push_str(&serde_json::to_string(&Record::Source(s.clone())).expect("source serializes"));
            out.push('\n');
        }
        for i in &self.instances {
            out.push_str(&serde_json::to_string(&Record::Instance(i.clone())).expect("instance serializes"));
            out.push('\n');
        }
        out
    }

    pub fn export(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_jsonl()).map_err(|e| Error::file(path, e))
    }
}

fn validate_source(s: &Source) -> Result<()> {
    if s.id.is_empty() {
        return Err(Error::InvalidCorpus("source with empty id".into()));
    }
    if s.id == STOP_ID || s.modality == Modality::Sentinel {
        return Err(Error::InvalidCorpus(format!(
            "\"{}\": the sentinel is reserved and cannot appear in a corpus file",
            s.id
        )));
    }
    if s.modality == Modality::Image && s.caption.is_none() {
        return Err(Error::ImageWithoutCaption(s.id.clone()));
    }
    Ok(())
}

fn validate_instance(inst: &QaInstance, sources: &IndexMap<String, Source>) -> Result<()> {
    if inst.qid.is_empty() {
        return Err(Error::InvalidCorpus("instance with empty qid".into()));
    }
    if inst.gold_ids.is_empty() {
        return Err(Error::InvalidCorpus(format!("instance \"{}\" has no gold ids", inst.qid)));
    }
    let gold: HashSet<&str> = inst.gold_ids.iter().map(String::as_str).collect();
    if gold.len() != inst.gold_ids.len() {
        return Err(Error::InvalidCorpus(format!("instance \"{}\" repeats a gold id", inst.qid)));
    }
    let mut seen = HashSet::new();
    for d in &inst.distractor_ids {
        if gold.contains(d.as_str()) {
            return Err(Error::InvalidCorpus(format!(
                "instance \"{}\": \"{}\" is both gold and distractor",
                inst.qid, d
            )));
        }
        if !seen.insert(d.as_str()) {
            return Err(Error::InvalidCorpus(format!(
                "instance \"{}\" repeats distractor \"{}\"",
                inst.qid, d
            )));
        }
    }
    for id in inst.pool_ids() {
        if !sources.contains_key(id) {
            return Err(Error::DanglingId {
                qid: inst.qid.clone(),
                id: id.to_string(),
            });
        }
    }
    Ok(())
}
