//! Iterative evidence retrieval: a pair scorer over `question [SEP] selected... [SEP]
//! candidate` and the greedy chain builder that stops when `[STOP]` scores highest.
//!
//! The scorer is a one-hidden-layer network,
//! `p = σ(out · tanh(Hᵀx + b) + c)`, where `x` concatenates signed hashed n-grams of the
//! composed string with a handful of segment-interaction features (token overlap of the
//! candidate with the question and with the selected evidence, weighted by inverse
//! document frequency). The interaction block stands in for the cross-segment attention
//! of a full cross-encoder; without it a bag of hashed n-grams cannot tell which segment
//! a token came from.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use twox_hash::XxHash64;

use crate::corpus::{Corpus, QaInstance, STOP_ID};
use crate::embedder::{tokenize, FeatureHasher};
use crate::modelfile::ModelFile;
use crate::nscl::{LossRecord, TrainConfig};
use crate::optim::AdamW;
use crate::screener::ScreenResult;
use crate::tensor::{dot, Matrix, SparseVec};
use crate::{Error, Result};

pub const SEP: &str = " [SEP] ";
const PROB_CLAMP: f64 = 1e-7;
const IDF_SEED: u64 = 0x9e37_79b9_7f4a_7c15;

/// Number of dense interaction features appended after the hashed block.
pub const N_INTERACTION: usize = 11;

/// `question [SEP] r1 [SEP] ... [SEP] candidate`.
pub fn compose_input(question: &str, selected_surfaces: &[impl AsRef<str>], candidate_surface: &str) -> String {
    let mut out = String::from(question);
    for s in selected_surfaces {
        out.push_str(SEP);
        out.push_str(s.as_ref());
    }
    out.push_str(SEP);
    out.push_str(candidate_surface);
    out
}

/// Hashed document frequencies of unigrams over a reference collection.
#[derive(Debug, Clone, PartialEq)]
pub struct IdfTable {
    df: Vec<f64>,
    n_docs: f64,
}

impl IdfTable {
    pub fn empty(dim: usize) -> Self {
        IdfTable {
            df: vec![0.0; dim.max(1)],
            n_docs: 0.0,
        }
    }

    pub fn from_texts<'a>(dim: usize, texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut table = IdfTable::empty(dim);
        for text in texts {
            let uniq: HashSet<usize> = tokenize(text).iter().map(|t| table.bucket(t)).collect();
            for b in uniq {
                table.df[b] += 1.0;
            }
            table.n_docs += 1.0;
        }
        table
    }

    fn bucket(&self, token: &str) -> usize {
        (XxHash64::oneshot(IDF_SEED, token.as_bytes()) % self.df.len() as u64) as usize
    }

    pub fn dim(&self) -> usize {
        self.df.len()
    }

    /// `ln((N+1)/(df+1)) / ln(N+1)`: 1 for unseen tokens, 0 for tokens in every document.
    pub fn normalized(&self, token: &str) -> f64 {
        let denom = (self.n_docs + 1.0).ln();
        if denom <= 0.0 {
            return 1.0;
        }
        ((self.n_docs + 1.0) / (self.df[self.bucket(token)] + 1.0)).ln() / denom
    }
}

fn max_idf<'a>(idf: &IdfTable, tokens: impl Iterator<Item = &'a String>) -> f64 {
    tokens.map(|t| idf.normalized(t)).fold(0.0, f64::max)
}

/// Segment-interaction features of a composed input.
pub fn interaction_features(idf: &IdfTable, composed: &str) -> [f64; N_INTERACTION] {
    let segments: Vec<&str> = composed.split(SEP).collect();
    let question: HashSet<String> = tokenize(segments[0]).into_iter().collect();
    let (selected, candidate) = if segments.len() > 1 {
        (&segments[1..segments.len() - 1], segments[segments.len() - 1])
    } else {
        (&segments[..0], "")
    };
    let is_stop = candidate == STOP_ID;
    let cand: HashSet<String> = if is_stop {
        HashSet::new()
    } else {
        tokenize(candidate).into_iter().collect()
    };
    let selected_sets: Vec<HashSet<String>> = selected
        .iter()
        .map(|s| tokenize(s).into_iter().collect())
        .collect();
    let covered: HashSet<&String> = question
        .iter()
        .filter(|t| selected_sets.iter().any(|s| s.contains(*t)))
        .collect();

    let q_len = question.len().max(1) as f64;
    let c_len = cand.len().max(1) as f64;
    let q_hits: Vec<&String> = cand.iter().filter(|t| question.contains(*t)).collect();
    let q_new = q_hits.iter().filter(|t| !covered.contains(**t)).count();
    let empty = HashSet::new();
    let last = selected_sets.last().unwrap_or(&empty);
    let last_hits: Vec<&String> = cand.iter().filter(|t| last.contains(*t)).collect();
    let any_hits = cand.iter().filter(|t| selected_sets.iter().any(|s| s.contains(*t)));

    let n_sel = selected.len();
    [
        is_stop as u8 as f64,
        (n_sel == 0) as u8 as f64,
        (n_sel == 1) as u8 as f64,
        (n_sel >= 2) as u8 as f64,
        q_hits.len() as f64 / q_len,
        max_idf(idf, q_hits.iter().copied()),
        q_new as f64 / q_len,
        max_idf(idf, last_hits.iter().copied()),
        last_hits.len() as f64 / c_len,
        max_idf(idf, any_hits),
        (question.len() - covered.len()) as f64 / q_len,
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScorerConfig {
    pub dim: usize,
    pub ngram_orders: Vec<usize>,
    pub hash_seed: u64,
    pub hidden: usize,
    pub idf_dim: usize,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig {
            dim: 4096,
            ngram_orders: vec![1, 2],
            hash_seed: 0xface,
            hidden: 64,
            idf_dim: 1 << 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairScorer {
    pub hasher: FeatureHasher,
    pub idf: IdfTable,
    /// `(dim + N_INTERACTION) × h`.
    pub hidden: Matrix,
    pub hidden_bias: Vec<f64>,
    pub out: Vec<f64>,
    pub out_bias: f64,
}

#[derive(Debug, Clone)]
pub struct ScorerGrads {
    pub hidden: Matrix,
    pub hidden_bias: Vec<f64>,
    pub out: Vec<f64>,
    pub out_bias: f64,
}

impl ScorerGrads {
    fn zeros_like(s: &PairScorer) -> Self {
        ScorerGrads {
            hidden: Matrix::zeros(s.hidden.rows(), s.hidden.cols()),
            hidden_bias: vec![0.0; s.hidden_bias.len()],
            out: vec![0.0; s.out.len()],
            out_bias: 0.0,
        }
    }

    fn scale(&mut self, f: f64) {
        self.hidden.scale(f);
        self.hidden_bias.iter_mut().for_each(|x| *x *= f);
        self.out.iter_mut().for_each(|x| *x *= f);
        self.out_bias *= f;
    }

    fn is_finite(&self) -> bool {
        self.hidden.is_finite()
            && self.hidden_bias.iter().chain(&self.out).all(|x| x.is_finite())
            && self.out_bias.is_finite()
    }
}

struct PairForward {
    activations: Vec<f64>,
    prob: f64,
}

impl PairScorer {
    pub fn init(cfg: &ScorerConfig, idf: IdfTable, seed: u64) -> Result<Self> {
        let hasher = FeatureHasher::new(cfg.dim, cfg.ngram_orders.clone(), cfg.hash_seed)?;
        if cfg.hidden == 0 {
            return Err(Error::InvalidArgument("hidden width must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hidden = Matrix::random_normal(cfg.dim + N_INTERACTION, cfg.hidden, 0.05, &mut rng);
        let out = Matrix::random_normal(1, cfg.hidden, 1.0 / (cfg.hidden as f64).sqrt(), &mut rng);
        Ok(PairScorer {
            hasher,
            idf,
            hidden,
            hidden_bias: vec![0.0; cfg.hidden],
            out: out.as_slice().to_vec(),
            out_bias: 0.0,
        })
    }

    /// Scorer with every parameter zero: scores 0.5 on any input.
    pub fn zeros(hasher: FeatureHasher, hidden: usize) -> Self {
        let idf = IdfTable::empty(1);
        PairScorer {
            hidden: Matrix::zeros(hasher.dim + N_INTERACTION, hidden),
            hasher,
            idf,
            hidden_bias: vec![0.0; hidden],
            out: vec![0.0; hidden],
            out_bias: 0.0,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hasher.dim + N_INTERACTION
    }

    /// Hashed n-grams of the whole composed string followed by interaction features.
    pub fn featurize(&self, composed: &str) -> SparseVec {
        let mut entries = Vec::new();
        self.hasher.push_ngrams(&tokenize(composed), &mut entries);
        let base = self.hasher.dim;
        entries.extend(
            interaction_features(&self.idf, composed)
                .into_iter()
                .enumerate()
                .map(|(i, v)| (base + i, v)),
        );
        SparseVec::from_entries(self.input_dim(), entries)
    }

    fn forward(&self, x: &SparseVec) -> PairForward {
        let mut z = self.hidden.transpose_mul_sparse(x);
        for (zv, b) in z.iter_mut().zip(&self.hidden_bias) {
            *zv = (*zv + b).tanh();
        }
        let logit = dot(&self.out, &z) + self.out_bias;
        PairForward {
            activations: z,
            prob: sigmoid(logit),
        }
    }

    pub fn score_features(&self, x: &SparseVec) -> f64 {
        self.forward(x).prob
    }

    /// Matching probability of a composed input, in (0, 1).
    pub fn score_pair(&self, composed: &str) -> f64 {
        self.score_features(&self.featurize(composed))
    }

    /// Accumulates `weight · ∂p_logit` terms: `dlogit` is ∂loss/∂logit for this input.
    fn backward(&self, x: &SparseVec, fwd: &PairForward, dlogit: f64, grads: &mut ScorerGrads) {
        grads.out_bias += dlogit;
        let mut dz = vec![0.0; fwd.activations.len()];
        for ((g_out, dzv), (a, w)) in grads
            .out
            .iter_mut()
            .zip(dz.iter_mut())
            .zip(fwd.activations.iter().zip(&self.out))
        {
            *g_out += dlogit * a;
            *dzv = dlogit * w * (1.0 - a * a);
        }
        for (gb, d) in grads.hidden_bias.iter_mut().zip(&dz) {
            *gb += d;
        }
        grads.hidden.add_outer_sparse(x, &dz);
    }

    pub fn is_finite(&self) -> bool {
        self.hidden.is_finite()
            && self.hidden_bias.iter().chain(&self.out).all(|x| x.is_finite())
            && self.out_bias.is_finite()
    }

    pub fn to_model_file(&self) -> ModelFile {
        let mut f = ModelFile::new(self.hasher.clone());
        f.push_matrix("hidden", &self.hidden);
        f.push_vector("hidden_bias", &self.hidden_bias);
        f.push_vector("out", &self.out);
        f.push_vector("out_bias", &[self.out_bias]);
        f.push_vector("idf.df", &self.idf.df);
        f.push_vector("idf.n_docs", &[self.idf.n_docs]);
        f
    }

    pub fn from_model_file(f: &ModelFile) -> Result<Self> {
        let hidden = f.matrix("hidden")?;
        if hidden.rows() != f.hasher.dim + N_INTERACTION {
            return Err(Error::ModelFormat("scorer hidden matrix disagrees with hasher dimension".into()));
        }
        let hidden_bias = f.vector("hidden_bias")?;
        let out = f.vector("out")?;
        if hidden_bias.len() != hidden.cols() || out.len() != hidden.cols() {
            return Err(Error::ModelFormat("scorer layer widths disagree".into()));
        }
        Ok(PairScorer {
            idf: IdfTable {
                df: f.vector("idf.df")?,
                n_docs: f.scalar("idf.n_docs")?,
            },
            hasher: f.hasher.clone(),
            hidden,
            hidden_bias,
            out,
            out_bias: f.scalar("out_bias")?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_model_file().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        PairScorer::from_model_file(&ModelFile::load(path)?)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Document-frequency table over the pool sources of `instances`.
pub fn idf_from_instances(corpus: &Corpus, instances: &[&QaInstance], dim: usize) -> IdfTable {
    let mut seen = HashSet::new();
    let surfaces: Vec<String> = instances
        .iter()
        .flat_map(|inst| inst.pool_ids())
        .filter(|id| seen.insert(*id))
        .filter_map(|id| corpus.surface_of(id))
        .collect();
    IdfTable::from_texts(dim, surfaces.iter().map(String::as_str))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    /// `−Σ log p(e⁺) − Σ log(1 − p(e⁻))`.
    #[default]
    Bce,
    /// `−(Σ log p(e⁺) − Σ log p(e⁻))`; unbounded below, kept for comparison.
    Literal,
}

/// ∂loss/∂logit of one term, with `p` clamped to `[1e-7, 1 − 1e-7]`.
fn term(prob: f64, positive: bool, variant: LossVariant) -> (f64, f64) {
    let p = prob.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let clamped = p != prob;
    let (loss, dlogit) = match (positive, variant) {
        (true, _) => (-p.ln(), -(1.0 - p)),
        (false, LossVariant::Bce) => (-(1.0 - p).ln(), p),
        (false, LossVariant::Literal) => (p.ln(), 1.0 - p),
    };
    (loss, if clamped { 0.0 } else { dlogit })
}

/// Labeled, featurized inputs of one training state.
struct LabeledInputs {
    inputs: Vec<(SparseVec, bool)>,
}

impl LabeledInputs {
    fn build(scorer: &PairScorer, question: &str, selected: &[String], positives: &[String], negatives: &[String]) -> Self {
        let mk = |c: &String, label| (scorer.featurize(&compose_input(question, selected, c)), label);
        LabeledInputs {
            inputs: positives
                .iter()
                .map(|c| mk(c, true))
                .chain(negatives.iter().map(|c| mk(c, false)))
                .collect(),
        }
    }

    fn loss(&self, scorer: &PairScorer, variant: LossVariant, grads: Option<&mut ScorerGrads>) -> f64 {
        let mut total = 0.0;
        match grads {
            Some(g) => {
                for (x, label) in &self.inputs {
                    let fwd = scorer.forward(x);
                    let (l, dlogit) = term(fwd.prob, *label, variant);
                    total += l;
                    if dlogit != 0.0 {
                        scorer.backward(x, &fwd, dlogit, g);
                    }
                }
            }
            None => {
                for (x, label) in &self.inputs {
                    total += term(scorer.score_features(x), *label, variant).0;
                }
            }
        }
        total
    }
}

/// Binary loss of one state: remaining gold surfaces are positives, `negatives` negatives.
pub fn ier_loss(
    scorer: &PairScorer,
    question: &str,
    selected_surfaces: &[String],
    gold_remaining: &[String],
    negatives: &[String],
    variant: LossVariant,
) -> Result<f64> {
    Ok(ier_loss_and_grads(scorer, question, selected_surfaces, gold_remaining, negatives, variant)?.0)
}

pub fn ier_loss_and_grads(
    scorer: &PairScorer,
    question: &str,
    selected_surfaces: &[String],
    gold_remaining: &[String],
    negatives: &[String],
    variant: LossVariant,
) -> Result<(f64, ScorerGrads)> {
    if gold_remaining.is_empty() && negatives.is_empty() {
        return Err(Error::InvalidArgument("a state needs at least one positive or negative".into()));
    }
    let inputs = LabeledInputs::build(scorer, question, selected_surfaces, gold_remaining, negatives);
    let mut grads = ScorerGrads::zeros_like(scorer);
    let loss = inputs.loss(scorer, variant, Some(&mut grads));
    Ok((loss, grads))
}

/// One teacher-forced training state, as surfaces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingState {
    pub question: String,
    pub selected: Vec<String>,
    pub positives: Vec<String>,
    pub negatives: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StateOptions {
    /// Add `[STOP]` as a negative while gold evidence remains.
    pub stop_as_negative: bool,
    /// Enumerate prefixes of every gold ordering (only for up to 3 gold sources).
    pub all_prefix_permutations: bool,
}

impl Default for StateOptions {
    fn default() -> Self {
        StateOptions {
            stop_as_negative: true,
            all_prefix_permutations: false,
        }
    }
}

fn permutations(items: &[String]) -> Vec<Vec<String>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head.clone());
            out.push(tail);
        }
    }
    out
}

/// Teacher-forced states: for each prefix `gold[..j]`, the rest of the gold are
/// positives; once all gold is selected `[STOP]` is the positive. Negatives are the
/// screened non-gold sources.
pub fn training_states(
    inst: &QaInstance,
    corpus: &Corpus,
    screen: &ScreenResult,
    opts: StateOptions,
) -> Result<Vec<TrainingState>> {
    let surface = |id: &str| {
        corpus.surface_of(id).ok_or_else(|| Error::DanglingId {
            qid: inst.qid.clone(),
            id: id.to_string(),
        })
    };
    let gold: HashSet<&str> = inst.gold_ids.iter().map(String::as_str).collect();
    let negatives: Vec<String> = screen
        .ids()
        .filter(|id| !gold.contains(id) && *id != STOP_ID)
        .map(surface)
        .collect::<Result<_>>()?;
    let orders = if opts.all_prefix_permutations && inst.gold_ids.len() <= 3 {
        permutations(&inst.gold_ids)
    } else {
        vec![inst.gold_ids.clone()]
    };
    let mut seen_prefixes: HashSet<Vec<String>> = HashSet::new();
    let mut states = Vec::new();
    for order in orders {
        for j in 0..=order.len() {
            let prefix = order[..j].to_vec();
            if !seen_prefixes.insert(prefix.clone()) {
                continue;
            }
            let selected = prefix.iter().map(|id| surface(id)).collect::<Result<Vec<_>>>()?;
            let mut negs = negatives.clone();
            let positives = if j == order.len() {
                vec![STOP_ID.to_string()]
            } else {
                if opts.stop_as_negative {
                    negs.push(STOP_ID.to_string());
                }
                order[j..].iter().map(|id| surface(id)).collect::<Result<Vec<_>>>()?
            };
            states.push(TrainingState {
                question: inst.question.clone(),
                selected,
                positives,
                negatives: negs,
            });
        }
    }
    Ok(states)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RefinerTrainOptions {
    pub states: StateOptions,
    pub loss: LossVariant,
}

#[derive(Debug, Clone)]
pub struct RefinerTraining {
    pub scorer: PairScorer,
    pub history: Vec<LossRecord>,
}

/// Trains the pair scorer on teacher-forced states. A step covers `batch_size`
/// instances; its loss is the mean state loss.
pub fn train_refiner(
    corpus: &Corpus,
    instances: &[&QaInstance],
    screens: &HashMap<String, ScreenResult>,
    init: PairScorer,
    cfg: &TrainConfig,
    opts: RefinerTrainOptions,
) -> Result<RefinerTraining> {
    cfg.validate()?;
    if instances.len() < cfg.batch_size {
        return Err(Error::InsufficientInstances {
            needed: cfg.batch_size,
            available: instances.len(),
        });
    }
    let mut scorer = init;
    let per_instance: Vec<Vec<LabeledInputs>> = instances
        .iter()
        .map(|inst| {
            let screen = screens
                .get(&inst.qid)
                .ok_or_else(|| Error::InvalidArgument(format!("no screen result for \"{}\"", inst.qid)))?;
            Ok(training_states(inst, corpus, screen, opts.states)?
                .iter()
                .map(|s| LabeledInputs::build(&scorer, &s.question, &s.selected, &s.positives, &s.negatives))
                .collect())
        })
        .collect::<Result<_>>()?;

    let steps_per_epoch = instances.len() / cfg.batch_size;
    let schedule = cfg.schedule(cfg.epochs * steps_per_epoch);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let adam = cfg.adamw();
    let mut opt_hidden = AdamW::new(scorer.hidden.as_slice().len(), adam, true);
    let mut opt_hidden_bias = AdamW::new(scorer.hidden_bias.len(), adam, false);
    let mut opt_out = AdamW::new(scorer.out.len(), adam, true);
    let mut opt_out_bias = AdamW::new(1, adam, false);
    let mut order: Vec<usize> = (0..instances.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs * steps_per_epoch);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks_exact(cfg.batch_size) {
            let step = history.len();
            let mut grads = ScorerGrads::zeros_like(&scorer);
            let mut loss = 0.0;
            let mut n_states = 0usize;
            for &i in chunk {
                for state in &per_instance[i] {
                    loss += state.loss(&scorer, opts.loss, Some(&mut grads));
                    n_states += 1;
                }
            }
            let norm = 1.0 / n_states.max(1) as f64;
            loss *= norm;
            grads.scale(norm);
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            let lr = schedule.lr_at(step);
            opt_hidden.step(scorer.hidden.as_mut_slice(), grads.hidden.as_slice(), lr);
            opt_hidden_bias.step(&mut scorer.hidden_bias, &grads.hidden_bias, lr);
            opt_out.step(&mut scorer.out, &grads.out, lr);
            let mut ob = [scorer.out_bias];
            opt_out_bias.step(&mut ob, &[grads.out_bias], lr);
            scorer.out_bias = ob[0];
            history.push(LossRecord {
                step,
                epoch,
                loss,
                learning_rate: lr,
            });
        }
    }
    Ok(RefinerTraining { scorer, history })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub m_max: usize,
    pub score_floor: Option<f64>,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            m_max: 4,
            score_floor: None,
        }
    }
}

/// Working state of the greedy loop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetrievalState {
    pub question: String,
    pub selected: Vec<String>,
    /// Remaining candidates in ascending id order, `[STOP]` included until termination.
    pub pool: Vec<String>,
    pub step: usize,
}

impl RetrievalState {
    pub fn new(question: impl Into<String>, candidates: impl IntoIterator<Item = String>) -> Self {
        let mut pool: Vec<String> = candidates.into_iter().filter(|id| id != STOP_ID).collect();
        pool.push(STOP_ID.to_string());
        pool.sort();
        pool.dedup();
        RetrievalState {
            question: question.into(),
            selected: Vec::new(),
            pool,
            step: 0,
        }
    }

    /// Moves `id` from the pool to the selection.
    pub fn select(&mut self, id: &str) {
        let pos = self.pool.iter().position(|p| p == id).expect("selected id is in the pool");
        let id = self.pool.remove(pos);
        self.selected.push(id);
        self.step += 1;
    }

    pub fn terminate(&mut self) {
        self.pool.retain(|p| p != STOP_ID);
    }
}

/// Greedy chain selection: repeatedly score every remaining candidate given the current
/// selection and take the best (ties to the smaller id) until `[STOP]` wins, the chain
/// reaches `m_max`, or the best score falls below the floor.
pub fn greedy_select<F>(state: &mut RetrievalState, cfg: &RefineConfig, mut score: F)
where
    F: FnMut(&[String], &str) -> f64,
{
    while state.selected.len() < cfg.m_max {
        let mut best: Option<(&String, f64)> = None;
        for id in &state.pool {
            let s = score(&state.selected, id);
            // pool is sorted ascending, so strict > keeps the smallest id on ties
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((id, s));
            }
        }
        let Some((id, s)) = best else { break };
        if id == STOP_ID || cfg.score_floor.is_some_and(|floor| s < floor) {
            break;
        }
        let id = id.clone();
        state.select(&id);
    }
    state.terminate();
}

/// Builds the evidence chain for a question over its screened candidates.
pub fn refine(scorer: &PairScorer, question: &str, screened: &ScreenResult, corpus: &Corpus, cfg: &RefineConfig) -> Vec<String> {
    let surfaces: HashMap<&str, String> = screened
        .ids()
        .chain(std::iter::once(STOP_ID))
        .filter_map(|id| corpus.surface_of(id).map(|s| (id, s)))
        .collect();
    let mut state = RetrievalState::new(question, screened.ids().map(str::to_string).filter(|id| surfaces.contains_key(id.as_str())));
    greedy_select(&mut state, cfg, |selected, cand| {
        let sel: Vec<&str> = selected.iter().map(|id| surfaces[id.as_str()].as_str()).collect();
        scorer.score_pair(&compose_input(question, &sel, &surfaces[cand]))
    });
    state.selected
}

/// Rank (1-based) of the best-ranked remaining gold among all candidates of a state.
pub fn best_positive_rank(scorer: &PairScorer, state: &TrainingState) -> usize {
    let score = |c: &String| scorer.score_pair(&compose_input(&state.question, &state.selected, c));
    let best_pos = state.positives.iter().map(score).fold(f64::NEG_INFINITY, f64::max);
    1 + state.negatives.iter().filter(|c| score(c) >= best_pos).count()
}
