use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::Context;
use evirefine::answerer::{assemble_dialogue, external_answer, extractive_answer, Provider};
use evirefine::corpus::Source;
use evirefine::evalkit::{gen_synthetic, NormalizeOptions, QaReport, RetrievalReport, SynthConfig};
use evirefine::nscl::{train_screener, write_loss_csv};
use evirefine::pipeline::{
    eism_only_all, read_jsonl, retrieval_report, retrieve_all, screen_all, split_instances, write_jsonl, AnswerRecord,
    RetrievalRecord, Split,
};
use evirefine::refiner::{idf_from_instances, train_refiner};
use evirefine::{Corpus, PairScorer, ScreenResult, Screener};
use rayon::prelude::*;
use serde::Deserialize;

use crate::artifacts::Artifacts;
use crate::config::{ProviderKind, RunConfig};
use crate::{usage, Cli, Command, Stage, SynthArgs};

struct Ctx {
    cfg: RunConfig,
    out_dir: PathBuf,
    eism_only: bool,
}

impl Ctx {
    fn corpus(&self) -> anyhow::Result<Corpus> {
        Ok(Corpus::ingest(&self.cfg.corpus_path)?)
    }

    fn artifacts(&self) -> anyhow::Result<Artifacts> {
        if !self.cfg.corpus_path.exists() {
            return Err(usage(format!(
                "corpus {} not found; set corpus_path in the config",
                self.cfg.corpus_path.display()
            )));
        }
        Artifacts::new(self.out_dir.clone(), &self.cfg.corpus_path, &self.cfg)
    }

    fn load_screener(&self, art: &Artifacts) -> anyhow::Result<Screener> {
        let path = art.screener_model();
        if !path.exists() {
            return Err(usage(format!(
                "no screener trained for this corpus and config in {} (expected {}); run `evirefine train screener` first",
                self.out_dir.display(),
                path.display()
            )));
        }
        Ok(Screener::load(&path)?)
    }

    fn load_refiner(&self, art: &Artifacts) -> anyhow::Result<PairScorer> {
        let path = art.refiner_model();
        if !path.exists() {
            return Err(usage(format!(
                "no refiner trained for this corpus and config (expected {}); run `evirefine train refiner` first, or pass --eism-only",
                path.display()
            )));
        }
        Ok(PairScorer::load(&path)?)
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(usage("--jobs must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global()?;
    }
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out_dir = cli.out_dir.clone().unwrap_or_else(|| cfg.model_dir.clone());
    let ctx = Ctx {
        cfg,
        out_dir,
        eism_only: cli.eism_only,
    };
    match cli.command {
        Command::Ingest { input, out } => ingest(&input, out.as_deref()),
        Command::GenSynth(args) => gen_synth(&args, cli.seed),
        Command::Train { stage: Stage::Screener } => train_screener_cmd(&ctx),
        Command::Train { stage: Stage::Refiner } => train_refiner_cmd(&ctx),
        Command::Screen(s) => screen_cmd(&ctx, s.split.into()).map(|_| ()),
        Command::Retrieve(s) => retrieve_cmd(&ctx, s.split.into()).map(|_| ()),
        Command::Answer(s) => answer_cmd(&ctx, s.split.into()),
        Command::Eval { predictions, corpus } => eval_cmd(&ctx, &predictions, corpus.as_deref()),
    }
}

fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn ingest(input: &Path, out: Option<&Path>) -> anyhow::Result<()> {
    let corpus = Corpus::ingest(input)?;
    println!("sources: {}", corpus.sources().count());
    for (modality, n) in corpus.modality_counts() {
        println!("  {:<8} {n}", modality.as_str());
    }
    let instances = corpus.instances();
    let multi = instances.iter().filter(|i| i.gold_ids.len() > 1).count();
    println!("instances: {} ({} single-gold, {} multi-gold)", instances.len(), instances.len() - multi, multi);
    if let Some(out) = out {
        corpus.export(out)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn gen_synth(args: &SynthArgs, seed: Option<u64>) -> anyhow::Result<()> {
    let cfg = SynthConfig {
        n_instances: args.n_instances,
        pool_size_per_q: args.pool_size,
        bridge_fraction: args.bridge_fraction,
        vocab_size: args.vocab_size,
        seed: seed.unwrap_or(SynthConfig::default().seed),
    };
    let corpus = gen_synthetic(&cfg)?;
    if let Some(parent) = args.out.parent() {
        ensure_dir(parent)?;
    }
    corpus.export(&args.out)?;
    println!(
        "wrote {} ({} instances, {} sources)",
        args.out.display(),
        corpus.instances().len(),
        corpus.sources().count()
    );
    Ok(())
}

fn train_screener_cmd(ctx: &Ctx) -> anyhow::Result<()> {
    let art = ctx.artifacts()?;
    let corpus = ctx.corpus()?;
    let train = split_instances(&corpus, Split::Train);
    let tcfg = ctx.cfg.screener_train();
    let init = Screener::init(&ctx.cfg.encoder, ctx.cfg.seed)?;
    let run = train_screener(&corpus, &train, init, &tcfg)?;
    ensure_dir(&art.dir)?;
    run.screener.save(art.screener_model())?;
    write_loss_csv(&run.history, art.screener_loss())?;
    fs::write(art.screener_config(), ctx.cfg.to_toml()?)?;
    report_training("screener", &run.history);
    println!("wrote {}", art.screener_model().display());
    Ok(())
}

fn report_training(stage: &str, history: &[evirefine::nscl::LossRecord]) {
    if let (Some(first), Some(last)) = (history.first(), history.last()) {
        println!("{stage}: {} steps, loss {:.4} -> {:.4}", history.len(), first.loss, last.loss);
    }
}

fn train_refiner_cmd(ctx: &Ctx) -> anyhow::Result<()> {
    let art = ctx.artifacts()?;
    let cache = art.screens(Split::Train.as_str());
    if !cache.exists() {
        return Err(usage(format!(
            "refiner training needs screened training pools (expected {}); run `evirefine train screener` and then `evirefine screen --split train` first",
            cache.display()
        )));
    }
    let corpus = ctx.corpus()?;
    let train = split_instances(&corpus, Split::Train);
    let screens: HashMap<String, ScreenResult> =
        read_jsonl::<ScreenResult>(&cache)?.into_iter().map(|s| (s.qid.clone(), s)).collect();
    let idf = idf_from_instances(&corpus, &train, ctx.cfg.scorer.idf_dim);
    let init = PairScorer::init(&ctx.cfg.scorer, idf, ctx.cfg.seed)?;
    let run = train_refiner(&corpus, &train, &screens, init, &ctx.cfg.refiner_train(), ctx.cfg.refiner_options)?;
    ensure_dir(&art.dir)?;
    run.scorer.save(art.refiner_model())?;
    write_loss_csv(&run.history, art.refiner_loss())?;
    fs::write(art.refiner_config(), ctx.cfg.to_toml()?)?;
    report_training("refiner", &run.history);
    println!("wrote {}", art.refiner_model().display());
    Ok(())
}

/// Screens a split, reusing the cache when present.
fn screens_for(ctx: &Ctx, art: &Artifacts, corpus: &Corpus, split: Split) -> anyhow::Result<Vec<ScreenResult>> {
    let path = art.screens(split.as_str());
    if path.exists() {
        return Ok(read_jsonl(&path)?);
    }
    let screener = ctx.load_screener(art)?;
    let mut screens = screen_all(&screener, corpus, &split_instances(corpus, split), ctx.cfg.top_k)?;
    screens.sort_by(|a, b| a.qid.cmp(&b.qid));
    ensure_dir(&art.dir)?;
    write_jsonl(&path, &screens)?;
    Ok(screens)
}

fn screen_cmd(ctx: &Ctx, split: Split) -> anyhow::Result<Vec<ScreenResult>> {
    let art = ctx.artifacts()?;
    let corpus = ctx.corpus()?;
    let screens = screens_for(ctx, &art, &corpus, split)?;
    println!("screened {} questions; wrote {}", screens.len(), art.screens(split.as_str()).display());
    Ok(screens)
}

fn retrieval_for(ctx: &Ctx, art: &Artifacts, corpus: &Corpus, split: Split) -> anyhow::Result<Vec<RetrievalRecord>> {
    let screens = screens_for(ctx, art, corpus, split)?;
    let mut records = if ctx.eism_only {
        eism_only_all(&screens, ctx.cfg.eism_gap)
    } else {
        let scorer = ctx.load_refiner(art)?;
        retrieve_all(&scorer, corpus, &screens, &ctx.cfg.refine)?
    };
    records.sort_by(|a, b| a.qid.cmp(&b.qid));
    let report = retrieval_report(corpus, &records)?;
    write_jsonl(art.retrieval(split.as_str(), ctx.eism_only), &records)?;
    report.save(art.retrieval_report(split.as_str(), ctx.eism_only))?;
    Ok(records)
}

fn retrieve_cmd(ctx: &Ctx, split: Split) -> anyhow::Result<Vec<RetrievalRecord>> {
    let art = ctx.artifacts()?;
    let corpus = ctx.corpus()?;
    let records = retrieval_for(ctx, &art, &corpus, split)?;
    let report: RetrievalReport = serde_json::from_str(&fs::read_to_string(art.retrieval_report(split.as_str(), ctx.eism_only))?)?;
    println!(
        "retrieved {} questions: precision {:.4} recall {:.4} F1 {:.4}",
        records.len(),
        report.mean.precision,
        report.mean.recall,
        report.mean.f1
    );
    println!("wrote {}", art.retrieval(split.as_str(), ctx.eism_only).display());
    Ok(records)
}

fn answer_cmd(ctx: &Ctx, split: Split) -> anyhow::Result<()> {
    let art = ctx.artifacts()?;
    let corpus = ctx.corpus()?;
    let path = art.retrieval(split.as_str(), ctx.eism_only);
    let records = if path.exists() {
        read_jsonl(&path)?
    } else {
        retrieval_for(ctx, &art, &corpus, split)?
    };
    let surface = corpus.surface_options();
    let timeout = Duration::from_secs_f64(ctx.cfg.generator_timeout_secs);
    let mut answers: Vec<AnswerRecord> = records
        .par_iter()
        .map(|r| -> anyhow::Result<AnswerRecord> {
            let inst = corpus
                .instance(&r.qid)
                .ok_or_else(|| usage(format!("retrieval for unknown qid {}", r.qid)))?;
            let sources: Vec<&Source> = r
                .retrieved
                .iter()
                .map(|id| corpus.get(id).ok_or_else(|| usage(format!("unknown source {id} for {}", r.qid))))
                .collect::<anyhow::Result<_>>()?;
            let request = assemble_dialogue(&r.qid, &inst.question, &sources, surface);
            Ok(match ctx.cfg.answer_provider {
                ProviderKind::Extractive => {
                    let a = extractive_answer(&request, &sources, surface);
                    AnswerRecord { qid: a.qid, answer: a.answer, provider: Some(a.provider), error: None }
                }
                ProviderKind::External => {
                    let endpoint = ctx.cfg.generator_endpoint.as_deref().expect("validated config");
                    match external_answer(&request, endpoint, timeout) {
                        Ok(a) => AnswerRecord { qid: a.qid, answer: a.answer, provider: Some(a.provider), error: None },
                        Err(e) => AnswerRecord {
                            qid: r.qid.clone(),
                            answer: String::new(),
                            provider: Some(Provider::External),
                            error: Some(e.to_string()),
                        },
                    }
                }
            })
        })
        .collect::<anyhow::Result<_>>()?;
    answers.sort_by(|a, b| a.qid.cmp(&b.qid));
    let out = art.answers(split.as_str(), ctx.eism_only);
    write_jsonl(&out, &answers)?;
    let failed = answers.iter().filter(|a| a.error.is_some()).count();
    println!("answered {} questions ({failed} generator errors); wrote {}", answers.len(), out.display());
    Ok(())
}

#[derive(Deserialize)]
struct PredictionLine {
    qid: String,
    #[serde(default)]
    retrieved: Option<Vec<String>>,
    #[serde(default)]
    answer: Option<String>,
}

fn eval_cmd(ctx: &Ctx, predictions: &[PathBuf], corpus_path: Option<&Path>) -> anyhow::Result<()> {
    let corpus = Corpus::ingest(corpus_path.unwrap_or(&ctx.cfg.corpus_path))?;
    let mut retrieved: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut answers: BTreeMap<String, String> = BTreeMap::new();
    for path in predictions {
        for line in read_jsonl::<PredictionLine>(path)? {
            if corpus.instance(&line.qid).is_none() {
                return Err(usage(format!("{}: qid {} is not in the corpus", path.display(), line.qid)));
            }
            if let Some(r) = line.retrieved {
                retrieved.insert(line.qid.clone(), r);
            }
            if let Some(a) = line.answer {
                answers.insert(line.qid, a);
            }
        }
    }
    if retrieved.is_empty() && answers.is_empty() {
        return Err(usage("prediction files hold neither \"retrieved\" nor \"answer\" fields"));
    }
    ensure_dir(&ctx.out_dir)?;
    if !retrieved.is_empty() {
        let rows = retrieved.iter().map(|(qid, r)| {
            let gold = &corpus.instance(qid).expect("checked above").gold_ids;
            (qid.as_str(), &r[..], &gold[..])
        });
        let report = RetrievalReport::from_predictions(rows)?;
        let path = ctx.out_dir.join("eval-retrieval.json");
        report.save(&path)?;
        println!(
            "retrieval over {} questions: precision {:.4} recall {:.4} F1 {:.4}; wrote {}",
            report.per_qid.len(),
            report.mean.precision,
            report.mean.recall,
            report.mean.f1,
            path.display()
        );
    }
    if !answers.is_empty() {
        let opts = NormalizeOptions { drop_articles: ctx.cfg.drop_articles };
        let rows = answers.iter().map(|(qid, a)| {
            let reference = &corpus.instance(qid).expect("checked above").answer;
            (qid.as_str(), a.as_str(), reference.as_str())
        });
        let report = QaReport::from_predictions(rows, opts);
        let path = ctx.out_dir.join("eval-qa.json");
        report.save(&path)?;
        println!(
            "answers over {} questions: EM {:.4} token F1 {:.4}; wrote {}",
            report.per_qid.len(),
            report.mean.em,
            report.mean.token_f1,
            path.display()
        );
    }
    Ok(())
}
