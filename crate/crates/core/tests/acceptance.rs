//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any criterion fails.

use std::collections::{HashMap, HashSet};
use std::panic::{self, AssertUnwindSafe};
use std::time::Instant;

use evirefine::corpus::{Corpus, QaInstance, Source, STOP_ID};
use evirefine::embedder::{EmbeddingModel, EncoderRole, FeatureHasher};
use evirefine::evalkit::{answer_em_f1, gen_synthetic, oracle_greedy, oracle_topk, retrieval_prf, ScoreTable, SynthConfig};
use evirefine::nscl::{
    build_nscl_batch, info_nce_from_similarities, info_nce_loss, loss_gradients, train_screener, ContrastivePair,
    PairKind, TrainConfig,
};
use evirefine::pipeline::{eism_only_all, retrieve_all, screen_all, split_instances, write_jsonl, RetrievalRecord, Split};
use evirefine::refiner::{
    greedy_select, idf_from_instances, ier_loss, ier_loss_and_grads, refine, train_refiner, IdfTable, LossVariant,
    PairScorer, RefineConfig, RefinerTrainOptions, RetrievalState, ScorerConfig,
};
use evirefine::screener::{recall_at_k, screen, EncoderConfig, ScoredSource, ScreenResult, Screener};
use evirefine::tensor::Matrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

const WORDS: &[&str] = &[
    "red", "door", "tower", "river", "stone", "bridge", "glass", "north", "paper", "field", "clock", "winter", "lamp",
    "green", "harbor", "salt", "iron", "cloud",
];

fn random_text(rng: &mut impl Rng, min: usize, max: usize) -> String {
    let n = rng.gen_range(min..=max);
    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

/// `|a − n| / max(|a|, |n|, 1e-7)`.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-7)
}

const FD_STEP: f64 = 1e-4;

fn central_diff(params: &mut [f64], i: usize, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = params[i];
    params[i] = orig + FD_STEP;
    let up = f(params);
    params[i] = orig - FD_STEP;
    let down = f(params);
    params[i] = orig;
    (up - down) / (2.0 * FD_STEP)
}

fn gradient_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_contrastive = 0.0f64;
    let mut checked = 0usize;
    for cfg_i in 0..20 {
        let dim = rng.gen_range(12..48);
        let dim_out = rng.gen_range(3..8);
        let hasher = FeatureHasher::new(dim, vec![1, 2], rng.gen()).unwrap();
        let mut q = EmbeddingModel::init(hasher.clone(), dim_out, EncoderRole::Question, rng.gen()).unwrap();
        let mut e = EmbeddingModel::init(hasher, dim_out, EncoderRole::Evidence, rng.gen()).unwrap();
        let b = rng.gen_range(2..7);
        let batch: Vec<ContrastivePair> = (0..b)
            .map(|i| ContrastivePair {
                query_text: random_text(&mut rng, 2, 6),
                evidence_text: random_text(&mut rng, 2, 6),
                kind: PairKind::Gold,
                qid: format!("q{i}"),
            })
            .collect();
        let tau = rng.gen_range(0.1..1.5);
        let grads = loss_gradients(&q, &e, &batch, tau).unwrap();
        for side in 0..2 {
            let analytic = if side == 0 { grads.question.clone() } else { grads.evidence.clone() };
            let n = analytic.as_slice().len();
            for i in 0..n {
                let mut params = if side == 0 { q.projection.as_slice().to_vec() } else { e.projection.as_slice().to_vec() };
                let numeric = central_diff(&mut params, i, |p| {
                    let m = Matrix::from_vec(dim, dim_out, p.to_vec());
                    if side == 0 {
                        q.projection = m;
                    } else {
                        e.projection = m;
                    }
                    info_nce_loss(&q, &e, &batch, tau).unwrap().0
                });
                let m = Matrix::from_vec(dim, dim_out, params);
                if side == 0 {
                    q.projection = m;
                } else {
                    e.projection = m;
                }
                let err = rel_err(analytic.as_slice()[i], numeric);
                worst_contrastive = worst_contrastive.max(err);
                checked += 1;
                if err >= 1e-4 {
                    return Err(format!("contrastive config {cfg_i} coordinate {i}: rel err {err:.2e}"));
                }
            }
        }
    }

    let mut worst_binary = 0.0f64;
    for cfg_i in 0..20 {
        let cfg = ScorerConfig {
            dim: rng.gen_range(12..40),
            ngram_orders: vec![1, 2],
            hash_seed: rng.gen(),
            hidden: rng.gen_range(2..6),
            idf_dim: 64,
        };
        let texts: Vec<String> = (0..6).map(|_| random_text(&mut rng, 2, 6)).collect();
        let idf = IdfTable::from_texts(cfg.idf_dim, texts.iter().map(String::as_str));
        let mut scorer = PairScorer::init(&cfg, idf, rng.gen()).unwrap();
        scorer.hidden.scale(8.0);
        scorer.hidden_bias.iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
        scorer.out_bias = rng.gen_range(-0.5..0.5);
        let question = random_text(&mut rng, 2, 5);
        let selected: Vec<String> = (0..rng.gen_range(0..3)).map(|_| random_text(&mut rng, 2, 5)).collect();
        let positives: Vec<String> = (0..rng.gen_range(1..3)).map(|_| random_text(&mut rng, 2, 5)).collect();
        let negatives: Vec<String> = (0..rng.gen_range(1..4)).map(|_| random_text(&mut rng, 2, 5)).collect();
        let loss = |s: &PairScorer| ier_loss(s, &question, &selected, &positives, &negatives, LossVariant::Bce).unwrap();
        let (_, grads) = ier_loss_and_grads(&scorer, &question, &selected, &positives, &negatives, LossVariant::Bce).unwrap();

        let mut compare = |analytic: f64, numeric: f64, what: &str| -> Result<(), String> {
            let err = rel_err(analytic, numeric);
            worst_binary = worst_binary.max(err);
            checked += 1;
            check(err < 1e-4, format!("binary config {cfg_i} {what}: rel err {err:.2e}"))
        };
        let (rows, cols) = scorer.hidden.shape();
        for i in 0..rows * cols {
            let mut params = scorer.hidden.as_slice().to_vec();
            let numeric = central_diff(&mut params, i, |p| {
                let mut s = scorer.clone();
                s.hidden = Matrix::from_vec(rows, cols, p.to_vec());
                loss(&s)
            });
            compare(grads.hidden.as_slice()[i], numeric, "hidden")?;
        }
        for i in 0..scorer.hidden_bias.len() {
            let mut params = scorer.hidden_bias.clone();
            let numeric = central_diff(&mut params, i, |p| {
                let mut s = scorer.clone();
                s.hidden_bias = p.to_vec();
                loss(&s)
            });
            compare(grads.hidden_bias[i], numeric, "hidden_bias")?;
        }
        for i in 0..scorer.out.len() {
            let mut params = scorer.out.clone();
            let numeric = central_diff(&mut params, i, |p| {
                let mut s = scorer.clone();
                s.out = p.to_vec();
                loss(&s)
            });
            compare(grads.out[i], numeric, "out")?;
        }
        let mut params = vec![scorer.out_bias];
        let numeric = central_diff(&mut params, 0, |p| {
            let mut s = scorer.clone();
            s.out_bias = p[0];
            loss(&s)
        });
        compare(grads.out_bias, numeric, "out_bias")?;
    }
    Ok(format!(
        "{checked} coordinates over 20+20 configs; worst rel err contrastive {worst_contrastive:.1e}, binary {worst_binary:.1e}"
    ))
}

fn loss_identities() -> Outcome {
    let hasher = FeatureHasher::new(32, vec![1], 0).unwrap();
    let q = EmbeddingModel::init(hasher.clone(), 4, EncoderRole::Question, 1).unwrap();
    let e = EmbeddingModel::init(hasher, 4, EncoderRole::Evidence, 2).unwrap();
    let one = vec![ContrastivePair {
        query_text: "red door".into(),
        evidence_text: "stone tower".into(),
        kind: PairKind::Gold,
        qid: "q".into(),
    }];
    let (l1, _) = info_nce_loss(&q, &e, &one, 0.5).unwrap();
    check(l1 == 0.0, format!("B=1 loss {l1}"))?;
    let mut worst = 0.0f64;
    for b in [2usize, 4, 8] {
        for c in [-0.7, 0.0, 0.3, 1.0] {
            for tau in [0.05, 1.0] {
                let sims = Matrix::from_vec(b, b, vec![c; b * b]);
                let l = info_nce_from_similarities(&sims, tau);
                let err = (l - (b as f64).ln()).abs();
                worst = worst.max(err);
                check(err <= 1e-9, format!("B={b} c={c} tau={tau}: loss {l}"))?;
            }
        }
    }
    Ok(format!("B=1 loss 0; constant matrices within {worst:.1e} of ln B"))
}

fn random_corpus(rng: &mut impl Rng, n_sources: usize, dup_rate: f64) -> Corpus {
    let mut texts: Vec<String> = Vec::new();
    let sources: Vec<Source> = (0..n_sources)
        .map(|i| {
            let text = if !texts.is_empty() && rng.gen_bool(dup_rate) {
                texts.choose(rng).unwrap().clone()
            } else {
                random_text(rng, 1, 5)
            };
            texts.push(text.clone());
            match i % 3 {
                0 => Source::text(format!("s{i:03}"), None, text),
                1 => Source::image(format!("s{i:03}"), text, None),
                _ => Source::table(format!("s{i:03}"), None, text),
            }
        })
        .collect();
    Corpus::new(sources, vec![]).unwrap()
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = EncoderConfig { dim: 64, dim_out: 6, ..Default::default() };
    for trial in 0..1000 {
        let corpus = { let n = rng.gen_range(1..40); random_corpus(&mut rng, n, 0.3) };
        let screener = Screener::init(&cfg, rng.gen()).unwrap();
        let pool: Vec<&Source> = corpus.sources().collect();
        let question = random_text(&mut rng, 1, 5);
        let k = rng.gen_range(1..20);
        let got: Vec<String> = screen(&screener, &corpus, "q", &question, &pool, k).unwrap().ids().map(String::from).collect();
        let scores: Vec<(String, f64)> = screener
            .score_pool(&corpus, &question, &pool)
            .into_iter()
            .map(|s| (s.source_id, s.score))
            .collect();
        let want = oracle_topk(&scores, k);
        check(got == want, format!("screen pool {trial}: {got:?} vs {want:?}"))?;
    }

    let mut stop_first = 0;
    let mut capped = 0;
    for trial in 0..500 {
        let n = rng.gen_range(0..6);
        let pool: Vec<String> = (0..n).map(|i| format!("c{i}")).collect();
        let m_max = rng.gen_range(1..5);
        let levels = rng.gen_range(2..6) as f64;
        let mut table = ScoreTable::new();
        let mut all: Vec<String> = pool.clone();
        all.push(STOP_ID.to_string());
        let mut prefixes: Vec<Vec<String>> = vec![vec![]];
        let mut frontier = vec![vec![]];
        for _ in 0..m_max.min(n) {
            let mut next = Vec::new();
            for p in &frontier {
                for c in &pool {
                    if !p.contains(c) {
                        let mut q: Vec<String> = p.clone();
                        q.push(c.clone());
                        next.push(q);
                    }
                }
            }
            prefixes.extend(next.iter().cloned());
            frontier = next;
        }
        for p in &prefixes {
            for c in all.iter().filter(|c| !p.contains(c)) {
                table.insert((p.clone(), c.clone()), (rng.gen_range(0..=levels as u32) as f64) / levels);
            }
        }
        let floor = rng.gen_bool(0.2).then(|| rng.gen_range(0.0..1.0));
        let want = oracle_greedy(&table, &pool, m_max, floor).map_err(|e| e.to_string())?;
        let mut state = RetrievalState::new("q", pool.clone());
        greedy_select(&mut state, &RefineConfig { m_max, score_floor: floor }, |sel, c| table[&(sel.to_vec(), c.to_string())]);
        check(state.selected == want, format!("greedy table {trial}: {:?} vs {want:?}", state.selected))?;
        stop_first += usize::from(want.is_empty() && n > 0);
        capped += usize::from(want.len() == m_max);
    }

    // The scorer-backed loop against the same oracle, with tables filled from the scorer.
    let scorer_cfg = ScorerConfig { dim: 32, hidden: 4, idf_dim: 64, ..Default::default() };
    for trial in 0..100 {
        let corpus = { let n = rng.gen_range(1..6); random_corpus(&mut rng, n, 0.3) };
        let mut scorer = PairScorer::init(&scorer_cfg, IdfTable::empty(64), rng.gen()).unwrap();
        scorer.hidden.scale(20.0);
        scorer.out_bias = rng.gen_range(-1.0..1.0);
        let question = random_text(&mut rng, 1, 4);
        let screened = ScreenResult {
            qid: "q".into(),
            ranked: corpus.sources().map(|s| ScoredSource { source_id: s.id.clone(), score: 0.0 }).collect(),
            k: 16,
        };
        let m_max = rng.gen_range(1..5);
        let pool: Vec<String> = screened.ids().map(String::from).collect();
        let mut table = ScoreTable::new();
        fill_table(&scorer, &corpus, &question, &pool, &mut vec![], m_max, &mut table);
        let cfg = RefineConfig { m_max, score_floor: None };
        let got = refine(&scorer, &question, &screened, &corpus, &cfg);
        let want = oracle_greedy(&table, &pool, m_max, None).map_err(|e| e.to_string())?;
        check(got == want, format!("refine scorer {trial}: {got:?} vs {want:?}"))?;
    }
    Ok(format!(
        "1000 screen pools, 500 score tables ({stop_first} stop-first, {capped} m_max-capped), 100 scorer tables: 0 mismatches"
    ))
}

fn fill_table(
    scorer: &PairScorer,
    corpus: &Corpus,
    question: &str,
    pool: &[String],
    prefix: &mut Vec<String>,
    m_max: usize,
    table: &mut ScoreTable,
) {
    let sel: Vec<String> = prefix.iter().map(|id| corpus.surface_of(id).unwrap()).collect();
    let mut cands: Vec<String> = pool.iter().filter(|c| !prefix.contains(c)).cloned().collect();
    cands.push(STOP_ID.to_string());
    for c in &cands {
        let composed = evirefine::refiner::compose_input(question, &sel, &corpus.surface_of(c).unwrap());
        table.insert((prefix.clone(), c.clone()), scorer.score_pair(&composed));
    }
    if prefix.len() + 1 < m_max {
        for c in cands.iter().filter(|c| *c != STOP_ID) {
            prefix.push(c.clone());
            fill_table(scorer, corpus, question, pool, prefix, m_max, table);
            prefix.pop();
        }
    }
}

fn nscl_batch_law() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut pairs_checked = 0;
    for trial in 0..200 {
        let n_inst = rng.gen_range(1..12);
        let mut sources = Vec::new();
        let mut instances = Vec::new();
        for qi in 0..n_inst {
            let n_gold = rng.gen_range(1..4);
            let n_dis = rng.gen_range(0..5);
            let ids: Vec<String> = (0..n_gold + n_dis).map(|j| format!("q{qi}s{j}")).collect();
            for id in &ids {
                sources.push(Source::text(id.clone(), None, random_text(&mut rng, 1, 5)));
            }
            instances.push(QaInstance {
                qid: format!("q{qi}"),
                question: random_text(&mut rng, 1, 4),
                gold_ids: ids[..n_gold].to_vec(),
                distractor_ids: ids[n_gold..].to_vec(),
                answer: String::new(),
            });
        }
        let corpus = Corpus::new(sources, instances).unwrap();
        let insts: Vec<&QaInstance> = corpus.instances().iter().collect();
        let b = rng.gen_range(1..=insts.len());
        let batch = build_nscl_batch(&insts, &corpus, &mut rng, b).map_err(|e| e.to_string())?;
        let gold_pairs = batch.iter().filter(|p| p.kind == PairKind::Gold).count();
        let neg_pairs = batch.iter().filter(|p| p.kind == PairKind::SelfNegative).count();
        check(batch.len() == gold_pairs + neg_pairs, format!("corpus {trial}: unknown pair kind"))?;
        check(gold_pairs == b, format!("corpus {trial}: {gold_pairs} gold pairs for {b} questions"))?;
        let mut per_q: HashMap<&str, usize> = HashMap::new();
        for p in &batch {
            let inst = corpus.instance(&p.qid).unwrap();
            match p.kind {
                PairKind::SelfNegative => {
                    check(p.query_text == p.evidence_text, format!("corpus {trial}: self-negative query differs"))?;
                    check(
                        inst.distractor_ids.iter().any(|d| corpus.surface_of(d).unwrap() == p.evidence_text),
                        format!("corpus {trial}: self-negative is not a distractor"),
                    )?;
                    *per_q.entry(p.qid.as_str()).or_default() += 1;
                }
                PairKind::Gold => {
                    check(p.query_text == inst.question, format!("corpus {trial}: gold query is not the question"))?;
                    check(
                        inst.gold_ids.iter().any(|g| corpus.surface_of(g).unwrap() == p.evidence_text),
                        format!("corpus {trial}: gold evidence is not gold"),
                    )?;
                }
            }
        }
        check(per_q.values().all(|&c| c <= 1), format!("corpus {trial}: several distractors for one question"))?;
        pairs_checked += batch.len();
    }
    Ok(format!("200 corpora, {pairs_checked} pairs checked"))
}

struct EndToEnd {
    recall_single: f64,
    f1_single: f64,
    f1_bridge_full: f64,
    f1_bridge_eism: f64,
    seconds: f64,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn run_end_to_end() -> EndToEnd {
    let start = Instant::now();
    let cfg = SynthConfig {
        n_instances: 2500,
        pool_size_per_q: 50,
        bridge_fraction: 0.5,
        vocab_size: 2000,
        seed: 7,
    };
    let corpus = gen_synthetic(&cfg).unwrap();
    let train = split_instances(&corpus, Split::Train);
    let eval = split_instances(&corpus, Split::Eval);
    assert_eq!((train.len(), eval.len()), (2000, 500));

    let screener_cfg = TrainConfig::desk_screener();
    let init = Screener::init(&EncoderConfig::default(), screener_cfg.seed).unwrap();
    let screener = train_screener(&corpus, &train, init, &screener_cfg).unwrap().screener;

    let train_screens: HashMap<String, ScreenResult> = screen_all(&screener, &corpus, &train, 16)
        .unwrap()
        .into_iter()
        .map(|s| (s.qid.clone(), s))
        .collect();
    let scorer_cfg = ScorerConfig::default();
    let refiner_cfg = TrainConfig::desk_refiner();
    let idf = idf_from_instances(&corpus, &train, scorer_cfg.idf_dim);
    let scorer = PairScorer::init(&scorer_cfg, idf, refiner_cfg.seed).unwrap();
    let scorer = train_refiner(&corpus, &train, &train_screens, scorer, &refiner_cfg, RefinerTrainOptions::default())
        .unwrap()
        .scorer;

    let eval_screens = screen_all(&screener, &corpus, &eval, 16).unwrap();
    let full = retrieve_all(&scorer, &corpus, &eval_screens, &RefineConfig::default()).unwrap();
    let eism = eism_only_all(&eval_screens, 0.1);

    let f1 = |r: &RetrievalRecord| {
        let gold: HashSet<&str> = corpus.instance(&r.qid).unwrap().gold_ids.iter().map(String::as_str).collect();
        retrieval_prf(&r.retrieved.iter().map(String::as_str).collect(), &gold).unwrap().f1
    };
    let is_bridge = |qid: &str| corpus.instance(qid).unwrap().gold_ids.len() == 2;
    let mut recall_single = Vec::new();
    for s in &eval_screens {
        if !is_bridge(&s.qid) {
            let gold: HashSet<&str> = corpus.instance(&s.qid).unwrap().gold_ids.iter().map(String::as_str).collect();
            recall_single.push(recall_at_k(s, &gold).unwrap());
        }
    }
    let pick = |records: &[RetrievalRecord], bridge: bool| -> Vec<f64> {
        records.iter().filter(|r| is_bridge(&r.qid) == bridge).map(f1).collect()
    };
    EndToEnd {
        recall_single: mean(&recall_single),
        f1_single: mean(&pick(&full, false)),
        f1_bridge_full: mean(&pick(&full, true)),
        f1_bridge_eism: mean(&pick(&eism, true)),
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn metric_fixtures() -> Outcome {
    let set = |ids: &[&'static str]| ids.iter().copied().collect::<HashSet<&str>>();
    let p = retrieval_prf(&set(&["a", "b", "c"]), &set(&["a", "b"])).map_err(|e| e.to_string())?;
    check(
        (p.precision - 2.0 / 3.0).abs() < 1e-12 && p.recall == 1.0 && (p.f1 - 0.8).abs() < 1e-12,
        format!("retrieval_prf gave {p:?}"),
    )?;
    let (em, f1) = answer_em_f1("paris france", "paris");
    check(em == 0.0 && (f1 - 2.0 / 3.0).abs() < 1e-12, format!("answer_em_f1 gave ({em}, {f1})"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for trial in 0..100 {
        let n = rng.gen_range(1..30);
        let mut ranked: Vec<ScoredSource> = (0..n)
            .map(|i| ScoredSource { source_id: format!("s{i:02}"), score: rng.gen() })
            .collect();
        ranked.shuffle(&mut rng);
        let full = ScreenResult { qid: "q".into(), ranked, k: n };
        let gold_ids: Vec<String> = (0..rng.gen_range(1..5)).map(|_| format!("s{:02}", rng.gen_range(0..n + 3))).collect();
        let gold: HashSet<&str> = gold_ids.iter().map(String::as_str).collect();
        let mut prev = 0.0;
        for k in 0..=n {
            let r = recall_at_k(&full.truncated(k), &gold).map_err(|e| e.to_string())?;
            check(r >= prev, format!("ranking {trial}: recall fell at k={k}"))?;
            prev = r;
        }
    }
    Ok("fixtures exact; Recall@k monotone on 100 rankings".into())
}

fn small_synth() -> Corpus {
    gen_synthetic(&SynthConfig { n_instances: 200, pool_size_per_q: 12, bridge_fraction: 0.5, vocab_size: 600, seed: 11 }).unwrap()
}

fn determinism_and_persistence() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus = small_synth();
    let train = split_instances(&corpus, Split::Train);
    let eval = split_instances(&corpus, Split::Eval);
    let enc = EncoderConfig { dim: 1024, dim_out: 32, ..Default::default() };
    let scfg = TrainConfig { batch_size: 16, epochs: 2, ..TrainConfig::desk_screener() };
    let rcfg = TrainConfig { epochs: 1, ..TrainConfig::desk_refiner() };
    let scorer_cfg = ScorerConfig { dim: 1024, hidden: 16, ..Default::default() };

    let mut bytes = Vec::new();
    let mut models = Vec::new();
    for run in 0..2 {
        let screener = train_screener(&corpus, &train, Screener::init(&enc, scfg.seed).unwrap(), &scfg).unwrap().screener;
        let screens: HashMap<String, ScreenResult> =
            screen_all(&screener, &corpus, &train, 16).unwrap().into_iter().map(|s| (s.qid.clone(), s)).collect();
        let idf = idf_from_instances(&corpus, &train, scorer_cfg.idf_dim);
        let init = PairScorer::init(&scorer_cfg, idf, rcfg.seed).unwrap();
        let scorer = train_refiner(&corpus, &train, &screens, init, &rcfg, RefinerTrainOptions::default()).unwrap().scorer;
        let eval_screens = screen_all(&screener, &corpus, &eval, 16).unwrap();
        let records = retrieve_all(&scorer, &corpus, &eval_screens, &RefineConfig::default()).unwrap();
        let (sp, rp, jp) = (
            dir.path().join(format!("screener{run}.bin")),
            dir.path().join(format!("refiner{run}.bin")),
            dir.path().join(format!("retrieval{run}.jsonl")),
        );
        screener.save(&sp).unwrap();
        scorer.save(&rp).unwrap();
        write_jsonl(&jp, &records).unwrap();
        let read = |p: &std::path::Path| std::fs::read(p).unwrap();
        bytes.push((read(&sp), read(&rp), read(&jp)));
        models.push((screener, scorer, sp, rp, eval_screens));
    }
    check(bytes[0].0 == bytes[1].0, "screener model files differ between runs")?;
    check(bytes[0].1 == bytes[1].1, "refiner model files differ between runs")?;
    check(bytes[0].2 == bytes[1].2, "retrieval JSONL differs between runs")?;

    let (screener, scorer, sp, rp, eval_screens) = models.remove(0);
    let screener2 = Screener::load(&sp).map_err(|e| e.to_string())?;
    let scorer2 = PairScorer::load(&rp).map_err(|e| e.to_string())?;
    let mut compared = 0;
    for inst in &eval {
        let pool = corpus.pool(inst);
        let a = screener.score_pool(&corpus, &inst.question, &pool);
        let b = screener2.score_pool(&corpus, &inst.question, &pool);
        for (x, y) in a.iter().zip(&b) {
            check(x.score.to_bits() == y.score.to_bits(), format!("screener score changed for {}", x.source_id))?;
            compared += 1;
        }
    }
    for s in &eval_screens {
        let inst = corpus.instance(&s.qid).unwrap();
        for id in s.ids() {
            let composed = evirefine::refiner::compose_input(&inst.question, &[] as &[&str], &corpus.surface_of(id).unwrap());
            check(
                scorer.score_pair(&composed).to_bits() == scorer2.score_pair(&composed).to_bits(),
                format!("refiner score changed for {id}"),
            )?;
            compared += 1;
        }
    }
    Ok(format!("model files and retrieval JSONL byte-identical; {compared} scores bit-exact after reload"))
}

fn loop_safety() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut lengths = [0usize; 5];
    for trial in 0..1000 {
        let corpus = { let n = rng.gen_range(0..10); random_corpus(&mut rng, n, 0.2) };
        let cfg = ScorerConfig { dim: 32, hidden: rng.gen_range(1..5), idf_dim: 64, ..Default::default() };
        let mut scorer = PairScorer::init(&cfg, IdfTable::empty(64), rng.gen()).unwrap();
        scorer.hidden.scale(rng.gen_range(1.0..30.0));
        scorer.out_bias = rng.gen_range(-2.0..2.0);
        let screened = ScreenResult {
            qid: "q".into(),
            ranked: corpus.sources().map(|s| ScoredSource { source_id: s.id.clone(), score: 0.0 }).collect(),
            k: 16,
        };
        let m_max = rng.gen_range(1..=4);
        let out = refine(&scorer, &random_text(&mut rng, 1, 4), &screened, &corpus, &RefineConfig { m_max, score_floor: None });
        check(out.len() <= m_max, format!("scorer {trial}: {} > m_max {m_max}", out.len()))?;
        check(out.iter().collect::<HashSet<_>>().len() == out.len(), format!("scorer {trial}: duplicate ids"))?;
        check(!out.iter().any(|id| id == STOP_ID), format!("scorer {trial}: sentinel in output"))?;
        check(out.iter().all(|id| screened.ids().any(|s| s == id)), format!("scorer {trial}: id outside pool"))?;
        lengths[out.len()] += 1;
    }
    Ok(format!("1000 scorers; output length histogram {lengths:?}"))
}

fn run(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok(detail) => {
            println!("PASS  {name} ({secs:.1}s): {detail}");
            true
        }
        Err(detail) => {
            println!("FAIL  {name} ({secs:.1}s): {detail}");
            false
        }
    }
}

fn main() {
    let mut ok = true;
    ok &= run("1 gradient correctness", gradient_correctness);
    ok &= run("2 loss identities", loss_identities);
    ok &= run("3 oracle equivalence", oracle_equivalence);
    ok &= run("4 contrastive batch law", nscl_batch_law);

    let e2e = panic::catch_unwind(run_end_to_end);
    let e2e_line = |name: &str, f: &dyn Fn(&EndToEnd) -> Outcome| match &e2e {
        Ok(r) => run(name, || f(r)),
        Err(_) => run(name, || Err("end-to-end run panicked".into())),
    };
    ok &= e2e_line("5a screening recall@16 on single-hop >= 0.95", &|r| {
        check(r.recall_single >= 0.95, format!("{:.4}", r.recall_single))?;
        Ok(format!("{:.4}", r.recall_single))
    });
    ok &= e2e_line("5b pipeline Retr-F1 on single-hop >= 0.90", &|r| {
        check(r.f1_single >= 0.90, format!("{:.4}", r.f1_single))?;
        Ok(format!("{:.4}", r.f1_single))
    });
    ok &= e2e_line("5c bridge Retr-F1 gain over screening-only >= 10pp", &|r| {
        let gain = 100.0 * (r.f1_bridge_full - r.f1_bridge_eism);
        let detail = format!(
            "full {:.4} vs screening-only {:.4}, gain {gain:.1}pp; end-to-end {:.0}s",
            r.f1_bridge_full, r.f1_bridge_eism, r.seconds
        );
        check(gain >= 10.0 && r.seconds < 600.0, detail.clone())?;
        Ok(detail)
    });

    ok &= run("6 metric fixtures", metric_fixtures);
    ok &= run("7 determinism and persistence", determinism_and_persistence);
    ok &= run("8 refinement loop safety", loop_safety);
    if !ok {
        std::process::exit(1);
    }
}
