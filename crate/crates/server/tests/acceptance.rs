//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

use memqa_core::answer::{
    build_prompt, build_sft_dataset, write_sft_jsonl, AnswerGenerator, SftOptions,
};
use memqa_core::augment::{Augmenter, CaptionRequest, MockSidecarProvider};
use memqa_core::backend::MockBackend;
use memqa_core::encoding::HashingEmbedder;
use memqa_core::eval::{
    a_key, id_detection_metrics, judge_prompt, ndcg_at_k, rank_training_set, recall_at_k,
    run_benchmark, AnswerDomains, BenchmarkOptions, Category, EvalReport,
};
use memqa_core::fusion::{
    fuse, rerank, train_weights, CandidateSignals, FusionWeights, RankTrainingSet, RerankStrategy,
    Signal, SignalVector,
};
use memqa_core::location::{Bm25Params, LocationIndex};
use memqa_core::memory::{AugmentedMemory, AuxiliaryClue, MemoryEntry, MemoryStore, RecallQuery};
use memqa_core::prompts::{render, TemplateId};
use memqa_core::retrieval::Engine;
use memqa_core::synthetic::{
    generate, Constraint, SynthOptions, SyntheticBenchmark, UNKNOWN_RESPONSE,
};
use memqa_core::temporal::{
    recency_score, DecayConstants, LlmDateParser, ParseSource, RuleDateParser, TemporalParse,
    TemporalParser,
};
use memqa_server::{router, AppState};

type Outcome = Result<String, String>;

const DAY: i64 = 86_400;
// 2024-05-06 12:00 UTC, a Monday.
const MONDAY_NOON: i64 = 1_714_996_800;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(limit: Duration, started: Instant) -> Result<(), String> {
    let took = started.elapsed();
    ensure(took < limit, format!("took {took:.2?}, limit {limit:?}"))
}

fn ids(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

/// exp(x) by its Taylor series after halving the argument; squared back up.
fn exp_series(x: f64) -> f64 {
    let mut halvings = 0;
    let mut y = x;
    while y.abs() > 0.5 {
        y /= 2.0;
        halvings += 1;
    }
    let (mut term, mut sum) = (1.0f64, 1.0f64);
    for n in 1..40 {
        term *= y / n as f64;
        sum += term;
    }
    (0..halvings).fold(sum, |s, _| s * s)
}

fn recency_oracle(delta_days: f64) -> f64 {
    (exp_series(-delta_days / 3.0)
        + exp_series(-delta_days / 90.0)
        + exp_series(-delta_days / 365.0))
        / 3.0
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let decay = DecayConstants::default();
    let parse = TemporalParse::recent();
    let r = |days: i64| {
        let m = MemoryEntry::new("m", "remember", MONDAY_NOON - days * DAY, "");
        recency_score(&m, &RecallQuery::new("q", MONDAY_NOON), &parse, &decay)
            .map_err(|e| e.to_string())
    };
    ensure(r(0)? == 1.0, format!("R_r(0) = {}", r(0)?))?;
    let (r3, r90) = (r(3)?, r(90)?);
    let (o3, o90) = (recency_oracle(3.0), recency_oracle(90.0));
    ensure(
        (r3 - o3).abs() < 1e-6,
        format!("R_r(3d) = {r3}, oracle {o3}"),
    )?;
    ensure(
        (r90 - o90).abs() < 1e-6,
        format!("R_r(90d) = {r90}, oracle {o90}"),
    )?;
    ensure(
        (o3 - 0.775636).abs() < 1e-6,
        format!("oracle R_r(3d) = {o3}"),
    )?;
    within(Duration::from_secs(1), started)?;
    Ok(format!("R_r(0)=1, R_r(3d)={r3:.9}, R_r(90d)={r90:.9}"))
}

fn criterion_2() -> Outcome {
    let started = Instant::now();
    let cases = [
        (
            "where did I park yesterday",
            "2024-05-05",
            "2024-05-05",
            false,
        ),
        ("which book did I saved last time", "", "", true),
    ];
    let mut backend = MockBackend::default();
    for (q, s, e, recent) in cases {
        let reply = json!({"search_start_date": s, "search_end_date": e, "search_recent": recent});
        backend = backend.rule(format!("question: {q}\nrecall_time: "), reply.to_string());
    }
    let llm = TemporalParser::llm(Arc::new(backend));
    for (q, s, e, recent) in cases {
        let query = RecallQuery::new(q, MONDAY_NOON);
        let want = TemporalParse::from_strings(s, e, recent).map_err(|e| e.to_string())?;
        let rules = RuleDateParser.parse(&query);
        ensure(rules == want, format!("rules on {q:?}: {rules:?}"))?;
        let out = llm.parse(&query);
        ensure(
            out.source == ParseSource::Llm,
            format!("{q:?} fell back: {:?}", out.warning),
        )?;
        ensure(out.parse == want, format!("llm on {q:?}: {:?}", out.parse))?;
    }
    within(Duration::from_secs(1), started)?;
    Ok("both prompt examples under rules and replayed LLM".into())
}

/// Textbook Okapi BM25 over whitespace tokens with the non-negative idf ln(1 + (N - df + 0.5)/(df + 0.5)).
fn bm25_oracle(docs: &[Vec<&str>], query: &[&str], k1: f64, b: f64) -> Vec<f64> {
    let n = docs.len() as f64;
    let avg = docs.iter().map(|d| d.len()).sum::<usize>() as f64 / n;
    let terms: BTreeSet<&str> = query.iter().copied().collect();
    docs.iter()
        .map(|d| {
            if d.is_empty() {
                return 0.0;
            }
            let mut s = 0.0;
            for t in &terms {
                let f = d.iter().filter(|w| *w == t).count() as f64;
                if f == 0.0 {
                    continue;
                }
                let df = docs.iter().filter(|x| x.contains(t)).count() as f64;
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                s += idf * f * (k1 + 1.0) / (f + k1 * (1.0 - b + b * d.len() as f64 / avg));
            }
            s
        })
        .collect()
}

fn criterion_3() -> Outcome {
    let started = Instant::now();
    let vocab = [
        "main", "st", "seattle", "wa", "park", "ave", "nyc", "ny", "pier", "39",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n_docs = rng.random_range(1..=10);
        let docs: Vec<Vec<&str>> = (0..n_docs)
            .map(|_| {
                (0..rng.random_range(0..=8))
                    .map(|_| vocab[rng.random_range(0..vocab.len())])
                    .collect()
            })
            .collect();
        let query: Vec<&str> = (0..rng.random_range(1..=8))
            .map(|_| vocab[rng.random_range(0..vocab.len())])
            .collect();
        let k1 = rng.random_range(0.5..2.0);
        let b = rng.random_range(0.0..=1.0);
        let joined: Vec<String> = docs.iter().map(|d| d.join(" ")).collect();
        let index = LocationIndex::build(joined.iter().map(String::as_str), Bm25Params { k1, b });
        let oracle = bm25_oracle(&docs, &query, k1, b);
        for (doc, want) in joined.iter().zip(&oracle) {
            let got = index.score(doc, &query.join(" "));
            worst = worst.max((got - want).abs());
        }
    }
    ensure(worst < 1e-9, format!("max deviation {worst:e}"))?;
    within(Duration::from_secs(5), started)?;
    Ok(format!("200 corpora, max deviation {worst:.1e}"))
}

fn random_pool(rng: &mut ChaCha8Rng) -> Vec<CandidateSignals> {
    (0..rng.random_range(2..30))
        .map(|i| CandidateSignals {
            memory_id: format!("m{i:02}"),
            created_at: rng.random_range(0..5) * DAY,
            signals: SignalVector::new(
                rng.random_range(0..2) as f64,
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
                rng.random_range(-1.0..1.0),
            ),
        })
        .collect()
}

fn order(ranked: &[memqa_core::fusion::ScoredCandidate]) -> Vec<String> {
    ranked.iter().map(|c| c.memory_id.clone()).collect()
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let semantic = FusionWeights::one_hot(Signal::Semantic);
    for _ in 0..100 {
        let pool = random_pool(&mut rng);
        // Similarity-only order with the same tie-break: newer first, then smaller id.
        let mut by_sim = pool.clone();
        by_sim.sort_by(|a, b| {
            b.signals
                .r_s
                .total_cmp(&a.signals.r_s)
                .then(b.created_at.cmp(&a.created_at))
                .then(a.memory_id.cmp(&b.memory_id))
        });
        let want: Vec<String> = by_sim.into_iter().map(|c| c.memory_id).collect();
        let got =
            rerank(pool, RerankStrategy::Learned, Some(&semantic)).map_err(|e| e.to_string())?;
        ensure(
            order(&got) == want,
            "(0,0,0,1) differs from similarity-only ranking",
        )?;
    }
    for _ in 0..100 {
        let pool = random_pool(&mut rng);
        let w: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.01..1.0));
        let scale = rng.random_range(0.1..10.0);
        let base = rerank(
            pool.clone(),
            RerankStrategy::Learned,
            Some(&FusionWeights::from_array(w)),
        );
        let scaled = rerank(
            pool,
            RerankStrategy::Learned,
            Some(&FusionWeights::from_array(w.map(|x| x * scale))),
        );
        let (base, scaled) = (
            base.map_err(|e| e.to_string())?,
            scaled.map_err(|e| e.to_string())?,
        );
        ensure(
            order(&base) == order(&scaled),
            format!("scaling by {scale} changed the order"),
        )?;
    }
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/weights.json");
    let w = FusionWeights::load(&path).map_err(|e| e.to_string())?;
    ensure(
        w.to_array() == [0.08, 0.22, 0.16, 0.53],
        format!("fixture weights {:?}", w.to_array()),
    )?;
    let ones = fuse(&SignalVector::new(1.0, 1.0, 1.0, 1.0), &w).map_err(|e| e.to_string())?;
    ensure(
        (ones - 0.99).abs() < 1e-12,
        format!("all-ones fuses to {ones}"),
    )?;
    Ok(format!(
        "similarity-only exact, 100 scaled pools stable, all-ones fuses to {ones}"
    ))
}

/// Engine over an in-memory store holding every bench, augmented from its sidecars.
fn synthetic_engine(benches: &[(&SyntheticBenchmark, &Path)]) -> Result<Engine, String> {
    let encoder = Arc::new(HashingEmbedder::new(256));
    let store = Arc::new(MemoryStore::in_memory(256));
    let engine = Engine::new(store, encoder).map_err(|e| e.to_string())?;
    let mut rules = Vec::new();
    for (bench, dir) in benches {
        bench.write_to(dir).map_err(|e| e.to_string())?;
        let augmenter = Augmenter::uniform(Arc::new(MockSidecarProvider::new(dir.join("images"))));
        for m in &bench.memories {
            engine
                .record(m.clone(), Some(&augmenter))
                .map_err(|e| e.to_string())?;
        }
        rules.extend(bench.generator_rules.iter().cloned());
    }
    let backend = MockBackend::new(rules).with_fallback(UNKNOWN_RESPONSE);
    Ok(engine.with_generator(Some(AnswerGenerator::new(Arc::new(backend)))))
}

struct Fixture {
    _dir: tempfile::TempDir,
    engine: Engine,
    train: SyntheticBenchmark,
    eval: SyntheticBenchmark,
}

fn fixture() -> Result<Fixture, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let train = generate(&SynthOptions {
        seed: 101,
        cases: 500,
        first_id: 5001,
        ..SynthOptions::default()
    });
    let eval = generate(&SynthOptions {
        seed: 7,
        cases: 200,
        ..SynthOptions::default()
    });
    let engine = synthetic_engine(&[
        (&train, &dir.path().join("train")),
        (&eval, &dir.path().join("eval")),
    ])?;
    Ok(Fixture {
        _dir: dir,
        engine,
        train,
        eval,
    })
}

fn pairwise_accuracy(set: &RankTrainingSet, w: &FusionWeights) -> f64 {
    let diffs = set.pair_differences();
    let correct = diffs
        .iter()
        .filter(|d| d.iter().zip(w.to_array()).map(|(x, w)| x * w).sum::<f64>() > 0.0)
        .count();
    correct as f64 / diffs.len() as f64
}

fn evaluate(
    f: &Fixture,
    strategy: RerankStrategy,
    w: &FusionWeights,
    answers: bool,
) -> Result<EvalReport, String> {
    let engine = f
        .engine
        .clone()
        .with_strategy(strategy)
        .with_weights(Some(w.clone()));
    let opts = BenchmarkOptions {
        with_answers: answers,
        ..BenchmarkOptions::default()
    };
    run_benchmark(&f.eval.cases, &engine, &opts).map_err(|e| e.to_string())
}

fn trained_weights(f: &Fixture) -> Result<FusionWeights, String> {
    let train = rank_training_set(&f.train.cases, &f.engine).map_err(|e| e.to_string())?;
    train_weights(&train, 1.0).map_err(|e| e.to_string())
}

fn criterion_5(f: &Fixture) -> Outcome {
    let started = Instant::now();
    let w = trained_weights(f)?;
    let held_out = rank_training_set(&f.eval.cases, &f.engine).map_err(|e| e.to_string())?;
    let acc = pairwise_accuracy(&held_out, &w);
    ensure(acc >= 0.99, format!("held-out pairwise accuracy {acc:.4}"))?;
    let learned = evaluate(f, RerankStrategy::Learned, &w, false)?
        .metrics
        .recall_at_1;
    let sum = evaluate(f, RerankStrategy::Sum, &w, false)?
        .metrics
        .recall_at_1;
    let mut best_single = 0.0f64;
    for s in Signal::ALL {
        best_single = best_single.max(
            evaluate(
                f,
                RerankStrategy::Learned,
                &FusionWeights::one_hot(s),
                false,
            )?
            .metrics
            .recall_at_1,
        );
    }
    let summary = format!("pairwise {acc:.4}, recall@1 learned {learned:.3} / sum {sum:.3} / best single {best_single:.3}");
    ensure(learned >= sum && sum >= best_single, summary.clone())?;
    within(Duration::from_secs(60), started)?;
    Ok(summary)
}

fn dated_recall_at_1(report: &EvalReport) -> f64 {
    report
        .subset(|r| Constraint::of_question(&r.question_id).is_some_and(Constraint::is_dated))
        .recall_at_1
}

fn criterion_6(f: &Fixture) -> Outcome {
    let started = Instant::now();
    let w = trained_weights(f)?;
    let first = evaluate(f, RerankStrategy::Learned, &w, true)?;
    let second = evaluate(f, RerankStrategy::Learned, &w, true)?;
    let m = &first.metrics;
    ensure(m.recall_at_5 == 1.0, format!("recall@5 {}", m.recall_at_5))?;
    ensure(
        first.to_json() == second.to_json() && first.cases_jsonl() == second.cases_jsonl(),
        "answer runs differ",
    )?;
    let mut ablated = w.clone();
    ablated.w_t = 0.0;
    let without = evaluate(f, RerankStrategy::Learned, &ablated, false)?;
    let (with_t, without_t) = (dated_recall_at_1(&first), dated_recall_at_1(&without));
    let summary = format!(
        "recall@5 {:.3}, a_key {:.3}, dated recall@1 {with_t:.3} -> {without_t:.3} without date match",
        m.recall_at_5,
        m.a_key.unwrap_or(f64::NAN)
    );
    ensure(with_t - without_t >= 0.10, summary.clone())?;
    within(Duration::from_secs(60), started)?;
    Ok(summary)
}

fn criterion_7() -> Outcome {
    let started = Instant::now();
    let worked =
        ndcg_at_k(&ids(&["p1", "n", "p2"]), &ids(&["p1", "p2"]), 3).map_err(|e| e.to_string())?;
    ensure(
        (worked - 0.9197).abs() < 1e-4,
        format!("worked nDCG {worked}"),
    )?;

    let domains = AnswerDomains::default();
    let colors: Vec<&str> = domains.color.iter().map(String::as_str).collect();
    let words = [
        "car", "red", "blue", "the", "spot", "level", "green", "at", "kochi", "pink",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let pick = |rng: &mut ChaCha8Rng, pool: &[&str], lo: usize, hi: usize| -> Vec<String> {
        (0..rng.random_range(lo..=hi))
            .map(|_| pool[rng.random_range(0..pool.len())].to_string())
            .collect()
    };
    for _ in 0..500 {
        let universe: Vec<String> = (0..12).map(|i| format!("m{i}")).collect();
        let u: Vec<&str> = universe.iter().map(String::as_str).collect();
        let mut ranked: Vec<String> = universe.clone();
        for i in (1..ranked.len()).rev() {
            ranked.swap(i, rng.random_range(0..=i));
        }
        let positives: Vec<String> = pick(&mut rng, &u, 1, 4)
            .into_iter()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let k = rng.random_range(1..=8);

        // Brute force: walk the top k, count distinct hits, discount by position.
        let hits = ranked[..k]
            .iter()
            .filter(|id| positives.contains(id))
            .count() as f64;
        let recall = hits / positives.len() as f64;
        let dcg: f64 = (0..k)
            .filter(|&i| positives.contains(&ranked[i]))
            .map(|i| 1.0 / (i as f64 + 2.0).log2())
            .sum();
        let idcg: f64 = (0..positives.len().min(k))
            .map(|i| 1.0 / (i as f64 + 2.0).log2())
            .sum();
        let got_r = recall_at_k(&ranked, &positives, k).map_err(|e| e.to_string())?;
        let got_n = ndcg_at_k(&ranked, &positives, k).map_err(|e| e.to_string())?;
        ensure(
            (got_r - recall).abs() < 1e-9,
            format!("recall@{k} {got_r} vs {recall}"),
        )?;
        ensure(
            (got_n - dcg / idcg).abs() < 1e-6,
            format!("ndcg@{k} {got_n} vs {}", dcg / idcg),
        )?;

        let predicted = pick(&mut rng, &u, 0, 5);
        let gold = pick(&mut rng, &u, 0, 5);
        let (p_set, g_set): (BTreeSet<_>, BTreeSet<_>) =
            (predicted.iter().collect(), gold.iter().collect());
        let tp = p_set.intersection(&g_set).count();
        let m = id_detection_metrics(&predicted, &gold);
        // Exact: the same rational operations in the same order.
        let p = if p_set.is_empty() {
            0.0
        } else {
            tp as f64 / p_set.len() as f64
        };
        let r = if g_set.is_empty() {
            0.0
        } else {
            tp as f64 / g_set.len() as f64
        };
        let f1 = if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        };
        ensure(
            m.precision == p && m.recall == r && m.f1 == f1,
            format!("id metrics {m:?} vs ({p}, {r}, {f1})"),
        )?;

        let gold_answer = pick(&mut rng, &words, 1, 4).join(" ");
        let candidate = pick(&mut rng, &words, 0, 6).join(" ");
        let cand: HashSet<&str> = candidate.split(' ').filter(|t| !t.is_empty()).collect();
        let gold_tokens: BTreeSet<&str> = gold_answer.split(' ').collect();
        let content: BTreeSet<&str> = gold_tokens
            .iter()
            .copied()
            .filter(|t| !domains.stopwords.contains(*t))
            .collect();
        let keywords = if content.is_empty() {
            gold_tokens.clone()
        } else {
            content
        };
        let open =
            keywords.iter().filter(|k| cand.contains(*k)).count() as f64 / keywords.len() as f64;
        let got = a_key(&candidate, &gold_answer, Category::Other, &domains)
            .map_err(|e| e.to_string())?;
        ensure(
            (got - open).abs() < 1e-9,
            format!("a_key open {got} vs {open}"),
        )?;

        let gold_colors: BTreeSet<&str> = gold_tokens
            .iter()
            .copied()
            .filter(|t| colors.contains(t))
            .collect();
        let closed = if gold_colors.is_empty() {
            open
        } else {
            let cand_colors: BTreeSet<&str> = cand
                .iter()
                .copied()
                .filter(|t| colors.contains(t))
                .collect();
            let tp = cand_colors.intersection(&gold_colors).count() as f64;
            let p = if cand_colors.is_empty() {
                0.0
            } else {
                tp / cand_colors.len() as f64
            };
            let r = tp / gold_colors.len() as f64;
            if p + r == 0.0 {
                0.0
            } else {
                2.0 * p * r / (p + r)
            }
        };
        let got = a_key(&candidate, &gold_answer, Category::Color, &domains)
            .map_err(|e| e.to_string())?;
        ensure(
            (got - closed).abs() < 1e-9,
            format!("a_key color {got} vs {closed} for {candidate:?}/{gold_answer:?}"),
        )?;
    }
    within(Duration::from_secs(10), started)?;
    Ok(format!("500 instances, worked nDCG {worked:.4}"))
}

fn criterion_8(f: &Fixture) -> Outcome {
    let cases = &f.eval.cases;
    let ranked = |case: &memqa_core::eval::BenchmarkCase| -> Result<Vec<String>, String> {
        f.engine
            .retrieve_from(&case.recall_query(), &case.candidate_ids)
            .map(|r| r.candidates.into_iter().map(|c| c.memory_id).collect())
            .map_err(|e| e.to_string())
    };
    let lookup = |id: &str| f.engine.store().get_memory(id);
    let opts = SftOptions {
        seed: 11,
        ..SftOptions::default()
    };
    let run = || -> Result<(Vec<u8>, Vec<memqa_core::answer::SftExample>), String> {
        let (examples, _) = build_sft_dataset(cases, ranked, lookup, &opts);
        let mut buf = Vec::new();
        write_sft_jsonl(&examples, &mut buf).map_err(|e| e.to_string())?;
        Ok((buf, examples))
    };
    let (a, examples) = run()?;
    let (b, _) = run()?;
    ensure(a == b, "seeded runs differ")?;
    ensure(
        examples.len() == cases.len(),
        format!("{} of {} cases emitted", examples.len(), cases.len()),
    )?;
    let mut negatives_seen = [0usize; 3];
    for (case, ex) in cases.iter().zip(&examples) {
        let have: BTreeSet<&String> = ex.candidate_ids.iter().collect();
        ensure(
            case.positive_ids.iter().all(|p| have.contains(p)),
            format!("{} lost a positive", case.question_id),
        )?;
        let negatives: BTreeSet<String> = ex
            .candidate_ids
            .iter()
            .filter(|id| !case.positive_ids.contains(id))
            .cloned()
            .collect();
        ensure(
            negatives.len() <= 2,
            format!("{} has {} negatives", case.question_id, negatives.len()),
        )?;
        let top: BTreeSet<String> = ranked(case)?
            .into_iter()
            .filter(|id| !case.positive_ids.contains(id))
            .take(negatives.len())
            .collect();
        ensure(
            top == negatives,
            format!(
                "{} negatives are not the top non-positives",
                case.question_id
            ),
        )?;
        negatives_seen[negatives.len()] += 1;
    }
    Ok(format!(
        "{} examples, byte-identical reruns, negatives 0/1/2: {:?}",
        examples.len(),
        negatives_seen
    ))
}

fn golden(name: &str) -> Result<String, String> {
    let path: PathBuf =
        Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("../core/tests/golden/{name}.txt"));
    std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))
}

fn criterion_9() -> Outcome {
    let e = |err: &dyn std::fmt::Display| err.to_string();
    let q = RecallQuery::new("where did I park yesterday", MONDAY_NOON);
    let parked = AugmentedMemory {
        entry: MemoryEntry::new(
            "m1",
            "remember where I parked",
            1_714_901_400,
            "500 Main St, Seattle, WA",
        ),
        clue: AuxiliaryClue {
            ocr_text: "P2 142".into(),
            image_caption: "A parking garage pillar marked 142.".into(),
            invocation_completion: "remember I parked at slot 142".into(),
        },
        embedding: None,
    };
    let candidates = r#"[{"memory_id":"m1","created_datetime":"2024-05-05 09:30 Sunday","description":"remember where I parked","visual_content":"remember I parked at slot 142 A parking garage pillar marked 142.","ocr_text":"P2 142","address":"500 Main St, Seattle, WA"}]"#;
    let rendered = [
        (
            "datetime_parse",
            LlmDateParser::prompt(&q).map_err(|x| e(&x))?,
        ),
        (
            "answer_generation",
            render(
                TemplateId::AnswerGeneration,
                &[
                    ("{current_date_time}", "2024-05-06 12:00 Monday"),
                    ("{memory_candidates}", candidates),
                    ("{user_query}", "where did I park yesterday"),
                ],
            )
            .map_err(|x| e(&x))?,
        ),
        (
            "answer_generation_multitask",
            build_prompt(&q, &[parked], 20).map_err(|x| e(&x))?,
        ),
        (
            "auto_judge",
            judge_prompt(
                "where did I park my car?",
                "level 3, spot B12",
                "You parked on level 3 at spot B12.",
            )
            .map_err(|x| e(&x))?,
        ),
        (
            "invocation_completion",
            CaptionRequest::new(
                &MemoryEntry::new("m1", "remember the restaurant", MONDAY_NOON, ""),
                TemplateId::InvocationCompletion,
            )
            .map_err(|x| e(&x))?
            .render(),
        ),
        (
            "qa_guided_description",
            CaptionRequest::new(
                &MemoryEntry::new("m1", "remember this", MONDAY_NOON, "").with_image("img.jpg"),
                TemplateId::QaGuidedDescription,
            )
            .map_err(|x| e(&x))?
            .render(),
        ),
    ];
    for (name, text) in &rendered {
        ensure(
            *text == golden(name)?,
            format!("{name} differs from its golden file"),
        )?;
    }
    Ok(format!("{} templates byte-identical", rendered.len()))
}

async fn call(
    app: &axum::Router,
    path: &str,
    body: Value,
) -> Result<(StatusCode, Vec<u8>), String> {
    let req = Request::post(path)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .map_err(|e| e.to_string())?;
    let resp = app.clone().oneshot(req).await.map_err(|e| e.to_string())?;
    let status = resp.status();
    let bytes = resp
        .into_body()
        .collect()
        .await
        .map_err(|e| e.to_string())?
        .to_bytes();
    Ok((status, bytes.to_vec()))
}

/// record -> augment -> retrieve -> answer over HTTP; returns every response body.
async fn round_trip() -> Result<Vec<Vec<u8>>, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let bench = generate(&SynthOptions {
        seed: 21,
        cases: 3,
        ..SynthOptions::default()
    });
    bench.write_to(dir.path()).map_err(|e| e.to_string())?;
    let engine = Engine::new(
        Arc::new(MemoryStore::in_memory(256)),
        Arc::new(HashingEmbedder::new(256)),
    )
    .map_err(|e| e.to_string())?
    .with_generator(Some(AnswerGenerator::new(Arc::new(
        MockBackend::new(bench.generator_rules.clone()).with_fallback(UNKNOWN_RESPONSE),
    ))));
    let state = AppState {
        engine: Arc::new(engine),
        augmenter: Arc::new(Augmenter::uniform(Arc::new(MockSidecarProvider::new(
            dir.path().join("images"),
        )))),
    };
    let app = router(state);
    let mut bodies = Vec::new();
    for m in &bench.memories {
        let mut body = serde_json::to_value(m).map_err(|e| e.to_string())?;
        body["augment"] = json!(true);
        let (status, bytes) = call(&app, "/v1/memories", body).await?;
        ensure(
            status == StatusCode::CREATED,
            format!("create {}: {status}", m.id),
        )?;
        bodies.push(bytes);
    }
    for case in &bench.cases {
        let q = json!({"question": case.question, "asked_at": case.query_time, "tz_offset_minutes": case.tz_offset_minutes});
        let (status, retrieved) = call(&app, "/v1/query", q.clone()).await?;
        ensure(status == StatusCode::OK, format!("retrieve: {status}"))?;
        let mut q = q;
        q["mode"] = json!("answer");
        let (status, answered) = call(&app, "/v1/query", q).await?;
        ensure(status == StatusCode::OK, format!("answer: {status}"))?;
        let v: Value = serde_json::from_slice(&answered).map_err(|e| e.to_string())?;
        let returned: HashSet<&str> = v["retrieval"]["candidates"]
            .as_array()
            .into_iter()
            .flatten()
            .filter_map(|c| c["memory_id"].as_str())
            .collect();
        let id_list: Vec<&str> = v["answer"]["id_list"]
            .as_array()
            .into_iter()
            .flatten()
            .filter_map(Value::as_str)
            .collect();
        ensure(
            !id_list.is_empty(),
            format!("{}: empty id_list", case.question_id),
        )?;
        ensure(
            id_list.iter().all(|id| returned.contains(id)),
            format!(
                "{}: id_list {id_list:?} not within candidates",
                case.question_id
            ),
        )?;
        ensure(
            v["answer"]["response"] == json!(case.gold_answer),
            format!("{}: {}", case.question_id, v["answer"]),
        )?;
        bodies.push(retrieved);
        bodies.push(answered);
    }
    Ok(bodies)
}

fn criterion_10() -> Outcome {
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    let first = rt.block_on(round_trip())?;
    let second = rt.block_on(round_trip())?;
    ensure(first == second, "repeated runs differ")?;
    Ok(format!(
        "{} responses byte-identical across runs",
        first.len()
    ))
}

fn main() {
    let fixture = fixture();
    let with_fixture = |run: fn(&Fixture) -> Outcome| match &fixture {
        Ok(f) => run(f),
        Err(e) => Err(format!("synthetic fixture: {e}")),
    };
    let results: Vec<(usize, &str, Outcome)> = vec![
        (1, "recency formula", criterion_1()),
        (2, "datetime parsing fixtures", criterion_2()),
        (3, "BM25 oracle equivalence", criterion_3()),
        (4, "fusion invariances", criterion_4()),
        (5, "RankSVM sanity", with_fixture(criterion_5)),
        (6, "synthetic end-to-end", with_fixture(criterion_6)),
        (7, "metric oracles", criterion_7()),
        (8, "SFT builder contract", with_fixture(criterion_8)),
        (9, "prompt fidelity", criterion_9()),
        (10, "service round-trip", criterion_10()),
    ];
    let mut failed = 0;
    for (n, name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS criterion {n} ({name}): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {n} ({name}): {why}");
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        results.len() - failed,
        results.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
