use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use memqa_core::answer::{build_sft_dataset, write_sft_jsonl, SftOptions};
use memqa_core::augment::ProviderConfig;
use memqa_core::config::{BackendConfig, EngineConfig};
use memqa_core::eval::{load_benchmark, rank_training_set, run_benchmark, BenchmarkOptions};
use memqa_core::fusion::{train_weights_with, RerankStrategy, TrainOptions};
use memqa_core::memory::{MemoryRecord, RecallQuery};
use memqa_core::retrieval::Engine;
use memqa_core::synthetic::{generate, SynthOptions, UNKNOWN_RESPONSE};
use memqa_server::AppState;

#[derive(Parser)]
#[command(
    name = "memqa",
    version,
    about = "Record, retrieve and answer questions about personal memories"
)]
struct Cli {
    /// Engine config file (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Store file, overriding the config.
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load memories.jsonl into the store.
    Ingest { file: PathBuf },
    /// Run the augmentation providers over stored memories.
    Augment {
        /// Re-augment memories that already have a clue.
        #[arg(long)]
        all: bool,
    },
    /// Rank memories for a question, or answer it.
    Query {
        question: String,
        /// UTC epoch seconds; defaults to now.
        #[arg(long)]
        asked_at: Option<i64>,
        #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
        tz_offset_minutes: i32,
        #[arg(long)]
        answer: bool,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        strategy: Option<RerankStrategy>,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Evaluate a benchmark and write report.json and cases.jsonl.
    Eval {
        #[arg(long)]
        bench: PathBuf,
        #[arg(long)]
        strategy: Option<RerankStrategy>,
        #[arg(long)]
        k: Option<usize>,
        /// Also generate and score answers.
        #[arg(long)]
        answers: bool,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Fit fusion weights with RankSVM on a benchmark.
    TrainWeights {
        #[arg(long)]
        bench: PathBuf,
        #[arg(long, default_value = "weights.json")]
        weights_out: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        c: f64,
    },
    /// Start the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
    },
    /// Rewrite the store log with one line per memory.
    Compact,
    /// Generate a synthetic benchmark directory with mock sidecars and a config.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 200)]
        cases: usize,
    },
    /// Build noise-injected fine-tuning examples from a benchmark.
    Sft {
        #[arg(long)]
        bench: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load_config(cli: &Cli) -> Result<EngineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => EngineConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => {
            let mut c = EngineConfig::default();
            c.resolve_paths(&std::env::current_dir()?);
            c
        }
    };
    if let Some(s) = &cli.store {
        cfg.store_path = s.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Ingest { file } => ingest(&cfg, &file),
        Command::Augment { all } => augment(&cfg, all),
        Command::Query {
            question,
            asked_at,
            tz_offset_minutes,
            answer,
            k,
            strategy,
            json,
        } => {
            let asked_at = asked_at.unwrap_or_else(now);
            let q = RecallQuery::new(question, asked_at).with_offset(tz_offset_minutes);
            let engine = engine_with(&cfg, strategy, k)?;
            query(&engine, &q, answer, json)
        }
        Command::Eval {
            bench,
            strategy,
            k,
            answers,
            out,
        } => eval(&cfg, &bench, strategy, k, answers, &out),
        Command::TrainWeights {
            bench,
            weights_out,
            c,
        } => train(&cfg, &bench, &weights_out, c),
        Command::Serve { port, host } => serve(&cfg, std::net::SocketAddr::new(host, port)),
        Command::Compact => {
            let encoder = cfg.embedder.build()?;
            let store = cfg.open_store(encoder.dim())?;
            store.compact()?;
            println!("compacted {} memories", store.len());
            Ok(())
        }
        Command::Synth { out, seed, cases } => synth(&out, seed.unwrap_or(cfg.seed), cases),
        Command::Sft { bench, out, seed } => sft(&cfg, &bench, &out, seed.unwrap_or(cfg.seed)),
    }
}

fn now() -> i64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs() as i64)
        .unwrap_or(0)
}

fn engine_with(
    cfg: &EngineConfig,
    strategy: Option<RerankStrategy>,
    k: Option<usize>,
) -> Result<Engine> {
    let mut engine = cfg.build_engine()?;
    let mut settings = engine.settings().clone();
    if let Some(s) = strategy {
        settings.strategy = s;
    }
    if let Some(k) = k {
        if k == 0 {
            bail!("--k must be at least 1");
        }
        settings.k_retrieve = k;
        settings.k_generate = settings.k_generate.min(k);
    }
    engine = engine.with_settings(settings);
    Ok(engine)
}

fn ingest(cfg: &EngineConfig, file: &Path) -> Result<()> {
    let engine = cfg.build_engine()?;
    let reader = BufReader::new(
        std::fs::File::open(file).with_context(|| format!("opening {}", file.display()))?,
    );
    let mut n = 0;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: MemoryRecord =
            serde_json::from_str(&line).with_context(|| format!("{}:{}", file.display(), i + 1))?;
        record
            .entry()
            .validate()
            .map_err(|e| anyhow::anyhow!("{}:{}: {e}", file.display(), i + 1))?;
        engine.store().put_record(record)?;
        n += 1;
    }
    let embedded = engine.embed_missing()?;
    engine.store().flush()?;
    println!("ingested {n} memories ({embedded} embedded)");
    Ok(())
}

fn augment(cfg: &EngineConfig, all: bool) -> Result<()> {
    let engine = cfg.build_engine()?;
    let augmenter = cfg.build_augmenter()?;
    let ids: Vec<String> = engine
        .store()
        .scan(None)
        .into_iter()
        .filter(|m| all || m.clue.is_empty())
        .map(|m| m.entry.id)
        .collect();
    let results = engine.augment_stored(&ids, &augmenter, cfg.workers.augment);
    let mut failed = 0;
    for (id, r) in &results {
        match r {
            Ok(o) => {
                for w in &o.warnings {
                    eprintln!("warning: {id}: {}: {}", w.task.as_str(), w.message);
                }
            }
            Err(e) => {
                failed += 1;
                eprintln!("failed: {id}: {e}");
            }
        }
    }
    engine.store().flush()?;
    println!(
        "augmented {} of {} memories",
        results.len() - failed,
        results.len()
    );
    if failed > 0 {
        bail!("{failed} memories could not be augmented");
    }
    Ok(())
}

fn query(engine: &Engine, q: &RecallQuery, answer: bool, json: bool) -> Result<()> {
    let mut out = std::io::stdout().lock();
    if answer {
        let outcome = engine.answer(q)?;
        if json {
            writeln!(out, "{}", serde_json::to_string_pretty(&outcome)?)?;
        } else {
            writeln!(out, "{}", outcome.answer.response)?;
            writeln!(out, "memories: {}", outcome.answer.id_list.join(", "))?;
        }
        return Ok(());
    }
    let retrieval = engine.retrieve(q)?;
    if json {
        writeln!(out, "{}", serde_json::to_string_pretty(&retrieval)?)?;
        return Ok(());
    }
    for w in &retrieval.warnings {
        eprintln!("warning: {w}");
    }
    if retrieval.candidates.is_empty() {
        writeln!(out, "no memories")?;
        return Ok(());
    }
    writeln!(
        out,
        "{:>4}  {:<24} {:>8} {:>6} {:>6} {:>6} {:>6}",
        "rank", "memory", "fused", "r_t", "r_r", "r_l", "r_s"
    )?;
    for c in &retrieval.candidates {
        let s = c.signals;
        writeln!(
            out,
            "{:>4}  {:<24} {:>8.4} {:>6.3} {:>6.3} {:>6.3} {:>6.3}",
            c.rank, c.memory_id, c.fused, s.r_t, s.r_r, s.r_l, s.r_s
        )?;
    }
    Ok(())
}

fn eval(
    cfg: &EngineConfig,
    bench: &Path,
    strategy: Option<RerankStrategy>,
    k: Option<usize>,
    answers: bool,
    out: &Path,
) -> Result<()> {
    let cases = load_benchmark(bench)?;
    let engine = engine_with(cfg, strategy, k)?;
    if answers && !engine.has_generator() {
        bail!("--answers needs [backends.generator] in the config");
    }
    let opts = BenchmarkOptions {
        with_answers: answers,
        judge: cfg.build_judge()?,
        workers: cfg.workers.eval,
        ..BenchmarkOptions::default()
    };
    let report = run_benchmark(&cases, &engine, &opts)?;
    std::fs::create_dir_all(out)?;
    report.write(out)?;
    let m = &report.metrics;
    println!(
        "{} cases  recall@1 {:.4}  recall@5 {:.4}  ndcg@5 {:.4}  -> {}",
        m.cases,
        m.recall_at_1,
        m.recall_at_5,
        m.ndcg_at_5,
        out.join("report.json").display()
    );
    Ok(())
}

fn train(cfg: &EngineConfig, bench: &Path, weights_out: &Path, c: f64) -> Result<()> {
    let cases = load_benchmark(bench)?;
    let engine = cfg.build_engine()?;
    let set = rank_training_set(&cases, &engine)?;
    let report = train_weights_with(
        &set,
        &TrainOptions {
            c_reg: c,
            ..TrainOptions::default()
        },
    )?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    report.weights.save(weights_out)?;
    let w = &report.weights;
    println!(
        "w_t {:.4}  w_r {:.4}  w_l {:.4}  w_s {:.4}  ({} pairs, {} iterations) -> {}",
        w.w_t,
        w.w_r,
        w.w_l,
        w.w_s,
        report.pair_count,
        report.iterations,
        weights_out.display()
    );
    Ok(())
}

fn serve(cfg: &EngineConfig, addr: std::net::SocketAddr) -> Result<()> {
    let state = AppState {
        engine: Arc::new(cfg.build_engine()?),
        augmenter: Arc::new(cfg.build_augmenter()?),
    };
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(memqa_server::serve(state, addr))?;
    Ok(())
}

fn synth(out: &Path, seed: u64, cases: usize) -> Result<()> {
    let bench = generate(&SynthOptions {
        seed,
        cases,
        ..SynthOptions::default()
    });
    bench.write_to(out)?;
    let mut provider = ProviderConfig::mock();
    provider.sidecar_root = Some("images".into());
    let mut cfg = EngineConfig {
        store_path: "store.jsonl".into(),
        seed,
        ..EngineConfig::default()
    };
    cfg.providers.ocr = provider.clone();
    cfg.providers.caption = provider.clone();
    cfg.providers.completion = provider;
    cfg.backends.generator = Some(BackendConfig {
        mock_rules: Some("generator_rules.jsonl".into()),
        mock_fallback: Some(UNKNOWN_RESPONSE.into()),
        ..BackendConfig::mock()
    });
    std::fs::write(out.join("memqa.toml"), cfg.to_toml())?;
    println!(
        "wrote {} cases and {} memories to {}",
        bench.cases.len(),
        bench.memories.len(),
        out.display()
    );
    Ok(())
}

fn sft(cfg: &EngineConfig, bench: &Path, out: &Path, seed: u64) -> Result<()> {
    let cases = load_benchmark(bench)?;
    let engine = cfg.build_engine()?;
    let rank = |case: &memqa_core::eval::BenchmarkCase| {
        engine
            .retrieve_from(&case.recall_query(), &case.candidate_ids)
            .map(|r| r.candidates.into_iter().map(|c| c.memory_id).collect())
            .map_err(|e| e.to_string())
    };
    let (examples, summary) = build_sft_dataset(
        &cases,
        rank,
        |id| engine.store().get_memory(id),
        &SftOptions {
            seed,
            ..SftOptions::default()
        },
    );
    let file = std::fs::File::create(out).with_context(|| format!("creating {}", out.display()))?;
    write_sft_jsonl(&examples, std::io::BufWriter::new(file))?;
    println!(
        "wrote {} examples to {} ({} skipped)",
        summary.emitted,
        out.display(),
        summary.skipped.len()
    );
    Ok(())
}
