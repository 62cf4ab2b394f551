use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use log::info;
use rayon::prelude::*;
use serde_json::json;
use stepground_core::corpus::{ingest_corpus, read_index, write_index, EmbeddingSource};
use stepground_core::embedder::load_vectors;
use stepground_core::evalkit::{macro_accuracy, parse_split_map, read_transcript};
use stepground_core::grpo::{swap_modes, train_with, ProcedureGrammar};
use stepground_core::service::{probe, Engine, EngineConfig, Reply, Server};
use stepground_core::{
    grounding_score, AlignConfig, CorpusIndex, Embedder, HashFeatureEmbedder, RewardConfig, StepSequence,
};

use crate::args::{AlignScoreArgs, BuildArgs, EngineFlags, EvalArgs, ProbeArgs, ScoreArgs, ServeArgs, SimulateArgs};
use crate::exit::Failure;

/// Diversity threshold used in the simulate summary.
const MODE_MIN_PROB: f64 = 0.1;

pub fn index_build(args: &BuildArgs) -> Result<(), Failure> {
    if args.out.exists() {
        let non_empty = fs::read_dir(&args.out)
            .map_err(|e| Failure::data(format!("{}: {e}", args.out.display())))?
            .next()
            .is_some();
        if non_empty && !args.force {
            return Err(Failure::Usage(format!(
                "{} exists and is not empty; pass --force to overwrite",
                args.out.display()
            )));
        }
    }
    let embedder;
    let source = match &args.embeddings {
        Some(path) => EmbeddingSource::Precomputed {
            matrix: load_vectors(path)?,
            tag: args.embedder_tag.clone(),
            expected_dim: None,
        },
        None => {
            embedder = HashFeatureEmbedder::new(args.dim, args.embed_seed)?;
            EmbeddingSource::Compute(&embedder)
        }
    };
    let (index, report) = ingest_corpus(&args.narrations, source)?;
    write_index(&index, &args.out)?;
    let summary = json!({ "manifest": index.manifest(), "report": report });
    println!("{}", serde_json::to_string_pretty(&summary).expect("serializable"));
    Ok(())
}

fn corpus_embedder(index: &CorpusIndex) -> Option<Box<dyn Embedder>> {
    HashFeatureEmbedder::from_tag(&index.manifest().embedder).map(|e| Box::new(e) as Box<dyn Embedder>)
}

pub fn align_score(args: &AlignScoreArgs) -> Result<(), Failure> {
    let steps: Vec<String> = match &args.steps_file {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?
        }
        None => args.steps.clone(),
    };
    if steps.is_empty() {
        return Err(Failure::Usage("give at least one --step or a --steps-file".into()));
    }
    let index = read_index(&args.index.index)?;
    let embedder = corpus_embedder(&index).ok_or_else(|| {
        Failure::data(format!(
            "index embedder {} cannot embed text; align precomputed vectors through the service instead",
            index.manifest().embedder
        ))
    })?;
    let cfg = args.align.overrides().apply(&AlignConfig::default());
    let seq = StepSequence::embed(steps, embedder.as_ref());
    let grounding = grounding_score(&seq, &index, &cfg)?;
    println!("{}", serde_json::to_string_pretty(&grounding).expect("serializable"));
    Ok(())
}

fn build_engine(flags: &EngineFlags) -> Result<Engine, Failure> {
    let index = read_index(&flags.index.index)?;
    let embedder = corpus_embedder(&index);
    if embedder.is_none() {
        log::warn!(
            "index embedder {} is not built in; only inline vectors can be scored",
            index.manifest().embedder
        );
    }
    let config = EngineConfig {
        align: flags.align.overrides().apply(&AlignConfig::default()),
        reward: flags.reward.overrides().apply(&RewardConfig::default()),
        max_steps: flags.max_steps,
    };
    Ok(Engine::new(Arc::new(index), embedder, config)?)
}

fn worker_pool(workers: Option<usize>) -> Result<rayon::ThreadPool, Failure> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        if n == 0 {
            return Err(Failure::Usage("--workers must be at least 1".into()));
        }
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Failure::data(e.to_string()))
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| Failure::data(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

pub fn score(args: &ScoreArgs) -> Result<(), Failure> {
    let engine = build_engine(&args.engine)?;
    let pool = worker_pool(args.engine.workers)?;
    let lines: Vec<String> = if args.requests.as_os_str() == "-" {
        io::stdin().lock().lines().collect::<io::Result<_>>()
    } else {
        let f = File::open(&args.requests).map_err(|e| Failure::data(format!("{}: {e}", args.requests.display())))?;
        BufReader::new(f).lines().collect::<io::Result<_>>()
    }
    .map_err(|e| Failure::data(format!("{}: {e}", args.requests.display())))?;
    let lines: Vec<&str> = lines.iter().map(|l| l.trim()).filter(|l| !l.is_empty()).collect();

    let replies: Vec<Reply> = pool.install(|| lines.par_iter().map(|l| engine.handle_line(l)).collect());
    let mut out = open_output(args.out.as_deref())?;
    let mut failed = 0;
    for mut reply in replies {
        if let Reply::Score(r) = &mut reply {
            if !args.timing {
                r.timing_ms = 0.0;
            }
        }
        if let Reply::Error(e) = &reply {
            failed += 1;
            log::warn!("request {:?} failed: {}", e.id, e.error.message);
        }
        writeln!(out, "{}", reply.to_line()).map_err(|e| Failure::data(e.to_string()))?;
    }
    out.flush().map_err(|e| Failure::data(e.to_string()))?;
    info!("scored {} requests, {} failed", lines.len(), failed);
    if failed > 0 {
        return Err(Failure::Partial {
            failed,
            total: lines.len(),
        });
    }
    Ok(())
}

pub fn serve(args: &ServeArgs) -> Result<(), Failure> {
    let engine = build_engine(&args.engine)?;
    let workers = args
        .engine
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let server = Server::bind(args.bind.as_str(), Arc::new(engine), workers)?;
    // first stdout line carries the bound address, so callers can bind port 0
    println!("listening {}", server.local_addr());
    io::stdout().flush().ok();
    server.run()?;
    Ok(())
}

pub fn probe_cmd(args: &ProbeArgs) -> Result<(), Failure> {
    let health = probe(args.addr.as_str(), Duration::from_millis(args.timeout_ms))?;
    println!("{}", serde_json::to_string_pretty(&health).expect("serializable"));
    Ok(())
}

pub fn simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let cfg = args.config();
    let acfg = args.align.overrides().apply(&AlignConfig::default());
    let rcfg = args.reward.overrides().apply(&RewardConfig::default());
    let grammar = ProcedureGrammar::default_world();
    let outcome = train_with(&cfg, &grammar, acfg, rcfg)?;

    fs::create_dir_all(&args.out).map_err(|e| Failure::data(format!("{}: {e}", args.out.display())))?;
    let curve_path = args.out.join("curve.csv");
    fs::write(&curve_path, outcome.curve.to_csv())
        .map_err(|e| Failure::data(format!("{}: {e}", curve_path.display())))?;
    let modes = swap_modes(&outcome.policy, &grammar, cfg.horizon, MODE_MIN_PROB);
    let summary = json!({
        "config": cfg,
        "align": acfg,
        "reward": rcfg,
        "first_decile_mean": outcome.curve.first_decile_mean(),
        "last_decile_mean": outcome.curve.last_decile_mean(),
        "improvement": outcome.curve.improvement(),
        "noise": outcome.world.noise,
        "swap_modes": modes,
        "mode_min_prob": MODE_MIN_PROB,
    });
    let text = serde_json::to_string_pretty(&summary).expect("serializable");
    let summary_path = args.out.join("summary.json");
    fs::write(&summary_path, &text).map_err(|e| Failure::data(format!("{}: {e}", summary_path.display())))?;
    println!("{text}");
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Result<(), Failure> {
    let f = File::open(&args.transcript).map_err(|e| Failure::data(format!("{}: {e}", args.transcript.display())))?;
    let examples = read_transcript(BufReader::new(f))?;
    let splits_text =
        fs::read_to_string(&args.splits).map_err(|e| Failure::data(format!("{}: {e}", args.splits.display())))?;
    let splits = parse_split_map(&splits_text)?;
    let report = macro_accuracy(&examples, &splits)?;
    if let Some(path) = &args.report {
        let text = serde_json::to_string_pretty(&report).expect("serializable");
        fs::write(path, text).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    }
    print!("{}", report.to_csv(&args.model));
    Ok(())
}
