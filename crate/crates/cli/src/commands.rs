use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use mmrag_core::corpus::{load_qa, read_jsonl, read_qa, save_qa, write_jsonl, CorpusOptions};
use mmrag_core::dataset::{build_noise_injected_qa, build_ranking_dataset, save_noise_injected};
use mmrag_core::eval::{evaluate, EvalSettings, QueryOutcome};
use mmrag_core::index::MipsSearch;
use mmrag_core::noise::{distort_image, stepwise_distort};
use mmrag_core::pipeline::{outcome, Backends, Pipeline};
use mmrag_core::rerank::{apply_threshold, Reranker};
use mmrag_core::synthetic::{generate, SyntheticSpec};
use mmrag_core::threshold::{calibrate, CalibrationSample};
use mmrag_core::{
    Corpus, EmbeddingMatrix, ImageTensor, Memory, NoiseSchedule, PipelineConfig, QaExample,
    RetrievalResult, TemplateKind, Threshold, ThresholdSource,
};
use serde::{Deserialize, Serialize};

use crate::{
    CalibrateArgs, Cli, Command, CorpusArgs, DataCommand, DistortArgs, EvalArgs, IndexCommand,
    RerankArgs, RetrieveArgs, RunArgs, SynthArgs, ThresholdArgs,
};

/// One scored candidate, the input to calibration.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RecallLine {
    qid: String,
    record_id: String,
    p: f64,
    correct: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ThresholdFile {
    eta: f64,
    source: ThresholdSource,
}

/// One line of a predictions file.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Prediction {
    qid: String,
    prediction: String,
    retrieved_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reranked_ids: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fed_ids: Option<Vec<String>>,
}

struct Session {
    config: PipelineConfig,
    seed: u64,
}

pub fn dispatch(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let ctx = Session {
        seed: config.seed,
        config,
    };
    match cli.command {
        Command::Index(IndexCommand::Build(a)) => {
            index_build(&ctx, &a.corpus, a.embeddings.as_deref(), &a.out)
        }
        Command::Index(IndexCommand::Query(a)) => {
            index_query(&ctx, &a.corpus, &a.embeddings, &a.question, a.k)
        }
        Command::Retrieve(a) => retrieve(&ctx, &a),
        Command::Rerank(a) => rerank(&ctx, &a),
        Command::Calibrate(a) => calibrate_cmd(&a),
        Command::Data(DataCommand::Rank(a)) => {
            let corpus = load_corpus(&a.corpus)?;
            let qa = load_qa(&a.qa, &corpus)?;
            let template: TemplateKind = a.template.parse()?;
            let ds = build_ranking_dataset(&qa, &corpus, a.negs, template, ctx.seed)?;
            ds.save(&a.out)?;
            println!(
                "wrote {} ranking examples to {} ({} queries skipped)",
                ds.examples.len(),
                a.out.display(),
                ds.skipped.len()
            );
            Ok(())
        }
        Command::Data(DataCommand::Noise(a)) => {
            let corpus = load_corpus(&a.corpus)?;
            let qa = load_qa(&a.qa, &corpus)?;
            let items = build_noise_injected_qa(&qa, &corpus, a.max_images, ctx.seed)?;
            save_noise_injected(&items, &a.out)?;
            let padded = items.iter().filter(|i| i.fallback_padding).count();
            println!(
                "wrote {} noise-injected examples to {} ({padded} padded from the corpus)",
                items.len(),
                a.out.display()
            );
            Ok(())
        }
        Command::Distort(a) => distort(&ctx, &a),
        Command::Eval(a) => eval(&ctx, &a),
        Command::Run(a) => run(&ctx, &a),
        Command::Synth(a) => synth(&ctx, &a),
    }
}

fn load_corpus(args: &CorpusArgs) -> Result<Corpus> {
    let options = CorpusOptions {
        caption_less: args.caption_less,
    };
    Corpus::load_with(&args.corpus, &options)
        .with_context(|| format!("loading corpus {}", args.corpus.display()))
}

fn load_memory(corpus: &Corpus, path: &Path) -> Result<Memory> {
    let emb = EmbeddingMatrix::load(path)
        .with_context(|| format!("loading embeddings {}", path.display()))?;
    Ok(Memory::build(corpus, &emb)?)
}

fn resolve_threshold(config: &PipelineConfig, args: &ThresholdArgs) -> Result<Threshold> {
    if let Some(eta) = args.eta {
        return Ok(Threshold::manual(eta)?);
    }
    if let Some(path) = &args.threshold {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading threshold {}", path.display()))?;
        let file: ThresholdFile = serde_json::from_str(&text)
            .with_context(|| format!("parsing threshold {}", path.display()))?;
        let t = Threshold {
            eta: file.eta,
            source: file.source,
            curves: None,
        };
        t.validate()?;
        return Ok(t);
    }
    Ok(config.threshold.clone())
}

fn index_build(
    ctx: &Session,
    corpus: &CorpusArgs,
    embeddings: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let corpus = load_corpus(corpus)?;
    let matrix = match embeddings {
        Some(path) => {
            let m = EmbeddingMatrix::load(path)?;
            Memory::build(&corpus, &m)?;
            m
        }
        None => {
            let backends = Backends::from_config(&ctx.config.backends, &corpus, &[])?;
            let mut rows = Vec::with_capacity(corpus.len());
            for record in corpus.iter() {
                let v = backends
                    .embedder
                    .embed_image(&record.image_ref)
                    .with_context(|| format!("embedding {}", record.id))?;
                rows.push((record.id.clone(), v));
            }
            let dim = rows.first().map_or(0, |r| r.1.len());
            EmbeddingMatrix::from_rows(dim, rows)?
        }
    };
    matrix.save(out)?;
    println!(
        "indexed {} records of dim {} into {}",
        matrix.len(),
        matrix.dim(),
        out.display()
    );
    Ok(())
}

fn index_query(
    ctx: &Session,
    corpus: &CorpusArgs,
    embeddings: &Path,
    question: &str,
    k: Option<usize>,
) -> Result<()> {
    let corpus = load_corpus(corpus)?;
    let memory = load_memory(&corpus, embeddings)?;
    let backends = Backends::from_config(&ctx.config.backends, &corpus, &[])?;
    let query = backends.embedder.embed_text(question)?;
    let result = memory.search("query", &query, k.unwrap_or(ctx.config.k))?;
    println!("{}", serde_json::to_string_pretty(&result)?);
    Ok(())
}

fn retrieve(ctx: &Session, a: &RetrieveArgs) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let qa = load_qa(&a.qa, &corpus)?;
    let memory = load_memory(&corpus, &a.embeddings)?;
    let mut config = ctx.config.clone();
    if let Some(k) = a.k {
        config.k = k;
        config.n = config.n.min(k);
    }
    let backends = Backends::from_config(&config.backends, &corpus, &qa)?;
    let pipeline = Pipeline::new(config, &memory, &corpus, &backends)?;
    let results = qa
        .iter()
        .map(|q| pipeline.retrieve(&q.qid, &q.question))
        .collect::<mmrag_core::Result<Vec<_>>>()?;
    write_jsonl(&a.out, &results)?;
    println!(
        "wrote {} retrieval results to {}",
        results.len(),
        a.out.display()
    );
    Ok(())
}

fn rerank(ctx: &Session, a: &RerankArgs) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let qa = load_qa(&a.qa, &corpus)?;
    let by_qid: HashMap<&str, &QaExample> = qa.iter().map(|q| (q.qid.as_str(), q)).collect();
    let retrieved: Vec<RetrievalResult> = read_jsonl(&a.retrieved)?;
    let backends = Backends::from_config(&ctx.config.backends, &corpus, &qa)?;
    let template = match &a.template {
        Some(t) => t.parse()?,
        None => ctx.config.template,
    };
    let n = a.n.unwrap_or(ctx.config.n);
    if n == 0 {
        bail!("N must be at least 1");
    }
    let threshold = resolve_threshold(&ctx.config, &a.threshold)?;
    let filter = a.threshold.eta.is_some() || a.threshold.threshold.is_some();
    let reranker = Reranker::new(backends.scorer.as_ref())
        .template(template)
        .max_inflight(ctx.config.max_inflight);

    let mut sets = Vec::with_capacity(retrieved.len());
    let mut recalls = Vec::new();
    for r in &retrieved {
        let q = by_qid
            .get(r.query_id.as_str())
            .with_context(|| format!("retrieved query `{}` is not in the QA file", r.query_id))?;
        // Score all K once; the recalls need every candidate, the output only the top N.
        let mut all = reranker.rerank(r, &corpus, &q.question, r.candidates.len().max(1))?;
        let gold: BTreeSet<&str> = q.positive_ids.iter().map(String::as_str).collect();
        recalls.extend(all.candidates.iter().map(|c| RecallLine {
            qid: q.qid.clone(),
            record_id: c.id.clone(),
            p: c.relevance_p,
            correct: gold.contains(c.id.as_str()),
        }));
        all.candidates.truncate(n);
        sets.push(if filter {
            apply_threshold(&all, &threshold)?
        } else {
            all
        });
    }
    write_jsonl(&a.out, &sets)?;
    if let Some(path) = &a.recalls {
        write_jsonl(path, &recalls)?;
    }
    println!("wrote {} reranked sets to {}", sets.len(), a.out.display());
    Ok(())
}

fn calibrate_cmd(a: &CalibrateArgs) -> Result<()> {
    let lines: Vec<RecallLine> = read_jsonl(&a.recalls)?;
    let samples: Vec<CalibrationSample> = lines
        .iter()
        .map(|l| CalibrationSample {
            relevance_p: l.p,
            is_correct: l.correct,
        })
        .collect();
    let t = calibrate(&samples, a.grid)?;
    let file = ThresholdFile {
        eta: t.eta,
        source: t.source,
    };
    fs::write(&a.out, serde_json::to_string_pretty(&file)? + "\n")
        .with_context(|| format!("writing {}", a.out.display()))?;
    if let (Some(dir), Some(curves)) = (&a.curves, &t.curves) {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("positive.txt"), curves.positive.to_columns())?;
        fs::write(dir.join("negative.txt"), curves.negative.to_columns())?;
    }
    println!(
        "eta = {:.4} ({:?}) from {} recalls",
        t.eta,
        t.source,
        samples.len()
    );
    Ok(())
}

fn distort(ctx: &Session, a: &DistortArgs) -> Result<()> {
    let input = ImageTensor::load(&a.input)?;
    let schedule = NoiseSchedule::new(a.gamma, a.steps)?;
    let out = if a.stepwise {
        stepwise_distort(&input, schedule, ctx.seed)?
    } else {
        distort_image(&input, schedule, ctx.seed)?
    };
    out.save(&a.out)?;
    println!("wrote {:?} tensor to {}", out.shape(), a.out.display());
    Ok(())
}

fn eval(ctx: &Session, a: &EvalArgs) -> Result<()> {
    let qa = read_qa(&a.qa)?;
    let predictions: Vec<Prediction> = read_jsonl(&a.predictions)?;
    let by_qid: HashMap<&str, &QaExample> = qa.iter().map(|q| (q.qid.as_str(), q)).collect();
    let mut seen = BTreeSet::new();
    let mut outcomes = Vec::with_capacity(predictions.len());
    for p in predictions {
        let q = by_qid
            .get(p.qid.as_str())
            .with_context(|| format!("prediction for unknown query `{}`", p.qid))?;
        if !seen.insert(p.qid.clone()) {
            bail!("duplicate prediction for query `{}`", p.qid);
        }
        outcomes.push(QueryOutcome {
            qid: p.qid,
            gold_ids: q.positive_ids.iter().cloned().collect(),
            answers: q.answers.clone(),
            retrieved_ids: p.retrieved_ids,
            reranked_ids: p.reranked_ids,
            fed_ids: p.fed_ids,
            prediction: p.prediction,
        });
    }
    let missing = qa.len() - outcomes.len();
    if missing > 0 {
        log::warn!("{missing} queries have no prediction and count as failed");
    }
    let report = evaluate(
        &outcomes,
        &EvalSettings::for_depths(ctx.config.k, ctx.config.n),
        missing,
    )?;
    print!("{report}");
    if let Some(out) = &a.out {
        fs::write(out, report.to_json())?;
    }
    Ok(())
}

fn run(ctx: &Session, a: &RunArgs) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let qa = load_qa(&a.qa, &corpus)?;
    let memory = load_memory(&corpus, &a.embeddings)?;
    let mut config = ctx.config.clone();
    config.threshold = resolve_threshold(&config, &a.threshold)?;
    let backends = Backends::from_config(&config.backends, &corpus, &qa)?;
    let pipeline = Pipeline::new(config, &memory, &corpus, &backends)?;
    let result = pipeline.run_eval(&qa)?;

    fs::create_dir_all(&a.out_dir)?;
    write_jsonl(a.out_dir.join("traces.jsonl"), &result.traces)?;
    write_jsonl(a.out_dir.join("failures.jsonl"), &result.failures)?;
    let by_qid: HashMap<&str, &QaExample> = qa.iter().map(|q| (q.qid.as_str(), q)).collect();
    let predictions: Vec<Prediction> = result
        .traces
        .iter()
        .map(|t| {
            let o = outcome(by_qid[t.qid.as_str()], t);
            Prediction {
                qid: o.qid,
                prediction: o.prediction,
                retrieved_ids: o.retrieved_ids,
                reranked_ids: o.reranked_ids,
                fed_ids: o.fed_ids,
            }
        })
        .collect();
    write_jsonl(a.out_dir.join("predictions.jsonl"), &predictions)?;
    fs::write(a.out_dir.join("report.json"), result.report.to_json())?;
    print!("{}", result.report);
    Ok(())
}

fn synth(ctx: &Session, a: &SynthArgs) -> Result<()> {
    let spec = SyntheticSpec {
        queries: a.queries,
        seed: ctx.seed,
        ..SyntheticSpec::default()
    };
    let data = generate(&spec)?;
    fs::create_dir_all(&a.out_dir)?;
    data.corpus.save(a.out_dir.join("corpus.jsonl"))?;
    save_qa(&data.qa, a.out_dir.join("qa.jsonl"))?;
    data.embeddings.save(a.out_dir.join("embeddings.emb"))?;
    let mut config = PipelineConfig {
        seed: ctx.seed,
        ..PipelineConfig::default()
    };
    if let mmrag_core::pipeline::BackendSpec::Mock { dim, .. } = &mut config.backends.embedder {
        *dim = spec.dim;
    }
    fs::write(a.out_dir.join("config.toml"), config.to_toml())?;
    println!(
        "wrote {} records and {} questions to {}",
        data.corpus.len(),
        data.qa.len(),
        a.out_dir.display()
    );
    Ok(())
}
