use std::path::Path;

use anyhow::{anyhow, Context};
use fcds::corpus::{
    load_corpus, load_schema, write_corpus, AnnotatedDocument, LabelSchema, SplitFiles,
};
use fcds::depgraph::{dump_graph, graph_distance_stats, pair_distances};
use fcds::diagnostics::{grad_check_suite, render_table};
use fcds::encoder::Vocabulary;
use fcds::metrics::{train_fact_names, MetricReport};
use fcds::synthetic::{generate, SyntheticSpec};
use fcds::train::{predict_corpus, train as run_training, TrainError};
use fcds::util::write_atomic;
use fcds::{Config, Model64};

use crate::{
    EvalArgs, GradCheckArgs, InspectArgs, PredictArgs, StatsArgs, SyntheticArgs, TrainArgs,
};

pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub const USAGE: u8 = 1;
    pub const DATA: u8 = 2;
    pub const NUMERIC: u8 = 3;

    fn usage(e: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: Self::USAGE,
            error: e.into(),
        }
    }

    fn data(e: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: Self::DATA,
            error: e.into(),
        }
    }

    fn numeric(e: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: Self::NUMERIC,
            error: e.into(),
        }
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFinite { .. } | TrainError::Tensor { .. } => Failure::numeric(e),
            TrainError::Metrics(_) | TrainError::EmptyCorpus => Failure::data(e),
        }
    }
}

type Outcome = Result<(), Failure>;

const SEED_VAR: &str = "FCDS_SEED";

fn env_seed() -> Result<Option<u64>, Failure> {
    match std::env::var(SEED_VAR) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::usage(anyhow!("{SEED_VAR}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn require_dir(path: &Path, flag: &str) -> Result<(), Failure> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Failure::usage(anyhow!(
            "--{flag} {}: no such directory",
            path.display()
        )))
    }
}

fn require_file(path: &Path, flag: &str) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::usage(anyhow!(
            "--{flag} {}: no such file",
            path.display()
        )))
    }
}

fn require_split(corpus: &Path, split: &str) -> Result<SplitFiles, Failure> {
    let files = SplitFiles::in_dir(corpus, split);
    require_file(&files.records, "corpus")?;
    Ok(files)
}

/// Output files must land in an existing directory.
fn require_parent(path: &Path, flag: &str) -> Result<(), Failure> {
    let parent = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    if parent.is_dir() {
        Ok(())
    } else {
        Err(Failure::usage(anyhow!(
            "--{flag} {}: directory {} does not exist",
            path.display(),
            parent.display()
        )))
    }
}

fn load_split(files: &SplitFiles, schema: &LabelSchema) -> Result<Vec<AnnotatedDocument>, Failure> {
    load_corpus(&files.records, schema)
        .with_context(|| format!("loading {}", files.records.display()))
        .map_err(Failure::data)
}

fn schema_of(corpus: &Path) -> Result<LabelSchema, Failure> {
    load_schema(corpus).map_err(Failure::data)
}

fn load_checkpoint(path: &Path) -> Result<Model64, Failure> {
    require_file(path, "ckpt")?;
    Model64::load(path).map(|(m, _)| m).map_err(Failure::data)
}

fn check_schema(model: &Model64, schema: &LabelSchema) -> Result<(), Failure> {
    if model.schema.names() != schema.names() {
        return Err(Failure::data(anyhow!(
            "checkpoint relations {:?} differ from corpus relations {:?}",
            model.schema.names(),
            schema.names()
        )));
    }
    Ok(())
}

fn write_out(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    write_atomic(path, bytes)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::data)
}

fn preset(name: &str) -> Result<Config, Failure> {
    Config::preset(name).ok_or_else(|| {
        Failure::usage(anyhow!(
            "unknown preset {name:?}; expected tiny, desk or full"
        ))
    })
}

pub fn train(a: TrainArgs) -> Outcome {
    let corpus = &a.corpus.corpus;
    require_dir(corpus, "corpus")?;
    let train_files = require_split(corpus, &a.train_split)?;
    if let Some(c) = &a.config {
        require_file(c, "config")?;
    }
    let log_path = a
        .log
        .clone()
        .unwrap_or_else(|| a.out.with_extension("metrics.jsonl"));
    require_parent(&a.out, "out")?;
    require_parent(&log_path, "log")?;

    let mut config = match &a.config {
        Some(path) => Config::load(path).map_err(Failure::usage)?,
        None => preset(&a.preset)?,
    };
    if let Some(seed) = env_seed()? {
        config.seed = seed;
    }
    let schema = schema_of(corpus)?;
    let train_docs = load_split(&train_files, &schema)?;
    let dev_files = SplitFiles::in_dir(corpus, &a.dev_split);
    let dev_docs = if dev_files.records.is_file() {
        Some(load_split(&dev_files, &schema)?)
    } else {
        None
    };

    let mut log = String::new();
    let quiet = a.quiet;
    let outcome = run_training::<f64>(config, schema, &train_docs, dev_docs.as_deref(), |r| {
        let line = r.to_json_line();
        if !quiet {
            eprintln!("{line}");
        }
        log.push_str(&line);
        log.push('\n');
    })?;
    outcome
        .model
        .save(&a.out, outcome.step)
        .map_err(Failure::data)?;
    write_out(&log_path, log.as_bytes())?;
    if !quiet {
        eprintln!(
            "wrote {} (step {}, best epoch {}) and {}",
            a.out.display(),
            outcome.step,
            outcome.best_epoch,
            log_path.display()
        );
    }
    Ok(())
}

pub fn eval(a: EvalArgs) -> Outcome {
    let corpus = &a.corpus.corpus;
    require_dir(corpus, "corpus")?;
    let files = require_split(corpus, &a.split)?;
    if let Some(out) = &a.out {
        require_parent(out, "out")?;
    }
    let model = load_checkpoint(&a.ckpt)?;
    let schema = schema_of(corpus)?;
    check_schema(&model, &schema)?;
    let docs = load_split(&files, &schema)?;
    let train_files = SplitFiles::in_dir(corpus, "train");
    let train_names = if train_files.records.is_file() && a.split != "train" {
        train_fact_names(&load_split(&train_files, &schema)?)
    } else {
        Default::default()
    };
    let preds = predict_corpus(&model, &docs)?;
    let report = MetricReport::compute(&preds, &docs, &train_names).map_err(Failure::data)?;
    let json = serde_json::to_string(&report).expect("report serialises");
    println!("{json}");
    print!("{}", report.render_table());
    if let Some(out) = &a.out {
        write_out(out, format!("{json}\n").as_bytes())?;
    }
    Ok(())
}

pub fn predict(a: PredictArgs) -> Outcome {
    let corpus = &a.corpus.corpus;
    require_dir(corpus, "corpus")?;
    let files = require_split(corpus, &a.split)?;
    require_parent(&a.out, "out")?;
    let model = load_checkpoint(&a.ckpt)?;
    let schema = schema_of(corpus)?;
    check_schema(&model, &schema)?;
    let docs = load_split(&files, &schema)?;
    let preds = predict_corpus(&model, &docs)?;
    let json = serde_json::to_string_pretty(preds.records()).expect("predictions serialise");
    write_out(&a.out, format!("{json}\n").as_bytes())?;
    eprintln!(
        "{} predictions for {} documents written to {}",
        preds.len(),
        docs.len(),
        a.out.display()
    );
    Ok(())
}

pub fn inspect_graph(a: InspectArgs) -> Outcome {
    let corpus = &a.corpus.corpus;
    require_dir(corpus, "corpus")?;
    let files = require_split(corpus, &a.split)?;
    if let Some(out) = &a.out {
        require_parent(out, "out")?;
    }
    let schema = schema_of(corpus)?;
    let docs = load_split(&files, &schema)?;
    let model = match &a.ckpt {
        Some(path) => load_checkpoint(path)?,
        None => {
            let mut config = Config::desk();
            if let Some(seed) = env_seed()? {
                config.seed = seed;
            }
            Model64::new(config, Vocabulary::build(&docs, 1), schema.clone())
                .map_err(Failure::numeric)?
        }
    };
    let doc = match &a.doc {
        Some(id) => docs
            .iter()
            .find(|d| &d.doc_id == id)
            .ok_or_else(|| Failure::data(anyhow!("no document {id:?} in split {}", a.split)))?,
        None => docs
            .first()
            .ok_or_else(|| Failure::data(anyhow!("split {} is empty", a.split)))?,
    };
    let (topo, adj) = model.graph_adjacency(doc).map_err(Failure::numeric)?;
    let mut text = dump_graph(doc, &topo, &adj);
    let one = std::slice::from_ref(doc);
    let record = serde_json::json!({
        "doc_id": doc.doc_id,
        "with_document_node": graph_distance_stats(one, true),
        "without_document_node": graph_distance_stats(one, false),
    });
    text.push_str(&format!("stats {record}\n"));
    match &a.out {
        Some(out) => write_out(out, text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(())
}

pub fn grad_check(a: GradCheckArgs) -> Outcome {
    let config = preset(&a.dims)?;
    let seed = match a.seed {
        Some(s) => s,
        None => env_seed()?.unwrap_or(7),
    };
    let started = std::time::Instant::now();
    let reports = grad_check_suite(&config, seed).map_err(Failure::numeric)?;
    if a.json {
        println!(
            "{}",
            serde_json::to_string(&reports).expect("reports serialise")
        );
    } else {
        print!("{}", render_table(&reports));
        println!("seed {seed}, dims {}, {:.2?}", a.dims, started.elapsed());
    }
    let failed: Vec<&str> = reports
        .iter()
        .filter(|r| !r.passed())
        .map(|r| r.component.as_str())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::numeric(anyhow!(
            "gradient check failed for {}",
            failed.join(", ")
        )))
    }
}

pub fn stats(a: StatsArgs) -> Outcome {
    let corpus = &a.corpus.corpus;
    require_dir(corpus, "corpus")?;
    let files = require_split(corpus, &a.split)?;
    let schema = schema_of(corpus)?;
    let docs = load_split(&files, &schema)?;
    let with = graph_distance_stats(&docs, true);
    let without = graph_distance_stats(&docs, false);
    let shorter = pair_distances(&docs, true)
        .iter()
        .zip(pair_distances(&docs, false).iter())
        .filter(|(a, b)| a < b)
        .count();
    if a.json {
        let record = serde_json::json!({
            "documents": docs.len(),
            "with_document_node": with,
            "without_document_node": without,
            "pairs_shortened": shorter,
        });
        println!("{record}");
    } else {
        println!(
            "{:<24} {:>7} {:>8} {:>8} {:>5} {:>5}",
            "graph", "pairs", "avg", "std", "min", "max"
        );
        for (name, s) in [
            ("without document node", &without),
            ("with document node", &with),
        ] {
            println!(
                "{:<24} {:>7} {:>8.3} {:>8.3} {:>5} {:>5}",
                name, s.pairs, s.avg, s.std, s.min, s.max
            );
        }
        println!(
            "{} documents, {shorter} pairs shortened by the document node",
            docs.len()
        );
    }
    Ok(())
}

pub fn generate_synthetic(a: SyntheticArgs) -> Outcome {
    if a.documents == 0 || a.relations == 0 || a.relations > fcds::synthetic::MAX_RELATIONS {
        return Err(Failure::usage(anyhow!(
            "need at least one document and 1..={} relations",
            fcds::synthetic::MAX_RELATIONS
        )));
    }
    if a.min_sentences == 0 || a.min_sentences > a.max_sentences {
        return Err(Failure::usage(anyhow!(
            "need 1 <= min-sentences <= max-sentences"
        )));
    }
    if a.min_entities < 2
        || a.min_entities > a.max_entities
        || a.max_entities > fcds::synthetic::MAX_ENTITIES
    {
        return Err(Failure::usage(anyhow!(
            "need 2 <= min-entities <= max-entities <= {}",
            fcds::synthetic::MAX_ENTITIES
        )));
    }
    let seed = match a.seed {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    };
    let spec = SyntheticSpec {
        documents: a.documents,
        relations: a.relations,
        min_sentences: a.min_sentences,
        max_sentences: a.max_sentences,
        min_entities: a.min_entities,
        max_entities: a.max_entities,
        seed,
    };
    let (docs, schema) = generate(&spec);
    let files = write_corpus(&a.out, &a.split, &docs, &schema).map_err(Failure::data)?;
    eprintln!(
        "wrote {} documents to {}",
        docs.len(),
        files.records.display()
    );
    Ok(())
}
