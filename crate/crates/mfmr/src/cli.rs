//! The `mfmr` command line: reproducible pipelines from TeX sources to
//! retrieval and classification reports. Every command resolves its settings
//! from defaults, an optional flat key=value config file, then explicit
//! flags, and records the result in a manifest next to its output.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{build_dataset, build_vocab, CorpusError};
use crate::eval::{
    embed_formula, eval_classify, eval_retrieval, read_embeddings, read_run, rerank,
    similarity_demo, write_embeddings, write_run, EvalError, Pooling, QrelSet, RankedList,
};
use crate::inputs::Ablation;
use crate::model::{load_checkpoint, CheckpointError, ModelConfig};
use crate::train::{finetune_classify, pretrain, TrainConfig, TrainError};
use crate::vocab::{Vocab, VocabError};

pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Corpus(#[from] CorpusError),
    #[error("{0}")]
    VocabFile(#[from] VocabError),
    #[error("{0}")]
    Train(#[from] TrainError),
    #[error("{0}")]
    Eval(#[from] EvalError),
    #[error("{0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config {path}: {msg}")]
    Config { path: String, msg: String },
    #[error("{path}:{line}: {msg}")]
    Format {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{0}")]
    Other(String),
}

/// Everything needed to reproduce one command invocation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: u32,
    pub command: String,
    pub seed: u64,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub config: BTreeMap<String, String>,
}

impl RunManifest {
    fn new(command: &str, seed: u64, config: BTreeMap<String, String>) -> RunManifest {
        RunManifest {
            artifact_version: ARTIFACT_VERSION,
            command: command.into(),
            seed,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            config,
        }
    }

    fn input(&mut self, key: &str, path: &Path) -> &mut Self {
        self.inputs.insert(key.into(), path.display().to_string());
        self
    }

    fn output(&mut self, key: &str, path: &Path) -> &mut Self {
        self.outputs.insert(key.into(), path.display().to_string());
        self
    }

    /// Write next to the primary artifact: `<dir>/manifest.json` for a
    /// directory, `<file>.manifest.json` otherwise.
    fn write_next_to(&self, primary: &Path) -> Result<(), CliError> {
        let path = manifest_path_for(primary);
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

pub fn manifest_path_for(artifact: &Path) -> PathBuf {
    if artifact.is_dir() {
        return artifact.join("manifest.json");
    }
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    artifact.with_file_name(name)
}

/// Flat key=value settings with flag > file > default precedence; every
/// lookup is recorded for the manifest.
struct Settings {
    file: BTreeMap<String, String>,
    resolved: BTreeMap<String, String>,
    source: String,
}

impl Settings {
    fn load(config: Option<&Path>) -> Result<Settings, CliError> {
        let mut file = BTreeMap::new();
        let mut source = String::new();
        if let Some(path) = config {
            source = path.display().to_string();
            for (i, line) in fs::read_to_string(path)?.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let Some((key, value)) = line.split_once('=') else {
                    return Err(CliError::Config {
                        path: source,
                        msg: format!("line {}: expected key=value", i + 1),
                    });
                };
                file.insert(key.trim().to_string(), value.trim().to_string());
            }
        }
        Ok(Settings {
            file,
            resolved: BTreeMap::new(),
            source,
        })
    }

    fn get<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError>
    where
        T: FromStr + Display,
        <T as FromStr>::Err: Display,
    {
        let value = match flag {
            Some(v) => v,
            None => match self.file.get(key) {
                Some(raw) => raw.parse::<T>().map_err(|e| CliError::Config {
                    path: self.source.clone(),
                    msg: format!("{key}={raw}: {e}"),
                })?,
                None => default,
            },
        };
        self.resolved.insert(key.into(), value.to_string());
        Ok(value)
    }

    fn note(&mut self, key: &str, value: impl Display) {
        self.resolved.insert(key.into(), value.to_string());
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "mfmr",
    version,
    about = "Structure-aware formula pre-training: corpus extraction, training, retrieval and classification evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Extract formula-context pairs from TeX sources into a JSONL dataset
    Ingest(IngestArgs),
    /// Build the joint token vocabulary from a dataset
    Vocab(VocabArgs),
    /// Pre-train on the masked token, context correspondence and masked
    /// substructure tasks
    Pretrain(PretrainArgs),
    /// Fine-tune a topic classifier head on a labeled dataset
    Finetune(FinetuneArgs),
    /// Embed a list of formulas with a trained checkpoint
    Embed(EmbedArgs),
    /// Rank candidate embeddings against query embeddings by cosine
    Rank(RankArgs),
    /// Score a run file against qrels with bpref at both relevance levels
    EvalIr(EvalIrArgs),
    /// Macro precision/recall/F1 over gold-predicted label pairs
    EvalCls(EvalClsArgs),
    /// Rank a fixture list of formulas by similarity to an anchor formula
    Demo(DemoArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Global random seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Worker thread cap, 0 keeps the library default [default: 0]
    #[arg(long)]
    threads: Option<usize>,
    /// Flat key=value config file; explicit flags take precedence
    #[arg(long)]
    config: Option<PathBuf>,
}

impl Common {
    fn init(&self) -> Result<(Settings, u64), CliError> {
        let mut settings = Settings::load(self.config.as_deref())?;
        let seed = settings.get("seed", self.seed, 0u64)?;
        let threads = settings.get("threads", self.threads, 0usize)?;
        if threads > 0 {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build_global();
        }
        Ok((settings, seed))
    }
}

#[derive(Args, Debug)]
struct ModelFlags {
    /// Transformer layers [default: 2]
    #[arg(long)]
    layers: Option<usize>,
    /// Hidden width [default: 64]
    #[arg(long)]
    hidden: Option<usize>,
    /// Attention heads [default: 4]
    #[arg(long)]
    heads: Option<usize>,
    /// Feed-forward width as a multiple of the hidden width [default: 4]
    #[arg(long)]
    ffn_mult: Option<usize>,
    /// Maximum input length in tokens [default: 128]
    #[arg(long)]
    max_len: Option<usize>,
    /// Dropout rate [default: 0]
    #[arg(long)]
    dropout_rate: Option<f64>,
}

impl ModelFlags {
    fn resolve(&self, settings: &mut Settings, vocab_size: usize) -> Result<ModelConfig, CliError> {
        let desk = ModelConfig::desk(vocab_size);
        let cfg = ModelConfig {
            layers: settings.get("layers", self.layers, desk.layers)?,
            hidden: settings.get("hidden", self.hidden, desk.hidden)?,
            heads: settings.get("heads", self.heads, desk.heads)?,
            ffn_mult: settings.get("ffn_mult", self.ffn_mult, desk.ffn_mult)?,
            vocab_size,
            max_len: settings.get("max_len", self.max_len, desk.max_len)?,
            segment_count: desk.segment_count,
            dropout_rate: settings.get("dropout_rate", self.dropout_rate, desk.dropout_rate)?,
        };
        cfg.validate().map_err(CliError::Other)?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct TrainFlags {
    /// Optimization steps [default: 100]
    #[arg(long)]
    steps: Option<usize>,
    /// Examples per step [default: 8]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Learning rate [default: 2e-5]
    #[arg(long)]
    lr: Option<f64>,
    /// Adam first-moment decay [default: 0.9]
    #[arg(long)]
    beta1: Option<f64>,
    /// Adam second-moment decay [default: 0.999]
    #[arg(long)]
    beta2: Option<f64>,
    /// Adam denominator floor [default: 1e-8]
    #[arg(long)]
    adam_eps: Option<f64>,
    /// Fraction of maskable tokens hidden per example [default: 0.15]
    #[arg(long)]
    mlm_rate: Option<f64>,
    /// Probability of swapping in a foreign context [default: 0.5]
    #[arg(long)]
    ccp_rate: Option<f64>,
    /// Fraction of tree nodes edge-masked per example [default: 0.15]
    #[arg(long)]
    msp_rate: Option<f64>,
    /// Task set: full, no_opt, no_context or formula_only [default: full]
    #[arg(long)]
    ablation: Option<Ablation>,
    /// Steps between intermediate checkpoints, 0 for none [default: 0]
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Steps between log lines [default: 1]
    #[arg(long)]
    log_every: Option<usize>,
    /// Linear learning-rate warmup steps [default: 0]
    #[arg(long)]
    warmup_steps: Option<usize>,
}

impl TrainFlags {
    fn resolve(&self, settings: &mut Settings, seed: u64) -> Result<TrainConfig, CliError> {
        let d = TrainConfig::default();
        let cfg = TrainConfig {
            seed,
            batch_size: settings.get("batch_size", self.batch_size, d.batch_size)?,
            steps: settings.get("steps", self.steps, d.steps)?,
            learning_rate: settings.get("learning_rate", self.lr, d.learning_rate)?,
            beta1: settings.get("beta1", self.beta1, d.beta1)?,
            beta2: settings.get("beta2", self.beta2, d.beta2)?,
            adam_eps: settings.get("adam_eps", self.adam_eps, d.adam_eps)?,
            ablation: settings.get("ablation", self.ablation, d.ablation)?,
            mlm_rate: settings.get("mlm_rate", self.mlm_rate, d.mlm_rate)?,
            ccp_rate: settings.get("ccp_rate", self.ccp_rate, d.ccp_rate)?,
            msp_rate: settings.get("msp_rate", self.msp_rate, d.msp_rate)?,
            checkpoint_every: settings.get("checkpoint_every", self.checkpoint_every, d.checkpoint_every)?,
            log_every: settings.get("log_every", self.log_every, d.log_every)?,
            warmup_steps: settings.get("warmup_steps", self.warmup_steps, d.warmup_steps)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// TeX files or directories to mine (directories are walked for .tex)
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    /// Output dataset (JSONL)
    #[arg(long)]
    out: PathBuf,
    /// Minimum raw context length in characters [default: 400]
    #[arg(long)]
    min_context_chars: Option<usize>,
    /// Label each pair with its file's parent directory name
    #[arg(long)]
    topic_from_dir: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct VocabArgs {
    /// Input dataset (JSONL)
    #[arg(long)]
    dataset: PathBuf,
    /// Output vocabulary (JSON array)
    #[arg(long)]
    out: PathBuf,
    /// Drop tokens seen fewer times than this [default: 1]
    #[arg(long)]
    min_freq: Option<u64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct PretrainArgs {
    /// Input dataset (JSONL)
    #[arg(long)]
    dataset: PathBuf,
    /// Vocabulary file
    #[arg(long)]
    vocab: PathBuf,
    /// Output directory for checkpoints and the training log
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    train: TrainFlags,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct FinetuneArgs {
    /// Labeled dataset (JSONL with topics)
    #[arg(long)]
    dataset: PathBuf,
    /// Vocabulary file
    #[arg(long)]
    vocab: PathBuf,
    /// Pre-trained checkpoint to start from
    #[arg(long)]
    checkpoint: PathBuf,
    /// Number of topic classes
    #[arg(long)]
    classes: usize,
    /// Output directory for the fine-tuned checkpoint and log
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    train: TrainFlags,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct EmbedArgs {
    /// Formula list: one LaTeX formula per line, optionally `id<TAB>formula`
    #[arg(long)]
    formulas: PathBuf,
    /// Trained checkpoint
    #[arg(long)]
    checkpoint: PathBuf,
    /// Vocabulary file
    #[arg(long)]
    vocab: PathBuf,
    /// Output embedding dump (JSONL)
    #[arg(long)]
    out: PathBuf,
    /// Input layout: full, no_opt, no_context or formula_only [default: full]
    #[arg(long)]
    ablation: Option<Ablation>,
    /// Pooling: mean2 or cls2 [default: mean2]
    #[arg(long)]
    pool: Option<Pooling>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct RankArgs {
    /// Query embeddings (JSONL dump)
    #[arg(long)]
    queries: PathBuf,
    /// Candidate embeddings (JSONL dump)
    #[arg(long)]
    candidates: PathBuf,
    /// Output run file
    #[arg(long)]
    out: PathBuf,
    /// Keep only the best K per query, 0 keeps all [default: 0]
    #[arg(long)]
    top: Option<usize>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct EvalIrArgs {
    /// Run file to score
    #[arg(long)]
    run: PathBuf,
    /// TREC qrels file
    #[arg(long)]
    qrels: PathBuf,
    /// Output report (JSON)
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct EvalClsArgs {
    /// Prediction pairs: `gold predicted` per line
    #[arg(long)]
    predictions: PathBuf,
    /// Number of classes
    #[arg(long)]
    classes: usize,
    /// Output report (JSON)
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct DemoArgs {
    /// Anchor formula
    #[arg(long)]
    anchor: String,
    /// Candidate formulas, one per line
    #[arg(long)]
    formulas: PathBuf,
    /// Trained checkpoint
    #[arg(long)]
    checkpoint: PathBuf,
    /// Vocabulary file
    #[arg(long)]
    vocab: PathBuf,
    /// Input layout: full, no_opt, no_context or formula_only [default: full]
    #[arg(long)]
    ablation: Option<Ablation>,
    /// Pooling: mean2 or cls2 [default: mean2]
    #[arg(long)]
    pool: Option<Pooling>,
    /// Output table text
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

/// Parse arguments and dispatch. Exit status 0 on success, 1 on IO or
/// format failures, 2 on usage errors.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            1
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Ingest(args) => cmd_ingest(args),
        Command::Vocab(args) => cmd_vocab(args),
        Command::Pretrain(args) => cmd_pretrain(args),
        Command::Finetune(args) => cmd_finetune(args),
        Command::Embed(args) => cmd_embed(args),
        Command::Rank(args) => cmd_rank(args),
        Command::EvalIr(args) => cmd_eval_ir(args),
        Command::EvalCls(args) => cmd_eval_cls(args),
        Command::Demo(args) => cmd_demo(args),
    }
}

fn collect_tex_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), std::io::Error> {
        let mut entries: Vec<PathBuf> =
            fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
        entries.sort();
        for entry in entries {
            if entry.is_dir() {
                walk(&entry, out)?;
            } else if entry.extension().is_some_and(|e| e == "tex") {
                out.push(entry);
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    for path in paths {
        if path.is_dir() {
            walk(path, &mut files)?;
        } else {
            files.push(path.clone());
        }
    }
    files.sort();
    files.dedup();
    Ok(files)
}

fn cmd_ingest(args: IngestArgs) -> Result<(), CliError> {
    let (mut settings, seed) = args.common.init()?;
    let min_chars = settings.get("min_context_chars", args.min_context_chars, 400usize)?;
    settings.note("topic_from_dir", args.topic_from_dir);
    let files = collect_tex_files(&args.input)?;
    settings.note("input_files", files.len());
    let summary = build_dataset(&files, &args.out, min_chars, args.topic_from_dir)?;
    let mut manifest = RunManifest::new("ingest", seed, settings.resolved);
    for (i, f) in files.iter().enumerate() {
        manifest.input(&format!("tex_{i:04}"), f);
    }
    manifest.output("dataset", &args.out);
    manifest.write_next_to(&args.out)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn cmd_vocab(args: VocabArgs) -> Result<(), CliError> {
    let (mut settings, seed) = args.common.init()?;
    let min_freq = settings.get("min_freq", args.min_freq, 1u64)?;
    let vocab = build_vocab(&args.dataset, min_freq)?;
    vocab.save(&args.out)?;
    let mut manifest = RunManifest::new("vocab", seed, settings.resolved);
    manifest.input("dataset", &args.dataset);
    manifest.output("vocab", &args.out);
    manifest.write_next_to(&args.out)?;
    println!("{{\"tokens\": {}}}", vocab.len());
    Ok(())
}

fn cmd_pretrain(args: PretrainArgs) -> Result<(), CliError> {
    let (mut settings, seed) = args.common.init()?;
    let vocab = Vocab::load(&args.vocab)?;
    let mcfg = args.model.resolve(&mut settings, vocab.len())?;
    let tcfg = args.train.resolve(&mut settings, seed)?;
    fs::create_dir_all(&args.out)?;
    let records = pretrain(&args.dataset, &vocab, &mcfg, &tcfg, &args.out)?;
    let mut manifest = RunManifest::new("pretrain", seed, settings.resolved);
    manifest.input("dataset", &args.dataset);
    manifest.input("vocab", &args.vocab);
    manifest.output("log", &args.out.join(crate::train::PRETRAIN_LOG));
    manifest.output("checkpoint", &args.out.join(crate::train::FINAL_CHECKPOINT));
    manifest.write_next_to(&args.out)?;
    if let Some(last) = records.last() {
        println!("{}", serde_json::to_string(last)?);
    }
    Ok(())
}

fn cmd_finetune(args: FinetuneArgs) -> Result<(), CliError> {
    let (mut settings, seed) = args.common.init()?;
    let vocab = Vocab::load(&args.vocab)?;
    let tcfg = args.train.resolve(&mut settings, seed)?;
    settings.note("classes", args.classes);
    fs::create_dir_all(&args.out)?;
    let records = finetune_classify(
        &args.dataset,
        &args.checkpoint,
        &vocab,
        args.classes,
        &tcfg,
        &args.out,
    )?;
    let mut manifest = RunManifest::new("finetune", seed, settings.resolved);
    manifest.input("dataset", &args.dataset);
    manifest.input("vocab", &args.vocab);
    manifest.input("checkpoint", &args.checkpoint);
    manifest.output("log", &args.out.join(crate::train::FINETUNE_LOG));
    manifest.output("checkpoint", &args.out.join(crate::train::FINAL_CHECKPOINT));
    manifest.write_next_to(&args.out)?;
    if let Some(last) = records.last() {
        println!("{}", serde_json::to_string(last)?);
    }
    Ok(())
}

/// Lines of `formula` or `id<TAB>formula`; the formula doubles as the id
/// when none is given.
fn read_formula_list(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for line in fs::read_to_string(path)?.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        match line.split_once('\t') {
            Some((id, formula)) => out.push((id.trim().into(), formula.trim().into())),
            None => out.push((line.into(), line.into())),
        }
    }
    Ok(out)
}

fn cmd_embed(args: EmbedArgs) -> Result<(), CliError> {
    let (mut settings, seed) = args.common.init()?;
    let vocab = Vocab::load(&args.vocab)?;
    let ablation = settings.get("ablation", args.ablation, Ablation::Full)?;
    let pool = settings.get("pool", args.pool, Pooling::Mean2)?;
    let (mcfg, params) = load_checkpoint(&args.checkpoint)?;
    let formulas = read_formula_list(&args.formulas)?;
    let embeddings = formulas
        .par_iter()
        .map(|(id, latex)| {
            embed_formula(latex, &params, &mcfg, &vocab, ablation, pool).map(|mut e| {
                e.id = id.clone();
                e
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    write_embeddings(&embeddings, &args.out)?;
    let mut manifest = RunManifest::new("embed", seed, settings.resolved);
    manifest.input("formulas", &args.formulas);
    manifest.input("checkpoint", &args.checkpoint);
    manifest.input("vocab", &args.vocab);
    manifest.output("embeddings", &args.out);
    manifest.write_next_to(&args.out)?;
    println!("{{\"embedded\": {}}}", embeddings.len());
    Ok(())
}

fn cmd_rank(args: RankArgs) -> Result<(), CliError> {
    let (mut settings, seed) = args.common.init()?;
    let top = settings.get("top", args.top, 0usize)?;
    let queries = read_embeddings(&args.queries)?;
    let candidates = read_embeddings(&args.candidates)?;
    if candidates.is_empty() {
        return Err(CliError::Other(format!(
            "no candidate embeddings in {}",
            args.candidates.display()
        )));
    }
    let mut lists = queries
        .par_iter()
        .map(|q| rerank(q, &candidates))
        .collect::<Result<Vec<RankedList>, _>>()?;
    if top > 0 {
        for list in &mut lists {
            list.entries.truncate(top);
        }
    }
    write_run(&lists, &args.out)?;
    let mut manifest = RunManifest::new("rank", seed, settings.resolved);
    manifest.input("queries", &args.queries);
    manifest.input("candidates", &args.candidates);
    manifest.output("run", &args.out);
    manifest.write_next_to(&args.out)?;
    println!("{{\"queries\": {}, \"candidates\": {}}}", lists.len(), candidates.len());
    Ok(())
}

fn cmd_eval_ir(args: EvalIrArgs) -> Result<(), CliError> {
    let (settings, seed) = args.common.init()?;
    let runs = read_run(&args.run)?;
    let qrels = QrelSet::load(&args.qrels)?;
    let report = eval_retrieval(&runs, &qrels);
    fs::write(&args.out, serde_json::to_string_pretty(&report)? + "\n")?;
    let mut manifest = RunManifest::new("eval-ir", seed, settings.resolved);
    manifest.input("run", &args.run);
    manifest.input("qrels", &args.qrels);
    manifest.output("report", &args.out);
    manifest.write_next_to(&args.out)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn cmd_eval_cls(args: EvalClsArgs) -> Result<(), CliError> {
    let (mut settings, seed) = args.common.init()?;
    settings.note("classes", args.classes);
    let path = args.predictions.display().to_string();
    let mut predictions = Vec::new();
    for (i, line) in fs::read_to_string(&args.predictions)?.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fmt_err = |msg: String| CliError::Format {
            path: path.clone(),
            line: i + 1,
            msg,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(fmt_err(format!("expected 2 fields, got {}", fields.len())));
        }
        let gold: u32 = fields[0]
            .parse()
            .map_err(|_| fmt_err(format!("bad gold label {:?}", fields[0])))?;
        let predicted: u32 = fields[1]
            .parse()
            .map_err(|_| fmt_err(format!("bad predicted label {:?}", fields[1])))?;
        if gold as usize >= args.classes || predicted as usize >= args.classes {
            return Err(fmt_err(format!(
                "label pair ({gold}, {predicted}) outside {} classes",
                args.classes
            )));
        }
        predictions.push((gold, predicted));
    }
    let report = eval_classify(&predictions, args.classes);
    fs::write(&args.out, serde_json::to_string_pretty(&report)? + "\n")?;
    let mut manifest = RunManifest::new("eval-cls", seed, settings.resolved);
    manifest.input("predictions", &args.predictions);
    manifest.output("report", &args.out);
    manifest.write_next_to(&args.out)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn cmd_demo(args: DemoArgs) -> Result<(), CliError> {
    let (mut settings, seed) = args.common.init()?;
    let vocab = Vocab::load(&args.vocab)?;
    let ablation = settings.get("ablation", args.ablation, Ablation::Full)?;
    let pool = settings.get("pool", args.pool, Pooling::Mean2)?;
    settings.note("anchor", &args.anchor);
    let (mcfg, params) = load_checkpoint(&args.checkpoint)?;
    let others: Vec<String> = read_formula_list(&args.formulas)?
        .into_iter()
        .map(|(_, formula)| formula)
        .collect();
    let rows = similarity_demo(&args.anchor, &others, &params, &mcfg, &vocab, ablation, pool)?;
    let mut table = format!("anchor: {}\nrank  similarity  formula\n", args.anchor);
    for (rank, (formula, score)) in rows.iter().enumerate() {
        table.push_str(&format!("{:>4}  {score:>10.4}  {formula}\n", rank + 1));
    }
    fs::write(&args.out, &table)?;
    let mut manifest = RunManifest::new("demo", seed, settings.resolved);
    manifest.input("formulas", &args.formulas);
    manifest.input("checkpoint", &args.checkpoint);
    manifest.input("vocab", &args.vocab);
    manifest.output("table", &args.out);
    manifest.write_next_to(&args.out)?;
    print!("{table}");
    Ok(())
}
