//! Formula embeddings, cosine reranking, bpref retrieval scoring,
//! classification metrics, and the similarity demo.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::FormulaContextPair;
use crate::inputs::{assemble, Ablation, AssembleError, AssembledInput, ModelInput};
use crate::model::{forward, Mode, ModelConfig, ModelError, ParameterSet};
use crate::opt::{parse_to_opt, ParseError};
use crate::token::{tokenize_latex, TokenizeError};
use crate::vocab::{Vocab, FIRST_REGULAR_ID};

pub const PARTIAL_THRESHOLD: u32 = 1;
pub const FULL_THRESHOLD: u32 = 3;
pub const MAX_RATING: u32 = 4;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{path}:{line}: {msg}")]
    Format {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("embedding dimensions differ: {a} vs {b}")]
    DimMismatch { a: usize, b: usize },
    #[error("zero-norm embedding")]
    ZeroVector,
    #[error("query {query} has no relevant document at threshold {threshold}")]
    NoRelevant { query: String, threshold: u32 },
    #[error("{0}")]
    Tokenize(#[from] TokenizeError),
    #[error("{0}")]
    Parse(#[from] ParseError),
    #[error("{0}")]
    Assemble(#[from] AssembleError),
    #[error("{0}")]
    Model(#[from] ModelError),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormulaEmbedding {
    pub id: String,
    pub vector: Vec<f64>,
}

/// Graded judgments per query: document id to rating 0..=4.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QrelSet {
    pub queries: BTreeMap<String, BTreeMap<String, u32>>,
}

impl QrelSet {
    pub fn insert(&mut self, query: &str, doc: &str, rating: u32) {
        self.queries
            .entry(query.into())
            .or_default()
            .insert(doc.into(), rating);
    }

    /// TREC qrels lines: `query_id 0 doc_id rating`.
    pub fn load(path: &Path) -> Result<QrelSet, EvalError> {
        let fmt_err = |line: usize, msg: String| EvalError::Format {
            path: path.display().to_string(),
            line,
            msg,
        };
        let mut qrels = QrelSet::default();
        for (i, line) in BufReader::new(fs::File::open(path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(fmt_err(i + 1, format!("expected 4 fields, got {}", fields.len())));
            }
            let rating: u32 = fields[3]
                .parse()
                .map_err(|_| fmt_err(i + 1, format!("bad rating {:?}", fields[3])))?;
            if rating > MAX_RATING {
                return Err(fmt_err(i + 1, format!("rating {rating} above {MAX_RATING}")));
            }
            qrels.insert(fields[0], fields[2], rating);
        }
        Ok(qrels)
    }

    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        for (query, docs) in &self.queries {
            for (doc, rating) in docs {
                writeln!(out, "{query} 0 {doc} {rating}")?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// One query's ordered candidates, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub query_id: String,
    pub entries: Vec<(String, f64)>,
}

impl RankedList {
    pub fn validate(&self) -> Result<(), String> {
        let mut seen = std::collections::BTreeSet::new();
        for window in self.entries.windows(2) {
            if window[1].1 > window[0].1 {
                return Err(format!(
                    "scores increase between {} and {}",
                    window[0].0, window[1].0
                ));
            }
        }
        for (doc, _) in &self.entries {
            if !seen.insert(doc) {
                return Err(format!("duplicate document {doc}"));
            }
        }
        Ok(())
    }
}

/// Run-file lines: `query_id doc_id rank score`, grouped per query and
/// ordered by rank.
pub fn read_run(path: &Path) -> Result<Vec<RankedList>, EvalError> {
    let fmt_err = |line: usize, msg: String| EvalError::Format {
        path: path.display().to_string(),
        line,
        msg,
    };
    let mut per_query: BTreeMap<String, Vec<(usize, String, f64)>> = BTreeMap::new();
    for (i, line) in BufReader::new(fs::File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(fmt_err(i + 1, format!("expected 4 fields, got {}", fields.len())));
        }
        let rank: usize = fields[2]
            .parse()
            .map_err(|_| fmt_err(i + 1, format!("bad rank {:?}", fields[2])))?;
        let score: f64 = fields[3]
            .parse()
            .map_err(|_| fmt_err(i + 1, format!("bad score {:?}", fields[3])))?;
        per_query
            .entry(fields[0].into())
            .or_default()
            .push((rank, fields[1].into(), score));
    }
    let mut lists = Vec::with_capacity(per_query.len());
    for (query_id, mut rows) in per_query {
        rows.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        let list = RankedList {
            query_id,
            entries: rows.into_iter().map(|(_, doc, score)| (doc, score)).collect(),
        };
        list.validate().map_err(|msg| EvalError::Format {
            path: path.display().to_string(),
            line: 0,
            msg: format!("query {}: {msg}", list.query_id),
        })?;
        lists.push(list);
    }
    Ok(lists)
}

pub fn write_run(lists: &[RankedList], path: &Path) -> Result<(), EvalError> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for list in lists {
        for (rank, (doc, score)) in list.entries.iter().enumerate() {
            writeln!(out, "{} {} {} {}", list.query_id, doc, rank + 1, score)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Embedding dump: one JSON object `{id, vector}` per line.
pub fn write_embeddings(embeddings: &[FormulaEmbedding], path: &Path) -> Result<(), EvalError> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for e in embeddings {
        writeln!(out, "{}", serde_json::to_string(e)?)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_embeddings(path: &Path) -> Result<Vec<FormulaEmbedding>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(fs::File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e: FormulaEmbedding = serde_json::from_str(&line).map_err(|err| EvalError::Format {
            path: path.display().to_string(),
            line: i + 1,
            msg: err.to_string(),
        })?;
        out.push(e);
    }
    Ok(out)
}

/// How the per-position vectors of the last two layers collapse into one
/// embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pooling {
    /// Mean over non-special positions within each layer, then layer mean.
    #[default]
    Mean2,
    /// The [CLS] vector of each layer, averaged.
    Cls2,
}

impl Pooling {
    pub fn as_str(self) -> &'static str {
        match self {
            Pooling::Mean2 => "mean2",
            Pooling::Cls2 => "cls2",
        }
    }
}

impl FromStr for Pooling {
    type Err = String;

    fn from_str(s: &str) -> Result<Pooling, String> {
        match s {
            "mean2" => Ok(Pooling::Mean2),
            "cls2" => Ok(Pooling::Cls2),
            other => Err(format!("unknown pooling {other:?} (expected mean2 or cls2)")),
        }
    }
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn pool_trace(
    input: &ModelInput,
    hidden_states: &[ndarray::Array2<f64>],
    pooling: Pooling,
) -> Vec<f64> {
    let last = &hidden_states[hidden_states.len() - 1];
    let prev = &hidden_states[hidden_states.len() - 2];
    let layer_vec = |h: &ndarray::Array2<f64>| -> ndarray::Array1<f64> {
        match pooling {
            Pooling::Cls2 => h.row(0).to_owned(),
            Pooling::Mean2 => {
                let rows: Vec<usize> = (0..input.len())
                    .filter(|&p| input.ids[p] >= FIRST_REGULAR_ID)
                    .collect();
                if rows.is_empty() {
                    return h.row(0).to_owned();
                }
                let mut sum = ndarray::Array1::zeros(h.ncols());
                for &p in &rows {
                    sum += &h.row(p);
                }
                sum / rows.len() as f64
            }
        }
    };
    let pooled = (layer_vec(last) + layer_vec(prev)) / 2.0;
    pooled.to_vec()
}

fn embed_input(
    id: String,
    input: &ModelInput,
    params: &ParameterSet,
    cfg: &ModelConfig,
    pooling: Pooling,
) -> Result<FormulaEmbedding, EvalError> {
    let trace = forward(input, params, cfg, Mode::Eval)?;
    Ok(FormulaEmbedding {
        id,
        vector: pool_trace(input, &trace.hidden_states, pooling),
    })
}

/// Embed a bare formula: no context segment, tree nodes per the ablation.
pub fn embed_formula(
    latex: &str,
    params: &ParameterSet,
    cfg: &ModelConfig,
    vocab: &Vocab,
    ablation: Ablation,
    pooling: Pooling,
) -> Result<FormulaEmbedding, EvalError> {
    let formula_tokens = tokenize_latex(latex)?;
    let opt = parse_to_opt(&formula_tokens)?;
    let pair = FormulaContextPair {
        formula_latex: latex.into(),
        formula_tokens,
        context_tokens: Vec::new(),
        opt,
        source_id: String::new(),
        topic: None,
    };
    let AssembledInput { input, .. } = assemble(&pair, vocab, cfg.max_len, ablation)?;
    embed_input(latex.into(), &input, params, cfg, pooling)
}

/// Embed a corpus pair, context included when the ablation keeps it.
pub fn embed_pair(
    id: &str,
    pair: &FormulaContextPair,
    params: &ParameterSet,
    cfg: &ModelConfig,
    vocab: &Vocab,
    ablation: Ablation,
    pooling: Pooling,
) -> Result<FormulaEmbedding, EvalError> {
    let AssembledInput { input, .. } = assemble(pair, vocab, cfg.max_len, ablation)?;
    embed_input(id.into(), &input, params, cfg, pooling)
}

/// Cosine similarity clamped to [-1, 1]. Bitwise-equal vectors score exactly
/// 1 so self-similarity never drifts.
pub fn cosine(a: &FormulaEmbedding, b: &FormulaEmbedding) -> Result<f64, EvalError> {
    if a.vector.len() != b.vector.len() {
        return Err(EvalError::DimMismatch {
            a: a.vector.len(),
            b: b.vector.len(),
        });
    }
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&x, &y) in a.vector.iter().zip(&b.vector) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(EvalError::ZeroVector);
    }
    if a.vector == b.vector {
        return Ok(1.0);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Candidates sorted by cosine to the query, best first, ties by document id.
pub fn rerank(
    query: &FormulaEmbedding,
    candidates: &[FormulaEmbedding],
) -> Result<RankedList, EvalError> {
    let mut entries = Vec::with_capacity(candidates.len());
    for c in candidates {
        entries.push((c.id.clone(), cosine(query, c)?));
    }
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(RankedList {
        query_id: query.id.clone(),
        entries,
    })
}

/// Binary-preference score of one ranked list against graded judgments.
/// Documents rated at or above `threshold` count as relevant, other judged
/// documents as nonrelevant, unjudged ones are ignored.
pub fn bpref(run: &RankedList, qrels: &QrelSet, threshold: u32) -> Result<f64, EvalError> {
    let no_relevant = || EvalError::NoRelevant {
        query: run.query_id.clone(),
        threshold,
    };
    let judged = qrels.queries.get(&run.query_id).ok_or_else(no_relevant)?;
    let r_total = judged.values().filter(|&&v| v >= threshold).count();
    let n_total = judged.len() - r_total;
    if r_total == 0 {
        return Err(no_relevant());
    }
    let denom = r_total.min(n_total);
    let mut above = 0usize;
    let mut sum = 0.0;
    for (doc, _) in &run.entries {
        match judged.get(doc) {
            None => {}
            Some(&v) if v >= threshold => {
                sum += if denom == 0 {
                    1.0
                } else {
                    1.0 - above.min(r_total) as f64 / denom as f64
                };
            }
            Some(_) => above += 1,
        }
    }
    Ok(sum / r_total as f64)
}

pub fn h_mean(p: f64, f: f64) -> f64 {
    if p + f == 0.0 {
        0.0
    } else {
        2.0 * p * f / (p + f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub partial: f64,
    pub full: f64,
    pub h_mean: f64,
    pub skipped_partial: Vec<String>,
    pub skipped_full: Vec<String>,
}

/// Mean bpref at the partial and full thresholds plus their harmonic mean.
/// Queries without a relevant document at a threshold are skipped there and
/// listed in the report.
pub fn eval_retrieval(runs: &[RankedList], qrels: &QrelSet) -> RetrievalReport {
    let score_at = |threshold: u32, skipped: &mut Vec<String>| -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for run in runs {
            match bpref(run, qrels, threshold) {
                Ok(v) => {
                    sum += v;
                    n += 1;
                }
                Err(_) => skipped.push(run.query_id.clone()),
            }
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    };
    let mut skipped_partial = Vec::new();
    let mut skipped_full = Vec::new();
    let partial = score_at(PARTIAL_THRESHOLD, &mut skipped_partial);
    let full = score_at(FULL_THRESHOLD, &mut skipped_full);
    RetrievalReport {
        partial,
        full,
        h_mean: h_mean(partial, full),
        skipped_partial,
        skipped_full,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassScores>,
}

/// Macro-averaged precision, recall and F1 over `(gold, predicted)` pairs.
/// Empty denominators score 0, and every class in `0..classes` counts toward
/// the macro mean.
pub fn eval_classify(predictions: &[(u32, u32)], classes: usize) -> ClassReport {
    for &(gold, predicted) in predictions {
        assert!(
            (gold as usize) < classes && (predicted as usize) < classes,
            "label pair ({gold}, {predicted}) outside {classes} classes"
        );
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let mut per_class = Vec::with_capacity(classes);
    for c in 0..classes as u32 {
        let tp = predictions.iter().filter(|&&(g, p)| g == c && p == c).count();
        let fp = predictions.iter().filter(|&&(g, p)| g != c && p == c).count();
        let fn_ = predictions.iter().filter(|&&(g, p)| g == c && p != c).count();
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        per_class.push(ClassScores {
            precision,
            recall,
            f1,
        });
    }
    let mean = |f: fn(&ClassScores) -> f64| {
        per_class.iter().map(f).sum::<f64>() / classes as f64
    };
    ClassReport {
        macro_precision: mean(|s| s.precision),
        macro_recall: mean(|s| s.recall),
        macro_f1: mean(|s| s.f1),
        per_class,
    }
}

/// Embed the anchor and every other formula, then rank the others by cosine
/// to the anchor. Rows are `(formula, similarity)`, best first.
pub fn similarity_demo(
    anchor: &str,
    others: &[String],
    params: &ParameterSet,
    cfg: &ModelConfig,
    vocab: &Vocab,
    ablation: Ablation,
    pooling: Pooling,
) -> Result<Vec<(String, f64)>, EvalError> {
    let query = embed_formula(anchor, params, cfg, vocab, ablation, pooling)?;
    let mut candidates = Vec::with_capacity(others.len());
    for formula in others {
        candidates.push(embed_formula(formula, params, cfg, vocab, ablation, pooling)?);
    }
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    Ok(rerank(&query, &candidates)?.entries)
}
