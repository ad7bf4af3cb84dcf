//! TeX corpus extraction: formula and context pairs, JSONL dataset files,
//! and vocabulary construction.
//!
//! Extraction scans for single-line `\begin{equation} .. \end{equation}`
//! blocks (starred or not), parses each body into an operator tree and pairs
//! it with a window of surrounding prose. Windows grow symmetrically in
//! characters until the configured minimum, never cross a neighboring
//! equation, snap outward to word boundaries and replace the equation itself
//! with the `[MATH]` placeholder. Formulas that fail to parse and windows
//! that cannot reach the minimum are skipped and counted, never fatal.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::opt::{deserialize_opt, parse_to_opt, serialize_opt, OperatorTree};
use crate::token::{tokenize_latex, MathToken};
use crate::vocab::{Vocab, MATH};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{path}:{line}: bad dataset record: {msg}")]
    Record {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("dataset {0} contains no records")]
    EmptyDataset(String),
}

/// One training example: a formula, its operator tree and the prose around
/// its occurrence with the formula replaced by `[MATH]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FormulaContextPair {
    pub formula_latex: String,
    pub formula_tokens: Vec<MathToken>,
    pub context_tokens: Vec<String>,
    pub opt: OperatorTree,
    pub source_id: String,
    pub topic: Option<String>,
}

impl FormulaContextPair {
    /// Re-derivable invariants: exactly one placeholder, tree matches the
    /// tokens.
    pub fn validate(&self) -> Result<(), String> {
        let math = self
            .context_tokens
            .iter()
            .filter(|t| t.as_str() == MATH)
            .count();
        if math != 1 {
            return Err(format!("{math} [MATH] placeholders, want exactly 1"));
        }
        let reparsed =
            parse_to_opt(&self.formula_tokens).map_err(|e| format!("formula tokens: {e}"))?;
        if reparsed != self.opt {
            return Err("operator tree does not match formula tokens".into());
        }
        Ok(())
    }
}

/// JSONL wire form of a pair.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct DatasetRecord {
    pub formula: String,
    pub formula_tokens: Vec<String>,
    pub context_tokens: Vec<String>,
    pub opt: String,
    pub source_id: String,
    pub topic: Option<String>,
}

impl From<&FormulaContextPair> for DatasetRecord {
    fn from(pair: &FormulaContextPair) -> DatasetRecord {
        DatasetRecord {
            formula: pair.formula_latex.clone(),
            formula_tokens: pair.formula_tokens.iter().map(|t| t.text.clone()).collect(),
            context_tokens: pair.context_tokens.clone(),
            opt: serialize_opt(&pair.opt),
            source_id: pair.source_id.clone(),
            topic: pair.topic.clone(),
        }
    }
}

impl DatasetRecord {
    pub fn into_pair(self) -> Result<FormulaContextPair, String> {
        let formula_tokens: Vec<MathToken> = self
            .formula_tokens
            .iter()
            .map(|t| MathToken::new(t.clone()))
            .collect();
        let opt = deserialize_opt(&self.opt).map_err(|e| e.to_string())?;
        let pair = FormulaContextPair {
            formula_latex: self.formula,
            formula_tokens,
            context_tokens: self.context_tokens,
            opt,
            source_id: self.source_id,
            topic: self.topic,
        };
        pair.validate()?;
        Ok(pair)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SkipCounts {
    /// Formula body failed to tokenize or parse.
    pub parse_error: usize,
    /// Surrounding text could not reach the minimum context length.
    pub short_context: usize,
}

impl SkipCounts {
    pub fn total(&self) -> usize {
        self.parse_error + self.short_context
    }
}

#[derive(Debug, Default)]
pub struct Extraction {
    pub pairs: Vec<FormulaContextPair>,
    pub skipped: SkipCounts,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DatasetSummary {
    pub files_read: usize,
    pub files_failed: usize,
    pub pairs_written: usize,
    pub formulas_skipped: usize,
    pub skipped_parse_error: usize,
    pub skipped_short_context: usize,
}

/// Strip `%` comments to end of line, honoring `\%` escapes.
fn strip_comments(src: &str) -> String {
    let mut out = String::with_capacity(src.len());
    let mut backslashes = 0usize;
    let mut in_comment = false;
    for c in src.chars() {
        if in_comment {
            if c == '\n' {
                in_comment = false;
                out.push(c);
            }
            continue;
        }
        if c == '%' && backslashes % 2 == 0 {
            in_comment = true;
            continue;
        }
        if c == '\\' {
            backslashes += 1;
        } else {
            backslashes = 0;
        }
        out.push(c);
    }
    out
}

/// Byte spans of whole `\begin{equation[*]} .. \end{equation[*]}` blocks,
/// plus the body span inside each.
fn equation_spans(src: &str) -> Vec<(usize, usize, usize, usize)> {
    let mut spans = Vec::new();
    let mut at = 0;
    while let Some(rel) = src[at..].find("\\begin{equation") {
        let begin = at + rel;
        let after = &src[begin + "\\begin{equation".len()..];
        let (env_close, starred) = match after.chars().next() {
            Some('}') => (1, false),
            Some('*') if after[1..].starts_with('}') => (2, true),
            _ => {
                at = begin + 1;
                continue;
            }
        };
        let body_start = begin + "\\begin{equation".len() + env_close;
        let end_tag = if starred {
            "\\end{equation*}"
        } else {
            "\\end{equation}"
        };
        match src[body_start..].find(end_tag) {
            Some(rel_end) => {
                let body_end = body_start + rel_end;
                let end = body_end + end_tag.len();
                spans.push((begin, end, body_start, body_end));
                at = end;
            }
            None => break,
        }
    }
    spans
}

/// Remove `\command` sequences, keeping their brace arguments' text.
fn strip_commands(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.peek() {
            Some(n) if n.is_ascii_alphabetic() => {
                while matches!(chars.peek(), Some(n) if n.is_ascii_alphabetic()) {
                    chars.next();
                }
            }
            Some(_) => {
                chars.next();
            }
            None => {}
        }
    }
    out
}

/// Lowercased word tokens: split on every non-alphanumeric character.
pub fn context_words(text: &str) -> Vec<String> {
    strip_commands(text)
        .to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(String::from)
        .collect()
}

/// Take up to `take` characters from the end of `region`, then extend left
/// to the containing word boundary. Returns the slice and its char count.
fn tail_slice(region: &str, take: usize) -> (&str, usize) {
    let chars: Vec<usize> = region.char_indices().map(|(i, _)| i).collect();
    let n = chars.len();
    if take == 0 || n == 0 {
        return ("", 0);
    }
    let mut idx = n.saturating_sub(take);
    while idx > 0 {
        let prev = region[chars[idx - 1]..].chars().next().unwrap();
        if prev.is_whitespace() {
            break;
        }
        idx -= 1;
    }
    (&region[chars[idx]..], n - idx)
}

/// Take up to `take` characters from the start of `region`, then extend
/// right to the containing word boundary.
fn head_slice(region: &str, take: usize) -> (&str, usize) {
    let chars: Vec<usize> = region.char_indices().map(|(i, _)| i).collect();
    let n = chars.len();
    if take == 0 || n == 0 {
        return ("", 0);
    }
    let mut idx = take.min(n);
    while idx < n {
        let here = region[chars[idx]..].chars().next().unwrap();
        if here.is_whitespace() {
            break;
        }
        idx += 1;
    }
    let end = if idx == n { region.len() } else { chars[idx] };
    (&region[..end], idx)
}

/// Extract every parseable single-line display equation from one TeX source.
/// `source_name` seeds the per-pair ids (`name#eq0`, `name#eq1`, ..).
pub fn extract_pairs(
    tex_source: &str,
    source_name: &str,
    min_context_chars: usize,
) -> Extraction {
    let clean = strip_comments(tex_source);
    let spans = equation_spans(&clean);
    let mut out = Extraction::default();

    for (i, &(begin, end, body_start, body_end)) in spans.iter().enumerate() {
        let body = strip_labels(&clean[body_start..body_end]);
        let formula_latex = body.trim().to_string();
        let tokens = match tokenize_latex(&formula_latex) {
            Ok(t) => t,
            Err(_) => {
                out.skipped.parse_error += 1;
                continue;
            }
        };
        let opt = match parse_to_opt(&tokens) {
            Ok(t) => t,
            Err(_) => {
                out.skipped.parse_error += 1;
                continue;
            }
        };

        // Context regions bounded by the neighboring equations.
        let left_bound = if i == 0 { 0 } else { spans[i - 1].1 };
        let right_bound = spans.get(i + 1).map_or(clean.len(), |s| s.0);
        let left_region = &clean[left_bound..begin];
        let right_region = &clean[end..right_bound];

        let left_avail = left_region.chars().count();
        let right_avail = right_region.chars().count();
        if left_avail + right_avail < min_context_chars {
            out.skipped.short_context += 1;
            continue;
        }
        let half = min_context_chars.div_ceil(2);
        let mut left_take = left_avail.min(half);
        let right_take = right_avail.min(min_context_chars - left_take);
        if left_take + right_take < min_context_chars {
            left_take = left_avail.min(min_context_chars - right_take);
        }
        let (left_text, left_got) = tail_slice(left_region, left_take);
        let (right_text, right_got) = head_slice(right_region, right_take);
        if left_got + right_got < min_context_chars {
            out.skipped.short_context += 1;
            continue;
        }

        let mut context_tokens = context_words(left_text);
        context_tokens.push(MATH.to_string());
        context_tokens.extend(context_words(right_text));

        out.pairs.push(FormulaContextPair {
            formula_latex,
            formula_tokens: tokens,
            context_tokens,
            opt,
            source_id: format!("{source_name}#eq{i}"),
            topic: None,
        });
    }
    out
}

/// Remove every `\label{..}` (including the argument) from an equation body.
fn strip_labels(body: &str) -> String {
    let mut out = String::with_capacity(body.len());
    let mut rest = body;
    while let Some(at) = rest.find("\\label") {
        out.push_str(&rest[..at]);
        let mut after = &rest[at + "\\label".len()..];
        if let Some(stripped) = after.strip_prefix('{') {
            let mut depth = 1usize;
            let mut cut = stripped.len();
            for (i, c) in stripped.char_indices() {
                match c {
                    '{' => depth += 1,
                    '}' => {
                        depth -= 1;
                        if depth == 0 {
                            cut = i + 1;
                            break;
                        }
                    }
                    _ => {}
                }
            }
            after = &stripped[cut..];
        }
        rest = after;
    }
    out.push_str(rest);
    out
}

/// Extract from many files into a JSONL dataset. Unreadable files are
/// counted and skipped. With `topic_from_dir` each pair is labeled with its
/// file's parent directory name.
pub fn build_dataset(
    input_paths: &[PathBuf],
    out: &Path,
    min_context_chars: usize,
    topic_from_dir: bool,
) -> Result<DatasetSummary, CorpusError> {
    let mut summary = DatasetSummary::default();
    let mut file = fs::File::create(out)?;
    for path in input_paths {
        let source = match fs::read_to_string(path) {
            Ok(s) => s,
            Err(_) => {
                summary.files_failed += 1;
                continue;
            }
        };
        summary.files_read += 1;
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "source".into());
        let topic = if topic_from_dir {
            path.parent()
                .and_then(|p| p.file_name())
                .map(|s| s.to_string_lossy().into_owned())
        } else {
            None
        };
        let extraction = extract_pairs(&source, &stem, min_context_chars);
        summary.skipped_parse_error += extraction.skipped.parse_error;
        summary.skipped_short_context += extraction.skipped.short_context;
        for mut pair in extraction.pairs {
            pair.topic = topic.clone();
            let record = DatasetRecord::from(&pair);
            let line = serde_json::to_string(&record)
                .map_err(|e| CorpusError::Record {
                    path: out.display().to_string(),
                    line: summary.pairs_written + 1,
                    msg: e.to_string(),
                })?;
            writeln!(file, "{line}")?;
            summary.pairs_written += 1;
        }
    }
    summary.formulas_skipped = summary.skipped_parse_error + summary.skipped_short_context;
    Ok(summary)
}

/// Read a JSONL dataset back into validated pairs.
pub fn read_dataset(path: &Path) -> Result<Vec<FormulaContextPair>, CorpusError> {
    let file = fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut pairs = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DatasetRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::Record {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: e.to_string(),
            })?;
        let pair = record.into_pair().map_err(|msg| CorpusError::Record {
            path: path.display().to_string(),
            line: lineno + 1,
            msg,
        })?;
        pairs.push(pair);
    }
    Ok(pairs)
}

pub fn write_dataset(
    pairs: &[FormulaContextPair],
    path: &Path,
) -> Result<(), CorpusError> {
    let mut file = fs::File::create(path)?;
    for pair in pairs {
        let record = DatasetRecord::from(pair);
        let line = serde_json::to_string(&record).map_err(|e| CorpusError::Record {
            path: path.display().to_string(),
            line: 0,
            msg: e.to_string(),
        })?;
        writeln!(file, "{line}")?;
    }
    Ok(())
}

/// Joint vocabulary over formula tokens, operator-tree node labels and
/// context words of in-memory pairs.
pub fn vocab_from_pairs(pairs: &[FormulaContextPair], min_freq: u64) -> Vocab {
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for pair in pairs {
        for tok in &pair.formula_tokens {
            *counts.entry(tok.text.clone()).or_default() += 1;
        }
        for node in pair.opt.nodes() {
            *counts.entry(node.label.clone()).or_default() += 1;
        }
        for word in &pair.context_tokens {
            *counts.entry(word.clone()).or_default() += 1;
        }
    }
    Vocab::from_counts(&counts, min_freq)
}

/// Same vocabulary built straight from a dataset file.
pub fn build_vocab(dataset: &Path, min_freq: u64) -> Result<Vocab, CorpusError> {
    let pairs = read_dataset(dataset)?;
    if pairs.is_empty() {
        return Err(CorpusError::EmptyDataset(dataset.display().to_string()));
    }
    Ok(vocab_from_pairs(&pairs, min_freq))
}
