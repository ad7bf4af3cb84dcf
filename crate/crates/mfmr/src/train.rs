//! Joint pre-training over the three tasks, Adam, checkpoints, and the
//! classification fine-tune path.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{read_dataset, CorpusError, FormulaContextPair};
use crate::inputs::{
    assemble, sample_ccp, sample_mlm, sample_msp, Ablation, AssembleError, AssembledInput,
    ModelInput,
};
use crate::model::{
    backward, backward_classify, compute_losses, forward, loss_classify, ClassifierParams,
    ForwardTrace, GradientSet, Mode, ModelConfig, ModelError, ParameterSet,
};
pub use crate::model::{load_checkpoint, save_checkpoint, CheckpointError};
use crate::opt::OperatorTree;
use crate::vocab::Vocab;

pub const PRETRAIN_LOG: &str = "train_log.jsonl";
pub const FINETUNE_LOG: &str = "finetune_log.jsonl";
pub const FINAL_CHECKPOINT: &str = "checkpoint-final.ckpt";

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub ablation: Ablation,
    pub mlm_rate: f64,
    pub ccp_rate: f64,
    pub msp_rate: f64,
    pub checkpoint_every: usize,
    pub log_every: usize,
    pub warmup_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            seed: 0,
            batch_size: 8,
            steps: 100,
            learning_rate: 2e-5,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            ablation: Ablation::Full,
            mlm_rate: 0.15,
            ccp_rate: 0.5,
            msp_rate: 0.15,
            checkpoint_every: 0,
            log_every: 1,
            warmup_steps: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: &str| Err(TrainError::Config(msg.into()));
        if self.steps < 1 {
            return bad("steps must be >= 1");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1");
        }
        if self.log_every < 1 {
            return bad("log_every must be >= 1");
        }
        for (name, rate) in [
            ("mlm_rate", self.mlm_rate),
            ("ccp_rate", self.ccp_rate),
            ("msp_rate", self.msp_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return bad(&format!("{name} must lie in [0, 1)"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: usize,
    pub loss_total: f64,
    pub loss_mlm: f64,
    pub loss_ccp: f64,
    pub loss_msp: f64,
    pub mlm_masked_accuracy: f64,
    pub ccp_accuracy: f64,
    pub msp_pair_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub cls_accuracy: Option<f64>,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Corpus(#[from] CorpusError),
    #[error("{0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("log serialization: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("no formula fits within max_len {max_len}")]
    NoUsableExamples { max_len: usize },
    #[error("non-finite value at step {step}: {msg}")]
    NonFinite { step: usize, msg: String },
    #[error("model error at step {step}: {msg}")]
    Model { step: usize, msg: String },
    #[error("pair {index} is missing a topic label")]
    MissingLabel { index: usize },
    #[error("dataset has {found} topics but only {requested} classes were requested")]
    TooManyClasses { found: usize, requested: usize },
}

fn step_err(step: usize, e: ModelError) -> TrainError {
    match e {
        ModelError::NonFinite(msg) => TrainError::NonFinite { step, msg },
        other => TrainError::Model {
            step,
            msg: other.to_string(),
        },
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Order-sensitive combination of seed components into one stream seed.
fn mix(parts: &[u64]) -> u64 {
    let mut h = 0u64;
    for &p in parts {
        h = splitmix64(h ^ p);
    }
    h
}

/// Adam over a full parameter set, with optional linear warmup.
pub struct Adam {
    m: GradientSet,
    v: GradientSet,
    t: u64,
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    warmup_steps: usize,
}

impl Adam {
    pub fn new(template: &ParameterSet, tcfg: &TrainConfig) -> Adam {
        Adam {
            m: template.zeros_like(),
            v: template.zeros_like(),
            t: 0,
            learning_rate: tcfg.learning_rate,
            beta1: tcfg.beta1,
            beta2: tcfg.beta2,
            eps: tcfg.adam_eps,
            warmup_steps: tcfg.warmup_steps,
        }
    }

    pub fn step(&mut self, params: &mut ParameterSet, grads: &GradientSet) {
        self.t += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        let lr = if self.t as usize <= self.warmup_steps {
            self.learning_rate * self.t as f64 / self.warmup_steps as f64
        } else {
            self.learning_rate
        };
        let mut ps = params.tensors_mut();
        let mut ms = self.m.tensors_mut();
        let mut vs = self.v.tensors_mut();
        let gs = grads.tensors();
        assert_eq!(ps.len(), gs.len(), "parameter/gradient layout mismatch");
        for i in 0..ps.len() {
            let p = ps[i].1.iter_mut();
            let m = ms[i].1.iter_mut();
            let v = vs[i].1.iter_mut();
            let g = gs[i].1.iter();
            for (((p, m), v), &g) in p.zip(m).zip(v).zip(g) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

fn accumulate(into: &mut GradientSet, grads: &GradientSet) {
    let mut a = into.tensors_mut();
    let b = grads.tensors();
    for i in 0..a.len() {
        a[i].1.zip_mut_with(&b[i].1, |x, &y| *x += y);
    }
}

fn scale(set: &mut GradientSet, s: f64) {
    for (_, mut t) in set.tensors_mut() {
        t.mapv_inplace(|x| x * s);
    }
}

#[derive(Default)]
struct Counter {
    correct: usize,
    total: usize,
}

impl Counter {
    fn hit(&mut self, ok: bool) {
        self.total += 1;
        self.correct += ok as usize;
    }

    fn ratio(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

#[derive(Default)]
struct TaskHits {
    mlm: Counter,
    ccp: Counter,
    msp: Counter,
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0usize;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

fn count_hits(
    trace: &ForwardTrace,
    input: &ModelInput,
    params: &ParameterSet,
    hits: &mut TaskHits,
) {
    let h = trace.last_hidden();
    for &(pos, orig) in &input.mlm_labels {
        let logits = h.row(pos).dot(&params.mlm_w) + &params.mlm_b;
        hits.mlm.hit(argmax(logits.iter().copied()) as u32 == orig);
    }
    if let Some(delta) = input.ccp_label {
        let s = h.row(0).dot(&params.ccp_w) + params.ccp_b[0];
        hits.ccp.hit((s > 0.0) == (delta == 1));
    }
    for l in &input.msp_labels {
        let a = h.row(l.i).dot(&params.msp_a_w) + &params.msp_a_b;
        let b = h.row(l.j).dot(&params.msp_b_w) + &params.msp_b_b;
        hits.msp.hit((a.dot(&b) > 0.0) == (l.delta == 1));
    }
}

struct Prepared {
    input: ModelInput,
    #[allow(dead_code)]
    opt: Option<OperatorTree>,
}

/// One training example: pick the context (CCP), assemble, then mask tokens
/// and tree edges. A pool without a second source quietly skips the CCP task.
fn prepare_example<R: Rng>(
    pair: &FormulaContextPair,
    pool: &[FormulaContextPair],
    vocab: &Vocab,
    max_len: usize,
    tcfg: &TrainConfig,
    rng: &mut R,
) -> Result<Prepared, AssembleError> {
    let ablation = tcfg.ablation;
    let (effective, ccp_label) = if ablation.uses_context() && tcfg.ccp_rate > 0.0 {
        match sample_ccp(pair, pool, rng, tcfg.ccp_rate) {
            Ok((p, delta)) => (p, Some(delta)),
            Err(_) => (pair.clone(), None),
        }
    } else {
        (pair.clone(), None)
    };
    let AssembledInput { mut input, opt } = assemble(&effective, vocab, max_len, ablation)?;
    input.ccp_label = ccp_label;
    sample_mlm(&mut input, vocab, rng, tcfg.mlm_rate);
    if let Some(tree) = &opt {
        sample_msp(&mut input, tree, rng, tcfg.msp_rate, false);
    }
    Ok(Prepared { input, opt })
}

/// Sequential epochs over the usable indices, reshuffled per epoch from the
/// global seed so the example stream is a pure function of the config.
struct EpochSampler {
    usable: Vec<usize>,
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
    seed: u64,
}

impl EpochSampler {
    fn new(usable: Vec<usize>, seed: u64) -> EpochSampler {
        EpochSampler {
            usable,
            order: Vec::new(),
            cursor: 0,
            epoch: 0,
            seed,
        }
    }

    fn next_batch(&mut self, n: usize) -> Vec<usize> {
        let mut batch = Vec::with_capacity(n);
        while batch.len() < n {
            if self.cursor >= self.order.len() {
                self.order = self.usable.clone();
                let mut rng = ChaCha8Rng::seed_from_u64(mix(&[self.seed, 1, self.epoch]));
                self.order.shuffle(&mut rng);
                self.epoch += 1;
                self.cursor = 0;
            }
            batch.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        batch
    }
}

fn usable_indices(pairs: &[FormulaContextPair], max_len: usize) -> Vec<usize> {
    (0..pairs.len())
        .filter(|&i| pairs[i].formula_tokens.len() + 2 <= max_len)
        .collect()
}

fn log_writer(out: Option<&Path>, name: &str) -> Result<Option<BufWriter<fs::File>>, TrainError> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            Ok(Some(BufWriter::new(fs::File::create(dir.join(name))?)))
        }
        None => Ok(None),
    }
}

fn maybe_log(
    log: &mut Option<BufWriter<fs::File>>,
    tcfg: &TrainConfig,
    rec: &TrainRecord,
) -> Result<(), TrainError> {
    if let Some(w) = log {
        if rec.step % tcfg.log_every == 0 || rec.step == tcfg.steps {
            writeln!(w, "{}", serde_json::to_string(rec)?)?;
        }
    }
    Ok(())
}

/// Pre-train on in-memory pairs. `init` continues from existing parameters;
/// `out` selects log and checkpoint writing. Returns the trained parameters
/// with one record per step.
pub fn pretrain_pairs(
    pairs: &[FormulaContextPair],
    vocab: &Vocab,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    init: Option<ParameterSet>,
    out: Option<&Path>,
) -> Result<(ParameterSet, Vec<TrainRecord>), TrainError> {
    tcfg.validate()?;
    mcfg.validate().map_err(TrainError::Config)?;
    if pairs.is_empty() {
        return Err(CorpusError::EmptyDataset("training pool".into()).into());
    }
    let usable = usable_indices(pairs, mcfg.max_len);
    if usable.is_empty() {
        return Err(TrainError::NoUsableExamples {
            max_len: mcfg.max_len,
        });
    }

    let mut params = init.unwrap_or_else(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(&[tcfg.seed, 0]));
        ParameterSet::init(mcfg, None, &mut rng)
    });
    let mut adam = Adam::new(&params, tcfg);
    let mut sampler = EpochSampler::new(usable, tcfg.seed);
    let mut log = log_writer(out, PRETRAIN_LOG)?;
    let mut records = Vec::with_capacity(tcfg.steps);

    for step in 1..=tcfg.steps {
        let batch = sampler.next_batch(tcfg.batch_size);
        let mut grads_sum = params.zeros_like();
        let (mut sum_mlm, mut sum_ccp, mut sum_msp) = (0.0, 0.0, 0.0);
        let mut hits = TaskHits::default();
        let mut done = 0usize;
        for (slot, &idx) in batch.iter().enumerate() {
            let mut ex_rng =
                ChaCha8Rng::seed_from_u64(mix(&[tcfg.seed, 2, step as u64, slot as u64]));
            let Ok(prepared) =
                prepare_example(&pairs[idx], pairs, vocab, mcfg.max_len, tcfg, &mut ex_rng)
            else {
                continue;
            };
            let mode = Mode::Train {
                dropout_seed: mix(&[tcfg.seed, 3, step as u64, slot as u64]),
            };
            let trace =
                forward(&prepared.input, &params, mcfg, mode).map_err(|e| step_err(step, e))?;
            let losses = compute_losses(&trace, &prepared.input, &params);
            let grads =
                backward(&trace, &prepared.input, &params, mcfg).map_err(|e| step_err(step, e))?;
            accumulate(&mut grads_sum, &grads);
            sum_mlm += losses.mlm;
            sum_ccp += losses.ccp;
            sum_msp += losses.msp;
            count_hits(&trace, &prepared.input, &params, &mut hits);
            done += 1;
        }
        if done == 0 {
            return Err(TrainError::NoUsableExamples {
                max_len: mcfg.max_len,
            });
        }
        scale(&mut grads_sum, 1.0 / done as f64);
        adam.step(&mut params, &grads_sum);
        params
            .assert_finite()
            .map_err(|msg| TrainError::NonFinite { step, msg })?;

        let b = done as f64;
        let (loss_mlm, loss_ccp, loss_msp) = (sum_mlm / b, sum_ccp / b, sum_msp / b);
        let rec = TrainRecord {
            step,
            loss_total: loss_mlm + loss_ccp + loss_msp,
            loss_mlm,
            loss_ccp,
            loss_msp,
            mlm_masked_accuracy: hits.mlm.ratio(),
            ccp_accuracy: hits.ccp.ratio(),
            msp_pair_accuracy: hits.msp.ratio(),
            cls_accuracy: None,
        };
        maybe_log(&mut log, tcfg, &rec)?;
        if let Some(dir) = out {
            if tcfg.checkpoint_every > 0
                && step % tcfg.checkpoint_every == 0
                && step != tcfg.steps
            {
                save_checkpoint(&dir.join(format!("checkpoint-{step:06}.ckpt")), mcfg, &params)?;
            }
        }
        records.push(rec);
    }

    if let Some(w) = &mut log {
        w.flush()?;
    }
    if let Some(dir) = out {
        save_checkpoint(&dir.join(FINAL_CHECKPOINT), mcfg, &params)?;
    }
    Ok((params, records))
}

/// Pre-train from a dataset file, writing the log and checkpoints to `out`.
pub fn pretrain(
    dataset: &Path,
    vocab: &Vocab,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    out: &Path,
) -> Result<Vec<TrainRecord>, TrainError> {
    let pairs = read_dataset(dataset)?;
    let (_, records) = pretrain_pairs(&pairs, vocab, mcfg, tcfg, None, Some(out))?;
    Ok(records)
}

/// Map each pair's topic to a class id (sorted topic order). Fails on a
/// missing topic or more topics than requested classes.
pub fn topic_labels(
    pairs: &[FormulaContextPair],
    classes: usize,
) -> Result<Vec<u32>, TrainError> {
    let mut topics: Vec<&str> = Vec::new();
    for (index, pair) in pairs.iter().enumerate() {
        let topic = pair
            .topic
            .as_deref()
            .filter(|t| !t.is_empty())
            .ok_or(TrainError::MissingLabel { index })?;
        if let Err(at) = topics.binary_search(&topic) {
            topics.insert(at, topic);
        }
    }
    if topics.len() > classes {
        return Err(TrainError::TooManyClasses {
            found: topics.len(),
            requested: classes,
        });
    }
    Ok(pairs
        .iter()
        .map(|p| {
            topics
                .binary_search(&p.topic.as_deref().unwrap())
                .unwrap() as u32
        })
        .collect())
}

/// Fine-tune a softmax head over the final [CLS] vector on topic labels.
/// No token, context, or edge sampling happens here; the ablation picks the
/// input layout. A head of the wrong width is replaced by a zero one.
pub fn finetune_pairs(
    pairs: &[FormulaContextPair],
    vocab: &Vocab,
    mcfg: &ModelConfig,
    mut params: ParameterSet,
    classes: usize,
    tcfg: &TrainConfig,
    out: Option<&Path>,
) -> Result<(ParameterSet, Vec<TrainRecord>), TrainError> {
    tcfg.validate()?;
    mcfg.validate().map_err(TrainError::Config)?;
    if classes < 2 {
        return Err(TrainError::Config("classes must be >= 2".into()));
    }
    if pairs.is_empty() {
        return Err(CorpusError::EmptyDataset("fine-tune pool".into()).into());
    }
    let labels = topic_labels(pairs, classes)?;
    let usable = usable_indices(pairs, mcfg.max_len);
    if usable.is_empty() {
        return Err(TrainError::NoUsableExamples {
            max_len: mcfg.max_len,
        });
    }
    if params.n_classes() != Some(classes) {
        params.cls = Some(ClassifierParams {
            w: ndarray::Array2::zeros((mcfg.hidden, classes)),
            b: ndarray::Array1::zeros(classes),
        });
    }

    let mut adam = Adam::new(&params, tcfg);
    let mut sampler = EpochSampler::new(usable, tcfg.seed);
    let mut log = log_writer(out, FINETUNE_LOG)?;
    let mut records = Vec::with_capacity(tcfg.steps);

    for step in 1..=tcfg.steps {
        let batch = sampler.next_batch(tcfg.batch_size);
        let mut grads_sum = params.zeros_like();
        let mut sum_loss = 0.0;
        let mut cls_hits = Counter::default();
        let mut done = 0usize;
        for (slot, &idx) in batch.iter().enumerate() {
            let Ok(AssembledInput { input, .. }) =
                assemble(&pairs[idx], vocab, mcfg.max_len, tcfg.ablation)
            else {
                continue;
            };
            let label = labels[idx];
            let mode = Mode::Train {
                dropout_seed: mix(&[tcfg.seed, 3, step as u64, slot as u64]),
            };
            let trace = forward(&input, &params, mcfg, mode).map_err(|e| step_err(step, e))?;
            sum_loss += loss_classify(&trace, label, &params).map_err(|e| step_err(step, e))?;
            let grads = backward_classify(&trace, &input, label, &params, mcfg)
                .map_err(|e| step_err(step, e))?;
            accumulate(&mut grads_sum, &grads);
            let cls = params.cls.as_ref().unwrap();
            let logits = trace.last_hidden().row(0).dot(&cls.w) + &cls.b;
            cls_hits.hit(argmax(logits.iter().copied()) as u32 == label);
            done += 1;
        }
        if done == 0 {
            return Err(TrainError::NoUsableExamples {
                max_len: mcfg.max_len,
            });
        }
        scale(&mut grads_sum, 1.0 / done as f64);
        adam.step(&mut params, &grads_sum);
        params
            .assert_finite()
            .map_err(|msg| TrainError::NonFinite { step, msg })?;

        let rec = TrainRecord {
            step,
            loss_total: sum_loss / done as f64,
            loss_mlm: 0.0,
            loss_ccp: 0.0,
            loss_msp: 0.0,
            mlm_masked_accuracy: 0.0,
            ccp_accuracy: 0.0,
            msp_pair_accuracy: 0.0,
            cls_accuracy: Some(cls_hits.ratio()),
        };
        maybe_log(&mut log, tcfg, &rec)?;
        records.push(rec);
    }

    if let Some(w) = &mut log {
        w.flush()?;
    }
    if let Some(dir) = out {
        save_checkpoint(&dir.join(FINAL_CHECKPOINT), mcfg, &params)?;
    }
    Ok((params, records))
}

/// Fine-tune from a dataset file and a pre-trained checkpoint.
pub fn finetune_classify(
    dataset: &Path,
    checkpoint: &Path,
    vocab: &Vocab,
    classes: usize,
    tcfg: &TrainConfig,
    out: &Path,
) -> Result<Vec<TrainRecord>, TrainError> {
    let pairs = read_dataset(dataset)?;
    let (mcfg, params) = load_checkpoint(checkpoint)?;
    let (_, records) = finetune_pairs(&pairs, vocab, &mcfg, params, classes, tcfg, Some(out))?;
    Ok(records)
}
