//! Forward pass of the mask-gated bidirectional encoder.
//!
//! Post-norm transformer blocks: self-attention with the additive mask
//! (-1e9 on blocked pairs, then explicit zeroing of the softmax output so
//! blocked weights are exactly 0), residual and layer norm, GELU
//! feed-forward, residual and layer norm. The trace keeps every intermediate
//! the backward pass needs.

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::inputs::ModelInput;
use crate::model::math::{gelu, layer_norm, softmax_row, LnCache};
use crate::model::params::{ModelConfig, ParameterSet};
use crate::model::ModelError;

const MASK_LOGIT: f64 = -1e9;

/// Train mode draws dropout masks from the given seed; with dropout rate 0
/// the two modes produce identical traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { dropout_seed: u64 },
}

pub struct LayerTrace {
    /// Layer input.
    pub x_in: Array2<f64>,
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    /// Per-head attention weights, post-softmax and post-zeroing.
    pub attn: Vec<Array2<f64>>,
    /// Concatenated head outputs before the output projection.
    pub ctx: Array2<f64>,
    pub drop_attn: Option<Array2<f64>>,
    pub ln1: LnCache,
    /// Output of the first layer norm (feed-forward input).
    pub x_mid: Array2<f64>,
    pub ffn_pre: Array2<f64>,
    pub ffn_act: Array2<f64>,
    pub drop_ffn: Option<Array2<f64>>,
    pub ln2: LnCache,
}

pub struct ForwardTrace {
    /// Embedding output followed by each layer's output: layers+1 entries.
    pub hidden_states: Vec<Array2<f64>>,
    pub layers: Vec<LayerTrace>,
    pub train: bool,
}

impl ForwardTrace {
    pub fn last_hidden(&self) -> &Array2<f64> {
        self.hidden_states.last().unwrap()
    }
}

fn check_input(input: &ModelInput, cfg: &ModelConfig) -> Result<(), ModelError> {
    let n = input.len();
    if n == 0 {
        return Err(ModelError::Shape("empty input".into()));
    }
    if n > cfg.max_len {
        return Err(ModelError::Shape(format!(
            "input length {n} exceeds max_len {}",
            cfg.max_len
        )));
    }
    if input.segments.len() != n || input.positions.len() != n || input.mask.side() != n {
        return Err(ModelError::Shape("field lengths disagree".into()));
    }
    for &id in &input.ids {
        if id as usize >= cfg.vocab_size {
            return Err(ModelError::Shape(format!(
                "token id {id} outside vocab of {}",
                cfg.vocab_size
            )));
        }
    }
    for &s in &input.segments {
        if s as usize >= cfg.segment_count {
            return Err(ModelError::Shape(format!("segment {s} out of range")));
        }
    }
    for &p in &input.positions {
        if p as usize >= cfg.max_len {
            return Err(ModelError::Shape(format!("position {p} out of range")));
        }
    }
    Ok(())
}

fn dropout_mask<R: Rng>(rows: usize, cols: usize, rate: f64, rng: &mut R) -> Array2<f64> {
    let keep = 1.0 - rate;
    Array2::from_shape_fn((rows, cols), |_| {
        if rng.random::<f64>() < keep {
            1.0 / keep
        } else {
            0.0
        }
    })
}

pub fn forward(
    input: &ModelInput,
    params: &ParameterSet,
    cfg: &ModelConfig,
    mode: Mode,
) -> Result<ForwardTrace, ModelError> {
    check_input(input, cfg)?;
    let n = input.len();
    let h = cfg.hidden;
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    let (train, mut drop_rng) = match mode {
        Mode::Eval => (false, None),
        Mode::Train { dropout_seed } => (
            true,
            (cfg.dropout_rate > 0.0).then(|| ChaCha8Rng::seed_from_u64(dropout_seed)),
        ),
    };

    let mut x = Array2::zeros((n, h));
    for i in 0..n {
        let tok = params.tok_emb.row(input.ids[i] as usize);
        let seg = params.seg_emb.row(input.segments[i] as usize);
        let pos = params.pos_emb.row(input.positions[i] as usize);
        let mut row = x.row_mut(i);
        for j in 0..h {
            row[j] = tok[j] + seg[j] + pos[j];
        }
    }

    let mut hidden_states = vec![x.clone()];
    let mut layer_traces = Vec::with_capacity(cfg.layers);

    for (li, l) in params.layers.iter().enumerate() {
        let q = x.dot(&l.wq) + &l.bq;
        let k = x.dot(&l.wk) + &l.bk;
        let v = x.dot(&l.wv) + &l.bv;

        let mut ctx = Array2::zeros((n, h));
        let mut attn = Vec::with_capacity(cfg.heads);
        for head in 0..cfg.heads {
            let cols = s![.., head * dh..(head + 1) * dh];
            let qh = q.slice(cols);
            let kh = k.slice(cols);
            let vh = v.slice(cols);
            let mut scores = qh.dot(&kh.t());
            scores.mapv_inplace(|v| v * scale);
            for i in 0..n {
                for j in 0..n {
                    if input.mask.get(i, j) == 0 {
                        scores[[i, j]] += MASK_LOGIT;
                    }
                }
            }
            for mut row in scores.rows_mut() {
                softmax_row(row.as_slice_mut().expect("rows are contiguous"));
            }
            for i in 0..n {
                for j in 0..n {
                    if input.mask.get(i, j) == 0 {
                        scores[[i, j]] = 0.0;
                    }
                }
            }
            ctx.slice_mut(cols).assign(&scores.dot(&vh));
            attn.push(scores);
        }

        let mut proj = ctx.dot(&l.wo) + &l.bo;
        let drop_attn = drop_rng
            .as_mut()
            .map(|rng| dropout_mask(n, h, cfg.dropout_rate, rng));
        if let Some(m) = &drop_attn {
            proj *= m;
        }
        let pre_ln1 = &x + &proj;
        let (x_mid, ln1) = layer_norm(&pre_ln1, &l.ln1_g, &l.ln1_b);

        let ffn_pre = x_mid.dot(&l.w1) + &l.b1;
        let ffn_act = ffn_pre.mapv(gelu);
        let mut ffn_out = ffn_act.dot(&l.w2) + &l.b2;
        let drop_ffn = drop_rng
            .as_mut()
            .map(|rng| dropout_mask(n, h, cfg.dropout_rate, rng));
        if let Some(m) = &drop_ffn {
            ffn_out *= m;
        }
        let pre_ln2 = &x_mid + &ffn_out;
        let (x_out, ln2) = layer_norm(&pre_ln2, &l.ln2_g, &l.ln2_b);

        if x_out.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite(format!("layer {li} output")));
        }

        layer_traces.push(LayerTrace {
            x_in: x,
            q,
            k,
            v,
            attn,
            ctx,
            drop_attn,
            ln1,
            x_mid,
            ffn_pre,
            ffn_act,
            drop_ffn,
            ln2,
        });
        x = x_out;
        hidden_states.push(x.clone());
    }

    Ok(ForwardTrace {
        hidden_states,
        layers: layer_traces,
        train,
    })
}
