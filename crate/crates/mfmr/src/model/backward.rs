//! Reverse-mode gradients for the combined pre-training objective and for
//! the fine-tuning classifier, written against the caches in
//! [`ForwardTrace`]. The softmax backward uses the post-zeroing attention
//! weights directly, which makes gradients at masked pairs exactly zero.

use ndarray::{s, Array1, Array2, Axis};

use crate::inputs::ModelInput;
use crate::model::forward::ForwardTrace;
use crate::model::math::{dgelu, layer_norm_backward, sigmoid, softmax_row};
use crate::model::params::{GradientSet, ModelConfig, ParameterSet};
use crate::model::ModelError;

/// Gradients of `loss_total` (the sum of the three task losses) for every
/// parameter tensor. Inputs without labels produce exactly zero gradients.
pub fn backward(
    trace: &ForwardTrace,
    input: &ModelInput,
    params: &ParameterSet,
    cfg: &ModelConfig,
) -> Result<GradientSet, ModelError> {
    let mut grads = params.zeros_like();
    let h = trace.last_hidden();
    let (n, hid) = (h.nrows(), h.ncols());
    let mut d_last: Array2<f64> = Array2::zeros((n, hid));

    if !input.mlm_labels.is_empty() {
        let mut d_logits: Array2<f64> = Array2::zeros((n, params.mlm_w.ncols()));
        for &(pos, orig) in &input.mlm_labels {
            let logits: Array1<f64> = h.row(pos).dot(&params.mlm_w) + &params.mlm_b;
            let mut probs = logits.to_vec();
            softmax_row(&mut probs);
            let mut row = d_logits.row_mut(pos);
            for (dst, p) in row.iter_mut().zip(probs.iter()) {
                *dst += p;
            }
            row[orig as usize] -= 1.0;
        }
        grads.mlm_w += &h.t().dot(&d_logits);
        grads.mlm_b += &d_logits.sum_axis(Axis(0));
        d_last += &d_logits.dot(&params.mlm_w.t());
    }

    if let Some(delta) = input.ccp_label {
        let s = h.row(0).dot(&params.ccp_w) + params.ccp_b[0];
        let g = sigmoid(s) - delta as f64;
        grads.ccp_w += &(&h.row(0) * g);
        grads.ccp_b[0] += g;
        let mut row = d_last.row_mut(0);
        row += &(&params.ccp_w * g);
    }

    if !input.msp_labels.is_empty() {
        let a = h.dot(&params.msp_a_w) + &params.msp_a_b;
        let b = h.dot(&params.msp_b_w) + &params.msp_b_b;
        let mut da: Array2<f64> = Array2::zeros((n, hid));
        let mut db: Array2<f64> = Array2::zeros((n, hid));
        for l in &input.msp_labels {
            let s = a.row(l.i).dot(&b.row(l.j));
            let g = sigmoid(s) - l.delta as f64;
            let mut ra = da.row_mut(l.i);
            ra += &(&b.row(l.j) * g);
            let mut rb = db.row_mut(l.j);
            rb += &(&a.row(l.i) * g);
        }
        grads.msp_a_w += &h.t().dot(&da);
        grads.msp_a_b += &da.sum_axis(Axis(0));
        grads.msp_b_w += &h.t().dot(&db);
        grads.msp_b_b += &db.sum_axis(Axis(0));
        d_last += &da.dot(&params.msp_a_w.t());
        d_last += &db.dot(&params.msp_b_w.t());
    }

    backprop_core(trace, input, params, cfg, &mut grads, d_last);
    grads
        .assert_finite()
        .map_err(|name| ModelError::NonFinite(format!("gradient {name}")))?;
    Ok(grads)
}

/// Gradients of the classification cross-entropy on [CLS].
pub fn backward_classify(
    trace: &ForwardTrace,
    input: &ModelInput,
    label: u32,
    params: &ParameterSet,
    cfg: &ModelConfig,
) -> Result<GradientSet, ModelError> {
    let cls = params
        .cls
        .as_ref()
        .ok_or_else(|| ModelError::Shape("model has no classification head".into()))?;
    if label as usize >= cls.w.ncols() {
        return Err(ModelError::Shape(format!(
            "class label {label} outside {} classes",
            cls.w.ncols()
        )));
    }
    let mut grads = params.zeros_like();
    let h = trace.last_hidden();
    let logits: Array1<f64> = h.row(0).dot(&cls.w) + &cls.b;
    let mut probs = logits.to_vec();
    softmax_row(&mut probs);
    let mut d_logits = Array1::from_vec(probs);
    d_logits[label as usize] -= 1.0;

    let gcls = grads.cls.as_mut().unwrap();
    let h0 = h.row(0).insert_axis(Axis(1));
    gcls.w += &h0.dot(&d_logits.view().insert_axis(Axis(0)));
    gcls.b += &d_logits;

    let mut d_last: Array2<f64> = Array2::zeros(h.raw_dim());
    {
        let mut row = d_last.row_mut(0);
        row += &cls.w.dot(&d_logits);
    }
    backprop_core(trace, input, params, cfg, &mut grads, d_last);
    grads
        .assert_finite()
        .map_err(|name| ModelError::NonFinite(format!("gradient {name}")))?;
    Ok(grads)
}

/// Walk the transformer backwards from a gradient on the final hidden
/// states, accumulating into `grads` down to the embedding tables.
fn backprop_core(
    trace: &ForwardTrace,
    input: &ModelInput,
    params: &ParameterSet,
    cfg: &ModelConfig,
    grads: &mut GradientSet,
    d_out: Array2<f64>,
) {
    let n = d_out.nrows();
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dx = d_out;

    for li in (0..params.layers.len()).rev() {
        let lt = &trace.layers[li];
        let l = &params.layers[li];
        let gl = &mut grads.layers[li];

        let d_pre_ln2 =
            layer_norm_backward(&dx, &lt.ln2, &l.ln2_g, &mut gl.ln2_g, &mut gl.ln2_b);
        let mut d_x_mid = d_pre_ln2.clone();
        let mut d_ffn_out = d_pre_ln2;
        if let Some(m) = &lt.drop_ffn {
            d_ffn_out *= m;
        }
        gl.w2 += &lt.ffn_act.t().dot(&d_ffn_out);
        gl.b2 += &d_ffn_out.sum_axis(Axis(0));
        let d_act = d_ffn_out.dot(&l.w2.t());
        let d_ffn_pre = &d_act * &lt.ffn_pre.mapv(dgelu);
        gl.w1 += &lt.x_mid.t().dot(&d_ffn_pre);
        gl.b1 += &d_ffn_pre.sum_axis(Axis(0));
        d_x_mid += &d_ffn_pre.dot(&l.w1.t());

        let d_pre_ln1 =
            layer_norm_backward(&d_x_mid, &lt.ln1, &l.ln1_g, &mut gl.ln1_g, &mut gl.ln1_b);
        let mut d_x_in = d_pre_ln1.clone();
        let mut d_proj = d_pre_ln1;
        if let Some(m) = &lt.drop_attn {
            d_proj *= m;
        }
        gl.wo += &lt.ctx.t().dot(&d_proj);
        gl.bo += &d_proj.sum_axis(Axis(0));
        let d_ctx = d_proj.dot(&l.wo.t());

        let mut dq: Array2<f64> = Array2::zeros((n, cfg.hidden));
        let mut dk: Array2<f64> = Array2::zeros((n, cfg.hidden));
        let mut dv: Array2<f64> = Array2::zeros((n, cfg.hidden));
        for head in 0..cfg.heads {
            let c0 = head * dh;
            let c1 = c0 + dh;
            let w = &lt.attn[head];
            let d_ctx_h = d_ctx.slice(s![.., c0..c1]);
            let qh = lt.q.slice(s![.., c0..c1]);
            let kh = lt.k.slice(s![.., c0..c1]);
            let vh = lt.v.slice(s![.., c0..c1]);

            {
                let mut dvh = dv.slice_mut(s![.., c0..c1]);
                dvh += &w.t().dot(&d_ctx_h);
            }
            let dw = d_ctx_h.dot(&vh.t());
            let mut d_scores: Array2<f64> = Array2::zeros((n, n));
            for i in 0..n {
                let wrow = w.row(i);
                let dwrow = dw.row(i);
                let dot: f64 = dwrow.iter().zip(wrow.iter()).map(|(a, b)| a * b).sum();
                for j in 0..n {
                    d_scores[[i, j]] = wrow[j] * (dwrow[j] - dot) * scale;
                }
            }
            {
                let mut dqh = dq.slice_mut(s![.., c0..c1]);
                dqh += &d_scores.dot(&kh);
            }
            {
                let mut dkh = dk.slice_mut(s![.., c0..c1]);
                dkh += &d_scores.t().dot(&qh);
            }
        }

        gl.wq += &lt.x_in.t().dot(&dq);
        gl.bq += &dq.sum_axis(Axis(0));
        gl.wk += &lt.x_in.t().dot(&dk);
        gl.bk += &dk.sum_axis(Axis(0));
        gl.wv += &lt.x_in.t().dot(&dv);
        gl.bv += &dv.sum_axis(Axis(0));
        d_x_in += &dq.dot(&l.wq.t());
        d_x_in += &dk.dot(&l.wk.t());
        d_x_in += &dv.dot(&l.wv.t());
        dx = d_x_in;
    }

    for i in 0..n {
        let row = dx.row(i);
        let mut t = grads.tok_emb.row_mut(input.ids[i] as usize);
        t += &row;
        let mut sg = grads.seg_emb.row_mut(input.segments[i] as usize);
        sg += &row;
        let mut p = grads.pos_emb.row_mut(input.positions[i] as usize);
        p += &row;
    }
}
