//! The three pre-training losses, their sum, and the fine-tuning
//! classification loss. All of them read final-layer vectors from a
//! [`ForwardTrace`](crate::model::ForwardTrace) and the labels sampled onto
//! the [`ModelInput`](crate::inputs::ModelInput).

use ndarray::Array1;

use crate::inputs::ModelInput;
use crate::model::forward::ForwardTrace;
use crate::model::math::{bce_with_logit, log_sum_exp};
use crate::model::params::ParameterSet;
use crate::model::ModelError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Losses {
    pub mlm: f64,
    pub ccp: f64,
    pub msp: f64,
}

impl Losses {
    pub fn total(&self) -> f64 {
        loss_total(self.mlm, self.ccp, self.msp)
    }
}

/// Sum of masked-position cross-entropies at the final layer; 0 without
/// labels.
pub fn loss_mlm(trace: &ForwardTrace, input: &ModelInput, params: &ParameterSet) -> f64 {
    let h = trace.last_hidden();
    let mut loss = 0.0;
    for &(pos, orig) in &input.mlm_labels {
        let logits: Array1<f64> = h.row(pos).dot(&params.mlm_w) + &params.mlm_b;
        let lse = log_sum_exp(logits.as_slice().unwrap());
        loss += lse - logits[orig as usize];
    }
    loss
}

/// Binary cross-entropy of the context-correspondence bit against the
/// sigmoid score of the [CLS] vector; 0 when no bit is set.
pub fn loss_ccp(trace: &ForwardTrace, input: &ModelInput, params: &ParameterSet) -> f64 {
    match input.ccp_label {
        None => 0.0,
        Some(delta) => {
            let s = trace.last_hidden().row(0).dot(&params.ccp_w) + params.ccp_b[0];
            bce_with_logit(s, delta as f64)
        }
    }
}

/// Binary cross-entropy summed over the sampled node-pair labels, with
/// p(i,j) = sigmoid(proj_a(h_i) . proj_b(h_j)); 0 without labels.
pub fn loss_msp(trace: &ForwardTrace, input: &ModelInput, params: &ParameterSet) -> f64 {
    if input.msp_labels.is_empty() {
        return 0.0;
    }
    let h = trace.last_hidden();
    let a = h.dot(&params.msp_a_w) + &params.msp_a_b;
    let b = h.dot(&params.msp_b_w) + &params.msp_b_b;
    let mut loss = 0.0;
    for l in &input.msp_labels {
        let s = a.row(l.i).dot(&b.row(l.j));
        loss += bce_with_logit(s, l.delta as f64);
    }
    loss
}

/// The combined objective is the plain sum of the three task losses.
pub fn loss_total(mlm: f64, ccp: f64, msp: f64) -> f64 {
    mlm + ccp + msp
}

pub fn compute_losses(
    trace: &ForwardTrace,
    input: &ModelInput,
    params: &ParameterSet,
) -> Losses {
    Losses {
        mlm: loss_mlm(trace, input, params),
        ccp: loss_ccp(trace, input, params),
        msp: loss_msp(trace, input, params),
    }
}

/// Cross-entropy of the classification head on the [CLS] vector.
pub fn loss_classify(
    trace: &ForwardTrace,
    label: u32,
    params: &ParameterSet,
) -> Result<f64, ModelError> {
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
    let logits: Array1<f64> = trace.last_hidden().row(0).dot(&cls.w) + &cls.b;
    let lse = log_sum_exp(logits.as_slice().unwrap());
    Ok(lse - logits[label as usize])
}
