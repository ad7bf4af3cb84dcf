//! Model-input assembly: the three-segment token sequence, the
//! tree-restricted attention mask, and the three pre-training sampling
//! procedures (token masking, context swapping, node-edge masking).

use std::ops::Range;

use rand::seq::index;
use rand::Rng;
use thiserror::Error;

use crate::corpus::FormulaContextPair;
use crate::opt::OperatorTree;
use crate::vocab::{Vocab, CLS_ID, FIRST_REGULAR_ID, MASK_ID, PAD_ID, SEP_ID};

/// Which segments take part in the input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    Full,
    NoOpt,
    NoContext,
    FormulaOnly,
}

impl Ablation {
    pub fn uses_context(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoOpt)
    }

    pub fn uses_nodes(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoContext)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoOpt => "no_opt",
            Ablation::NoContext => "no_context",
            Ablation::FormulaOnly => "formula_only",
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Ablation::Full),
            "no_opt" => Ok(Ablation::NoOpt),
            "no_context" => Ok(Ablation::NoContext),
            "formula_only" => Ok(Ablation::FormulaOnly),
            _ => Err(format!(
                "unknown ablation {s:?}, want full|no_opt|no_context|formula_only"
            )),
        }
    }
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Square symmetric bit matrix gating attention.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskMatrix {
    side: usize,
    bits: Vec<u8>,
}

impl MaskMatrix {
    pub fn ones(side: usize) -> MaskMatrix {
        MaskMatrix {
            side,
            bits: vec![1; side * side],
        }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.bits[i * self.side + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: u8) {
        self.bits[i * self.side + j] = v;
    }

    /// Zero both (i,j) and (j,i), keeping the matrix symmetric.
    pub fn cut(&mut self, i: usize, j: usize) {
        self.set(i, j, 0);
        self.set(j, i, 0);
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.side).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MspLabel {
    /// Sequence position of the sampled node.
    pub i: usize,
    /// Sequence position of the other node.
    pub j: usize,
    /// 1 when the two nodes are joined by an edge in the original tree.
    pub delta: u8,
}

/// One example ready for the model: `[CLS] T [SEP] C [SEP] N` plus the
/// attention mask and whatever task labels have been sampled onto it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub ids: Vec<u32>,
    pub segments: Vec<u8>,
    pub positions: Vec<u32>,
    pub mask: MaskMatrix,
    pub node_span: Range<usize>,
    pub mlm_labels: Vec<(usize, u32)>,
    pub ccp_label: Option<u8>,
    pub msp_labels: Vec<MspLabel>,
}

impl ModelInput {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Extend to `len` with [PAD] ids; pad rows and columns of the mask are
    /// all zero.
    pub fn pad_to(&mut self, len: usize) {
        let old = self.ids.len();
        if len <= old {
            return;
        }
        self.ids.resize(len, PAD_ID);
        self.segments.resize(len, 0);
        self.positions.resize(len, 0);
        let mut mask = MaskMatrix {
            side: len,
            bits: vec![0; len * len],
        };
        for i in 0..old {
            for j in 0..old {
                mask.set(i, j, self.mask.get(i, j));
            }
        }
        self.mask = mask;
    }
}

/// An assembled input together with the tree its node segment came from
/// (rebuilt over the surviving pre-order prefix when truncation cut nodes).
#[derive(Debug, Clone)]
pub struct AssembledInput {
    pub input: ModelInput,
    pub opt: Option<OperatorTree>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AssembleError {
    #[error("formula needs {needed} positions but max_len is {max_len}")]
    TooLong { needed: usize, max_len: usize },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MaskError {
    #[error("node span holds {span} positions but the tree has {nodes} nodes")]
    SpanMismatch { span: usize, nodes: usize },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CcpError {
    #[error("context pool needs at least two distinct pairs")]
    PoolTooSmall,
}

/// Build the token sequence for one pair.
///
/// Layout is `[CLS] T [SEP] C [SEP] N`; the ablation drops C, N or both.
/// When the sequence exceeds `max_len`, the context tail goes first, then
/// the formula tail, and only then is the node segment cut back to a
/// pre-order prefix (always itself a valid tree). Positions run contiguously
/// up to the node segment, which restarts from zero. No task labels are set.
pub fn assemble(
    pair: &FormulaContextPair,
    vocab: &Vocab,
    max_len: usize,
    ablation: Ablation,
) -> Result<AssembledInput, AssembleError> {
    let t_ids: Vec<u32> = pair
        .formula_tokens
        .iter()
        .map(|t| vocab.encode(&t.text))
        .collect();
    let needed = t_ids.len() + 2;
    if needed > max_len {
        return Err(AssembleError::TooLong { needed, max_len });
    }
    let c_ids: Vec<u32> = if ablation.uses_context() {
        pair.context_tokens.iter().map(|w| vocab.encode(w)).collect()
    } else {
        Vec::new()
    };
    let n_full = if ablation.uses_nodes() {
        pair.opt.len()
    } else {
        0
    };

    let mut t_take = t_ids.len();
    let mut c_take = c_ids.len();
    let mut n_take = n_full;
    let total = |t: usize, c: usize, n: usize| {
        2 + t + if c > 0 { c + 1 } else { 0 } + n
    };
    while total(t_take, c_take, n_take) > max_len {
        if c_take > 0 {
            c_take -= 1;
        } else if t_take > 1 {
            t_take -= 1;
        } else if n_take > 1 {
            n_take -= 1;
        } else {
            break;
        }
    }

    let opt = if ablation.uses_nodes() {
        Some(if n_take == n_full {
            pair.opt.clone()
        } else {
            pair.opt.preorder_prefix(n_take)
        })
    } else {
        None
    };

    let mut ids = Vec::with_capacity(total(t_take, c_take, n_take));
    let mut segments = Vec::new();
    let mut positions = Vec::new();
    ids.push(CLS_ID);
    segments.push(0);
    ids.extend(&t_ids[..t_take]);
    segments.extend(std::iter::repeat_n(0u8, t_take));
    ids.push(SEP_ID);
    segments.push(0);
    if c_take > 0 {
        ids.extend(&c_ids[..c_take]);
        segments.extend(std::iter::repeat_n(1u8, c_take));
        ids.push(SEP_ID);
        segments.push(1);
    }
    positions.extend(0..ids.len() as u32);
    let node_start = ids.len();
    if let Some(tree) = &opt {
        for node in tree.nodes() {
            ids.push(vocab.encode(&node.label));
            segments.push(2);
        }
        positions.extend(0..tree.len() as u32);
    }
    let node_span = node_start..ids.len();

    let mut input = ModelInput {
        ids,
        segments,
        positions,
        mask: MaskMatrix::ones(0),
        node_span,
        mlm_labels: Vec::new(),
        ccp_label: None,
        msp_labels: Vec::new(),
    };
    input.mask = build_mask(&input, opt.as_ref()).expect("span matches by construction");
    Ok(AssembledInput { input, opt })
}

/// Attention mask for an assembled input: everything attends to everything
/// except that two distinct node positions see each other only when their
/// tree nodes share an edge (either direction).
pub fn build_mask(
    input: &ModelInput,
    opt: Option<&OperatorTree>,
) -> Result<MaskMatrix, MaskError> {
    let span = input.node_span.clone();
    let nodes = opt.map_or(0, |t| t.len());
    if span.len() != nodes {
        return Err(MaskError::SpanMismatch {
            span: span.len(),
            nodes,
        });
    }
    let mut mask = MaskMatrix::ones(input.len());
    if let Some(tree) = opt {
        for i in 0..tree.len() {
            for j in 0..tree.len() {
                if i != j && !tree.adjacent(i, j) {
                    mask.set(span.start + i, span.start + j, 0);
                }
            }
        }
    }
    Ok(mask)
}

/// Mask `ceil(mask_rate * maskable)` formula/context tokens for prediction.
/// Specials and node positions are never candidates. Each chosen position
/// becomes [MASK] with probability 0.8, a uniformly random non-special vocab
/// id with 0.1, and keeps its id with 0.1; the original id is recorded.
pub fn sample_mlm<R: Rng>(
    input: &mut ModelInput,
    vocab: &Vocab,
    rng: &mut R,
    mask_rate: f64,
) {
    let maskable: Vec<usize> = (0..input.len())
        .filter(|&p| input.segments[p] <= 1 && input.ids[p] >= FIRST_REGULAR_ID)
        .collect();
    if maskable.is_empty() || mask_rate <= 0.0 {
        return;
    }
    let k = ((mask_rate * maskable.len() as f64).ceil() as usize).min(maskable.len());
    let mut chosen: Vec<usize> = index::sample(rng, maskable.len(), k)
        .into_iter()
        .map(|i| maskable[i])
        .collect();
    chosen.sort_unstable();
    for p in chosen {
        input.mlm_labels.push((p, input.ids[p]));
        let u: f64 = rng.random();
        if u < 0.8 {
            input.ids[p] = MASK_ID;
        } else if u < 0.9 {
            input.ids[p] =
                rng.random_range(FIRST_REGULAR_ID..vocab.len() as u32);
        }
    }
}

/// With probability `swap_rate`, replace the pair's context with a uniformly
/// chosen different pair's context. Returns the (possibly swapped) pair and
/// the correspondence bit: 1 when the context is the original.
pub fn sample_ccp<R: Rng>(
    pair: &FormulaContextPair,
    pool: &[FormulaContextPair],
    rng: &mut R,
    swap_rate: f64,
) -> Result<(FormulaContextPair, u8), CcpError> {
    let others: Vec<usize> = (0..pool.len())
        .filter(|&i| pool[i].source_id != pair.source_id)
        .collect();
    if others.is_empty() {
        return Err(CcpError::PoolTooSmall);
    }
    let mut out = pair.clone();
    let u: f64 = rng.random();
    if u < swap_rate {
        let pick = others[rng.random_range(0..others.len())];
        out.context_tokens = pool[pick].context_tokens.clone();
        Ok((out, 0))
    } else {
        Ok((out, 1))
    }
}

/// Edge-mask the given tree nodes (indices into the tree, not the sequence):
/// every mask entry between a chosen node and its tree neighbors is zeroed in
/// both directions, and for each chosen node i a label row over all j != i
/// records whether (i,j) was an edge before cutting. With `mask_node_id` the
/// chosen nodes' token ids also become [MASK].
pub fn apply_msp(
    input: &mut ModelInput,
    opt: &OperatorTree,
    nodes: &[usize],
    mask_node_id: bool,
) {
    let start = input.node_span.start;
    for &i in nodes {
        for j in opt.neighbors(i) {
            input.mask.cut(start + i, start + j);
        }
        for j in 0..opt.len() {
            if j != i {
                input.msp_labels.push(MspLabel {
                    i: start + i,
                    j: start + j,
                    delta: opt.adjacent(i, j) as u8,
                });
            }
        }
        if mask_node_id {
            input.ids[start + i] = MASK_ID;
        }
    }
}

/// Sample `ceil(node_rate * |N|)` tree nodes uniformly and edge-mask them.
pub fn sample_msp<R: Rng>(
    input: &mut ModelInput,
    opt: &OperatorTree,
    rng: &mut R,
    node_rate: f64,
    mask_node_id: bool,
) {
    let n = input.node_span.len();
    if n == 0 || node_rate <= 0.0 {
        return;
    }
    let k = ((node_rate * n as f64).ceil() as usize).min(n);
    let mut chosen: Vec<usize> = index::sample(rng, n, k).into_iter().collect();
    chosen.sort_unstable();
    apply_msp(input, opt, &chosen, mask_node_id);
}
