//! End-to-end acceptance gates, one test per criterion. Each test prints a
//! single PASS line (visible with `--nocapture`) and pins its tolerances and
//! runtime budget as local constants. Oracles here are written from scratch:
//! brute-force adjacency from the generator's own parent arrays, plain
//! exp/ln loss arithmetic, and a finite-difference stencil over every
//! parameter coordinate.

mod common;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use mfmr::corpus::vocab_from_pairs;
use mfmr::eval::{
    bpref, eval_classify, h_mean, similarity_demo, Pooling, QrelSet, RankedList,
};
use mfmr::inputs::{
    apply_msp, assemble, build_mask, sample_ccp, sample_mlm, sample_msp, Ablation, MaskMatrix,
    ModelInput,
};
use mfmr::model::{
    backward, compute_losses, forward, ModelConfig, Mode, ParameterSet,
};
use mfmr::opt::{deserialize_opt, parse_latex_to_opt, serialize_opt};
use mfmr::token::{join_tokens, tokenize_latex};
use mfmr::train::{pretrain_pairs, topic_labels, TrainConfig};
use mfmr::vocab::{Vocab, FIRST_REGULAR_ID, MASK_ID, MATH};
use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Sequence wrapper around a bare node block: `[CLS] t [SEP] c [SEP] N..`,
/// ids and segments filled with placeholders since only the span matters to
/// the mask builder.
fn node_block_input(nodes: usize) -> ModelInput {
    let prefix = 5;
    let len = prefix + nodes;
    let mut segments = vec![0u8; prefix];
    segments.extend(std::iter::repeat(2u8).take(nodes));
    ModelInput {
        ids: vec![FIRST_REGULAR_ID; len],
        segments,
        positions: (0..prefix as u32).chain(0..nodes as u32).collect(),
        mask: MaskMatrix::ones(len),
        node_span: prefix..len,
        mlm_labels: Vec::new(),
        ccp_label: None,
        msp_labels: Vec::new(),
    }
}

#[test]
fn a01_structure_mask_matches_the_adjacency_oracle() {
    const TREES: usize = 500;
    const MAX_NODES: usize = 12;
    const BUDGET: Duration = Duration::from_secs(10);
    let t0 = Instant::now();

    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for _ in 0..TREES {
        let n = rng.random_range(1..=MAX_NODES);
        let rt = common::random_tree(&mut rng, n);
        let input = node_block_input(n);
        let span = input.node_span.clone();
        let mask = build_mask(&input, Some(&rt.tree)).unwrap();
        for i in 0..input.len() {
            for j in 0..input.len() {
                let expect = if span.contains(&i) && span.contains(&j) {
                    let (ti, tj) = (i - span.start, j - span.start);
                    (ti == tj || rt.adjacent(ti, tj)) as u8
                } else {
                    1
                };
                assert_eq!(mask.get(i, j), expect, "tree n={n} at ({i},{j})");
            }
        }
        assert!(mask.is_symmetric());
    }

    // Hand-written matrix for c^2=a^2+b^2. Pre-order nodes:
    // 0 `=`, 1 SUP, 2 c, 3 2, 4 `+`, 5 SUP, 6 a, 7 2, 8 SUP, 9 b, 10 2.
    const FIXTURE: [&str; 11] = [
        "11001000000",
        "11110000000",
        "01100000000",
        "01010000000",
        "10001001000",
        "00001111000",
        "00000110000",
        "00000101000",
        "00001000111",
        "00000000110",
        "00000000101",
    ];
    let pair = common::make_pair(
        "c^2=a^2+b^2",
        "fix",
        None,
        &["the", "sides", "of", "a", "right", "triangle"],
    );
    let vocab = vocab_from_pairs(std::slice::from_ref(&pair), 1);
    let a = assemble(&pair, &vocab, 64, Ablation::Full).unwrap();
    let span = a.input.node_span.clone();
    assert_eq!(span.len(), 11);
    for i in 0..11 {
        for j in 0..11 {
            let want = FIXTURE[i].as_bytes()[j] - b'0';
            assert_eq!(
                a.input.mask.get(span.start + i, span.start + j),
                want,
                "fixture at ({i},{j})"
            );
        }
    }

    let took = t0.elapsed();
    assert!(took < BUDGET, "took {took:?}");
    println!("PASS a01 structure mask: {TREES} random trees and the 11x11 fixture match the adjacency oracle ({took:.2?})");
}

#[test]
fn a02_attention_respects_the_hard_mask() {
    const INPUTS: usize = 50;
    const ROW_SUM_TOL: f64 = 1e-5;

    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let words = [
        "series", "bound", "limit", "field", "norm", "basis", "graph", "prime", "group", "ring",
    ];
    let mut pairs = Vec::new();
    while pairs.len() < INPUTS {
        let formula = common::random_formula(&mut rng);
        let n_words = rng.random_range(3..=9);
        let ctx: Vec<&str> = (0..n_words)
            .map(|_| words[rng.random_range(0..words.len())])
            .collect();
        let pair = common::make_pair(&formula, &format!("s{}", pairs.len() % 7), None, &ctx);
        if pair.formula_tokens.len() + 2 + pair.opt.len() <= 60 {
            pairs.push(pair);
        }
    }
    let vocab = vocab_from_pairs(&pairs, 1);
    let cfg = ModelConfig {
        layers: 2,
        hidden: 16,
        heads: 4,
        ffn_mult: 2,
        vocab_size: vocab.len(),
        max_len: 96,
        segment_count: 3,
        dropout_rate: 0.0,
    };
    let params = ParameterSet::init(&cfg, None, &mut ChaCha8Rng::seed_from_u64(7));

    for (k, pair) in pairs.iter().enumerate() {
        let mut a = assemble(pair, &vocab, cfg.max_len, Ablation::Full).unwrap();
        sample_mlm(&mut a.input, &vocab, &mut rng, 0.2);
        if let Some(tree) = a.opt.clone() {
            let hide = rng.random_bool(0.5);
            sample_msp(&mut a.input, &tree, &mut rng, 0.2, hide);
        }
        a.input.ccp_label = Some((k % 2) as u8);
        if k % 3 == 0 {
            let target = (a.input.len() + 4).min(cfg.max_len);
            a.input.pad_to(target);
        }
        let n = a.input.len();
        let trace = forward(&a.input, &params, &cfg, Mode::Eval).unwrap();
        for (l, layer) in trace.layers.iter().enumerate() {
            for (h, attn) in layer.attn.iter().enumerate() {
                for i in 0..n {
                    let mut sum = 0.0;
                    let mut open = false;
                    for j in 0..n {
                        let w = attn[[i, j]];
                        if a.input.mask.get(i, j) == 0 {
                            assert_eq!(w, 0.0, "input {k} layer {l} head {h} at ({i},{j})");
                        } else {
                            open = true;
                        }
                        sum += w;
                    }
                    if open {
                        assert!(
                            (sum - 1.0).abs() <= ROW_SUM_TOL,
                            "input {k} layer {l} head {h} row {i} sums to {sum}"
                        );
                    } else {
                        assert_eq!(sum, 0.0, "fully masked row {i} of input {k}");
                    }
                }
            }
        }
    }
    println!("PASS a02 hard mask: {INPUTS} random inputs show exact zeros at masked pairs and unit row sums elsewhere");
}

#[test]
fn a03_analytic_gradients_match_finite_differences() {
    const EPS: f64 = 1e-3;
    const REL_TOL: f64 = 1e-4;
    // below this both sides are cancellation noise from ~17-magnitude losses
    const NOISE_FLOOR: f64 = 1e-6;
    const SEEDS: [u64; 3] = [31, 32, 33];
    const BUDGET: Duration = Duration::from_secs(300);
    let t0 = Instant::now();

    let pair = common::make_pair(
        "a+b=c",
        "fd",
        None,
        &[
            "every", "linear", "relation", "ties", "three", "unknown", "values", "together",
            "neatly",
        ],
    );
    let vocab = vocab_from_pairs(std::slice::from_ref(&pair), 1);
    assert!(vocab.len() <= 50);
    let cfg = ModelConfig {
        layers: 2,
        hidden: 16,
        heads: 4,
        ffn_mult: 4,
        vocab_size: 50,
        max_len: 24,
        segment_count: 3,
        dropout_rate: 0.0,
    };

    let mut worst_rel = 0.0f64;
    for (s, &seed) in SEEDS.iter().enumerate() {
        let mut a = assemble(&pair, &vocab, cfg.max_len, Ablation::Full).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
        sample_mlm(&mut a.input, &vocab, &mut rng, 0.3);
        a.input.ccp_label = Some((s % 2) as u8);
        let tree = a.opt.clone().unwrap();
        apply_msp(&mut a.input, &tree, &[1], false);
        a.input.pad_to(24);
        assert_eq!(a.input.len(), 24);
        assert!(!a.input.mlm_labels.is_empty() && !a.input.msp_labels.is_empty());

        let mut params = ParameterSet::init(&cfg, None, &mut ChaCha8Rng::seed_from_u64(seed));
        let loss_of = |p: &ParameterSet| {
            let trace = forward(&a.input, p, &cfg, Mode::Eval).unwrap();
            compute_losses(&trace, &a.input, p).total()
        };
        let trace = forward(&a.input, &params, &cfg, Mode::Eval).unwrap();
        let grads = backward(&trace, &a.input, &params, &cfg).unwrap();
        let flat: Vec<f64> = grads
            .tensors()
            .iter()
            .flat_map(|(_, t)| t.iter().copied().collect::<Vec<_>>())
            .collect();

        let poke = |p: &mut ParameterSet, idx: usize, delta: f64| {
            let mut base = 0usize;
            for (_, mut t) in p.tensors_mut() {
                let len = t.len();
                if idx < base + len {
                    *t.iter_mut().nth(idx - base).unwrap() += delta;
                    return;
                }
                base += len;
            }
            unreachable!("index {idx} beyond the parameter registry");
        };

        for (idx, &analytic) in flat.iter().enumerate() {
            poke(&mut params, idx, 2.0 * EPS);
            let f1 = loss_of(&params);
            poke(&mut params, idx, -EPS);
            let f2 = loss_of(&params);
            poke(&mut params, idx, -2.0 * EPS);
            let f3 = loss_of(&params);
            poke(&mut params, idx, -EPS);
            let f4 = loss_of(&params);
            poke(&mut params, idx, 2.0 * EPS);
            let numeric = (-f1 + 8.0 * f2 - 8.0 * f3 + f4) / (12.0 * EPS);
            let denom = analytic.abs().max(numeric.abs());
            if denom < NOISE_FLOOR {
                continue;
            }
            let rel = (analytic - numeric).abs() / denom;
            worst_rel = worst_rel.max(rel);
            assert!(
                rel < REL_TOL,
                "seed {seed} param {idx}: analytic {analytic:.3e} numeric {numeric:.3e} rel {rel:.3e}"
            );
        }
    }

    let took = t0.elapsed();
    assert!(took < BUDGET, "took {took:?}");
    println!("PASS a03 gradients: finite differences over every parameter, 3 seeds, worst rel {worst_rel:.2e} ({took:.2?})");
}

#[test]
fn a04_task_samplers_hit_their_design_rates() {
    const SAMPLES: usize = 10_000;
    const RATE_TOL: f64 = 0.01;
    const SPLIT_TOL: f64 = 0.02;
    const CCP_TOL: f64 = 0.02;

    // Maskable count 40 (7 formula tokens + 33 context words), so the
    // ceiling in the sampler lands exactly on 15%.
    let ctx: Vec<String> = (0..33).map(|i| format!("word{i:02}")).collect();
    let ctx_refs: Vec<&str> = ctx.iter().map(String::as_str).collect();
    let pair = common::make_pair("a+b=c+d", "stats", None, &ctx_refs);
    let vocab = vocab_from_pairs(std::slice::from_ref(&pair), 1);
    let base = assemble(&pair, &vocab, 128, Ablation::Full).unwrap();
    let maskable = base
        .input
        .ids
        .iter()
        .zip(&base.input.segments)
        .filter(|(&id, &seg)| seg <= 1 && id >= FIRST_REGULAR_ID)
        .count();
    assert_eq!(maskable, 40);

    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let (mut picked, mut masked, mut kept, mut randomized) = (0usize, 0usize, 0usize, 0usize);
    for _ in 0..SAMPLES {
        let mut input = base.input.clone();
        sample_mlm(&mut input, &vocab, &mut rng, 0.15);
        picked += input.mlm_labels.len();
        for &(pos, orig) in &input.mlm_labels {
            if input.ids[pos] == MASK_ID {
                masked += 1;
            } else if input.ids[pos] == orig {
                kept += 1;
            } else {
                randomized += 1;
            }
        }
    }
    let frac = picked as f64 / (SAMPLES * maskable) as f64;
    let p = picked as f64;
    assert!((frac - 0.15).abs() <= RATE_TOL, "mlm fraction {frac}");
    assert!((masked as f64 / p - 0.8).abs() <= SPLIT_TOL, "mask split");
    assert!((kept as f64 / p - 0.1).abs() <= SPLIT_TOL, "keep split");
    assert!((randomized as f64 / p - 0.1).abs() <= SPLIT_TOL, "random split");

    let other = common::make_pair("x^2", "other", None, &["unrelated", "prose", "entirely"]);
    let pool = [pair.clone(), other.clone()];
    let mut positives = 0usize;
    for _ in 0..SAMPLES {
        let (swapped, label) = sample_ccp(&pair, &pool, &mut rng, 0.5).unwrap();
        if label == 1 {
            positives += 1;
            assert_eq!(swapped.context_tokens, pair.context_tokens);
        } else {
            assert_eq!(swapped.context_tokens, other.context_tokens);
        }
    }
    let pos_frac = positives as f64 / SAMPLES as f64;
    assert!((pos_frac - 0.5).abs() <= CCP_TOL, "ccp positives {pos_frac}");

    // 20-node trees make ceil(0.15 * n) an exact 15% again.
    let mut node_picks = 0usize;
    let mut delta_checks = 0usize;
    for _ in 0..SAMPLES {
        let rt = common::random_tree(&mut rng, 20);
        let mut input = node_block_input(20);
        input.mask = build_mask(&input, Some(&rt.tree)).unwrap();
        sample_msp(&mut input, &rt.tree, &mut rng, 0.15, false);
        let start = input.node_span.start;
        let mut chosen: Vec<usize> = input.msp_labels.iter().map(|l| l.i - start).collect();
        chosen.dedup();
        assert_eq!(input.msp_labels.len(), chosen.len() * 19);
        node_picks += chosen.len();
        for l in &input.msp_labels {
            assert_eq!(
                l.delta,
                rt.adjacent(l.i - start, l.j - start) as u8,
                "msp label at ({}, {})",
                l.i,
                l.j
            );
            delta_checks += 1;
        }
    }
    let node_frac = node_picks as f64 / (SAMPLES * 20) as f64;
    assert!((node_frac - 0.15).abs() <= RATE_TOL, "msp fraction {node_frac}");

    println!("PASS a04 samplers: masking {frac:.4}, action split {:.3}/{:.3}/{:.3}, positives {pos_frac:.4}, node fraction {node_frac:.4}, {delta_checks} exact edge labels",
        masked as f64 / p, kept as f64 / p, randomized as f64 / p);
}

#[test]
fn a05_losses_match_independent_oracles() {
    const CASES: usize = 100;
    const ABS_TOL: f64 = 1e-8;

    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let words = ["sum", "rule", "proof", "step", "holds", "below", "above"];
    let mut pairs = Vec::new();
    while pairs.len() < CASES {
        let formula = common::random_formula(&mut rng);
        let ctx: Vec<&str> = (0..rng.random_range(2..6))
            .map(|_| words[rng.random_range(0..words.len())])
            .collect();
        let pair = common::make_pair(&formula, &format!("s{}", pairs.len()), None, &ctx);
        if pair.formula_tokens.len() + 2 + pair.opt.len() <= 44 {
            pairs.push(pair);
        }
    }
    let vocab = vocab_from_pairs(&pairs, 1);
    let cfg = ModelConfig {
        layers: 1,
        hidden: 16,
        heads: 2,
        ffn_mult: 2,
        vocab_size: vocab.len(),
        max_len: 64,
        segment_count: 3,
        dropout_rate: 0.0,
    };

    let sigmoid = |x: f64| 1.0 / (1.0 + (-x).exp());
    let bce = |p: f64, y: f64| -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());

    for (k, pair) in pairs.iter().enumerate() {
        let mut a = assemble(pair, &vocab, cfg.max_len, Ablation::Full).unwrap();
        sample_mlm(&mut a.input, &vocab, &mut rng, 0.25);
        a.input.ccp_label = Some(rng.random_range(0..2u8));
        let tree = a.opt.clone().unwrap();
        let node = rng.random_range(0..tree.len());
        apply_msp(&mut a.input, &tree, &[node], false);

        let params = ParameterSet::init(&cfg, None, &mut ChaCha8Rng::seed_from_u64(600 + k as u64));
        let trace = forward(&a.input, &params, &cfg, Mode::Eval).unwrap();
        let losses = compute_losses(&trace, &a.input, &params);
        let h = trace.last_hidden();

        let mut mlm_oracle = 0.0;
        for &(pos, orig) in &a.input.mlm_labels {
            let mut exps = vec![0.0; cfg.vocab_size];
            let mut z = 0.0;
            for v in 0..cfg.vocab_size {
                let mut logit = params.mlm_b[v];
                for d in 0..cfg.hidden {
                    logit += h[[pos, d]] * params.mlm_w[[d, v]];
                }
                exps[v] = logit.exp();
                z += exps[v];
            }
            mlm_oracle += -(exps[orig as usize] / z).ln();
        }
        assert!(
            (losses.mlm - mlm_oracle).abs() < ABS_TOL,
            "case {k}: mlm {} vs oracle {mlm_oracle}",
            losses.mlm
        );

        let mut s = params.ccp_b[0];
        for d in 0..cfg.hidden {
            s += h[[0, d]] * params.ccp_w[d];
        }
        let ccp_oracle = bce(sigmoid(s), a.input.ccp_label.unwrap() as f64);
        assert!(
            (losses.ccp - ccp_oracle).abs() < ABS_TOL,
            "case {k}: ccp {} vs oracle {ccp_oracle}",
            losses.ccp
        );

        let mut msp_oracle = 0.0;
        for l in &a.input.msp_labels {
            let mut score = 0.0;
            for d in 0..cfg.hidden {
                let mut ai = params.msp_a_b[d];
                let mut bj = params.msp_b_b[d];
                for e in 0..cfg.hidden {
                    ai += h[[l.i, e]] * params.msp_a_w[[e, d]];
                    bj += h[[l.j, e]] * params.msp_b_w[[e, d]];
                }
                score += ai * bj;
            }
            msp_oracle += bce(sigmoid(score), l.delta as f64);
        }
        assert!(
            (losses.msp - msp_oracle).abs() < ABS_TOL,
            "case {k}: msp {} vs oracle {msp_oracle}",
            losses.msp
        );

        assert_eq!(losses.total(), losses.mlm + losses.ccp + losses.msp);
    }

    // Dropping an input section removes its loss term entirely.
    let pair = &pairs[0];
    for ablation in [Ablation::NoOpt, Ablation::NoContext, Ablation::FormulaOnly] {
        let mut a = assemble(pair, &vocab, cfg.max_len, ablation).unwrap();
        sample_mlm(&mut a.input, &vocab, &mut rng, 0.25);
        if ablation.uses_context() {
            a.input.ccp_label = Some(1);
        }
        if let Some(tree) = a.opt.clone() {
            apply_msp(&mut a.input, &tree, &[0], false);
        }
        let params = ParameterSet::init(&cfg, None, &mut ChaCha8Rng::seed_from_u64(9));
        let trace = forward(&a.input, &params, &cfg, Mode::Eval).unwrap();
        let l = compute_losses(&trace, &a.input, &params);
        if !ablation.uses_nodes() {
            assert_eq!(l.msp, 0.0, "{ablation:?}");
        }
        if !ablation.uses_context() {
            assert_eq!(l.ccp, 0.0, "{ablation:?}");
        }
        assert_eq!(l.total(), l.mlm + l.ccp + l.msp);
    }

    println!("PASS a05 losses: {CASES} random cases match plain exp/ln oracles within {ABS_TOL:.0e}, totals are exact sums, ablations zero their terms");
}

fn masked_accuracy(
    pairs: &[mfmr::corpus::FormulaContextPair],
    vocab: &Vocab,
    cfg: &ModelConfig,
    params: &ParameterSet,
) -> f64 {
    let mut hits = 0usize;
    let mut total = 0usize;
    for (i, pair) in pairs.iter().enumerate() {
        let mut a = assemble(pair, vocab, cfg.max_len, Ablation::Full).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7000 + i as u64);
        sample_mlm(&mut a.input, vocab, &mut rng, 0.15);
        let trace = forward(&a.input, params, cfg, Mode::Eval).unwrap();
        let h = trace.last_hidden();
        for &(pos, orig) in &a.input.mlm_labels {
            let logits: Array1<f64> = h.row(pos).dot(&params.mlm_w) + &params.mlm_b;
            let best = logits
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            hits += (best == orig as usize) as usize;
            total += 1;
        }
    }
    hits as f64 / total as f64
}

#[test]
fn a06_training_overfits_the_toy_corpus() {
    const BASE_STEPS: usize = 300;
    const EXTRA_CHUNK: usize = 250;
    const MAX_EXTRA: usize = 2000;
    const TARGET_ACCURACY: f64 = 0.95;
    const WINDOW: usize = 20;
    const BUDGET: Duration = Duration::from_secs(900);
    let t0 = Instant::now();

    let pairs = common::toy_corpus_32();
    assert_eq!(pairs.len(), 32);
    let vocab = vocab_from_pairs(&pairs, 1);
    let cfg = ModelConfig::desk(vocab.len());
    let tcfg = TrainConfig {
        seed: 7,
        steps: BASE_STEPS,
        batch_size: 8,
        learning_rate: 1e-3,
        ..TrainConfig::default()
    };

    let (mut params, records) =
        pretrain_pairs(&pairs, &vocab, &cfg, &tcfg, None, None).unwrap();
    assert_eq!(records.len(), BASE_STEPS);
    let mean = |r: &[mfmr::train::TrainRecord]| {
        r.iter().map(|x| x.loss_total).sum::<f64>() / r.len() as f64
    };
    let early = mean(&records[..WINDOW]);
    let late = mean(&records[BASE_STEPS - WINDOW..]);
    assert!(
        late < early,
        "smoothed loss rose: steps 1-{WINDOW} {early:.4} vs final window {late:.4}"
    );

    let mut extra = 0usize;
    let mut accuracy = masked_accuracy(&pairs, &vocab, &cfg, &params);
    while accuracy < TARGET_ACCURACY && extra < MAX_EXTRA {
        let chunk = TrainConfig {
            seed: 7 + 1 + (extra / EXTRA_CHUNK) as u64,
            steps: EXTRA_CHUNK,
            ..tcfg.clone()
        };
        let (p, _) = pretrain_pairs(&pairs, &vocab, &cfg, &chunk, Some(params), None).unwrap();
        params = p;
        extra += EXTRA_CHUNK;
        accuracy = masked_accuracy(&pairs, &vocab, &cfg, &params);
    }
    assert!(
        accuracy >= TARGET_ACCURACY,
        "accuracy {accuracy:.3} after {extra} extra steps"
    );

    let took = t0.elapsed();
    assert!(took < BUDGET, "took {took:?}");
    println!("PASS a06 overfit: smoothed loss {early:.3} -> {late:.3}, masked accuracy {accuracy:.3} after {extra} extra steps ({took:.2?})");
}

fn run_of(query: &str, docs: &[&str]) -> RankedList {
    RankedList {
        query_id: query.into(),
        entries: docs
            .iter()
            .enumerate()
            .map(|(i, d)| (d.to_string(), 1.0 - 0.1 * i as f64))
            .collect(),
    }
}

fn qrels_of(query: &str, judged: &[(&str, u32)]) -> QrelSet {
    let mut q = QrelSet::default();
    for (doc, rating) in judged {
        q.insert(query, doc, *rating);
    }
    q
}

#[test]
fn a07_bpref_matches_hand_computed_values() {
    const H_MEAN_TOL: f64 = 0.01;

    // R=2, N=1, nonrelevant between the two relevant docs:
    // (1/2) * ((1 - 0/1) + (1 - 1/1)) = 0.5
    let q = qrels_of("q", &[("d1", 1), ("d2", 0), ("d3", 1)]);
    assert_eq!(bpref(&run_of("q", &["d1", "d2", "d3"]), &q, 1).unwrap(), 0.5);

    // all three relevant docs before any judged nonrelevant -> 1.0
    let q = qrels_of("q", &[("r1", 2), ("r2", 1), ("r3", 3), ("n1", 0), ("n2", 0)]);
    assert_eq!(
        bpref(&run_of("q", &["r1", "r2", "r3", "n1", "n2"]), &q, 1).unwrap(),
        1.0
    );

    // single relevant doc below all N=4 judged nonrelevant -> 0.0
    let q = qrels_of("q", &[("r1", 3), ("n1", 0), ("n2", 0), ("n3", 0), ("n4", 0)]);
    assert_eq!(
        bpref(&run_of("q", &["n1", "n2", "n3", "n4", "r1"]), &q, 1).unwrap(),
        0.0
    );

    // R=3 against a single judged nonrelevant: the count of nonrelevant
    // above is clamped by min(R, N) = 1, giving (1 + 0 + 0) / 3
    let q = qrels_of("q", &[("r1", 1), ("r2", 1), ("r3", 2), ("n1", 0)]);
    assert_eq!(
        bpref(&run_of("q", &["r1", "n1", "r2", "r3"]), &q, 1).unwrap(),
        1.0 / 3.0
    );

    // no judged nonrelevant at all: every retrieved relevant contributes 1
    let q = qrels_of("q", &[("r1", 1), ("r2", 4)]);
    assert_eq!(bpref(&run_of("q", &["r1", "u1", "r2"]), &q, 1).unwrap(), 1.0);

    // unjudged docs between judged ones change nothing
    let q = qrels_of("q", &[("r1", 2), ("n1", 0), ("r2", 3)]);
    assert_eq!(
        bpref(&run_of("q", &["r1", "u1", "u2", "n1", "r2"]), &q, 1).unwrap(),
        0.5
    );

    // the full threshold only counts ratings >= 3 as relevant; r1 (rating 2)
    // becomes judged nonrelevant there
    let q = qrels_of("q", &[("r1", 2), ("r2", 3)]);
    assert_eq!(bpref(&run_of("q", &["r1", "r2"]), &q, 3).unwrap(), 0.0);
    assert_eq!(bpref(&run_of("q", &["r2", "r1"]), &q, 3).unwrap(), 1.0);

    assert!(bpref(&run_of("q", &["d"]), &QrelSet::default(), 1).is_err());

    let hm = h_mean(71.34, 59.63);
    assert!((hm - 64.96).abs() <= H_MEAN_TOL, "h_mean {hm}");

    println!("PASS a07 bpref: 8 hand-computed cases exact, h_mean(71.34, 59.63) = {hm:.4}");
}

#[test]
fn a08_classifier_fine_tune_separates_three_classes() {
    const TARGET_ACCURACY: f64 = 0.95;
    const BUDGET: Duration = Duration::from_secs(900);
    let t0 = Instant::now();

    let pairs = common::separable_corpus(20);
    assert_eq!(pairs.len(), 60);
    let vocab = vocab_from_pairs(&pairs, 1);
    let labels = topic_labels(&pairs, 3).unwrap();
    let cfg = ModelConfig {
        layers: 2,
        hidden: 32,
        heads: 4,
        ffn_mult: 2,
        vocab_size: vocab.len(),
        max_len: 48,
        segment_count: 3,
        dropout_rate: 0.0,
    };
    let init = ParameterSet::init(&cfg, None, &mut ChaCha8Rng::seed_from_u64(88));
    let tcfg = TrainConfig {
        seed: 13,
        steps: 300,
        batch_size: 8,
        learning_rate: 5e-3,
        ..TrainConfig::default()
    };
    let (params, _) =
        mfmr::train::finetune_pairs(&pairs, &vocab, &cfg, init, 3, &tcfg, None).unwrap();

    let cls = params.cls.as_ref().unwrap();
    let mut hits = 0usize;
    for (pair, &label) in pairs.iter().zip(&labels) {
        let a = assemble(pair, &vocab, cfg.max_len, Ablation::Full).unwrap();
        let trace = forward(&a.input, &params, &cfg, Mode::Eval).unwrap();
        let logits: Array1<f64> = trace.last_hidden().row(0).dot(&cls.w) + &cls.b;
        let best = logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        hits += (best == label as usize) as usize;
    }
    let accuracy = hits as f64 / pairs.len() as f64;
    assert!(accuracy >= TARGET_ACCURACY, "accuracy {accuracy}");

    // Hand-computed confusion arithmetic, exact.
    let r = eval_classify(&[(0, 0), (1, 1), (2, 2), (0, 0), (1, 1), (2, 2)], 3);
    assert_eq!(
        (r.macro_precision, r.macro_recall, r.macro_f1),
        (1.0, 1.0, 1.0)
    );

    // confusion rows [[1,1],[0,2]]
    let r = eval_classify(&[(0, 0), (0, 1), (1, 1), (1, 1)], 2);
    assert_eq!(r.macro_precision, (1.0 + 2.0 / 3.0) / 2.0);
    assert_eq!(r.macro_recall, (0.5 + 1.0) / 2.0);
    assert_eq!(r.macro_f1, (2.0 / 3.0 + 4.0 / 5.0) / 2.0);

    // class 2 never appears: contributes exact zeros to every macro
    let r = eval_classify(&[(0, 0), (1, 0), (1, 1)], 3);
    assert_eq!(r.per_class[2].precision, 0.0);
    assert_eq!(r.per_class[2].recall, 0.0);
    assert_eq!(r.per_class[2].f1, 0.0);
    assert_eq!(r.macro_precision, (0.5 + 1.0 + 0.0) / 3.0);
    assert_eq!(r.macro_recall, (1.0 + 0.5 + 0.0) / 3.0);
    assert_eq!(r.macro_f1, (2.0 / 3.0 + 2.0 / 3.0 + 0.0) / 3.0);

    // fully crossed predictions
    let r = eval_classify(&[(0, 1), (1, 0)], 2);
    assert_eq!((r.macro_precision, r.macro_recall, r.macro_f1), (0.0, 0.0, 0.0));

    // every prediction collapses onto class 0
    let r = eval_classify(&[(0, 0), (1, 0)], 2);
    assert_eq!(r.macro_precision, 0.25);
    assert_eq!(r.macro_recall, 0.5);
    assert_eq!(r.macro_f1, (2.0 / 3.0) / 2.0);

    let took = t0.elapsed();
    assert!(took < BUDGET, "took {took:?}");
    println!("PASS a08 fine-tune: 3-class accuracy {accuracy:.3}, 5 macro-metric cases exact ({took:.2?})");
}

#[test]
fn a09_parser_goldens_and_round_trips_hold() {
    const RANDOM_FORMULAS: usize = 1000;

    let tree = parse_latex_to_opt("c^2=a^2+b^2").unwrap();
    assert_eq!(tree.len(), 11);
    assert_eq!(tree.edges().len(), 10);
    assert_eq!(tree.label(tree.root()), "=");
    assert_eq!(
        serialize_opt(&tree),
        "(= (SUP (c) (2)) (+ (SUP (a) (2)) (SUP (b) (2))))"
    );

    assert_eq!(serialize_opt(&parse_latex_to_opt("a").unwrap()), "(a)");
    let frac = parse_latex_to_opt("\\frac{a+b}{c+d}").unwrap();
    assert_eq!((frac.len(), frac.edges().len()), (7, 6));
    assert_eq!(serialize_opt(&frac), "(FRAC (+ (a) (b)) (+ (c) (d)))");
    assert_eq!(
        serialize_opt(&parse_latex_to_opt("E=mc^2").unwrap()),
        "(= (E) (TIMES (m) (SUP (c) (2))))"
    );

    let mut fixtures = common::demo_formulas();
    fixtures.extend(
        [
            "c^2=a^2+b^2",
            "E=mc^2",
            "a",
            "\\alpha \\leq \\beta",
            "x_i^2 \\geq 0",
            "\\sin x^2",
            "a+b+c",
        ]
        .map(String::from),
    );
    for f in &fixtures {
        let tree = parse_latex_to_opt(f).unwrap();
        let record = serialize_opt(&tree);
        let back = deserialize_opt(&record).unwrap();
        assert_eq!(back, tree, "round trip of {f}");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(909);
    for _ in 0..RANDOM_FORMULAS {
        let formula = common::random_formula(&mut rng);
        let tokens = tokenize_latex(&formula).unwrap();
        let rejoined = tokenize_latex(&join_tokens(&tokens)).unwrap();
        assert_eq!(rejoined, tokens, "tokenizer round trip of {formula}");
        let tree = parse_latex_to_opt(&formula).unwrap();
        let back = deserialize_opt(&serialize_opt(&tree)).unwrap();
        assert_eq!(back, tree, "tree round trip of {formula}");
    }

    println!("PASS a09 parser: goldens, {} fixture round trips, {RANDOM_FORMULAS} random formula round trips", fixtures.len());
}

#[test]
fn a10_pretraining_runs_are_bit_reproducible() {
    let pairs = &common::toy_corpus_32()[..8];
    let vocab = vocab_from_pairs(pairs, 1);
    let cfg = ModelConfig {
        layers: 2,
        hidden: 16,
        heads: 4,
        ffn_mult: 2,
        vocab_size: vocab.len(),
        max_len: 64,
        segment_count: 3,
        dropout_rate: 0.0,
    };
    let tcfg = TrainConfig {
        seed: 42,
        steps: 30,
        batch_size: 4,
        learning_rate: 1e-3,
        ..TrainConfig::default()
    };

    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let (_, rec_a) =
        pretrain_pairs(pairs, &vocab, &cfg, &tcfg, None, Some(dir_a.path())).unwrap();
    let (_, rec_b) =
        pretrain_pairs(pairs, &vocab, &cfg, &tcfg, None, Some(dir_b.path())).unwrap();
    assert_eq!(rec_a, rec_b);

    for name in [mfmr::train::PRETRAIN_LOG, mfmr::train::FINAL_CHECKPOINT] {
        let a = std::fs::read(dir_a.path().join(name)).unwrap();
        let b = std::fs::read(dir_b.path().join(name)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{name} differs between runs");
    }

    println!("PASS a10 determinism: repeated runs wrote byte-identical logs and checkpoints");
}

#[test]
fn a11_similarity_demo_ranks_the_anchor_first() {
    let formulas = common::demo_formulas();
    assert_eq!(formulas.len(), 15);
    let anchor = formulas[0].clone();

    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for f in &formulas {
        let tokens = tokenize_latex(f).unwrap();
        let tree = parse_latex_to_opt(f).unwrap();
        for t in &tokens {
            *counts.entry(t.text.clone()).or_default() += 1;
        }
        for node in tree.nodes() {
            *counts.entry(node.label.clone()).or_default() += 1;
        }
    }
    *counts.entry(MATH.to_string()).or_default() += 1;
    let vocab = Vocab::from_counts(&counts, 1);
    let cfg = ModelConfig::desk(vocab.len());
    let params = ParameterSet::init(&cfg, None, &mut ChaCha8Rng::seed_from_u64(77));

    let rows = similarity_demo(
        &anchor,
        &formulas,
        &params,
        &cfg,
        &vocab,
        Ablation::Full,
        Pooling::Mean2,
    )
    .unwrap();
    assert_eq!(rows.len(), 15);
    assert_eq!(rows[0].0, anchor);
    assert_eq!(rows[0].1, 1.0);
    for w in rows.windows(2) {
        assert!(w[0].1 >= w[1].1, "rows out of order: {w:?}");
    }

    println!("PASS a11 demo: 15 rows, anchor at rank 1 with similarity exactly 1.0");
}
