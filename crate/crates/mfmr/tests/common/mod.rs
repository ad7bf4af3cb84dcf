//! Shared generators and fixture builders for the integration tests.
//!
//! Random trees carry their own parent array so oracles can check adjacency
//! without touching the tree's edge set, and random formulas are built from
//! the grammar so they parse by construction.

use mfmr::corpus::FormulaContextPair;
use mfmr::opt::{parse_to_opt, OperatorTree};
use mfmr::token::tokenize_latex;
use mfmr::vocab::MATH;
use rand::Rng;

/// A random tree in pre-order numbering plus the parent array it was grown
/// from. Node i > 0 attaches somewhere on the right spine, which keeps the
/// insertion order a valid pre-order, so `parents` speaks the same node ids
/// as the tree.
pub struct RandomTree {
    pub tree: OperatorTree,
    pub parents: Vec<Option<usize>>,
}

impl RandomTree {
    /// Adjacency from the generator's own parent array.
    pub fn adjacent(&self, i: usize, j: usize) -> bool {
        self.parents[i] == Some(j) || self.parents[j] == Some(i)
    }
}

pub fn random_tree<R: Rng>(rng: &mut R, nodes: usize) -> RandomTree {
    assert!(nodes >= 1);
    let labels: Vec<String> = (0..nodes)
        .map(|i| {
            let c = (b'a' + (rng.random_range(0..26u8))) as char;
            if rng.random_range(0..6) == 0 {
                format!("n{i}")
            } else {
                c.to_string()
            }
        })
        .collect();
    let mut parents: Vec<Option<usize>> = vec![None];
    let mut spine = vec![0usize];
    for i in 1..nodes {
        let keep = rng.random_range(1..=spine.len());
        spine.truncate(keep);
        parents.push(Some(*spine.last().unwrap()));
        spine.push(i);
    }
    let tree = OperatorTree::from_parents(labels, parents.clone()).unwrap();
    RandomTree { tree, parents }
}

const OPERAND_COMMANDS: &[&str] = &["\\alpha", "\\beta", "\\theta", "\\lambda", "\\pi", "\\omega"];
const FUNCTION_COMMANDS: &[&str] = &["\\sin", "\\cos", "\\log", "\\exp"];

fn operand<R: Rng>(rng: &mut R) -> String {
    match rng.random_range(0..4) {
        0 => ((b'a' + rng.random_range(0..26u8)) as char).to_string(),
        1 => rng.random_range(0..100u32).to_string(),
        2 => OPERAND_COMMANDS[rng.random_range(0..OPERAND_COMMANDS.len())].to_string(),
        _ => ((b'x' + rng.random_range(0..3u8)) as char).to_string(),
    }
}

fn script_arg<R: Rng>(rng: &mut R, depth: usize) -> String {
    if rng.random_bool(0.5) {
        rng.random_range(0..10u32).to_string()
    } else {
        format!("{{{}}}", additive(rng, depth))
    }
}

fn atom<R: Rng>(rng: &mut R, depth: usize) -> String {
    if depth == 0 {
        return operand(rng);
    }
    match rng.random_range(0..6) {
        0 | 1 => operand(rng),
        2 => format!("({})", additive(rng, depth - 1)),
        3 => format!(
            "\\frac{{{}}}{{{}}}",
            additive(rng, depth - 1),
            additive(rng, depth - 1)
        ),
        4 => format!("\\sqrt{{{}}}", additive(rng, depth - 1)),
        _ => format!(
            "{} ({})",
            FUNCTION_COMMANDS[rng.random_range(0..FUNCTION_COMMANDS.len())],
            additive(rng, depth - 1)
        ),
    }
}

fn factor<R: Rng>(rng: &mut R, depth: usize) -> String {
    let base = atom(rng, depth);
    match rng.random_range(0..5) {
        0 => format!("{base}^{}", script_arg(rng, depth.saturating_sub(1))),
        1 => format!("{base}_{}", script_arg(rng, depth.saturating_sub(1))),
        _ => base,
    }
}

fn term<R: Rng>(rng: &mut R, depth: usize) -> String {
    let mut out = factor(rng, depth);
    if depth > 0 && rng.random_bool(0.4) {
        let op = match rng.random_range(0..3) {
            0 => " \\times ",
            1 => " \\div ",
            _ => " / ",
        };
        out = format!("{out}{op}{}", factor(rng, depth));
    }
    out
}

fn additive<R: Rng>(rng: &mut R, depth: usize) -> String {
    let mut out = term(rng, depth);
    for _ in 0..rng.random_range(0..3u32) {
        let op = if rng.random_bool(0.7) { " + " } else { " - " };
        out = format!("{out}{op}{}", term(rng, depth));
    }
    out
}

/// A random formula from the supported grammar; always tokenizes and parses.
pub fn random_formula<R: Rng>(rng: &mut R) -> String {
    let depth = rng.random_range(1..=3);
    let mut out = additive(rng, depth);
    if rng.random_bool(0.4) {
        let rel = match rng.random_range(0..5) {
            0 => " = ",
            1 => " < ",
            2 => " > ",
            3 => " \\leq ",
            _ => " \\geq ",
        };
        out = format!("{out}{rel}{}", additive(rng, depth));
    }
    out
}

/// Build a pair whose context is `words` with a [MATH] placeholder inserted
/// in the middle.
pub fn make_pair(
    formula: &str,
    source: &str,
    topic: Option<&str>,
    words: &[&str],
) -> FormulaContextPair {
    let formula_tokens = tokenize_latex(formula).unwrap();
    let opt = parse_to_opt(&formula_tokens).unwrap();
    let mut context_tokens: Vec<String> = words.iter().map(|w| w.to_string()).collect();
    context_tokens.insert(words.len() / 2, MATH.to_string());
    FormulaContextPair {
        formula_latex: formula.into(),
        formula_tokens,
        context_tokens,
        opt,
        source_id: source.into(),
        topic: topic.map(String::from),
    }
}

/// 32 pairs over 8 sources and 8 base formulas, each with a source-specific
/// context, small enough to overfit quickly.
pub fn toy_corpus_32() -> Vec<FormulaContextPair> {
    let formulas = [
        "a + b = c",
        "c^2 = a^2 + b^2",
        "\\frac{a+b}{c+d}",
        "x^2 - y^2",
        "\\sqrt{x + y}",
        "e = m c^2",
        "\\alpha + \\beta",
        "p \\times q",
    ];
    let themes = [
        ["sums", "of", "two", "numbers", "behave", "linearly"],
        ["squares", "on", "the", "triangle", "sides", "balance"],
        ["ratios", "of", "grouped", "terms", "stay", "bounded"],
        ["difference", "of", "squares", "factors", "nicely", "always"],
        ["roots", "grow", "slower", "than", "their", "arguments"],
        ["energy", "and", "mass", "scale", "together", "here"],
        ["greek", "symbols", "add", "like", "any", "others"],
        ["products", "commute", "for", "ordinary", "numbers", "too"],
    ];
    let mut pairs = Vec::new();
    for block in 0..4 {
        for (i, formula) in formulas.iter().enumerate() {
            let mut words: Vec<&str> = themes[i].to_vec();
            let shift = block % words.len();
            words.rotate_left(shift);
            pairs.push(make_pair(
                formula,
                &format!("src{i}"),
                None,
                &words,
            ));
        }
    }
    pairs
}

/// Separable 3-class corpus: every class carries its own distinctive
/// context word and formula operand.
pub fn separable_corpus(per_class: usize) -> Vec<FormulaContextPair> {
    let classes = [
        ("algebra", "u", ["polynomials", "factor", "over", "rings"]),
        ("geometry", "v", ["angles", "sum", "inside", "triangles"]),
        ("calculus", "w", ["limits", "define", "derivatives", "cleanly"]),
    ];
    let mut pairs = Vec::new();
    for (c, (topic, operand, words)) in classes.iter().enumerate() {
        for k in 0..per_class {
            let formula = format!("{operand} + {}", k % 7);
            let mut w: Vec<&str> = words.to_vec();
            let shift = k % w.len();
            w.rotate_left(shift);
            pairs.push(make_pair(
                &formula,
                &format!("{topic}#{k}"),
                Some(topic),
                &w,
            ));
        }
        let _ = c;
    }
    pairs
}

/// The demo fixture list: fifteen formulas over the same symbol family,
/// anchor included.
pub fn demo_formulas() -> Vec<String> {
    [
        "\\frac{a+b}{c+d}",
        "(a+b)/(c+d)",
        "(a+b) \\div (c+d)",
        "(a+b) \\times (c+d)",
        "\\frac{1+2}{3+4}",
        "\\frac{5+6}{7+8}",
        "(1+2) \\times (3+4)",
        "(1+2)/(3+4)",
        "\\frac{a}{c}",
        "a + b",
        "c + d",
        "(a+b) - (c+d)",
        "\\frac{a+b}{c}",
        "a \\times b",
        "\\sqrt{a+b}",
    ]
    .map(String::from)
    .to_vec()
}
