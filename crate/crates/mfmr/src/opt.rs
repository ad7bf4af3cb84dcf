//! Operator trees and the LaTeX-to-tree parser.
//!
//! An operator tree is the semantic form of a formula: internal nodes are
//! operations, leaves are operands, and node order is the depth-first
//! pre-order from the root. The parser covers a bounded LaTeX subset
//! (relations, additive and multiplicative operators, `\frac`, `\sqrt`,
//! scripts, parentheses, unary function commands, Greek/Latin operands,
//! digits); anything outside it is a [`ParseError`] and corpus extraction
//! skips the formula.
//!
//! Structural node labels are upper-case reserved words (`SUP`, `SUB`,
//! `FRAC`, `TIMES`, `DIV`, `SQRT`, `NEG`); command-derived labels keep the
//! command name without the backslash (`\alpha` -> `alpha`, `\leq` -> `leq`),
//! so they can never collide with single-letter operands.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::token::{MathToken, TokenKind};

pub const LABEL_SUP: &str = "SUP";
pub const LABEL_SUB: &str = "SUB";
pub const LABEL_FRAC: &str = "FRAC";
pub const LABEL_TIMES: &str = "TIMES";
pub const LABEL_DIV: &str = "DIV";
pub const LABEL_SQRT: &str = "SQRT";
pub const LABEL_NEG: &str = "NEG";

/// One tree node: operator or operand surface form plus its child count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OptNode {
    pub label: String,
    pub arity: usize,
}

/// Rooted operator tree. Nodes are stored in depth-first pre-order, so the
/// root is always index 0 and every edge points from a lower to a higher
/// index with the parent preceding all of its descendants.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OperatorTree {
    nodes: Vec<OptNode>,
    edges: BTreeSet<(usize, usize)>,
    root: usize,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OptError {
    #[error("tree must have at least one node")]
    Empty,
    #[error("node {0} has no parent and is not the unique root")]
    MultipleRoots(usize),
    #[error("node {0} is unreachable from the root")]
    Unreachable(usize),
    #[error("invalid edge ({0}, {1})")]
    BadEdge(usize, usize),
    #[error("node order is not the depth-first pre-order")]
    NotPreOrder,
    #[error("node {0} arity {1} does not match its {2} children")]
    BadArity(usize, usize, usize),
    #[error("malformed tree record: {0}")]
    Record(String),
}

impl OperatorTree {
    /// Single-node tree.
    pub fn leaf(label: impl Into<String>) -> Self {
        OperatorTree {
            nodes: vec![OptNode {
                label: label.into(),
                arity: 0,
            }],
            edges: BTreeSet::new(),
            root: 0,
        }
    }

    /// Build a tree from per-node parent links. Exactly one node must have no
    /// parent. Nodes are relinearized into pre-order (children keep their
    /// relative order), so the input numbering need not be pre-order.
    pub fn from_parents(
        labels: Vec<String>,
        parents: Vec<Option<usize>>,
    ) -> Result<Self, OptError> {
        if labels.is_empty() || labels.len() != parents.len() {
            return Err(OptError::Empty);
        }
        let n = labels.len();
        let mut root = None;
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, p) in parents.iter().enumerate() {
            match p {
                None => {
                    if root.replace(i).is_some() {
                        return Err(OptError::MultipleRoots(i));
                    }
                }
                Some(p) => {
                    if *p >= n || *p == i {
                        return Err(OptError::BadEdge(*p, i));
                    }
                    children[*p].push(i);
                }
            }
        }
        let root = root.ok_or(OptError::Empty)?;

        // Pre-order relinearization; also detects cycles (unvisited nodes).
        let mut order = Vec::with_capacity(n);
        let mut stack = vec![root];
        while let Some(i) = stack.pop() {
            order.push(i);
            for &c in children[i].iter().rev() {
                stack.push(c);
            }
        }
        if order.len() != n {
            let seen: BTreeSet<usize> = order.iter().copied().collect();
            let missing = (0..n).find(|i| !seen.contains(i)).unwrap();
            return Err(OptError::Unreachable(missing));
        }
        let mut new_index = vec![0usize; n];
        for (new, &old) in order.iter().enumerate() {
            new_index[old] = new;
        }
        let nodes: Vec<OptNode> = order
            .iter()
            .map(|&old| OptNode {
                label: labels[old].clone(),
                arity: children[old].len(),
            })
            .collect();
        let mut edges = BTreeSet::new();
        for (old, kids) in children.iter().enumerate() {
            for &c in kids {
                edges.insert((new_index[old], new_index[c]));
            }
        }
        Ok(OperatorTree {
            nodes,
            edges,
            root: 0,
        })
    }

    pub fn nodes(&self) -> &[OptNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn label(&self, i: usize) -> &str {
        &self.nodes[i].label
    }

    /// Child indices of `i` in ascending (= traversal) order.
    pub fn children(&self, i: usize) -> Vec<usize> {
        self.edges
            .range((i, 0)..(i + 1, 0))
            .map(|&(_, c)| c)
            .collect()
    }

    pub fn parent_of(&self, i: usize) -> Option<usize> {
        self.edges
            .iter()
            .find(|&&(_, c)| c == i)
            .map(|&(p, _)| p)
    }

    /// Parent and children of `i`.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.parent_of(i).into_iter().collect();
        out.extend(self.children(i));
        out
    }

    /// True when an edge joins `i` and `j` in either direction.
    pub fn adjacent(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i, j)) || self.edges.contains(&(j, i))
    }

    /// Check every structural invariant: edge count, single rooted parent
    /// structure, reachability, pre-order numbering, stored arities.
    pub fn validate(&self) -> Result<(), OptError> {
        let n = self.nodes.len();
        if n == 0 {
            return Err(OptError::Empty);
        }
        if self.root != 0 {
            return Err(OptError::NotPreOrder);
        }
        if self.edges.len() != n - 1 {
            return Err(OptError::Record(format!(
                "{} edges for {} nodes",
                self.edges.len(),
                n
            )));
        }
        let mut parent: Vec<Option<usize>> = vec![None; n];
        for &(p, c) in &self.edges {
            if p >= n || c >= n || p == c {
                return Err(OptError::BadEdge(p, c));
            }
            if parent[c].replace(p).is_some() {
                return Err(OptError::BadEdge(p, c));
            }
        }
        if parent[self.root].is_some() {
            return Err(OptError::BadEdge(parent[self.root].unwrap(), self.root));
        }
        for (i, p) in parent.iter().enumerate() {
            if i != self.root && p.is_none() {
                return Err(OptError::MultipleRoots(i));
            }
        }
        // Recompute pre-order with children in ascending index order; it must
        // be the identity permutation.
        let mut order = Vec::with_capacity(n);
        let mut stack = vec![self.root];
        while let Some(i) = stack.pop() {
            order.push(i);
            let kids = self.children(i);
            for &c in kids.iter().rev() {
                stack.push(c);
            }
        }
        if order.len() != n {
            let seen: BTreeSet<usize> = order.iter().copied().collect();
            let missing = (0..n).find(|i| !seen.contains(i)).unwrap();
            return Err(OptError::Unreachable(missing));
        }
        if order.iter().enumerate().any(|(want, &got)| want != got) {
            return Err(OptError::NotPreOrder);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            let kids = self.children(i).len();
            if node.arity != kids {
                return Err(OptError::BadArity(i, node.arity, kids));
            }
        }
        Ok(())
    }

    /// Tree over the first `k` pre-order nodes. A pre-order prefix is always
    /// a valid tree because every parent precedes its children.
    pub fn preorder_prefix(&self, k: usize) -> OperatorTree {
        let k = k.clamp(1, self.nodes.len());
        let edges: BTreeSet<(usize, usize)> = self
            .edges
            .iter()
            .filter(|&&(p, c)| p < k && c < k)
            .copied()
            .collect();
        let mut nodes: Vec<OptNode> = self.nodes[..k].to_vec();
        for (i, node) in nodes.iter_mut().enumerate() {
            node.arity = edges.range((i, 0)..(i + 1, 0)).count();
        }
        OperatorTree {
            nodes,
            edges,
            root: 0,
        }
    }
}

impl fmt::Display for OperatorTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_opt(self))
    }
}

// ---------------------------------------------------------------------------
// Record form

fn escape_label(label: &str, out: &mut String) {
    for c in label.chars() {
        if c == '(' || c == ')' || c == '\\' || c.is_whitespace() {
            out.push('\\');
        }
        out.push(c);
    }
}

/// Canonical single-line record: LISP-style parenthesized pre-order,
/// `(label child child ...)`, with `(`, `)`, `\` and whitespace in labels
/// escaped by a backslash.
pub fn serialize_opt(tree: &OperatorTree) -> String {
    fn emit(tree: &OperatorTree, i: usize, out: &mut String) {
        out.push('(');
        escape_label(tree.label(i), out);
        for c in tree.children(i) {
            out.push(' ');
            emit(tree, c, out);
        }
        out.push(')');
    }
    let mut out = String::new();
    emit(tree, tree.root, &mut out);
    out
}

/// Parse the record form back into a tree; inverse of [`serialize_opt`].
pub fn deserialize_opt(record: &str) -> Result<OperatorTree, OptError> {
    struct Rd<'a> {
        chars: std::iter::Peekable<std::str::Chars<'a>>,
    }
    impl Rd<'_> {
        fn skip_ws(&mut self) {
            while matches!(self.chars.peek(), Some(c) if c.is_whitespace()) {
                self.chars.next();
            }
        }
        fn node(
            &mut self,
            labels: &mut Vec<String>,
            parents: &mut Vec<Option<usize>>,
            parent: Option<usize>,
        ) -> Result<(), OptError> {
            self.skip_ws();
            if self.chars.next() != Some('(') {
                return Err(OptError::Record("expected '('".into()));
            }
            self.skip_ws();
            let mut label = String::new();
            while let Some(&c) = self.chars.peek() {
                match c {
                    '(' | ')' => break,
                    c if c.is_whitespace() => break,
                    '\\' => {
                        self.chars.next();
                        match self.chars.next() {
                            Some(esc) => label.push(esc),
                            None => {
                                return Err(OptError::Record("dangling escape".into()));
                            }
                        }
                    }
                    _ => {
                        label.push(c);
                        self.chars.next();
                    }
                }
            }
            if label.is_empty() {
                return Err(OptError::Record("empty label".into()));
            }
            let me = labels.len();
            labels.push(label);
            parents.push(parent);
            loop {
                self.skip_ws();
                match self.chars.peek() {
                    Some('(') => self.node(labels, parents, Some(me))?,
                    Some(')') => {
                        self.chars.next();
                        return Ok(());
                    }
                    _ => return Err(OptError::Record("expected '(' or ')'".into())),
                }
            }
        }
    }

    let mut rd = Rd {
        chars: record.chars().peekable(),
    };
    let mut labels = Vec::new();
    let mut parents = Vec::new();
    rd.node(&mut labels, &mut parents, None)?;
    rd.skip_ws();
    if rd.chars.next().is_some() {
        return Err(OptError::Record("trailing input after tree".into()));
    }
    OperatorTree::from_parents(labels, parents)
}

// ---------------------------------------------------------------------------
// Parser

#[derive(Debug, Error, PartialEq, Eq)]
#[error("cannot parse token {index} ({text:?}): {reason}")]
pub struct ParseError {
    /// Offending position in the token stream (== stream length when the
    /// input ended early).
    pub index: usize,
    pub text: String,
    pub reason: String,
}

const GREEK_AND_SYMBOL_OPERANDS: &[&str] = &[
    "alpha", "beta", "gamma", "delta", "epsilon", "varepsilon", "zeta", "eta", "theta",
    "vartheta", "iota", "kappa", "lambda", "mu", "nu", "xi", "pi", "varpi", "rho", "varrho",
    "sigma", "varsigma", "tau", "upsilon", "phi", "varphi", "chi", "psi", "omega", "Gamma",
    "Delta", "Theta", "Lambda", "Xi", "Pi", "Sigma", "Upsilon", "Phi", "Psi", "Omega", "infty",
    "partial", "nabla", "hbar", "ell", "imath", "jmath", "emptyset",
];

const FUNCTIONS: &[&str] = &[
    "sin", "cos", "tan", "cot", "sec", "csc", "sinh", "cosh", "tanh", "arcsin", "arccos",
    "arctan", "log", "ln", "exp", "det", "gcd", "min", "max", "lim",
];

/// Relation commands with their canonical labels (synonyms collapse).
const RELATION_COMMANDS: &[(&str, &str)] = &[
    ("leq", "leq"),
    ("le", "leq"),
    ("geq", "geq"),
    ("ge", "geq"),
    ("neq", "neq"),
    ("ne", "neq"),
    ("approx", "approx"),
    ("equiv", "equiv"),
    ("sim", "sim"),
    ("simeq", "simeq"),
    ("propto", "propto"),
    ("ll", "ll"),
    ("gg", "gg"),
    ("in", "in"),
    ("subset", "subset"),
    ("supset", "supset"),
    ("subseteq", "subseteq"),
    ("supseteq", "supseteq"),
];

#[derive(Debug)]
struct Build {
    label: String,
    children: Vec<Build>,
}

impl Build {
    fn leaf(label: impl Into<String>) -> Build {
        Build {
            label: label.into(),
            children: Vec::new(),
        }
    }
    fn op(label: impl Into<String>, children: Vec<Build>) -> Build {
        Build {
            label: label.into(),
            children,
        }
    }
}

fn linearize(build: Build) -> OperatorTree {
    let mut labels = Vec::new();
    let mut parents = Vec::new();
    fn walk(b: Build, parent: Option<usize>, labels: &mut Vec<String>, parents: &mut Vec<Option<usize>>) {
        let me = labels.len();
        labels.push(b.label);
        parents.push(parent);
        for c in b.children {
            walk(c, Some(me), labels, parents);
        }
    }
    walk(build, None, &mut labels, &mut parents);
    OperatorTree::from_parents(labels, parents).expect("builder trees are valid")
}

struct Parser<'a> {
    tokens: &'a [MathToken],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&'a MathToken> {
        self.tokens.get(self.pos)
    }

    fn peek_text(&self) -> Option<&'a str> {
        self.peek().map(|t| t.text.as_str())
    }

    fn bump(&mut self) -> &'a MathToken {
        let t = &self.tokens[self.pos];
        self.pos += 1;
        t
    }

    fn err(&self, reason: impl Into<String>) -> ParseError {
        ParseError {
            index: self.pos,
            text: self
                .peek()
                .map(|t| t.text.clone())
                .unwrap_or_else(|| "<end>".into()),
            reason: reason.into(),
        }
    }

    fn expect(&mut self, text: &str) -> Result<(), ParseError> {
        if self.peek_text() == Some(text) {
            self.bump();
            Ok(())
        } else {
            Err(self.err(format!("expected {text:?}")))
        }
    }

    fn command_name(tok: &MathToken) -> Option<&str> {
        if tok.kind == TokenKind::Command {
            Some(&tok.text[1..])
        } else {
            None
        }
    }

    fn relation_label(tok: &MathToken) -> Option<String> {
        match tok.kind {
            TokenKind::Relation => Some(tok.text.clone()),
            TokenKind::Command => {
                let name = &tok.text[1..];
                RELATION_COMMANDS
                    .iter()
                    .find(|(cmd, _)| *cmd == name)
                    .map(|(_, label)| (*label).to_string())
            }
            _ => None,
        }
    }

    fn is_operand_command(name: &str) -> bool {
        GREEK_AND_SYMBOL_OPERANDS.contains(&name)
    }

    fn is_function_command(name: &str) -> bool {
        FUNCTIONS.contains(&name)
    }

    /// Can the current token begin a factor? Drives juxtaposition.
    fn starts_factor(&self) -> bool {
        match self.peek() {
            None => false,
            Some(tok) => match tok.kind {
                TokenKind::Digit => true,
                TokenKind::Symbol => {
                    tok.text.chars().next().is_some_and(|c| c.is_alphabetic())
                        || tok.text == "("
                }
                TokenKind::Brace => tok.text == "{",
                TokenKind::Command => {
                    let name = &tok.text[1..];
                    name == "frac"
                        || name == "sqrt"
                        || Self::is_operand_command(name)
                        || Self::is_function_command(name)
                }
                _ => false,
            },
        }
    }

    fn relation(&mut self) -> Result<Build, ParseError> {
        let mut left = self.additive()?;
        while let Some(label) = self.peek().and_then(Self::relation_label) {
            self.bump();
            let right = self.additive()?;
            left = Build::op(label, vec![left, right]);
        }
        Ok(left)
    }

    fn additive(&mut self) -> Result<Build, ParseError> {
        let mut left = self.signed_term()?;
        loop {
            let label = match self.peek() {
                Some(t) if t.text == "+" || t.text == "-" => t.text.clone(),
                Some(t) if t.text == "\\pm" => "pm".to_string(),
                Some(t) if t.text == "\\mp" => "mp".to_string(),
                _ => break,
            };
            self.bump();
            let right = self.signed_term()?;
            left = Build::op(label, vec![left, right]);
        }
        Ok(left)
    }

    fn signed_term(&mut self) -> Result<Build, ParseError> {
        match self.peek_text() {
            Some("-") => {
                self.bump();
                let inner = self.signed_term()?;
                Ok(Build::op(LABEL_NEG, vec![inner]))
            }
            Some("+") => {
                self.bump();
                self.signed_term()
            }
            _ => self.term(),
        }
    }

    fn term(&mut self) -> Result<Build, ParseError> {
        let mut left = self.factor()?;
        loop {
            match self.peek_text() {
                Some("\\times") | Some("\\cdot") | Some("*") => {
                    self.bump();
                    let right = self.factor()?;
                    left = Build::op(LABEL_TIMES, vec![left, right]);
                }
                Some("/") | Some("\\div") => {
                    self.bump();
                    let right = self.factor()?;
                    left = Build::op(LABEL_DIV, vec![left, right]);
                }
                _ if self.starts_factor() => {
                    let right = self.factor()?;
                    left = Build::op(LABEL_TIMES, vec![left, right]);
                }
                _ => break,
            }
        }
        Ok(left)
    }

    fn factor(&mut self) -> Result<Build, ParseError> {
        if let Some(tok) = self.peek() {
            if let Some(name) = Self::command_name(tok) {
                if Self::is_function_command(name) {
                    let label = name.to_string();
                    self.bump();
                    let arg = self.factor()?;
                    return Ok(Build::op(label, vec![arg]));
                }
            }
        }
        self.scripted()
    }

    fn scripted(&mut self) -> Result<Build, ParseError> {
        let mut base = self.atom()?;
        loop {
            match self.peek_text() {
                Some("^") => {
                    self.bump();
                    let arg = self.script_arg()?;
                    base = Build::op(LABEL_SUP, vec![base, arg]);
                }
                Some("_") => {
                    self.bump();
                    let arg = self.script_arg()?;
                    base = Build::op(LABEL_SUB, vec![base, arg]);
                }
                _ => break,
            }
        }
        Ok(base)
    }

    /// Unbraced script arguments take exactly one token, so `x^12` is
    /// `SUP(x,1)` juxtaposed with `2` while `x^{12}` keeps the digit run.
    fn script_arg(&mut self) -> Result<Build, ParseError> {
        match self.peek() {
            Some(t) if t.text == "{" => self.braced_group(),
            Some(t) if t.kind == TokenKind::Digit => {
                let d = self.bump().text.clone();
                Ok(Build::leaf(d))
            }
            Some(t)
                if t.kind == TokenKind::Symbol
                    && t.text.chars().next().is_some_and(|c| c.is_alphabetic()) =>
            {
                let l = self.bump().text.clone();
                Ok(Build::leaf(l))
            }
            Some(t) if t.kind == TokenKind::Command => {
                let name = &t.text[1..];
                if Self::is_operand_command(name) {
                    let label = name.to_string();
                    self.bump();
                    Ok(Build::leaf(label))
                } else if name == "frac" {
                    self.frac()
                } else if name == "sqrt" {
                    self.sqrt()
                } else {
                    Err(self.err("unsupported script argument"))
                }
            }
            _ => Err(self.err("expected script argument")),
        }
    }

    fn braced_group(&mut self) -> Result<Build, ParseError> {
        self.expect("{")?;
        let inner = self.relation()?;
        self.expect("}")?;
        Ok(inner)
    }

    fn frac(&mut self) -> Result<Build, ParseError> {
        self.expect("\\frac")?;
        let num = self.tight_arg()?;
        let den = self.tight_arg()?;
        Ok(Build::op(LABEL_FRAC, vec![num, den]))
    }

    fn sqrt(&mut self) -> Result<Build, ParseError> {
        self.expect("\\sqrt")?;
        let arg = self.tight_arg()?;
        Ok(Build::op(LABEL_SQRT, vec![arg]))
    }

    /// Argument of `\frac` or `\sqrt`: a braced group or one operand token.
    fn tight_arg(&mut self) -> Result<Build, ParseError> {
        match self.peek() {
            Some(t) if t.text == "{" => self.braced_group(),
            Some(t) if t.kind == TokenKind::Digit => {
                let d = self.bump().text.clone();
                Ok(Build::leaf(d))
            }
            Some(t)
                if t.kind == TokenKind::Symbol
                    && t.text.chars().next().is_some_and(|c| c.is_alphabetic()) =>
            {
                let l = self.bump().text.clone();
                Ok(Build::leaf(l))
            }
            Some(t) if t.kind == TokenKind::Command => {
                let name = &t.text[1..];
                if Self::is_operand_command(name) {
                    let label = name.to_string();
                    self.bump();
                    Ok(Build::leaf(label))
                } else {
                    Err(self.err("unsupported argument"))
                }
            }
            _ => Err(self.err("expected argument")),
        }
    }

    fn atom(&mut self) -> Result<Build, ParseError> {
        let Some(tok) = self.peek() else {
            return Err(self.err("expected operand"));
        };
        match tok.kind {
            TokenKind::Digit => {
                // Maximal digit run becomes one numeric leaf.
                let mut run = String::new();
                while matches!(self.peek(), Some(t) if t.kind == TokenKind::Digit) {
                    run.push_str(&self.bump().text);
                }
                Ok(Build::leaf(run))
            }
            TokenKind::Symbol if tok.text == "(" => {
                self.bump();
                let inner = self.relation()?;
                self.expect(")")?;
                Ok(inner)
            }
            TokenKind::Symbol
                if tok.text.chars().next().is_some_and(|c| c.is_alphabetic()) =>
            {
                let label = self.bump().text.clone();
                Ok(Build::leaf(label))
            }
            TokenKind::Brace if tok.text == "{" => self.braced_group(),
            TokenKind::Command => {
                let name = &tok.text[1..];
                if name == "frac" {
                    self.frac()
                } else if name == "sqrt" {
                    self.sqrt()
                } else if Self::is_operand_command(name) {
                    let label = name.to_string();
                    self.bump();
                    Ok(Build::leaf(label))
                } else {
                    Err(self.err("unsupported command"))
                }
            }
            _ => Err(self.err("expected operand")),
        }
    }
}

/// Parse a token stream into an operator tree.
///
/// Precedence, loosest first: relations, additive, multiplicative
/// (explicit or juxtaposition), unary functions, scripts. Binary operators
/// associate left, so `a+b+c` roots at the second `+` with `+(a,b)` as its
/// left child.
pub fn parse_to_opt(tokens: &[MathToken]) -> Result<OperatorTree, ParseError> {
    let mut parser = Parser { tokens, pos: 0 };
    if tokens.is_empty() {
        return Err(parser.err("empty formula"));
    }
    let build = parser.relation()?;
    if parser.pos != tokens.len() {
        return Err(parser.err("trailing tokens"));
    }
    let tree = linearize(build);
    debug_assert!(tree.validate().is_ok());
    Ok(tree)
}

/// Tokenize and parse in one step.
pub fn parse_latex_to_opt(src: &str) -> Result<OperatorTree, ParseError> {
    let tokens = crate::token::tokenize_latex(src).map_err(|e| ParseError {
        index: 0,
        text: src.chars().take(24).collect(),
        reason: e.to_string(),
    })?;
    parse_to_opt(&tokens)
}
