//! LaTeX math tokenizer.
//!
//! Splits a LaTeX math string into lexemes: control sequences stay whole
//! (`\frac` is one token), braces and script markers are single tokens, and
//! digits are split one character per token. The token stream is stable under
//! re-tokenization of the space-joined token texts.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lexical class of a [`MathToken`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenKind {
    /// Control sequence starting with a backslash, e.g. `\frac`, `\alpha`.
    Command,
    /// Letters, parentheses and other single-character symbols.
    Symbol,
    /// A single decimal digit.
    Digit,
    /// `{` or `}`.
    Brace,
    /// `=`, `<`, `>`.
    Relation,
    /// `+`, `-`, `*`, `/`, `^`, `_`.
    Operator,
}

/// One LaTeX lexeme.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MathToken {
    pub text: String,
    pub kind: TokenKind,
}

impl MathToken {
    pub fn new(text: impl Into<String>) -> Self {
        let text = text.into();
        let kind = classify(&text);
        MathToken { text, kind }
    }

    pub fn is_command(&self) -> bool {
        self.kind == TokenKind::Command
    }
}

/// Token kind is a pure function of the token text, so tokens rebuilt from
/// stored texts (e.g. a dataset read back from disk) compare equal.
pub fn classify(text: &str) -> TokenKind {
    let mut chars = text.chars();
    let first = chars.next().expect("token text is non-empty");
    if first == '\\' {
        return TokenKind::Command;
    }
    match first {
        '{' | '}' => TokenKind::Brace,
        '=' | '<' | '>' => TokenKind::Relation,
        '+' | '-' | '*' | '/' | '^' | '_' => TokenKind::Operator,
        c if c.is_ascii_digit() => TokenKind::Digit,
        _ => TokenKind::Symbol,
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TokenizeError {
    #[error("unbalanced braces: unexpected '}}' at byte {0}")]
    UnexpectedClose(usize),
    #[error("unbalanced braces: {0} unclosed '{{'")]
    UnclosedOpen(usize),
    #[error("isolated trailing backslash at byte {0}")]
    TrailingBackslash(usize),
}

/// Tokenize a LaTeX math string.
///
/// Control sequences are maximal: `\frac` is one token and so is an unknown
/// `\foobar`. A backslash followed by a single non-letter character (`\,`,
/// `\{`) is also one command token. Whitespace separates tokens and is
/// otherwise dropped. Digits become one token per character; every other
/// character is its own single-character token.
pub fn tokenize_latex(src: &str) -> Result<Vec<MathToken>, TokenizeError> {
    let mut tokens = Vec::new();
    let mut depth: usize = 0;
    let mut chars = src.char_indices().peekable();

    while let Some((pos, c)) = chars.next() {
        if c.is_whitespace() {
            continue;
        }
        match c {
            '\\' => {
                let mut name = String::new();
                while let Some(&(_, n)) = chars.peek() {
                    if n.is_ascii_alphabetic() {
                        name.push(n);
                        chars.next();
                    } else {
                        break;
                    }
                }
                if name.is_empty() {
                    match chars.next() {
                        Some((_, n)) => tokens.push(MathToken::new(format!("\\{n}"))),
                        None => return Err(TokenizeError::TrailingBackslash(pos)),
                    }
                } else {
                    tokens.push(MathToken::new(format!("\\{name}")));
                }
            }
            '{' => {
                depth += 1;
                tokens.push(MathToken::new("{"));
            }
            '}' => {
                if depth == 0 {
                    return Err(TokenizeError::UnexpectedClose(pos));
                }
                depth -= 1;
                tokens.push(MathToken::new("}"));
            }
            _ => tokens.push(MathToken::new(c.to_string())),
        }
    }

    if depth != 0 {
        return Err(TokenizeError::UnclosedOpen(depth));
    }
    Ok(tokens)
}

/// Join token texts with single spaces; `tokenize_latex` of the result yields
/// the same token sequence.
pub fn join_tokens(tokens: &[MathToken]) -> String {
    tokens
        .iter()
        .map(|t| t.text.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}
