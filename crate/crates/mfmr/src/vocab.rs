//! Token vocabulary with fixed special ids.
//!
//! Ids are dense: the six specials occupy 0..=5 and every other token gets
//! an id from 6 upward, ordered by descending frequency with ties broken
//! lexicographically so that builds are deterministic.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use thiserror::Error;

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";
pub const MATH: &str = "[MATH]";

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;
pub const MASK_ID: u32 = 4;
pub const MATH_ID: u32 = 5;

/// First id available to corpus tokens; everything below is special.
pub const FIRST_REGULAR_ID: u32 = 6;

pub const SPECIALS: [&str; 6] = [PAD, UNK, CLS, SEP, MASK, MATH];

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad vocab file: {0}")]
    Format(String),
    #[error("duplicate token {0:?}")]
    Duplicate(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    id_of: HashMap<String, u32>,
}

impl Vocab {
    /// Build from token frequencies; tokens below `min_freq` are dropped and
    /// will encode to `[UNK]`. Special strings in the counts are ignored
    /// because they already hold their reserved ids.
    pub fn from_counts(counts: &BTreeMap<String, u64>, min_freq: u64) -> Vocab {
        let mut ranked: Vec<(&String, u64)> = counts
            .iter()
            .filter(|(tok, &n)| n >= min_freq.max(1) && !SPECIALS.contains(&tok.as_str()))
            .map(|(tok, &n)| (tok, n))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(ranked.into_iter().map(|(tok, _)| tok.clone()));
        Vocab::from_token_list(tokens).expect("counts cannot produce duplicates")
    }

    fn from_token_list(tokens: Vec<String>) -> Result<Vocab, VocabError> {
        let mut id_of = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if id_of.insert(tok.clone(), i as u32).is_some() {
                return Err(VocabError::Duplicate(tok.clone()));
            }
        }
        Ok(Vocab { tokens, id_of })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Id for `token`, falling back to `[UNK]`.
    pub fn encode(&self, token: &str) -> u32 {
        self.id_of.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.id_of.contains_key(token)
    }

    pub fn decode(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn is_special(id: u32) -> bool {
        id < FIRST_REGULAR_ID
    }

    /// Write as a JSON array of tokens in id order.
    pub fn save(&self, path: &Path) -> Result<(), VocabError> {
        let json = serde_json::to_string_pretty(&self.tokens)
            .map_err(|e| VocabError::Format(e.to_string()))?;
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vocab, VocabError> {
        let text = fs::read_to_string(path)?;
        let tokens: Vec<String> =
            serde_json::from_str(&text).map_err(|e| VocabError::Format(e.to_string()))?;
        if tokens.len() < SPECIALS.len()
            || tokens[..SPECIALS.len()] != SPECIALS.map(String::from)
        {
            return Err(VocabError::Format(
                "first six entries must be the special tokens".into(),
            ));
        }
        Vocab::from_token_list(tokens)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(pairs: &[(&str, u64)]) -> BTreeMap<String, u64> {
        pairs.iter().map(|(t, n)| (t.to_string(), *n)).collect()
    }

    #[test]
    fn specials_hold_fixed_ids() {
        let v = Vocab::from_counts(&counts(&[("a", 3)]), 1);
        assert_eq!(v.encode(PAD), 0);
        assert_eq!(v.encode(UNK), 1);
        assert_eq!(v.encode(CLS), 2);
        assert_eq!(v.encode(SEP), 3);
        assert_eq!(v.encode(MASK), 4);
        assert_eq!(v.encode(MATH), 5);
        assert_eq!(v.encode("a"), 6);
        assert_eq!(v.len(), 7);
    }

    #[test]
    fn frequency_then_lexicographic_order() {
        let v = Vocab::from_counts(&counts(&[("b", 5), ("a", 5), ("z", 9), ("q", 1)]), 1);
        assert_eq!(v.decode(6), Some("z"));
        assert_eq!(v.decode(7), Some("a"));
        assert_eq!(v.decode(8), Some("b"));
        assert_eq!(v.decode(9), Some("q"));
    }

    #[test]
    fn min_freq_drops_to_unk() {
        let v = Vocab::from_counts(&counts(&[("zeta", 1), ("x", 2)]), 2);
        assert!(!v.contains("zeta"));
        assert_eq!(v.encode("zeta"), UNK_ID);
        assert_eq!(v.encode("x"), 6);
    }

    #[test]
    fn math_placeholder_in_counts_keeps_reserved_id() {
        let v = Vocab::from_counts(&counts(&[("[MATH]", 40), ("a", 1)]), 1);
        assert_eq!(v.encode(MATH), MATH_ID);
        assert_eq!(v.len(), 7);
    }

    #[test]
    fn ids_are_dense_bijection() {
        let v = Vocab::from_counts(&counts(&[("a", 2), ("b", 2), ("c", 1)]), 1);
        for id in 0..v.len() as u32 {
            let tok = v.decode(id).unwrap();
            assert_eq!(v.encode(tok), id);
        }
        assert_eq!(v.decode(v.len() as u32), None);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.json");
        let v = Vocab::from_counts(&counts(&[("alpha", 7), ("=", 3)]), 1);
        v.save(&path).unwrap();
        let back = Vocab::load(&path).unwrap();
        assert_eq!(v, back);
    }

    #[test]
    fn load_rejects_missing_specials() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.json");
        std::fs::write(&path, "[\"a\",\"b\"]").unwrap();
        assert!(Vocab::load(&path).is_err());
    }
}
