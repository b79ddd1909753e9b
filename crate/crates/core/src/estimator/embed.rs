//! Hashed token embeddings, the trainable stand-in for a frozen language
//! model's sequence features.

use serde::{Deserialize, Serialize};

use super::tensor::Matrix;
use crate::seed::{self, Rng};

/// Token used for texts with no tokens at all.
pub const EMPTY_TOKEN: &str = "<empty>";

/// Anything that turns text into a sequence of `dim()`-wide vectors.
pub trait SequenceEmbedder {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Vec<Vec<f64>>;
}

/// Lowercases, splits on whitespace, and emits each punctuation character as
/// its own token: `"Lights : On"` → `["lights", ":", "on"]`.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
            continue;
        }
        if !cur.is_empty() {
            tokens.push(std::mem::take(&mut cur));
        }
        if !ch.is_whitespace() {
            tokens.push(ch.to_string());
        }
    }
    if !cur.is_empty() {
        tokens.push(cur);
    }
    tokens
}

pub fn bucket(token: &str, vocab: usize) -> usize {
    (seed::fnv1a(token.as_bytes()) % vocab as u64) as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HashedEmbedder {
    pub table: Matrix,
}

impl HashedEmbedder {
    pub fn new(vocab: usize, dim: usize, scale: f64, rng: &mut Rng) -> Self {
        HashedEmbedder {
            table: Matrix::uniform(vocab, dim, scale, rng),
        }
    }

    pub fn vocab(&self) -> usize {
        self.table.rows
    }

    /// Table rows for `text`; never empty.
    pub fn token_rows(&self, text: &str) -> Vec<usize> {
        let rows: Vec<usize> = tokenize(text)
            .iter()
            .map(|t| bucket(t, self.vocab()))
            .collect();
        if rows.is_empty() {
            vec![bucket(EMPTY_TOKEN, self.vocab())]
        } else {
            rows
        }
    }

    pub fn rows(&self, ids: &[usize]) -> Vec<&[f64]> {
        ids.iter().map(|&i| self.table.row(i)).collect()
    }
}

impl SequenceEmbedder for HashedEmbedder {
    fn dim(&self) -> usize {
        self.table.cols
    }

    fn embed(&self, text: &str) -> Vec<Vec<f64>> {
        self.token_rows(text)
            .into_iter()
            .map(|r| self.table.row(r).to_vec())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn embedder(v: usize, d: usize) -> HashedEmbedder {
        HashedEmbedder::new(v, d, 0.08, &mut seed::rng(3))
    }

    #[test]
    fn tokenizer_rule() {
        assert_eq!(
            tokenize("outdoor lights : on"),
            vec!["outdoor", "lights", ":", "on"]
        );
        assert_eq!(
            tokenize("Water the plants, outdoor"),
            vec!["water", "the", "plants", ",", "outdoor"]
        );
        assert!(tokenize("   ").is_empty());
    }

    #[test]
    fn embed_length_and_determinism() {
        let e = embedder(4096, 8);
        let a = e.embed("outdoor lights : on");
        assert_eq!(a.len(), 4);
        assert_eq!(a, e.embed("outdoor lights : on"));
        assert_eq!(e.embed("").len(), 1);
    }

    #[test]
    fn colliding_tokens_share_rows() {
        let e = embedder(7, 4);
        let target = bucket("lamp", 7);
        let other = (0..1000)
            .map(|i| format!("tok{i}"))
            .find(|t| bucket(t, 7) == target)
            .expect("collision exists at tiny vocab");
        assert_eq!(e.embed("lamp"), e.embed(&other));
    }
}
