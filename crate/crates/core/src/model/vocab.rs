use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::text::TokenSequence;

/// Token → embedding row. Unknown tokens map to the extra row at index `len()`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct SemanticVocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl SemanticVocab {
    pub const DEFAULT_MIN_COUNT: usize = 2;
    pub const DEFAULT_MAX_SIZE: usize = 30_000;

    /// Tokens seen at least `min_count` times, most frequent first (ties by
    /// ascending token), capped at `max_size`.
    pub fn build(corpus: &[TokenSequence], min_count: usize, max_size: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for doc in corpus {
            for t in doc.iter() {
                *counts.entry(t).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().filter(|&(_, c)| c >= min_count).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(max_size);
        Self::from(ranked.into_iter().map(|(t, _)| t.to_owned()).collect::<Vec<_>>())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn unk_index(&self) -> usize {
        self.tokens.len()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn encode(&self, tokens: &TokenSequence) -> Vec<usize> {
        tokens
            .iter()
            .map(|t| self.get(t).unwrap_or(self.unk_index()))
            .collect()
    }

    pub fn as_map(&self) -> &HashMap<String, usize> {
        &self.index
    }
}

impl From<Vec<String>> for SemanticVocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }
}

impl From<SemanticVocab> for Vec<String> {
    fn from(v: SemanticVocab) -> Self {
        v.tokens
    }
}
