//! Bounded TF-IDF vocabulary and L2-normalized sparse document vectors.
//!
//! `idf(t) = ln((1 + N) / (1 + df(t))) + 1`, raw counts as term frequency.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::TokenSequence;

#[derive(Debug, Clone, PartialEq)]
pub struct TfidfVocabulary {
    terms: Vec<String>,
    term_index: HashMap<String, usize>,
    doc_freq: Vec<usize>,
    idf: Vec<f64>,
    num_docs: usize,
}

pub fn smoothed_idf(num_docs: usize, doc_freq: usize) -> f64 {
    ((1.0 + num_docs as f64) / (1.0 + doc_freq as f64)).ln() + 1.0
}

impl TfidfVocabulary {
    fn from_ranked(num_docs: usize, ranked: Vec<(String, usize)>) -> Self {
        let mut terms = Vec::with_capacity(ranked.len());
        let mut doc_freq = Vec::with_capacity(ranked.len());
        for (t, df) in ranked {
            terms.push(t);
            doc_freq.push(df);
        }
        let term_index = terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let idf = doc_freq.iter().map(|&df| smoothed_idf(num_docs, df)).collect();
        Self {
            terms,
            term_index,
            doc_freq,
            idf,
            num_docs,
        }
    }

    /// Vocabulary size `V`.
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn num_docs(&self) -> usize {
        self.num_docs
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.term_index.get(term).copied()
    }

    pub fn term(&self, index: usize) -> &str {
        &self.terms[index]
    }

    pub fn doc_freq(&self, index: usize) -> usize {
        self.doc_freq[index]
    }

    pub fn idf(&self, index: usize) -> f64 {
        self.idf[index]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&VocabFile::from(self))?)
    }

    /// Parses the persisted form; idf is recomputed from `num_docs` and `df`.
    pub fn from_json(s: &str) -> Result<Self> {
        let file: VocabFile = serde_json::from_str(s)?;
        file.try_into()
    }
}

/// On-disk layout: `{"num_docs": N, "terms": [{"t": term, "df": int}, ...]}` in index order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabFile {
    pub num_docs: usize,
    pub terms: Vec<VocabEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabEntry {
    pub t: String,
    pub df: usize,
}

impl From<&TfidfVocabulary> for VocabFile {
    fn from(v: &TfidfVocabulary) -> Self {
        Self {
            num_docs: v.num_docs,
            terms: v
                .terms
                .iter()
                .zip(&v.doc_freq)
                .map(|(t, &df)| VocabEntry { t: t.clone(), df })
                .collect(),
        }
    }
}

impl TryFrom<VocabFile> for TfidfVocabulary {
    type Error = Error;

    fn try_from(file: VocabFile) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for e in &file.terms {
            if !seen.insert(e.t.as_str()) {
                return Err(Error::Format(format!("duplicate vocabulary term {:?}", e.t)));
            }
            if e.df == 0 || e.df > file.num_docs {
                return Err(Error::Format(format!(
                    "term {:?} has df {} with {} documents",
                    e.t, e.df, file.num_docs
                )));
            }
        }
        let ranked = file.terms.into_iter().map(|e| (e.t, e.df)).collect();
        Ok(TfidfVocabulary::from_ranked(file.num_docs, ranked))
    }
}

/// Keeps the `max_terms` terms with the highest document frequency, ties
/// broken by ascending term; indices follow that ranking.
pub fn build_tfidf_vocab(corpus: &[TokenSequence], max_terms: usize) -> Result<TfidfVocabulary> {
    if corpus.is_empty() {
        return Err(Error::Build("empty corpus".into()));
    }
    if max_terms == 0 {
        return Err(Error::Build("max_terms must be at least 1".into()));
    }
    let mut df: HashMap<&str, usize> = HashMap::new();
    for doc in corpus {
        let mut unique: Vec<&str> = doc.iter().collect();
        unique.sort_unstable();
        unique.dedup();
        for t in unique {
            *df.entry(t).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = df.into_iter().map(|(t, n)| (t.to_owned(), n)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_terms);
    Ok(TfidfVocabulary::from_ranked(corpus.len(), ranked))
}

/// Sparse vector with strictly increasing indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    dim: usize,
    entries: Vec<(usize, f64)>,
}

impl SparseVector {
    pub fn new(dim: usize, entries: Vec<(usize, f64)>) -> Result<Self> {
        for w in entries.windows(2) {
            if w[0].0 >= w[1].0 {
                return Err(Error::Format("sparse indices must be strictly increasing".into()));
            }
        }
        if let Some(&(i, _)) = entries.last() {
            if i >= dim {
                return Err(Error::Format(format!("sparse index {i} outside dimension {dim}")));
            }
        }
        if entries.iter().any(|(_, v)| !v.is_finite()) {
            return Err(Error::Format("sparse vector has a non-finite value".into()));
        }
        Ok(Self { dim, entries })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.dim];
        for &(i, v) in &self.entries {
            d[i] = v;
        }
        d
    }
}

/// Count × idf for in-vocabulary terms, then L2-normalized. Documents with
/// no in-vocabulary terms give the zero vector.
pub fn compute_tfidf(tokens: &TokenSequence, vocab: &TfidfVocabulary) -> SparseVector {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for t in tokens.iter() {
        if let Some(i) = vocab.index_of(t) {
            *counts.entry(i).or_default() += 1;
        }
    }
    let mut entries: Vec<(usize, f64)> = counts
        .into_iter()
        .map(|(i, c)| (i, c as f64 * vocab.idf(i)))
        .collect();
    let norm = entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        entries.iter_mut().for_each(|(_, v)| *v /= norm);
    }
    SparseVector {
        dim: vocab.len(),
        entries,
    }
}
