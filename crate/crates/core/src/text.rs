//! Tokenization, newsgroup header/quote stripping and stop-word filtering.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords_en.txt");

/// Bumped whenever [`normalize_and_tokenize`] changes behaviour.
const TOKENIZER_VERSION: &str = "alnum-lower-v1";

/// Lowercase tokens with no whitespace or punctuation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence {
    tokens: Vec<String>,
}

impl TokenSequence {
    pub fn new(tokens: Vec<String>) -> Self {
        Self { tokens }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(String::as_str)
    }

    pub fn join(&self, sep: &str) -> String {
        self.tokens.join(sep)
    }
}

impl From<Vec<&str>> for TokenSequence {
    fn from(v: Vec<&str>) -> Self {
        Self::new(v.into_iter().map(str::to_owned).collect())
    }
}

/// Lowercases and splits on every character that is not a letter or digit.
pub fn normalize_and_tokenize(text: &str) -> TokenSequence {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            // Full lowercase mappings can add combining marks (e.g. 'İ');
            // keeping only alphanumerics yields the simple mapping.
            current.extend(c.to_lowercase().filter(|l| l.is_alphanumeric()));
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    TokenSequence { tokens }
}

fn is_header_line(line: &str) -> bool {
    let Some((name, rest)) = line.split_once(':') else {
        return false;
    };
    let mut chars = name.chars();
    let starts_alpha = chars.next().is_some_and(|c| c.is_ascii_alphabetic());
    starts_alpha
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '-')
        && (rest.is_empty() || rest.starts_with(' ') || rest.starts_with('\t'))
}

fn is_quoted(line: &str) -> bool {
    line.trim_start().starts_with('>')
}

fn is_attribution(line: &str) -> bool {
    let t = line.trim_end();
    t.ends_with("writes:") || t.ends_with("wrote:")
}

/// Removes the mail header block and quoted reply text from a newsgroup post.
///
/// The header block (up to and including the first blank line) is only
/// dropped when the first line has `Name: value` shape. Lines starting with
/// `>` are dropped, as are `... writes:` / `... wrote:` lines directly
/// followed by a quoted line.
pub fn strip_newsgroup_noise(raw: &str) -> String {
    let lines: Vec<&str> = raw.split('\n').collect();
    let body: &[&str] = match lines.first() {
        Some(first) if is_header_line(first) => {
            match lines.iter().position(|l| l.trim().is_empty()) {
                Some(blank) => &lines[blank + 1..],
                None => &[],
            }
        }
        _ => &lines,
    };
    let mut kept = Vec::with_capacity(body.len());
    for (i, line) in body.iter().enumerate() {
        if is_quoted(line) {
            continue;
        }
        if is_attribution(line) && body.get(i + 1).is_some_and(|next| is_quoted(next)) {
            continue;
        }
        kept.push(*line);
    }
    kept.join("\n")
}

/// Fixed set of lowercase stop words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StopWords {
    words: BTreeSet<String>,
}

impl Default for StopWords {
    fn default() -> Self {
        Self::parse(DEFAULT_STOPWORDS)
    }
}

impl StopWords {
    /// One word per line; blank lines are ignored and entries are lowercased.
    pub fn parse(contents: &str) -> Self {
        let words = contents
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_lowercase)
            .collect();
        Self { words }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let contents = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::parse(&contents))
    }

    pub fn empty() -> Self {
        Self {
            words: BTreeSet::new(),
        }
    }

    /// Words in ascending order.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(String::as_str)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// SHA-256 over the tokenizer version and the sorted word list, hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(TOKENIZER_VERSION.as_bytes());
        for w in &self.words {
            h.update(b"\n");
            h.update(w.as_bytes());
        }
        hex::encode(h.finalize())
    }
}

pub fn remove_stopwords(tokens: &TokenSequence, stoplist: &StopWords) -> TokenSequence {
    TokenSequence {
        tokens: tokens
            .tokens
            .iter()
            .filter(|t| !stoplist.contains(t))
            .cloned()
            .collect(),
    }
}

/// Tokens for the two branches of the model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreparedText {
    /// Every token; feeds the recurrent encoder.
    pub semantic: TokenSequence,
    /// Stop words removed; feeds TF-IDF.
    pub statistical: TokenSequence,
}

/// Raw text to [`PreparedText`].
#[derive(Debug, Clone, PartialEq)]
pub struct TextPipeline {
    pub stopwords: StopWords,
    pub strip_newsgroup_noise: bool,
}

impl TextPipeline {
    pub fn new(stopwords: StopWords, strip_newsgroup_noise: bool) -> Self {
        Self {
            stopwords,
            strip_newsgroup_noise,
        }
    }

    pub fn prepare(&self, raw: &str) -> PreparedText {
        let semantic = if self.strip_newsgroup_noise {
            normalize_and_tokenize(&strip_newsgroup_noise(raw))
        } else {
            normalize_and_tokenize(raw)
        };
        let statistical = remove_stopwords(&semantic, &self.stopwords);
        PreparedText {
            semantic,
            statistical,
        }
    }
}
