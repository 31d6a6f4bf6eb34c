//! Text normalisation ahead of lexicon scoring: tokenisation, stopword
//! removal and Porter stemming.

mod porter;

use std::collections::HashSet;
use std::fs;
use std::path::Path;

pub use porter::stem;

/// Bundled English stopword list (one word per line, `#` comments).
pub const DEFAULT_STOPWORDS: &str = include_str!("../../data/stopwords_en.txt");

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenList {
    pub tokens: Vec<String>,
}

impl TokenList {
    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl<S: Into<String>> FromIterator<S> for TokenList {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        Self {
            tokens: iter.into_iter().map(Into::into).collect(),
        }
    }
}

/// Lowercases, splits on whitespace, and trims non-alphanumeric characters
/// from both ends of each token. Interior punctuation is kept.
pub fn tokenize(text: &str) -> TokenList {
    text.to_lowercase()
        .split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|t| !t.is_empty())
        .collect()
}

pub fn remove_stopwords(tokens: TokenList, stopwords: &HashSet<String>) -> TokenList {
    TokenList {
        tokens: tokens
            .tokens
            .into_iter()
            .filter(|t| !stopwords.contains(t))
            .collect(),
    }
}

pub fn stem_tokens(tokens: &TokenList) -> TokenList {
    tokens.iter().map(stem).collect()
}

/// Parses a stopword file: one word per line, blank lines and `#` comments
/// ignored. Words are lowercased.
pub fn parse_stopwords(contents: &str) -> HashSet<String> {
    contents
        .lines()
        .map(|l| l.split('#').next().unwrap_or_default().trim())
        .filter(|l| !l.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn load_stopwords(path: &Path) -> std::io::Result<HashSet<String>> {
    Ok(parse_stopwords(&fs::read_to_string(path)?))
}

pub fn default_stopwords() -> HashSet<String> {
    parse_stopwords(DEFAULT_STOPWORDS)
}

/// Full normalisation chain used by the lexicon backend.
pub fn normalize(text: &str, stopwords: &HashSet<String>) -> TokenList {
    stem_tokens(&remove_stopwords(tokenize(text), stopwords))
}
