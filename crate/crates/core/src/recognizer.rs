//! Dictionary-based entity recognition over token sequences.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use crate::corpus::{Corpus, EntitySource, NewsPiece};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Gazetteer {
    entries: BTreeSet<String>,
    case_sensitive: bool,
    keys: HashSet<Vec<String>>,
    max_tokens: usize,
}

impl Gazetteer {
    /// Entries are whitespace-normalized surface forms. Matching compares
    /// token by token, so "New  York" and "New York" are the same entry.
    pub fn new<I, S>(entries: I, case_sensitive: bool) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut set = BTreeSet::new();
        let mut keys = HashSet::new();
        let mut max_tokens = 0;
        for entry in entries {
            let parts: Vec<&str> = entry.as_ref().split_whitespace().collect();
            if parts.is_empty() {
                return Err(Error::InvalidArgument(
                    "gazetteer entry is empty".to_string(),
                ));
            }
            max_tokens = max_tokens.max(parts.len());
            keys.insert(parts.iter().map(|p| normalize(p, case_sensitive)).collect());
            set.insert(parts.join(" "));
        }
        if set.is_empty() {
            return Err(Error::InvalidArgument("gazetteer is empty".to_string()));
        }
        Ok(Gazetteer {
            entries: set,
            case_sensitive,
            keys,
            max_tokens,
        })
    }

    /// One entity per line; only the first tab-separated column is read.
    pub fn load(path: impl AsRef<Path>, case_sensitive: bool) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let entries = text
            .lines()
            .filter_map(|line| line.split('\t').next())
            .filter(|col| !col.trim().is_empty())
            .map(str::to_string)
            .collect::<Vec<_>>();
        Gazetteer::new(entries, case_sensitive)
    }

    pub fn entries(&self) -> &BTreeSet<String> {
        &self.entries
    }

    pub fn case_sensitive(&self) -> bool {
        self.case_sensitive
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains_tokens(&self, tokens: &[String]) -> bool {
        let key: Vec<String> = tokens
            .iter()
            .map(|t| normalize(t, self.case_sensitive))
            .collect();
        self.keys.contains(&key)
    }

    /// Longest match at the leftmost position wins; scanning resumes after
    /// the matched span, so overlapping shorter matches are suppressed.
    /// Returned strings are the matched tokens joined by a single space.
    pub fn recognize(&self, tokens: &[String]) -> Vec<String> {
        let normalized: Vec<String> = tokens
            .iter()
            .map(|t| normalize(t, self.case_sensitive))
            .collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let longest = (1..=self.max_tokens.min(tokens.len() - i))
                .rev()
                .find(|&len| self.keys.contains(&normalized[i..i + len]));
            match longest {
                Some(len) => {
                    out.push(tokens[i..i + len].join(" "));
                    i += len;
                }
                None => i += 1,
            }
        }
        out
    }
}

fn normalize(token: &str, case_sensitive: bool) -> String {
    if case_sensitive {
        token.to_string()
    } else {
        token.to_lowercase()
    }
}

pub fn recognize(tokens: &[String], gazetteer: &Gazetteer) -> Vec<String> {
    gazetteer.recognize(tokens)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RecognizeOptions {
    /// Keep only the first mention of each entity.
    pub dedupe: bool,
    /// Replace entity lists that were supplied externally too.
    pub overwrite: bool,
}

pub fn recognize_piece(piece: &NewsPiece, gazetteer: &Gazetteer, dedupe: bool) -> NewsPiece {
    let mut entities = gazetteer.recognize(&piece.tokens);
    if dedupe {
        let mut seen = HashSet::new();
        entities.retain(|e| seen.insert(e.clone()));
    }
    NewsPiece {
        entities,
        entity_source: EntitySource::Recognized,
        ..piece.clone()
    }
}

/// Fills in entity lists for pieces that still need them (or for all
/// pieces with `overwrite`).
pub fn recognize_corpus(
    corpus: &Corpus,
    gazetteer: &Gazetteer,
    opts: RecognizeOptions,
) -> Result<Corpus> {
    let pieces = corpus
        .iter()
        .map(|p| {
            if opts.overwrite || p.needs_recognition() {
                recognize_piece(p, gazetteer, opts.dedupe)
            } else {
                p.clone()
            }
        })
        .collect();
    Corpus::new(corpus.name.clone(), pieces)
}
