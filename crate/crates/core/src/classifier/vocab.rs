//! Vocabulary construction and sparse count vectors.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub const DEFAULT_MIN_DF: usize = 2;

/// Token to column map, indices dense in lexicographic token order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        Self::from_tokens(tokens)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    /// Keeps tokens that occur in at least `min_df` of the documents.
    pub fn build<D, S>(documents: &[D], min_df: usize) -> Self
    where
        D: AsRef<[S]>,
        S: AsRef<str>,
    {
        let mut df: BTreeMap<&str, usize> = BTreeMap::new();
        for doc in documents {
            let distinct: BTreeSet<&str> = doc.as_ref().iter().map(AsRef::as_ref).collect();
            for t in distinct {
                *df.entry(t).or_default() += 1;
            }
        }
        Self::from_tokens(
            df.into_iter()
                .filter(|(_, c)| *c >= min_df.max(1))
                .map(|(t, _)| t.to_string())
                .collect(),
        )
    }

    /// `tokens` must be unique; their order fixes the column indices.
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVector {
    /// (column, count), ascending by column.
    pub entries: Vec<(usize, f64)>,
    /// Tokens dropped for being out of vocabulary.
    pub oov: usize,
}

impl SparseVector {
    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn vectorize<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary) -> SparseVector {
    let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
    let mut oov = 0;
    for t in tokens {
        match vocab.get(t.as_ref()) {
            Some(i) => *counts.entry(i).or_default() += 1.0,
            None => oov += 1,
        }
    }
    SparseVector {
        entries: counts.into_iter().collect(),
        oov,
    }
}
