//! Corpus JSONL and train/dev/test split manifests.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::Deserialize;

use super::preprocess::preprocess;
use super::{ClassifierError, Result, Task};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusDocument {
    pub id: String,
    pub tokens: Vec<String>,
    pub aspects: Vec<String>,
    pub sentiments: Vec<String>,
}

impl CorpusDocument {
    pub fn labels(&self, task: Task) -> &[String] {
        match task {
            Task::Aspect => &self.aspects,
            Task::Sentiment => &self.sentiments,
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

#[derive(Deserialize)]
struct RawDocument {
    id: String,
    tokens: Vec<String>,
    #[serde(default)]
    aspect: Option<OneOrMany>,
    #[serde(default)]
    sentiment: Option<OneOrMany>,
}

fn labels(v: Option<OneOrMany>) -> Vec<String> {
    match v {
        None => Vec::new(),
        Some(OneOrMany::One(s)) => vec![s],
        Some(OneOrMany::Many(v)) => v,
    }
}

/// One JSON object per line: `{"id", "tokens", "aspect"?, "sentiment"?}`.
/// Label fields may be a string or a list of strings.
pub fn read_corpus<R: Read>(reader: R, source_name: &str) -> Result<Vec<CorpusDocument>> {
    let mut docs = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = line.map_err(|e| ClassifierError::Io {
            path: source_name.to_string(),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawDocument = serde_json::from_str(&line).map_err(|e| ClassifierError::Schema {
            source_name: source_name.to_string(),
            line: line_no,
            message: e.to_string(),
        })?;
        if !seen.insert(raw.id.clone()) {
            return Err(ClassifierError::DuplicateId(raw.id));
        }
        docs.push(CorpusDocument {
            id: raw.id,
            tokens: raw.tokens,
            aspects: labels(raw.aspect),
            sentiments: labels(raw.sentiment),
        });
    }
    Ok(docs)
}

pub fn read_corpus_path(path: &Path) -> Result<Vec<CorpusDocument>> {
    let f = std::fs::File::open(path).map_err(|e| ClassifierError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    read_corpus(f, &path.display().to_string())
}

/// One training or evaluation example: a document paired with one label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub doc_id: String,
    /// Preprocessed tokens.
    pub tokens: Vec<String>,
    pub label: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InstanceSet {
    pub instances: Vec<Instance>,
    /// Documents whose tokens were all filtered out.
    pub empty_documents: Vec<String>,
    /// Documents without a label for the task.
    pub unlabelled_documents: Vec<String>,
}

/// Emits one instance per (document, label) for the task, skipping
/// documents that lose every token in preprocessing.
pub fn instances<'a, I>(docs: I, task: Task) -> Result<InstanceSet>
where
    I: IntoIterator<Item = &'a CorpusDocument>,
{
    let mut out = InstanceSet::default();
    for doc in docs {
        let labels = doc.labels(task);
        if labels.is_empty() {
            out.unlabelled_documents.push(doc.id.clone());
            continue;
        }
        let tokens = preprocess(&doc.tokens);
        if tokens.is_empty() {
            out.empty_documents.push(doc.id.clone());
            continue;
        }
        for l in labels {
            out.instances.push(Instance {
                doc_id: doc.id.clone(),
                tokens: tokens.clone(),
                label: task.class_index(l)?,
            });
        }
    }
    Ok(out)
}

/// Per-class instance counts, in class order.
pub fn label_distribution(instances: &[Instance], classes: usize) -> Vec<u64> {
    let mut counts = vec![0; classes];
    for i in instances {
        counts[i.label] += 1;
    }
    counts
}

pub const SPLIT_NAMES: [&str; 3] = ["train", "dev", "test"];

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SplitSet {
    pub train: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
}

impl SplitSet {
    /// Fails if any id appears in two splits.
    pub fn new(train: Vec<String>, dev: Vec<String>, test: Vec<String>) -> Result<Self> {
        let mut owner: BTreeMap<&str, &'static str> = BTreeMap::new();
        for (name, ids) in SPLIT_NAMES.iter().zip([&train, &dev, &test]) {
            for id in ids {
                if let Some(first) = owner.insert(id, name) {
                    if first != *name {
                        return Err(ClassifierError::SplitLeakage {
                            id: id.clone(),
                            first,
                            second: name,
                        });
                    }
                }
            }
        }
        Ok(Self { train, dev, test })
    }

    pub fn get(&self, split: &str) -> Option<&[String]> {
        match split {
            "train" => Some(&self.train),
            "dev" => Some(&self.dev),
            "test" => Some(&self.test),
            _ => None,
        }
    }

    /// Documents of one split in manifest order.
    pub fn select<'a>(&self, split: &'static str, docs: &'a [CorpusDocument]) -> Result<Vec<&'a CorpusDocument>> {
        let by_id: BTreeMap<&str, &CorpusDocument> = docs.iter().map(|d| (d.id.as_str(), d)).collect();
        let ids = self.get(split).unwrap_or(&[]);
        ids.iter()
            .map(|id| {
                by_id.get(id.as_str()).copied().ok_or_else(|| ClassifierError::UnknownId {
                    split,
                    id: id.clone(),
                })
            })
            .collect()
    }
}

/// One id per line; blank lines and `#` comments are skipped.
pub fn read_id_list<R: Read>(reader: R, source_name: &str) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for line in BufReader::new(reader).lines() {
        let line = line.map_err(|e| ClassifierError::Io {
            path: source_name.to_string(),
            source: e,
        })?;
        let t = line.trim();
        if !t.is_empty() && !t.starts_with('#') {
            ids.push(t.to_string());
        }
    }
    Ok(ids)
}

pub fn read_id_list_path(path: &Path) -> Result<Vec<String>> {
    let f = std::fs::File::open(path).map_err(|e| ClassifierError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    read_id_list(f, &path.display().to_string())
}
