//! Bag-of-words maximum-entropy classifier for aspect and sentiment labels,
//! with evaluation metrics and annotator agreement.

pub mod corpus;
pub mod maxent;
pub mod metrics;
pub mod preprocess;
pub mod vocab;

use serde::{Deserialize, Serialize};

use crate::sentiment_features::{Aspect, Sentiment};

pub use corpus::{CorpusDocument, Instance, SplitSet};
pub use maxent::{predict, train_maxent, MaxEntModel, MaxEntParams, Prediction};
pub use metrics::{cohens_kappa, evaluate, EvalReport, Kappa};
pub use preprocess::{preprocess, whitespace_tokenize};
pub use vocab::{vectorize, SparseVector, Vocabulary};

#[derive(Debug, thiserror::Error)]
pub enum ClassifierError {
    #[error("{source_name}: line {line}: {message}")]
    Schema {
        source_name: String,
        line: u64,
        message: String,
    },

    #[error("document {0:?} appears more than once")]
    DuplicateId(String),

    #[error("document {id:?} is listed in both the {first} and {second} splits")]
    SplitLeakage {
        id: String,
        first: &'static str,
        second: &'static str,
    },

    #[error("split {split} lists unknown document {id:?}")]
    UnknownId { split: &'static str, id: String },

    #[error("training data has {0} distinct class(es); need at least 2")]
    SingleClass(usize),

    #[error("no training instances")]
    NoInstances,

    #[error("training diverged: loss is {0}")]
    Diverged(f64),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("label index {index} outside {classes} classes")]
    LabelOutOfRange { index: usize, classes: usize },

    #[error("empty label sequence")]
    Empty,

    #[error("unknown {kind} label {value:?}")]
    UnknownLabel { kind: &'static str, value: String },

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, ClassifierError>;

/// Which label family a classifier predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Aspect,
    Sentiment,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Aspect => "aspect",
            Task::Sentiment => "sentiment",
        }
    }

    /// Canonical class list in enumeration order.
    pub fn classes(self) -> Vec<String> {
        match self {
            Task::Aspect => Aspect::ALL.iter().map(|a| a.as_str().to_string()).collect(),
            Task::Sentiment => Sentiment::ALL.iter().map(|s| s.as_str().to_string()).collect(),
        }
    }

    /// Index of a raw label in [`Task::classes`].
    pub fn class_index(self, label: &str) -> Result<usize> {
        let unknown = || ClassifierError::UnknownLabel {
            kind: self.as_str(),
            value: label.to_string(),
        };
        match self {
            Task::Aspect => Aspect::parse(label).map(Aspect::index).map_err(|_| unknown()),
            Task::Sentiment => Sentiment::parse(label).map(Sentiment::index).map_err(|_| unknown()),
        }
    }
}

impl std::str::FromStr for Task {
    type Err = ClassifierError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aspect" => Ok(Task::Aspect),
            "sentiment" => Ok(Task::Sentiment),
            _ => Err(ClassifierError::UnknownLabel {
                kind: "task",
                value: s.to_string(),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_classes() {
        assert_eq!(Task::Aspect.classes().len(), 16);
        assert_eq!(Task::Sentiment.classes(), ["Negative", "Neutral", "Positive"]);
        assert_eq!(Task::Sentiment.class_index("positive").unwrap(), 2);
        assert_eq!(Task::Aspect.class_index("Profit/Loss").unwrap(), Aspect::ProfitLoss.index());
        assert!(Task::Aspect.class_index("Weather").is_err());
    }
}
