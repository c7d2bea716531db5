//! Multinomial logistic regression trained by full-batch gradient descent.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::vocab::{vectorize, SparseVector, Vocabulary, DEFAULT_MIN_DF};
use super::{ClassifierError, Result, Task};

pub const MODEL_FORMAT: &str = "finsent-maxent";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxEntParams {
    pub learning_rate: f64,
    /// L2 strength on feature weights; the bias column is not penalised.
    pub l2: f64,
    pub max_epochs: usize,
    /// Largest step halvings tried per epoch before declaring convergence.
    pub max_halvings: usize,
    /// Stop when the largest absolute gradient entry falls below this.
    pub gradient_tolerance: f64,
    pub min_df: usize,
}

impl Default for MaxEntParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            l2: 1e-4,
            max_epochs: 100,
            max_halvings: 40,
            gradient_tolerance: 1e-10,
            min_df: DEFAULT_MIN_DF,
        }
    }
}

/// Row-major `classes x (features + 1)` weights, bias in the last column.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub classes: usize,
    pub features: usize,
    pub values: Vec<f64>,
}

impl Weights {
    pub fn zeros(classes: usize, features: usize) -> Self {
        Self {
            classes,
            features,
            values: vec![0.0; classes * (features + 1)],
        }
    }

    fn stride(&self) -> usize {
        self.features + 1
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.values[k * self.stride()..(k + 1) * self.stride()]
    }

    pub fn bias(&self, k: usize) -> f64 {
        self.values[k * self.stride() + self.features]
    }

    pub fn scores(&self, x: &SparseVector) -> Vec<f64> {
        (0..self.classes)
            .map(|k| {
                let row = self.row(k);
                row[self.features] + x.entries.iter().map(|(j, v)| row[*j] * v).sum::<f64>()
            })
            .collect()
    }

    pub fn probabilities(&self, x: &SparseVector) -> Vec<f64> {
        softmax(&self.scores(x))
    }
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

/// First index of the maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn log_sum_exp(scores: &[f64]) -> f64 {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln()
}

fn penalty(w: &Weights, l2: f64) -> f64 {
    let mut sum = 0.0;
    for k in 0..w.classes {
        sum += w.row(k)[..w.features].iter().map(|v| v * v).sum::<f64>();
    }
    0.5 * l2 * sum
}

/// Mean cross-entropy plus `l2/2 * |W|²` over non-bias weights.
pub fn loss(w: &Weights, x: &[SparseVector], y: &[usize], l2: f64) -> f64 {
    let data: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, &yi)| {
            let s = w.scores(xi);
            log_sum_exp(&s) - s[yi]
        })
        .sum();
    data / x.len() as f64 + penalty(w, l2)
}

pub fn loss_and_gradient(w: &Weights, x: &[SparseVector], y: &[usize], l2: f64) -> (f64, Vec<f64>) {
    let stride = w.stride();
    let n = x.len() as f64;
    let mut grad = vec![0.0; w.values.len()];
    let mut data = 0.0;
    for (xi, &yi) in x.iter().zip(y) {
        let s = w.scores(xi);
        data += log_sum_exp(&s) - s[yi];
        let p = softmax(&s);
        for k in 0..w.classes {
            let r = p[k] - if k == yi { 1.0 } else { 0.0 };
            let row = &mut grad[k * stride..(k + 1) * stride];
            for (j, v) in &xi.entries {
                row[*j] += r * v;
            }
            row[w.features] += r;
        }
    }
    for k in 0..w.classes {
        for j in 0..stride {
            let idx = k * stride + j;
            grad[idx] /= n;
            if j < w.features {
                grad[idx] += l2 * w.values[idx];
            }
        }
    }
    (data / n + penalty(w, l2), grad)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    /// Loss at initialisation and after every accepted step.
    pub losses: Vec<f64>,
    pub epochs: usize,
    pub halvings: usize,
    pub converged: bool,
}

/// Gradient descent from zero weights. A step that raises the loss is
/// retried with half the learning rate, so accepted losses never increase.
pub fn fit_weights(
    x: &[SparseVector],
    y: &[usize],
    classes: usize,
    features: usize,
    params: &MaxEntParams,
) -> Result<(Weights, TrainingTrace)> {
    if x.is_empty() {
        return Err(ClassifierError::NoInstances);
    }
    if x.len() != y.len() {
        return Err(ClassifierError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if let Some(&bad) = y.iter().find(|&&l| l >= classes) {
        return Err(ClassifierError::LabelOutOfRange { index: bad, classes });
    }
    let mut present: Vec<usize> = y.to_vec();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(ClassifierError::SingleClass(present.len()));
    }

    let mut w = Weights::zeros(classes, features);
    let mut lr = params.learning_rate;
    let mut trace = TrainingTrace::default();
    let (mut current, mut grad) = loss_and_gradient(&w, x, y, params.l2);
    trace.losses.push(current);
    while trace.epochs < params.max_epochs {
        if grad.iter().all(|g| g.abs() < params.gradient_tolerance) {
            trace.converged = true;
            break;
        }
        let mut accepted = None;
        for _ in 0..=params.max_halvings {
            let candidate = Weights {
                values: w.values.iter().zip(&grad).map(|(v, g)| v - lr * g).collect(),
                ..w.clone()
            };
            let (l, g) = loss_and_gradient(&candidate, x, y, params.l2);
            if !l.is_finite() {
                return Err(ClassifierError::Diverged(l));
            }
            if l <= current {
                accepted = Some((candidate, l, g));
                break;
            }
            lr *= 0.5;
            trace.halvings += 1;
        }
        let Some((next, l, g)) = accepted else {
            trace.converged = true;
            break;
        };
        w = next;
        current = l;
        grad = g;
        trace.losses.push(current);
        trace.epochs += 1;
    }
    Ok((w, trace))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxEntModel {
    pub task: Option<Task>,
    pub classes: Vec<String>,
    pub vocabulary: Vocabulary,
    pub params: MaxEntParams,
    pub weights: Weights,
    pub trace: TrainingTrace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub probabilities: Vec<f64>,
    pub oov: usize,
}

/// Builds the vocabulary from `documents` (already preprocessed) and fits
/// weights. `labels` index into `classes`.
pub fn train_maxent<S: AsRef<str> + Sync>(
    documents: &[Vec<S>],
    labels: &[usize],
    classes: Vec<String>,
    task: Option<Task>,
    params: &MaxEntParams,
) -> Result<MaxEntModel> {
    let vocabulary = Vocabulary::build(documents, params.min_df);
    let x: Vec<SparseVector> = documents.par_iter().map(|d| vectorize(d, &vocabulary)).collect();
    let (weights, trace) = fit_weights(&x, labels, classes.len(), vocabulary.len(), params)?;
    Ok(MaxEntModel {
        task,
        classes,
        vocabulary,
        params: *params,
        weights,
        trace,
    })
}

pub fn predict_vector(model: &MaxEntModel, x: &SparseVector) -> Prediction {
    let probabilities = model.weights.probabilities(x);
    Prediction {
        label: argmax(&probabilities),
        probabilities,
        oov: x.oov,
    }
}

pub fn predict<S: AsRef<str>>(model: &MaxEntModel, tokens: &[S]) -> Prediction {
    predict_vector(model, &vectorize(tokens, &model.vocabulary))
}

pub fn predict_batch<S: AsRef<str> + Sync>(model: &MaxEntModel, documents: &[Vec<S>]) -> Vec<Prediction> {
    documents.par_iter().map(|d| predict(model, d)).collect()
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    task: Option<Task>,
    classes: Vec<String>,
    vocabulary: Vocabulary,
    params: MaxEntParams,
    /// One row per class, bias last.
    weights: Vec<Vec<f64>>,
    trace: TrainingTrace,
}

impl MaxEntModel {
    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            task: self.task,
            classes: self.classes.clone(),
            vocabulary: self.vocabulary.clone(),
            params: self.params,
            weights: (0..self.weights.classes).map(|k| self.weights.row(k).to_vec()).collect(),
            trace: self.trace.clone(),
        };
        serde_json::to_writer_pretty(writer, &file).map_err(|e| ClassifierError::ModelFormat(e.to_string()))
    }

    pub fn read_json<R: Read>(reader: R) -> Result<Self> {
        let file: ModelFile =
            serde_json::from_reader(reader).map_err(|e| ClassifierError::ModelFormat(e.to_string()))?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(ClassifierError::ModelFormat(format!(
                "unsupported format {:?} version {}",
                file.format, file.version
            )));
        }
        let features = file.vocabulary.len();
        if file.weights.len() != file.classes.len() || file.weights.iter().any(|r| r.len() != features + 1) {
            return Err(ClassifierError::ModelFormat(
                "weight matrix does not match classes and vocabulary".into(),
            ));
        }
        if file.weights.iter().flatten().any(|v| !v.is_finite()) {
            return Err(ClassifierError::ModelFormat("non-finite weight".into()));
        }
        Ok(Self {
            task: file.task,
            weights: Weights {
                classes: file.classes.len(),
                features,
                values: file.weights.into_iter().flatten().collect(),
            },
            classes: file.classes,
            vocabulary: file.vocabulary,
            params: file.params,
            trace: file.trace,
        })
    }
}
