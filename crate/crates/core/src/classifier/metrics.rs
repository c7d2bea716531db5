//! Classification metrics and inter-annotator agreement.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{ClassifierError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Gold count.
    pub support: u64,
    pub predicted: u64,
    /// Absent from both gold and predictions: scores are set to 0 and the
    /// class is left out of the macro average.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    /// `confusion[gold][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    pub n: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Scores single-label predictions; both slices index into `classes`.
pub fn evaluate(predictions: &[usize], gold: &[usize], classes: &[String]) -> Result<EvalReport> {
    if predictions.len() != gold.len() {
        return Err(ClassifierError::LengthMismatch {
            left: predictions.len(),
            right: gold.len(),
        });
    }
    if gold.is_empty() {
        return Err(ClassifierError::Empty);
    }
    let k = classes.len();
    if let Some(&bad) = predictions.iter().chain(gold).find(|&&l| l >= k) {
        return Err(ClassifierError::LabelOutOfRange { index: bad, classes: k });
    }
    let mut confusion = vec![vec![0u64; k]; k];
    for (&p, &g) in predictions.iter().zip(gold) {
        confusion[g][p] += 1;
    }
    let n = gold.len() as u64;
    let correct: u64 = (0..k).map(|c| confusion[c][c]).sum();

    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let tp = confusion[c][c];
            let support: u64 = confusion[c].iter().sum();
            let predicted: u64 = confusion.iter().map(|row| row[c]).sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            ClassMetrics {
                class: classes[c].clone(),
                precision,
                recall,
                f1: ratio(2 * tp, support + predicted),
                support,
                predicted,
                degenerate: support == 0 && predicted == 0,
            }
        })
        .collect();

    let live: Vec<&ClassMetrics> = per_class.iter().filter(|m| !m.degenerate).collect();
    let macro_f1 = live.iter().map(|m| m.f1).sum::<f64>() / live.len() as f64;
    let weighted_f1 = per_class.iter().map(|m| m.f1 * m.support as f64).sum::<f64>() / n as f64;
    // pooled: tp = correct, fp = fn = n - correct
    let micro_f1 = ratio(2 * correct, 2 * n);
    Ok(EvalReport {
        per_class,
        accuracy: ratio(correct, n),
        micro_f1,
        macro_f1,
        weighted_f1,
        confusion,
        n,
    })
}

impl EvalReport {
    /// Per-class rows followed by accuracy, macro, micro and weighted rows.
    /// Header: `class,precision,recall,f1,support,degenerate`.
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["class", "precision", "recall", "f1", "support", "degenerate"])?;
        for m in &self.per_class {
            w.write_record([
                m.class.clone(),
                m.precision.to_string(),
                m.recall.to_string(),
                m.f1.to_string(),
                m.support.to_string(),
                m.degenerate.to_string(),
            ])?;
        }
        let n = self.n.to_string();
        for (name, value) in [
            ("accuracy", self.accuracy),
            ("macro avg", self.macro_f1),
            ("micro avg", self.micro_f1),
            ("weighted avg", self.weighted_f1),
        ] {
            w.write_record([name, "", "", &value.to_string(), &n, "false"])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Square matrix with a leading `gold` column naming each row.
    pub fn write_confusion_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["gold".to_string()];
        header.extend(self.per_class.iter().map(|m| m.class.clone()));
        w.write_record(&header)?;
        for (m, row) in self.per_class.iter().zip(&self.confusion) {
            let mut rec = vec![m.class.clone()];
            rec.extend(row.iter().map(u64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kappa {
    /// NaN when degenerate.
    pub value: f64,
    pub observed: f64,
    pub expected: f64,
    /// Chance agreement is 1, so kappa is undefined.
    pub degenerate: bool,
    pub n: usize,
}

pub fn cohens_kappa<T: Ord>(a: &[T], b: &[T]) -> Result<Kappa> {
    if a.len() != b.len() {
        return Err(ClassifierError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(ClassifierError::Empty);
    }
    let n = a.len() as u64;
    let mut margins: BTreeMap<&T, (u64, u64)> = BTreeMap::new();
    let mut agree = 0u64;
    for (x, y) in a.iter().zip(b) {
        margins.entry(x).or_default().0 += 1;
        margins.entry(y).or_default().1 += 1;
        if x == y {
            agree += 1;
        }
    }
    let chance: u128 = margins.values().map(|(ca, cb)| *ca as u128 * *cb as u128).sum();
    let n2 = n as u128 * n as u128;
    let observed = agree as f64 / n as f64;
    let expected = chance as f64 / n2 as f64;
    let degenerate = chance == n2;
    // (p_o - p_e) / (1 - p_e) with common denominator n²
    let value = if degenerate {
        f64::NAN
    } else {
        (agree as i128 * n as i128 - chance as i128) as f64 / (n2 - chance) as f64
    };
    Ok(Kappa {
        value,
        observed,
        expected,
        degenerate,
        n: a.len(),
    })
}

impl Kappa {
    /// Header: `n,observed,expected,kappa,degenerate`.
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["n", "observed", "expected", "kappa", "degenerate"])?;
        w.write_record([
            self.n.to_string(),
            self.observed.to_string(),
            self.expected.to_string(),
            self.value.to_string(),
            self.degenerate.to_string(),
        ])?;
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn perfect() {
        let g = [0, 1, 2, 1];
        let r = evaluate(&g, &g, &names(3)).unwrap();
        assert!(r.per_class.iter().all(|m| m.f1 == 1.0));
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.macro_f1, 1.0);
    }

    #[test]
    fn hand_built_three_class() {
        // gold rows / predicted columns:
        //   [2 1 0]
        //   [0 3 1]
        //   [1 0 2]
        let gold = [0, 0, 0, 1, 1, 1, 1, 2, 2, 2];
        let pred = [0, 0, 1, 1, 1, 1, 2, 0, 2, 2];
        let r = evaluate(&pred, &gold, &names(3)).unwrap();
        assert_eq!(r.confusion, vec![vec![2, 1, 0], vec![0, 3, 1], vec![1, 0, 2]]);
        // class 0: p = 2/3, r = 2/3; class 1: p = 3/4, r = 3/4; class 2: p = 2/3, r = 2/3
        let f = [2.0 / 3.0, 0.75, 2.0 / 3.0];
        for (m, e) in r.per_class.iter().zip(f) {
            assert!((m.f1 - e).abs() < 1e-15);
        }
        assert_eq!(r.accuracy, 0.7);
        assert_eq!(r.micro_f1, r.accuracy);
        assert!((r.macro_f1 - (2.0 / 3.0 + 0.75 + 2.0 / 3.0) / 3.0).abs() < 1e-15);
        assert!((r.weighted_f1 - (3.0 * 2.0 / 3.0 + 4.0 * 0.75 + 3.0 * 2.0 / 3.0) / 10.0).abs() < 1e-15);
    }

    #[test]
    fn absent_class_is_degenerate() {
        let r = evaluate(&[0, 1, 1], &[0, 1, 0], &names(3)).unwrap();
        assert!(r.per_class[2].degenerate);
        assert_eq!(r.per_class[2].f1, 0.0);
        let live = (r.per_class[0].f1 + r.per_class[1].f1) / 2.0;
        assert_eq!(r.macro_f1, live);
        assert!(matches!(evaluate(&[0], &[0, 1], &names(2)), Err(ClassifierError::LengthMismatch { .. })));
    }

    #[test]
    fn kappa_examples() {
        let k = cohens_kappa(&["x", "x", "y", "y"], &["x", "y", "x", "y"]).unwrap();
        assert_eq!(k.observed, 0.5);
        assert_eq!(k.expected, 0.5);
        assert_eq!(k.value, 0.0);
        let same = ["a", "b", "c", "a"];
        assert_eq!(cohens_kappa(&same, &same).unwrap().value, 1.0);
        let one = cohens_kappa(&["a", "a"], &["a", "a"]).unwrap();
        assert!(one.degenerate && one.value.is_nan());
        assert!(cohens_kappa::<u8>(&[], &[]).is_err());
    }
}
