//! Scoring: confusion matrices, one-vs-rest metrics, signed error
//! distributions, and multiclass to binary conversion.

mod binarize;

use serde::{Deserialize, Serialize};

use crate::error::{domain_err, Result};
use crate::scalar::MetricScalar;

pub use binarize::{
    binarize, binarize_all_levels, BinarizationLevel, BinaryMetrics, LevelReport,
    DESIGN_LOAD_LEVEL_TONS,
};

/// K×K counts; rows are actual classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    labels: Vec<String>,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(labels: Vec<String>) -> Self {
        let k = labels.len();
        ConfusionMatrix {
            labels,
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn from_counts(labels: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = labels.len();
        if k == 0 {
            return Err(domain_err("confusion matrix needs at least one class"));
        }
        if counts.len() != k || counts.iter().any(|r| r.len() != k) {
            return Err(domain_err(format!("confusion counts must be {k}x{k}")));
        }
        Ok(ConfusionMatrix { labels, counts })
    }

    /// Labels "0".."k-1" for matrices without named classes.
    pub fn numbered(counts: Vec<Vec<u64>>) -> Result<Self> {
        let labels = (0..counts.len()).map(|i| i.to_string()).collect();
        Self::from_counts(labels, counts)
    }

    pub fn k(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn rows(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn get(&self, actual: usize, predicted: usize) -> u64 {
        self.counts[actual][predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k()).map(|i| self.counts[i][i]).sum()
    }

    pub fn actual_count(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn predicted_count(&self, class: usize) -> u64 {
        self.counts.iter().map(|r| r[class]).sum()
    }

    fn require_nonempty(&self) -> Result<u64> {
        match self.total() {
            0 => Err(domain_err("confusion matrix is empty")),
            t => Ok(t),
        }
    }
}

pub fn confusion(
    predictions: &[usize],
    truths: &[usize],
    labels: Vec<String>,
) -> Result<ConfusionMatrix> {
    if predictions.len() != truths.len() {
        return Err(domain_err(format!(
            "{} predictions but {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    let mut cm = ConfusionMatrix::zeros(labels);
    let k = cm.k();
    for (i, (&p, &t)) in predictions.iter().zip(truths).enumerate() {
        if p >= k || t >= k {
            return Err(domain_err(format!(
                "sample {i}: label out of range (pred {p}, truth {t}, k {k})"
            )));
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics<S> {
    pub label: String,
    /// Actual samples of this class (TP + FN).
    pub support: u64,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub precision: S,
    /// Undefined when the class has no actual samples.
    pub recall: Option<S>,
    pub f1: Option<S>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport<S> {
    pub accuracy: S,
    pub per_class: Vec<ClassMetrics<S>>,
    /// Unweighted means over classes with at least one actual sample.
    pub macro_precision: S,
    pub macro_recall: S,
    pub macro_f1: S,
}

/// `2PR / (P + R)`, zero when both vanish.
pub(crate) fn f1_score<S: MetricScalar>(p: &S, r: &S) -> S {
    let denom = p.clone() + r.clone();
    if denom == S::zero() {
        S::zero()
    } else {
        (S::one() + S::one()) * p.clone() * r.clone() / denom
    }
}

/// Precision with the 0/0 → 0 convention; recall is `None` for 0/0.
pub(crate) fn precision_recall<S: MetricScalar>(tp: u64, fp: u64, fn_: u64) -> (S, Option<S>) {
    let precision = if tp + fp == 0 {
        S::zero()
    } else {
        S::ratio(tp, tp + fp)
    };
    let recall = (tp + fn_ > 0).then(|| S::ratio(tp, tp + fn_));
    (precision, recall)
}

pub fn metrics<S: MetricScalar>(cm: &ConfusionMatrix) -> Result<MetricsReport<S>> {
    let total = cm.require_nonempty()?;
    let accuracy = S::ratio(cm.trace(), total);
    let mut per_class = Vec::with_capacity(cm.k());
    for c in 0..cm.k() {
        let tp = cm.get(c, c);
        let fp = cm.predicted_count(c) - tp;
        let fn_ = cm.actual_count(c) - tp;
        let (precision, recall) = precision_recall::<S>(tp, fp, fn_);
        let f1 = recall.as_ref().map(|r| f1_score(&precision, r));
        per_class.push(ClassMetrics {
            label: cm.labels[c].clone(),
            support: tp + fn_,
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
        });
    }

    let supported: Vec<&ClassMetrics<S>> = per_class.iter().filter(|m| m.support > 0).collect();
    let n = S::ratio(supported.len() as u64, 1);
    let mean = |f: &dyn Fn(&ClassMetrics<S>) -> S| {
        supported.iter().fold(S::zero(), |acc, m| acc + f(m)) / n.clone()
    };
    let macro_precision = mean(&|m| m.precision.clone());
    let macro_recall = mean(&|m| m.recall.clone().expect("supported class"));
    let macro_f1 = mean(&|m| m.f1.clone().expect("supported class"));
    Ok(MetricsReport {
        accuracy,
        per_class,
        macro_precision,
        macro_recall,
        macro_f1,
    })
}

/// Probability mass over signed class distance `predicted - actual`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDistribution<S> {
    pub k: usize,
    /// Index `i` holds the mass at distance `i - (k - 1)`.
    pub masses: Vec<S>,
}

impl<S: MetricScalar> ErrorDistribution<S> {
    pub fn mass(&self, distance: i64) -> S {
        let idx = distance + self.k as i64 - 1;
        if idx < 0 || idx as usize >= self.masses.len() {
            S::zero()
        } else {
            self.masses[idx as usize].clone()
        }
    }

    pub fn distances(&self) -> impl Iterator<Item = (i64, &S)> {
        let offset = self.k as i64 - 1;
        self.masses
            .iter()
            .enumerate()
            .map(move |(i, m)| (i as i64 - offset, m))
    }
}

pub fn error_distribution<S: MetricScalar>(cm: &ConfusionMatrix) -> Result<ErrorDistribution<S>> {
    let total = cm.require_nonempty()?;
    let k = cm.k();
    let mut sums = vec![0u64; 2 * k - 1];
    for (a, row) in cm.counts.iter().enumerate() {
        for (p, &n) in row.iter().enumerate() {
            sums[p + k - 1 - a] += n;
        }
    }
    Ok(ErrorDistribution {
        k,
        masses: sums.into_iter().map(|s| S::ratio(s, total)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::BigRational;

    fn q(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    #[test]
    fn confusion_counts() {
        let cm = confusion(
            &[0, 1, 2],
            &[0, 1, 2],
            vec!["a".into(), "b".into(), "c".into()],
        )
        .unwrap();
        assert_eq!(cm.rows(), &[vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]]);
        let cm = ConfusionMatrix::numbered(vec![vec![0, 0], vec![0, 0]]).unwrap();
        let cm2 = confusion(&[1, 1], &[0, 1], cm.labels().to_vec()).unwrap();
        assert_eq!(cm2.get(0, 1), 1);
        assert_eq!(cm2.get(1, 1), 1);
        assert_eq!(cm2.get(0, 0) + cm2.get(1, 0), 0);
    }

    #[test]
    fn confusion_errors() {
        let labels = vec!["a".to_string(), "b".to_string()];
        assert!(confusion(&[0], &[0, 1], labels.clone()).is_err());
        assert!(confusion(&[2], &[0], labels).is_err());
    }

    #[test]
    fn perfect_predictions_score_one() {
        let cm = confusion(
            &[0, 1, 2, 2],
            &[0, 1, 2, 2],
            vec!["a".into(), "b".into(), "c".into()],
        )
        .unwrap();
        let m = metrics::<f64>(&cm).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(
            (m.macro_precision, m.macro_recall, m.macro_f1),
            (1.0, 1.0, 1.0)
        );
    }

    #[test]
    fn binary_hand_example_exact() {
        let cm = ConfusionMatrix::numbered(vec![vec![5, 1], vec![2, 4]]).unwrap();
        let m = metrics::<BigRational>(&cm).unwrap();
        let c0 = &m.per_class[0];
        assert_eq!(c0.precision, q(5, 7));
        assert_eq!(c0.recall, Some(q(5, 6)));
        assert_eq!(c0.f1, Some(q(10, 13)));
        assert_eq!(m.accuracy, q(9, 12));
    }

    #[test]
    fn zero_division_conventions() {
        // class 1 never predicted, class 2 never occurs
        let cm =
            ConfusionMatrix::numbered(vec![vec![3, 0, 1], vec![2, 0, 0], vec![0, 0, 0]]).unwrap();
        let m = metrics::<BigRational>(&cm).unwrap();
        assert_eq!(m.per_class[1].precision, q(0, 1));
        assert_eq!(m.per_class[1].recall, Some(q(0, 1)));
        assert_eq!(m.per_class[1].f1, Some(q(0, 1)));
        assert_eq!(m.per_class[2].recall, None);
        assert_eq!(m.per_class[2].f1, None);
        // macro over classes 0 and 1 only
        assert_eq!(m.macro_recall, (q(3, 4) + q(0, 1)) / q(2, 1));
        assert_eq!(m.macro_precision, (q(3, 5) + q(0, 1)) / q(2, 1));
    }

    #[test]
    fn empty_matrix_rejected() {
        let cm = ConfusionMatrix::numbered(vec![vec![0, 0], vec![0, 0]]).unwrap();
        assert!(metrics::<f64>(&cm).is_err());
        assert!(error_distribution::<f64>(&cm).is_err());
    }

    #[test]
    fn error_distribution_hand_example() {
        let cm = ConfusionMatrix::numbered(vec![vec![2, 1], vec![0, 3]]).unwrap();
        let d = error_distribution::<BigRational>(&cm).unwrap();
        assert_eq!(d.mass(0), q(5, 6));
        assert_eq!(d.mass(1), q(1, 6));
        assert_eq!(d.mass(-1), q(0, 1));
        assert_eq!(d.mass(7), q(0, 1));
        let ds: Vec<i64> = d.distances().map(|(d, _)| d).collect();
        assert_eq!(ds, vec![-1, 0, 1]);
    }

    #[test]
    fn mass_at_zero_is_accuracy() {
        let cm =
            ConfusionMatrix::numbered(vec![vec![4, 2, 1], vec![1, 6, 2], vec![3, 0, 5]]).unwrap();
        let d = error_distribution::<BigRational>(&cm).unwrap();
        let m = metrics::<BigRational>(&cm).unwrap();
        assert_eq!(d.mass(0), m.accuracy);
        assert_eq!(d.mass(-2), q(3, 24));
        let sum = d.masses.iter().fold(q(0, 1), |a, b| a + b);
        assert_eq!(sum, q(1, 1));
    }
}
