use serde::{Deserialize, Serialize};

use super::{f1_score, precision_recall, ConfusionMatrix};
use crate::error::{domain_err, Result};
use crate::scalar::MetricScalar;

/// "Lower than T" thresholds for the 7-class merged design-load grouping
/// (H10, H15, H20, HS15, HS20 group, HS25 group, other).
pub const DESIGN_LOAD_LEVEL_TONS: [f64; 5] = [10.0, 15.0, 20.0, 27.0, 36.0];

/// Classes `0..boundary` (0-based) form the positive "lower than" side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinarizationLevel {
    pub level: u32,
    pub threshold_tons: Option<f64>,
    /// Number of leading classes on the positive side; valid range `1..=k-1`.
    pub boundary: usize,
}

impl BinarizationLevel {
    /// Levels 1..=5 over a class list whose first five classes carry the
    /// nominal tonnages in [`DESIGN_LOAD_LEVEL_TONS`].
    pub fn design_load_table() -> Vec<BinarizationLevel> {
        DESIGN_LOAD_LEVEL_TONS
            .iter()
            .enumerate()
            .map(|(i, &t)| BinarizationLevel {
                level: i as u32 + 1,
                threshold_tons: Some(t),
                boundary: i + 1,
            })
            .collect()
    }

    /// One level per valid boundary, without tonnages.
    pub fn every_boundary(k: usize) -> Vec<BinarizationLevel> {
        (1..k)
            .map(|b| BinarizationLevel {
                level: b as u32,
                threshold_tons: None,
                boundary: b,
            })
            .collect()
    }

    /// Levels from per-class upper tonnages: each threshold puts every class
    /// whose upper tonnage is at most the threshold on the positive side.
    pub fn from_thresholds(
        class_upper_tons: &[f64],
        thresholds: &[f64],
    ) -> Result<Vec<BinarizationLevel>> {
        thresholds
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let boundary = class_upper_tons.iter().take_while(|&&u| u <= t).count();
                if boundary == 0 || boundary >= class_upper_tons.len() {
                    return Err(domain_err(format!(
                        "threshold {t} t does not split the {} classes",
                        class_upper_tons.len()
                    )));
                }
                Ok(BinarizationLevel {
                    level: i as u32 + 1,
                    threshold_tons: Some(t),
                    boundary,
                })
            })
            .collect()
    }
}

/// Positive-class ("lower than") metrics of a 2×2 matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics<S> {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
    pub accuracy: S,
    pub precision: S,
    pub recall: Option<S>,
    pub f1: Option<S>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport<S> {
    pub level: BinarizationLevel,
    pub positive_label: String,
    pub matrix: ConfusionMatrix,
    pub metrics: BinaryMetrics<S>,
    pub multiclass_accuracy: S,
}

/// Collapses a K-class matrix at `boundary`. Row/column 0 of the result is
/// the positive "lower" side.
pub fn binarize<S: MetricScalar>(
    cm: &ConfusionMatrix,
    boundary: usize,
) -> Result<(ConfusionMatrix, BinaryMetrics<S>)> {
    let k = cm.k();
    if boundary < 1 || boundary >= k {
        return Err(domain_err(format!(
            "binarization boundary {boundary} outside 1..={}",
            k.saturating_sub(1)
        )));
    }
    let total = cm.total();
    if total == 0 {
        return Err(domain_err("confusion matrix is empty"));
    }
    let mut cells = [[0u64; 2]; 2];
    for (a, row) in cm.rows().iter().enumerate() {
        for (p, &n) in row.iter().enumerate() {
            cells[usize::from(a >= boundary)][usize::from(p >= boundary)] += n;
        }
    }
    let [[tp, fn_], [fp, tn]] = cells;
    let (precision, recall) = precision_recall::<S>(tp, fp, fn_);
    let f1 = recall.as_ref().map(|r| f1_score(&precision, r));
    let labels = vec![
        format!("lower than {}", cm.labels()[boundary]),
        format!("not lower than {}", cm.labels()[boundary]),
    ];
    let matrix = ConfusionMatrix::from_counts(labels, cells.iter().map(|r| r.to_vec()).collect())?;
    Ok((
        matrix,
        BinaryMetrics {
            tp,
            fp,
            fn_,
            tn,
            accuracy: S::ratio(tp + tn, total),
            precision,
            recall,
            f1,
        },
    ))
}

pub fn binarize_all_levels<S: MetricScalar>(
    cm: &ConfusionMatrix,
    levels: &[BinarizationLevel],
) -> Result<Vec<LevelReport<S>>> {
    let total = cm.total();
    if total == 0 {
        return Err(domain_err("confusion matrix is empty"));
    }
    let multiclass_accuracy = S::ratio(cm.trace(), total);
    levels
        .iter()
        .map(|level| {
            let (matrix, metrics) = binarize::<S>(cm, level.boundary)?;
            Ok(LevelReport {
                level: level.clone(),
                positive_label: matrix.labels()[0].clone(),
                matrix,
                metrics,
                multiclass_accuracy: multiclass_accuracy.clone(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::BigRational;

    fn q(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    #[test]
    fn three_class_hand_example() {
        let cm =
            ConfusionMatrix::numbered(vec![vec![5, 1, 0], vec![1, 5, 1], vec![0, 1, 5]]).unwrap();
        let (m2, b) = binarize::<BigRational>(&cm, 1).unwrap();
        assert_eq!((b.tp, b.fn_, b.fp, b.tn), (5, 1, 1, 12));
        assert_eq!(b.accuracy, q(17, 19));
        assert_eq!(m2.rows(), &[vec![5, 1], vec![1, 12]]);
        assert_eq!(b.precision, q(5, 6));
        assert_eq!(b.recall, Some(q(5, 6)));
    }

    #[test]
    fn top_boundary_on_identity_is_perfect() {
        let cm =
            ConfusionMatrix::numbered(vec![vec![2, 0, 0], vec![0, 3, 0], vec![0, 0, 4]]).unwrap();
        let (_, b) = binarize::<f64>(&cm, 2).unwrap();
        assert_eq!(b.accuracy, 1.0);
    }

    #[test]
    fn boundary_range_checked() {
        let cm = ConfusionMatrix::numbered(vec![vec![1, 0], vec![0, 1]]).unwrap();
        assert!(binarize::<f64>(&cm, 0).is_err());
        assert!(binarize::<f64>(&cm, 2).is_err());
        assert!(binarize::<f64>(&cm, 1).is_ok());
    }

    #[test]
    fn design_load_table_levels() {
        let t = BinarizationLevel::design_load_table();
        assert_eq!(t.len(), 5);
        assert_eq!(t[4].threshold_tons, Some(36.0));
        assert_eq!(t[4].boundary, 5);
        let derived = BinarizationLevel::from_thresholds(
            &[10.0, 15.0, 20.0, 27.0, 36.0, 45.0, f64::INFINITY],
            &DESIGN_LOAD_LEVEL_TONS,
        )
        .unwrap();
        assert_eq!(derived, t);
        assert!(BinarizationLevel::from_thresholds(&[10.0, 20.0], &[5.0]).is_err());
    }

    #[test]
    fn all_levels_report_multiclass_accuracy() {
        let cm =
            ConfusionMatrix::numbered(vec![vec![5, 1, 0], vec![1, 5, 1], vec![0, 1, 5]]).unwrap();
        let reports =
            binarize_all_levels::<BigRational>(&cm, &BinarizationLevel::every_boundary(3)).unwrap();
        assert_eq!(reports.len(), 2);
        for r in &reports {
            assert_eq!(r.multiclass_accuracy, q(15, 19));
            assert!(r.metrics.accuracy >= r.multiclass_accuracy);
        }
    }
}
