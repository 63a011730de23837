//! Confusion matrices and the derived classification report.
//!
//! Report values are on the 0 to 100 percent scale used by result tables.

use serde::{Deserialize, Serialize};

use crate::corpus::{LabelId, LabelSpace};
use crate::error::{Error, Result};

/// Counts indexed `[gold][predicted]` over one label space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    labels: Vec<String>,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    /// Tally prediction/gold pairs given as label indices.
    pub fn from_pairs(
        predictions: &[LabelId],
        golds: &[LabelId],
        space: &LabelSpace,
    ) -> Result<Self> {
        if predictions.len() != golds.len() {
            return Err(Error::schema(format!(
                "{} predictions vs {} golds",
                predictions.len(),
                golds.len()
            )));
        }
        let n = space.len();
        let mut counts = vec![vec![0u64; n]; n];
        for (pred, gold) in predictions.iter().zip(golds) {
            if pred.0 >= n || gold.0 >= n {
                return Err(Error::schema(format!(
                    "label index out of range for label space {:?}",
                    space.name()
                )));
            }
            counts[gold.0][pred.0] += 1;
        }
        Ok(Self {
            labels: space.labels().to_vec(),
            counts,
        })
    }

    /// Tally pairs given as label strings.
    pub fn from_label_strings<S: AsRef<str>>(
        predictions: &[S],
        golds: &[S],
        space: &LabelSpace,
    ) -> Result<Self> {
        let resolve = |items: &[S]| -> Result<Vec<LabelId>> {
            items
                .iter()
                .map(|s| {
                    space.index_of(s.as_ref()).ok_or_else(|| {
                        Error::schema(format!(
                            "label {:?} not in label space {:?}",
                            s.as_ref(),
                            space.name()
                        ))
                    })
                })
                .collect()
        };
        Self::from_pairs(&resolve(predictions)?, &resolve(golds)?, space)
    }

    /// Build directly from count rows (fixture matrices). Rows are gold
    /// classes in label-space order.
    pub fn from_rows(space: &LabelSpace, rows: Vec<Vec<u64>>) -> Result<Self> {
        let n = space.len();
        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
            return Err(Error::schema(format!(
                "matrix must be {n}x{n} for label space {:?}",
                space.name()
            )));
        }
        Ok(Self {
            labels: space.labels().to_vec(),
            counts: rows,
        })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn count(&self, gold: usize, pred: usize) -> u64 {
        self.counts[gold][pred]
    }

    pub fn rows(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    fn row_sum(&self, gold: usize) -> u64 {
        self.counts[gold].iter().sum()
    }

    fn col_sum(&self, pred: usize) -> u64 {
        self.counts.iter().map(|row| row[pred]).sum()
    }

    fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|i| self.counts[i][i]).sum()
    }
}

/// Per-class slice of a [`ClassificationReport`]. `accuracy` is the
/// diagonal count over the gold row total, the per-class accuracy column of
/// confusion-matrix tables; it coincides with recall by definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReportRow {
    pub label: String,
    pub support: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}

/// Aggregate classification metrics, percent scale.
///
/// `accuracy` is micro accuracy (trace over total); `recall_macro` is the
/// unweighted per-class mean. Both conventions are reported because result
/// tables do not always say which one a "Recall" column means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub per_class: Vec<ClassReportRow>,
    pub precision_macro: f64,
    pub recall_macro: f64,
    pub f1_macro: f64,
    pub f1_weighted: f64,
    pub accuracy: f64,
    pub warnings: Vec<String>,
}

/// Derive the full report from a confusion matrix.
///
/// Zero-support classes contribute 0 to macro averages and are called out
/// in `warnings` rather than poisoning the aggregate with NaN.
pub fn classification_report(matrix: &ConfusionMatrix) -> Result<ClassificationReport> {
    let total = matrix.total();
    if total == 0 {
        return Err(Error::degenerate("confusion matrix has no observations"));
    }
    let n = matrix.num_classes();
    let mut per_class = Vec::with_capacity(n);
    let mut warnings = Vec::new();
    for c in 0..n {
        let support = matrix.row_sum(c);
        let predicted = matrix.col_sum(c);
        let hit = matrix.count(c, c) as f64;
        let precision = if predicted > 0 {
            hit / predicted as f64
        } else {
            0.0
        };
        let recall = if support > 0 {
            hit / support as f64
        } else {
            0.0
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        if support == 0 {
            warnings.push(format!(
                "class {:?} has zero support; it contributes 0 to macro averages",
                matrix.labels()[c]
            ));
        }
        per_class.push(ClassReportRow {
            label: matrix.labels()[c].clone(),
            support,
            precision: 100.0 * precision,
            recall: 100.0 * recall,
            f1: 100.0 * f1,
            accuracy: 100.0 * recall,
        });
    }

    let nf = n as f64;
    let precision_macro = per_class.iter().map(|r| r.precision).sum::<f64>() / nf;
    let recall_macro = per_class.iter().map(|r| r.recall).sum::<f64>() / nf;
    let f1_macro = per_class.iter().map(|r| r.f1).sum::<f64>() / nf;
    let f1_weighted = per_class
        .iter()
        .map(|r| r.f1 * r.support as f64)
        .sum::<f64>()
        / total as f64;
    let accuracy = 100.0 * matrix.trace() as f64 / total as f64;

    Ok(ClassificationReport {
        per_class,
        precision_macro,
        recall_macro,
        f1_macro,
        f1_weighted,
        accuracy,
        warnings,
    })
}

/// Accuracy in percent over pairs whose gold label differs from `excluded`,
/// the binary veracity view that ignores insufficient-evidence records.
pub fn binary_accuracy_excluding(
    predictions: &[LabelId],
    golds: &[LabelId],
    excluded: LabelId,
) -> Result<f64> {
    if predictions.len() != golds.len() {
        return Err(Error::schema(format!(
            "{} predictions vs {} golds",
            predictions.len(),
            golds.len()
        )));
    }
    let mut kept = 0u64;
    let mut correct = 0u64;
    for (pred, gold) in predictions.iter().zip(golds) {
        if *gold == excluded {
            continue;
        }
        kept += 1;
        if pred == gold {
            correct += 1;
        }
    }
    if kept == 0 {
        return Err(Error::degenerate(
            "no records remain after excluding the insufficient-evidence class",
        ));
    }
    Ok(100.0 * correct as f64 / kept as f64)
}
