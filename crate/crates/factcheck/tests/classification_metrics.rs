//! Classification report checked against a from-scratch scalar oracle and
//! against stored multi-class confusion cases with precomputed aggregates.

use factcheck::corpus::{LabelId, LabelSpace};
use factcheck::metrics::classification::{
    binary_accuracy_excluding, classification_report, ConfusionMatrix,
};
use proptest::prelude::*;
use serde::Deserialize;

fn space(labels: &[&str]) -> LabelSpace {
    LabelSpace::new("test", labels.iter().map(|s| s.to_string()).collect(), None).unwrap()
}

/// Straight-line recomputation of every aggregate from the raw counts.
struct Oracle {
    precision: Vec<f64>,
    recall: Vec<f64>,
    f1: Vec<f64>,
    support: Vec<u64>,
    accuracy: f64,
    f1_macro: f64,
    f1_weighted: f64,
}

fn oracle_report(rows: &[Vec<u64>]) -> Oracle {
    let n = rows.len();
    let total: u64 = rows.iter().flatten().sum();
    let mut precision = vec![0.0; n];
    let mut recall = vec![0.0; n];
    let mut f1 = vec![0.0; n];
    let mut support = vec![0u64; n];
    for i in 0..n {
        support[i] = rows[i].iter().sum();
        let col: u64 = (0..n).map(|g| rows[g][i]).sum();
        let tp = rows[i][i];
        precision[i] = if col > 0 { tp as f64 / col as f64 } else { 0.0 };
        recall[i] = if support[i] > 0 {
            tp as f64 / support[i] as f64
        } else {
            0.0
        };
        f1[i] = if precision[i] + recall[i] > 0.0 {
            2.0 * precision[i] * recall[i] / (precision[i] + recall[i])
        } else {
            0.0
        };
    }
    let diag: u64 = (0..n).map(|i| rows[i][i]).sum();
    Oracle {
        accuracy: 100.0 * diag as f64 / total as f64,
        f1_macro: 100.0 * f1.iter().sum::<f64>() / n as f64,
        f1_weighted: 100.0
            * f1.iter()
                .zip(&support)
                .map(|(f, s)| f * *s as f64)
                .sum::<f64>()
            / total as f64,
        precision,
        recall,
        f1,
        support,
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-9
}

#[derive(Deserialize)]
struct FixtureDoc {
    cases: Vec<FixtureCase>,
}

#[derive(Deserialize)]
struct FixtureCase {
    name: String,
    labels: Vec<String>,
    rows: Vec<Vec<u64>>,
    expected: FixtureExpected,
}

#[derive(Deserialize)]
struct FixtureExpected {
    accuracy: f64,
    precision_macro: f64,
    recall_macro: f64,
    f1_macro: f64,
    f1_weighted: f64,
    per_class_accuracy: Vec<f64>,
}

fn load_cases() -> Vec<FixtureCase> {
    let body = std::fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/tests/fixtures/confusion_cases.json"
    ))
    .unwrap();
    serde_json::from_str::<FixtureDoc>(&body).unwrap().cases
}

#[test]
fn fixture_cases_match_expected_aggregates() {
    for case in load_cases() {
        let labels: Vec<String> = case.labels.clone();
        let sp = LabelSpace::new("fixture", labels, None).unwrap();
        let matrix = ConfusionMatrix::from_rows(&sp, case.rows.clone()).unwrap();
        let report = classification_report(&matrix).unwrap();
        let tol = 5e-4;
        assert!(
            (report.accuracy - case.expected.accuracy).abs() < tol,
            "{}: accuracy {} vs {}",
            case.name,
            report.accuracy,
            case.expected.accuracy
        );
        assert!((report.precision_macro - case.expected.precision_macro).abs() < tol);
        assert!((report.recall_macro - case.expected.recall_macro).abs() < tol);
        assert!((report.f1_macro - case.expected.f1_macro).abs() < tol);
        assert!((report.f1_weighted - case.expected.f1_weighted).abs() < tol);
        for (row, want) in report
            .per_class
            .iter()
            .zip(&case.expected.per_class_accuracy)
        {
            assert!(
                (row.accuracy - want).abs() < tol,
                "{}: class {} accuracy {} vs {}",
                case.name,
                row.label,
                row.accuracy,
                want
            );
        }
    }
}

#[test]
fn fixture_cases_match_scalar_oracle() {
    for case in load_cases() {
        let sp = LabelSpace::new("fixture", case.labels.clone(), None).unwrap();
        let matrix = ConfusionMatrix::from_rows(&sp, case.rows.clone()).unwrap();
        let report = classification_report(&matrix).unwrap();
        let oracle = oracle_report(&case.rows);
        assert!(close(report.accuracy, oracle.accuracy));
        assert!(close(report.f1_macro, oracle.f1_macro));
        assert!(close(report.f1_weighted, oracle.f1_weighted));
        for (i, row) in report.per_class.iter().enumerate() {
            assert!(close(row.precision, 100.0 * oracle.precision[i]));
            assert!(close(row.recall, 100.0 * oracle.recall[i]));
            assert!(close(row.f1, 100.0 * oracle.f1[i]));
            assert_eq!(row.support, oracle.support[i]);
            // Per-class accuracy on a confusion matrix is the diagonal
            // over the gold row, which is exactly recall.
            assert!(close(row.accuracy, row.recall));
        }
    }
}

#[test]
fn from_pairs_counts_gold_rows_and_prediction_columns() {
    let sp = space(&["a", "b"]);
    let preds = [0, 1, 1, 1].map(LabelId);
    let golds = [0, 0, 1, 1].map(LabelId);
    let m = ConfusionMatrix::from_pairs(&preds, &golds, &sp).unwrap();
    assert_eq!(m.rows(), &[vec![1, 1], vec![0, 2]]);
    assert_eq!(m.count(0, 1), 1, "gold a predicted b");
    assert_eq!(m.total(), 4);
}

#[test]
fn from_pairs_rejects_length_mismatch_and_out_of_range() {
    let sp = space(&["a", "b"]);
    let err = ConfusionMatrix::from_pairs(&[LabelId(0)], &[], &sp).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    let err = ConfusionMatrix::from_pairs(&[LabelId(2)], &[LabelId(0)], &sp).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn empty_matrix_is_degenerate() {
    let sp = space(&["a", "b"]);
    let m = ConfusionMatrix::from_rows(&sp, vec![vec![0, 0], vec![0, 0]]).unwrap();
    let err = classification_report(&m).unwrap_err();
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn zero_support_class_scores_zero_with_warning() {
    let sp = space(&["a", "b", "c"]);
    // Nothing is ever gold-"c", so its recall/f1 are zero by convention.
    let m =
        ConfusionMatrix::from_rows(&sp, vec![vec![3, 1, 0], vec![0, 4, 0], vec![0, 0, 0]]).unwrap();
    let report = classification_report(&m).unwrap();
    let c = &report.per_class[2];
    assert_eq!(c.support, 0);
    assert_eq!(c.f1, 0.0);
    assert!(
        report.warnings.iter().any(|w| w.contains("c")),
        "expected a zero-support warning, got {:?}",
        report.warnings
    );
}

#[test]
fn perfect_predictions_score_hundred() {
    let sp = space(&["a", "b"]);
    let preds = [0, 0, 1].map(LabelId);
    let golds = [0, 0, 1].map(LabelId);
    let m = ConfusionMatrix::from_pairs(&preds, &golds, &sp).unwrap();
    let report = classification_report(&m).unwrap();
    assert_eq!(report.accuracy, 100.0);
    assert_eq!(report.f1_macro, 100.0);
    assert_eq!(report.f1_weighted, 100.0);
}

#[test]
fn binary_accuracy_excludes_the_given_class() {
    // Golds: a a n b; predictions: a b n n. Excluding n leaves three
    // records, one of which is right.
    let preds = [0, 1, 2, 2].map(LabelId);
    let golds = [0, 0, 2, 1].map(LabelId);
    let acc = binary_accuracy_excluding(&preds, &golds, LabelId(2)).unwrap();
    assert!(close(acc, 100.0 / 3.0));
}

#[test]
fn binary_accuracy_with_only_excluded_golds_is_degenerate() {
    let preds = [0, 1].map(LabelId);
    let golds = [2, 2].map(LabelId);
    let err = binary_accuracy_excluding(&preds, &golds, LabelId(2)).unwrap_err();
    assert_eq!(err.exit_code(), 4);
}

proptest! {
    #[test]
    fn report_matches_oracle_on_random_matrices(
        rows in proptest::collection::vec(
            proptest::collection::vec(0u64..40, 3),
            3,
        ),
    ) {
        let total: u64 = rows.iter().flatten().sum();
        prop_assume!(total > 0);
        let sp = space(&["x", "y", "z"]);
        let matrix = ConfusionMatrix::from_rows(&sp, rows.clone()).unwrap();
        let report = classification_report(&matrix).unwrap();
        let oracle = oracle_report(&rows);
        prop_assert!(close(report.accuracy, oracle.accuracy));
        prop_assert!(close(report.f1_macro, oracle.f1_macro));
        prop_assert!(close(report.f1_weighted, oracle.f1_weighted));
    }

    #[test]
    fn accuracy_equals_micro_recall_from_pairs(
        pairs in proptest::collection::vec((0usize..3, 0usize..3), 1..40),
    ) {
        let preds: Vec<LabelId> = pairs.iter().map(|(p, _)| LabelId(*p)).collect();
        let golds: Vec<LabelId> = pairs.iter().map(|(_, g)| LabelId(*g)).collect();
        let hits = pairs.iter().filter(|(p, g)| p == g).count();
        let sp = space(&["x", "y", "z"]);
        let matrix = ConfusionMatrix::from_pairs(&preds, &golds, &sp).unwrap();
        let report = classification_report(&matrix).unwrap();
        prop_assert!(close(
            report.accuracy,
            100.0 * hits as f64 / pairs.len() as f64
        ));
    }
}
