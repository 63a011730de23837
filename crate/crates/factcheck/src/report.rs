//! Deterministic text, CSV, and JSON renderers for evaluation and sweep
//! results. Byte-identical inputs render to byte-identical outputs; no
//! timestamps, no map iteration order leaks.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::metrics::classification::ConfusionMatrix;
use crate::metrics::rouge::RougeScore;
use crate::sweep::{best_by, Direction, MetricKey, TrialResult};
use crate::trainer::EvalReport;

#[derive(Debug, Clone, Copy, Default)]
pub struct ReportStyle {
    /// Comma as the decimal separator; CSV then switches to semicolon
    /// field separators to stay parseable.
    pub decimal_comma: bool,
}

impl ReportStyle {
    fn fmt(&self, value: f64) -> String {
        let s = format!("{value:.2}");
        if self.decimal_comma {
            s.replace('.', ",")
        } else {
            s
        }
    }

    fn sep(&self) -> char {
        if self.decimal_comma {
            ';'
        } else {
            ','
        }
    }
}

fn pct(score: f64) -> f64 {
    score * 100.0
}

/// Aligned plain-text evaluation report, seed in the header.
pub fn render_eval_text(report: &EvalReport, style: ReportStyle) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "evaluation  split={}  seed={}  records={}",
        report.split, report.seed, report.num_records
    );
    let _ = writeln!(out);

    let label_width = report
        .classification
        .per_class
        .iter()
        .map(|r| r.label.len())
        .chain(["weighted avg".len()])
        .max()
        .unwrap_or(8);
    let _ = writeln!(
        out,
        "{:<label_width$}  {:>9}  {:>9}  {:>9}  {:>9}  {:>8}",
        "class", "precision", "recall", "f1", "accuracy", "support"
    );
    for row in &report.classification.per_class {
        let _ = writeln!(
            out,
            "{:<label_width$}  {:>9}  {:>9}  {:>9}  {:>9}  {:>8}",
            row.label,
            style.fmt(row.precision),
            style.fmt(row.recall),
            style.fmt(row.f1),
            style.fmt(row.accuracy),
            row.support
        );
    }
    let _ = writeln!(
        out,
        "{:<label_width$}  {:>9}  {:>9}  {:>9}",
        "macro avg",
        style.fmt(report.classification.precision_macro),
        style.fmt(report.classification.recall_macro),
        style.fmt(report.classification.f1_macro),
    );
    let _ = writeln!(
        out,
        "{:<label_width$}  {:>9}  {:>9}  {:>9}",
        "weighted avg",
        "",
        "",
        style.fmt(report.classification.f1_weighted),
    );
    let _ = writeln!(
        out,
        "{:<label_width$}  {:>9}",
        "accuracy",
        style.fmt(report.classification.accuracy)
    );
    if let Some(acc) = report.binary_accuracy_excluding_nei {
        let _ = writeln!(
            out,
            "{:<label_width$}  {:>9}",
            "binary acc (no NEI)",
            style.fmt(acc)
        );
    }

    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "summaries scored: {} (skipped {} without gold)",
        report.rouge_records, report.rouge_skipped
    );
    let rouge_row = |out: &mut String, name: &str, s: &RougeScore| {
        let _ = writeln!(
            out,
            "{:<8}  {:>9}  {:>9}  {:>9}",
            name,
            style.fmt(pct(s.precision)),
            style.fmt(pct(s.recall)),
            style.fmt(pct(s.f_measure))
        );
    };
    let _ = writeln!(
        out,
        "{:<8}  {:>9}  {:>9}  {:>9}",
        "", "precision", "recall", "f"
    );
    rouge_row(&mut out, "rouge-1", &report.rouge1);
    rouge_row(&mut out, "rouge-2", &report.rouge2);
    rouge_row(&mut out, "rouge-l", &report.rouge_l);

    for warning in &report.classification.warnings {
        let _ = writeln!(out, "note: {warning}");
    }
    out
}

/// Flat metric,value CSV of the headline numbers.
pub fn render_eval_csv(report: &EvalReport, style: ReportStyle) -> String {
    let sep = style.sep();
    let mut out = String::new();
    let _ = writeln!(out, "metric{sep}value");
    let _ = writeln!(out, "seed{sep}{}", report.seed);
    let _ = writeln!(out, "records{sep}{}", report.num_records);
    let mut metric = |name: &str, value: f64| {
        let _ = writeln!(out, "{name}{sep}{}", style.fmt(value));
    };
    metric("accuracy", report.classification.accuracy);
    metric("precision_macro", report.classification.precision_macro);
    metric("recall_macro", report.classification.recall_macro);
    metric("f1_macro", report.classification.f1_macro);
    metric("f1_weighted", report.classification.f1_weighted);
    if let Some(acc) = report.binary_accuracy_excluding_nei {
        metric("binary_accuracy_excluding_nei", acc);
    }
    for row in &report.classification.per_class {
        metric(&format!("f1_{}", row.label), row.f1);
    }
    metric("rouge1_f", pct(report.rouge1.f_measure));
    metric("rouge2_f", pct(report.rouge2.f_measure));
    metric("rougel_f", pct(report.rouge_l.f_measure));
    out
}

/// Confusion counts, gold labels as rows and predictions as columns.
pub fn render_confusion_csv(matrix: &ConfusionMatrix, style: ReportStyle) -> String {
    let sep = style.sep();
    let mut out = String::new();
    let _ = write!(out, "gold\\pred");
    for label in matrix.labels() {
        let _ = write!(out, "{sep}{label}");
    }
    let _ = writeln!(out);
    for (i, label) in matrix.labels().iter().enumerate() {
        let _ = write!(out, "{label}");
        for j in 0..matrix.num_classes() {
            let _ = write!(out, "{sep}{}", matrix.count(i, j));
        }
        let _ = writeln!(out);
    }
    out
}

fn override_columns(results: &[TrialResult]) -> Vec<String> {
    let mut columns: Vec<String> = Vec::new();
    for row in results {
        for key in row.overrides.keys() {
            if !columns.contains(key) {
                columns.push(key.clone());
            }
        }
    }
    columns.sort();
    columns
}

fn override_cell(row: &TrialResult, key: &str) -> String {
    match row.overrides.get(key) {
        Some(serde_json::Value::String(s)) => s.clone(),
        Some(v) => v.to_string(),
        None => String::new(),
    }
}

/// Sweep results as CSV, one row per trial in the given order.
pub fn render_sweep_csv(results: &[TrialResult], style: ReportStyle) -> String {
    let sep = style.sep();
    let columns = override_columns(results);
    let mut out = String::new();
    let _ = write!(out, "trial{sep}status");
    for c in &columns {
        let _ = write!(out, "{sep}{c}");
    }
    let _ = writeln!(
        out,
        "{sep}rouge1{sep}rouge2{sep}rouge_l{sep}f1_macro{sep}f1_weighted"
    );
    for row in results {
        let status = if row.completed() { "ok" } else { "failed" };
        let _ = write!(out, "{}{sep}{status}", row.trial_id);
        for c in &columns {
            let _ = write!(out, "{sep}{}", override_cell(row, c));
        }
        match &row.metrics {
            Some(m) => {
                let _ = writeln!(
                    out,
                    "{sep}{}{sep}{}{sep}{}{sep}{}{sep}{}",
                    style.fmt(m.rouge1),
                    style.fmt(m.rouge2),
                    style.fmt(m.rouge_l),
                    style.fmt(m.f1_macro),
                    style.fmt(m.f1_weighted)
                );
            }
            None => {
                let _ = writeln!(out, "{sep}{sep}{sep}{sep}{sep}");
            }
        }
    }
    out
}

/// Sweep results as an aligned table with a best-trial footer per metric.
pub fn render_sweep_text(results: &[TrialResult], seed: u64, style: ReportStyle) -> String {
    let columns = override_columns(results);
    let mut header: Vec<String> = vec!["trial".into(), "status".into()];
    header.extend(columns.iter().cloned());
    header.extend(
        ["rouge1", "rouge2", "rouge_l", "f1_macro", "f1_weighted"]
            .iter()
            .map(|s| s.to_string()),
    );
    let mut rows: Vec<Vec<String>> = Vec::new();
    for row in results {
        let mut cells = vec![
            row.trial_id.clone(),
            if row.completed() { "ok" } else { "failed" }.to_string(),
        ];
        cells.extend(columns.iter().map(|c| override_cell(row, c)));
        match &row.metrics {
            Some(m) => {
                for v in [m.rouge1, m.rouge2, m.rouge_l, m.f1_macro, m.f1_weighted] {
                    cells.push(style.fmt(v));
                }
            }
            None => cells.extend(std::iter::repeat_n(String::new(), 5)),
        }
        rows.push(cells);
    }
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in &rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let mut out = String::new();
    let _ = writeln!(out, "sweep  seed={seed}  trials={}", results.len());
    let render_row = |out: &mut String, cells: &[String]| {
        let line = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ");
        let _ = writeln!(out, "{}", line.trim_end());
    };
    render_row(&mut out, &header);
    for row in &rows {
        render_row(&mut out, row);
    }
    for metric in [MetricKey::F1Macro, MetricKey::Rouge1] {
        if let Ok(best) = best_by(results, metric, Direction::Max) {
            let value = metric.extract(best.metrics.as_ref().expect("completed"));
            let _ = writeln!(
                out,
                "best {} = {} at trial {}",
                metric.as_str(),
                style.fmt(value),
                best.trial_id
            );
        }
    }
    out
}

/// Pretty JSON for any serializable report body.
pub fn render_json<T: serde::Serialize>(body: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(body)
        .map_err(|e| Error::runtime(format!("serialize report: {e}")))?;
    s.push('\n');
    Ok(s)
}
