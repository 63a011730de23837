//! Corpus ingestion: heterogeneous claim datasets normalized into one
//! canonical record format with validated label spaces.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Source dataset family a record came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dataset {
    Pubhealth,
    Fever,
    Efever,
}

impl Dataset {
    pub fn as_str(self) -> &'static str {
        match self {
            Dataset::Pubhealth => "pubhealth",
            Dataset::Fever => "fever",
            Dataset::Efever => "efever",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Validation => "validation",
            SplitName::Test => "test",
        }
    }
}

/// Index of a label within a [`LabelSpace`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LabelId(pub usize);

/// An ordered, fixed set of class labels. Order defines class indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSpace {
    name: String,
    labels: Vec<String>,
    nei_label: Option<String>,
}

impl LabelSpace {
    /// `nei_label` marks the "insufficient evidence" class when the space
    /// has one; it must be a member of `labels`.
    pub fn new(
        name: impl Into<String>,
        labels: Vec<String>,
        nei_label: Option<String>,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::schema("label space needs at least one label"));
        }
        for (i, label) in labels.iter().enumerate() {
            if label.is_empty() {
                return Err(Error::schema("empty label string"));
            }
            if labels[..i].contains(label) {
                return Err(Error::schema(format!("duplicate label {label:?}")));
            }
        }
        if let Some(nei) = &nei_label {
            if !labels.contains(nei) {
                return Err(Error::schema(format!(
                    "nei label {nei:?} is not a member of the label set"
                )));
            }
        }
        Ok(Self {
            name: name.into(),
            labels,
            nei_label,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<LabelId> {
        self.labels.iter().position(|l| l == label).map(LabelId)
    }

    pub fn label(&self, id: LabelId) -> &str {
        &self.labels[id.0]
    }

    pub fn nei_label(&self) -> Option<&str> {
        self.nei_label.as_deref()
    }

    pub fn nei_id(&self) -> Option<LabelId> {
        self.nei_label.as_deref().and_then(|l| self.index_of(l))
    }
}

/// One claim with its evidence, optional gold explanation summary, and
/// veracity label.
#[derive(Debug, Clone, PartialEq)]
pub struct ClaimRecord {
    pub id: String,
    pub claim: String,
    /// Ordered evidence segments. FEVER-style data arrives pre-sentencized;
    /// document-level data arrives as a singleton.
    pub evidence: Vec<String>,
    pub gold_summary: Option<String>,
    pub label: LabelId,
    pub dataset: Dataset,
}

/// One split of one dataset under a shared label space.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub records: Vec<ClaimRecord>,
    pub label_space: LabelSpace,
    pub split_name: SplitName,
}

/// How raw source fields map onto canonical record fields.
///
/// `claim` and `label` have exactly one source each by construction. Label
/// strings are normalized through `label_aliases` (checked verbatim, then
/// lowercased) before falling back to direct membership in the label space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMapping {
    pub claim: String,
    pub label: String,
    #[serde(default)]
    pub id: Option<String>,
    #[serde(default)]
    pub evidence: Option<String>,
    #[serde(default)]
    pub gold_summary: Option<String>,
    #[serde(default)]
    pub label_aliases: BTreeMap<String, String>,
}

impl ColumnMapping {
    pub fn new(claim: impl Into<String>, label: impl Into<String>) -> Self {
        Self {
            claim: claim.into(),
            label: label.into(),
            id: None,
            evidence: None,
            gold_summary: None,
            label_aliases: BTreeMap::new(),
        }
    }

    pub fn with_id(mut self, column: impl Into<String>) -> Self {
        self.id = Some(column.into());
        self
    }

    pub fn with_evidence(mut self, column: impl Into<String>) -> Self {
        self.evidence = Some(column.into());
        self
    }

    pub fn with_gold_summary(mut self, column: impl Into<String>) -> Self {
        self.gold_summary = Some(column.into());
        self
    }

    pub fn with_alias(mut self, source: impl Into<String>, canonical: impl Into<String>) -> Self {
        self.label_aliases.insert(source.into(), canonical.into());
        self
    }

    /// Resolve a raw label string to an id, applying aliases and case
    /// folding. None means the label cannot be mapped into the space.
    pub fn resolve_label(&self, raw: &str, space: &LabelSpace) -> Option<LabelId> {
        let trimmed = raw.trim();
        let candidates = [
            self.label_aliases.get(trimmed).map(String::as_str),
            self.label_aliases
                .get(&trimmed.to_lowercase())
                .map(String::as_str),
            Some(trimmed),
        ];
        for candidate in candidates.into_iter().flatten() {
            if let Some(id) = space.index_of(candidate) {
                return Some(id);
            }
            if let Some(id) = space.index_of(&candidate.to_lowercase()) {
                return Some(id);
            }
        }
        None
    }
}

/// Why a source row was not turned into a record.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", content = "detail")]
pub enum DropReason {
    EmptyClaim,
    UnmappableLabel(String),
    MalformedRow(String),
    /// Evidence is empty but the label is not the insufficient-evidence
    /// class, so the record cannot satisfy its invariants.
    EmptyEvidence,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DroppedRow {
    /// Zero-based data row (tabular) or line (JSON-lines) index.
    pub row: usize,
    pub id: Option<String>,
    pub reason: DropReason,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DropReport {
    pub dropped: Vec<DroppedRow>,
}

impl DropReport {
    pub fn count(&self) -> usize {
        self.dropped.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dropped.is_empty()
    }
}

/// A loaded split together with the rows that did not survive loading.
#[derive(Debug, Clone)]
pub struct LoadedSplit {
    pub split: DatasetSplit,
    pub drop_report: DropReport,
}

/// Collapse whitespace runs and trim. Claims are compared and validated in
/// this normalized form.
pub fn normalize_ws(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

struct RowOutcome {
    record: Option<ClaimRecord>,
    reason: Option<DropReason>,
}

/// Shared per-row assembly for both loaders.
#[allow(clippy::too_many_arguments)]
fn build_record(
    row: usize,
    raw_id: Option<String>,
    raw_claim: &str,
    raw_label: &str,
    evidence: Vec<String>,
    gold_summary: Option<String>,
    mapping: &ColumnMapping,
    label_space: &LabelSpace,
    dataset: Dataset,
    split_name: SplitName,
) -> RowOutcome {
    let claim = normalize_ws(raw_claim);
    if claim.is_empty() {
        return RowOutcome {
            record: None,
            reason: Some(DropReason::EmptyClaim),
        };
    }
    let Some(label) = mapping.resolve_label(raw_label, label_space) else {
        return RowOutcome {
            record: None,
            reason: Some(DropReason::UnmappableLabel(raw_label.trim().to_string())),
        };
    };
    let evidence: Vec<String> = evidence
        .into_iter()
        .map(|e| e.trim().to_string())
        .filter(|e| !e.is_empty())
        .collect();
    if evidence.is_empty() && label_space.nei_id() != Some(label) {
        return RowOutcome {
            record: None,
            reason: Some(DropReason::EmptyEvidence),
        };
    }
    let id = match raw_id {
        Some(id) if !id.trim().is_empty() => id.trim().to_string(),
        _ => format!("{}-{row:06}", split_name.as_str()),
    };
    RowOutcome {
        record: Some(ClaimRecord {
            id,
            claim,
            evidence,
            gold_summary,
            label,
            dataset,
        }),
        reason: None,
    }
}

/// Load a delimited text file with a header row.
///
/// Rows that cannot become valid records are dropped and reported, not
/// fatal. Zero surviving records is an error: the caller asked for a split
/// and got nothing to train or evaluate on.
pub fn load_tabular(
    path: &Path,
    mapping: &ColumnMapping,
    label_space: &LabelSpace,
    dataset: Dataset,
    split_name: SplitName,
    delimiter: u8,
) -> Result<LoadedSplit> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::schema(format!("cannot open {}: {other:?}", path.display())),
        })?;

    let headers = reader
        .headers()
        .map_err(|e| Error::schema(format!("cannot read header of {}: {e}", path.display())))?
        .clone();
    let column = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::schema(format!("column {name:?} not found in {}", path.display()))
        })
    };
    let claim_col = column(&mapping.claim)?;
    let label_col = column(&mapping.label)?;
    let id_col = mapping.id.as_deref().map(column).transpose()?;
    let evidence_col = mapping.evidence.as_deref().map(column).transpose()?;
    let summary_col = mapping.gold_summary.as_deref().map(column).transpose()?;

    let mut records = Vec::new();
    let mut drop_report = DropReport::default();
    for (row, result) in reader.records().enumerate() {
        let parsed = match result {
            Ok(r) => r,
            Err(e) => {
                drop_report.dropped.push(DroppedRow {
                    row,
                    id: None,
                    reason: DropReason::MalformedRow(e.to_string()),
                });
                continue;
            }
        };
        let field = |col: usize| parsed.get(col).map(str::to_string);
        let Some(raw_claim) = field(claim_col) else {
            drop_report.dropped.push(DroppedRow {
                row,
                id: None,
                reason: DropReason::MalformedRow("row shorter than claim column".into()),
            });
            continue;
        };
        let Some(raw_label) = field(label_col) else {
            drop_report.dropped.push(DroppedRow {
                row,
                id: None,
                reason: DropReason::MalformedRow("row shorter than label column".into()),
            });
            continue;
        };
        let raw_id = id_col.and_then(&field);
        let evidence = evidence_col
            .and_then(&field)
            .map(|doc| vec![doc])
            .unwrap_or_default();
        let gold_summary = summary_col.and_then(&field);

        let outcome = build_record(
            row,
            raw_id.clone(),
            &raw_claim,
            &raw_label,
            evidence,
            gold_summary,
            mapping,
            label_space,
            dataset,
            split_name,
        );
        match outcome.record {
            Some(record) => records.push(record),
            None => drop_report.dropped.push(DroppedRow {
                row,
                id: raw_id,
                reason: outcome.reason.unwrap(),
            }),
        }
    }

    if records.is_empty() {
        return Err(Error::degenerate(format!(
            "no usable records in {} ({} rows dropped)",
            path.display(),
            drop_report.count()
        )));
    }
    Ok(LoadedSplit {
        split: DatasetSplit {
            records,
            label_space: label_space.clone(),
            split_name,
        },
        drop_report,
    })
}

fn json_string(value: &serde_json::Value) -> Option<String> {
    match value {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Load a JSON-lines file, one object per line.
pub fn load_jsonl(
    path: &Path,
    mapping: &ColumnMapping,
    label_space: &LabelSpace,
    dataset: Dataset,
    split_name: SplitName,
) -> Result<LoadedSplit> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);

    let mut records = Vec::new();
    let mut drop_report = DropReport::default();
    for (row, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: serde_json::Map<String, serde_json::Value> = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                drop_report.dropped.push(DroppedRow {
                    row,
                    id: None,
                    reason: DropReason::MalformedRow(e.to_string()),
                });
                continue;
            }
        };
        let get = |key: &str| raw.get(key);
        let raw_id = mapping.id.as_deref().and_then(get).and_then(json_string);
        let Some(raw_claim) = get(&mapping.claim).and_then(json_string) else {
            drop_report.dropped.push(DroppedRow {
                row,
                id: raw_id,
                reason: DropReason::MalformedRow(format!(
                    "missing or non-string field {:?}",
                    mapping.claim
                )),
            });
            continue;
        };
        let Some(raw_label) = get(&mapping.label).and_then(json_string) else {
            drop_report.dropped.push(DroppedRow {
                row,
                id: raw_id,
                reason: DropReason::MalformedRow(format!(
                    "missing or non-string field {:?}",
                    mapping.label
                )),
            });
            continue;
        };
        let evidence = match mapping.evidence.as_deref().and_then(get) {
            None | Some(serde_json::Value::Null) => Vec::new(),
            Some(serde_json::Value::String(doc)) => vec![doc.clone()],
            Some(serde_json::Value::Array(items)) => {
                let mut segments = Vec::with_capacity(items.len());
                let mut ok = true;
                for item in items {
                    match item {
                        serde_json::Value::String(s) => segments.push(s.clone()),
                        _ => {
                            ok = false;
                            break;
                        }
                    }
                }
                if !ok {
                    drop_report.dropped.push(DroppedRow {
                        row,
                        id: raw_id,
                        reason: DropReason::MalformedRow(
                            "evidence list contains a non-string element".into(),
                        ),
                    });
                    continue;
                }
                segments
            }
            Some(other) => {
                drop_report.dropped.push(DroppedRow {
                    row,
                    id: raw_id,
                    reason: DropReason::MalformedRow(format!(
                        "evidence field has unsupported type {other:?}"
                    )),
                });
                continue;
            }
        };
        let gold_summary = match mapping.gold_summary.as_deref().and_then(get) {
            None | Some(serde_json::Value::Null) => None,
            Some(serde_json::Value::String(s)) => Some(s.clone()),
            Some(_) => {
                drop_report.dropped.push(DroppedRow {
                    row,
                    id: raw_id,
                    reason: DropReason::MalformedRow("summary field is not a string".into()),
                });
                continue;
            }
        };

        let outcome = build_record(
            row,
            raw_id.clone(),
            &raw_claim,
            &raw_label,
            evidence,
            gold_summary,
            mapping,
            label_space,
            dataset,
            split_name,
        );
        match outcome.record {
            Some(record) => records.push(record),
            None => drop_report.dropped.push(DroppedRow {
                row,
                id: raw_id,
                reason: outcome.reason.unwrap(),
            }),
        }
    }

    if records.is_empty() {
        return Err(Error::degenerate(format!(
            "no usable records in {} ({} rows dropped)",
            path.display(),
            drop_report.count()
        )));
    }
    Ok(LoadedSplit {
        split: DatasetSplit {
            records,
            label_space: label_space.clone(),
            split_name,
        },
        drop_report,
    })
}

/// Keep only records carrying a non-empty gold summary. Order preserved;
/// idempotent.
pub fn filter_nonnull_summaries(split: &DatasetSplit) -> DatasetSplit {
    DatasetSplit {
        records: split
            .records
            .iter()
            .filter(|r| {
                r.gold_summary
                    .as_deref()
                    .is_some_and(|s| !s.trim().is_empty())
            })
            .cloned()
            .collect(),
        label_space: split.label_space.clone(),
        split_name: split.split_name,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub record_id: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check every record invariant; an empty report means the split is sound.
pub fn validate_split(split: &DatasetSplit) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut violate = |id: &str, message: String| {
        report.violations.push(Violation {
            record_id: id.to_string(),
            message,
        });
    };
    for record in &split.records {
        if normalize_ws(&record.claim).is_empty() {
            violate(
                &record.id,
                "claim is empty after whitespace normalization".into(),
            );
        }
        if record.label.0 >= split.label_space.len() {
            violate(
                &record.id,
                format!(
                    "label index {} outside label space of size {}",
                    record.label.0,
                    split.label_space.len()
                ),
            );
        }
        let is_nei = split.label_space.nei_id() == Some(record.label);
        if record.evidence.is_empty() && !is_nei {
            violate(
                &record.id,
                "evidence empty for a non insufficient-evidence label".into(),
            );
        }
        if record.evidence.iter().any(|e| e.trim().is_empty()) {
            violate(&record.id, "evidence contains an empty segment".into());
        }
    }
    report
}

/// Serialized form of a record in the canonical JSON-lines file. The label
/// travels as its string so files are readable without the config.
#[derive(Serialize, Deserialize)]
struct CanonicalRecord {
    id: String,
    claim: String,
    evidence: Vec<String>,
    gold_summary: Option<String>,
    label: String,
    dataset: Dataset,
    /// Evidence selection sidecar: (sentence index, similarity score) pairs.
    /// Absent until the selection stage writes it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    evidence_selection: Option<SelectionScores>,
}

/// (sentence index, similarity score) pairs attached by evidence selection.
pub type SelectionScores = Vec<(usize, f64)>;

/// Write a split in canonical JSON-lines form. Field order is fixed, so
/// identical splits produce byte-identical files.
pub fn write_canonical(split: &DatasetSplit, path: &Path) -> Result<()> {
    write_canonical_with_scores(split, None, path)
}

/// As [`write_canonical`], attaching per-record selection scores when given.
/// `scores[i]` belongs to `split.records[i]`.
pub fn write_canonical_with_scores(
    split: &DatasetSplit,
    scores: Option<&[SelectionScores]>,
    path: &Path,
) -> Result<()> {
    if let Some(scores) = scores {
        assert_eq!(
            scores.len(),
            split.records.len(),
            "score list length mismatch"
        );
    }
    let mut out = Vec::new();
    for (i, record) in split.records.iter().enumerate() {
        let canonical = CanonicalRecord {
            id: record.id.clone(),
            claim: record.claim.clone(),
            evidence: record.evidence.clone(),
            gold_summary: record.gold_summary.clone(),
            label: split.label_space.label(record.label).to_string(),
            dataset: record.dataset,
            evidence_selection: scores.map(|s| s[i].clone()),
        };
        serde_json::to_writer(&mut out, &canonical)
            .map_err(|e| Error::runtime(format!("serialize record {}: {e}", record.id)))?;
        out.push(b'\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Read a canonical JSON-lines file back into a split. Unknown fields are
/// ignored so sidecar-bearing files load the same as plain ones.
pub fn read_canonical(
    path: &Path,
    label_space: &LabelSpace,
    split_name: SplitName,
) -> Result<DatasetSplit> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (row, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let canonical: CanonicalRecord = serde_json::from_str(&line)
            .map_err(|e| Error::schema(format!("{} line {}: {e}", path.display(), row + 1)))?;
        let label = label_space.index_of(&canonical.label).ok_or_else(|| {
            Error::schema(format!(
                "{} line {}: label {:?} not in label space {:?}",
                path.display(),
                row + 1,
                canonical.label,
                label_space.name()
            ))
        })?;
        records.push(ClaimRecord {
            id: canonical.id,
            claim: canonical.claim,
            evidence: canonical.evidence,
            gold_summary: canonical.gold_summary,
            label,
            dataset: canonical.dataset,
        });
    }
    Ok(DatasetSplit {
        records,
        label_space: label_space.clone(),
        split_name,
    })
}

/// Read back the selection sidecar written by
/// [`write_canonical_with_scores`]; None entries mean the record carries no
/// sidecar.
pub fn read_selection_sidecar(path: &Path) -> Result<Vec<Option<SelectionScores>>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut sidecars = Vec::new();
    for (row, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let canonical: CanonicalRecord = serde_json::from_str(&line)
            .map_err(|e| Error::schema(format!("{} line {}: {e}", path.display(), row + 1)))?;
        sidecars.push(canonical.evidence_selection);
    }
    Ok(sidecars)
}

/// Write a serializable report as pretty JSON.
pub fn write_json_report<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut body = serde_json::to_vec_pretty(value)
        .map_err(|e| Error::runtime(format!("serialize report: {e}")))?;
    body.push(b'\n');
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Convenience used by tests and the overfit fixtures: write records as
/// JSON-lines through a `std::io::Write`.
pub fn write_canonical_to<W: Write>(split: &DatasetSplit, mut w: W) -> Result<()> {
    for record in &split.records {
        let canonical = CanonicalRecord {
            id: record.id.clone(),
            claim: record.claim.clone(),
            evidence: record.evidence.clone(),
            gold_summary: record.gold_summary.clone(),
            label: split.label_space.label(record.label).to_string(),
            dataset: record.dataset,
            evidence_selection: None,
        };
        let line = serde_json::to_string(&canonical)
            .map_err(|e| Error::runtime(format!("serialize record {}: {e}", record.id)))?;
        writeln!(w, "{line}").map_err(|e| Error::io("<writer>", e))?;
    }
    Ok(())
}
