//! Grid search over config overrides with a resumable on-disk ledger.
//!
//! Trials are pure functions of (overrides, seed); the ledger records one
//! JSON line per finished trial so an interrupted sweep picks up where it
//! stopped and a finished sweep reruns as a no-op.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::trainer::derive_seed;

/// Axes of the grid: config path (dot notation into the run config) to
/// the candidate values tried on that axis. BTreeMap fixes the expansion
/// order to lexicographic by path.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GridSpec {
    pub axes: BTreeMap<String, Vec<serde_json::Value>>,
}

/// One point of the grid. The id is a content hash of the overrides, so
/// it survives grid extension and reordering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub id: String,
    pub overrides: BTreeMap<String, serde_json::Value>,
}

fn trial_id(overrides: &BTreeMap<String, serde_json::Value>) -> String {
    let canonical = serde_json::to_vec(overrides).expect("JSON map serializes");
    let digest = Sha256::digest(&canonical);
    let mut id = String::with_capacity(13);
    id.push('t');
    for byte in &digest[..6] {
        id.push_str(&format!("{byte:02x}"));
    }
    id
}

/// Cartesian product of the axes, rightmost (lexicographically last) axis
/// fastest. Duplicate values within an axis are collapsed, so the result
/// is duplicate-free.
pub fn expand_grid(spec: &GridSpec) -> Result<Vec<TrialConfig>> {
    if spec.axes.is_empty() {
        return Err(Error::schema("grid has no axes"));
    }
    let mut axes: Vec<(&String, Vec<&serde_json::Value>)> = Vec::new();
    for (path, values) in &spec.axes {
        if values.is_empty() {
            return Err(Error::schema(format!("grid axis {path:?} has no values")));
        }
        let mut seen: Vec<&serde_json::Value> = Vec::new();
        for v in values {
            if !seen.contains(&v) {
                seen.push(v);
            }
        }
        axes.push((path, seen));
    }
    let mut trials = Vec::new();
    let mut indices = vec![0usize; axes.len()];
    loop {
        let overrides: BTreeMap<String, serde_json::Value> = axes
            .iter()
            .zip(&indices)
            .map(|((path, values), &i)| ((*path).clone(), values[i].clone()))
            .collect();
        trials.push(TrialConfig {
            id: trial_id(&overrides),
            overrides,
        });
        let mut axis = axes.len();
        loop {
            if axis == 0 {
                return Ok(trials);
            }
            axis -= 1;
            indices[axis] += 1;
            if indices[axis] < axes[axis].1.len() {
                break;
            }
            indices[axis] = 0;
        }
    }
}

/// What a completed trial reports, on the 0 to 100 percent scale used by
/// the rendered tables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
    pub f1_macro: f64,
    pub f1_weighted: f64,
}

/// One ledger row. `metrics` present exactly when the trial completed;
/// `error` carries the failure otherwise.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial_id: String,
    pub overrides: BTreeMap<String, serde_json::Value>,
    pub seed: u64,
    pub runtime_secs: f64,
    pub error: Option<String>,
    pub metrics: Option<TrialMetrics>,
}

impl TrialResult {
    pub fn completed(&self) -> bool {
        self.metrics.is_some() && self.error.is_none()
    }
}

/// Read every row of a ledger file. Missing file reads as empty.
pub fn read_ledger(path: &Path) -> Result<Vec<TrialResult>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: TrialResult = serde_json::from_str(&line)
            .map_err(|e| Error::schema(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        rows.push(row);
    }
    Ok(rows)
}

/// Executes one trial to its metrics; must be deterministic in
/// (config, seed).
pub type TrialRunner<'a> = &'a (dyn Fn(&TrialConfig, u64) -> Result<TrialMetrics> + Sync);

/// Run every trial not already completed in the ledger, with up to
/// `workers` threads, appending each finished trial to the ledger as one
/// JSON line. Failures are recorded and do not stop the sweep. Returns
/// all results (prior completions included) in trial order.
pub fn run_sweep(
    trials: &[TrialConfig],
    base_seed: u64,
    runner: TrialRunner,
    workers: usize,
    ledger_path: &Path,
) -> Result<Vec<TrialResult>> {
    for (i, t) in trials.iter().enumerate() {
        if trials[..i].iter().any(|u| u.id == t.id) {
            return Err(Error::schema(format!("duplicate trial id {:?}", t.id)));
        }
    }
    let prior = read_ledger(ledger_path)?;
    let mut done: BTreeMap<String, TrialResult> = BTreeMap::new();
    for row in prior {
        if row.completed() {
            done.insert(row.trial_id.clone(), row);
        }
    }
    let pending: Vec<&TrialConfig> = trials
        .iter()
        .filter(|t| !done.contains_key(&t.id))
        .collect();

    if let Some(parent) = ledger_path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(ledger_path)
        .map_err(|e| Error::io(ledger_path, e))?;
    let sink = Mutex::new(file);
    let cursor = Mutex::new(0usize);
    let fresh: Mutex<Vec<TrialResult>> = Mutex::new(Vec::new());
    let workers = workers.max(1).min(pending.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let next = {
                    let mut c = cursor.lock().expect("cursor lock");
                    let i = *c;
                    if i >= pending.len() {
                        return;
                    }
                    *c += 1;
                    i
                };
                let trial = pending[next];
                let seed = derive_seed(base_seed, &trial.id);
                let started = std::time::Instant::now();
                let outcome = runner(trial, seed);
                let runtime_secs = started.elapsed().as_secs_f64();
                let result = match outcome {
                    Ok(metrics) => TrialResult {
                        trial_id: trial.id.clone(),
                        overrides: trial.overrides.clone(),
                        seed,
                        runtime_secs,
                        error: None,
                        metrics: Some(metrics),
                    },
                    Err(e) => TrialResult {
                        trial_id: trial.id.clone(),
                        overrides: trial.overrides.clone(),
                        seed,
                        runtime_secs,
                        error: Some(e.to_string()),
                        metrics: None,
                    },
                };
                let line = serde_json::to_string(&result).expect("result serializes");
                {
                    let mut f = sink.lock().expect("ledger lock");
                    let _ = writeln!(f, "{line}");
                    let _ = f.flush();
                }
                fresh.lock().expect("results lock").push(result);
            });
        }
    });

    for row in fresh.into_inner().expect("results lock") {
        done.insert(row.trial_id.clone(), row);
    }
    Ok(trials
        .iter()
        .filter_map(|t| done.get(&t.id).cloned())
        .collect())
}

/// Which trial metric to optimize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKey {
    Rouge1,
    Rouge2,
    RougeL,
    F1Macro,
    F1Weighted,
}

impl MetricKey {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKey::Rouge1 => "rouge1",
            MetricKey::Rouge2 => "rouge2",
            MetricKey::RougeL => "rouge_l",
            MetricKey::F1Macro => "f1_macro",
            MetricKey::F1Weighted => "f1_weighted",
        }
    }

    pub fn extract(self, m: &TrialMetrics) -> f64 {
        match self {
            MetricKey::Rouge1 => m.rouge1,
            MetricKey::Rouge2 => m.rouge2,
            MetricKey::RougeL => m.rouge_l,
            MetricKey::F1Macro => m.f1_macro,
            MetricKey::F1Weighted => m.f1_weighted,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Max,
    Min,
}

/// Best completed trial under the metric; ties keep the earliest trial in
/// `results` order. Errors when nothing completed.
pub fn best_by(
    results: &[TrialResult],
    metric: MetricKey,
    direction: Direction,
) -> Result<&TrialResult> {
    let mut best: Option<(&TrialResult, f64)> = None;
    for row in results.iter().filter(|r| r.completed()) {
        let value = metric.extract(row.metrics.as_ref().expect("completed"));
        let better = match (&best, direction) {
            (None, _) => true,
            (Some((_, b)), Direction::Max) => value > *b,
            (Some((_, b)), Direction::Min) => value < *b,
        };
        if better {
            best = Some((row, value));
        }
    }
    best.map(|(r, _)| r)
        .ok_or_else(|| Error::degenerate("no completed trials to rank"))
}
