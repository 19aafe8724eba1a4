use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, Strategy};
use crate::data::Dataset;
use crate::fl::ClientId;
use crate::nn::{checkpoint, predict, ModelParams};
use crate::{Error, Result};

/// One row of the per-round CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub run_id: String,
    pub seed: u64,
    pub strategy: Strategy,
    pub round: u64,
    pub test_acc: f64,
    /// Accuracy on the attacker's objective; empty when there is no attack.
    pub malicious_acc: Option<f64>,
    /// Names of the events logged in this round, `;`-separated.
    pub event: String,
    pub storage_bytes: u64,
}

/// Fraction of `set` predicted as its (malicious) label.
pub fn compute_attack_success(model: &ModelParams, set: &Dataset) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Usage("attack success needs a nonempty set".into()));
    }
    let preds = predict(model, set)?;
    let hits = preds
        .iter()
        .zip(&set.labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(hits as f64 / set.len() as f64)
}

/// Server-side model storage of the unlearning engine versus keeping every
/// client model of every round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StorageModel {
    pub client_count: u64,
    pub rounds: u64,
    pub model_bytes: u64,
    pub fedup_bytes: u64,
    pub historical_bytes: u64,
}

impl StorageModel {
    pub fn new(client_count: u64, rounds: u64, model_bytes: u64) -> Self {
        Self {
            client_count,
            rounds,
            model_bytes,
            fedup_bytes: (client_count + 1) * model_bytes,
            historical_bytes: rounds * client_count * model_bytes,
        }
    }

    pub fn ratio(&self) -> f64 {
        self.historical_bytes as f64 / self.fedup_bytes as f64
    }
}

pub fn storage_report(cfg: &ExperimentConfig) -> Result<StorageModel> {
    let model_bytes = checkpoint::encoded_len(&cfg.model.init(0)?) as u64;
    Ok(StorageModel::new(
        cfg.client_count as u64,
        cfg.rounds,
        model_bytes,
    ))
}

/// Before/after figures around one unlearning (or baseline) step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlearnSummary {
    pub round: u64,
    pub clients: Vec<ClientId>,
    pub similarity: Option<f64>,
    pub p: Option<f64>,
    pub layers: usize,
    pub pruned: usize,
    pub test_acc_before: f64,
    pub test_acc_after: f64,
    pub malicious_acc_before: Option<f64>,
    pub malicious_acc_after: Option<f64>,
    /// Accuracy on the removed clients' own training data.
    pub forgotten_acc_before: f64,
    pub forgotten_acc_after: f64,
    /// Retrained-without-the-removed-clients reference.
    pub baseline_test_acc: Option<f64>,
    pub baseline_malicious_acc: Option<f64>,
    pub r_star: Option<u64>,
    pub r_star_converged: Option<bool>,
    pub recovery_rounds: u64,
    pub bound: Option<u64>,
    pub reached_target: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub run_id: String,
    pub seed: u64,
    pub strategy: Strategy,
    pub rounds_run: u64,
    pub aborted_rounds: u64,
    pub final_test_acc: f64,
    pub final_malicious_acc: Option<f64>,
    pub unlearns: Vec<UnlearnSummary>,
    /// Detections still waiting on the rate limiter when the run ended.
    pub pending_at_end: Vec<ClientId>,
    pub peak_storage_bytes: u64,
    pub storage: StorageModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<RoundMetrics>,
    pub summary: Summary,
    /// Event log lines.
    pub events: Vec<String>,
}

/// Mean figures per strategy over a set of runs (typically a seed sweep).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyAggregate {
    pub strategy: Strategy,
    pub runs: usize,
    pub mean_final_test_acc: f64,
    pub mean_final_malicious_acc: Option<f64>,
    /// Over the first unlearning step of each run that had one.
    pub mean_test_acc_after: Option<f64>,
    pub mean_malicious_acc_after: Option<f64>,
    pub mean_recovery_rounds: Option<f64>,
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Groups summaries by strategy (in [`Strategy::ALL`] order). The result
/// does not depend on the order of `summaries`.
pub fn aggregate(summaries: &[Summary]) -> Vec<StrategyAggregate> {
    let mut sorted: Vec<&Summary> = summaries.iter().collect();
    sorted.sort_by(|a, b| a.run_id.cmp(&b.run_id).then(a.seed.cmp(&b.seed)));
    Strategy::ALL
        .iter()
        .filter_map(|&strategy| {
            let runs: Vec<&Summary> = sorted
                .iter()
                .copied()
                .filter(|s| s.strategy == strategy)
                .collect();
            if runs.is_empty() {
                return None;
            }
            let first = || runs.iter().filter_map(|s| s.unlearns.first());
            Some(StrategyAggregate {
                strategy,
                runs: runs.len(),
                mean_final_test_acc: mean(runs.iter().map(|s| s.final_test_acc)).unwrap_or(0.0),
                mean_final_malicious_acc: mean(runs.iter().filter_map(|s| s.final_malicious_acc)),
                mean_test_acc_after: mean(first().map(|u| u.test_acc_after)),
                mean_malicious_acc_after: mean(first().filter_map(|u| u.malicious_acc_after)),
                mean_recovery_rounds: mean(first().map(|u| u.recovery_rounds as f64)),
            })
        })
        .collect()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        kind => Error::format(path, format!("{kind:?}")),
    }
}

pub fn write_rows(rows: &[RoundMetrics], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn emit_csv(report: &MetricsReport, path: impl AsRef<Path>) -> Result<()> {
    write_rows(&report.rows, path)
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<RoundMetrics>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| csv_error(path, e)))
        .collect()
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::format(path, e.to_string()))?;
    writeln!(w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn emit_summary_json(report: &MetricsReport, path: impl AsRef<Path>) -> Result<()> {
    write_json(&report.summary, path)
}

pub fn read_summary_json(path: impl AsRef<Path>) -> Result<Summary> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

pub fn emit_events(report: &MetricsReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = report.events.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
