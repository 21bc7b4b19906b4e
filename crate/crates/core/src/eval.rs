//! Metrics: clean test accuracy, backdoor attack success rate, the
//! post-removal loss delta on the remaining clients, and report emission
//! (CSV + JSON-lines + Markdown summary).

use crate::data::{apply_trigger_all, Dataset, TriggerSpec};
use crate::error::{Error, Result};
use crate::nn::{cross_entropy, forward_logits, ModelParams};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;

/// Where in the pipeline a metrics row was taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    PreUnlearn,
    PostUnlearn,
    RecoveryRound(usize),
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::PreUnlearn => write!(f, "pre-unlearn"),
            Phase::PostUnlearn => write!(f, "post-unlearn"),
            Phase::RecoveryRound(r) => write!(f, "recovery round {r}"),
        }
    }
}

impl std::str::FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pre-unlearn" => Ok(Phase::PreUnlearn),
            "post-unlearn" => Ok(Phase::PostUnlearn),
            other => {
                if let Some(r) = other.strip_prefix("recovery round ") {
                    let round = r
                        .parse()
                        .map_err(|_| Error::format(format!("bad phase tag {other:?}")))?;
                    Ok(Phase::RecoveryRound(round))
                } else {
                    Err(Error::format(format!("bad phase tag {other:?}")))
                }
            }
        }
    }
}

impl Serialize for Phase {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Phase {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// One evaluation snapshot of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub phase: Phase,
    pub clean_acc: f64,
    pub atk_acc: f64,
    pub loss_delta: f64,
    pub wall_time: f64,
}

/// Evaluate logits over the dataset in bounded batches and fold the
/// argmax predictions through `visit(sample_index, predicted_class)`.
fn for_each_prediction(
    model: &ModelParams,
    data: &Dataset,
    mut visit: impl FnMut(usize, u8),
) -> Result<()> {
    const EVAL_BATCH: usize = 1024;
    let n = data.len();
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_BATCH).min(n);
        let indices: Vec<usize> = (start..end).collect();
        let chunk = data.subset(&indices)?;
        let logits = forward_logits(model, &chunk.images)?;
        for r in 0..logits.rows() {
            let row = logits.row(r);
            let mut best = 0usize;
            for (c, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = c;
                }
            }
            visit(start + r, best as u8);
        }
        start = end;
    }
    Ok(())
}

/// Fraction of argmax-correct predictions on the test set.
pub fn clean_accuracy(model: &ModelParams, test: &Dataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    let mut correct = 0usize;
    for_each_prediction(model, test, |i, pred| {
        if pred == test.labels[i] {
            correct += 1;
        }
    })?;
    Ok(correct as f64 / test.len() as f64)
}

/// Stamp the trigger onto every test image and measure how often images
/// whose true label differs from the trigger's target are predicted as the
/// target. True-target images are excluded from the denominator.
pub fn attack_success_rate(
    model: &ModelParams,
    test: &Dataset,
    trigger: &TriggerSpec,
) -> Result<f64> {
    let triggered = apply_trigger_all(test, trigger)?;
    attack_rate_on_triggered(model, &triggered, &test.labels, trigger.target_label)
}

/// Attack rate when the triggered images are already materialized;
/// `true_labels` are the labels before any poisoning.
pub fn attack_rate_on_triggered(
    model: &ModelParams,
    triggered: &Dataset,
    true_labels: &[u8],
    target_label: u8,
) -> Result<f64> {
    if triggered.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    if triggered.len() != true_labels.len() {
        return Err(Error::invalid("label count mismatch"));
    }
    let mut hits = 0usize;
    let mut denom = 0usize;
    for_each_prediction(model, triggered, |i, pred| {
        if true_labels[i] != target_label {
            denom += 1;
            if pred == target_label {
                hits += 1;
            }
        }
    })?;
    if denom == 0 {
        return Err(Error::degenerate(
            "every test label equals the trigger target",
        ));
    }
    Ok(hits as f64 / denom as f64)
}

/// Mean cross-entropy of the model on one dataset, in bounded batches.
pub fn dataset_loss(model: &ModelParams, data: &Dataset) -> Result<f64> {
    const EVAL_BATCH: usize = 1024;
    if data.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    let n = data.len();
    let mut total = 0.0;
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_BATCH).min(n);
        let indices: Vec<usize> = (start..end).collect();
        let chunk = data.subset(&indices)?;
        let logits = forward_logits(model, &chunk.images)?;
        total += cross_entropy(&logits, &chunk.labels)? * (end - start) as f64;
        start = end;
    }
    Ok(total / n as f64)
}

/// Sample-weighted mean loss over the remaining clients' datasets,
/// evaluated at `w`, minus the same quantity at `w_star`.
pub fn loss_delta(w: &ModelParams, w_star: &ModelParams, remaining: &[&Dataset]) -> Result<f64> {
    if remaining.is_empty() || remaining.iter().all(|d| d.is_empty()) {
        return Err(Error::invalid("no remaining data"));
    }
    let total: usize = remaining.iter().map(|d| d.len()).sum();
    let mut at_w = 0.0;
    let mut at_star = 0.0;
    for d in remaining {
        let weight = d.len() as f64 / total as f64;
        at_w += weight * dataset_loss(w, d)?;
        at_star += weight * dataset_loss(w_star, d)?;
    }
    Ok(at_w - at_star)
}

const CSV_HEADER: &str = "phase,clean_acc,atk_acc,loss_delta,wall_time";

/// Write `<base>.csv` and `<base>.jsonl` with a fixed column order.
/// Identical rows produce byte-identical files.
pub fn emit_report(rows: &[MetricsRow], base: &Path) -> Result<()> {
    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    for row in rows {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            row.phase, row.clean_acc, row.atk_acc, row.loss_delta, row.wall_time
        ));
    }
    std::fs::write(base.with_extension("csv"), csv)?;

    let mut jsonl = String::new();
    for row in rows {
        jsonl.push_str(
            &serde_json::to_string(row).map_err(|e| Error::format(format!("encode row: {e}")))?,
        );
        jsonl.push('\n');
    }
    std::fs::write(base.with_extension("jsonl"), jsonl)?;
    Ok(())
}

/// Read back a `.jsonl` metrics file.
pub fn read_report(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        rows.push(
            serde_json::from_str(line)
                .map_err(|e| Error::format(format!("{}: {e}", path.display())))?,
        );
    }
    Ok(rows)
}

/// One line of the Markdown summary table.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryEntry {
    pub dataset: String,
    pub method: String,
    pub test_acc: f64,
    pub atk_acc: f64,
}

/// Render summary rows as a Markdown table sorted by method name.
pub fn markdown_table(entries: &[SummaryEntry]) -> String {
    let mut sorted: Vec<&SummaryEntry> = entries.iter().collect();
    sorted.sort_by(|a, b| a.method.cmp(&b.method).then(a.dataset.cmp(&b.dataset)));
    let mut out = String::from("| dataset | method | test acc | atk acc |\n");
    out.push_str("|---|---|---|---|\n");
    for e in sorted {
        out.push_str(&format!(
            "| {} | {} | {:.2} | {:.2} |\n",
            e.dataset,
            e.method,
            e.test_acc * 100.0,
            e.atk_acc * 100.0
        ));
    }
    out
}
