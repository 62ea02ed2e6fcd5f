//! The per-step metrics file: one JSON object per line.
//!
//! Required keys, each present on every line (`null` where not measured):
//! `step`, `loss`, `mean_token_kl`, `rollout_len_mean`, `rollout_len_min`,
//! `rollout_len_max`, `eval_accuracy_in_distribution`, `eval_accuracy_ood`,
//! `wall_time`. Step 0 is the baseline evaluation before any update and
//! steps increase strictly. Other keys are allowed and kept.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::error::Result;

pub const REQUIRED_FIELDS: [&str; 9] = [
    "step",
    "loss",
    "mean_token_kl",
    "rollout_len_mean",
    "rollout_len_min",
    "rollout_len_max",
    "eval_accuracy_in_distribution",
    "eval_accuracy_ood",
    "wall_time",
];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: usize,
    pub loss: Option<f64>,
    pub mean_token_kl: Option<f64>,
    pub rollout_len_mean: Option<f64>,
    pub rollout_len_min: Option<usize>,
    pub rollout_len_max: Option<usize>,
    pub eval_accuracy_in_distribution: Option<f64>,
    pub eval_accuracy_ood: Option<f64>,
    pub wall_time: Option<f64>,
    /// Anything else on the line (`grad_norm`, `skipped`, ...).
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl MetricRecord {
    pub fn to_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("line {line}: {field}: {message}")]
pub struct SchemaError {
    pub line: usize,
    pub field: String,
    pub message: String,
}

fn check_number(v: &Value, integer: bool) -> bool {
    match v {
        Value::Null => true,
        Value::Number(n) if integer => n.is_u64(),
        Value::Number(_) => true,
        _ => false,
    }
}

/// Parses metrics text, rejecting the first line that breaks the schema.
/// Blank lines are ignored; an empty input is an empty run.
pub fn parse_metrics(text: &str) -> std::result::Result<Vec<MetricRecord>, SchemaError> {
    let mut out: Vec<MetricRecord> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let err = |field: &str, message: String| SchemaError { line, field: field.into(), message };
        let value: Value = serde_json::from_str(raw).map_err(|e| err("<line>", e.to_string()))?;
        let Value::Object(map) = &value else {
            return Err(err("<line>", "not a JSON object".into()));
        };
        for field in REQUIRED_FIELDS {
            let Some(v) = map.get(field) else {
                return Err(err(field, "missing".into()));
            };
            let integer = matches!(field, "step" | "rollout_len_min" | "rollout_len_max");
            if field == "step" && v.is_null() {
                return Err(err(field, "must not be null".into()));
            }
            if !check_number(v, integer) {
                return Err(err(field, format!("expected {}, got {v}", if integer { "integer" } else { "number" })));
            }
        }
        for field in ["eval_accuracy_in_distribution", "eval_accuracy_ood"] {
            if let Some(a) = map[field].as_f64() {
                if !(0.0..=1.0).contains(&a) {
                    return Err(err(field, format!("{a} outside [0, 1]")));
                }
            }
        }
        let record: MetricRecord = serde_json::from_value(value).map_err(|e| err("<line>", e.to_string()))?;
        if let Some(prev) = out.last() {
            if record.step <= prev.step {
                return Err(err("step", format!("{} does not follow {}", record.step, prev.step)));
            }
        }
        out.push(record);
    }
    Ok(out)
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>> {
    let text = fs::read_to_string(path)?;
    parse_metrics(&text).map_err(|e| crate::Error::InvalidArgument(format!("{}: {e}", path.display())))
}

/// Appends one record and flushes it, so the file is valid after a crash at
/// any step boundary.
pub fn append_record(path: &Path, record: &MetricRecord) -> Result<()> {
    let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{}", record.to_line()?)?;
    f.sync_data()?;
    Ok(())
}

/// Keeps only records up to and including `step`. Kept lines are copied
/// as written.
pub fn truncate_metrics(path: &Path, step: usize) -> Result<()> {
    let text = if path.exists() { fs::read_to_string(path)? } else { String::new() };
    let records = parse_metrics(&text).map_err(|e| crate::Error::InvalidArgument(format!("{}: {e}", path.display())))?;
    let mut kept = String::new();
    let lines = text.lines().filter(|l| !l.trim().is_empty());
    for (line, r) in lines.zip(&records) {
        if r.step <= step {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, kept)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Evaluation point chosen as best.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestPoint {
    pub step: usize,
    pub accuracy: f64,
}

/// Everything in a run summary that the metrics file alone determines.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub steps_recorded: usize,
    pub baseline_in_distribution: Option<f64>,
    pub baseline_ood: Option<f64>,
    pub final_step: Option<usize>,
    pub final_in_distribution: Option<f64>,
    pub final_ood: Option<f64>,
    /// Highest in-distribution accuracy at a training step (earliest on ties).
    pub best: Option<BestPoint>,
    /// Median and mean of the three best training evaluations.
    pub best3_median: Option<f64>,
    pub best3_mean: Option<f64>,
    pub skipped_steps: usize,
    pub final_loss: Option<f64>,
    pub max_loss: Option<f64>,
}

pub fn summarize(records: &[MetricRecord]) -> MetricsSummary {
    let base = records.iter().find(|r| r.step == 0);
    let evals: Vec<&MetricRecord> =
        records.iter().filter(|r| r.step > 0 && r.eval_accuracy_in_distribution.is_some()).collect();
    let last = evals.last();
    let mut best: Option<BestPoint> = None;
    for r in &evals {
        let a = r.eval_accuracy_in_distribution.unwrap_or(0.0);
        if best.is_none_or(|b| a > b.accuracy) {
            best = Some(BestPoint { step: r.step, accuracy: a });
        }
    }
    let mut accs: Vec<f64> = evals.iter().filter_map(|r| r.eval_accuracy_in_distribution).collect();
    accs.sort_by(|a, b| b.total_cmp(a));
    accs.truncate(3);
    let best3_median = match accs.len() {
        0 => None,
        n if n % 2 == 1 => Some(accs[n / 2]),
        n => Some(0.5 * (accs[n / 2 - 1] + accs[n / 2])),
    };
    let best3_mean = (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64);
    let losses: Vec<f64> = records.iter().filter_map(|r| r.loss).collect();
    MetricsSummary {
        steps_recorded: records.iter().filter(|r| r.step > 0).count(),
        baseline_in_distribution: base.and_then(|r| r.eval_accuracy_in_distribution),
        baseline_ood: base.and_then(|r| r.eval_accuracy_ood),
        final_step: last.map(|r| r.step),
        final_in_distribution: last.and_then(|r| r.eval_accuracy_in_distribution),
        final_ood: last.and_then(|r| r.eval_accuracy_ood),
        best,
        best3_median,
        best3_mean,
        skipped_steps: records.iter().filter(|r| r.extra.get("skipped").is_some_and(|v| !v.is_null())).count(),
        final_loss: losses.last().copied(),
        max_loss: losses.iter().copied().reduce(f64::max),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(step: usize, acc: Option<f64>) -> MetricRecord {
        MetricRecord { step, eval_accuracy_in_distribution: acc, loss: Some(1.0 / (step + 1) as f64), ..Default::default() }
    }

    #[test]
    fn roundtrip_and_extras() {
        let mut r = rec(3, Some(0.5));
        r.extra.insert("grad_norm".into(), Value::from(0.25));
        let line = r.to_line().unwrap();
        let back = parse_metrics(&line).unwrap();
        assert_eq!(back, vec![r]);
    }

    #[test]
    fn best_and_best3() {
        let rs = vec![rec(0, Some(0.9)), rec(1, Some(0.2)), rec(2, None), rec(3, Some(0.6)), rec(4, Some(0.6)), rec(5, Some(0.4))];
        let s = summarize(&rs);
        assert_eq!(s.best, Some(BestPoint { step: 3, accuracy: 0.6 }));
        assert_eq!(s.best3_median, Some(0.6));
        assert!((s.best3_mean.unwrap() - 1.6 / 3.0).abs() < 1e-15);
        assert_eq!(s.baseline_in_distribution, Some(0.9));
        assert_eq!(s.final_step, Some(5));
        assert_eq!(s.steps_recorded, 5);
    }
}
