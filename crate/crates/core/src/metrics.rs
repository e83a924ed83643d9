//! Evaluation and result emission.
//!
//! Per-round CSV columns, in order:
//!
//! ```text
//! round, acc_domain_0 .. acc_domain_{M-1}, average_accuracy, train_loss,
//! test_loss, participants, uplink_floats, downlink_floats,
//! downlink_total_floats, trainable_params, bias_cosine, bias_frobenius,
//! server_solve_seconds, client_train_seconds, solver_steps,
//! solver_final_cosine, solver_regularizer_similarity, solver_delta_norm
//! ```
//!
//! Timing and solver columns are left empty when not recorded.

use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::FedConfig;
use crate::fedsim::ClientDataset;
use crate::matrix::MatrixError;
use crate::Mat;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, MetricsError>;

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub per_domain_accuracy: Vec<f64>,
    pub average_accuracy: f64,
    /// Mean cross-entropy, averaged over domains.
    pub loss: f64,
}

/// Argmax accuracy and cross-entropy of `x·Wᵀ` on each test set.
pub fn evaluate(weight: &Mat, test_sets: &[ClientDataset]) -> std::result::Result<Evaluation, MatrixError> {
    let d = weight.rows();
    let mut acc = Vec::with_capacity(test_sets.len());
    let mut loss = 0.0;
    for set in test_sets {
        let logits = set.inputs.matmul_t(weight)?;
        let mut correct = 0usize;
        let mut ce = 0.0;
        for (row, &y) in logits.as_slice().chunks(d).zip(&set.labels) {
            let mut arg = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[arg] {
                    arg = j;
                }
            }
            correct += usize::from(arg == y);
            let max = row[arg];
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            ce += lse - row[y];
        }
        acc.push(correct as f64 / set.len() as f64);
        loss += ce / set.len() as f64;
    }
    let m = test_sets.len().max(1) as f64;
    Ok(Evaluation {
        average_accuracy: acc.iter().sum::<f64>() / m,
        per_domain_accuracy: acc,
        loss: loss / m,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub per_domain_accuracy: Vec<f64>,
    pub average_accuracy: f64,
    pub train_loss: f64,
    pub test_loss: f64,
    pub participants: usize,
    pub uplink_floats: usize,
    /// Per client; the largest share under heterogeneous ranks.
    pub downlink_floats: usize,
    pub downlink_total_floats: usize,
    /// Trainable adapter parameters per client.
    pub trainable_params: usize,
    pub bias_cosine: f64,
    pub bias_frobenius: f64,
    pub server_solve_seconds: Option<f64>,
    /// Sum over the round's participants.
    pub client_train_seconds: Option<f64>,
    pub solver_steps: Option<usize>,
    pub solver_final_cosine: Option<f64>,
    pub solver_regularizer_similarity: Option<f64>,
    pub solver_delta_norm: Option<f64>,
}

impl RoundRecord {
    /// Copy with the wall-clock fields cleared.
    pub fn without_timing(&self) -> Self {
        Self {
            server_solve_seconds: None,
            client_train_seconds: None,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: FedConfig,
    pub initial_per_domain_accuracy: Vec<f64>,
    pub initial_average_accuracy: f64,
    pub final_per_domain_accuracy: Vec<f64>,
    pub final_average_accuracy: f64,
    pub final_test_loss: f64,
    /// Average accuracy after each round.
    pub accuracy_trajectory: Vec<f64>,
    pub total_uplink_floats: usize,
    pub total_downlink_floats: usize,
    pub total_server_seconds: Option<f64>,
    pub total_client_seconds: Option<f64>,
}

fn sum_opt(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    values.sum()
}

impl RunSummary {
    pub fn new(cfg: &FedConfig, initial: &Evaluation, records: &[RoundRecord]) -> Self {
        let (final_acc, final_avg, final_loss) = match records.last() {
            Some(r) => (r.per_domain_accuracy.clone(), r.average_accuracy, r.test_loss),
            None => (initial.per_domain_accuracy.clone(), initial.average_accuracy, initial.loss),
        };
        let timed = cfg.timing && !records.is_empty();
        Self {
            config: cfg.clone(),
            initial_per_domain_accuracy: initial.per_domain_accuracy.clone(),
            initial_average_accuracy: initial.average_accuracy,
            final_per_domain_accuracy: final_acc,
            final_average_accuracy: final_avg,
            final_test_loss: final_loss,
            accuracy_trajectory: records.iter().map(|r| r.average_accuracy).collect(),
            total_uplink_floats: records.iter().map(|r| r.uplink_floats).sum(),
            total_downlink_floats: records.iter().map(|r| r.downlink_total_floats).sum(),
            total_server_seconds: if timed { sum_opt(records.iter().map(|r| r.server_solve_seconds)) } else { None },
            total_client_seconds: if timed { sum_opt(records.iter().map(|r| r.client_train_seconds)) } else { None },
        }
    }
}

const TAIL_COLUMNS: [&str; 16] = [
    "average_accuracy",
    "train_loss",
    "test_loss",
    "participants",
    "uplink_floats",
    "downlink_floats",
    "downlink_total_floats",
    "trainable_params",
    "bias_cosine",
    "bias_frobenius",
    "server_solve_seconds",
    "client_train_seconds",
    "solver_steps",
    "solver_final_cosine",
    "solver_regularizer_similarity",
    "solver_delta_norm",
];

pub fn csv_header(num_domains: usize) -> Vec<String> {
    let mut h = vec!["round".to_string()];
    h.extend((0..num_domains).map(|m| format!("acc_domain_{m}")));
    h.extend(TAIL_COLUMNS.iter().map(|c| c.to_string()));
    h
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn record_fields(r: &RoundRecord) -> Vec<String> {
    let mut f = vec![r.round.to_string()];
    f.extend(r.per_domain_accuracy.iter().map(f64::to_string));
    f.extend([
        r.average_accuracy.to_string(),
        r.train_loss.to_string(),
        r.test_loss.to_string(),
        r.participants.to_string(),
        r.uplink_floats.to_string(),
        r.downlink_floats.to_string(),
        r.downlink_total_floats.to_string(),
        r.trainable_params.to_string(),
        r.bias_cosine.to_string(),
        r.bias_frobenius.to_string(),
        opt(r.server_solve_seconds),
        opt(r.client_train_seconds),
        opt(r.solver_steps),
        opt(r.solver_final_cosine),
        opt(r.solver_regularizer_similarity),
        opt(r.solver_delta_norm),
    ]);
    f
}

fn csv_error(path: &Path, e: csv::Error) -> MetricsError {
    MetricsError::Format {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// One row per record. Floats use the shortest representation that parses
/// back to the same value.
pub fn write_csv(records: &[RoundRecord], num_domains: usize, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|source| MetricsError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(csv_header(num_domains)).map_err(|e| csv_error(path, e))?;
    for r in records {
        if r.per_domain_accuracy.len() != num_domains {
            return Err(MetricsError::Format {
                path: path.display().to_string(),
                message: format!(
                    "round {} has {} domain accuracies, header has {num_domains}",
                    r.round,
                    r.per_domain_accuracy.len()
                ),
            });
        }
        w.write_record(record_fields(r)).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|source| MetricsError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_csv(path: &Path) -> Result<Vec<RoundRecord>> {
    let fmt_err = |message: String| MetricsError::Format {
        path: path.display().to_string(),
        message,
    };
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = r.headers().map_err(|e| csv_error(path, e))?.clone();
    let m = header.iter().filter(|h| h.starts_with("acc_domain_")).count();
    let expected = csv_header(m);
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(fmt_err("unexpected header".to_string()));
    }
    let mut out = Vec::new();
    for (line, row) in r.records().enumerate() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let field = |i: usize| row.get(i).unwrap_or("");
        let num = |i: usize| -> Result<f64> {
            field(i)
                .parse::<f64>()
                .map_err(|e| fmt_err(format!("row {}, column {}: {e}", line + 1, expected[i])))
        };
        let int = |i: usize| -> Result<usize> {
            field(i)
                .parse::<usize>()
                .map_err(|e| fmt_err(format!("row {}, column {}: {e}", line + 1, expected[i])))
        };
        let opt_num = |i: usize| -> Result<Option<f64>> { if field(i).is_empty() { Ok(None) } else { num(i).map(Some) } };
        let t = m + 1;
        out.push(RoundRecord {
            round: int(0)?,
            per_domain_accuracy: (1..=m).map(num).collect::<Result<_>>()?,
            average_accuracy: num(t)?,
            train_loss: num(t + 1)?,
            test_loss: num(t + 2)?,
            participants: int(t + 3)?,
            uplink_floats: int(t + 4)?,
            downlink_floats: int(t + 5)?,
            downlink_total_floats: int(t + 6)?,
            trainable_params: int(t + 7)?,
            bias_cosine: num(t + 8)?,
            bias_frobenius: num(t + 9)?,
            server_solve_seconds: opt_num(t + 10)?,
            client_train_seconds: opt_num(t + 11)?,
            solver_steps: if field(t + 12).is_empty() { None } else { Some(int(t + 12)?) },
            solver_final_cosine: opt_num(t + 13)?,
            solver_regularizer_similarity: opt_num(t + 14)?,
            solver_delta_norm: opt_num(t + 15)?,
        });
    }
    Ok(out)
}

#[derive(Serialize)]
struct RunDocument<'a> {
    summary: &'a RunSummary,
    records: &'a [RoundRecord],
}

/// `{"summary": ..., "records": [...]}`
pub fn write_json(summary: &RunSummary, records: &[RoundRecord], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|source| MetricsError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::to_writer_pretty(file, &RunDocument { summary, records }).map_err(|e| MetricsError::Format {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}
