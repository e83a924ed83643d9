//! Named batch experiments. Each preset expands a base config into
//! variants, runs every (variant, seed) pair and writes
//!
//! ```text
//! <out>/<preset>/<variant>-seed<seed>.csv   per-round records
//! <out>/<preset>/summary.csv                one row per (variant, seed)
//! <out>/<preset>/medians.csv                one row per variant
//! ```

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::{self, Method};
use crate::config::{FedConfig, InitPolicy, Partition};
use crate::fedsim::{self, Experiment, FedError};
use crate::metrics::{self, evaluate, MetricsError, RoundRecord};
use crate::residual::ResidualPosition;

#[derive(Debug, Error)]
pub enum PresetError {
    #[error("{variant} (seed {seed}): {source}")]
    Run {
        variant: String,
        seed: u64,
        #[source]
        source: FedError,
    },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("no seeds given")]
    NoSeeds,
}

pub type Result<T> = std::result::Result<T, PresetError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// One round of long local training; product-of-averages vs average-of-products.
    Challenge1,
    /// The three client initialization policies on top of the exact update.
    Challenge2,
    /// All methods on feature and feature+label splits.
    Compare,
    /// LoRA-FAIR across regularization weights, plus the residual on `A`.
    LambdaSweep,
    /// FedIT and LoRA-FAIR across adapter ranks.
    RankSweep,
    /// Heterogeneous client ranks.
    Hetero,
    /// Per-round communication of every method.
    CommCost,
}

impl Preset {
    pub const ALL: [Preset; 7] = [
        Preset::Challenge1,
        Preset::Challenge2,
        Preset::Compare,
        Preset::LambdaSweep,
        Preset::RankSweep,
        Preset::Hetero,
        Preset::CommCost,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Challenge1 => "challenge1",
            Preset::Challenge2 => "challenge2",
            Preset::Compare => "compare",
            Preset::LambdaSweep => "lambda-sweep",
            Preset::RankSweep => "rank-sweep",
            Preset::Hetero => "hetero",
            Preset::CommCost => "comm-cost",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Preset::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| {
            let names: Vec<_> = Preset::ALL.iter().map(|p| p.name()).collect();
            format!("unknown preset '{s}' (expected one of {})", names.join(", "))
        })
    }
}

pub const DEFAULT_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
pub const LAMBDAS: [f64; 7] = [0.0, 0.001, 0.005, 0.01, 0.02, 0.05, 0.1];
/// Capped at min(d, l) = 10 for the default task.
pub const RANKS: [usize; 4] = [2, 4, 8, 10];
pub const HETERO_RANKS: [usize; 6] = [2, 4, 4, 6, 6, 8];
/// Local epochs for the single challenge-1 round.
pub const CHALLENGE1_EPOCHS: usize = 50;

#[derive(Debug, Clone)]
pub struct Variant {
    pub name: String,
    pub cfg: FedConfig,
}

fn with(base: &FedConfig, f: impl FnOnce(&mut FedConfig)) -> FedConfig {
    let mut c = base.clone();
    f(&mut c);
    c
}

fn method_variant(base: &FedConfig, name: String, method: Method) -> Variant {
    let policy = match method {
        Method::Flora => InitPolicy::ReInitial,
        _ => InitPolicy::AvgInitial,
    };
    Variant {
        name,
        cfg: with(base, |c| {
            c.method = method;
            c.init_policy = policy;
        }),
    }
}

const COMPARED: [Method; 5] = [Method::Fedit, Method::FfaLora, Method::Flora, Method::Flexlora, Method::LoraFair];

/// The configs a preset runs, before seeding.
pub fn variants(preset: Preset, base: &FedConfig) -> Vec<Variant> {
    match preset {
        Preset::Challenge1 => ["avg-to-mul", "mul-to-avg"]
            .into_iter()
            .map(|name| Variant {
                name: name.to_string(),
                cfg: with(base, |c| {
                    c.method = Method::Fedit;
                    c.init_policy = InitPolicy::AvgInitial;
                    c.rounds = 1;
                    c.local_epochs = CHALLENGE1_EPOCHS;
                }),
            })
            .collect(),
        Preset::Challenge2 => InitPolicy::ALL
            .into_iter()
            .map(|policy| Variant {
                name: policy.name().to_string(),
                cfg: with(base, |c| {
                    c.method = Method::Flora;
                    c.init_policy = policy;
                }),
            })
            .collect(),
        Preset::Compare => {
            let mut out = Vec::new();
            for (prefix, partition) in [("feature", Partition::Feature), ("both", Partition::FeatureLabel)] {
                let part = with(base, |c| c.partition = partition);
                for m in COMPARED {
                    out.push(method_variant(&part, format!("{prefix}-{m}"), m));
                }
            }
            out
        }
        Preset::LambdaSweep => {
            let mut out: Vec<Variant> = LAMBDAS
                .iter()
                .map(|&lambda| {
                    let mut v = method_variant(base, format!("lambda-{lambda}"), Method::LoraFair);
                    v.cfg.lambda = lambda;
                    v
                })
                .collect();
            let mut on_a = method_variant(base, "residual-on-a".to_string(), Method::LoraFair);
            on_a.cfg.residual_position = ResidualPosition::OnA;
            out.push(on_a);
            out
        }
        Preset::RankSweep => {
            let max = base.num_classes.min(base.input_dim);
            let mut out = Vec::new();
            for &r in RANKS.iter().filter(|&&r| r <= max) {
                for m in [Method::Fedit, Method::LoraFair] {
                    let mut v = method_variant(base, format!("{m}-r{r}"), m);
                    v.cfg.rank = r;
                    v.cfg.client_ranks.clear();
                    out.push(v);
                }
            }
            out
        }
        Preset::Hetero => [Method::Hetlora, Method::LoraFair, Method::Flexlora, Method::Flora]
            .into_iter()
            .map(|m| {
                let mut v = method_variant(base, m.to_string(), m);
                v.cfg.num_clients = HETERO_RANKS.len();
                v.cfg.client_ranks = HETERO_RANKS.to_vec();
                v
            })
            .collect(),
        Preset::CommCost => COMPARED.into_iter().map(|m| method_variant(base, m.to_string(), m)).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub variant: String,
    pub seed: u64,
    pub final_average_accuracy: f64,
    pub final_test_loss: f64,
    pub mean_bias_cosine: f64,
    /// Per-client downlink of the last round.
    pub downlink_floats: usize,
    pub total_uplink_floats: usize,
    pub total_downlink_floats: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedianRow {
    pub variant: String,
    pub median_final_average_accuracy: f64,
    pub median_final_test_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PresetReport {
    pub preset: Preset,
    pub dir: PathBuf,
    pub rows: Vec<SummaryRow>,
    pub medians: Vec<MedianRow>,
    /// Per-round records of every (variant, seed), in row order.
    pub records: Vec<Vec<RoundRecord>>,
}

impl PresetReport {
    pub fn median(&self, variant: &str) -> Option<&MedianRow> {
        self.medians.iter().find(|m| m.variant == variant)
    }
}

/// Middle value; the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Both challenge-1 variants of one seed: every client trains once from the
/// initial state, then the base absorbs either `B̄·Ā` or `Σ p_k B_k A_k`.
fn challenge1_records(cfg: &FedConfig) -> std::result::Result<[RoundRecord; 2], FedError> {
    let exp = Experiment::new(cfg)?;
    let ids: Vec<usize> = (0..cfg.num_clients).collect();
    let outcomes = fedsim::train_clients(&exp.state, &exp.clients, &ids, cfg, exp.seed)?;
    let contributions = exp.contributions(&ids, &outcomes);
    let fedit = aggregation::aggregate_fedit(&contributions)?;
    let comm = aggregation::comm_cost(Method::Fedit, cfg.num_classes, cfg.input_dim, &cfg.ranks());
    let train_loss = outcomes.iter().map(|o| o.mean_loss).sum::<f64>() / outcomes.len() as f64;
    let record = |update: &crate::Mat| -> std::result::Result<RoundRecord, FedError> {
        let w = exp.state.base.weight().add(update)?;
        let eval = evaluate(&w, &exp.test_sets)?;
        Ok(RoundRecord {
            round: 1,
            average_accuracy: eval.average_accuracy,
            per_domain_accuracy: eval.per_domain_accuracy,
            train_loss,
            test_loss: eval.loss,
            participants: ids.len(),
            uplink_floats: comm.uplink_floats,
            downlink_floats: comm.downlink_floats,
            downlink_total_floats: comm.downlink_total_floats,
            trainable_params: cfg.rank * (cfg.num_classes + cfg.input_dim),
            bias_cosine: fedit.bias_cosine,
            bias_frobenius: fedit.bias_frobenius,
            server_solve_seconds: None,
            client_train_seconds: None,
            solver_steps: None,
            solver_final_cosine: None,
            solver_regularizer_similarity: None,
            solver_delta_norm: None,
        })
    };
    Ok([record(&fedit.realized_update)?, record(&fedit.ideal_update)?])
}

fn io_err(path: &Path, source: std::io::Error) -> PresetError {
    PresetError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn summarize(variant: &str, seed: u64, records: &[RoundRecord], initial_acc: f64, initial_loss: f64) -> SummaryRow {
    let last = records.last();
    SummaryRow {
        variant: variant.to_string(),
        seed,
        final_average_accuracy: last.map_or(initial_acc, |r| r.average_accuracy),
        final_test_loss: last.map_or(initial_loss, |r| r.test_loss),
        mean_bias_cosine: if records.is_empty() {
            1.0
        } else {
            records.iter().map(|r| r.bias_cosine).sum::<f64>() / records.len() as f64
        },
        downlink_floats: last.map_or(0, |r| r.downlink_floats),
        total_uplink_floats: records.iter().map(|r| r.uplink_floats).sum(),
        total_downlink_floats: records.iter().map(|r| r.downlink_total_floats).sum(),
    }
}

fn write_rows<S: Serialize>(rows: &[S], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| {
        PresetError::Metrics(MetricsError::Format {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    })?;
    for r in rows {
        w.serialize(r).map_err(|e| {
            PresetError::Metrics(MetricsError::Format {
                path: path.display().to_string(),
                message: e.to_string(),
            })
        })?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Runs every (variant, seed) of `preset` in parallel and writes the
/// output tree under `out_dir/<preset>`.
pub fn run_preset(preset: Preset, base: &FedConfig, seeds: &[u64], out_dir: &Path) -> Result<PresetReport> {
    if seeds.is_empty() {
        return Err(PresetError::NoSeeds);
    }
    let dir = out_dir.join(preset.name());
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let variants = variants(preset, base);
    let jobs: Vec<(&Variant, u64)> = variants
        .iter()
        .flat_map(|v| seeds.iter().map(move |&s| (v, s)))
        .collect();

    let results: Vec<(SummaryRow, Vec<RoundRecord>)> = if preset == Preset::Challenge1 {
        let per_seed: Vec<[RoundRecord; 2]> = seeds
            .par_iter()
            .map(|&seed| {
                let cfg = with(&variants[0].cfg, |c| c.seed = seed);
                challenge1_records(&cfg).map_err(|source| PresetError::Run {
                    variant: "challenge1".to_string(),
                    seed,
                    source,
                })
            })
            .collect::<Result<_>>()?;
        jobs.iter()
            .map(|(v, seed)| {
                let i = seeds.iter().position(|s| s == seed).expect("seed in list");
                let slot = usize::from(v.name == "mul-to-avg");
                let recs = vec![per_seed[i][slot].clone()];
                (summarize(&v.name, *seed, &recs, 0.0, 0.0), recs)
            })
            .collect()
    } else {
        jobs.par_iter()
            .map(|(v, seed)| {
                let cfg = with(&v.cfg, |c| c.seed = *seed);
                let out = fedsim::run_experiment(&cfg).map_err(|source| PresetError::Run {
                    variant: v.name.clone(),
                    seed: *seed,
                    source,
                })?;
                let s = &out.summary;
                Ok((
                    summarize(&v.name, *seed, &out.records, s.initial_average_accuracy, s.final_test_loss),
                    out.records,
                ))
            })
            .collect::<Result<_>>()?
    };

    for ((v, seed), (_, recs)) in jobs.iter().zip(&results) {
        let path = dir.join(format!("{}-seed{seed}.csv", v.name));
        metrics::write_csv(recs, v.cfg.num_domains, &path)?;
    }
    let rows: Vec<SummaryRow> = results.iter().map(|(r, _)| r.clone()).collect();
    let medians: Vec<MedianRow> = variants
        .iter()
        .map(|v| {
            let mine: Vec<&SummaryRow> = rows.iter().filter(|r| r.variant == v.name).collect();
            MedianRow {
                variant: v.name.clone(),
                median_final_average_accuracy: median(&mine.iter().map(|r| r.final_average_accuracy).collect::<Vec<_>>()),
                median_final_test_loss: median(&mine.iter().map(|r| r.final_test_loss).collect::<Vec<_>>()),
            }
        })
        .collect();
    write_rows(&rows, &dir.join("summary.csv"))?;
    write_rows(&medians, &dir.join("medians.csv"))?;
    Ok(PresetReport {
        preset,
        dir,
        rows,
        medians,
        records: results.into_iter().map(|(_, r)| r).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for p in Preset::ALL {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        }
        assert!("fig3".parse::<Preset>().is_err());
    }

    #[test]
    fn every_variant_config_is_valid() {
        let base = FedConfig::default();
        for p in Preset::ALL {
            let vs = variants(p, &base);
            assert!(!vs.is_empty());
            for v in vs {
                v.cfg.validate().unwrap_or_else(|e| panic!("{p}/{}: {e}", v.name));
            }
        }
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn rank_sweep_respects_bound() {
        let base = FedConfig {
            num_classes: 6,
            ..FedConfig::default()
        };
        assert!(variants(Preset::RankSweep, &base).iter().all(|v| v.cfg.rank <= 6));
    }
}
