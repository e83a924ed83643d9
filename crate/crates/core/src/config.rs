//! Experiment configuration: a flat TOML table, every key optional.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::Method;
use crate::residual::{RegularizerNorm, ResidualPosition, SolverConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config {origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("invalid {key} = {value}: violates {invariant}")]
    Invalid {
        key: &'static str,
        value: String,
        invariant: String,
    },
}

pub type Result<T> = std::result::Result<T, ConfigError>;

/// How the client starts each round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitPolicy {
    /// Continue from the broadcast pair.
    #[default]
    AvgInitial,
    /// Fold the round's update into the base and start from a fresh pair.
    ReInitial,
    /// Fold, then continue from one participant's own last pair.
    LocalInitial,
}

impl InitPolicy {
    pub const ALL: [InitPolicy; 3] = [InitPolicy::AvgInitial, InitPolicy::ReInitial, InitPolicy::LocalInitial];

    pub fn name(self) -> &'static str {
        match self {
            InitPolicy::AvgInitial => "avg-initial",
            InitPolicy::ReInitial => "re-initial",
            InitPolicy::LocalInitial => "local-initial",
        }
    }
}

impl fmt::Display for InitPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How client data is split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Partition {
    /// One domain per client, balanced labels.
    #[default]
    Feature,
    /// One domain per client, labels skewed by a Dirichlet draw.
    FeatureLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FedConfig {
    pub seed: u64,
    pub num_clients: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub participation_fraction: f64,
    pub method: Method,
    pub init_policy: InitPolicy,
    pub rank: usize,
    pub client_ranks: Vec<usize>,
    pub init_std: f64,
    pub lambda: f64,
    pub solver_learning_rate: f64,
    pub solver_max_steps: usize,
    pub solver_grad_tol: f64,
    pub residual_position: ResidualPosition,
    pub regularizer: RegularizerNorm,
    pub partition: Partition,
    pub dirichlet_alpha: f64,
    pub samples_per_client: usize,
    pub test_samples_per_domain: usize,
    pub input_dim: usize,
    pub num_classes: usize,
    pub num_domains: usize,
    pub signal_dim: usize,
    pub prototype_norm: f64,
    pub noise_std: f64,
    pub domain_shift: f64,
    pub base_std: f64,
    pub timing: bool,
}

impl Default for FedConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            num_clients: 6,
            rounds: 30,
            local_epochs: 2,
            batch_size: 32,
            learning_rate: 0.05,
            participation_fraction: 1.0,
            method: Method::LoraFair,
            init_policy: InitPolicy::AvgInitial,
            rank: 4,
            client_ranks: Vec::new(),
            init_std: 0.02,
            lambda: 0.01,
            solver_learning_rate: 0.1,
            solver_max_steps: 500,
            solver_grad_tol: 1e-7,
            residual_position: ResidualPosition::OnB,
            regularizer: RegularizerNorm::Frobenius,
            partition: Partition::Feature,
            dirichlet_alpha: 0.5,
            samples_per_client: 600,
            test_samples_per_domain: 1000,
            input_dim: 32,
            num_classes: 10,
            num_domains: 6,
            signal_dim: 4,
            prototype_norm: 4.0,
            noise_std: 0.5,
            domain_shift: 0.3,
            base_std: 0.01,
            timing: false,
        }
    }
}

/// `(key, description)` for every config key, in file order. Defaults are
/// taken from [`FedConfig::default`] when rendering help.
pub const KEY_DOCS: &[(&str, &str)] = &[
    ("seed", "base seed; every random stream derives from it"),
    ("num_clients", "number of clients K"),
    ("rounds", "communication rounds T"),
    ("local_epochs", "passes over the local data per round (E)"),
    ("batch_size", "local mini-batch size"),
    ("learning_rate", "local SGD step size"),
    ("participation_fraction", "share of clients sampled per round, in (0, 1]"),
    ("method", "fedit | ffa-lora | flora | flexlora | hetlora | lora-fair"),
    ("init_policy", "avg-initial | re-initial | local-initial"),
    ("rank", "adapter rank r, at most min(num_classes, input_dim)"),
    ("client_ranks", "per-client ranks; empty means every client uses rank"),
    ("init_std", "std of the Gaussian A init"),
    ("lambda", "residual regularization weight"),
    ("solver_learning_rate", "initial step size of the residual solver"),
    ("solver_max_steps", "residual solver step budget; 0 disables the solve"),
    ("solver_grad_tol", "residual solver gradient-norm stopping threshold"),
    ("residual_position", "on_b | on_a"),
    ("regularizer", "frobenius | squared_frobenius"),
    ("partition", "feature | feature-label"),
    ("dirichlet_alpha", "label-skew concentration for feature-label"),
    ("samples_per_client", "training samples per client"),
    ("test_samples_per_domain", "held-out samples per domain"),
    ("input_dim", "input features l"),
    ("num_classes", "classes d"),
    ("num_domains", "domains M"),
    ("signal_dim", "dimension of the subspace holding the class prototypes"),
    ("prototype_norm", "norm of every class prototype"),
    ("noise_std", "per-feature Gaussian noise"),
    ("domain_shift", "strength of the per-domain rotation"),
    ("base_std", "std of the random base weight W0"),
    ("timing", "record wall-clock columns (off keeps outputs byte-stable)"),
];

fn invalid(key: &'static str, value: impl fmt::Display, invariant: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key,
        value: value.to_string(),
        invariant: invariant.into(),
    }
}

fn positive(key: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(key, v, format!("{key} > 0")))
    }
}

impl FedConfig {
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        let cfg: FedConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            origin: origin.to_string(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    /// Canonical TOML: every key, in declaration order.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// Rank of every client, expanding the uniform `rank`.
    pub fn ranks(&self) -> Vec<usize> {
        if self.client_ranks.is_empty() {
            vec![self.rank; self.num_clients]
        } else {
            self.client_ranks.clone()
        }
    }

    /// Largest client rank, the rank of the global pair.
    pub fn max_rank(&self) -> usize {
        self.ranks().into_iter().max().unwrap_or(self.rank)
    }

    pub fn solver(&self) -> SolverConfig {
        SolverConfig {
            learning_rate: self.solver_learning_rate,
            max_steps: self.solver_max_steps,
            lambda: self.lambda,
            grad_tol: self.solver_grad_tol,
            residual_position: self.residual_position,
            regularizer: self.regularizer,
            ..SolverConfig::default()
        }
    }

    /// Clients sampled per round: `⌈f·K⌉`.
    pub fn participants_per_round(&self) -> usize {
        ((self.participation_fraction * self.num_clients as f64).ceil() as usize).clamp(1, self.num_clients)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(invalid("num_clients", 0, "num_clients ≥ 1"));
        }
        if self.local_epochs == 0 {
            return Err(invalid("local_epochs", 0, "E ≥ 1"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size", 0, "batch_size ≥ 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning_rate", self.learning_rate, "learning_rate ≥ 0"));
        }
        let f = self.participation_fraction;
        if !(f > 0.0 && f <= 1.0) {
            return Err(invalid("participation_fraction", f, "participation_fraction ∈ (0, 1]"));
        }
        for (key, v) in [
            ("input_dim", self.input_dim),
            ("num_classes", self.num_classes),
            ("num_domains", self.num_domains),
            ("signal_dim", self.signal_dim),
            ("samples_per_client", self.samples_per_client),
            ("test_samples_per_domain", self.test_samples_per_domain),
        ] {
            if v == 0 {
                return Err(invalid(key, 0, format!("{key} ≥ 1")));
            }
        }
        if self.num_classes < 2 {
            return Err(invalid("num_classes", self.num_classes, "num_classes ≥ 2"));
        }
        if self.signal_dim > self.input_dim {
            return Err(invalid("signal_dim", self.signal_dim, "signal_dim ≤ input_dim"));
        }
        let max = self.num_classes.min(self.input_dim);
        if self.rank == 0 || self.rank > max {
            return Err(invalid("rank", self.rank, format!("rank ≤ min(d,l) = {max} and rank ≥ 1")));
        }
        if !self.client_ranks.is_empty() {
            if self.client_ranks.len() != self.num_clients {
                return Err(invalid(
                    "client_ranks",
                    format!("{:?}", self.client_ranks),
                    format!("one rank per client (num_clients = {})", self.num_clients),
                ));
            }
            if let Some(&r) = self.client_ranks.iter().find(|&&r| r == 0 || r > max) {
                return Err(invalid("client_ranks", r, format!("rank ≤ min(d,l) = {max} and rank ≥ 1")));
            }
            let mixed = self.client_ranks.iter().any(|&r| r != self.client_ranks[0]);
            if mixed && !self.method.supports_heterogeneous_ranks() {
                return Err(invalid(
                    "method",
                    self.method,
                    "heterogeneous client_ranks need flora, flexlora, hetlora or lora-fair",
                ));
            }
        }
        if self.method == Method::FfaLora && self.init_policy != InitPolicy::AvgInitial {
            return Err(invalid(
                "init_policy",
                self.init_policy,
                "ffa-lora keeps A frozen, so init_policy = avg-initial",
            ));
        }
        positive("init_std", self.init_std)?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(invalid("lambda", self.lambda, "lambda ≥ 0"));
        }
        positive("solver_learning_rate", self.solver_learning_rate)?;
        positive("solver_grad_tol", self.solver_grad_tol)?;
        positive("dirichlet_alpha", self.dirichlet_alpha)?;
        positive("prototype_norm", self.prototype_norm)?;
        positive("noise_std", self.noise_std)?;
        positive("base_std", self.base_std)?;
        if !(self.domain_shift >= 0.0 && self.domain_shift.is_finite()) {
            return Err(invalid("domain_shift", self.domain_shift, "domain_shift ≥ 0"));
        }
        Ok(())
    }

    /// Key/default/description table, one line per key.
    pub fn help_table() -> String {
        let defaults: toml::Table = toml::from_str(&FedConfig::default().to_toml()).expect("default config parses");
        let mut out = String::new();
        for (key, doc) in KEY_DOCS {
            let value = defaults.get(*key).map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("  {key:<24} = {value:<12} {doc}\n"));
        }
        out
    }
}
