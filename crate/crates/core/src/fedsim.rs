//! Synthetic federated environment: domain-shifted classification data,
//! client-local adapter training and round orchestration.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::Gamma;
use rayon::prelude::*;
use thiserror::Error;

use crate::aggregation::{
    self, aggregate, comm_cost, hetlora_pad, hetlora_truncate, AggregateResult, AggregationContext,
    AggregationError, ClientContribution, Method,
};
use crate::config::{ConfigError, FedConfig, InitPolicy, Partition};
use crate::lora::{fold_into_base, init_pair, FrozenBase, LoraError, LoraPair};
use crate::matrix::{gaussian_fill, orthonormal_from, Matrix, MatrixError, RngSeed};
use crate::metrics::{evaluate, Evaluation, RoundRecord, RunSummary};
use crate::{Mat, Pair};

#[derive(Debug, Error)]
pub enum FedError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("synthetic task too noisy: nearest-prototype accuracy {accuracy:.3} after {attempts} attempts (need ≥ 0.9)")]
    TaskTooNoisy { accuracy: f64, attempts: usize },
    #[error("dirichlet alpha must be positive, got {0}")]
    BadAlpha(f64),
    #[error("local training diverged on client {client} (epoch {epoch})")]
    TrainingDiverged { client: usize, epoch: usize },
    #[error("init policy {policy} cannot be used with {method}")]
    PolicyMismatch { method: Method, policy: InitPolicy },
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
    #[error(transparent)]
    Lora(#[from] LoraError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

pub type Result<T> = std::result::Result<T, FedError>;

// Sub-stream labels under the run seed.
const STREAM_TASK: u64 = 1;
const STREAM_TRAIN_DATA: u64 = 2;
const STREAM_TEST_DATA: u64 = 3;
const STREAM_BASE: u64 = 4;
const STREAM_INIT: u64 = 5;
const STREAM_SAMPLING: u64 = 6;
const STREAM_LOCAL: u64 = 7;
const STREAM_REINIT: u64 = 8;
const STREAM_PICK: u64 = 9;

const BAYES_FLOOR: f64 = 0.9;
const MAX_TASK_ATTEMPTS: usize = 16;
const BAYES_SAMPLES_PER_CLASS: usize = 40;

/// Classification task: a sample of domain `m`, class `c` is
/// `x = T_m·(p_c + ε)` with `ε ~ N(0, σ²I)`.
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub input_dim: usize,
    pub num_classes: usize,
    pub num_domains: usize,
    /// One orthogonal l×l matrix per domain.
    pub domain_transforms: Vec<Mat>,
    /// d×l, one prototype per row, all of norm `prototype_norm`.
    pub prototypes: Mat,
    pub noise_std: f64,
    /// Nearest-prototype accuracy measured at generation time.
    pub bayes_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    /// n×l
    pub inputs: Mat,
    pub labels: Vec<usize>,
    pub domain_id: usize,
}

impl ClientDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_histogram(&self, num_classes: usize) -> Vec<usize> {
        let mut h = vec![0; num_classes];
        for &c in &self.labels {
            h[c] += 1;
        }
        h
    }
}

impl SyntheticTask {
    /// Draws prototypes in a random `signal_dim` subspace and one rotation
    /// per domain, retrying until the nearest-prototype oracle clears 90%.
    pub fn generate(cfg: &FedConfig, seed: RngSeed) -> Result<Self> {
        let (l, d, m) = (cfg.input_dim, cfg.num_classes, cfg.num_domains);
        let identity = Matrix::<f64>::identity(l);
        let domain_transforms = (0..m)
            .map(|k| {
                if cfg.domain_shift == 0.0 {
                    return Ok(identity.clone());
                }
                let g = gaussian_fill::<f64>(l, l, cfg.domain_shift, seed.derive2(0, k as u64))?;
                Ok(orthonormal_from(&identity.add(&g)?))
            })
            .collect::<Result<Vec<_>>>()?;

        let mut best = 0.0;
        for attempt in 0..MAX_TASK_ATTEMPTS {
            let s = seed.derive2(1, attempt as u64);
            let basis = orthonormal_from(&gaussian_fill::<f64>(l, cfg.signal_dim, 1.0, s.derive(0))?);
            let mut coeff = gaussian_fill::<f64>(d, cfg.signal_dim, 1.0, s.derive(1))?;
            for row in coeff.as_mut_slice().chunks_mut(cfg.signal_dim) {
                let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                row.iter_mut().for_each(|v| *v *= cfg.prototype_norm / n);
            }
            let task = SyntheticTask {
                input_dim: l,
                num_classes: d,
                num_domains: m,
                domain_transforms: domain_transforms.clone(),
                prototypes: coeff.matmul_t(&basis)?,
                noise_std: cfg.noise_std,
                bayes_accuracy: 0.0,
            };
            let acc = task.oracle_accuracy(BAYES_SAMPLES_PER_CLASS, s.derive(2));
            if acc >= BAYES_FLOOR {
                return Ok(SyntheticTask {
                    bayes_accuracy: acc,
                    ..task
                });
            }
            best = f64::max(best, acc);
        }
        Err(FedError::TaskTooNoisy {
            accuracy: best,
            attempts: MAX_TASK_ATTEMPTS,
        })
    }

    /// `x = T_m·(p_c + ε)`
    pub fn sample<R: Rng>(&self, domain: usize, class: usize, rng: &mut R) -> Vec<f64> {
        let l = self.input_dim;
        let z: Vec<f64> = self
            .prototypes
            .row(class)
            .iter()
            .map(|&p| p + self.noise_std * rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let t = &self.domain_transforms[domain];
        (0..l)
            .map(|i| t.row(i).iter().zip(&z).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Classifies by undoing the domain rotation and picking the nearest prototype.
    pub fn oracle_classify(&self, domain: usize, x: &[f64]) -> usize {
        let t = &self.domain_transforms[domain];
        let l = self.input_dim;
        let mut z = vec![0.0; l];
        for (i, &xi) in x.iter().enumerate() {
            for (zj, &tij) in z.iter_mut().zip(t.row(i)) {
                *zj += tij * xi;
            }
        }
        let mut best = (f64::INFINITY, 0);
        for c in 0..self.num_classes {
            let dist: f64 = self.prototypes.row(c).iter().zip(&z).map(|(p, v)| (p - v) * (p - v)).sum();
            if dist < best.0 {
                best = (dist, c);
            }
        }
        best.1
    }

    fn oracle_accuracy(&self, per_class: usize, seed: RngSeed) -> f64 {
        let mut rng = seed.rng();
        let mut correct = 0usize;
        let mut total = 0usize;
        for m in 0..self.num_domains {
            for c in 0..self.num_classes {
                for _ in 0..per_class {
                    let x = self.sample(m, c, &mut rng);
                    correct += usize::from(self.oracle_classify(m, &x) == c);
                    total += 1;
                }
            }
        }
        correct as f64 / total as f64
    }

    fn dataset<R: Rng>(&self, domain: usize, labels: Vec<usize>, rng: &mut R) -> ClientDataset {
        let mut data = Vec::with_capacity(labels.len() * self.input_dim);
        for &c in &labels {
            data.extend(self.sample(domain, c, rng));
        }
        ClientDataset {
            inputs: Matrix::from_raw(labels.len(), self.input_dim, data),
            labels,
            domain_id: domain,
        }
    }
}

fn balanced_labels<R: Rng>(n: usize, d: usize, rng: &mut R) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..n).map(|i| i % d).collect();
    labels.shuffle(rng);
    labels
}

/// Client `k` draws from domain `k mod M` with balanced labels.
pub fn gen_feature_noniid(task: &SyntheticTask, num_clients: usize, samples_per_client: usize, seed: RngSeed) -> Vec<ClientDataset> {
    (0..num_clients)
        .map(|k| {
            let mut rng = seed.derive2(STREAM_TRAIN_DATA, k as u64).rng();
            let labels = balanced_labels(samples_per_client, task.num_classes, &mut rng);
            task.dataset(k % task.num_domains, labels, &mut rng)
        })
        .collect()
}

/// Dirichlet(α) class proportions, rounded to counts summing exactly to `n`
/// by largest remainder.
pub fn dirichlet_counts<R: Rng>(n: usize, classes: usize, alpha: f64, rng: &mut R) -> Result<Vec<usize>> {
    let gamma = Gamma::new(alpha, 1.0).map_err(|_| FedError::BadAlpha(alpha))?;
    let mut q: Vec<f64> = (0..classes).map(|_| rng.sample(gamma)).collect();
    let sum: f64 = q.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        q.iter_mut().for_each(|v| *v /= sum);
    } else {
        // Every draw underflowed: all mass on one class.
        q = vec![0.0; classes];
        q[rng.random_range(0..classes)] = 1.0;
    }
    let exact: Vec<f64> = q.iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|v| v.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..classes).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for &c in order.iter().take(n.saturating_sub(assigned)) {
        counts[c] += 1;
    }
    Ok(counts)
}

/// Client `k` draws from domain `k mod M`; its class proportions come from
/// a Dirichlet(α) draw.
pub fn gen_label_noniid(
    task: &SyntheticTask,
    num_clients: usize,
    alpha: f64,
    samples_per_client: usize,
    seed: RngSeed,
) -> Result<Vec<ClientDataset>> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(FedError::BadAlpha(alpha));
    }
    (0..num_clients)
        .map(|k| {
            let mut rng = seed.derive2(STREAM_TRAIN_DATA, k as u64).rng();
            let counts = dirichlet_counts(samples_per_client, task.num_classes, alpha, &mut rng)?;
            let mut labels: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
            labels.shuffle(&mut rng);
            Ok(task.dataset(k % task.num_domains, labels, &mut rng))
        })
        .collect()
}

/// One balanced held-out set per domain, from a stream no client touches.
pub fn gen_test_sets(task: &SyntheticTask, per_domain: usize, seed: RngSeed) -> Vec<ClientDataset> {
    (0..task.num_domains)
        .map(|m| {
            let mut rng = seed.derive2(STREAM_TEST_DATA, m as u64).rng();
            let labels = balanced_labels(per_domain, task.num_classes, &mut rng);
            task.dataset(m, labels, &mut rng)
        })
        .collect()
}

/// Mean softmax cross-entropy of logits `X·Wᵀ` and its gradient `∂L/∂W` (d×l).
pub fn loss_and_weight_grad(w: &Mat, x: &Mat, labels: &[usize]) -> Result<(f64, Mat)> {
    let mut dz = x.matmul_t(w)?;
    let n = labels.len() as f64;
    let d = w.rows();
    let mut loss = 0.0;
    for (row, &y) in dz.as_mut_slice().chunks_mut(d).zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        loss += sum.ln() - (row[y].ln());
        for v in row.iter_mut() {
            *v /= sum * n;
        }
        row[y] -= 1.0 / n;
    }
    Ok((loss / n, dz.t_matmul(x)?))
}

/// Loss and adapter gradients `∂L/∂B = G·Aᵀ`, `∂L/∂A = Bᵀ·G` for the
/// model `W0 + B·A`.
pub fn pair_gradients(base: &Mat, pair: &Pair, x: &Mat, labels: &[usize]) -> Result<(f64, Mat, Mat)> {
    let w = base.add(&pair.effective_update())?;
    let (loss, g) = loss_and_weight_grad(&w, x, labels)?;
    let grad_b = g.matmul_t(pair.a())?;
    let grad_a = pair.b().t_matmul(&g)?;
    Ok((loss, grad_b, grad_a))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalTraining {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// False under FFA-LoRA: `A` stays fixed.
    pub train_a: bool,
}

impl LocalTraining {
    pub fn from_config(cfg: &FedConfig) -> Self {
        Self {
            epochs: cfg.local_epochs,
            batch_size: cfg.batch_size,
            learning_rate: cfg.learning_rate,
            train_a: cfg.method != Method::FfaLora,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LocalOutcome {
    pub pair: Pair,
    /// Mean batch loss over the last epoch.
    pub mean_loss: f64,
    pub steps: usize,
    pub seconds: f64,
}

/// Mini-batch gradient descent on the adapter, `epochs` shuffled passes
/// over the local data.
pub fn local_train(
    base: &FrozenBase<f64>,
    start: &Pair,
    data: &ClientDataset,
    train: &LocalTraining,
    client: usize,
    seed: RngSeed,
) -> Result<LocalOutcome> {
    let clock = Instant::now();
    let mut rng = seed.rng();
    let (mut b, mut a) = start.clone().into_parts();
    let l = data.inputs.cols();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut mean_loss = 0.0;
    let mut steps = 0;
    for epoch in 0..train.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(train.batch_size.max(1)) {
            let mut rows = Vec::with_capacity(batch.len() * l);
            let mut labels = Vec::with_capacity(batch.len());
            for &i in batch {
                rows.extend_from_slice(data.inputs.row(i));
                labels.push(data.labels[i]);
            }
            let x = Matrix::from_raw(batch.len(), l, rows);
            let pair = LoraPair::new(b, a)?;
            let (loss, grad_b, grad_a) = pair_gradients(base.weight(), &pair, &x, &labels)?;
            if !loss.is_finite() {
                return Err(FedError::TrainingDiverged { client, epoch });
            }
            (b, a) = pair.into_parts();
            epoch_loss += loss * batch.len() as f64;
            b.axpy_assign(-train.learning_rate, &grad_b);
            if train.train_a {
                a.axpy_assign(-train.learning_rate, &grad_a);
            }
            steps += 1;
        }
        mean_loss = epoch_loss / data.len() as f64;
    }
    if !(b.is_finite() && a.is_finite()) {
        return Err(FedError::TrainingDiverged {
            client,
            epoch: train.epochs,
        });
    }
    Ok(LocalOutcome {
        pair: LoraPair::new(b, a)?,
        mean_loss,
        steps,
        seconds: clock.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalState {
    pub base: FrozenBase<f64>,
    /// Broadcast pair at the largest client rank.
    pub pair: Pair,
    /// The shared `A` under FFA-LoRA.
    pub frozen_a: Option<Mat>,
    pub round: usize,
}

impl GlobalState {
    pub fn initial(cfg: &FedConfig, seed: RngSeed) -> Result<Self> {
        let (d, l) = (cfg.num_classes, cfg.input_dim);
        let base = FrozenBase::new(gaussian_fill(d, l, cfg.base_std, seed.derive(STREAM_BASE))?);
        let pair = init_pair(d, l, cfg.max_rank(), cfg.init_std, seed.derive(STREAM_INIT))?;
        let frozen_a = (cfg.method == Method::FfaLora).then(|| pair.a().clone());
        Ok(Self {
            base,
            pair,
            frozen_a,
            round: 0,
        })
    }

    /// `W0 + B·A`, the weight the global model evaluates with.
    pub fn model_weight(&self) -> Result<Mat> {
        Ok(self.base.with_adapter(&self.pair)?)
    }

    /// The broadcast pair cut down to a client's rank.
    pub fn client_pair(&self, rank: usize) -> Result<Pair> {
        Ok(hetlora_truncate(&self.pair, rank)?)
    }
}

/// Builds the next state from an aggregate. Every policy keeps the model
/// function at `base + realized_update`; they differ only in which pair the
/// clients continue from.
pub fn apply_broadcast(
    state: &GlobalState,
    result: &AggregateResult<f64>,
    contributions: &[ClientContribution<f64>],
    policy: InitPolicy,
    init_std: f64,
    seed: RngSeed,
) -> Result<GlobalState> {
    let rank = state.pair.rank();
    let (d, l) = (state.pair.out_dim(), state.pair.in_dim());
    if result.method == Method::FfaLora && policy != InitPolicy::AvgInitial {
        return Err(FedError::PolicyMismatch {
            method: result.method,
            policy,
        });
    }
    let continue_from = |pair: Pair| -> Result<GlobalState> {
        let shift = result.realized_update.sub(&pair.effective_update())?;
        Ok(GlobalState {
            base: fold_into_base(&state.base, &shift)?,
            pair,
            frozen_a: state.frozen_a.clone(),
            round: state.round + 1,
        })
    };
    match policy {
        InitPolicy::AvgInitial if result.method == Method::Flora => {
            let padded = hetlora_pad(contributions, rank)?;
            let (a_bar, b_bar) = aggregation::average_pairs(&padded)?;
            continue_from(LoraPair::new(b_bar, a_bar)?)
        }
        InitPolicy::AvgInitial => Ok(GlobalState {
            base: state.base.clone(),
            pair: LoraPair::new(result.broadcast_b.clone(), result.broadcast_a.clone())?,
            frozen_a: state.frozen_a.clone(),
            round: state.round + 1,
        }),
        InitPolicy::ReInitial => {
            let fresh = init_pair(d, l, rank, init_std, seed.derive2(STREAM_REINIT, state.round as u64))?;
            Ok(GlobalState {
                base: fold_into_base(&state.base, &result.realized_update)?,
                pair: fresh,
                frozen_a: state.frozen_a.clone(),
                round: state.round + 1,
            })
        }
        InitPolicy::LocalInitial => {
            let mut rng = seed.derive2(STREAM_PICK, state.round as u64).rng();
            let pick = &contributions[rng.random_range(0..contributions.len())];
            let padded = hetlora_pad(std::slice::from_ref(pick), rank)?;
            continue_from(padded.into_iter().next().expect("one contribution").pair)
        }
    }
}

/// Uniform sample of `⌈f·K⌉` client ids without replacement, sorted.
pub fn sample_participants(cfg: &FedConfig, round: usize, seed: RngSeed) -> Vec<usize> {
    let k = cfg.num_clients;
    let m = cfg.participants_per_round();
    if m == k {
        return (0..k).collect();
    }
    let mut rng = seed.derive2(STREAM_SAMPLING, round as u64).rng();
    let mut ids = rand::seq::index::sample(&mut rng, k, m).into_vec();
    ids.sort_unstable();
    ids
}

/// Trains the given clients in parallel from the current state; results
/// come back in the order of `ids`.
pub fn train_clients(
    state: &GlobalState,
    clients: &[ClientDataset],
    ids: &[usize],
    cfg: &FedConfig,
    seed: RngSeed,
) -> Result<Vec<LocalOutcome>> {
    let ranks = cfg.ranks();
    let train = LocalTraining::from_config(cfg);
    ids.par_iter()
        .map(|&k| {
            let start = state.client_pair(ranks[k])?;
            let s = seed.derive(STREAM_LOCAL).derive2(state.round as u64, k as u64);
            local_train(&state.base, &start, &clients[k], &train, k, s)
        })
        .collect()
}

/// A fully materialized run: task, client data, test sets and state.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub cfg: FedConfig,
    pub seed: RngSeed,
    pub task: SyntheticTask,
    pub clients: Vec<ClientDataset>,
    pub test_sets: Vec<ClientDataset>,
    pub state: GlobalState,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<RoundRecord>,
    pub summary: RunSummary,
}

impl Experiment {
    pub fn new(cfg: &FedConfig) -> Result<Self> {
        cfg.validate()?;
        let seed = RngSeed(cfg.seed);
        let task = SyntheticTask::generate(cfg, seed.derive(STREAM_TASK))?;
        let clients = match cfg.partition {
            Partition::Feature => gen_feature_noniid(&task, cfg.num_clients, cfg.samples_per_client, seed),
            Partition::FeatureLabel => {
                gen_label_noniid(&task, cfg.num_clients, cfg.dirichlet_alpha, cfg.samples_per_client, seed)?
            }
        };
        let test_sets = gen_test_sets(&task, cfg.test_samples_per_domain, seed);
        let state = GlobalState::initial(cfg, seed)?;
        Ok(Self {
            cfg: cfg.clone(),
            seed,
            task,
            clients,
            test_sets,
            state,
        })
    }

    pub fn evaluate(&self) -> Result<Evaluation> {
        Ok(evaluate(&self.state.model_weight()?, &self.test_sets)?)
    }

    pub fn contributions(&self, ids: &[usize], outcomes: &[LocalOutcome]) -> Vec<ClientContribution<f64>> {
        ids.iter()
            .zip(outcomes)
            .map(|(&k, o)| ClientContribution {
                client_id: k,
                sample_count: self.clients[k].len(),
                pair: o.pair.clone(),
            })
            .collect()
    }

    /// One communication round; advances the state.
    pub fn run_round(&mut self) -> Result<RoundRecord> {
        let cfg = &self.cfg;
        let round = self.state.round + 1;
        let ids = sample_participants(cfg, round, self.seed);
        let outcomes = train_clients(&self.state, &self.clients, &ids, cfg, self.seed)?;
        let contributions = self.contributions(&ids, &outcomes);
        let ctx = AggregationContext {
            frozen_a: self.state.frozen_a.as_ref(),
            target_rank: cfg.max_rank(),
            solver: cfg.solver(),
        };
        let result = aggregate(cfg.method, &contributions, &ctx)?;
        self.state = apply_broadcast(&self.state, &result, &contributions, cfg.init_policy, cfg.init_std, self.seed)?;
        let eval = self.evaluate()?;

        let ranks = cfg.ranks();
        let participant_ranks: Vec<usize> = ids.iter().map(|&k| ranks[k]).collect();
        let comm = comm_cost(cfg.method, cfg.num_classes, cfg.input_dim, &participant_ranks);
        let total: usize = contributions.iter().map(|c| c.sample_count).sum();
        let train_loss = outcomes
            .iter()
            .zip(&contributions)
            .map(|(o, c)| o.mean_loss * c.sample_count as f64)
            .sum::<f64>()
            / total as f64;
        let trainable_params = participant_ranks
            .iter()
            .map(|&r| {
                if cfg.method == Method::FfaLora {
                    r * cfg.num_classes
                } else {
                    r * (cfg.num_classes + cfg.input_dim)
                }
            })
            .max()
            .unwrap_or(0);
        let solver = result.solver.as_ref();
        Ok(RoundRecord {
            round,
            average_accuracy: eval.average_accuracy,
            per_domain_accuracy: eval.per_domain_accuracy,
            train_loss,
            test_loss: eval.loss,
            participants: ids.len(),
            uplink_floats: comm.uplink_floats,
            downlink_floats: comm.downlink_floats,
            downlink_total_floats: comm.downlink_total_floats,
            trainable_params,
            bias_cosine: result.bias_cosine,
            bias_frobenius: result.bias_frobenius,
            server_solve_seconds: cfg.timing.then_some(result.solve_seconds),
            client_train_seconds: cfg.timing.then(|| outcomes.iter().map(|o| o.seconds).sum()),
            solver_steps: solver.map(|s| s.steps_taken),
            solver_final_cosine: solver.map(|s| s.final_cosine),
            solver_regularizer_similarity: solver.map(|s| s.regularizer_similarity),
            solver_delta_norm: solver.map(|s| s.final_delta_norm),
        })
    }

    pub fn run(mut self) -> Result<RunOutput> {
        let initial = self.evaluate()?;
        let mut records = Vec::with_capacity(self.cfg.rounds);
        for _ in 0..self.cfg.rounds {
            records.push(self.run_round()?);
        }
        let summary = RunSummary::new(&self.cfg, &initial, &records);
        Ok(RunOutput { records, summary })
    }
}

pub fn run_experiment(cfg: &FedConfig) -> Result<RunOutput> {
    Experiment::new(cfg)?.run()
}
