//! Server-side aggregation of client adapter pairs.
//!
//! Every strategy returns an [`AggregateResult`] carrying both the ideal
//! update `ΔW = Σ p_k B_k A_k` and the update clients actually realize, so
//! the aggregation bias of each method can be measured on equal terms.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lora::{LoraError, LoraPair};
use crate::matrix::{cosine_similarity_flat, truncated_svd, Matrix, MatrixError, DEGENERATE_NORM};
use crate::residual::{self, ResidualPosition, SolverConfig, SolverError, SolverReport};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AggregationError {
    #[error("no client contributions to aggregate")]
    Empty,
    #[error("client {client} reported zero samples")]
    ZeroSamples { client: usize },
    #[error("client {client} has update shape {got:?}, expected {expected:?}")]
    ShapeMismatch {
        client: usize,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("{method} does not support heterogeneous client ranks")]
    HeterogeneousRanks { method: Method },
    #[error("protocol violation: client {client} modified the frozen A factor")]
    FrozenAModified { client: usize },
    #[error("frozen A has shape {got:?}, expected {expected:?}")]
    FrozenAShape {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("{method} requires a frozen A factor")]
    MissingFrozenA { method: Method },
    #[error("padding rank {target} is smaller than client rank {rank}")]
    PadRankTooSmall { target: usize, rank: usize },
    #[error("cannot truncate a rank-{rank} pair to rank {target}")]
    TruncateRankTooLarge { target: usize, rank: usize },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Lora(#[from] LoraError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

pub type Result<T> = std::result::Result<T, AggregationError>;

/// Aggregation strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Weighted average of `A` and `B` separately.
    Fedit,
    /// `A` frozen at its shared init, only `B` trained and averaged.
    FfaLora,
    /// Stack all client factors; clients fold the product into the base.
    Flora,
    /// Rank-`r` truncated SVD of the ideal update.
    Flexlora,
    /// Zero-pad heterogeneous ranks, average, truncate back per client.
    Hetlora,
    /// FedIT averaging plus a server-side residual correction.
    LoraFair,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Fedit,
        Method::FfaLora,
        Method::Flora,
        Method::Flexlora,
        Method::Hetlora,
        Method::LoraFair,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Fedit => "fedit",
            Method::FfaLora => "ffa-lora",
            Method::Flora => "flora",
            Method::Flexlora => "flexlora",
            Method::Hetlora => "hetlora",
            Method::LoraFair => "lora-fair",
        }
    }

    pub fn supports_heterogeneous_ranks(self) -> bool {
        matches!(self, Method::Flora | Method::Flexlora | Method::Hetlora | Method::LoraFair)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Method::ALL.iter().map(|m| m.name()).collect();
                format!("unknown method '{s}' (expected one of {})", names.join(", "))
            })
    }
}

/// One client's trained pair and local dataset size.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientContribution<T> {
    pub client_id: usize,
    pub sample_count: usize,
    pub pair: LoraPair<T>,
}

#[derive(Debug, Clone)]
pub struct AggregateResult<T> {
    pub method: Method,
    pub broadcast_a: Matrix<T>,
    pub broadcast_b: Matrix<T>,
    /// `ΔW = Σ p_k B_k A_k`
    pub ideal_update: Matrix<T>,
    /// What the clients end up applying: `broadcast_b · broadcast_a`.
    pub realized_update: Matrix<T>,
    pub bias_cosine: T,
    pub bias_frobenius: T,
    /// Floats sent to each client (the largest share under heterogeneous ranks).
    pub downlink_floats: usize,
    /// FLoRA only: the update clients fold into their base weight.
    pub fold_delta: Option<Matrix<T>>,
    pub reinit_required: bool,
    pub solver: Option<SolverReport<T>>,
    /// Wall time spent in the SVD or residual solve; zero for pure averaging.
    pub solve_seconds: f64,
}

/// Data-size weights `p_k = n_k / Σ n`.
pub fn weights<T: Scalar>(contribs: &[ClientContribution<T>]) -> Result<Vec<T>> {
    if contribs.is_empty() {
        return Err(AggregationError::Empty);
    }
    let mut total = 0usize;
    for c in contribs {
        if c.sample_count == 0 {
            return Err(AggregationError::ZeroSamples { client: c.client_id });
        }
        total += c.sample_count;
    }
    let total = T::from_count(total);
    Ok(contribs
        .iter()
        .map(|c| T::from_count(c.sample_count) / total)
        .collect())
}

fn check_update_shapes<T: Scalar>(contribs: &[ClientContribution<T>]) -> Result<(usize, usize)> {
    let first = contribs.first().ok_or(AggregationError::Empty)?;
    let expected = (first.pair.out_dim(), first.pair.in_dim());
    for c in contribs {
        let got = (c.pair.out_dim(), c.pair.in_dim());
        if got != expected {
            return Err(AggregationError::ShapeMismatch {
                client: c.client_id,
                expected,
                got,
            });
        }
    }
    Ok(expected)
}

fn common_rank<T: Scalar>(contribs: &[ClientContribution<T>], method: Method) -> Result<usize> {
    check_update_shapes(contribs)?;
    let r = contribs[0].pair.rank();
    if contribs.iter().any(|c| c.pair.rank() != r) {
        return Err(AggregationError::HeterogeneousRanks { method });
    }
    Ok(r)
}

/// `(Ā, B̄) = (Σ p_k A_k, Σ p_k B_k)` over equal-rank pairs.
pub fn average_pairs<T: Scalar>(contribs: &[ClientContribution<T>]) -> Result<(Matrix<T>, Matrix<T>)> {
    common_rank(contribs, Method::Fedit)?;
    let p = weights(contribs)?;
    let first = &contribs[0].pair;
    let mut a_bar = Matrix::zeros(first.a().rows(), first.a().cols());
    let mut b_bar = Matrix::zeros(first.b().rows(), first.b().cols());
    for (c, &w) in contribs.iter().zip(&p) {
        a_bar.axpy_assign(w, c.pair.a());
        b_bar.axpy_assign(w, c.pair.b());
    }
    Ok((a_bar, b_bar))
}

/// `ΔW' = B̄·Ā`, the update FedIT clients actually receive.
pub fn approx_update<T: Scalar>(a_bar: &Matrix<T>, b_bar: &Matrix<T>) -> Result<Matrix<T>> {
    Ok(b_bar.matmul(a_bar)?)
}

/// `ΔW = Σ p_k B_k A_k`. Ranks may differ between clients.
pub fn ideal_update<T: Scalar>(contribs: &[ClientContribution<T>]) -> Result<Matrix<T>> {
    let (d, l) = check_update_shapes(contribs)?;
    let p = weights(contribs)?;
    let mut dw = Matrix::zeros(d, l);
    for (c, &w) in contribs.iter().zip(&p) {
        dw.axpy_assign(w, &c.pair.effective_update());
    }
    Ok(dw)
}

/// Cosine and Frobenius distance between the ideal and realized updates.
/// Two zero updates count as perfectly aligned; one zero update as orthogonal.
pub fn bias<T: Scalar>(ideal: &Matrix<T>, realized: &Matrix<T>) -> Result<(T, T)> {
    let frob = ideal.distance(realized)?;
    let floor = T::lit(DEGENERATE_NORM);
    let cos = match cosine_similarity_flat(ideal, realized) {
        Ok(c) => c,
        Err(MatrixError::Degenerate { .. }) => {
            if ideal.frobenius_norm() < floor && realized.frobenius_norm() < floor {
                T::one()
            } else {
                T::zero()
            }
        }
        Err(e) => return Err(e.into()),
    };
    Ok((cos, frob))
}

fn per_client_downlink(rank: usize, d: usize, l: usize) -> usize {
    rank * (d + l)
}

fn max_rank<T: Scalar>(contribs: &[ClientContribution<T>]) -> usize {
    contribs.iter().map(|c| c.pair.rank()).max().unwrap_or(0)
}

#[allow(clippy::too_many_arguments)]
fn finish<T: Scalar>(
    method: Method,
    broadcast_b: Matrix<T>,
    broadcast_a: Matrix<T>,
    ideal: Matrix<T>,
    downlink_floats: usize,
    fold_delta: Option<Matrix<T>>,
    solver: Option<SolverReport<T>>,
    solve_seconds: f64,
) -> Result<AggregateResult<T>> {
    let realized = broadcast_b.matmul(&broadcast_a)?;
    let (bias_cosine, bias_frobenius) = bias(&ideal, &realized)?;
    Ok(AggregateResult {
        method,
        reinit_required: fold_delta.is_some(),
        broadcast_a,
        broadcast_b,
        ideal_update: ideal,
        realized_update: realized,
        bias_cosine,
        bias_frobenius,
        downlink_floats,
        fold_delta,
        solver,
        solve_seconds,
    })
}

pub fn aggregate_fedit<T: Scalar>(contribs: &[ClientContribution<T>]) -> Result<AggregateResult<T>> {
    let r = common_rank(contribs, Method::Fedit)?;
    let (a_bar, b_bar) = average_pairs(contribs)?;
    let ideal = ideal_update(contribs)?;
    let (d, l) = (b_bar.rows(), a_bar.cols());
    finish(Method::Fedit, b_bar, a_bar, ideal, per_client_downlink(r, d, l), None, None, 0.0)
}

/// FFA-LoRA: only `B` is averaged; every client must still hold `frozen_a`.
pub fn aggregate_ffa<T: Scalar>(contribs: &[ClientContribution<T>], frozen_a: &Matrix<T>) -> Result<AggregateResult<T>> {
    let r = common_rank(contribs, Method::FfaLora)?;
    let first = &contribs[0].pair;
    if frozen_a.shape() != first.a().shape() {
        return Err(AggregationError::FrozenAShape {
            expected: first.a().shape(),
            got: frozen_a.shape(),
        });
    }
    for c in contribs {
        if c.pair.a() != frozen_a {
            return Err(AggregationError::FrozenAModified { client: c.client_id });
        }
    }
    let p = weights(contribs)?;
    let mut b_bar = Matrix::zeros(first.b().rows(), first.b().cols());
    for (c, &w) in contribs.iter().zip(&p) {
        b_bar.axpy_assign(w, c.pair.b());
    }
    let ideal = ideal_update(contribs)?;
    let d = b_bar.rows();
    finish(Method::FfaLora, b_bar, frozen_a.clone(), ideal, r * d, None, None, 0.0)
}

/// FLoRA: `[p_1 B_1 | … | p_K B_K] · [A_1; …; A_K]`, which equals `ΔW`
/// exactly. Clients fold it into the base and restart from a fresh pair.
pub fn aggregate_flora<T: Scalar>(contribs: &[ClientContribution<T>]) -> Result<AggregateResult<T>> {
    let (d, l) = check_update_shapes(contribs)?;
    let p = weights(contribs)?;
    let scaled_b: Vec<Matrix<T>> = contribs
        .iter()
        .zip(&p)
        .map(|(c, &w)| c.pair.b().scale(w))
        .collect();
    let b_refs: Vec<&Matrix<T>> = scaled_b.iter().collect();
    let a_refs: Vec<&Matrix<T>> = contribs.iter().map(|c| c.pair.a()).collect();
    let b_stack = Matrix::hstack(&b_refs)?;
    let a_stack = Matrix::vstack(&a_refs)?;
    let fold = b_stack.matmul(&a_stack)?;
    let ideal = ideal_update(contribs)?;
    let total_rank = a_stack.rows();
    finish(
        Method::Flora,
        b_stack,
        a_stack,
        ideal,
        per_client_downlink(total_rank, d, l),
        Some(fold),
        None,
        0.0,
    )
}

/// FlexLoRA: best rank-`target_rank` factorization of `ΔW`, singular values
/// split evenly as `U√S` and `√S Vᵀ`.
pub fn aggregate_flexlora<T: Scalar>(contribs: &[ClientContribution<T>], target_rank: usize) -> Result<AggregateResult<T>> {
    let (d, l) = check_update_shapes(contribs)?;
    crate::lora::check_rank(d, l, target_rank)?;
    let ideal = ideal_update(contribs)?;
    let start = Instant::now();
    let svd = truncated_svd(&ideal, target_rank)?;
    let roots: Vec<T> = svd.singular_values.iter().map(|s| s.sqrt()).collect();
    let mut b = svd.u.clone();
    for row in b.as_mut_slice().chunks_mut(target_rank) {
        for (v, &s) in row.iter_mut().zip(&roots) {
            *v *= s;
        }
    }
    let mut a = svd.v.transpose();
    for (row, &s) in a.as_mut_slice().chunks_mut(l).zip(&roots) {
        row.iter_mut().for_each(|v| *v *= s);
    }
    let elapsed = start.elapsed().as_secs_f64();
    let downlink = contribs
        .iter()
        .map(|c| per_client_downlink(c.pair.rank().min(target_rank), d, l))
        .max()
        .unwrap_or(0);
    finish(Method::Flexlora, b, a, ideal, downlink, None, None, elapsed)
}

/// Zero-pads every pair to rank `r_max`: `B` gains zero columns on the
/// right, `A` zero rows at the bottom, so each product is unchanged.
pub fn hetlora_pad<T: Scalar>(contribs: &[ClientContribution<T>], r_max: usize) -> Result<Vec<ClientContribution<T>>> {
    let (d, l) = check_update_shapes(contribs)?;
    crate::lora::check_rank(d, l, r_max)?;
    contribs
        .iter()
        .map(|c| {
            let rank = c.pair.rank();
            if rank > r_max {
                return Err(AggregationError::PadRankTooSmall { target: r_max, rank });
            }
            let b = c.pair.b().pad_zero(d, r_max)?;
            let a = c.pair.a().pad_zero(r_max, l)?;
            Ok(ClientContribution {
                client_id: c.client_id,
                sample_count: c.sample_count,
                pair: LoraPair::new(b, a)?,
            })
        })
        .collect()
}

/// Keeps the leading `rank` columns of `B` and rows of `A`.
pub fn hetlora_truncate<T: Scalar>(pair: &LoraPair<T>, rank: usize) -> Result<LoraPair<T>> {
    if rank == 0 || rank > pair.rank() {
        return Err(AggregationError::TruncateRankTooLarge {
            target: rank,
            rank: pair.rank(),
        });
    }
    if rank == pair.rank() {
        return Ok(pair.clone());
    }
    Ok(LoraPair::new(pair.b().slice_cols(0..rank)?, pair.a().slice_rows(0..rank)?)?)
}

/// HETLoRA: pad to the largest client rank and average. Each client later
/// receives the broadcast truncated to its own rank.
pub fn aggregate_hetlora<T: Scalar>(contribs: &[ClientContribution<T>]) -> Result<AggregateResult<T>> {
    let (d, l) = check_update_shapes(contribs)?;
    let padded = hetlora_pad(contribs, max_rank(contribs))?;
    let (a_bar, b_bar) = average_pairs(&padded)?;
    let ideal = ideal_update(contribs)?;
    let downlink = contribs
        .iter()
        .map(|c| per_client_downlink(c.pair.rank(), d, l))
        .max()
        .unwrap_or(0);
    finish(Method::Hetlora, b_bar, a_bar, ideal, downlink, None, None, 0.0)
}

/// LoRA-FAIR: FedIT averages plus a residual on `B̄` (or `Ā`) solved on the
/// server. Heterogeneous ranks are zero-padded first. A zero step budget,
/// or a zero ideal update, leaves the FedIT result untouched.
pub fn aggregate_lorafair<T: Scalar>(
    contribs: &[ClientContribution<T>],
    solver_cfg: &SolverConfig,
) -> Result<AggregateResult<T>> {
    let (d, l) = check_update_shapes(contribs)?;
    let heterogeneous = contribs.iter().any(|c| c.pair.rank() != contribs[0].pair.rank());
    let padded;
    let homogeneous = if heterogeneous {
        padded = hetlora_pad(contribs, max_rank(contribs))?;
        &padded[..]
    } else {
        contribs
    };
    let (a_bar, b_bar) = average_pairs(homogeneous)?;
    let ideal = ideal_update(contribs)?;
    let downlink = contribs
        .iter()
        .map(|c| per_client_downlink(c.pair.rank(), d, l))
        .max()
        .unwrap_or(0);

    let eps = T::lit(solver_cfg.norm_guard_eps);
    let skip = solver_cfg.max_steps == 0
        || ideal.frobenius_norm() < eps
        || b_bar.matmul(&a_bar)?.frobenius_norm() < eps;
    if skip {
        return finish(Method::LoraFair, b_bar, a_bar, ideal, downlink, None, None, 0.0);
    }

    let start = Instant::now();
    let report = residual::solve(&ideal, &a_bar, &b_bar, solver_cfg)?;
    let elapsed = start.elapsed().as_secs_f64();
    let (b, a) = match solver_cfg.residual_position {
        ResidualPosition::OnB => (b_bar.add(&report.delta)?, a_bar),
        ResidualPosition::OnA => (b_bar, a_bar.add(&report.delta)?),
    };
    finish(Method::LoraFair, b, a, ideal, downlink, None, Some(report), elapsed)
}

/// Everything a strategy may need beyond the contributions themselves.
#[derive(Debug, Clone)]
pub struct AggregationContext<'a, T> {
    pub frozen_a: Option<&'a Matrix<T>>,
    pub target_rank: usize,
    pub solver: SolverConfig,
}

pub fn aggregate<T: Scalar>(
    method: Method,
    contribs: &[ClientContribution<T>],
    ctx: &AggregationContext<'_, T>,
) -> Result<AggregateResult<T>> {
    match method {
        Method::Fedit => aggregate_fedit(contribs),
        Method::FfaLora => {
            let frozen = ctx.frozen_a.ok_or(AggregationError::MissingFrozenA { method })?;
            aggregate_ffa(contribs, frozen)
        }
        Method::Flora => aggregate_flora(contribs),
        Method::Flexlora => aggregate_flexlora(contribs, ctx.target_rank),
        Method::Hetlora => aggregate_hetlora(contribs),
        Method::LoraFair => aggregate_lorafair(contribs, &ctx.solver),
    }
}

/// Floats moved in one round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommCost {
    /// Sum over participating clients.
    pub uplink_floats: usize,
    /// Per client; the largest share when ranks differ.
    pub downlink_floats: usize,
    /// Sum over participating clients.
    pub downlink_total_floats: usize,
}

/// Closed-form communication volume for one round with the given
/// per-client ranks (one entry per participating client).
pub fn comm_cost(method: Method, d: usize, l: usize, ranks: &[usize]) -> CommCost {
    let sum_r: usize = ranks.iter().sum();
    let uplink = match method {
        Method::FfaLora => sum_r * d,
        _ => sum_r * (d + l),
    };
    let per_client: Vec<usize> = ranks
        .iter()
        .map(|&r| match method {
            Method::FfaLora => r * d,
            Method::Flora => sum_r * (d + l),
            _ => r * (d + l),
        })
        .collect();
    CommCost {
        uplink_floats: uplink,
        downlink_floats: per_client.iter().copied().max().unwrap_or(0),
        downlink_total_floats: per_client.iter().sum(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{gaussian_fill, RngSeed};
    use proptest::prelude::*;

    fn random_pair(d: usize, l: usize, r: usize, seed: RngSeed) -> LoraPair<f64> {
        LoraPair::new(
            gaussian_fill(d, r, 1.0, seed.derive(0)).unwrap(),
            gaussian_fill(r, l, 1.0, seed.derive(1)).unwrap(),
        )
        .unwrap()
    }

    fn contribs(d: usize, l: usize, ranks: &[usize], counts: &[usize], seed: u64) -> Vec<ClientContribution<f64>> {
        ranks
            .iter()
            .zip(counts)
            .enumerate()
            .map(|(k, (&r, &n))| ClientContribution {
                client_id: k,
                sample_count: n,
                pair: random_pair(d, l, r, RngSeed(seed).derive(k as u64)),
            })
            .collect()
    }

    #[test]
    fn weight_cases() {
        let c = contribs(4, 4, &[1, 1], &[10, 10], 1);
        assert_eq!(weights(&c).unwrap(), vec![0.5, 0.5]);
        let c = contribs(4, 4, &[1, 1], &[1, 3], 1);
        assert_eq!(weights(&c).unwrap(), vec![0.25, 0.75]);
        let c = contribs(4, 4, &[1, 1, 1], &[7, 11, 13], 1);
        let s: f64 = weights(&c).unwrap().iter().sum();
        assert!((s - 1.0).abs() <= 1e-15);
        assert_eq!(weights::<f64>(&[]), Err(AggregationError::Empty));
        let mut bad = contribs(4, 4, &[1], &[1], 1);
        bad[0].sample_count = 0;
        assert!(matches!(weights(&bad), Err(AggregationError::ZeroSamples { client: 0 })));
    }

    #[test]
    fn average_single_and_identical() {
        let c = contribs(5, 4, &[2], &[9], 3);
        let (a, b) = average_pairs(&c).unwrap();
        assert_eq!(&a, c[0].pair.a());
        assert_eq!(&b, c[0].pair.b());

        let same: Vec<_> = (0..4)
            .map(|k| ClientContribution {
                client_id: k,
                sample_count: 3 + k,
                pair: c[0].pair.clone(),
            })
            .collect();
        let (a, b) = average_pairs(&same).unwrap();
        assert!(a.max_abs_diff(c[0].pair.a()).unwrap() < 1e-15);
        assert!(b.max_abs_diff(c[0].pair.b()).unwrap() < 1e-15);
    }

    #[test]
    fn average_matches_elementwise_mean() {
        let c = contribs(4, 6, &[2, 2, 2], &[5, 5, 5], 4);
        let (a, _) = average_pairs(&c).unwrap();
        for i in 0..2 {
            for j in 0..6 {
                let mean = c.iter().map(|x| x.pair.a()[(i, j)]).sum::<f64>() / 3.0;
                assert!((a[(i, j)] - mean).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut c = contribs(4, 6, &[2, 2], &[5, 5], 4);
        c[1].pair = random_pair(5, 6, 2, RngSeed(9));
        assert!(matches!(
            average_pairs(&c),
            Err(AggregationError::ShapeMismatch { client: 1, .. })
        ));
    }

    #[test]
    fn single_client_has_no_bias() {
        let c = contribs(6, 6, &[2], &[10], 5);
        let r = aggregate_fedit(&c).unwrap();
        assert_eq!(r.ideal_update, r.realized_update);
        assert_eq!(r.bias_frobenius, 0.0);
        assert!(!r.reinit_required);
        assert_eq!(r.downlink_floats, 2 * 12);
    }

    #[test]
    fn fedit_rejects_mixed_ranks() {
        let c = contribs(6, 6, &[1, 2], &[10, 10], 5);
        assert!(matches!(
            aggregate_fedit(&c),
            Err(AggregationError::HeterogeneousRanks { method: Method::Fedit })
        ));
    }

    #[test]
    fn ffa_is_unbiased_and_guards_frozen_a() {
        let frozen = gaussian_fill::<f64>(2, 8, 1.0, RngSeed(1)).unwrap();
        let mut c: Vec<_> = (0..2)
            .map(|k| ClientContribution {
                client_id: k,
                sample_count: 10 + k,
                pair: LoraPair::new(gaussian_fill(8, 2, 1.0, RngSeed(10 + k as u64)).unwrap(), frozen.clone()).unwrap(),
            })
            .collect();
        let r = aggregate_ffa(&c, &frozen).unwrap();
        assert!(r.bias_frobenius <= 1e-12);
        assert_eq!(r.downlink_floats, 16);
        assert_eq!(&r.broadcast_a, &frozen);

        let tampered = frozen.map(|v| v + 1e-9);
        c[1].pair = LoraPair::new(c[1].pair.b().clone(), tampered).unwrap();
        assert!(matches!(
            aggregate_ffa(&c, &frozen),
            Err(AggregationError::FrozenAModified { client: 1 })
        ));
    }

    #[test]
    fn flora_reconstructs_ideal_update() {
        let c = contribs(7, 5, &[1, 2, 3], &[4, 9, 2], 6);
        let r = aggregate_flora(&c).unwrap();
        let fold = r.fold_delta.as_ref().unwrap();
        assert!(fold.distance(&r.ideal_update).unwrap() <= 1e-10 * r.ideal_update.frobenius_norm());
        assert!(r.reinit_required);
        assert_eq!(r.broadcast_b.shape(), (7, 6));
        assert_eq!(r.downlink_floats, 6 * 12);

        let single = contribs(7, 5, &[2], &[4], 6);
        let r1 = aggregate_flora(&single).unwrap();
        assert_eq!(r1.fold_delta.unwrap(), single[0].pair.effective_update());
    }

    #[test]
    fn flexlora_exact_when_rank_fits() {
        let c = contribs(8, 8, &[1, 1], &[3, 5], 7);
        let r = aggregate_flexlora(&c, 2).unwrap();
        assert!(r.bias_frobenius <= 1e-8);
        assert_eq!(r.broadcast_b.shape(), (8, 2));
    }

    #[test]
    fn flexlora_loses_information_past_rank() {
        let c = contribs(20, 20, &[8, 8], &[1, 1], 8);
        let r = aggregate_flexlora(&c, 8).unwrap();
        assert!(r.bias_frobenius > 1e-3);
    }

    #[test]
    fn pad_and_truncate() {
        let c = contribs(10, 9, &[2, 4, 4, 6, 6, 8], &[1; 6], 9);
        let padded = hetlora_pad(&c, 8).unwrap();
        for (orig, p) in c.iter().zip(&padded) {
            assert_eq!(p.pair.rank(), 8);
            assert_eq!(p.pair.effective_update(), orig.pair.effective_update());
            assert_eq!(hetlora_truncate(&p.pair, orig.pair.rank()).unwrap(), orig.pair);
        }
        let same = hetlora_pad(&c[5..], 8).unwrap();
        assert_eq!(same[0], c[5]);
        assert!(matches!(
            hetlora_pad(&c, 6),
            Err(AggregationError::PadRankTooSmall { .. })
        ));
        assert!(hetlora_truncate(&c[0].pair, 3).is_err());
        assert_eq!(hetlora_truncate(&c[0].pair, 2).unwrap(), c[0].pair);
    }

    #[test]
    fn lorafair_zero_budget_is_fedit() {
        let c = contribs(8, 8, &[2, 2, 2], &[3, 4, 5], 10);
        let cfg = SolverConfig {
            max_steps: 0,
            ..SolverConfig::default()
        };
        let fair = aggregate_lorafair(&c, &cfg).unwrap();
        let fedit = aggregate_fedit(&c).unwrap();
        assert_eq!(fair.broadcast_a, fedit.broadcast_a);
        assert_eq!(fair.broadcast_b, fedit.broadcast_b);
        assert_eq!(fair.realized_update, fedit.realized_update);
        assert!(fair.solver.is_none());
    }

    #[test]
    fn lorafair_single_client_residual_stays_small() {
        let c = contribs(8, 8, &[2], &[3], 11);
        let r = aggregate_lorafair(&c, &SolverConfig::default()).unwrap();
        let rep = r.solver.unwrap();
        assert!(rep.final_delta_norm < 1e-6, "{}", rep.final_delta_norm);
        assert!((r.bias_cosine - 1.0).abs() < 1e-9);
    }

    #[test]
    fn lorafair_improves_on_fedit() {
        for seed in 0..5 {
            let c = contribs(8, 8, &[2, 2, 2], &[3, 4, 5], 20 + seed);
            let fair = aggregate_lorafair(&c, &SolverConfig::default()).unwrap();
            let fedit = aggregate_fedit(&c).unwrap();
            assert!(fair.bias_cosine >= fedit.bias_cosine - 1e-9);
            assert!(fair.solve_seconds > 0.0);
        }
    }

    #[test]
    fn lorafair_handles_mixed_ranks() {
        let c = contribs(10, 9, &[2, 4, 4, 6, 6, 8], &[5; 6], 12);
        let r = aggregate_lorafair(&c, &SolverConfig::default()).unwrap();
        assert_eq!(r.broadcast_b.shape(), (10, 8));
        assert_eq!(r.downlink_floats, 8 * 19);
    }

    #[test]
    fn comm_cost_cases() {
        let ranks = [2; 4];
        assert_eq!(comm_cost(Method::Fedit, 8, 8, &ranks).downlink_floats, 32);
        assert_eq!(comm_cost(Method::Flora, 8, 8, &ranks).downlink_floats, 128);
        assert_eq!(comm_cost(Method::FfaLora, 8, 8, &ranks).downlink_floats, 16);
        assert_eq!(comm_cost(Method::FfaLora, 8, 8, &ranks).uplink_floats, 64);
        assert_eq!(comm_cost(Method::LoraFair, 8, 8, &ranks).uplink_floats, 128);
        let het = comm_cost(Method::Hetlora, 10, 32, &[2, 4, 8]);
        assert_eq!(het.downlink_floats, 8 * 42);
        assert_eq!(het.downlink_total_floats, 14 * 42);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.name()));
        }
        assert!("fedavg".parse::<Method>().is_err());
    }

    proptest! {
        #[test]
        fn scaling_counts_is_bit_identical(seed in 0u64..200, c in 2usize..50) {
            let base = contribs(6, 5, &[2, 2, 2], &[3, 8, 13], seed);
            let scaled: Vec<_> = base
                .iter()
                .map(|x| ClientContribution { sample_count: x.sample_count * c, ..x.clone() })
                .collect();
            for method in [Method::Fedit, Method::Flora, Method::Flexlora, Method::LoraFair] {
                let ctx = AggregationContext { frozen_a: None, target_rank: 2, solver: SolverConfig::default() };
                let a = aggregate(method, &base, &ctx).unwrap();
                let b = aggregate(method, &scaled, &ctx).unwrap();
                prop_assert_eq!(&a.broadcast_a, &b.broadcast_a);
                prop_assert_eq!(&a.broadcast_b, &b.broadcast_b);
                prop_assert_eq!(&a.ideal_update, &b.ideal_update);
                prop_assert_eq!(a.bias_cosine.to_bits(), b.bias_cosine.to_bits());
            }
        }
    }
}
