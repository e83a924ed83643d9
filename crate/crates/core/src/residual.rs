//! Server-side residual refinement for LoRA-FAIR.
//!
//! Given the ideal update `ΔW` and the averaged factors `(B̄, Ā)`, find a
//! residual `ΔB` minimizing
//!
//! ```text
//! (1 − cos(ΔW, (B̄ + ΔB)·Ā)) + λ·‖ΔB‖_F
//! ```
//!
//! by gradient descent from `ΔB = 0` with step halving, so the result is
//! never worse than plain averaging on this objective. The residual may also
//! be placed on `A` instead, which is the same problem transposed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::{cosine_similarity_flat, solve_spd, thin_svd, Matrix, MatrixError};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("invalid solver config: {0}")]
    InvalidConfig(String),
    #[error("degenerate input: {what} norm {norm:e} below {floor:e}")]
    Degenerate { what: &'static str, norm: f64, floor: f64 },
    #[error("solver diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error("averaged A is rank deficient (smallest singular value {smallest:e})")]
    RankDeficient { smallest: f64 },
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

pub type Result<T> = std::result::Result<T, SolverError>;

/// Which averaged factor receives the residual.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualPosition {
    #[default]
    OnB,
    OnA,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizerNorm {
    /// `λ‖ΔB‖_F`
    #[default]
    Frobenius,
    /// `λ‖ΔB‖_F²`
    SquaredFrobenius,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub learning_rate: f64,
    pub max_steps: usize,
    pub lambda: f64,
    pub grad_tol: f64,
    pub norm_guard_eps: f64,
    pub residual_position: ResidualPosition,
    pub regularizer: RegularizerNorm,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            max_steps: 500,
            lambda: 0.01,
            grad_tol: 1e-7,
            norm_guard_eps: 1e-12,
            residual_position: ResidualPosition::OnB,
            regularizer: RegularizerNorm::Frobenius,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SolverError::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.max_steps == 0 {
            return bad("max_steps must be at least 1");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be nonnegative");
        }
        if self.grad_tol.is_nan() || self.grad_tol <= 0.0 {
            return bad("grad_tol must be positive");
        }
        if self.norm_guard_eps.is_nan() || self.norm_guard_eps <= 0.0 {
            return bad("norm_guard_eps must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverReport<T> {
    /// `ΔB` (d×r), or `ΔA` (r×l) when the residual sits on `A`.
    pub delta: Matrix<T>,
    pub steps_taken: usize,
    pub initial_cosine: T,
    pub final_cosine: T,
    pub final_delta_norm: T,
    pub initial_loss: T,
    pub final_loss: T,
    /// `cos(B̄, B̄ + ΔB)` (or the `A` analogue).
    pub regularizer_similarity: T,
    /// Loss after every accepted step, starting with the initial loss.
    pub loss_trace: Vec<T>,
}

/// Dense-form objective `(1 − cos(ΔW, (B̄+ΔB)Ā)) + λ‖ΔB‖_F`.
pub fn objective<T: Scalar>(
    delta_b: &Matrix<T>,
    dw: &Matrix<T>,
    a_bar: &Matrix<T>,
    b_bar: &Matrix<T>,
    lambda: T,
) -> Result<T> {
    objective_with(delta_b, dw, a_bar, b_bar, lambda, RegularizerNorm::Frobenius)
}

pub fn objective_with<T: Scalar>(
    delta_b: &Matrix<T>,
    dw: &Matrix<T>,
    a_bar: &Matrix<T>,
    b_bar: &Matrix<T>,
    lambda: T,
    norm: RegularizerNorm,
) -> Result<T> {
    let m = b_bar.add(delta_b)?.matmul(a_bar)?;
    let cos = cosine_similarity_flat(dw, &m)?;
    Ok(T::one() - cos + lambda * regularizer(delta_b.frobenius_norm(), norm))
}

/// Analytic gradient of [`objective`] with respect to `ΔB`, in dense form.
pub fn gradient<T: Scalar>(
    delta_b: &Matrix<T>,
    dw: &Matrix<T>,
    a_bar: &Matrix<T>,
    b_bar: &Matrix<T>,
    lambda: T,
    norm_guard_eps: T,
) -> Result<Matrix<T>> {
    gradient_with(delta_b, dw, a_bar, b_bar, lambda, norm_guard_eps, RegularizerNorm::Frobenius)
}

pub fn gradient_with<T: Scalar>(
    delta_b: &Matrix<T>,
    dw: &Matrix<T>,
    a_bar: &Matrix<T>,
    b_bar: &Matrix<T>,
    lambda: T,
    norm_guard_eps: T,
    norm: RegularizerNorm,
) -> Result<Matrix<T>> {
    let m = b_bar.add(delta_b)?.matmul(a_bar)?;
    if m.shape() != dw.shape() {
        return Err(MatrixError::DimensionMismatch {
            op: "gradient",
            left: dw.shape(),
            right: m.shape(),
        }
        .into());
    }
    let nu = guarded_norm(&m, "(B̄+ΔB)Ā", norm_guard_eps)?;
    let nv = guarded_norm(dw, "ΔW", norm_guard_eps)?;
    let uv = m.dot(dw)?;
    // d cos / d M
    let coef_v = T::one() / (nu * nv);
    let coef_u = uv / (nu * nu * nu * nv);
    let dcos = dw.zip_with(&m, "gradient", |v, u| v * coef_v - u * coef_u)?;
    let mut g = dcos.matmul_t(a_bar)?.scale(-T::one());
    add_regularizer_grad(&mut g, delta_b, lambda, norm_guard_eps, norm);
    Ok(g)
}

fn regularizer<T: Scalar>(n: T, norm: RegularizerNorm) -> T {
    match norm {
        RegularizerNorm::Frobenius => n,
        RegularizerNorm::SquaredFrobenius => n * n,
    }
}

fn add_regularizer_grad<T: Scalar>(g: &mut Matrix<T>, delta: &Matrix<T>, lambda: T, eps: T, norm: RegularizerNorm) {
    if lambda == T::zero() {
        return;
    }
    let c = match norm {
        RegularizerNorm::Frobenius => lambda / delta.frobenius_norm().max(eps),
        RegularizerNorm::SquaredFrobenius => lambda * T::lit(2.0),
    };
    g.axpy_assign(c, delta);
}

fn guarded_norm<T: Scalar>(m: &Matrix<T>, what: &'static str, eps: T) -> Result<T> {
    let n = m.frobenius_norm();
    if n < eps {
        return Err(SolverError::Degenerate {
            what,
            norm: n.to_f64_lossy(),
            floor: eps.to_f64_lossy(),
        });
    }
    Ok(n)
}

/// Precomputed Gram form of the objective. With `C = ΔW·Āᵀ` and
/// `G = Ā·Āᵀ`, every quantity lives in d×r space:
/// `⟨M, ΔW⟩ = ⟨B', C⟩` and `‖M‖² = ⟨B'G, B'⟩` for `B' = B̄ + ΔB`.
struct GramProblem<'a, T> {
    b_bar: &'a Matrix<T>,
    c: Matrix<T>,
    g: Matrix<T>,
    dw_norm: T,
    lambda: T,
    eps: T,
    norm: RegularizerNorm,
}

impl<'a, T: Scalar> GramProblem<'a, T> {
    fn new(dw: &Matrix<T>, a_bar: &Matrix<T>, b_bar: &'a Matrix<T>, cfg: &SolverConfig) -> Result<Self> {
        let eps = T::lit(cfg.norm_guard_eps);
        let dw_norm = guarded_norm(dw, "ΔW", eps)?;
        if b_bar.cols() != a_bar.rows() || b_bar.rows() != dw.rows() || a_bar.cols() != dw.cols() {
            return Err(MatrixError::DimensionMismatch {
                op: "residual solve",
                left: dw.shape(),
                right: (b_bar.rows(), a_bar.cols()),
            }
            .into());
        }
        Ok(Self {
            b_bar,
            c: dw.matmul_t(a_bar)?,
            g: a_bar.matmul_t(a_bar)?,
            dw_norm,
            lambda: T::lit(cfg.lambda),
            eps,
            norm: cfg.regularizer,
        })
    }

    fn shifted(&self, delta: &Matrix<T>) -> Matrix<T> {
        let mut b = self.b_bar.clone();
        b.axpy_assign(T::one(), delta);
        b
    }

    fn loss(&self, delta: &Matrix<T>) -> Result<T> {
        let bp = self.shifted(delta);
        let bg = bp.matmul(&self.g)?;
        let u2 = bg.dot(&bp)?.max(T::zero());
        let nu = u2.sqrt();
        if nu < self.eps {
            return Err(SolverError::Degenerate {
                what: "(B̄+ΔB)Ā",
                norm: nu.to_f64_lossy(),
                floor: self.eps.to_f64_lossy(),
            });
        }
        let cos = bp.dot(&self.c)? / (nu * self.dw_norm);
        Ok(T::one() - cos + self.lambda * regularizer(delta.frobenius_norm(), self.norm))
    }

    fn gradient(&self, delta: &Matrix<T>) -> Result<Matrix<T>> {
        let bp = self.shifted(delta);
        let bg = bp.matmul(&self.g)?;
        let u2 = bg.dot(&bp)?.max(T::zero());
        let nu = u2.sqrt();
        let inner = bp.dot(&self.c)?;
        let coef_c = -T::one() / (nu * self.dw_norm);
        let coef_bg = inner / (nu * u2 * self.dw_norm);
        let mut grad = bg.scale(coef_bg);
        grad.axpy_assign(coef_c, &self.c);
        add_regularizer_grad(&mut grad, delta, self.lambda, self.eps, self.norm);
        Ok(grad)
    }
}

/// Longest run of rejected halvings before the current point is declared optimal.
const MAX_HALVINGS: usize = 60;

/// Minimizes the residual objective. `a_bar`/`b_bar` are always the averaged
/// factors of the `ΔW ≈ B·A` factorization; `cfg.residual_position` selects
/// which one is corrected.
pub fn solve<T: Scalar>(
    dw: &Matrix<T>,
    a_bar: &Matrix<T>,
    b_bar: &Matrix<T>,
    cfg: &SolverConfig,
) -> Result<SolverReport<T>> {
    cfg.validate()?;
    match cfg.residual_position {
        ResidualPosition::OnB => solve_on_b(dw, a_bar, b_bar, cfg),
        ResidualPosition::OnA => {
            // (B̄(Ā+ΔA))ᵀ = (Āᵀ + ΔAᵀ)B̄ᵀ: the same problem with roles swapped.
            let dwt = dw.transpose();
            let at = b_bar.transpose();
            let bt = a_bar.transpose();
            let r = solve_on_b(&dwt, &at, &bt, cfg)?;
            Ok(SolverReport {
                delta: r.delta.transpose(),
                ..r
            })
        }
    }
}

fn solve_on_b<T: Scalar>(
    dw: &Matrix<T>,
    a_bar: &Matrix<T>,
    b_bar: &Matrix<T>,
    cfg: &SolverConfig,
) -> Result<SolverReport<T>> {
    let problem = GramProblem::new(dw, a_bar, b_bar, cfg)?;
    let mut delta = Matrix::zeros(b_bar.rows(), b_bar.cols());
    let initial_loss = problem.loss(&delta)?;
    let mut current = initial_loss;
    let mut trace = vec![current];
    let mut lr = T::lit(cfg.learning_rate);
    let grad_tol = T::lit(cfg.grad_tol);
    let mut steps = 0;

    'outer: while steps < cfg.max_steps {
        let g = problem.gradient(&delta)?;
        if g.frobenius_norm() <= grad_tol {
            break;
        }
        let mut halvings = 0;
        loop {
            let mut candidate = delta.clone();
            candidate.axpy_assign(-lr, &g);
            let loss = match problem.loss(&candidate) {
                Ok(l) => l,
                Err(SolverError::Degenerate { .. }) => T::infinity(),
                Err(e) => return Err(e),
            };
            if loss.is_nan() {
                return Err(SolverError::Diverged {
                    step: steps,
                    loss: f64::NAN,
                });
            }
            if loss < current {
                delta = candidate;
                current = loss;
                trace.push(loss);
                steps += 1;
                lr *= T::lit(2.0);
                break;
            }
            halvings += 1;
            if halvings > MAX_HALVINGS {
                break 'outer;
            }
            lr *= T::lit(0.5);
        }
    }

    if !current.is_finite() {
        return Err(SolverError::Diverged {
            step: steps,
            loss: current.to_f64_lossy(),
        });
    }
    let b_new = b_bar.add(&delta)?;
    let final_cosine = cosine_similarity_flat(dw, &b_new.matmul(a_bar)?)?;
    let initial_cosine = cosine_similarity_flat(dw, &b_bar.matmul(a_bar)?)?;
    let regularizer_similarity = cosine_similarity_flat(b_bar, &b_new).unwrap_or_else(|_| T::one());
    Ok(SolverReport {
        final_delta_norm: delta.frobenius_norm(),
        delta,
        steps_taken: steps,
        initial_cosine,
        final_cosine,
        initial_loss,
        final_loss: current,
        regularizer_similarity,
        loss_trace: trace,
    })
}

/// Closed-form optimum of the unregularized problem:
/// `X* = ΔW·Āᵀ(ĀĀᵀ)⁻¹` and `cos* = ‖X*Ā‖_F / ‖ΔW‖_F`, the largest cosine
/// any matrix of the form `X·Ā` can reach.
pub fn projection_oracle<T: Scalar>(dw: &Matrix<T>, a_bar: &Matrix<T>) -> Result<(Matrix<T>, T)> {
    let smallest = thin_svd(a_bar)?
        .singular_values
        .last()
        .copied()
        .unwrap_or_else(T::zero);
    if a_bar.rows() > a_bar.cols() || smallest <= T::lit(1e-8) {
        return Err(SolverError::RankDeficient {
            smallest: smallest.to_f64_lossy(),
        });
    }
    let gram = a_bar.matmul_t(a_bar)?;
    // (ĀĀᵀ) Y = Ā ΔWᵀ  ⇒  X* = Yᵀ
    let y = solve_spd(&gram, &a_bar.matmul_t(dw)?)?;
    let x_star = y.transpose();
    let dw_norm = dw.frobenius_norm();
    if dw_norm < T::lit(crate::matrix::DEGENERATE_NORM) {
        return Err(SolverError::Degenerate {
            what: "ΔW",
            norm: dw_norm.to_f64_lossy(),
            floor: crate::matrix::DEGENERATE_NORM,
        });
    }
    let cos_star = x_star.matmul(a_bar)?.frobenius_norm() / dw_norm;
    Ok((x_star, cos_star))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{gaussian_fill, RngSeed};

    struct Instance {
        dw: Matrix<f64>,
        a_bar: Matrix<f64>,
        b_bar: Matrix<f64>,
    }

    /// K=3 clients, d=l=8, r=2, uniform weights.
    fn instance(seed: u64) -> Instance {
        let s = RngSeed(seed);
        let pairs: Vec<_> = (0..3)
            .map(|k| {
                (
                    gaussian_fill::<f64>(8, 2, 1.0, s.derive2(k, 0)).unwrap(),
                    gaussian_fill::<f64>(2, 8, 1.0, s.derive2(k, 1)).unwrap(),
                )
            })
            .collect();
        let third = 1.0 / 3.0;
        let mut dw = Matrix::zeros(8, 8);
        let mut a_bar = Matrix::zeros(2, 8);
        let mut b_bar = Matrix::zeros(8, 2);
        for (b, a) in &pairs {
            dw.axpy_assign(third, &b.matmul(a).unwrap());
            a_bar.axpy_assign(third, a);
            b_bar.axpy_assign(third, b);
        }
        Instance { dw, a_bar, b_bar }
    }

    #[test]
    fn zero_loss_when_already_exact() {
        let b = gaussian_fill::<f64>(5, 2, 1.0, RngSeed(1)).unwrap();
        let a = gaussian_fill::<f64>(2, 6, 1.0, RngSeed(2)).unwrap();
        let dw = b.matmul(&a).unwrap();
        let loss = objective(&Matrix::zeros(5, 2), &dw, &a, &b, 0.01).unwrap();
        assert!(loss.abs() < 1e-12);
    }

    #[test]
    fn zero_loss_at_projection() {
        let a = gaussian_fill::<f64>(2, 6, 1.0, RngSeed(2)).unwrap();
        let x0 = gaussian_fill::<f64>(5, 2, 1.0, RngSeed(3)).unwrap();
        let dw = x0.matmul(&a).unwrap();
        let b_bar = gaussian_fill::<f64>(5, 2, 1.0, RngSeed(4)).unwrap();
        let (x_star, cos_star) = projection_oracle(&dw, &a).unwrap();
        assert!((cos_star - 1.0).abs() < 1e-10);
        let delta = x_star.sub(&b_bar).unwrap();
        assert!(objective(&delta, &dw, &a, &b_bar, 0.0).unwrap().abs() < 1e-12);
    }

    #[test]
    fn objective_matches_composition() {
        let inst = instance(5);
        let delta = gaussian_fill::<f64>(8, 2, 0.1, RngSeed(6)).unwrap();
        let lambda = 0.03;
        let got = objective(&delta, &inst.dw, &inst.a_bar, &inst.b_bar, lambda).unwrap();
        let m = inst.b_bar.add(&delta).unwrap().matmul(&inst.a_bar).unwrap();
        let cos = inst.dw.dot(&m).unwrap() / (inst.dw.frobenius_norm() * m.frobenius_norm());
        let expected = 1.0 - cos + lambda * delta.frobenius_norm();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn gram_form_matches_dense_form() {
        let inst = instance(8);
        let delta = gaussian_fill::<f64>(8, 2, 0.1, RngSeed(9)).unwrap();
        for norm in [RegularizerNorm::Frobenius, RegularizerNorm::SquaredFrobenius] {
            let cfg = SolverConfig {
                lambda: 0.02,
                regularizer: norm,
                ..SolverConfig::default()
            };
            let p = GramProblem::new(&inst.dw, &inst.a_bar, &inst.b_bar, &cfg).unwrap();
            let dense = objective_with(&delta, &inst.dw, &inst.a_bar, &inst.b_bar, 0.02, norm).unwrap();
            assert!((p.loss(&delta).unwrap() - dense).abs() < 1e-13);
            let gd = gradient_with(&delta, &inst.dw, &inst.a_bar, &inst.b_bar, 0.02, 1e-12, norm).unwrap();
            assert!(p.gradient(&delta).unwrap().max_abs_diff(&gd).unwrap() < 1e-12);
        }
    }

    #[test]
    fn gradient_vanishes_at_cosine_maximum() {
        let b = gaussian_fill::<f64>(5, 2, 1.0, RngSeed(1)).unwrap();
        let a = gaussian_fill::<f64>(2, 6, 1.0, RngSeed(2)).unwrap();
        let dw = b.matmul(&a).unwrap();
        let g = gradient(&Matrix::zeros(5, 2), &dw, &a, &b, 0.0, 1e-12).unwrap();
        assert!(g.frobenius_norm() < 1e-10);
    }

    #[test]
    fn gradient_vanishes_at_projection_point() {
        let inst = instance(12);
        let (x_star, _) = projection_oracle(&inst.dw, &inst.a_bar).unwrap();
        let delta = x_star.sub(&inst.b_bar).unwrap();
        let g = gradient(&delta, &inst.dw, &inst.a_bar, &inst.b_bar, 0.0, 1e-12).unwrap();
        // Scaling direction: ⟨g, B̄+ΔB⟩ ≈ 0.
        let radial = g.dot(&x_star).unwrap() / x_star.frobenius_norm();
        assert!(radial.abs() < 1e-6, "{radial}");
        assert!(g.frobenius_norm() < 1e-6);
    }

    #[test]
    fn solver_reaches_projection_optimum() {
        for seed in 0..5 {
            let inst = instance(100 + seed);
            let cfg = SolverConfig {
                lambda: 0.0,
                ..SolverConfig::default()
            };
            let r = solve(&inst.dw, &inst.a_bar, &inst.b_bar, &cfg).unwrap();
            let (_, cos_star) = projection_oracle(&inst.dw, &inst.a_bar).unwrap();
            assert!(r.final_cosine <= cos_star + 1e-9);
            assert!((cos_star - r.final_cosine).abs() < 1e-3, "{} vs {}", r.final_cosine, cos_star);
            assert!(r.final_cosine >= r.initial_cosine - 1e-9);
            assert!(r.loss_trace.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn larger_lambda_never_grows_the_residual() {
        for seed in 0..5 {
            let inst = instance(200 + seed);
            let norms: Vec<f64> = [0.0, 0.005, 0.01, 0.02]
                .iter()
                .map(|&lambda| {
                    let cfg = SolverConfig {
                        lambda,
                        ..SolverConfig::default()
                    };
                    solve(&inst.dw, &inst.a_bar, &inst.b_bar, &cfg).unwrap().final_delta_norm
                })
                .collect();
            assert!(norms.windows(2).all(|w| w[1] <= w[0] + 1e-9), "{norms:?}");
        }
    }

    #[test]
    fn single_step_budget() {
        let inst = instance(3);
        let cfg = SolverConfig {
            max_steps: 1,
            ..SolverConfig::default()
        };
        let r = solve(&inst.dw, &inst.a_bar, &inst.b_bar, &cfg).unwrap();
        assert!(r.steps_taken <= 1);
        if r.steps_taken == 0 {
            assert_eq!(r.final_delta_norm, 0.0);
        } else {
            assert!(r.final_loss < r.initial_loss);
        }
        let zero = SolverConfig {
            max_steps: 0,
            ..SolverConfig::default()
        };
        assert!(matches!(
            solve(&inst.dw, &inst.a_bar, &inst.b_bar, &zero),
            Err(SolverError::InvalidConfig(_))
        ));
    }

    #[test]
    fn positions_are_transposes() {
        let inst = instance(21);
        let on_b = solve(&inst.dw, &inst.a_bar, &inst.b_bar, &SolverConfig::default()).unwrap();
        let cfg_a = SolverConfig {
            residual_position: ResidualPosition::OnA,
            ..SolverConfig::default()
        };
        let on_a = solve(
            &inst.dw.transpose(),
            &inst.b_bar.transpose(),
            &inst.a_bar.transpose(),
            &cfg_a,
        )
        .unwrap();
        assert!(on_a.delta.transpose().max_abs_diff(&on_b.delta).unwrap() <= 1e-8);
    }

    #[test]
    fn on_a_delta_has_a_shape() {
        let inst = instance(22);
        let cfg = SolverConfig {
            residual_position: ResidualPosition::OnA,
            ..SolverConfig::default()
        };
        let r = solve(&inst.dw, &inst.a_bar, &inst.b_bar, &cfg).unwrap();
        assert_eq!(r.delta.shape(), inst.a_bar.shape());
        let m = inst.b_bar.matmul(&inst.a_bar.add(&r.delta).unwrap()).unwrap();
        let cos = cosine_similarity_flat(&inst.dw, &m).unwrap();
        assert!((cos - r.final_cosine).abs() < 1e-12);
    }

    #[test]
    fn oracle_detects_unreachable_target() {
        // Ā spans the first two coordinates; ΔW lives on the last two.
        let a = Matrix::from_rows(&[[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]]).unwrap();
        let mut dw = vec![0.0; 12];
        dw[2] = 1.0;
        dw[7] = -2.0;
        dw[11] = 0.5;
        let dw = Matrix::from_vec(3, 4, dw).unwrap();
        let (_, cos_star) = projection_oracle(&dw, &a).unwrap();
        assert!(cos_star <= 1e-10);
    }

    #[test]
    fn oracle_rejects_rank_deficient() {
        let a = Matrix::from_rows(&[[1.0, 2.0, 3.0], [2.0, 4.0, 6.0]]).unwrap();
        let dw = Matrix::<f64>::identity(3);
        assert!(matches!(
            projection_oracle(&dw, &a),
            Err(SolverError::RankDeficient { .. })
        ));
    }

    #[test]
    fn degenerate_target_is_rejected() {
        let inst = instance(2);
        let z = Matrix::zeros(8, 8);
        assert!(matches!(
            solve(&z, &inst.a_bar, &inst.b_bar, &SolverConfig::default()),
            Err(SolverError::Degenerate { .. })
        ));
    }
}
