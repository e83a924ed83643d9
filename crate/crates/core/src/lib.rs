//! Federated LoRA fine-tuning simulator.
//!
//! The numeric core ([`matrix`], [`lora`], [`aggregation`], [`residual`]) is
//! generic over [`Scalar`] (`f32` or `f64`). The simulation layers
//! ([`fedsim`], [`metrics`], [`config`], [`presets`]) run in `f64`; the
//! aliases below name the concrete types they use.

pub mod aggregation;
pub mod config;
pub mod fedsim;
pub mod lora;
pub mod matrix;
pub mod metrics;
pub mod presets;
pub mod residual;
pub mod scalar;

pub use scalar::Scalar;

pub type Mat = matrix::Matrix<f64>;
pub type Mat32 = matrix::Matrix<f32>;
pub type Pair = lora::LoraPair<f64>;
pub type Pair32 = lora::LoraPair<f32>;
pub type Contribution = aggregation::ClientContribution<f64>;
pub type Aggregate = aggregation::AggregateResult<f64>;
pub type Report = residual::SolverReport<f64>;
