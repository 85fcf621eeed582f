//! Scenario-generation interval prediction.
//!
//! A conditional WGAN-GP generates day-ahead price scenarios at a chosen
//! noise scale σ; scenario sets become prediction intervals, and repeated
//! interval predictions are scored per sample (ECP/EAW) and per repeat
//! (ECPAS/EAWAPI).
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`). The aliases
//! below fix the scalar for the common cases.

// `!(x > y)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod gan;
pub mod harness;
pub mod intervals;
pub mod metrics;
pub mod numerics;
mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = numerics::Tensor2<f64>;
pub type Tensor32 = numerics::Tensor2<f32>;
pub type Mlp64 = numerics::MlpParams<f64>;
pub type Mlp32 = numerics::MlpParams<f32>;
pub type PriceSeries64 = data::PriceSeries<f64>;
pub type PriceSeries32 = data::PriceSeries<f32>;
pub type SampleSet64 = data::SampleSet<f64>;
pub type SampleSet32 = data::SampleSet<f32>;
pub type Checkpoint64 = gan::ModelCheckpoint<f64>;
pub type Checkpoint32 = gan::ModelCheckpoint<f32>;
pub type ScenarioSet64 = intervals::ScenarioSet<f64>;
pub type ScenarioSet32 = intervals::ScenarioSet<f32>;
pub type IntervalSeries64 = intervals::IntervalSeries<f64>;
pub type IntervalSeries32 = intervals::IntervalSeries<f32>;
pub type CoverageMatrix64 = metrics::CoverageMatrix<f64>;
pub type CoverageMatrix32 = metrics::CoverageMatrix<f32>;
