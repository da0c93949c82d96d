//! Distributed gradient descent over a slotted-ALOHA uplink.
//!
//! A master node holds a logistic-regression model and `M` workers hold
//! private shards. Every iteration the master broadcasts the parameters,
//! workers compute local gradients and queue them behind their background
//! traffic, and the uplink is resolved slot by slot with binary exponential
//! backoff. The resulting per-iteration latency feeds a cost-aware stopping
//! rule that trades final loss against cumulative cost.
//!
//! The numerical parts are generic over the scalar type (see [`scalar`]);
//! the aliases below fix the common `f64` instantiation.

pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod model;
pub mod netsim;
pub mod scalar;
pub mod solver;
pub mod stopping;

pub use config::{CostNormalizer, DatasetSpec, SimConfig, SyncMode};
pub use error::{Error, Result};
pub use scalar::{CostValue, Scalar};

/// Model parameters in double precision.
pub type Params = model::ParamVector<f64>;
/// Single-precision model parameters.
pub type Params32 = model::ParamVector<f32>;
pub type Sample = model::LabeledSample<f64>;
pub type Shard = model::WorkerShard<f64>;
pub type Gradient = model::GradientVector<f64>;
pub type Record = solver::IterationRecord<f64>;
pub type Latency = solver::LatencyBreakdown<f64>;
pub type RunOutput = solver::RunOutput<f64>;
pub type StopReport = stopping::Prop2Report<f64>;
/// Exact rational costs, used where stopping decisions must not depend on rounding.
pub type ExactCost = num_rational::Ratio<i64>;
