//! Survival models trained under χ²-distributionally robust optimization, with the
//! accuracy and fairness metrics used to evaluate them.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the aliases below fix
//! `f64` for the common case.

pub mod data;
pub mod dro;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod scalar;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Dataset = data::SurvivalDataset<f64>;
pub type Grid = data::TimeGrid<f64>;
pub type Params = nn::ModelParams<f64>;
pub type Loss = losses::LossSpec<f64>;
pub type DeepHit = losses::DeepHitConfig<f64>;
pub type Prediction = metrics::SurvivalPrediction<f64>;
pub type Outcome = train::TrainOutcome<f64>;
