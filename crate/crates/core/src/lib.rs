//! Model-X lower confidence bounds for variable importance: the minimum-MSE
//! gap and the mean absolute conditional mean gap, with Monte Carlo and
//! co-sufficient variants, covariate-model simulators, working-regression
//! fitters and a replicate harness.

pub mod cli;
pub mod confidence;
pub mod cosufficient;
pub mod covariate;
pub mod data;
pub mod error;
pub mod macm;
pub mod mmse;
pub mod normal;
pub mod regression;
pub mod report;
pub mod rng;
pub mod sim;

pub use confidence::{ConfidenceLevel, Estimand, LcbReport, MomentPair};
pub use data::{split, Dataset, RowMatrix, SplitDataset};
pub use error::{FloodgateError, Result};
