//! Adversarial Monte Carlo meta-learning of equivariant regression procedures.
//!
//! The crate is organized around the life cycle of a learned estimator:
//!
//! * [`autodiff`]: tensors, the differentiation tape and Adam.
//! * [`net`]: the permutation- and scale-equivariant prediction network.
//! * [`priors`]: feature priors, trainable regression-function generators
//!   and fixed evaluation priors.
//! * [`trainer`]: alternating descent (estimator) / ascent (prior) training.
//! * [`eval`]: Monte Carlo risk estimation, OLS / lasso baselines and
//!   non-negative least squares stacking.

pub mod autodiff;
pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod linalg;
pub mod net;
pub mod priors;
pub mod rng;
pub mod trainer;
pub mod verify;

pub use autodiff::{AdamConfig, AdamState, Tape, Tensor, Var};
pub use error::{Error, Result};
pub use eval::{Estimator, RiskEstimate};
pub use net::{ArchitectureConfig, Dataset, EstimatorParams, ZStatistic};
pub use priors::{PriorGeneratorParams, SampledDistribution, Setting};
pub use trainer::{TrainConfig, TrainLog};
