//! Alternating descent (estimator) / ascent (prior) training.

mod config;
mod engine;
mod mixture;
mod state;

pub use config::{TrainConfig, TrainLog, TrainRecord};
pub use engine::{BatchKey, BatchResult, Phase, Player, Trainer};
pub use mixture::MixturePrior;
pub use state::{AmcTrainer, TRAINER_KIND};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::Result;
use crate::eval::MeanEstimator;
use crate::net::{forward, EstimatorParams, NetWeights, Parameterized};
use crate::priors::{sample_dataset, DatasetSample, PriorGeneratorParams};
use crate::rng::Rng;

/// An estimator whose predictions are differentiable in its parameters.
pub trait TrainableEstimator: Parameterized + Sync {
    /// Predictions at the rows of `x0`, with `params` bound in
    /// `named_params` order.
    fn forward<'t>(&self, params: &[Var<'t>], x: &Tensor, y: Var<'t>, x0: &Tensor) -> Result<Var<'t>>;
}

impl TrainableEstimator for EstimatorParams {
    fn forward<'t>(&self, params: &[Var<'t>], x: &Tensor, y: Var<'t>, x0: &Tensor) -> Result<Var<'t>> {
        let w = NetWeights::assemble(&self.config, params.iter().copied())?;
        forward(&self.config, &w, x, y, x0)
    }
}

impl Parameterized for MeanEstimator {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        Vec::new()
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        Vec::new()
    }
}

impl TrainableEstimator for MeanEstimator {
    fn forward<'t>(&self, _params: &[Var<'t>], _x: &Tensor, y: Var<'t>, x0: &Tensor) -> Result<Var<'t>> {
        y.mean().expand(&[x0.shape()[0]])
    }
}

/// One simulated dataset, optionally weighted by a differentiable
/// mixture weight.
pub struct WeightedSample<'t> {
    pub weight: Option<Var<'t>>,
    pub sample: DatasetSample<'t>,
}

/// A prior whose draws are differentiable in its parameters.
pub trait TrainablePrior: Parameterized + Sync {
    fn sample<'t>(
        &self,
        tape: &'t Tape,
        params: &[Var<'t>],
        n: usize,
        n_eval: usize,
        rng: &mut Rng,
    ) -> Result<Vec<WeightedSample<'t>>>;
}

impl TrainablePrior for PriorGeneratorParams {
    fn sample<'t>(
        &self,
        tape: &'t Tape,
        params: &[Var<'t>],
        n: usize,
        n_eval: usize,
        rng: &mut Rng,
    ) -> Result<Vec<WeightedSample<'t>>> {
        let dist = self.sample_distribution(tape, params, rng)?;
        let sample = sample_dataset(&dist, tape, n, n_eval, rng)?;
        Ok(vec![WeightedSample { weight: None, sample }])
    }
}
