use super::{TrainablePrior, WeightedSample};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::net::Parameterized;
use crate::priors::{sample_dataset, SampledDistribution};
use crate::rng::Rng;

/// Softmax-weighted mixture over a fixed list of distributions. Only the
/// logits are trained.
///
/// Every component is sampled from a clone of the same stream, so the
/// components see common random numbers within a dataset slot.
#[derive(Debug, Clone)]
pub struct MixturePrior {
    pub components: Vec<SampledDistribution>,
    pub logits: Tensor,
}

impl MixturePrior {
    pub fn new(components: Vec<SampledDistribution>) -> Result<Self> {
        if components.len() < 2 {
            return Err(Error::invalid(format!(
                "mixture needs at least 2 components, got {}",
                components.len()
            )));
        }
        let p = components[0].p();
        if components.iter().any(|c| c.p() != p) {
            return Err(Error::invalid("mixture components disagree on the feature count"));
        }
        let k = components.len();
        Ok(MixturePrior {
            components,
            logits: Tensor::zeros(&[k]),
        })
    }

    pub fn weights(&self) -> Vec<f64> {
        let l = self.logits.data();
        let max = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = l.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = e.iter().sum();
        e.into_iter().map(|v| v / total).collect()
    }
}

impl Parameterized for MixturePrior {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        vec![("logits".to_string(), &self.logits)]
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![("logits".to_string(), &mut self.logits)]
    }
}

impl TrainablePrior for MixturePrior {
    fn sample<'t>(
        &self,
        tape: &'t Tape,
        params: &[Var<'t>],
        n: usize,
        n_eval: usize,
        rng: &mut Rng,
    ) -> Result<Vec<WeightedSample<'t>>> {
        let logits = params
            .first()
            .copied()
            .ok_or_else(|| Error::invalid("mixture prior bound without logits"))?;
        let k = self.components.len();
        let max = logits.value().data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e = logits.add_scalar(-max).exp();
        let weights = e.div(&e.sum().expand(&[k])?)?;
        let base = rng.clone();
        let mut out = Vec::with_capacity(k);
        for (j, dist) in self.components.iter().enumerate() {
            *rng = base.clone();
            let mut onehot = vec![0.0; k];
            onehot[j] = 1.0;
            let weight = weights.mul(&tape.constant(Tensor::vector(onehot)))?.sum();
            let sample = sample_dataset(&dist.bind(tape), tape, n, n_eval, rng)?;
            out.push(WeightedSample {
                weight: Some(weight),
                sample,
            });
        }
        Ok(out)
    }
}
