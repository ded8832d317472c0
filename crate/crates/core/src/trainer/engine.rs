use std::time::Instant;

use rayon::prelude::*;

use super::config::{TrainConfig, TrainLog, TrainRecord};
use super::{TrainableEstimator, TrainablePrior};
use crate::autodiff::{AdamState, Direction, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::linalg::{pairwise_sum, pairwise_sum_tensors};
use crate::net::Parameterized;
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Player {
    Estimator,
    Prior,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Pretrain = 0,
    Adversarial = 1,
}

/// Names the random stream of one batch: every dataset `b` in the batch
/// draws from `substream(seed, [phase, iteration, sub_step, b])`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchKey {
    pub phase: Phase,
    pub iteration: usize,
    pub sub_step: usize,
}

impl BatchKey {
    pub fn stream_path(&self, dataset: usize) -> [u64; 4] {
        [
            self.phase as u64,
            self.iteration as u64,
            self.sub_step as u64,
            dataset as u64,
        ]
    }
}

/// Batch-mean loss and its gradient for one player's parameters.
#[derive(Debug, Clone)]
pub struct BatchResult {
    pub loss: f64,
    pub grads: Vec<Tensor>,
}

impl BatchResult {
    pub fn grad_norm(&self) -> f64 {
        self.grads.iter().map(Tensor::l2_norm_sq).sum::<f64>().sqrt()
    }
}

pub struct Trainer<E, P> {
    pub config: TrainConfig,
    pub estimator: E,
    pub prior: P,
    pub est_adam: AdamState,
    pub prior_adam: AdamState,
    /// Completed pretraining iterations.
    pub pretrain_done: usize,
    /// Completed adversarial iterations.
    pub iteration: usize,
    pub log: TrainLog,
    started: Instant,
}

fn adam_for<T: Parameterized>(config: crate::autodiff::AdamConfig, params: &T) -> AdamState {
    let shapes = params.param_shapes();
    AdamState::new(config, shapes.iter().map(Vec::as_slice))
}

impl<E: TrainableEstimator, P: TrainablePrior> Trainer<E, P> {
    pub fn new(config: TrainConfig, estimator: E, prior: P) -> Result<Self> {
        config.validate()?;
        let est_adam = adam_for(config.estimator_adam, &estimator);
        let prior_adam = adam_for(config.prior_adam, &prior);
        Ok(Trainer {
            config,
            estimator,
            prior,
            est_adam,
            prior_adam,
            pretrain_done: 0,
            iteration: 0,
            log: TrainLog::default(),
            started: Instant::now(),
        })
    }

    /// Rebuilds a trainer from saved parts; moments must match the params.
    pub fn from_parts(
        config: TrainConfig,
        estimator: E,
        prior: P,
        est_adam: AdamState,
        prior_adam: AdamState,
        pretrain_done: usize,
        iteration: usize,
    ) -> Result<Self> {
        config.validate()?;
        for (who, adam, shapes) in [
            ("estimator", &est_adam, estimator.param_shapes()),
            ("prior", &prior_adam, prior.param_shapes()),
        ] {
            let ok = adam.first_moment.len() == shapes.len()
                && adam.second_moment.len() == shapes.len()
                && adam
                    .first_moment
                    .iter()
                    .zip(&adam.second_moment)
                    .zip(&shapes)
                    .all(|((m, v), s)| m.shape() == s.as_slice() && v.shape() == s.as_slice());
            if !ok {
                return Err(Error::Checkpoint(format!("{who} Adam state does not match its parameters")));
            }
        }
        Ok(Trainer {
            config,
            estimator,
            prior,
            est_adam,
            prior_adam,
            pretrain_done,
            iteration,
            log: TrainLog::default(),
            started: Instant::now(),
        })
    }

    fn dataset_loss<'t>(
        &self,
        tape: &'t Tape,
        est_vars: &[Var<'t>],
        prior_vars: &[Var<'t>],
        rng: &mut crate::rng::Rng,
    ) -> Result<Var<'t>> {
        let samples = self.prior.sample(
            tape,
            prior_vars,
            self.config.n_train,
            self.config.eval_points,
            rng,
        )?;
        let mut total: Option<Var<'t>> = None;
        for ws in samples {
            let s = &ws.sample;
            let pred = self.estimator.forward(est_vars, &s.x, s.y, &s.x0)?;
            let mut loss = pred.sub(&s.target)?.square().mean();
            if let Some(w) = ws.weight {
                loss = loss.mul(&w)?;
            }
            total = Some(match total {
                None => loss,
                Some(t) => t.add(&loss)?,
            });
        }
        total.ok_or_else(|| Error::invalid("prior produced no samples"))
    }

    /// Loss and gradient for `player` on the batch named by `key`. Nothing
    /// is updated. Datasets run in parallel; the reduction is an in-order
    /// tree sum, so results do not depend on the thread count.
    pub fn evaluate_batch(&self, key: BatchKey, player: Player) -> Result<BatchResult> {
        let b = self.config.batch_datasets;
        let per_dataset: Vec<(f64, Vec<Tensor>)> = (0..b)
            .into_par_iter()
            .map(|i| {
                let mut rng = substream(self.config.seed, &key.stream_path(i));
                let tape = Tape::new();
                let est_vars = self.estimator.bind(&tape, player == Player::Estimator);
                let prior_vars = self.prior.bind(&tape, player == Player::Prior);
                let loss = self.dataset_loss(&tape, &est_vars, &prior_vars, &mut rng)?;
                let value = loss.item()?;
                let tracked = match player {
                    Player::Estimator => &est_vars,
                    Player::Prior => &prior_vars,
                };
                if loss.requires_grad() && value.is_finite() {
                    tape.backward(loss)?;
                }
                Ok((value, tracked.iter().map(|&v| tape.grad_or_zeros(v)).collect()))
            })
            .collect::<Result<_>>()?;
        let losses: Vec<f64> = per_dataset.iter().map(|(l, _)| *l).collect();
        let grads: Vec<Vec<Tensor>> = per_dataset.into_iter().map(|(_, g)| g).collect();
        let inv = 1.0 / b as f64;
        Ok(BatchResult {
            loss: pairwise_sum(&losses) * inv,
            grads: pairwise_sum_tensors(&grads)?.into_iter().map(|g| g.scaled(inv)).collect(),
        })
    }

    fn check_divergence(&self, loss: f64, iteration: usize) -> Result<()> {
        if !loss.is_finite() || loss > self.config.divergence_threshold {
            return Err(Error::Diverged { iteration, loss });
        }
        Ok(())
    }

    fn apply(&mut self, player: Player, grads: &[Tensor]) -> Result<()> {
        match player {
            Player::Estimator => {
                let (names, mut params): (Vec<String>, Vec<&mut Tensor>) =
                    self.estimator.named_params_mut().into_iter().unzip();
                self.est_adam.step(&mut params, grads, &names, Direction::Descend)
            }
            Player::Prior => {
                let (names, mut params): (Vec<String>, Vec<&mut Tensor>) =
                    self.prior.named_params_mut().into_iter().unzip();
                self.prior_adam.step(&mut params, grads, &names, Direction::Ascend)
            }
        }
    }

    fn total_iterations(&self) -> usize {
        self.pretrain_done + self.iteration
    }

    /// One estimator-only update against the current prior.
    pub fn pretrain_step(&mut self) -> Result<TrainRecord> {
        let key = BatchKey {
            phase: Phase::Pretrain,
            iteration: self.pretrain_done,
            sub_step: 0,
        };
        let est = self.evaluate_batch(key, Player::Estimator)?;
        self.check_divergence(est.loss, self.total_iterations() + 1)?;
        self.apply(Player::Estimator, &est.grads)?;
        self.pretrain_done += 1;
        let rec = TrainRecord {
            iteration: self.total_iterations(),
            est_loss: est.loss,
            prior_loss: 0.0,
            est_grad_norm: est.grad_norm(),
            prior_grad_norm: 0.0,
            seconds: self.started.elapsed().as_secs_f64(),
        };
        self.log.push(rec);
        Ok(rec)
    }

    /// Descent on the estimator, then ascent on the prior with a fresh batch.
    /// On divergence both players are left as they were before the step.
    pub fn adversarial_step(&mut self) -> Result<TrainRecord> {
        let it = self.iteration;
        let at = self.total_iterations() + 1;
        let est_key = BatchKey {
            phase: Phase::Adversarial,
            iteration: it,
            sub_step: 0,
        };
        let est = self.evaluate_batch(est_key, Player::Estimator)?;
        self.check_divergence(est.loss, at)?;
        let est_before: Vec<Tensor> = self.estimator.named_params().into_iter().map(|(_, t)| t.clone()).collect();
        let adam_before = self.est_adam.clone();
        self.apply(Player::Estimator, &est.grads)?;

        let prior_key = BatchKey { sub_step: 1, ..est_key };
        let prior = match self.evaluate_batch(prior_key, Player::Prior).and_then(|r| {
            self.check_divergence(r.loss, at)?;
            Ok(r)
        }) {
            Ok(r) => r,
            Err(e) => {
                for ((_, t), old) in self.estimator.named_params_mut().into_iter().zip(est_before) {
                    *t = old;
                }
                self.est_adam = adam_before;
                return Err(e);
            }
        };
        self.apply(Player::Prior, &prior.grads)?;
        self.iteration += 1;
        let rec = TrainRecord {
            iteration: self.total_iterations(),
            est_loss: est.loss,
            prior_loss: prior.loss,
            est_grad_norm: est.grad_norm(),
            prior_grad_norm: prior.grad_norm(),
            seconds: self.started.elapsed().as_secs_f64(),
        };
        self.log.push(rec);
        Ok(rec)
    }

    /// Finishes any remaining pretraining, then the adversarial iterations.
    /// `after_each` runs after every completed iteration.
    pub fn run_with(&mut self, mut after_each: impl FnMut(&Self) -> Result<()>) -> Result<()> {
        while self.pretrain_done < self.config.pretrain_iterations {
            self.pretrain_step()?;
            after_each(self)?;
        }
        while self.iteration < self.config.iterations {
            self.adversarial_step()?;
            after_each(self)?;
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<()> {
        self.run_with(|_| Ok(()))
    }
}
