use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::engine::Trainer;
use crate::autodiff::{AdamState, Tensor};
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::net::{EstimatorParams, Parameterized};
use crate::priors::PriorGeneratorParams;

pub const TRAINER_KIND: &str = "amc-trainer";

/// The network estimator against the generator prior.
pub type AmcTrainer = Trainer<EstimatorParams, PriorGeneratorParams>;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Progress {
    pretrain_done: usize,
    iteration: usize,
    estimator_steps: u64,
    prior_steps: u64,
}

fn adam_entries<'a>(prefix: &str, names: &[String], adam: &'a AdamState) -> Vec<(String, &'a Tensor)> {
    let mut out = Vec::with_capacity(2 * names.len());
    for (tag, moments) in [("m", &adam.first_moment), ("v", &adam.second_moment)] {
        for (n, t) in names.iter().zip(moments) {
            out.push((format!("adam/{prefix}/{tag}/{n}"), t));
        }
    }
    out
}

fn adam_from(
    loaded: &checkpoint::Loaded,
    prefix: &str,
    layout: &[(String, Vec<usize>)],
    config: crate::autodiff::AdamConfig,
    step: u64,
) -> Result<AdamState> {
    Ok(AdamState {
        config,
        step,
        first_moment: loaded.take_group(&format!("adam/{prefix}/m/"), layout)?,
        second_moment: loaded.take_group(&format!("adam/{prefix}/v/"), layout)?,
    })
}

impl AmcTrainer {
    /// Writes parameters, optimizer moments and progress to `dir`. The
    /// estimator group also loads as a plain estimator checkpoint.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let meta = serde_json::json!({
            "architecture": self.estimator.config,
            "prior": self.prior.config,
            "train": self.config,
            "progress": Progress {
                pretrain_done: self.pretrain_done,
                iteration: self.iteration,
                estimator_steps: self.est_adam.step,
                prior_steps: self.prior_adam.step,
            },
        });
        let mut named = self.estimator.prefixed("estimator/");
        named.extend(
            self.prior
                .named_params()
                .into_iter()
                .map(|(n, t)| (format!("prior/{n}"), t)),
        );
        named.extend(adam_entries("estimator", &self.estimator.param_names(), &self.est_adam));
        named.extend(adam_entries("prior", &self.prior.param_names(), &self.prior_adam));
        checkpoint::save(dir, TRAINER_KIND, meta, &named)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let loaded = checkpoint::load(dir)?;
        if loaded.manifest.kind != TRAINER_KIND {
            return Err(Error::Checkpoint(format!(
                "{} holds a {:?} checkpoint, not a trainer",
                dir.display(),
                loaded.manifest.kind
            )));
        }
        let meta = &loaded.manifest.metadata;
        let field = |k: &str| {
            meta.get(k)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("metadata has no {k}")))
        };
        let config: TrainConfig = serde_json::from_value(field("train")?)?;
        let progress: Progress = serde_json::from_value(field("progress")?)?;
        let estimator = EstimatorParams::from_loaded(&loaded)?;
        let prior = PriorGeneratorParams::from_loaded(&loaded)?;
        let est_adam = adam_from(
            &loaded,
            "estimator",
            &EstimatorParams::layout(&estimator.config),
            config.estimator_adam,
            progress.estimator_steps,
        )?;
        let prior_adam = adam_from(
            &loaded,
            "prior",
            &PriorGeneratorParams::layout(&prior.config),
            config.prior_adam,
            progress.prior_steps,
        )?;
        Trainer::from_parts(
            config,
            estimator,
            prior,
            est_adam,
            prior_adam,
            progress.pretrain_done,
            progress.iteration,
        )
    }
}
