use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::AdamConfig;
use crate::error::{Error, Result};
use crate::priors::Setting;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Adversarial iterations.
    pub iterations: usize,
    /// Estimator-only iterations run first against the initial prior.
    pub pretrain_iterations: usize,
    pub batch_datasets: usize,
    pub eval_points: usize,
    pub n_train: usize,
    pub estimator_adam: AdamConfig,
    pub prior_adam: AdamConfig,
    pub seed: u64,
    /// A batch loss above this (or non-finite) stops training.
    pub divergence_threshold: f64,
}

impl TrainConfig {
    /// Rates, momenta and pretraining length for a setting.
    pub fn for_setting(setting: Setting, sparsity: usize, n_train: usize) -> Self {
        let (est_rate, prior_rate) = match (setting, sparsity) {
            (Setting::SparseLinear, 1) => (0.0002, 0.0002),
            (Setting::SparseLinear, _) => (0.001, 0.001),
            (Setting::Flam, _) => (0.001, 0.005),
        };
        TrainConfig {
            iterations: 1000,
            pretrain_iterations: match setting {
                Setting::SparseLinear => 5000,
                Setting::Flam => 0,
            },
            batch_datasets: 100,
            eval_points: 100,
            n_train,
            estimator_adam: AdamConfig::new(est_rate, 0.25, 0.15),
            prior_adam: AdamConfig::new(prior_rate, 0.0, 0.25),
            seed: 0,
            divergence_threshold: 1e6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_datasets == 0 || self.eval_points == 0 {
            return Err(Error::invalid("batch sizes must be positive"));
        }
        if self.n_train < 2 {
            return Err(Error::invalid("training sample size must be at least 2"));
        }
        for (who, a) in [("estimator", &self.estimator_adam), ("prior", &self.prior_adam)] {
            if !(a.base_rate >= 0.0) || !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) {
                return Err(Error::invalid(format!("{who} Adam settings out of range: {a:?}")));
            }
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub iteration: usize,
    pub est_loss: f64,
    /// Zero during pretraining.
    pub prior_loss: f64,
    pub est_grad_norm: f64,
    pub prior_grad_norm: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
}

impl TrainLog {
    pub fn push(&mut self, r: TrainRecord) {
        self.records.push(r);
    }

    pub fn est_losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.est_loss).collect()
    }

    /// Appends records to a CSV file, writing the header if the file is new
    /// or empty.
    pub fn append_csv(path: &Path, records: &[TrainRecord]) -> Result<()> {
        let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
        for r in records {
            w.serialize(r).map_err(|e| Error::invalid(format!("writing log: {e}")))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if path.exists() {
            std::fs::remove_file(path).map_err(|e| Error::io(path, e))?;
        }
        Self::append_csv(path, &self.records)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::invalid(e.to_string()))?;
        let records = r
            .deserialize()
            .collect::<std::result::Result<Vec<TrainRecord>, _>>()
            .map_err(|e| Error::invalid(format!("reading log: {e}")))?;
        Ok(TrainLog { records })
    }

    pub fn write_to(&self, out: &mut dyn Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.records {
            w.serialize(r).map_err(|e| Error::invalid(format!("writing log: {e}")))?;
        }
        w.flush().map_err(|e| Error::invalid(e.to_string()))
    }
}
