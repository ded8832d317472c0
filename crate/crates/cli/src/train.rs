use std::path::{Path, PathBuf};

use amc_core::priors::PriorConfig;
use amc_core::trainer::{AmcTrainer, TrainLog, Trainer};
use amc_core::{AdamConfig, ArchitectureConfig, EstimatorParams, PriorGeneratorParams, Setting, TrainConfig};
use clap::Args;
use serde::{Deserialize, Serialize};

use crate::config::{layered, write_json};
use crate::{usage, CmdResult, Failure};

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainArgs {
    /// JSON file with any of the long flag names (snake_case) as keys; flags override it
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// Model class: linear (sparse linear) or flam [default: linear]
    #[arg(long)]
    pub setting: Option<String>,
    /// Number of active components s [default: 1]
    #[arg(long)]
    pub sparsity: Option<usize>,
    /// Number of features [default: 10]
    #[arg(long)]
    pub p: Option<usize>,
    /// Observations per simulated dataset [default: 100]
    #[arg(long)]
    pub n_train: Option<usize>,
    /// Total parameter updates, pretraining included [default: pretraining + 1000]
    #[arg(long)]
    pub iters: Option<usize>,
    /// Estimator-only updates run first [default: 5000 for linear, 0 for flam]
    #[arg(long)]
    pub pretrain_iters: Option<usize>,
    /// Datasets per gradient step [default: 100]
    #[arg(long)]
    pub batch: Option<usize>,
    /// Evaluation points per dataset [default: 100]
    #[arg(long)]
    pub eval_points: Option<usize>,
    /// Estimator base learning rate [default: 0.0002 for linear s=1, else 0.001]
    #[arg(long)]
    pub est_rate: Option<f64>,
    /// Prior base learning rate [default: 0.0002 for linear s=1, 0.001 for linear s>1, 0.005 for flam]
    #[arg(long)]
    pub prior_rate: Option<f64>,
    /// Hidden width of every network module [default: 100]
    #[arg(long)]
    pub width: Option<usize>,
    /// Hidden layers of modules 1 and 3 [default: 10]
    #[arg(long)]
    pub depth_set: Option<usize>,
    /// Hidden layers of modules 2 and 4 [default: 3]
    #[arg(long)]
    pub depth_dense: Option<usize>,
    /// Output channels of module 1 [default: 50]
    #[arg(long)]
    pub o1: Option<usize>,
    /// Output channels of module 2 [default: 50]
    #[arg(long)]
    pub o2: Option<usize>,
    /// Output channels of module 3 [default: 10]
    #[arg(long)]
    pub o3: Option<usize>,
    /// Replace features by within-column ranks before standardizing [default: false]
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub rank_preprocess: Option<bool>,
    /// Seed for initialization and all simulated data [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for config.json, log.csv and checkpoint/ [default: amc-run]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Iterations between checkpoints and log flushes [default: 100]
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Continue from OUT/checkpoint instead of starting fresh
    #[arg(long)]
    #[serde(skip)]
    pub resume: bool,
}

/// Fully expanded training configuration, echoed to `config.json`.
#[derive(Debug, Clone, Serialize)]
pub struct TrainRun {
    pub setting: Setting,
    pub architecture: ArchitectureConfig,
    pub prior: PriorConfig,
    pub train: TrainConfig,
    pub checkpoint_every: usize,
    pub out: PathBuf,
}

impl TrainArgs {
    pub fn resolve(&self) -> Result<TrainRun, Failure> {
        let a = layered(self, self.config.as_deref())?;
        let setting: Setting = a.setting.as_deref().unwrap_or("linear").parse().map_err(usage)?;
        let s = a.sparsity.unwrap_or(1);
        let p = a.p.unwrap_or(10);
        let n_train = a.n_train.unwrap_or(100);
        let mut train = TrainConfig::for_setting(setting, s, n_train);
        let pretrain = a.pretrain_iters.unwrap_or(train.pretrain_iterations);
        let total = a.iters.unwrap_or(pretrain + 1000);
        train.pretrain_iterations = pretrain.min(total);
        train.iterations = total - train.pretrain_iterations;
        train.batch_datasets = a.batch.unwrap_or(train.batch_datasets);
        train.eval_points = a.eval_points.unwrap_or(train.eval_points);
        train.seed = a.seed.unwrap_or(0);
        let rate = |c: AdamConfig, r: Option<f64>| AdamConfig {
            base_rate: r.unwrap_or(c.base_rate),
            ..c
        };
        train.estimator_adam = rate(train.estimator_adam, a.est_rate);
        train.prior_adam = rate(train.prior_adam, a.prior_rate);

        let mut arch = ArchitectureConfig::default();
        if let Some(w) = a.width {
            (arch.w1, arch.w2, arch.w3, arch.w4) = (w, w, w, w);
        }
        if let Some(h) = a.depth_set {
            (arch.h1, arch.h3) = (h, h);
        }
        if let Some(h) = a.depth_dense {
            (arch.h2, arch.h4) = (h, h);
        }
        arch.o1 = a.o1.unwrap_or(arch.o1);
        arch.o2 = a.o2.unwrap_or(arch.o2);
        arch.o3 = a.o3.unwrap_or(arch.o3);
        arch.rank_preprocess = a.rank_preprocess.unwrap_or(false);

        let prior = PriorConfig::new(setting, s, p);
        let every = a.checkpoint_every.unwrap_or(100);
        if every == 0 {
            return Err(usage("--checkpoint-every must be positive"));
        }
        arch.validate().map_err(usage)?;
        prior.validate().map_err(usage)?;
        train.validate().map_err(usage)?;
        Ok(TrainRun {
            setting,
            architecture: arch,
            prior,
            train,
            checkpoint_every: every,
            out: a.out.unwrap_or_else(|| PathBuf::from("amc-run")),
        })
    }
}

fn fresh(run: &TrainRun) -> Result<AmcTrainer, Failure> {
    let seed = run.train.seed;
    let est = EstimatorParams::init(run.architecture, amc_core::rng::stream_key(seed, &[100]))?;
    let prior = PriorGeneratorParams::init(run.prior, amc_core::rng::stream_key(seed, &[101]))?;
    Ok(Trainer::new(run.train, est, prior)?)
}

fn resumed(run: &TrainRun, dir: &Path) -> Result<AmcTrainer, Failure> {
    let mut t = AmcTrainer::load(dir)?;
    if t.estimator.config != run.architecture || t.prior.config != run.prior {
        return Err(usage(format!(
            "{} was trained with a different architecture or prior",
            dir.display()
        )));
    }
    // Lengths may be extended; everything else must match.
    let mut cfg = run.train;
    cfg.iterations = t.config.iterations;
    cfg.pretrain_iterations = t.config.pretrain_iterations;
    if cfg != t.config {
        return Err(usage(format!("{} was trained with different settings", dir.display())));
    }
    t.config.iterations = run.train.iterations;
    t.config.pretrain_iterations = run.train.pretrain_iterations;
    Ok(t)
}

pub fn run(args: TrainArgs) -> CmdResult {
    let run = args.resolve()?;
    let ckpt = run.out.join("checkpoint");
    let log_path = run.out.join("log.csv");
    let exists = ckpt.join(amc_core::checkpoint::MANIFEST_FILE).exists();
    if exists && !args.resume {
        return Err(usage(format!(
            "{} already holds a checkpoint; pass --resume or choose another --out",
            run.out.display()
        )));
    }
    if args.resume && !exists {
        return Err(usage(format!("--resume: no checkpoint in {}", run.out.display())));
    }
    let mut trainer = if args.resume {
        resumed(&run, &ckpt)?
    } else {
        fresh(&run)?
    };
    std::fs::create_dir_all(&run.out)
        .map_err(|e| usage(format!("cannot create {}: {e}", run.out.display())))?;
    write_json(&run.out.join("config.json"), &run)?;
    if !args.resume && log_path.exists() {
        std::fs::remove_file(&log_path).map_err(|e| usage(format!("{}: {e}", log_path.display())))?;
    }

    let mut flushed = 0usize;
    let every = run.checkpoint_every;
    let flush = |t: &AmcTrainer, flushed: &mut usize| -> amc_core::Result<()> {
        TrainLog::append_csv(&log_path, &t.log.records[*flushed..])?;
        *flushed = t.log.records.len();
        t.save(&ckpt)
    };
    let outcome = trainer.run_with(|t| {
        if t.log.records.len() - flushed >= every {
            flush(t, &mut flushed)?;
            let last = t.log.records.last().expect("record just pushed");
            eprintln!(
                "iteration {}: estimator loss {:.5}, prior loss {:.5}",
                last.iteration, last.est_loss, last.prior_loss
            );
        }
        Ok(())
    });
    flush(&trainer, &mut flushed)?;
    outcome?;
    println!(
        "trained {} pretraining + {} adversarial iterations; checkpoint in {}",
        trainer.pretrain_done,
        trainer.iteration,
        ckpt.display()
    );
    Ok(())
}
