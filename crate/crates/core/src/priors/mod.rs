//! Feature priors, trainable regression-function generators and the fixed
//! evaluation priors.

mod distribution;
mod evaluation;
mod generator;
mod regression;
mod wishart;

pub use distribution::{sample_dataset, DatasetSample, Draw, FeatureLaw, SampledDistribution};
pub use evaluation::{Density, DistributionSource, EvaluationPrior, Scenario, ScenarioSet, Variant};
pub use generator::{GNet, PriorConfig, PriorGeneratorParams, Setting, PRIOR_KIND};
pub use regression::{ComponentShape, Interp, Regression};
pub use wishart::{correlation_from, sample_feature_prior, FeaturePriorConfig};
