use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use super::distribution::{random_permutation, FeatureLaw, SampledDistribution};
use super::generator::{PriorGeneratorParams, Setting};
use super::regression::{ComponentShape, Interp, Regression};
use super::wishart::{sample_feature_prior, FeaturePriorConfig};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Anything that can hand out data-generating distributions.
pub trait DistributionSource: Sync {
    fn draw(&self, rng: &mut Rng) -> Result<SampledDistribution>;
    fn describe(&self) -> String;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Density {
    Sparse,
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Coefficients on the l1 sphere of radius 5.
    Boundary,
    /// Boundary coefficients scaled by `Unif(0, 1)`.
    Interior,
    /// FLAM scenario `index` (1-based).
    Scenario { index: usize, density: Density },
    /// No signal at all.
    Null,
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "boundary" => return Ok(Variant::Boundary),
            "interior" => return Ok(Variant::Interior),
            "null" => return Ok(Variant::Null),
            _ => {}
        }
        let bad = || {
            Error::invalid(format!(
                "unknown variant {s:?} (expected boundary, interior, null or scenarioK-sparse/dense)"
            ))
        };
        let rest = s.strip_prefix("scenario").ok_or_else(bad)?;
        let (idx, dens) = rest.split_once(['-', '_']).ok_or_else(bad)?;
        let index: usize = idx.parse().map_err(|_| bad())?;
        let density = match dens {
            "sparse" => Density::Sparse,
            "dense" => Density::Dense,
            _ => return Err(bad()),
        };
        if index == 0 {
            return Err(bad());
        }
        Ok(Variant::Scenario { index, density })
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Boundary => f.write_str("boundary"),
            Variant::Interior => f.write_str("interior"),
            Variant::Null => f.write_str("null"),
            Variant::Scenario { index, density } => {
                let d = match density {
                    Density::Sparse => "sparse",
                    Density::Dense => "dense",
                };
                write!(f, "scenario{index}-{d}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub components: Vec<ComponentShape>,
}

/// FLAM evaluation shapes. Each scenario's components are rescaled to a
/// summed total variation of 10 when the set is built or loaded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScenarioSet {
    pub scenarios: Vec<Scenario>,
}

const SCENARIO_TV: f64 = 10.0;
const SCENARIO_RANGE: f64 = 2.5;

fn grid_shape(f: impl Fn(f64) -> f64, points: usize) -> ComponentShape {
    let pts = (0..points)
        .map(|i| {
            let x = -SCENARIO_RANGE + 2.0 * SCENARIO_RANGE * i as f64 / (points - 1) as f64;
            [x, f(x)]
        })
        .collect();
    ComponentShape {
        interp: Interp::Linear,
        points: pts,
    }
}

fn steps(points: &[[f64; 2]]) -> ComponentShape {
    ComponentShape {
        interp: Interp::Constant,
        points: points.to_vec(),
    }
}

impl ScenarioSet {
    pub fn new(scenarios: Vec<Scenario>) -> Result<Self> {
        if scenarios.is_empty() {
            return Err(Error::invalid("scenario set is empty"));
        }
        let mut out = Vec::with_capacity(scenarios.len());
        for sc in scenarios {
            if sc.components.is_empty() {
                return Err(Error::invalid(format!("scenario {:?} has no components", sc.name)));
            }
            for c in &sc.components {
                c.validate()?;
            }
            let tv: f64 = sc.components.iter().map(ComponentShape::total_variation).sum();
            if !(tv > 0.0) {
                return Err(Error::invalid(format!(
                    "scenario {:?} has zero total variation",
                    sc.name
                )));
            }
            out.push(Scenario {
                components: sc.components.iter().map(|c| c.scaled(SCENARIO_TV / tv)).collect(),
                name: sc.name,
            });
        }
        Ok(ScenarioSet { scenarios: out })
    }

    /// Four shape families on (-2.5, 2.5): steps, smooth waves, a mix of
    /// the two, and functions that only move inside a narrow window.
    pub fn builtin() -> Self {
        let step_components = vec![
            steps(&[[-2.5, 0.0], [-1.0, 1.0], [0.5, -0.5], [1.5, 1.0]]),
            steps(&[[-2.5, 0.0], [0.0, 1.0]]),
            steps(&[[-2.5, 1.0], [-1.5, 0.0], [-0.5, 1.0], [0.5, 0.0], [1.5, 1.0]]),
            steps(&[[-2.5, 0.0], [-2.0, 0.25], [-1.0, 0.5], [0.0, 0.75], [1.0, 1.0]]),
        ];
        let smooth_components = vec![
            grid_shape(|x| (PI * x / 2.5).sin(), 201),
            grid_shape(|x| x * x / 6.25, 201),
            grid_shape(|x| (2.0 * x).cos(), 201),
            grid_shape(|x| 1.0 / (1.0 + (-2.0 * x).exp()), 201),
        ];
        let burst = |c: f64| {
            move |x: f64| {
                let z = (x - c) / 0.25;
                (-z * z).exp() * (6.0 * PI * (x - c)).sin()
            }
        };
        let bursty_components = vec![
            grid_shape(burst(-1.5), 401),
            grid_shape(burst(-0.5), 401),
            grid_shape(burst(0.5), 401),
            grid_shape(burst(1.5), 401),
        ];
        let mixed = vec![
            step_components[0].clone(),
            step_components[1].clone(),
            smooth_components[0].clone(),
            smooth_components[2].clone(),
        ];
        ScenarioSet::new(vec![
            Scenario {
                name: "piecewise-constant".into(),
                components: step_components,
            },
            Scenario {
                name: "smooth".into(),
                components: smooth_components,
            },
            Scenario {
                name: "mixed".into(),
                components: mixed,
            },
            Scenario {
                name: "locally-bursty".into(),
                components: bursty_components,
            },
        ])
        .expect("built-in scenarios are valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw: Vec<Scenario> = serde_json::from_str(&text)?;
        Self::new(raw)
    }

    pub fn get(&self, index: usize) -> Result<&Scenario> {
        index
            .checked_sub(1)
            .and_then(|i| self.scenarios.get(i))
            .ok_or_else(|| {
                Error::invalid(format!(
                    "scenario {index} out of range 1..={}",
                    self.scenarios.len()
                ))
            })
    }
}

/// Fixed evaluation prior.
#[derive(Debug, Clone)]
pub struct EvaluationPrior {
    pub setting: Setting,
    pub sparsity: usize,
    pub p: usize,
    pub variant: Variant,
    pub scenarios: Arc<ScenarioSet>,
    pub radius: f64,
}

impl EvaluationPrior {
    pub fn new(setting: Setting, sparsity: usize, p: usize, variant: Variant) -> Result<Self> {
        match (setting, variant) {
            (Setting::SparseLinear, Variant::Scenario { .. }) => {
                return Err(Error::invalid(format!(
                    "variant {variant} needs the flam setting"
                )))
            }
            (Setting::Flam, Variant::Boundary | Variant::Interior) => {
                return Err(Error::invalid(format!(
                    "variant {variant} needs the linear setting"
                )))
            }
            _ => {}
        }
        if p == 0 || sparsity == 0 || sparsity > p {
            return Err(Error::invalid(format!("need 1 <= sparsity <= p, got s={sparsity}, p={p}")));
        }
        Ok(EvaluationPrior {
            setting,
            sparsity,
            p,
            variant,
            scenarios: Arc::new(ScenarioSet::builtin()),
            radius: 5.0,
        })
    }

    pub fn with_scenarios(mut self, set: ScenarioSet) -> Result<Self> {
        if let Variant::Scenario { index, density } = self.variant {
            let sc = set.get(index)?;
            if density == Density::Dense && sc.components.len() > self.p {
                return Err(Error::invalid(format!(
                    "scenario {index} has {} components but p = {}",
                    sc.components.len(),
                    self.p
                )));
            }
        }
        self.scenarios = Arc::new(set);
        Ok(self)
    }

    fn linear_coefficients(&self, rng: &mut Rng) -> Vec<f64> {
        let s = self.sparsity;
        let e: Vec<f64> = (0..s).map(|_| rng.sample(Exp1)).collect();
        let total: f64 = e.iter().sum();
        let scale = match self.variant {
            Variant::Interior => rng.random::<f64>(),
            _ => 1.0,
        };
        let mut beta = vec![0.0; self.p];
        for (b, ej) in beta.iter_mut().zip(&e) {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            *b = sign * self.radius * scale * ej / total;
        }
        beta
    }
}

impl DistributionSource for EvaluationPrior {
    fn draw(&self, rng: &mut Rng) -> Result<SampledDistribution> {
        let p = self.p;
        match self.variant {
            Variant::Boundary | Variant::Interior | Variant::Null => {
                let (sigma, sigma_chol) = sample_feature_prior(&FeaturePriorConfig::new(p), rng)?;
                let mu = if self.variant == Variant::Null {
                    Regression::Zero
                } else {
                    Regression::Linear {
                        beta: Tensor::vector(self.linear_coefficients(rng)),
                    }
                };
                Ok(SampledDistribution {
                    sigma,
                    sigma_chol,
                    mu,
                    perm: random_permutation(p, rng),
                    features: FeatureLaw::Gaussian,
                    noise_sd: 1.0,
                })
            }
            Variant::Scenario { index, density } => {
                let sc = self.scenarios.get(index)?;
                let components: Vec<(usize, ComponentShape)> = match density {
                    Density::Dense => sc.components.iter().cloned().enumerate().collect(),
                    Density::Sparse => {
                        let pick = rng.random_range(0..sc.components.len());
                        let c = &sc.components[pick];
                        vec![(0, c.scaled(SCENARIO_TV / c.total_variation()))]
                    }
                };
                if components.iter().any(|(j, _)| *j >= p) {
                    return Err(Error::invalid(format!(
                        "scenario {index} needs more than p = {p} features"
                    )));
                }
                Ok(SampledDistribution {
                    sigma: DMatrix::identity(p, p),
                    sigma_chol: DMatrix::identity(p, p),
                    mu: Regression::Additive(Arc::new(components)),
                    perm: random_permutation(p, rng),
                    features: FeatureLaw::Uniform {
                        half_width: SCENARIO_RANGE,
                    },
                    noise_sd: 1.0,
                })
            }
        }
    }

    fn describe(&self) -> String {
        format!("{}-s{}-{}", self.setting, self.sparsity, self.variant)
    }
}

impl DistributionSource for PriorGeneratorParams {
    fn draw(&self, rng: &mut Rng) -> Result<SampledDistribution> {
        self.draw_fixed(rng)
    }

    fn describe(&self) -> String {
        format!("learned-{}-s{}", self.config.setting, self.config.sparsity)
    }
}
