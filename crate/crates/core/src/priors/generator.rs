use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::distribution::{random_permutation, FeatureLaw, SampledDistribution};
use super::regression::Regression;
use super::wishart::{sample_feature_prior, FeaturePriorConfig};
use crate::autodiff::{Tape, Tensor, Var};
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::net::{
    chain_layout, collect_layers, deep_set_layer, dense_layer, glorot_init, stack,
    DeepSetWeights, DenseWeights, LayerFields, Parameterized,
};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    SparseLinear,
    Flam,
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" | "sparse_linear" => Ok(Setting::SparseLinear),
            "flam" => Ok(Setting::Flam),
            other => Err(Error::invalid(format!(
                "unknown setting {other:?} (expected linear or flam)"
            ))),
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Setting::SparseLinear => "linear",
            Setting::Flam => "flam",
        })
    }
}

/// Everything about a trainable prior except the weights of `G`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub setting: Setting,
    pub sparsity: usize,
    pub features: FeaturePriorConfig,
    /// Jump locations per component (FLAM).
    pub knots: usize,
    pub width: usize,
    pub depth: usize,
    /// `U0 ~ Unif(-u0_bound, u0_bound)` (linear).
    pub u0_bound: f64,
    /// Summed total variation of the components (FLAM).
    pub total_variation: f64,
}

impl PriorConfig {
    pub fn new(setting: Setting, sparsity: usize, p: usize) -> Self {
        PriorConfig {
            setting,
            sparsity,
            features: FeaturePriorConfig::new(p),
            knots: 500,
            width: 40,
            depth: 4,
            u0_bound: 5.0,
            total_variation: 10.0,
        }
    }

    pub fn p(&self) -> usize {
        self.features.p
    }

    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        if self.sparsity == 0 || self.sparsity > self.p() {
            return Err(Error::invalid(format!(
                "sparsity {} must lie in 1..={}",
                self.sparsity,
                self.p()
            )));
        }
        if self.width == 0 || self.knots == 0 {
            return Err(Error::invalid("generator width and knot count must be positive"));
        }
        Ok(())
    }

    /// Channel sequence of `G`.
    fn widths(&self) -> Vec<usize> {
        let (input, output) = match self.setting {
            Setting::SparseLinear => (1, 1),
            Setting::Flam => (self.sparsity + 2, self.sparsity),
        };
        let mut w = vec![input];
        w.extend(std::iter::repeat_n(self.width, self.depth));
        w.push(output);
        w
    }

    /// For several active coefficients the linear generator is a set
    /// network over the coordinates so its output is permutation equivariant.
    fn uses_set_network(&self) -> bool {
        self.setting == Setting::SparseLinear && self.sparsity > 1
    }
}

/// Network `G` of a trainable prior.
#[derive(Debug, Clone, PartialEq)]
pub enum GNet<T> {
    Dense(Vec<DenseWeights<T>>),
    DeepSet(Vec<DeepSetWeights<T>>),
}

impl<T> GNet<T> {
    fn entries(&self) -> Vec<(String, &T)> {
        fn go<T, L: LayerFields<T>>(layers: &[L]) -> Vec<(String, &T)> {
            let mut out = Vec::new();
            for (i, l) in layers.iter().enumerate() {
                for (f, v) in L::FIELDS.iter().zip(l.fields()) {
                    out.push((format!("g.{i}.{f}"), v));
                }
            }
            out
        }
        match self {
            GNet::Dense(l) => go(l),
            GNet::DeepSet(l) => go(l),
        }
    }

    fn entries_mut(&mut self) -> Vec<(String, &mut T)> {
        fn go<T, L: LayerFields<T>>(layers: &mut [L]) -> Vec<(String, &mut T)> {
            let mut out = Vec::new();
            for (i, l) in layers.iter_mut().enumerate() {
                for (f, v) in L::FIELDS.iter().zip(l.fields_mut()) {
                    out.push((format!("g.{i}.{f}"), v));
                }
            }
            out
        }
        match self {
            GNet::Dense(l) => go(l),
            GNet::DeepSet(l) => go(l),
        }
    }

    fn assemble(config: &PriorConfig, items: impl IntoIterator<Item = T>) -> Result<Self> {
        let layers = config.widths().len() - 1;
        let mut it = items.into_iter();
        let net = if config.uses_set_network() {
            GNet::DeepSet(collect_layers(layers, &mut it)?)
        } else {
            GNet::Dense(collect_layers(layers, &mut it)?)
        };
        if it.next().is_some() {
            return Err(Error::invalid("too many generator tensors"));
        }
        Ok(net)
    }
}

impl<'t> GNet<Var<'t>> {
    /// Dense: rows of `u` are inputs. Set network: `u` is one `s x 1` set.
    fn apply(&self, u: Var<'t>) -> Result<Var<'t>> {
        match self {
            GNet::Dense(l) => stack(u, l, false, dense_layer),
            GNet::DeepSet(l) => stack(u, l, false, deep_set_layer),
        }
    }
}

/// Trainable prior: fixed configuration plus the weights of `G`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorGeneratorParams {
    pub config: PriorConfig,
    pub g: GNet<Tensor>,
}

pub const PRIOR_KIND: &str = "amc-prior";

impl PriorGeneratorParams {
    pub fn layout(config: &PriorConfig) -> Vec<(String, Vec<usize>)> {
        if config.uses_set_network() {
            chain_layout::<DeepSetWeights<Tensor>>("g", &config.widths())
        } else {
            chain_layout::<DenseWeights<Tensor>>("g", &config.widths())
        }
    }

    pub fn from_tensors(config: PriorConfig, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let layout = Self::layout(&config);
        if tensors.len() != layout.len() {
            return Err(Error::invalid(format!(
                "expected {} generator tensors, got {}",
                layout.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in layout.iter().zip(&tensors) {
            if t.shape() != shape.as_slice() {
                return Err(Error::invalid(format!(
                    "{name}: shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(PriorGeneratorParams {
            config,
            g: GNet::assemble(&config, tensors)?,
        })
    }

    pub fn init(config: PriorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::from_seed(seed);
        let tensors = glorot_init(&Self::layout(&config), &mut rng);
        Self::from_tensors(config, tensors)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let meta = serde_json::json!({ "prior": self.config });
        let named: Vec<(String, &Tensor)> = self
            .named_params()
            .into_iter()
            .map(|(n, t)| (format!("prior/{n}"), t))
            .collect();
        checkpoint::save(dir, PRIOR_KIND, meta, &named)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Self::from_loaded(&checkpoint::load(dir)?)
    }

    pub fn from_loaded(loaded: &checkpoint::Loaded) -> Result<Self> {
        let cfg = loaded
            .manifest
            .metadata
            .get("prior")
            .ok_or_else(|| Error::Checkpoint("metadata has no prior config".into()))?;
        let config: PriorConfig = serde_json::from_value(cfg.clone())?;
        let tensors = loaded.take_group("prior/", &Self::layout(&config))?;
        Self::from_tensors(config, tensors)
    }

    pub fn bind_net<'t>(&self, vars: &[Var<'t>]) -> Result<GNet<Var<'t>>> {
        GNet::assemble(&self.config, vars.iter().copied())
    }

    /// Draws one distribution whose regression function depends on the
    /// bound generator weights `g`.
    pub fn sample_distribution<'t>(
        &self,
        tape: &'t Tape,
        g: &[Var<'t>],
        rng: &mut Rng,
    ) -> Result<SampledDistribution<Var<'t>>> {
        let cfg = &self.config;
        let net = self.bind_net(g)?;
        let (sigma, sigma_chol) = sample_feature_prior(&cfg.features, rng)?;
        let perm = random_permutation(cfg.p(), rng);
        let mu = match cfg.setting {
            Setting::SparseLinear => self.linear_regression(tape, &net, rng)?,
            Setting::Flam => self.flam_regression(tape, &net, &sigma_chol, rng)?,
        };
        Ok(SampledDistribution {
            sigma,
            sigma_chol,
            mu,
            perm,
            features: FeatureLaw::Gaussian,
            noise_sd: 1.0,
        })
    }

    /// A draw with the current weights held fixed.
    pub fn draw_fixed(&self, rng: &mut Rng) -> Result<SampledDistribution> {
        let tape = Tape::new();
        let g = Parameterized::bind(self, &tape, false);
        Ok(self.sample_distribution(&tape, &g, rng)?.detach())
    }

    fn linear_regression<'t>(
        &self,
        tape: &'t Tape,
        net: &GNet<Var<'t>>,
        rng: &mut Rng,
    ) -> Result<Regression<Var<'t>>> {
        let (s, p) = (self.config.sparsity, self.config.p());
        let u0 = rng.random_range(-self.config.u0_bound..self.config.u0_bound);
        let u: Vec<f64> = (0..s).map(|_| rng.sample(StandardNormal)).collect();
        let logits = net.apply(tape.constant(Tensor::matrix(s, 1, u)?))?.reshape(&[s])?;
        let shift = logits.value().data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e = logits.add_scalar(-shift).exp();
        let weights = e.div(&e.sum().expand(&[s])?)?;
        let active = weights.scale(u0);
        let beta = if p > s {
            tape.concat(&[active, tape.constant(Tensor::zeros(&[p - s]))], 0)?
        } else {
            active
        };
        Ok(Regression::Linear { beta })
    }

    fn flam_regression<'t>(
        &self,
        tape: &'t Tape,
        net: &GNet<Var<'t>>,
        sigma_chol: &nalgebra::DMatrix<f64>,
        rng: &mut Rng,
    ) -> Result<Regression<Var<'t>>> {
        let cfg = &self.config;
        let (s, k, p) = (cfg.sparsity, cfg.knots, cfg.p());

        let mut knots = vec![0.0; k * s];
        let mut v = vec![0.0; p];
        for row in knots.chunks_exact_mut(s) {
            for e in v.iter_mut() {
                *e = rng.sample(StandardNormal);
            }
            for (j, out) in row.iter_mut().enumerate() {
                *out = (0..=j).map(|l| sigma_chol[(j, l)] * v[l]).sum();
            }
        }
        let signs: Vec<f64> = (0..k * s)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        let signs = tape.constant(Tensor::matrix(k, s, signs)?);

        for _attempt in 0..2 {
            let u: Vec<f64> = (0..k * (s + 2)).map(|_| rng.sample(StandardNormal)).collect();
            let magnitudes = net.apply(tape.constant(Tensor::matrix(k, s + 2, u)?))?.abs();
            let c = magnitudes.sum();
            if c.value().data()[0] > 0.0 {
                let jumps = magnitudes
                    .mul(&signs)?
                    .div(&c.expand(&[k, s])?)?
                    .scale(cfg.total_variation);
                return Ok(Regression::Steps {
                    knots: Tensor::matrix(k, s, knots)?,
                    jumps,
                });
            }
        }
        Err(Error::Convergence(
            "generator produced all-zero jump magnitudes twice".into(),
        ))
    }
}

impl Parameterized for PriorGeneratorParams {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        self.g.entries()
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.g.entries_mut()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::from_seed;

    #[test]
    fn generator_shapes() {
        let lin1 = PriorGeneratorParams::init(PriorConfig::new(Setting::SparseLinear, 1, 10), 0).unwrap();
        assert!(matches!(lin1.g, GNet::Dense(ref l) if l.len() == 5));
        let lin5 = PriorGeneratorParams::init(PriorConfig::new(Setting::SparseLinear, 5, 10), 0).unwrap();
        assert!(matches!(lin5.g, GNet::DeepSet(ref l) if l.len() == 5));
        let flam = PriorGeneratorParams::init(PriorConfig::new(Setting::Flam, 4, 10), 0).unwrap();
        let names = flam.param_names();
        assert_eq!(names[0], "g.0.weight");
        assert_eq!(flam.param_shapes()[0], vec![6, 40]);
        assert_eq!(flam.param_shapes().last().unwrap(), &vec![4]);
    }

    #[test]
    fn constant_generator_gives_uniform_weights() {
        let cfg = PriorConfig::new(Setting::SparseLinear, 5, 8);
        let mut g = PriorGeneratorParams::init(cfg, 1).unwrap();
        for (_, t) in g.named_params_mut() {
            t.data_mut().fill(0.0);
        }
        let d = g.draw_fixed(&mut from_seed(2)).unwrap();
        let Regression::Linear { beta } = &d.mu else { panic!() };
        let b = beta.data();
        for j in 1..5 {
            assert!((b[j] - b[0]).abs() < 1e-15);
        }
        assert!(b[5..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn flam_total_variation_is_ten() {
        let g = PriorGeneratorParams::init(PriorConfig::new(Setting::Flam, 3, 5), 4).unwrap();
        let mut rng = from_seed(5);
        for _ in 0..5 {
            let d = g.draw_fixed(&mut rng).unwrap();
            let tv: f64 = d.mu.component_variations().iter().map(|(_, v)| v).sum();
            assert!((tv - 10.0).abs() < 1e-9, "{tv}");
        }
    }

    #[test]
    fn setting_parse() {
        assert_eq!("linear".parse::<Setting>().unwrap(), Setting::SparseLinear);
        assert_eq!("flam".parse::<Setting>().unwrap(), Setting::Flam);
        assert!("ridge".parse::<Setting>().is_err());
    }
}
