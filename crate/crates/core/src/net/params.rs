use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::layers::{DeepSetWeights, DenseWeights, ExchangeableWeights, LayerFields};
use crate::autodiff::{Tape, Tensor, Var};
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::rng;

/// Owners of named trainable tensors.
pub trait Parameterized {
    fn named_params(&self) -> Vec<(String, &Tensor)>;
    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)>;

    /// Places every parameter on `tape`, as leaves when `track` is set.
    fn bind<'t>(&self, tape: &'t Tape, track: bool) -> Vec<Var<'t>> {
        self.named_params()
            .into_iter()
            .map(|(_, t)| {
                if track {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect()
    }

    fn param_names(&self) -> Vec<String> {
        self.named_params().into_iter().map(|(n, _)| n).collect()
    }

    fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.named_params()
            .into_iter()
            .map(|(_, t)| t.shape().to_vec())
            .collect()
    }
}

/// Channel counts, depths and widths of the four network modules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchitectureConfig {
    pub o1: usize,
    pub o2: usize,
    pub o3: usize,
    pub h1: usize,
    pub h2: usize,
    pub h3: usize,
    pub h4: usize,
    pub w1: usize,
    pub w2: usize,
    pub w3: usize,
    pub w4: usize,
    pub rank_preprocess: bool,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        ArchitectureConfig {
            o1: 50,
            o2: 50,
            o3: 10,
            h1: 10,
            h2: 3,
            h3: 10,
            h4: 3,
            w1: 100,
            w2: 100,
            w3: 100,
            w4: 100,
            rank_preprocess: false,
        }
    }
}

impl ArchitectureConfig {
    /// Every module with the same hidden `width` and `depth`.
    pub fn uniform(width: usize, depth: usize, o1: usize, o2: usize, o3: usize) -> Self {
        ArchitectureConfig {
            o1,
            o2,
            o3,
            h1: depth,
            h2: depth,
            h3: depth,
            h4: depth,
            w1: width,
            w2: width,
            w3: width,
            w4: width,
            rank_preprocess: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.o1, self.o2, self.o3, self.w1, self.w2, self.w3, self.w4,
        ];
        if counts.contains(&0) {
            return Err(Error::invalid(format!(
                "architecture channel counts and widths must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// Channel sequence of each module, input first.
    pub fn module_widths(&self) -> [Vec<usize>; 4] {
        let chain = |input: usize, hidden: usize, width: usize, out: usize| {
            let mut v = vec![input];
            v.extend(std::iter::repeat_n(width, hidden));
            v.push(out);
            v
        };
        [
            chain(2, self.h1, self.w1, self.o1),
            chain(self.o1, self.h2, self.w2, self.o2),
            chain(self.o2 + 1, self.h3, self.w3, self.o3),
            chain(self.o3, self.h4, self.w4, 1),
        ]
    }
}

/// Weights of the four modules.
#[derive(Debug, Clone, PartialEq)]
pub struct NetWeights<T> {
    pub module1: Vec<ExchangeableWeights<T>>,
    pub module2: Vec<DeepSetWeights<T>>,
    pub module3: Vec<DeepSetWeights<T>>,
    pub module4: Vec<DenseWeights<T>>,
}

fn layer_entries<'a, T, L: LayerFields<T>>(
    prefix: &str,
    layers: &'a [L],
    out: &mut Vec<(String, &'a T)>,
) {
    for (i, l) in layers.iter().enumerate() {
        for (f, v) in L::FIELDS.iter().zip(l.fields()) {
            out.push((format!("{prefix}.{i}.{f}"), v));
        }
    }
}

fn layer_entries_mut<'a, T, L: LayerFields<T>>(
    prefix: &str,
    layers: &'a mut [L],
    out: &mut Vec<(String, &'a mut T)>,
) {
    for (i, l) in layers.iter_mut().enumerate() {
        for (f, v) in L::FIELDS.iter().zip(l.fields_mut()) {
            out.push((format!("{prefix}.{i}.{f}"), v));
        }
    }
}

/// Named shapes of a chain of layers with channel sequence `widths`.
pub(crate) fn chain_layout<L: LayerFields<Tensor>>(
    prefix: &str,
    widths: &[usize],
) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    for (i, pair) in widths.windows(2).enumerate() {
        for (fi, f) in L::FIELDS.iter().enumerate() {
            let shape = if L::field_is_matrix(fi) {
                vec![pair[0], pair[1]]
            } else {
                vec![pair[1]]
            };
            out.push((format!("{prefix}.{i}.{f}"), shape));
        }
    }
    out
}

pub(crate) fn collect_layers<T, L: LayerFields<T>>(
    count: usize,
    items: &mut dyn Iterator<Item = T>,
) -> Result<Vec<L>> {
    (0..count)
        .map(|_| L::from_fields(items).ok_or_else(|| Error::invalid("too few parameter tensors")))
        .collect()
}

/// Glorot-uniform matrices and zero biases for `layout`.
pub(crate) fn glorot_init(layout: &[(String, Vec<usize>)], rng: &mut rng::Rng) -> Vec<Tensor> {
    layout
        .iter()
        .map(|(_, shape)| {
            if shape.len() == 2 {
                let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                let data = (0..shape[0] * shape[1])
                    .map(|_| rng.random_range(-limit..limit))
                    .collect();
                Tensor::new(shape.clone(), data).expect("layout shape")
            } else {
                Tensor::zeros(shape)
            }
        })
        .collect()
}

impl<T> NetWeights<T> {
    pub fn entries(&self) -> Vec<(String, &T)> {
        let mut out = Vec::new();
        layer_entries("module1", &self.module1, &mut out);
        layer_entries("module2", &self.module2, &mut out);
        layer_entries("module3", &self.module3, &mut out);
        layer_entries("module4", &self.module4, &mut out);
        out
    }

    pub fn entries_mut(&mut self) -> Vec<(String, &mut T)> {
        let mut out = Vec::new();
        layer_entries_mut("module1", &mut self.module1, &mut out);
        layer_entries_mut("module2", &mut self.module2, &mut out);
        layer_entries_mut("module3", &mut self.module3, &mut out);
        layer_entries_mut("module4", &mut self.module4, &mut out);
        out
    }

    /// Rebuilds the module structure from a flat list in `entries` order.
    pub fn assemble(config: &ArchitectureConfig, items: impl IntoIterator<Item = T>) -> Result<Self> {
        let widths = config.module_widths();
        let mut it = items.into_iter();
        let w = NetWeights {
            module1: collect_layers(widths[0].len() - 1, &mut it)?,
            module2: collect_layers(widths[1].len() - 1, &mut it)?,
            module3: collect_layers(widths[2].len() - 1, &mut it)?,
            module4: collect_layers(widths[3].len() - 1, &mut it)?,
        };
        if it.next().is_some() {
            return Err(Error::invalid("too many parameter tensors"));
        }
        Ok(w)
    }
}

/// Trainable estimator: architecture plus module weights.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorParams {
    pub config: ArchitectureConfig,
    pub weights: NetWeights<Tensor>,
}

pub const ESTIMATOR_KIND: &str = "amc-estimator";

impl EstimatorParams {
    /// Named parameter shapes implied by `config`.
    pub fn layout(config: &ArchitectureConfig) -> Vec<(String, Vec<usize>)> {
        let w = config.module_widths();
        let mut out = chain_layout::<ExchangeableWeights<Tensor>>("module1", &w[0]);
        out.extend(chain_layout::<DeepSetWeights<Tensor>>("module2", &w[1]));
        out.extend(chain_layout::<DeepSetWeights<Tensor>>("module3", &w[2]));
        out.extend(chain_layout::<DenseWeights<Tensor>>("module4", &w[3]));
        out
    }

    pub fn from_tensors(config: ArchitectureConfig, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let layout = Self::layout(&config);
        if layout.len() != tensors.len() {
            return Err(Error::invalid(format!(
                "expected {} tensors, got {}",
                layout.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in layout.iter().zip(&tensors) {
            if t.shape() != shape.as_slice() {
                return Err(Error::Shape {
                    op: "estimator params",
                    lhs: shape.clone(),
                    rhs: t.shape().to_vec(),
                })
                .map_err(|e| Error::invalid(format!("{name}: {e}")));
            }
        }
        Ok(EstimatorParams {
            config,
            weights: NetWeights::assemble(&config, tensors)?,
        })
    }

    pub fn zeros(config: ArchitectureConfig) -> Result<Self> {
        let tensors = Self::layout(&config)
            .iter()
            .map(|(_, s)| Tensor::zeros(s))
            .collect();
        Self::from_tensors(config, tensors)
    }

    /// Glorot-uniform mixing matrices (each matrix treated as its own
    /// fan-in x fan-out map) and zero biases, deterministic in `seed`.
    pub fn init(config: ArchitectureConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::from_seed(seed);
        let tensors = glorot_init(&Self::layout(&config), &mut rng);
        Self::from_tensors(config, tensors)
    }

    pub fn num_parameters(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let meta = serde_json::json!({ "architecture": self.config });
        checkpoint::save(dir, ESTIMATOR_KIND, meta, &self.prefixed("estimator/"))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let loaded = checkpoint::load(dir)?;
        Self::from_loaded(&loaded)
    }

    /// Reads the `estimator/` group of any checkpoint that records an
    /// `architecture` entry in its metadata.
    pub fn from_loaded(loaded: &checkpoint::Loaded) -> Result<Self> {
        let arch = loaded
            .manifest
            .metadata
            .get("architecture")
            .ok_or_else(|| Error::Checkpoint("metadata has no architecture".into()))?;
        let config: ArchitectureConfig = serde_json::from_value(arch.clone())?;
        let tensors = loaded.take_group("estimator/", &Self::layout(&config))?;
        Self::from_tensors(config, tensors)
    }

    pub(crate) fn prefixed(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        self.named_params()
            .into_iter()
            .map(|(n, t)| (format!("{prefix}{n}"), t))
            .collect()
    }
}

impl Parameterized for EstimatorParams {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        self.weights.entries()
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.weights.entries_mut()
    }
}
