//! The permutation- and location/scale-equivariant prediction network.

mod data;
mod layers;
mod model;
mod params;

pub use data::{rank_preprocess, rank_transform, standardize, standardize_features, Dataset, ZStatistic};
pub(crate) use data::column_stats;
pub use layers::{
    deep_set_layer, dense_layer, exchangeable_matrix_layer, DeepSetWeights, DenseWeights,
    ExchangeableWeights, LayerFields,
};
pub(crate) use layers::stack;
pub use model::{forward, symmetrize, Symmetrized};
pub use params::{ArchitectureConfig, EstimatorParams, NetWeights, Parameterized, ESTIMATOR_KIND};
pub(crate) use params::{chain_layout, collect_layers, glorot_init};
