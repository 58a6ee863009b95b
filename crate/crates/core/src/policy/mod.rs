//! Permutation-equivariant policy/value network.

pub mod features;
pub mod io;
pub mod network;
pub mod nn;
pub mod params;

pub use features::{count_features, edge_key, embed_blocks, tableau_count_features, CountFeatures};
pub use io::{load_weights, read_weights, save_weights, write_weights};
pub use network::{
    aggregate, backward, cz_logit, edge_projections, forward, forward_batch, forward_train,
    message_round, readout, BatchOutput, ForwardCache, Inputs, PolicyOutput,
};
pub use nn::Scalar;
pub use params::{Layout, PolicyWeights, TensorSpec};
