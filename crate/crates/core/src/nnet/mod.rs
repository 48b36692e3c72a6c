//! Small dense-network stack for the actor-critic policy.

pub mod adam;
pub mod checkpoint;
pub mod dense;
pub mod dist;
pub mod policy;

pub use adam::{clip_grad_norm, Adam, AdamConfig};
pub use checkpoint::Checkpoint;
pub use dense::{DenseArray, LayerSpec};
pub use dist::{gaussian_entropy, gaussian_log_prob, sample, ActionDistribution, ACTION_DIM};
pub use policy::{ForwardCache, NetworkConfig, ObservationBatch, OutputGrad, PolicyParams, TrialCache};
