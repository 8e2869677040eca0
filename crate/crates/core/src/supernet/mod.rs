//! Differentiable realization of a masked search space.

mod config;
mod mixing;
mod network;
mod ops;
mod params;

pub use config::{ChannelSampling, Readout, SupernetConfig};
pub use mixing::{channel_selection, masked_mix, masked_mix_partial, mix_weights};
pub use network::{ArchParams, ForwardOptions, Supernet, ALPHA_ID_BASE};
pub use ops::candidate_op;
pub use params::{fnv1a, init_tensor, ParamInit, ParamStore};
