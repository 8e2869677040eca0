//! Zero-shot pruning of cell-based architecture search spaces followed by
//! masked one-shot differentiable search.
//!
//! The pipeline is:
//!
//! 1. describe a [`SearchSpace`] (DARTS cells or a small chain for oracle
//!    studies),
//! 2. prune it with [`pruning::partial_prune`] (training-free ranking) or
//!    [`pruning::random_mask`],
//! 3. run [`oneshot::run_search`] on the masked supernetwork, where masked
//!    candidates never execute,
//! 4. account for memory and compute analytically with [`accounting`].
//!
//! [`oracle`] enumerates small spaces exhaustively to check that pruning
//! keeps good architectures.

pub mod accounting;
pub mod autodiff;
pub mod cli;
pub mod config;
pub mod container;
pub mod data;
pub mod error;
pub mod oneshot;
pub mod oracle;
pub mod pruning;
pub mod ranking;
pub mod search_space;
pub mod supernet;
pub mod tensor;

pub use error::{Error, Result};
pub use search_space::{CellKind, Genotype, MixingSet, OpKind, SearchSpace};
pub use tensor::Tensor;
