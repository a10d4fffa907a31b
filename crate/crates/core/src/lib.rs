//! Decentralized stochastic optimization with node-specific sampling.
//!
//! The crate simulates `m` nodes that each hold a local objective `f_i` and a
//! noisy first-order oracle, communicating over a gossip graph. It provides:
//!
//! - [`topology`]: graphs, Metropolis-Hastings mixing matrices and their spectra.
//! - [`consensus`]: Chebyshev-accelerated gossip (`FastMix`) and its contraction bound.
//! - [`allocation`]: per-node batch sizes from heterogeneous noise levels.
//! - [`oracles`]: quadratic, logistic and zero-chain hard-instance problems.
//! - [`data`]: LIBSVM parsing and node partitioning.
//! - [`algorithms`]: D-NSS, D-NSS-VR and gradient-tracking baselines.
//! - [`experiment`]: configuration, seeded runs, CSV records and aggregation.
//!
//! Data-parallel loops (per-node sampling, gossip rows, seed sweeps) run on
//! rayon when the `parallel` feature is enabled; see [`Execution`].

// `!(x > 0.0)` is used on purpose: it rejects NaN along with the range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algorithms;
pub mod allocation;
pub mod consensus;
pub mod data;
pub mod experiment;
pub mod matrix;
pub mod oracles;
mod par;
pub mod topology;

pub use matrix::NodeMatrix;
pub use par::Execution;
