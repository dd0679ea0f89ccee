//! Nesterov-accelerated distributed optimization over directed graphs with
//! quantized communication.
//!
//! Every outer iteration runs a local look-ahead and gradient step on each
//! node, quantizes the result onto a common lattice, and then runs a
//! finite-time quantized average consensus protocol (token random walks plus
//! max/min stopping) so that all nodes agree exactly on the next iterate.
//!
//! Modules:
//! - [`digraph`]: directed graphs, strong connectivity, diameter, generation.
//! - [`quantize`]: the floor lattice quantizer and exact quantization levels.
//! - [`objective`]: quadratic sensor-fusion costs and curvature constants.
//! - [`ftqac`]: the token-passing quantized average consensus protocol.
//! - [`qanm`]: the accelerated outer loop.
//! - [`analysis`]: convergence certificates, error metrics and runtime checks.
//! - [`harness`]: experiment configuration, orchestration and CSV export.

pub mod analysis;
pub mod digraph;
mod error;
pub mod ftqac;
pub mod harness;
pub mod objective;
pub mod qanm;
pub mod quantize;
pub(crate) mod rng;

pub use error::{Error, Result};

/// A node's p-dimensional decision variable.
pub type StateVector = nalgebra::DVector<f64>;

/// Square cost matrix.
pub type Matrix = nalgebra::DMatrix<f64>;
