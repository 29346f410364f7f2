//! Mini-batch spectral clustering.
//!
//! Spectral clustering needs the top-k eigenvectors of the normalized graph
//! Laplacian `L = D^{-1/2} A D^{-1/2}`. Computing them exactly costs O(n^3)
//! time and O(n^2) space. This crate instead treats the eigenproblem as trace
//! maximization over the Stiefel manifold (matrices with orthonormal columns)
//! and solves it by adaptive stochastic gradient ascent:
//!
//! - sparse random probe vectors with `E[r r^T] = I` turn the exact gradient
//!   `L W` into an unbiased estimate that touches only a few columns of `L`
//!   per iteration, so each step is O(n);
//! - an Adagrad accumulator sets per-coordinate step sizes;
//! - a QR retraction maps each step back onto the manifold.
//!
//! The streaming variant (`mbsc-e`) never stores `L`: it precomputes the
//! degree vector in one O(n)-memory pass and recomputes requested Laplacian
//! columns on the fly.
//!
//! Alongside the optimizer the crate ships exact (dense Jacobi), power-method
//! and Nystrom baselines behind a common [`solver::SpectralSolver`] trait,
//! k-means for the final labeling, NMI scoring, closed-form FLOP accounting,
//! and a variance diagnostic that validates the probe estimator's covariance
//! against its analytic form.

pub mod baselines;
pub mod data;
pub mod error;
pub mod graph;
pub mod kmeans;
pub mod linalg;
pub mod mbsc;
pub mod metrics;
pub mod probes;
pub mod rng;
pub mod solver;
pub mod variance;

pub use error::{Error, Result};
pub use linalg::{DenseMatrix, DenseVector};
