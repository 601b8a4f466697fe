//! Learning pairwise interaction kernels of first-order agent systems.
//!
//! A collection of `N` agents with positions `x_i` in `R^d`, each carrying a
//! type `k_i` from a small set of `K` types, evolves by
//!
//! ```text
//! dx_i/dt = sum_{i'} (1 / N_{k_{i'}}) phi_{k_i k_{i'}}(|x_{i'} - x_i|) (x_{i'} - x_i)
//! ```
//!
//! where `N_k` is the number of agents of type `k` and the `phi_{k k'}` are
//! scalar interaction kernels depending only on pairwise distance. Given
//! observed trajectories of such a system, this crate estimates the kernels
//! by least squares over spaces of piecewise polynomials, quantifies the
//! estimate's error in a norm weighted by the distribution of observed
//! pairwise distances, checks the learnability (coercivity) of the problem
//! on a given trajectory ensemble, and measures how well trajectories of the
//! estimated system track trajectories of the true one.
//!
//! The crate is organized bottom-up:
//!
//! * [`integrate`] - adaptive Runge-Kutta integration with dense output.
//! * [`kernels`] - a library of interaction kernels and initial-condition
//!   samplers, plus a registry for configuration files.
//! * [`dynamics`] - system description, trajectory simulation, weighted
//!   state norms, finite-difference velocities.
//! * [`measure`] - empirical distributions of pairwise distances and the
//!   weighted L2 norms built on them.
//! * [`hypothesis`] - piecewise-polynomial hypothesis spaces and the
//!   estimator type, including post-hoc smoothing.
//! * [`regression`] - assembly and solution of the least-squares normal
//!   system, streamed over trajectories.
//! * [`coercivity`] - smallest-eigenvalue learnability estimates on an
//!   orthonormalized basis.
//! * [`evaluation`] - trajectory prediction errors, observation noise,
//!   convergence-rate fits.
//! * [`config`] / [`benchmark`] - experiment configuration and the
//!   end-to-end pipeline used by the command-line tool.
//! * [`io`] - CSV / JSON serialization of trajectories, measures,
//!   estimators, and result tables.

pub mod benchmark;
pub mod coercivity;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod evaluation;
pub mod hypothesis;
pub mod integrate;
pub mod io;
pub mod kernels;
pub mod measure;
pub mod regression;
pub mod rng;

pub use error::{Error, Result};
