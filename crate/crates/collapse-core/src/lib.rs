//! Simulation of quantum measurement as a soft final-state interaction with
//! a stochastic macrosystem.
//!
//! A measurement is modeled as a chain of stochastic mapping steps acting on
//! the microsystem's density matrix. Each step reweights the state by random
//! enhancement/inhibition factors, which drives a zero-drift random walk of
//! the Born weights on the probability simplex. Single walks collapse into a
//! simplex corner with the initial weights as hitting probabilities, while
//! ensemble averages reproduce the usual decoherence of the off-diagonal
//! elements.
//!
//! The crates' modules follow that structure:
//!
//! - [`state`]: validated state, density-matrix, simplex, and schedule types;
//! - [`mapping`]: one stochastic step (factors, probabilities, samplers,
//!   updates, exact one-step moments);
//! - [`walker`]: single walks to collapse and deterministic ensembles;
//! - [`oracle`]: exhaustive enumeration over all sign configurations, the
//!   decoherence closed form, and the soft-photon denominator identity;
//! - [`two_state`]: the symmetric two-channel model in closed form;
//! - [`correlations`]: the two-sign joint distribution and the two-pointer
//!   profile;
//! - [`diffusion`]: covariance fields, entropy production, an SDE sampler,
//!   and the discrete-vs-continuum comparison.

pub mod correlations;
pub mod diffusion;
pub mod error;
pub mod mapping;
pub mod numeric;
pub mod oracle;
pub mod state;
pub mod two_state;
pub mod walker;

pub use error::{Error, Result};
pub use state::{
    DensityMatrix, EpsilonDraw, NoiseSchedule, SimplexPoint, StateVector, UpdateMode,
};
