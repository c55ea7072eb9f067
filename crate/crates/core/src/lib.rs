//! Multi-photon-subtracted thermal states.
//!
//! - [`genfunc`]: photon-number distributions through generating functions,
//!   photon subtraction, correlation functions.
//! - [`quadrature`]: homodyne quadrature densities, moments, Wigner functions.
//! - [`simulator`]: direct quadrature sampling and a time-domain cw
//!   experiment with APD heralding.
//! - [`reconstruct`]: moment and maximum-likelihood estimation of `(μ, a)`,
//!   Fisher errors, χ² and fidelity.
//! - [`cli`]: the `mpsts` command pipeline.

pub mod cli;
pub mod genfunc;
pub mod quadrature;
pub mod reconstruct;
pub mod simulator;
