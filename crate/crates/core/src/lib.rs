//! Closed nutrient–phytoplankton–zooplankton model with a maturity-structured
//! juvenile zooplankton class.
//!
//! The juvenile transport equation reduces to a threshold (state-dependent)
//! delay, and a state-dependent change of time variable turns that into a
//! fixed delay `T = m/R*`. This crate provides:
//!
//! * [`model`]: parameters, functional responses and the fixed-delay right-hand side,
//! * [`equilibria`]: biomass thresholds and the equilibria e0, E1, E2,
//! * [`linearize`]: the characteristic function and root location,
//! * [`continuation`]: pseudo-arclength tracing of zero-real-part boundaries in `(m, N_T)`,
//! * [`simulate`]: a second-order fixed-step integrator with diagnostics.

pub mod continuation;
pub mod equilibria;
pub mod error;
pub mod linearize;
pub mod model;
mod roots;
pub mod simulate;

pub use error::{Error, Result};
pub use model::{ModelParams, ResponseKind, StateNPZ};
