//! Stochastic Lagrangian flows over 2D periodic Navier-Stokes velocity
//! histories: backward/forward tracer ensembles, circulation martingales,
//! Weber velocities and stationarity of the kinetic-energy action.

pub mod action;
pub mod circulation;
pub mod cli;
pub mod error;
pub mod flow;
pub mod noise;
pub mod ns;
pub mod spectral;

pub use error::{Error, Result};
