//! Coded branching-tree Monte Carlo for systems of nonlinear parabolic PDEs
//! coupled with a Poisson equation, and the neural regression built on it.

pub mod codes;
pub mod error;
pub mod flows;
pub mod metrics;
pub mod model;
pub mod multiindex;
pub mod network;
pub mod oracle;
pub mod regression;
pub mod sampler;
pub mod selftest;
pub mod taylor;

pub use error::{Error, Result};
pub use multiindex::MultiIndex;
