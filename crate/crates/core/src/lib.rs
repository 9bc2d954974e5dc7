//! Hard imitation-learning instances and the tooling to measure compounding error.
//!
//! The crate is layered bottom-up: [`matkit`] provides linear algebra, bump
//! functions and packings; [`funclass`] the nonparametric hard-function class and
//! its estimator; [`instances`] the stable, unstable and scalar constructions;
//! [`policies`] the policy zoo; [`simkit`] rollouts, risks and probes.

pub mod error;
pub mod funclass;
pub mod instances;
pub mod matkit;
pub mod policies;
pub mod rng;
pub mod simkit;

pub use error::{Error, Result};
pub use matkit::{Matrix, Vector};
