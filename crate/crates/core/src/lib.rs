//! Koopman representations of controlled dynamical systems.
//!
//! The crate fits lifted linear models of several structural families to
//! snapshot data and measures, on state/input grids, how far a fitted model
//! is from being dynamically consistent with the underlying system.

pub mod consistency;
pub mod dynamics;
pub mod error;
pub mod formulations;
pub mod grid;
pub mod numerics;
pub mod observables;

pub use error::{Error, Result};
