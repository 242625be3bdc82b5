//! Coupled traffic, emission and roadside photochemistry simulation.
//!
//! The pipeline runs a second-order macroscopic traffic model on a single
//! road, turns cell speeds and accelerations into NOx emissions, integrates
//! a small photochemistry mechanism per road cell, and optionally disperses
//! the species over a 2-D slice or plane next to the road.

pub mod banded;
pub mod chemistry;
pub mod config;
pub mod dispersion;
pub mod emission;
pub mod error;
pub mod flux;
pub mod kinematics;
pub mod pipeline;
pub mod plot;
pub mod rosenbrock;
pub mod traffic;
pub mod trajectory;
pub mod units;
pub mod validation;

pub use error::{Error, Result};
