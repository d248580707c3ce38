//! Simulated multi-camera tactile sensor: geometry, contact oracle, particle
//! rendering, datasets, training and recalibration.

pub mod config;
pub mod contact;
pub mod dataset;
pub mod dimensioning;
pub mod elastic;
mod error;
pub mod geometry;
pub mod multicontact;
pub mod optics;
pub mod recalibrate;
pub mod train;

pub use error::{Error, Result};
