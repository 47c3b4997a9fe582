//! Differentiable material point simulation over 3D Gaussian particle
//! scenes: rendering, velocity and material fields, training and
//! evaluation.

pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod image;
pub mod material;
pub mod metrics;
pub mod mpm;
pub mod nn;
pub mod render;
pub mod scene;
pub mod selftest;
pub mod train;
pub mod velocity;

pub use error::{Error, Result};
