//! Kinematic-feature signed distance fields for hand-object reconstruction.
//!
//! The crate covers the geometry side of the pipeline: hand forward and
//! inverse kinematics, kinematic feature encodings, mesh SDF sampling, a
//! small trainable SDF decoder, marching-cubes extraction and the
//! reconstruction metrics.

pub mod ablation;
pub mod cli;
pub mod decoder;
pub mod error;
pub mod features;
pub mod geom;
pub mod kinematics;
pub mod mesh;
pub mod metrics;
pub mod reconstruct;
pub mod sdf;
pub mod synthetic;

pub use error::{Error, Result};
