//! Latent dynamics identification and open-loop latent-space control for a
//! planar two-segment soft continuum robot.
//!
//! The crate is organized bottom-up:
//!
//! - [`nn`]: dense networks with exact reverse-mode and tangent derivatives.
//! - [`dynamics`]: Koopman, MLP and oscillator latent models with differentiable rollouts.
//! - [`plant`]: the synthetic robot, its renderer and dataset generation.
//! - [`sysid`]: encoder/decoder, training losses and the training loop.
//! - [`ocp`]: waypoint scheduling, the tracking cost and the single-shooting solver.
//! - [`eval`]: open-loop execution, metrics, trajectory suites, stress tests and ablations.
//! - [`formats`]: dataset, checkpoint, waypoint and report files.
//! - [`service`]: live-simulation sessions and the socket message protocol.

pub mod dynamics;
pub mod error;
pub mod eval;
pub mod formats;
pub mod nn;
pub mod ocp;
pub mod optim;
pub mod parallel;
pub mod plant;
pub mod service;
pub mod sysid;
pub mod tensor;

pub use error::{Error, Result};
