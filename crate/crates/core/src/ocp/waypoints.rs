use nalgebra::DVector;

use crate::error::{check_dim, Result};
use crate::sysid::Encoder;

use super::{schedule_waypoints, WaypointSet};

/// One target observation with optional neighbors for a velocity target.
#[derive(Debug, Clone, PartialEq)]
pub struct WaypointTarget {
    pub observation: Vec<f64>,
    /// Frames one sample before and after the target.
    pub neighbors: Option<(Vec<f64>, Vec<f64>)>,
    pub is_static: bool,
}

impl WaypointTarget {
    pub fn fixed(observation: Vec<f64>) -> Self {
        WaypointTarget {
            observation,
            neighbors: None,
            is_static: true,
        }
    }
}

/// Encodes the targets (mean mode) and spreads them uniformly over the
/// horizon. Velocity targets are zero for static and final targets and for
/// targets without neighbor frames.
pub fn make_waypoints(encoder: &Encoder, targets: &[WaypointTarget], horizon: usize, dt: f64) -> Result<WaypointSet> {
    let tau = schedule_waypoints(targets.len(), horizon)?;
    let mut z = Vec::with_capacity(targets.len());
    let mut zdot = Vec::with_capacity(targets.len());
    let mut static_flags = Vec::with_capacity(targets.len());
    for (k, t) in targets.iter().enumerate() {
        check_dim("waypoint observation", encoder.input_dim(), t.observation.len())?;
        let mu = encoder.mean(&t.observation)?;
        let last = k + 1 == targets.len();
        let v = match (&t.neighbors, t.is_static || last) {
            (Some((prev, next)), false) => encoder.latent_velocity(prev, &t.observation, next, dt)?,
            _ => DVector::zeros(mu.len()),
        };
        z.push(mu);
        zdot.push(v);
        static_flags.push(t.is_static || last);
    }
    Ok(WaypointSet {
        tau,
        z,
        zdot,
        static_flags,
    })
}
