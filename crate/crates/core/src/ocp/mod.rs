//! Single-shooting open-loop control in latent space.
//!
//! A control sequence `u(0..T)` is rolled out through the learned dynamics
//! from a known initial latent state, and `u(1..T)` is optimized by projected
//! adaptive-moment gradient descent on a waypoint tracking cost. `u(0)` stays
//! fixed at the pressure that holds the initial configuration.

mod cost;
mod solver;
mod waypoints;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dynamics::LatentState;
use crate::error::{Error, Result};
use crate::plant::DATASET_MAX_PRESSURE;
use crate::tensor;

pub use cost::{increment_penalty, ocp_cost, ocp_cost_and_gradient, CostBreakdown};
pub use solver::{solve_many, solve_ocp, OcpSolution};
pub use waypoints::{make_waypoints, WaypointTarget};

/// Horizon indices of `k` waypoints spread uniformly over `1..=t`, rounding
/// half up; a single waypoint sits at `t`.
pub fn schedule_waypoints(k: usize, t: usize) -> Result<Vec<usize>> {
    if k == 0 || k > t {
        return Err(Error::InvalidArgument(format!("cannot place {k} waypoints on a horizon of {t}")));
    }
    if k == 1 {
        return Ok(vec![t]);
    }
    let den = k - 1;
    Ok((0..k).map(|j| 1 + (2 * j * (t - 1) + den) / (2 * den)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    /// First waypoint at or after the step.
    #[default]
    Next,
    /// Nearest waypoint, ties toward the earlier one.
    Closest,
}

/// Zero-based index of the waypoint active at step `i` (1-based).
pub fn active_target(i: usize, tau: &[usize], mode: TargetMode) -> usize {
    match mode {
        TargetMode::Next => tau.iter().position(|&t| t >= i).unwrap_or(tau.len() - 1),
        TargetMode::Closest => {
            let mut best = 0;
            for (k, &t) in tau.iter().enumerate() {
                if t.abs_diff(i) < tau[best].abs_diff(i) {
                    best = k;
                }
            }
            best
        }
    }
}

/// Latent targets and where on the horizon they apply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointSet {
    /// 1-based horizon indices, strictly increasing, last equal to `T`.
    pub tau: Vec<usize>,
    #[serde(with = "tensor::dvec_list")]
    pub z: Vec<DVector<f64>>,
    #[serde(with = "tensor::dvec_list")]
    pub zdot: Vec<DVector<f64>>,
    pub static_flags: Vec<bool>,
}

impl WaypointSet {
    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }

    pub fn validate(&self, horizon: usize, latent_dim: usize) -> Result<()> {
        let k = self.tau.len();
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if k == 0 {
            return bad("no waypoints".into());
        }
        if self.z.len() != k || self.zdot.len() != k || self.static_flags.len() != k {
            return bad("waypoint fields have different lengths".into());
        }
        if self.tau.windows(2).any(|w| w[1] <= w[0]) || self.tau[0] == 0 {
            return bad("waypoint indices must be positive and strictly increasing".into());
        }
        if *self.tau.last().unwrap() > horizon {
            return bad(format!("last waypoint beyond horizon {horizon}"));
        }
        if self.z.iter().chain(&self.zdot).any(|v| v.len() != latent_dim) {
            return bad(format!("waypoint latents must have dimension {latent_dim}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub w_q: f64,
    pub w_qdot: f64,
    pub w_qk: f64,
    pub w_qdot_k: f64,
    pub w_qf: f64,
    pub w_qdot_f: f64,
    pub w_r: f64,
    pub w_du: f64,
    /// Per-channel increment bound (kPa per step).
    pub du_max: [f64; 4],
    pub mode: TargetMode,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights {
            w_q: 1.0,
            w_qdot: 0.0,
            w_qk: 0.0,
            w_qdot_k: 0.0,
            w_qf: 0.0,
            w_qdot_f: 0.0,
            w_r: 1e-3,
            w_du: 1.0,
            du_max: [10.0; 4],
            mode: TargetMode::Next,
        }
    }
}

impl CostWeights {
    /// Tracking weights `(w_Q, w_Qdot, w_Qk, w_Qdot_k, w_Qf, w_Qdot_f)` with the
    /// default increment terms.
    pub fn tracking(w: [f64; 6]) -> Self {
        CostWeights {
            w_q: w[0],
            w_qdot: w[1],
            w_qk: w[2],
            w_qdot_k: w[3],
            w_qf: w[4],
            w_qdot_f: w[5],
            ..CostWeights::default()
        }
    }

    /// All eight weights multiplied by `factor`.
    pub fn scaled(mut self, factor: f64) -> Self {
        for w in [
            &mut self.w_q,
            &mut self.w_qdot,
            &mut self.w_qk,
            &mut self.w_qdot_k,
            &mut self.w_qf,
            &mut self.w_qdot_f,
            &mut self.w_r,
            &mut self.w_du,
        ] {
            *w *= factor;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ws = [self.w_q, self.w_qdot, self.w_qk, self.w_qdot_k, self.w_qf, self.w_qdot_f, self.w_r, self.w_du];
        if ws.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument("cost weights must be finite and non-negative".into()));
        }
        if self.du_max.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::InvalidArgument("increment bounds must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub iterations: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub p_min: f64,
    pub p_max: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            iterations: 500,
            learning_rate: 0.5,
            seed: 0,
            p_min: 0.0,
            p_max: DATASET_MAX_PRESSURE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcpProblem {
    pub initial: LatentState,
    /// Fixed first command, holding the initial configuration.
    #[serde(with = "tensor::dvec")]
    pub u0: DVector<f64>,
    pub horizon: usize,
    pub waypoints: WaypointSet,
    pub weights: CostWeights,
    /// Latent scale statistic dividing all state and velocity errors.
    pub latent_scale: f64,
    pub settings: SolverSettings,
}

impl OcpProblem {
    pub fn validate(&self, latent_dim: usize, input_dim: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.horizon == 0 {
            return bad("horizon must be positive".into());
        }
        crate::error::check_dim("initial latent", latent_dim, self.initial.dim())?;
        crate::error::check_dim("first command", input_dim, self.u0.len())?;
        self.waypoints.validate(self.horizon, latent_dim)?;
        self.weights.validate()?;
        if !(self.latent_scale.is_finite() && self.latent_scale > 0.0) {
            return bad("latent scale must be positive".into());
        }
        let s = &self.settings;
        if !(s.p_min < s.p_max) || self.u0.iter().any(|u| *u < s.p_min || *u > s.p_max) {
            return bad("first command outside the pressure bounds".into());
        }
        Ok(())
    }

    /// Constant-hold initialization `u(i) = u(0)`.
    pub fn initial_controls(&self) -> Vec<DVector<f64>> {
        vec![self.u0.clone(); self.horizon]
    }
}
