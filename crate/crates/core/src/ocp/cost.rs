use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dynamics::{DynModel, LatentState};
use crate::error::{check_dim, Result};

use super::{active_target, OcpProblem};

/// Squared norm of the part of each increment exceeding its bound.
pub fn increment_penalty(du: &[f64], du_max: &[f64]) -> f64 {
    du.iter()
        .zip(du_max)
        .map(|(d, m)| {
            let e = (d.abs() - m).max(0.0);
            e * e
        })
        .sum()
}

/// Weighted cost terms and their sum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub track: f64,
    pub track_velocity: f64,
    pub waypoint: f64,
    pub waypoint_velocity: f64,
    pub terminal: f64,
    pub terminal_velocity: f64,
    pub increment: f64,
    pub increment_excess: f64,
    pub total: f64,
}

impl CostBreakdown {
    fn sum(&mut self) {
        self.total = self.track
            + self.track_velocity
            + self.waypoint
            + self.waypoint_velocity
            + self.terminal
            + self.terminal_velocity
            + self.increment
            + self.increment_excess;
    }
}

/// Cost of `useq` (length `T`, `useq[0]` being the fixed first command).
pub fn ocp_cost(dynamics: &DynModel, problem: &OcpProblem, useq: &[DVector<f64>]) -> Result<(CostBreakdown, Vec<LatentState>)> {
    let (c, _, states) = evaluate(dynamics, problem, useq, false)?;
    Ok((c, states))
}

/// Cost and its gradient with respect to every command in `useq`.
pub fn ocp_cost_and_gradient(
    dynamics: &DynModel,
    problem: &OcpProblem,
    useq: &[DVector<f64>],
) -> Result<(CostBreakdown, Vec<DVector<f64>>)> {
    let (c, g, _) = evaluate(dynamics, problem, useq, true)?;
    Ok((c, g))
}

fn evaluate(
    dynamics: &DynModel,
    problem: &OcpProblem,
    useq: &[DVector<f64>],
    want_grad: bool,
) -> Result<(CostBreakdown, Vec<DVector<f64>>, Vec<LatentState>)> {
    let t = problem.horizon;
    check_dim("control sequence", t, useq.len())?;
    let w = &problem.weights;
    let wp = &problem.waypoints;
    let k_count = wp.len() as f64;
    let inv_s2 = 1.0 / (problem.latent_scale * problem.latent_scale);
    let roll = dynamics.rollout(&problem.initial, useq)?;
    let n = problem.initial.dim();
    let mut c = CostBreakdown::default();
    let mut cot = if want_grad { vec![DVector::zeros(2 * n); t] } else { Vec::new() };

    // Adds weight * |x - target|^2 / s^2 to `term` and its gradient to the cotangent.
    let mut add = |term: &mut f64, i: usize, x: &DVector<f64>, target: &DVector<f64>, weight: f64, velocity: bool| {
        if weight == 0.0 {
            return;
        }
        let e = x - target;
        *term += weight * e.norm_squared() * inv_s2;
        if want_grad {
            let off = if velocity { n } else { 0 };
            let mut rows = cot[i - 1].rows_mut(off, n);
            rows.axpy(2.0 * weight * inv_s2, &e, 1.0);
        }
    };

    for i in 1..=t {
        let s = &roll.states[i - 1];
        let k = active_target(i, &wp.tau, w.mode);
        add(&mut c.track, i, &s.z, &wp.z[k], w.w_q / t as f64, false);
        add(&mut c.track_velocity, i, &s.zdot, &wp.zdot[k], w.w_qdot / t as f64, true);
    }
    for (k, &tau) in wp.tau.iter().enumerate() {
        let s = &roll.states[tau - 1];
        add(&mut c.waypoint, tau, &s.z, &wp.z[k], w.w_qk / k_count, false);
        add(&mut c.waypoint_velocity, tau, &s.zdot, &wp.zdot[k], w.w_qdot_k / k_count, true);
    }
    let kf = active_target(t, &wp.tau, w.mode);
    let last = &roll.states[t - 1];
    add(&mut c.terminal, t, &last.z, &wp.z[kf], w.w_qf, false);
    add(&mut c.terminal_velocity, t, &last.zdot, &wp.zdot[kf], w.w_qdot_f, true);

    let mut gu = if want_grad {
        dynamics.rollout_vjp(&roll.tape, &cot)?.du
    } else {
        Vec::new()
    };
    if t > 1 {
        let scale = 1.0 / (t - 1) as f64;
        for i in 1..t {
            let du = &useq[i] - &useq[i - 1];
            c.increment += w.w_r * scale * du.norm_squared();
            c.increment_excess += w.w_du * scale * increment_penalty(du.as_slice(), &w.du_max);
            if want_grad {
                let g = DVector::from_fn(du.len(), |j, _| {
                    let d = du[j];
                    let excess = (d.abs() - w.du_max[j]).max(0.0);
                    2.0 * scale * (w.w_r * d + w.w_du * excess * d.signum())
                });
                gu[i] += &g;
                gu[i - 1] -= &g;
            }
        }
    }
    c.sum();
    let mut states = Vec::with_capacity(t + 1);
    states.push(problem.initial.clone());
    states.extend(roll.states);
    Ok((c, gu, states))
}
