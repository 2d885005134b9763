use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dynamics::{DynModel, LatentState};
use crate::error::Result;
use crate::parallel::{self, Execution};
use crate::plant::{mse, Dataset, PlantParams, CHANNELS, PLANT_DT, REST_PRESSURE};
use crate::sysid::Checkpoint;

use super::execute::execute_open_loop;
use super::tasks::setpoint_targets;

pub const HOLD_STEPS: usize = 500;
pub const RAMP_STEPS: usize = 100;
pub const RAMP_HOLD_STEPS: usize = 400;
pub const RELEASE_EXCITATION_STEPS: usize = 250;
pub const RELEASE_STEPS: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldSeries {
    pub frame: usize,
    pub pressure: [f64; CHANNELS],
    /// Decoded-prediction MSE to the held observation after each step.
    pub mse: Vec<f64>,
}

impl HoldSeries {
    pub fn drift(&self) -> f64 {
        self.mse.iter().copied().fold(0.0, f64::max)
    }
}

fn decoded_mse(ck: &Checkpoint, states: &[LatentState], reference: &[f64]) -> Result<Vec<f64>> {
    states
        .iter()
        .map(|s| Ok(mse(&ck.model.decoder.decode(&s.z)?, reference)))
        .collect()
}

/// Encodes settled frames, holds their pressures for `steps` model steps and
/// tracks the decoded prediction against the encoded frame.
pub fn stress_static_hold(ck: &Checkpoint, data: &Dataset, n_states: usize, steps: usize, seed: u64, exec: Execution) -> Result<Vec<HoldSeries>> {
    let picks = setpoint_targets(data, n_states, seed)?;
    parallel::map_indexed(exec, &picks, |_, &(frame, pressure)| {
        let o = data.observation(frame).pixels;
        let x0 = LatentState::at_rest(ck.model.encoder.mean(&o)?);
        let u = DVector::from_column_slice(&pressure);
        let states = ck.model.dynamics.rollout(&x0, &vec![u; steps])?.states;
        Ok(HoldSeries {
            frame,
            pressure,
            mse: decoded_mse(ck, &states, &o)?,
        })
    })
    .into_iter()
    .collect()
}

/// Cosine ramp from `from` to `to` over `steps` samples followed by `hold`
/// samples at `to`; the first hold sample equals `to` exactly.
pub fn cosine_ramp(from: [f64; CHANNELS], to: [f64; CHANNELS], steps: usize, hold: usize) -> Vec<[f64; CHANNELS]> {
    (0..steps + hold)
        .map(|i| {
            let s = if i >= steps {
                1.0
            } else {
                0.5 - 0.5 * (std::f64::consts::PI * i as f64 / steps as f64).cos()
            };
            std::array::from_fn(|c| from[c] * (1.0 - s) + to[c] * s)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RampResult {
    pub commands: Vec<[f64; CHANNELS]>,
    /// Decoded prediction against the plant executing the same commands.
    pub mse: Vec<f64>,
    /// Excitation force `B(u)` per step (oscillator models only).
    pub excitation_force: Vec<Vec<f64>>,
    /// Stiffness force `-K (z - z0)` per step (oscillator models only).
    pub stiffness_force: Vec<Vec<f64>>,
    /// `|B(u) - K (z - z0)| / |B(u)|` at the final step (oscillator models only).
    pub balance_residual: Option<f64>,
}

/// Ramps from rest to an (extrapolated) pressure `target` and holds it.
pub fn stress_ramp_extrapolate(ck: &Checkpoint, params: &PlantParams, target: [f64; CHANNELS]) -> Result<RampResult> {
    let commands = cosine_ramp([REST_PRESSURE; CHANNELS], target, RAMP_STEPS, RAMP_HOLD_STEPS);
    let peak = target.iter().copied().fold(params.max_pressure, f64::max);
    let plant = params.clone().with_max_pressure(peak);
    let run = execute_open_loop(&plant, &plant.rest_state(), &commands);
    let useq: Vec<DVector<f64>> = commands.iter().map(|c| DVector::from_column_slice(c)).collect();
    let states = ck.model.dynamics.rollout(&LatentState::at_rest(ck.z0().clone()), &useq)?.states;
    let mut out = RampResult {
        mse: Vec::with_capacity(states.len()),
        commands,
        excitation_force: Vec::new(),
        stiffness_force: Vec::new(),
        balance_residual: None,
    };
    for (s, frame) in states.iter().zip(&run.frames[1..]) {
        out.mse.push(mse(&ck.model.decoder.decode(&s.z)?, frame));
    }
    if let DynModel::Oscillator(osc) = &ck.model.dynamics {
        for (s, u) in states.iter().zip(&useq) {
            out.excitation_force.push(osc.excitation_force(u).as_slice().to_vec());
            out.stiffness_force.push(osc.stiffness_force(&s.z).as_slice().to_vec());
        }
        let b = DVector::from_vec(out.excitation_force.last().unwrap().clone());
        let k = DVector::from_vec(out.stiffness_force.last().unwrap().clone());
        out.balance_residual = Some((&b + &k).norm() / b.norm());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReleaseResult {
    pub commands: Vec<[f64; CHANNELS]>,
    /// Decoded prediction against the rest observation after each step.
    pub mse_to_rest: Vec<f64>,
    /// Index of the first rest command.
    pub release_start: usize,
}

impl ReleaseResult {
    fn window_mean(&self, from: usize, len: usize) -> f64 {
        let w = &self.mse_to_rest[from..from + len];
        w.iter().sum::<f64>() / len as f64
    }

    /// Mean over the first second after the release.
    pub fn first_second_mean(&self) -> f64 {
        self.window_mean(self.release_start, (1.0 / PLANT_DT) as usize)
    }

    /// Mean over the last second of the series.
    pub fn last_second_mean(&self) -> f64 {
        let n = (1.0 / PLANT_DT) as usize;
        self.window_mean(self.mse_to_rest.len() - n, n)
    }

    pub fn final_mse(&self) -> f64 {
        *self.mse_to_rest.last().unwrap()
    }
}

/// Antagonistic cosine excitation of both segments, peaking as it is
/// released to the rest command.
pub fn release_commands(rest: [f64; CHANNELS]) -> Vec<[f64; CHANNELS]> {
    let amplitude = 40.0;
    let freq = 0.5;
    let mut out: Vec<[f64; CHANNELS]> = (0..RELEASE_EXCITATION_STEPS)
        .map(|i| {
            let t = (i + 1) as f64 * PLANT_DT;
            let a = amplitude * 0.5 * (1.0 - (std::f64::consts::TAU * freq * t).cos());
            [rest[0] + a, rest[1] - a, rest[2] - a, rest[3] + a]
        })
        .collect();
    out.extend(std::iter::repeat_n(rest, RELEASE_STEPS));
    out
}

/// Excites the model from rest, releases it and tracks the decoded
/// prediction against the rest observation.
pub fn stress_release(ck: &Checkpoint) -> Result<ReleaseResult> {
    let rest: [f64; CHANNELS] = std::array::from_fn(|c| ck.rest.command[c]);
    let commands = release_commands(rest);
    let useq: Vec<DVector<f64>> = commands.iter().map(|c| DVector::from_column_slice(c)).collect();
    let states = ck.model.dynamics.rollout(&LatentState::at_rest(ck.z0().clone()), &useq)?.states;
    Ok(ReleaseResult {
        mse_to_rest: decoded_mse(ck, &states, &ck.rest.observation)?,
        commands,
        release_start: RELEASE_EXCITATION_STEPS,
    })
}
