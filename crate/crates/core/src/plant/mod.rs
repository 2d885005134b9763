//! Synthetic two-segment planar soft continuum robot.
//!
//! Four pressure channels form two antagonistic pairs, one per segment. The
//! pair difference bends its segment, the pair mean elongates it. Chamber
//! pressures follow commands through a first-order lag, and the mechanics are
//! integrated semi-implicitly with several substeps per 20 ms sample.

mod dataset;
mod render;

use serde::{Deserialize, Serialize};

pub use dataset::{generate_dataset, static_frames, Dataset, ExcitationProfile};
pub(crate) use dataset::{command_profile, REST_SECONDS};
pub use render::{mse, render, Observation};

pub const CHANNELS: usize = 4;
/// Upper end of the pressure range used for data collection (kPa).
pub const DATASET_MAX_PRESSURE: f64 = 86.0;
/// Midpoint pressure on every channel; zero net torque.
pub const REST_PRESSURE: f64 = 43.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantParams {
    /// Bending stiffness per segment.
    pub stiffness: [f64; 2],
    pub damping: [f64; 2],
    pub inertia: [f64; 2],
    /// Torque per kPa of antagonistic pressure difference.
    pub gain: [f64; 2],
    /// Fraction of the distal torque carried by the base segment.
    pub coupling: f64,
    /// Constant torque offset per segment (gravity stand-in, zero by default).
    pub bias_torque: [f64; 2],
    /// Unstretched segment length in pixels.
    pub segment_length: f64,
    /// Relative elongation at a pair mean of `DATASET_MAX_PRESSURE`.
    pub elongation: f64,
    pub elongation_frequency_hz: f64,
    pub elongation_damping_ratio: f64,
    /// Actuator lag time constant in seconds; zero disables the lag.
    pub lag: f64,
    /// Commands are clamped to `[0, max_pressure]`.
    pub max_pressure: f64,
    pub substeps: usize,
    pub height: usize,
    pub width: usize,
    /// Gaussian cross-section standard deviation of the drawn arm (pixels).
    pub line_sigma: f64,
    /// Row coordinate of the fixed base (pixels from the top edge).
    pub base_row: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        let omega = [
            2.0 * std::f64::consts::PI * 1.2,
            2.0 * std::f64::consts::PI * 1.6,
        ];
        let stiffness = [1.0, 1.0];
        let inertia = [
            stiffness[0] / (omega[0] * omega[0]),
            stiffness[1] / (omega[1] * omega[1]),
        ];
        let zeta = 0.2;
        let damping = [
            2.0 * zeta * (stiffness[0] * inertia[0]).sqrt(),
            2.0 * zeta * (stiffness[1] * inertia[1]).sqrt(),
        ];
        PlantParams {
            stiffness,
            damping,
            inertia,
            gain: [1.0 / DATASET_MAX_PRESSURE, 1.0 / DATASET_MAX_PRESSURE],
            coupling: 0.3,
            bias_torque: [0.0, 0.0],
            segment_length: 9.5,
            elongation: 0.12,
            elongation_frequency_hz: 2.5,
            elongation_damping_ratio: 0.8,
            lag: 0.08,
            max_pressure: DATASET_MAX_PRESSURE,
            substeps: 4,
            height: 32,
            width: 32,
            line_sigma: 0.9,
            base_row: 2.0,
        }
    }
}

impl PlantParams {
    /// Same plant with the pressure clamp raised to `max_pressure` (for extrapolated targets).
    pub fn with_max_pressure(mut self, max_pressure: f64) -> Self {
        self.max_pressure = max_pressure;
        self
    }

    pub fn without_lag(mut self) -> Self {
        self.lag = 0.0;
        self
    }

    fn torques(&self, p: &[f64; CHANNELS]) -> [f64; 2] {
        let distal = self.gain[1] * (p[2] - p[3]);
        let base = self.gain[0] * (p[0] - p[1]) + self.coupling * distal;
        [base + self.bias_torque[0], distal + self.bias_torque[1]]
    }

    fn elongation_targets(&self, p: &[f64; CHANNELS]) -> [f64; 2] {
        [
            self.elongation * 0.5 * (p[0] + p[1]) / DATASET_MAX_PRESSURE,
            self.elongation * 0.5 * (p[2] + p[3]) / DATASET_MAX_PRESSURE,
        ]
    }

    /// Static configuration held by constant actual pressures `p`.
    pub fn equilibrium(&self, p: [f64; CHANNELS]) -> PlantState {
        let tau = self.torques(&p);
        PlantState {
            q: [tau[0] / self.stiffness[0], tau[1] / self.stiffness[1]],
            qdot: [0.0; 2],
            ext: self.elongation_targets(&p),
            ext_rate: [0.0; 2],
            p_act: p,
        }
    }

    /// Equilibrium under the rest pressure on every channel.
    pub fn rest_state(&self) -> PlantState {
        self.equilibrium([REST_PRESSURE; CHANNELS])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    /// Total bend angle of each segment (rad).
    pub q: [f64; 2],
    pub qdot: [f64; 2],
    /// Relative elongation of each segment.
    pub ext: [f64; 2],
    pub ext_rate: [f64; 2],
    /// Actual chamber pressures acting during the current sample interval (kPa).
    pub p_act: [f64; CHANNELS],
}

impl PlantState {
    pub fn is_finite(&self) -> bool {
        self.q
            .iter()
            .chain(&self.qdot)
            .chain(&self.ext)
            .chain(&self.ext_rate)
            .chain(&self.p_act)
            .all(|v| v.is_finite())
    }

    /// Shadow energy of the substep integrator about the equilibrium of the
    /// current pressures. It is exactly conserved by the undamped scheme and
    /// non-increasing with damping, for constant pressures.
    pub fn energy(&self, params: &PlantParams) -> f64 {
        let h = PLANT_DT / params.substeps as f64;
        let eq = params.equilibrium(self.p_act);
        let mut e = 0.0;
        for i in 0..2 {
            let w2 = params.stiffness[i] / params.inertia[i];
            let x = self.q[i] - eq.q[i];
            let v = self.qdot[i];
            e += 0.5 * params.inertia[i] * (v * v + w2 * x * x - h * w2 * x * v);
            let we = 2.0 * std::f64::consts::PI * params.elongation_frequency_hz;
            let xe = self.ext[i] - eq.ext[i];
            let ve = self.ext_rate[i];
            e += 0.5 * (ve * ve + we * we * xe * xe - h * we * we * xe * ve);
        }
        e
    }
}

/// Sample period of the plant (50 Hz).
pub const PLANT_DT: f64 = 0.02;

/// Advances the plant by one sample of length `dt`.
///
/// The chamber pressures move toward the clamped command first; the new
/// pressures then act on the mechanics for the whole interval.
pub fn plant_step(
    s: &PlantState,
    u_cmd: &[f64; CHANNELS],
    params: &PlantParams,
    dt: f64,
) -> PlantState {
    assert!(dt > 0.0, "plant step needs a positive dt");
    let alpha = if params.lag <= 0.0 {
        1.0
    } else {
        (dt / params.lag).min(1.0)
    };
    let mut next = *s;
    for c in 0..CHANNELS {
        let target = u_cmd[c].clamp(0.0, params.max_pressure);
        next.p_act[c] = if alpha == 1.0 {
            target
        } else {
            s.p_act[c] + alpha * (target - s.p_act[c])
        };
    }
    let tau = params.torques(&next.p_act);
    let ext_target = params.elongation_targets(&next.p_act);
    let we = 2.0 * std::f64::consts::PI * params.elongation_frequency_hz;
    let de = 2.0 * params.elongation_damping_ratio * we;
    let h = dt / params.substeps as f64;
    for _ in 0..params.substeps {
        for i in 0..2 {
            let j = params.inertia[i];
            let v = (next.qdot[i] + h * (tau[i] - params.stiffness[i] * next.q[i]) / j)
                / (1.0 + h * params.damping[i] / j);
            next.qdot[i] = v;
            next.q[i] += h * v;

            let ve =
                (next.ext_rate[i] + h * we * we * (ext_target[i] - next.ext[i])) / (1.0 + h * de);
            next.ext_rate[i] = ve;
            next.ext[i] += h * ve;
        }
    }
    next
}
