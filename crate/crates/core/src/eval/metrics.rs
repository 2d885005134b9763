use nalgebra::DVector;

use crate::error::{check_dim, Error, Result};
use crate::ocp::{active_target, TargetMode};
use crate::plant::{mse, Dataset, CHANNELS};
use crate::sysid::{strided_frames, Checkpoint};

/// Image MSE of executed `frames` (index 0 = initial) against the targets.
///
/// Dynamic trajectories average the frames at `tau[1..]`. Setpoint
/// trajectories average every frame after the first waypoint against its
/// active (next) target.
pub fn waypoint_mse(frames: &[Vec<f64>], targets: &[Vec<f64>], tau: &[usize], setpoint: bool) -> Result<f64> {
    check_dim("waypoint targets", tau.len(), targets.len())?;
    let t = *tau.last().ok_or_else(|| Error::InvalidArgument("no waypoints".into()))?;
    if frames.len() <= t {
        return Err(Error::InvalidArgument(format!("{} frames do not cover horizon {t}", frames.len())));
    }
    let first = if tau.len() > 1 { tau[0] + 1 } else { 1 };
    if setpoint {
        let total: f64 = (first..=t)
            .map(|i| mse(&frames[i], &targets[active_target(i, tau, TargetMode::Next)]))
            .sum();
        Ok(total / (t + 1 - first) as f64)
    } else {
        let skip = usize::from(tau.len() > 1);
        let terms: Vec<f64> = tau
            .iter()
            .zip(targets)
            .skip(skip)
            .map(|(&i, o)| mse(&frames[i], o))
            .collect();
        Ok(terms.iter().sum::<f64>() / terms.len() as f64)
    }
}

/// Mean absolute difference in kPa over all channels and pairs.
pub fn pressure_mae(predicted: &[[f64; CHANNELS]], actual: &[[f64; CHANNELS]]) -> Result<f64> {
    check_dim("pressure sets", predicted.len(), actual.len())?;
    if predicted.is_empty() {
        return Err(Error::InvalidArgument("no pressures to compare".into()));
    }
    let total: f64 = predicted
        .iter()
        .zip(actual)
        .flat_map(|(p, a)| p.iter().zip(a).map(|(x, y)| (x - y).abs()))
        .sum();
    Ok(total / (CHANNELS * predicted.len()) as f64)
}

/// Mean image MSE of `horizon`-step decoded predictions started from the
/// encoded states at `starts`, driven by the recorded commands.
pub fn multistep_mse(ck: &Checkpoint, data: &Dataset, starts: &[usize], horizon: usize) -> Result<f64> {
    if starts.is_empty() || horizon == 0 {
        return Err(Error::InvalidArgument("multi-step evaluation needs starts and a horizon".into()));
    }
    let mut total = 0.0;
    for &i in starts {
        if i + horizon >= data.len() {
            return Err(Error::InvalidArgument(format!("start {i} leaves fewer than {horizon} frames")));
        }
        let x0 = ck.model.latent_state(data, i)?;
        let useq: Vec<DVector<f64>> = (i..i + horizon)
            .map(|j| DVector::from_column_slice(&data.u_cmd[j]))
            .collect();
        let roll = ck.model.dynamics.rollout(&x0, &useq)?;
        for (h, s) in roll.states.iter().enumerate() {
            let pred = ck.model.decoder.decode(&s.z)?;
            total += mse(&pred, &data.observation(i + 1 + h).pixels);
        }
    }
    Ok(total / (starts.len() * horizon) as f64)
}

/// Mean autoencoding MSE over up to `max_frames` evenly strided frames.
pub fn reconstruction_floor(ck: &Checkpoint, data: &Dataset, max_frames: usize) -> Result<f64> {
    ck.model.reconstruction_mse(data, &strided_frames(data.len(), max_frames))
}
