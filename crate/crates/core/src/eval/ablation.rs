use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ocp::{solve_ocp, SolverSettings};
use crate::parallel::{self, Execution};
use crate::plant::{Dataset, PlantParams, CHANNELS};
use crate::sysid::{config_diff, strided_frames, train, Ablation, Checkpoint, TrainConfig};

use super::metrics::{multistep_mse, pressure_mae};
use super::suites::SuiteKind;
use super::tasks::{setpoint_targets, task_problem, TrajectoryTask};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationSettings {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    /// Validation trajectories for the multi-step prediction metric.
    pub trajectories: usize,
    pub prediction_horizon: usize,
    /// Rest-to-target setpoints for the pressure metric.
    pub setpoints: usize,
    pub ocp_iterations: usize,
    pub seed: u64,
}

impl Default for AblationSettings {
    fn default() -> Self {
        AblationSettings {
            epochs: 40,
            steps_per_epoch: 50,
            trajectories: 50,
            prediction_horizon: 25,
            setpoints: 50,
            ocp_iterations: 500,
            seed: 0,
        }
    }
}

/// One trained variant and its two metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationEntry {
    pub label: String,
    /// Protocol number; `None` for the full model.
    pub number: Option<usize>,
    /// Config field changed from the full model.
    pub changed: Option<String>,
    pub multistep_mse: Option<f64>,
    pub pressure_mae: Option<f64>,
    /// Training or evaluation failure; the other entries are unaffected.
    pub error: Option<String>,
}

fn evaluate(ck: &Checkpoint, val: &Dataset, setpoint_tasks: &[TrajectoryTask], s: &AblationSettings) -> Result<(f64, f64)> {
    let span = val.len().saturating_sub(s.prediction_horizon + 2);
    let starts: Vec<usize> = strided_frames(span, s.trajectories).into_iter().map(|i| i + 1).collect();
    let pred = multistep_mse(ck, val, &starts, s.prediction_horizon)?;
    let settings = SolverSettings {
        iterations: s.ocp_iterations,
        ..SolverSettings::default()
    };
    let mut commanded: Vec<[f64; CHANNELS]> = Vec::new();
    let mut actual = Vec::new();
    for task in setpoint_tasks {
        let sol = solve_ocp(&ck.model.dynamics, &task_problem(ck, task, settings)?)?;
        let u = sol.controls.last().unwrap();
        commanded.push(std::array::from_fn(|c| u[c]));
        actual.push(*task.target_pressures.last().unwrap());
    }
    Ok((pred, pressure_mae(&commanded, &actual)?))
}

/// Trains the full model and each single-change ablation, then scores them
/// by multi-step prediction MSE on `val` and pressure MAE on rest-to-target
/// setpoints from the settled frames of `step_data`.
pub fn run_ablation_study(
    base: &TrainConfig,
    train_set: &Dataset,
    val: &Dataset,
    step_data: &Dataset,
    params: &PlantParams,
    settings: &AblationSettings,
    exec: Execution,
) -> Result<Vec<AblationEntry>> {
    let mut base = base.clone().with_epochs(settings.epochs);
    base.steps_per_epoch = settings.steps_per_epoch;
    base.seed = settings.seed;
    let mut variants: Vec<(String, Option<usize>, Option<String>, TrainConfig)> =
        vec![("full".to_string(), None, None, base.clone())];
    for a in Ablation::ALL {
        let cfg = a.apply(&base);
        let diff = config_diff(&base, &cfg);
        if diff != [a.field()] {
            return Err(Error::InvalidArgument(format!(
                "ablation {} changes {diff:?}, expected only {}",
                a.label(),
                a.field()
            )));
        }
        variants.push((a.label().to_string(), Some(a.number()), Some(a.field().to_string()), cfg));
    }
    let rest_frame = step_data.rest_observation().pixels;
    let rest = step_data.rest_command();
    let tasks: Vec<TrajectoryTask> = setpoint_targets(step_data, settings.setpoints, settings.seed)?
        .into_iter()
        .map(|(i, p)| TrajectoryTask {
            suite: SuiteKind::SetpointNormal,
            start_state: params.equilibrium(rest),
            start_observation: rest_frame.clone(),
            start_pressure: rest,
            targets: vec![
                crate::ocp::WaypointTarget::fixed(rest_frame.clone()),
                crate::ocp::WaypointTarget::fixed(step_data.observation(i).pixels),
            ],
            target_pressures: vec![rest, p],
            p_max: params.max_pressure,
        })
        .collect();
    Ok(parallel::map_indexed(exec, &variants, |_, (label, number, changed, cfg)| {
        let outcome = train(cfg, train_set, val, &mut |_| {}).and_then(|ck| evaluate(&ck, val, &tasks, settings));
        let (pred, mae, error) = match outcome {
            Ok((p, m)) => (Some(p), Some(m), None),
            Err(e) => (None, None, Some(e.to_string())),
        };
        AblationEntry {
            label: label.clone(),
            number: *number,
            changed: changed.clone(),
            multistep_mse: pred,
            pressure_mae: mae,
            error,
        }
    }))
}
