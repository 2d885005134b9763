use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dynamics::LatentState;
use crate::error::{Error, Result};
use crate::ocp::{make_waypoints, schedule_waypoints, solve_ocp, OcpProblem, SolverSettings, WaypointTarget};
use crate::parallel::{self, Execution};
use crate::plant::{
    mse, render, static_frames, Dataset, PlantParams, PlantState, CHANNELS, DATASET_MAX_PRESSURE,
    PLANT_DT, REST_PRESSURE,
};
use crate::sysid::Checkpoint;

use super::execute::{commands_from_controls, execute_open_loop};
use super::metrics::waypoint_mse;
use super::report::TrajectoryRecord;
use super::suites::SuiteKind;

/// Minimum hold before a step-dataset frame counts as a settled pose.
pub const SETTLED_HOLD_S: f64 = 3.0;
/// Pressure clamp of the plant when probing extrapolated targets.
const EXTRAPOLATION_MAX_PRESSURE: f64 = 100.0;

/// One trajectory to optimize and execute.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTask {
    pub suite: SuiteKind,
    pub start_state: PlantState,
    pub start_observation: Vec<f64>,
    /// Pressures holding the start configuration, used as `u(0)`.
    pub start_pressure: [f64; CHANNELS],
    /// One target per waypoint, the first being the start configuration.
    pub targets: Vec<WaypointTarget>,
    /// Pressures that produced each target.
    pub target_pressures: Vec<[f64; CHANNELS]>,
    /// Upper pressure bound for both the solver and the plant.
    pub p_max: f64,
}

/// Settled frames of a step dataset with their pressures, in a seeded random order.
pub fn setpoint_targets(data: &Dataset, count: usize, seed: u64) -> Result<Vec<(usize, [f64; CHANNELS])>> {
    let mut frames = static_frames(data, SETTLED_HOLD_S);
    if frames.len() < count {
        return Err(Error::InvalidArgument(format!(
            "dataset has {} settled frames, {count} requested",
            frames.len()
        )));
    }
    frames.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    frames.truncate(count);
    Ok(frames.into_iter().map(|i| (i, data.u_cmd[i])).collect())
}

fn setpoint(suite: SuiteKind, params: &PlantParams, from: (&[f64], [f64; CHANNELS]), to: (&[f64], [f64; CHANNELS]), p_max: f64) -> TrajectoryTask {
    TrajectoryTask {
        suite,
        start_state: params.equilibrium(from.1),
        start_observation: from.0.to_vec(),
        start_pressure: from.1,
        targets: vec![WaypointTarget::fixed(from.0.to_vec()), WaypointTarget::fixed(to.0.to_vec())],
        target_pressures: vec![from.1, to.1],
        p_max,
    }
}

/// `n` setpoint moves through settled frames of `data`: rest to the first
/// target, target to target, and the last target back to rest.
pub fn setpoint_chain(data: &Dataset, params: &PlantParams, n: usize, seed: u64) -> Result<Vec<TrajectoryTask>> {
    if n < 2 {
        return Err(Error::InvalidArgument("a setpoint chain needs at least two moves".into()));
    }
    let rest = (data.rest_observation().pixels, data.rest_command());
    let mut poses = vec![rest.clone()];
    for (i, p) in setpoint_targets(data, n - 1, seed)? {
        poses.push((data.observation(i).pixels, p));
    }
    poses.push(rest);
    Ok(poses
        .windows(2)
        .map(|w| {
            setpoint(
                SuiteKind::SetpointNormal,
                params,
                (&w[0].0, w[0].1),
                (&w[1].0, w[1].1),
                DATASET_MAX_PRESSURE,
            )
        })
        .collect())
}

fn extrapolated_chain(params: &PlantParams, n: usize, rng: &mut ChaCha8Rng) -> Vec<TrajectoryTask> {
    let plant = params.clone().with_max_pressure(EXTRAPOLATION_MAX_PRESSURE);
    let rest_p = [REST_PRESSURE; CHANNELS];
    let obs = |p: [f64; CHANNELS]| render(&plant.equilibrium(p), &plant).pixels;
    let mut poses = vec![(obs(rest_p), rest_p)];
    for _ in 0..n - 1 {
        // One channel of one pair beyond the dataset range, its antagonist low.
        let mut p = [REST_PRESSURE; CHANNELS];
        let pair = rng.random_range(0..2);
        let side = rng.random_range(0..2);
        p[2 * pair + side] = rng.random_range(DATASET_MAX_PRESSURE..EXTRAPOLATION_MAX_PRESSURE);
        p[2 * pair + 1 - side] = rng.random_range(0.0..20.0);
        let other = 2 * (1 - pair);
        p[other] = rng.random_range(20.0..66.0);
        p[other + 1] = rng.random_range(20.0..66.0);
        poses.push((obs(p), p));
    }
    poses.push(poses[0].clone());
    poses
        .windows(2)
        .map(|w| {
            setpoint(
                SuiteKind::SetpointExtrapolated,
                &plant,
                (&w[0].0, w[0].1),
                (&w[1].0, w[1].1),
                EXTRAPOLATION_MAX_PRESSURE,
            )
        })
        .collect()
}

/// Smooth random command profile with knots `knot_s` seconds apart.
fn knot_profile(rng: &mut ChaCha8Rng, steps: usize, knot_s: f64) -> Vec<[f64; CHANNELS]> {
    let knot = (knot_s / PLANT_DT).round().max(1.0) as usize;
    let count = steps / knot + 2;
    let mut levels: Vec<[f64; CHANNELS]> = vec![[REST_PRESSURE; CHANNELS]];
    for _ in 1..count {
        levels.push(std::array::from_fn(|_| rng.random_range(5.0..81.0)));
    }
    (0..steps)
        .map(|i| {
            let (k, f) = (i / knot, (i % knot) as f64 / knot as f64);
            let s = 0.5 - 0.5 * (std::f64::consts::PI * f).cos();
            std::array::from_fn(|c| levels[k][c] * (1.0 - s) + levels[k + 1][c] * s)
        })
        .collect()
}

/// Resonant antagonistic pumping of both segments at full dataset amplitude.
fn pumping_profile(rng: &mut ChaCha8Rng, steps: usize) -> Vec<[f64; CHANNELS]> {
    let freq = rng.random_range(1.1..1.3);
    let phase = rng.random_range(0.0..0.6);
    (0..steps)
        .map(|i| {
            let t = i as f64 * PLANT_DT;
            let a = REST_PRESSURE * (std::f64::consts::TAU * freq * t).sin();
            let b = REST_PRESSURE * (std::f64::consts::TAU * freq * t + phase).sin();
            [REST_PRESSURE + a, REST_PRESSURE - a, REST_PRESSURE + b, REST_PRESSURE - b]
        })
        .collect()
}

/// Targets sampled from a scripted plant run starting at rest.
fn dynamic_task(suite: SuiteKind, params: &PlantParams, commands: &[[f64; CHANNELS]]) -> Result<TrajectoryTask> {
    let s = suite.suite();
    let tau = schedule_waypoints(s.waypoints, s.horizon)?;
    let run = execute_open_loop(params, &params.rest_state(), commands);
    let k_last = tau.len() - 1;
    let targets = tau
        .iter()
        .enumerate()
        .map(|(k, &i)| WaypointTarget {
            observation: run.frames[i].clone(),
            neighbors: Some((run.frames[i - 1].clone(), run.frames[i + 1].clone())),
            is_static: k == k_last,
        })
        .collect();
    Ok(TrajectoryTask {
        suite,
        start_state: run.states[0],
        start_observation: run.frames[0].clone(),
        start_pressure: [REST_PRESSURE; CHANNELS],
        targets,
        target_pressures: tau.iter().map(|&i| run.states[i].p_act).collect(),
        p_max: DATASET_MAX_PRESSURE,
    })
}

/// `count` trajectories of the given suite. Setpoint targets come from the
/// settled frames of `step_data`; every other suite is scripted on the plant.
pub fn design_tasks(kind: SuiteKind, params: &PlantParams, step_data: &Dataset, count: usize, seed: u64) -> Result<Vec<TrajectoryTask>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let steps = kind.suite().horizon + 2;
    match kind {
        SuiteKind::SetpointNormal => setpoint_chain(step_data, params, count, seed),
        SuiteKind::SetpointExtrapolated => {
            if count < 2 {
                return Err(Error::InvalidArgument("a setpoint chain needs at least two moves".into()));
            }
            Ok(extrapolated_chain(params, count, &mut rng))
        }
        SuiteKind::DynamicNormal | SuiteKind::DynamicLong => (0..count)
            .map(|_| dynamic_task(kind, params, &knot_profile(&mut rng, steps, 1.2)))
            .collect(),
        SuiteKind::DynamicFast => (0..count)
            .map(|_| dynamic_task(kind, params, &knot_profile(&mut rng, steps, 0.45)))
            .collect(),
        SuiteKind::DynamicUpswing => (0..count)
            .map(|_| dynamic_task(kind, params, &pumping_profile(&mut rng, steps)))
            .collect(),
    }
}

/// Control problem for `task` on the checkpoint's model: the start is encoded
/// at rest velocity and held by its pressures.
pub fn task_problem(ck: &Checkpoint, task: &TrajectoryTask, settings: SolverSettings) -> Result<OcpProblem> {
    let suite = task.suite.suite();
    if task.targets.len() != suite.waypoints {
        return Err(Error::InvalidArgument(format!(
            "{} needs {} waypoints, task has {}",
            suite.name,
            suite.waypoints,
            task.targets.len()
        )));
    }
    let enc = &ck.model.encoder;
    let waypoints = make_waypoints(enc, &task.targets, suite.horizon, ck.model.dynamics.dt())?;
    Ok(OcpProblem {
        initial: LatentState::at_rest(enc.mean(&task.start_observation)?),
        u0: DVector::from_column_slice(&task.start_pressure),
        horizon: suite.horizon,
        waypoints,
        weights: suite.cost_weights(),
        latent_scale: ck.latent_scale,
        settings: SolverSettings {
            p_max: task.p_max,
            ..settings
        },
    })
}

/// Optimizes, executes open loop on the plant and scores one task.
pub fn run_task(ck: &Checkpoint, model_id: &str, params: &PlantParams, task: &TrajectoryTask, index: usize, settings: SolverSettings) -> Result<TrajectoryRecord> {
    let problem = task_problem(ck, task, settings)?;
    let sol = solve_ocp(&ck.model.dynamics, &problem)?;
    let commands = commands_from_controls(&sol.controls);
    let plant = params.clone().with_max_pressure(task.p_max.max(params.max_pressure));
    let run = execute_open_loop(&plant, &task.start_state, &commands);
    let targets: Vec<Vec<f64>> = task.targets.iter().map(|t| t.observation.clone()).collect();
    let tau = &problem.waypoints.tau;
    let setpoint = task.suite.is_setpoint();
    let achieved = waypoint_mse(&run.frames, &targets, tau, setpoint)?;
    let still = vec![task.start_observation.clone(); run.frames.len()];
    let baseline = waypoint_mse(&still, &targets, tau, setpoint)?;
    let last_command = *commands.last().expect("horizon is positive");
    let target_pressure = *task.target_pressures.last().expect("at least one target");
    Ok(TrajectoryRecord {
        model: model_id.to_string(),
        suite: task.suite,
        index,
        mse: achieved,
        baseline_mse: baseline,
        start_target_mse: mse(&task.start_observation, &targets[targets.len() - 1]),
        final_command: last_command,
        target_pressure,
        cost: sol.cost.total,
        best_iteration: sol.best_iteration,
        warning: sol.warning,
    })
}

/// Runs independent tasks, concurrently when enabled.
pub fn run_tasks(ck: &Checkpoint, model_id: &str, params: &PlantParams, tasks: &[TrajectoryTask], settings: SolverSettings, exec: Execution) -> Vec<Result<TrajectoryRecord>> {
    parallel::map_indexed(exec, tasks, |i, t| run_task(ck, model_id, params, t, i, settings))
}
