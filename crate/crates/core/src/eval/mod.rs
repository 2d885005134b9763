//! Open-loop execution on the plant, image-space metrics, the trajectory
//! suites, stress tests and the ablation study.

mod ablation;
mod execute;
mod metrics;
mod report;
mod stress;
mod suites;
mod synthetic;
mod tasks;

pub use ablation::{run_ablation_study, AblationEntry, AblationSettings};
pub use execute::{commands_from_controls, execute_open_loop, OpenLoopRun};
pub use metrics::{multistep_mse, pressure_mae, reconstruction_floor, waypoint_mse};
pub use report::{Aggregate, RunReport, TrajectoryRecord, REPORT_KIND};
pub use stress::{
    cosine_ramp, stress_ramp_extrapolate, stress_release, stress_static_hold, HoldSeries, RampResult,
    release_commands, ReleaseResult, HOLD_STEPS, RAMP_HOLD_STEPS, RAMP_STEPS, RELEASE_EXCITATION_STEPS, RELEASE_STEPS,
};
pub use suites::{SuiteKind, TrajectorySuite, TABLE_I};
pub use synthetic::{LinearLatentPlant, SYNTHETIC_BLOB_SIGMA};
pub use tasks::{
    design_tasks, run_task, run_tasks, setpoint_chain, setpoint_targets, task_problem, TrajectoryTask,
    SETTLED_HOLD_S,
};
