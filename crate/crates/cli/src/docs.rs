use scr_core::eval::SuiteKind;
use scr_core::ocp::{CostWeights, OcpSolution};
use scr_core::plant::CHANNELS;
use serde::{Deserialize, Serialize};

pub const SOLUTION_KIND: &str = "ocp_solution";
pub const EXECUTION_KIND: &str = "execution";
pub const STRESS_KIND: &str = "stress_result";

/// An optimized control sequence with everything needed to execute and score it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionDoc {
    pub model_id: String,
    pub suite: Option<SuiteKind>,
    /// Score every post-initial frame against the active target.
    pub setpoint: bool,
    pub horizon: usize,
    pub tau: Vec<usize>,
    pub weights: CostWeights,
    pub p_max: f64,
    pub start_observation: Vec<f64>,
    pub start_pressure: [f64; CHANNELS],
    pub targets: Vec<Vec<f64>>,
    pub commands: Vec<[f64; CHANNELS]>,
    pub solution: OcpSolution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionDoc {
    pub model_id: String,
    pub commands: Vec<[f64; CHANNELS]>,
    pub actual_pressures: Vec<[f64; CHANNELS]>,
    pub mse: f64,
    pub baseline_mse: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressDoc {
    pub test: String,
    pub reconstruction_floor: Option<f64>,
    /// Headline number: maximum drift, final MSE to rest, or force balance residual.
    pub value: Option<f64>,
    pub series: Vec<Vec<f64>>,
    pub commands: Vec<[f64; CHANNELS]>,
}
