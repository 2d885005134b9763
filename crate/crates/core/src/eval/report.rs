use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::plant::CHANNELS;

use super::ablation::AblationEntry;
use super::suites::SuiteKind;

pub const REPORT_KIND: &str = "run_report";

/// Outcome of one optimized and executed trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub model: String,
    pub suite: SuiteKind,
    pub index: usize,
    /// Image MSE over the scored frames.
    pub mse: f64,
    /// Same metric with the arm left at its start configuration.
    pub baseline_mse: f64,
    /// Image MSE between the start observation and the final target.
    pub start_target_mse: f64,
    pub final_command: [f64; CHANNELS],
    pub target_pressure: [f64; CHANNELS],
    pub cost: f64,
    pub best_iteration: usize,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub model: String,
    /// `None` for the aggregate over all suites.
    pub suite: Option<SuiteKind>,
    pub count: usize,
    pub mean_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunReport {
    pub trajectories: Vec<TrajectoryRecord>,
    pub aggregates: Vec<Aggregate>,
    /// Per-model mean absolute pressure error (kPa).
    pub pressure_mae: BTreeMap<String, f64>,
    /// Per-model multi-step prediction MSE.
    pub multistep_mse: BTreeMap<String, f64>,
    /// Named stress-test series.
    pub stress: BTreeMap<String, Vec<f64>>,
    pub ablation: Vec<AblationEntry>,
}

impl RunReport {
    /// Arithmetic means of the trajectory MSEs per model and suite, and per model.
    pub fn compute_aggregates(trajectories: &[TrajectoryRecord]) -> Vec<Aggregate> {
        let mut groups: BTreeMap<(String, Option<SuiteKind>), Vec<f64>> = BTreeMap::new();
        for t in trajectories {
            groups.entry((t.model.clone(), Some(t.suite))).or_default().push(t.mse);
            groups.entry((t.model.clone(), None)).or_default().push(t.mse);
        }
        groups
            .into_iter()
            .map(|((model, suite), v)| Aggregate {
                model,
                suite,
                count: v.len(),
                mean_mse: v.iter().sum::<f64>() / v.len() as f64,
            })
            .collect()
    }

    pub fn refresh_aggregates(&mut self) {
        self.aggregates = Self::compute_aggregates(&self.trajectories);
    }

    /// Tab-separated trajectory table with a header row.
    pub fn trajectory_table(&self) -> String {
        let mut out = String::from("model\tsuite\tindex\tmse\tbaseline_mse\tstart_target_mse\tcost\n");
        for t in &self.trajectories {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{:e}\t{:e}\t{:e}\t{:e}",
                t.model,
                t.suite.slug(),
                t.index,
                t.mse,
                t.baseline_mse,
                t.start_target_mse,
                t.cost
            );
        }
        out
    }
}
