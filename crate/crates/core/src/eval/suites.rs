use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ocp::CostWeights;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SuiteKind {
    SetpointNormal,
    SetpointExtrapolated,
    DynamicNormal,
    DynamicFast,
    DynamicUpswing,
    DynamicLong,
}

/// One trajectory type with its control parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectorySuite {
    pub kind: SuiteKind,
    pub name: &'static str,
    /// Number of trajectories.
    pub n: usize,
    pub horizon: usize,
    pub waypoints: usize,
    /// `(w_Q, w_Qdot, w_Qk, w_Qdot_k, w_Qf, w_Qdot_f)`.
    pub weights: [f64; 6],
}

pub const TABLE_I: [TrajectorySuite; 6] = [
    TrajectorySuite {
        kind: SuiteKind::SetpointNormal,
        name: "Setp. Normal",
        n: 9,
        horizon: 100,
        waypoints: 2,
        weights: [1.0, 0.002, 0.0, 0.0, 0.0, 0.0],
    },
    TrajectorySuite {
        kind: SuiteKind::SetpointExtrapolated,
        name: "Setp. Extrap.",
        n: 6,
        horizon: 100,
        waypoints: 2,
        weights: [1.0, 0.002, 0.0, 0.0, 0.0, 0.0],
    },
    TrajectorySuite {
        kind: SuiteKind::DynamicNormal,
        name: "Dyn. Normal",
        n: 5,
        horizon: 200,
        waypoints: 8,
        weights: [1.0, 0.0, 0.0, 0.0, 0.0, 0.002],
    },
    TrajectorySuite {
        kind: SuiteKind::DynamicFast,
        name: "Dyn. Fast",
        n: 3,
        horizon: 150,
        waypoints: 8,
        weights: [1.0, 0.0, 0.0, 0.0, 0.0, 0.002],
    },
    TrajectorySuite {
        kind: SuiteKind::DynamicUpswing,
        name: "Dyn. Upswing",
        n: 3,
        horizon: 150,
        waypoints: 3,
        weights: [0.0, 0.0, 1.0, 0.002, 0.0, 0.0],
    },
    TrajectorySuite {
        kind: SuiteKind::DynamicLong,
        name: "Dyn. Long",
        n: 5,
        horizon: 1000,
        waypoints: 22,
        weights: [1.0, 0.0, 0.0, 0.0, 0.0, 0.002],
    },
];

impl SuiteKind {
    pub const ALL: [SuiteKind; 6] = [
        SuiteKind::SetpointNormal,
        SuiteKind::SetpointExtrapolated,
        SuiteKind::DynamicNormal,
        SuiteKind::DynamicFast,
        SuiteKind::DynamicUpswing,
        SuiteKind::DynamicLong,
    ];

    pub fn suite(self) -> &'static TrajectorySuite {
        TABLE_I.iter().find(|s| s.kind == self).expect("every kind has a row")
    }

    pub fn is_setpoint(self) -> bool {
        matches!(self, SuiteKind::SetpointNormal | SuiteKind::SetpointExtrapolated)
    }

    /// Short identifier such as `dyn-fast`.
    pub fn slug(self) -> &'static str {
        match self {
            SuiteKind::SetpointNormal => "setp-normal",
            SuiteKind::SetpointExtrapolated => "setp-extrap",
            SuiteKind::DynamicNormal => "dyn-normal",
            SuiteKind::DynamicFast => "dyn-fast",
            SuiteKind::DynamicUpswing => "dyn-upswing",
            SuiteKind::DynamicLong => "dyn-long",
        }
    }

    /// Accepts the slug or the table name, ignoring case.
    pub fn parse(name: &str) -> Result<Self> {
        let n = name.trim().to_ascii_lowercase();
        SuiteKind::ALL
            .into_iter()
            .find(|k| k.slug() == n || k.suite().name.to_ascii_lowercase() == n)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown trajectory suite {name:?}")))
    }
}

impl TrajectorySuite {
    pub fn cost_weights(&self) -> CostWeights {
        CostWeights::tracking(self.weights)
    }
}
