use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dynamics::{DynModel, LatentState};
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::parallel::{self, Execution};
use crate::tensor;

use super::cost::{ocp_cost, ocp_cost_and_gradient, CostBreakdown};
use super::OcpProblem;

/// Iterations after which the cost trace is expected to keep decreasing.
const SETTLE_ITERATIONS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcpSolution {
    /// `u(0..T)`, `u(0)` unchanged from the problem.
    #[serde(with = "tensor::dvec_list")]
    pub controls: Vec<DVector<f64>>,
    /// Predicted latent states `xi(0..=T)`.
    pub states: Vec<LatentState>,
    pub cost: CostBreakdown,
    /// Total cost before each update.
    pub trace: Vec<f64>,
    pub best_iteration: usize,
    /// Set when the cost rose after the settling iterations.
    pub warning: Option<String>,
}

/// Projected adaptive-moment descent on `u(1..T)`, returning the best iterate.
pub fn solve_ocp(dynamics: &DynModel, problem: &OcpProblem) -> Result<OcpSolution> {
    problem.validate(dynamics.latent_dim(), dynamics.input_dim())?;
    let s = problem.settings;
    let t = problem.horizon;
    let m = dynamics.input_dim();
    let mut u = problem.initial_controls();
    // The zero epsilon keeps updates invariant to a positive scaling of the cost.
    let mut adam = Adam::new(
        AdamConfig {
            lr: s.learning_rate,
            eps: 0.0,
            ..AdamConfig::default()
        },
        (t - 1) * m,
    );
    let mut flat = vec![0.0; (t - 1) * m];
    let mut grad_flat = vec![0.0; (t - 1) * m];
    let mut trace = Vec::with_capacity(s.iterations + 1);
    let mut best: Option<(f64, usize, Vec<DVector<f64>>)> = None;
    for it in 0..=s.iterations {
        let evaluated = match ocp_cost_and_gradient(dynamics, problem, &u) {
            Err(Error::Divergence { .. }) => None,
            other => Some(other?),
        };
        let Some((cost, grad)) = evaluated.filter(|(c, _)| c.total.is_finite()) else {
            if it == 0 {
                return Err(Error::NonFiniteCost);
            }
            break;
        };
        trace.push(cost.total);
        if best.as_ref().is_none_or(|(b, _, _)| cost.total < *b) {
            best = Some((cost.total, it, u.clone()));
        }
        if it == s.iterations || t == 1 {
            break;
        }
        for i in 1..t {
            for j in 0..m {
                flat[(i - 1) * m + j] = u[i][j];
                grad_flat[(i - 1) * m + j] = grad[i][j];
            }
        }
        let lr = adam.learning_rate(it, s.iterations);
        adam.step(&mut flat, &grad_flat, lr);
        for i in 1..t {
            for j in 0..m {
                u[i][j] = flat[(i - 1) * m + j].clamp(s.p_min, s.p_max);
            }
        }
    }
    let (_, best_iteration, controls) = best.expect("initial cost is finite");
    let (cost, states) = ocp_cost(dynamics, problem, &controls)?;
    let rises = trace
        .windows(2)
        .skip(SETTLE_ITERATIONS)
        .filter(|w| w[1] > w[0] * (1.0 + 1e-12))
        .count();
    let warning = (rises > 0).then(|| format!("cost increased in {rises} iterations after the first {SETTLE_ITERATIONS}"));
    Ok(OcpSolution {
        controls,
        states,
        cost,
        trace,
        best_iteration,
        warning,
    })
}

/// Solves independent problems, in parallel when enabled; results keep input order.
pub fn solve_many(dynamics: &DynModel, problems: &[OcpProblem], exec: Execution) -> Vec<Result<OcpSolution>> {
    parallel::map_indexed(exec, problems, |_, p| solve_ocp(dynamics, p))
}
