use nalgebra::DVector;

use crate::plant::{plant_step, render, PlantParams, PlantState, CHANNELS, PLANT_DT};

/// Frames and plant states of one open-loop run; index 0 is the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct OpenLoopRun {
    pub frames: Vec<Vec<f64>>,
    pub states: Vec<PlantState>,
}

impl OpenLoopRun {
    /// Chamber pressures acting during each applied command.
    pub fn actual_pressures(&self) -> Vec<[f64; CHANNELS]> {
        self.states[1..].iter().map(|s| s.p_act).collect()
    }
}

pub fn commands_from_controls(u: &[DVector<f64>]) -> Vec<[f64; CHANNELS]> {
    u.iter().map(|v| std::array::from_fn(|c| v[c])).collect()
}

/// Applies `commands` one per sample, without feedback, and renders every state.
pub fn execute_open_loop(params: &PlantParams, initial: &PlantState, commands: &[[f64; CHANNELS]]) -> OpenLoopRun {
    let mut states = Vec::with_capacity(commands.len() + 1);
    let mut frames = Vec::with_capacity(commands.len() + 1);
    states.push(*initial);
    frames.push(render(initial, params).pixels);
    let mut s = *initial;
    for u in commands {
        s = plant_step(&s, u, params, PLANT_DT);
        states.push(s);
        frames.push(render(&s, params).pixels);
    }
    OpenLoopRun { frames, states }
}
