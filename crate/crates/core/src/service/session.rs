use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dynamics::LatentState;
use crate::formats::{SavedState, WaypointExport};
use crate::plant::CHANNELS;
use crate::sysid::Checkpoint;
use crate::{Error, Result};

/// Upper end of the pressure sliders (kPa), above the dataset range so that
/// extrapolated targets can be designed.
pub const SLIDER_MAX_KPA: f64 = 120.0;

/// Wall-clock rate at which the server advances a session.
pub const TICK_HZ: f64 = 50.0;

/// One rendered model step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub tick: u64,
    pub height: usize,
    pub width: usize,
    /// Decoded observation, row-major.
    pub pixels: Vec<f32>,
    pub z: Vec<f64>,
    /// Blob centers in (column, row) pixels for keypoint decoders, empty otherwise.
    pub overlay: Vec<[f64; 2]>,
    pub u: [f64; CHANNELS],
}

/// Interactive rollout of one checkpoint under slider pressures.
///
/// A session is a plain state machine; [`super::serve`] drives it from a
/// socket at [`TICK_HZ`], tests drive it directly.
#[derive(Debug, Clone)]
pub struct SimSession {
    model_id: String,
    checkpoint: Arc<Checkpoint>,
    state: LatentState,
    pressures: [f64; CHANNELS],
    tick: u64,
    paused: bool,
    saved: Vec<SavedState>,
}

impl SimSession {
    /// Starts at `(z0, 0)` under the rest command.
    pub fn new(model_id: impl Into<String>, checkpoint: Arc<Checkpoint>) -> Self {
        let rest = rest_state(&checkpoint);
        let mut pressures = [0.0; CHANNELS];
        pressures.copy_from_slice(checkpoint.rest.command.as_slice());
        SimSession {
            model_id: model_id.into(),
            checkpoint,
            state: rest,
            pressures,
            tick: 0,
            paused: false,
            saved: Vec::new(),
        }
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.checkpoint
    }

    pub fn state(&self) -> &LatentState {
        &self.state
    }

    pub fn pressures(&self) -> [f64; CHANNELS] {
        self.pressures
    }

    pub fn tick_count(&self) -> u64 {
        self.tick
    }

    /// True after the model diverged; only [`SimSession::reset`] resumes stepping.
    pub fn is_paused(&self) -> bool {
        self.paused
    }

    pub fn saved(&self) -> &[SavedState] {
        &self.saved
    }

    /// Sets the slider pressures, clamped to `[0, SLIDER_MAX_KPA]`.
    pub fn set_pressures(&mut self, u: [f64; CHANNELS]) -> Result<()> {
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("pressures {u:?} are not finite")));
        }
        self.pressures = u.map(|v| v.clamp(0.0, SLIDER_MAX_KPA));
        Ok(())
    }

    /// Advances the model by one step under the current pressures.
    pub fn tick(&mut self) -> Result<Frame> {
        if self.paused {
            return Err(Error::Divergence { step: self.tick as usize });
        }
        let u = DVector::from_column_slice(&self.pressures);
        match self.checkpoint.model.dynamics.step(&self.state, &u) {
            Ok(next) => {
                self.state = next;
                self.tick += 1;
                self.frame()
            }
            Err(Error::Divergence { .. }) => {
                self.paused = true;
                Err(Error::Divergence { step: self.tick as usize })
            }
            Err(e) => Err(e),
        }
    }

    /// The current state rendered without stepping.
    pub fn frame(&self) -> Result<Frame> {
        let pixels = self.checkpoint.model.decoder.decode(&self.state.z)?.iter().map(|&v| v as f32).collect();
        let z: Vec<f64> = self.state.z.iter().copied().collect();
        let overlay = match self.checkpoint.model.decoder.keypoint_map() {
            Some(map) => z.chunks_exact(2).map(|p| map.place([p[0], p[1]])).collect(),
            None => Vec::new(),
        };
        Ok(Frame {
            tick: self.tick,
            height: self.checkpoint.height,
            width: self.checkpoint.width,
            pixels,
            z,
            overlay,
            u: self.pressures,
        })
    }

    /// Records the current state as a waypoint; static saves store zero velocity.
    ///
    /// The stored latent is the encoding of the stored observation, which is
    /// exactly what [`crate::ocp::make_waypoints`] derives from the export
    /// for this model.
    pub fn save_state(&mut self, is_static: bool) -> Result<&SavedState> {
        let observation = self.checkpoint.model.decoder.decode(&self.state.z)?;
        let z = self.checkpoint.model.encoder.mean(&observation)?;
        let zdot = if is_static {
            DVector::zeros(self.state.zdot.len())
        } else {
            self.state.zdot.clone()
        };
        self.saved.push(SavedState {
            observation,
            u: self.pressures,
            z,
            zdot,
            is_static,
        });
        Ok(self.saved.last().expect("just pushed"))
    }

    pub fn export(&self, horizon: Option<usize>) -> WaypointExport {
        WaypointExport {
            model_id: self.model_id.clone(),
            height: self.checkpoint.height,
            width: self.checkpoint.width,
            horizon,
            states: self.saved.clone(),
        }
    }

    /// Returns to rest and clears the pause flag; saved states are kept.
    pub fn reset(&mut self) {
        self.state = rest_state(&self.checkpoint);
        self.pressures.copy_from_slice(self.checkpoint.rest.command.as_slice());
        self.tick = 0;
        self.paused = false;
    }

    pub fn clear_saved(&mut self) {
        self.saved.clear();
    }
}

fn rest_state(ck: &Checkpoint) -> LatentState {
    LatentState::at_rest(ck.z0().clone())
}
