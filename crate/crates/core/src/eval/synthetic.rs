use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{DynModel, ExcitationMap, ExcitationNet, IntegrationMode, LatentState, OscillatorModel};
use crate::error::{Error, Result};
use crate::plant::{command_profile, Dataset, ExcitationProfile, Observation, PLANT_DT, REST_SECONDS};
use crate::sysid::KEYPOINT_SCALE;

/// Width of the rendered blobs (pixels).
pub const SYNTHETIC_BLOB_SIGMA: f64 = 2.0;

/// A plant whose observations are Gaussian blobs placed affinely by the state
/// of a known linear oscillator bank, so its latent dynamics are exactly
/// linear in `[z; zdot]` and the command.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLatentPlant {
    pub dynamics: DynModel,
    pub height: usize,
    pub width: usize,
    /// Blob positions at zero latent, (column, row).
    pub anchors: Vec<[f64; 2]>,
}

impl LinearLatentPlant {
    /// `pairs` blobs on a 32 by 32 grid, with coupled stiffness and a random
    /// input matrix drawn from `seed`. The blobs sit on a small circle around
    /// the keypoint decoder's map origin, so its templates overlap them from
    /// the start.
    pub fn new(pairs: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 2 * pairs;
        let c = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let stiffness = DMatrix::identity(n, n) * 30.0 + &c * c.transpose() * 2.0;
        let damping = DMatrix::identity(n, n) * 3.0;
        let b = DMatrix::from_fn(n, 4, |_, _| rng.random_range(-6.0..6.0));
        let osc = OscillatorModel::from_matrices(
            &DVector::from_element(n, 1.0),
            damping,
            stiffness,
            DVector::zeros(n),
            ExcitationNet::from_map(ExcitationMap::Linear(b)),
            PLANT_DT,
            IntegrationMode::ImplicitDamping,
        );
        let anchors = (0..pairs)
            .map(|j| {
                let a = std::f64::consts::TAU * j as f64 / pairs as f64;
                [16.0 + 4.0 * a.sin(), 12.0 - 4.0 * a.cos()]
            })
            .collect();
        LinearLatentPlant {
            dynamics: DynModel::Oscillator(osc),
            height: 32,
            width: 32,
            anchors,
        }
    }

    pub fn render(&self, z: &DVector<f64>) -> Observation {
        let mut o = Observation::zeros(self.height, self.width);
        let inv = 1.0 / (2.0 * SYNTHETIC_BLOB_SIGMA * SYNTHETIC_BLOB_SIGMA);
        for (j, a) in self.anchors.iter().enumerate() {
            let cx = a[0] + KEYPOINT_SCALE * z[2 * j];
            let cy = a[1] + KEYPOINT_SCALE * z[2 * j + 1];
            for r in 0..self.height {
                let dy = r as f64 + 0.5 - cy;
                for c in 0..self.width {
                    let dx = c as f64 + 0.5 - cx;
                    o.pixels[r * self.width + c] += (-(dx * dx + dy * dy) * inv).exp();
                }
            }
        }
        for p in o.pixels.iter_mut() {
            *p = p.min(1.0);
        }
        o
    }

    /// Records the plant under a random smooth excitation after one second at rest.
    pub fn generate(&self, duration_s: f64, seed: u64) -> Result<Dataset> {
        if !(duration_s >= 10.0) {
            return Err(Error::InvalidArgument(format!("dataset duration {duration_s} s is below 10 s")));
        }
        let n = (duration_s / PLANT_DT).round() as usize;
        let rest_frames = (REST_SECONDS / PLANT_DT).round() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cmds = command_profile(ExcitationProfile::Sinusoidal, n, rest_frames, &mut rng);
        let mut data = Dataset::new(self.height, self.width, 1.0 / PLANT_DT);
        let mut s = LatentState::at_rest(DVector::zeros(self.dynamics.latent_dim()));
        for (i, cmd) in cmds.iter().enumerate() {
            data.push(i as f64 * PLANT_DT, *cmd, *cmd, &self.render(&s.z))?;
            s = self.dynamics.step(&s, &DVector::from_column_slice(cmd))?;
        }
        Ok(data)
    }
}
