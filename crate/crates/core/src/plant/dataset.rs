use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    plant_step, render, Observation, PlantParams, CHANNELS, DATASET_MAX_PRESSURE, PLANT_DT,
    REST_PRESSURE,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExcitationProfile {
    /// Random setpoints joined by linear ramps with superimposed sinusoids.
    Sinusoidal,
    /// Random setpoints held for 1 to 4 seconds.
    Step,
}

/// One uniformly sampled recording.
///
/// Frame `i` holds the observation at time `i·dt`, the command applied during
/// the following interval and the chamber pressures acting during it. Frame 0
/// is the rest observation under the rest command.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub height: usize,
    pub width: usize,
    pub rate_hz: f64,
    pub times: Vec<f64>,
    pub u_cmd: Vec<[f64; CHANNELS]>,
    pub p_act: Vec<[f64; CHANNELS]>,
    /// Row-major pixels of all frames, `height·width` per frame.
    pub pixels: Vec<f32>,
}

impl Dataset {
    pub fn new(height: usize, width: usize, rate_hz: f64) -> Self {
        Dataset {
            height,
            width,
            rate_hz,
            times: Vec::new(),
            u_cmd: Vec::new(),
            p_act: Vec::new(),
            pixels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn frame_size(&self) -> usize {
        self.height * self.width
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.rate_hz
    }

    pub fn push(
        &mut self,
        time: f64,
        u_cmd: [f64; CHANNELS],
        p_act: [f64; CHANNELS],
        obs: &Observation,
    ) -> Result<()> {
        if obs.height != self.height || obs.width != self.width {
            return Err(Error::DimensionMismatch {
                context: "dataset frame",
                expected: self.frame_size(),
                actual: obs.len(),
            });
        }
        self.times.push(time);
        self.u_cmd.push(u_cmd);
        self.p_act.push(p_act);
        self.pixels.extend(obs.pixels.iter().map(|&p| p as f32));
        Ok(())
    }

    pub fn frame_pixels(&self, i: usize) -> &[f32] {
        let n = self.frame_size();
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn observation(&self, i: usize) -> Observation {
        Observation::from_f32(self.height, self.width, self.frame_pixels(i))
    }

    /// Observation captured at the zero-excitation equilibrium.
    pub fn rest_observation(&self) -> Observation {
        self.observation(0)
    }

    pub fn rest_command(&self) -> [f64; CHANNELS] {
        self.u_cmd[0]
    }

    /// Checks the structural invariants: matching lengths, finite values and a
    /// uniform time grid.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let malformed = |reason: String| Error::Malformed {
            format: "dataset",
            reason,
        };
        if n == 0 {
            return Err(malformed("no frames".into()));
        }
        if self.u_cmd.len() != n
            || self.p_act.len() != n
            || self.pixels.len() != n * self.frame_size()
        {
            return Err(malformed("field lengths disagree".into()));
        }
        if !(self.rate_hz.is_finite() && self.rate_hz > 0.0) {
            return Err(malformed(format!("sample rate {}", self.rate_hz)));
        }
        let dt = self.dt();
        for (i, t) in self.times.iter().enumerate() {
            let expected = self.times[0] + i as f64 * dt;
            if !t.is_finite() || (t - expected).abs() > 1e-6 * (1.0 + expected.abs()) {
                return Err(malformed(format!("time grid not uniform at frame {i}")));
            }
        }
        if !self.pixels.iter().all(|p| p.is_finite()) {
            return Err(malformed("non-finite pixel".into()));
        }
        Ok(())
    }
}

pub(crate) const REST_SECONDS: f64 = 1.0;

pub(crate) fn command_profile(
    kind: ExcitationProfile,
    n: usize,
    rest_frames: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<[f64; CHANNELS]> {
    let mut cmds = vec![[REST_PRESSURE; CHANNELS]; n];
    let t_of = |i: usize| (i - rest_frames) as f64 * PLANT_DT;
    if kind == ExcitationProfile::Sinusoidal {
        for c in 0..CHANNELS {
            let mut knots = vec![(0.0, REST_PRESSURE)];
            let total = (n - rest_frames) as f64 * PLANT_DT;
            let mut t = 0.0;
            while t <= total {
                t += rng.random_range(0.4..2.0);
                knots.push((t, rng.random_range(0.0..DATASET_MAX_PRESSURE)));
            }
            let sines: Vec<(f64, f64, f64)> = (0..2)
                .map(|_| {
                    (
                        rng.random_range(2.0..10.0),
                        rng.random_range(0.2..1.5),
                        rng.random_range(0.0..std::f64::consts::TAU),
                    )
                })
                .collect();
            let mut k = 0;
            for (i, cmd) in cmds.iter_mut().enumerate().skip(rest_frames) {
                let t = t_of(i);
                while knots[k + 1].0 < t {
                    k += 1;
                }
                let (t0, p0) = knots[k];
                let (t1, p1) = knots[k + 1];
                let base = p0 + (p1 - p0) * (t - t0) / (t1 - t0);
                let fade = t.min(1.0);
                let wiggle: f64 = sines
                    .iter()
                    .map(|&(a, f, ph)| a * ((std::f64::consts::TAU * f * t + ph).sin() - ph.sin()))
                    .sum();
                cmd[c] = (base + fade * wiggle).clamp(0.0, DATASET_MAX_PRESSURE);
            }
        }
    } else {
        // All channels switch together so every hold is a static pose.
        let mut i = rest_frames;
        while i < n {
            let hold = (rng.random_range(1.0..4.0) / PLANT_DT).round() as usize;
            let level: [f64; CHANNELS] =
                std::array::from_fn(|_| rng.random_range(0.0..DATASET_MAX_PRESSURE));
            for cmd in cmds.iter_mut().skip(i).take(hold) {
                *cmd = level;
            }
            i += hold;
        }
    }
    cmds
}

/// Simulates the plant under a random excitation of the given kind, starting
/// with one second at rest. The result is a pure function of the arguments.
pub fn generate_dataset(
    kind: ExcitationProfile,
    duration_s: f64,
    seed: u64,
    params: &PlantParams,
) -> Result<Dataset> {
    if !(duration_s >= 10.0) {
        return Err(Error::InvalidArgument(format!(
            "dataset duration {duration_s} s is below 10 s"
        )));
    }
    let n = (duration_s / PLANT_DT).round() as usize;
    let rest_frames = (REST_SECONDS / PLANT_DT).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cmds = command_profile(kind, n, rest_frames, &mut rng);

    let mut data = Dataset::new(params.height, params.width, 1.0 / PLANT_DT);
    data.times.reserve(n);
    data.pixels.reserve(n * params.height * params.width);
    let mut s = params.rest_state();
    for (i, cmd) in cmds.iter().enumerate() {
        let next = plant_step(&s, cmd, params, PLANT_DT);
        data.push(i as f64 * PLANT_DT, *cmd, next.p_act, &render(&s, params))?;
        s = next;
    }
    Ok(data)
}

/// Indices of frames that end a constant command held for at least
/// `min_hold_s` seconds, where the plant has settled.
pub fn static_frames(data: &Dataset, min_hold_s: f64) -> Vec<usize> {
    let min_frames = (min_hold_s * data.rate_hz).round() as usize;
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=data.len() {
        if i == data.len() || data.u_cmd[i] != data.u_cmd[start] {
            if start > 0 && i - start >= min_frames {
                out.push(i - 1);
            }
            start = i;
        }
    }
    out
}
