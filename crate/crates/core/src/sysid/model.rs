use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::dynamics::{DynModel, FamilyKind, LatentState};
use crate::error::{check_dim, Error, Result};
use crate::parallel::{self, Execution};
use crate::plant::Dataset;

use super::config::{LossWeights, TrainConfig};
use super::decoder::Decoder;
use super::encoder::Encoder;

/// Encoder, decoder and latent dynamics trained together.
#[derive(Debug, Clone, PartialEq)]
pub struct SysModel {
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub dynamics: DynModel,
}

/// Rest observation and rest command defining the global equilibrium.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RestPair {
    pub observation: Vec<f64>,
    #[serde(with = "crate::tensor::dvec")]
    pub command: DVector<f64>,
}

impl RestPair {
    pub fn from_dataset(data: &Dataset) -> Self {
        RestPair {
            observation: data.rest_observation().pixels,
            command: DVector::from_column_slice(&data.rest_command()),
        }
    }
}

/// Individual loss terms, each already averaged, and their weighted sum.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossParts {
    #[serde(rename = "static")]
    pub static_recon: f64,
    pub dyn_image: f64,
    pub latent: f64,
    pub rest: f64,
    pub kl: f64,
    pub total: f64,
}

impl std::ops::AddAssign for LossParts {
    fn add_assign(&mut self, o: Self) {
        self.static_recon += o.static_recon;
        self.dyn_image += o.dyn_image;
        self.latent += o.latent;
        self.rest += o.rest;
        self.kl += o.kl;
        self.total += o.total;
    }
}

/// Weights of the training objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub weights: LossWeights,
    pub beta: f64,
}

impl Objective {
    pub fn from_config(c: &TrainConfig) -> Self {
        Objective {
            weights: c.weights,
            beta: c.beta,
        }
    }
}

/// Subsequences starting at `starts` (frame index of the first predicted-from
/// frame), each spanning `horizon + 1` frames plus one spare frame on either
/// side, with fixed reparameterization noise.
#[derive(Debug, Clone)]
pub struct Batch {
    pub starts: Vec<usize>,
    pub horizon: usize,
    /// Per sequence, `latent_dim x (horizon + 1)` standard normal draws.
    pub noise: Vec<DMatrix<f64>>,
}

impl Batch {
    pub fn sample<R: Rng + ?Sized>(data: &Dataset, size: usize, horizon: usize, latent_dim: usize, rng: &mut R) -> Result<Self> {
        if data.len() < horizon + 3 {
            return Err(Error::InvalidArgument(format!(
                "horizon {horizon} needs {} frames, dataset has {}",
                horizon + 3,
                data.len()
            )));
        }
        let hi = data.len() - horizon - 1;
        let starts: Vec<usize> = (0..size).map(|_| rng.random_range(1..hi)).collect();
        let noise = starts
            .iter()
            .map(|_| DMatrix::from_fn(latent_dim, horizon + 1, |_, _| rng.sample(rand_distr::StandardNormal)))
            .collect();
        Ok(Batch { starts, horizon, noise })
    }
}

/// Pixels of frames `first..first + count` as columns.
pub(crate) fn frame_matrix(data: &Dataset, first: usize, count: usize) -> DMatrix<f64> {
    let n = data.frame_size();
    let px = &data.pixels[first * n..(first + count) * n];
    DMatrix::from_iterator(n, count, px.iter().map(|&p| p as f64))
}

fn command(data: &Dataset, i: usize) -> DVector<f64> {
    DVector::from_column_slice(&data.u_cmd[i])
}

/// Offsets of the encoder, decoder and dynamics blocks in the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    dec: usize,
    dyn_: usize,
    end: usize,
}

impl SysModel {
    pub fn init<R: Rng + ?Sized>(config: &TrainConfig, height: usize, width: usize, rng: &mut R) -> Self {
        let latent = 2 * config.dynamics.oscillators;
        let encoder = Encoder::new(height * width, latent, config.encoder_hidden, rng);
        let decoder = Decoder::new(
            config.decoder,
            height,
            width,
            latent,
            config.decoder_hidden,
            config.keypoint_components,
            rng,
        );
        let dynamics = DynModel::init(&config.dynamics, rng);
        SysModel {
            encoder,
            decoder,
            dynamics,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.latent_dim()
    }

    fn layout(&self) -> Layout {
        let dec = self.encoder.num_params();
        let dyn_ = dec + self.decoder.num_params();
        Layout {
            dec,
            dyn_,
            end: dyn_ + self.dynamics.num_params(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.layout().end
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.num_params());
        self.encoder.net.write_params(&mut p);
        self.decoder.write_params(&mut p);
        self.dynamics.write_params(&mut p);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let l = self.layout();
        assert_eq!(p.len(), l.end, "parameter vector length");
        self.encoder.net.read_params(&p[..l.dec]);
        self.decoder.read_params(&p[l.dec..l.dyn_]);
        self.dynamics.set_params(&p[l.dyn_..]);
    }

    /// Whether the KL prior is centered on the rest latent.
    fn kl_centered(&self) -> bool {
        self.dynamics.family() == FamilyKind::Oscillator
    }

    /// Encoder means of all frames (columns of the result).
    pub fn encode_frames(&self, data: &Dataset, frames: &[usize]) -> DMatrix<f64> {
        let n = data.frame_size();
        let x = DMatrix::from_fn(n, frames.len(), |i, j| data.frame_pixels(frames[j])[i] as f64);
        self.encoder.encode_batch(&x).0
    }

    /// Latent state of frame `i` (mean coordinates, Jacobian velocity).
    pub fn latent_state(&self, data: &Dataset, i: usize) -> Result<LatentState> {
        let o = data.observation(i).pixels;
        let z = self.encoder.mean(&o)?;
        let zdot = if i > 0 && i + 1 < data.len() {
            let prev = data.observation(i - 1).pixels;
            let next = data.observation(i + 1).pixels;
            self.encoder.latent_velocity(&prev, &o, &next, data.dt())?
        } else {
            DVector::zeros(z.len())
        };
        Ok(LatentState::new(z, zdot))
    }

    /// Value and (optionally) gradient of the full objective on `batch`.
    pub fn batch_loss(
        &self,
        data: &Dataset,
        rest: &RestPair,
        batch: &Batch,
        objective: &Objective,
        exec: Execution,
        want_grad: bool,
    ) -> Result<(LossParts, Option<Vec<f64>>)> {
        check_dim("frame size", self.encoder.input_dim(), data.frame_size())?;
        if batch.starts.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let n_seq = batch.starts.len() as f64;
        let per_seq = parallel::map_indexed(exec, &batch.starts, |k, &start| {
            let mut grad = if want_grad { vec![0.0; self.num_params()] } else { Vec::new() };
            let parts = self.sequence_terms(data, start, batch.horizon, &batch.noise[k], objective, n_seq, want_grad.then_some(&mut grad[..]))?;
            Ok::<_, Error>((parts, grad))
        });
        let mut total = LossParts::default();
        let mut grad = if want_grad { Some(vec![0.0; self.num_params()]) } else { None };
        for r in per_seq {
            let (parts, g) = r?;
            total += parts;
            if let Some(acc) = grad.as_mut() {
                for (a, b) in acc.iter_mut().zip(&g) {
                    *a += b;
                }
            }
        }
        total += self.rest_terms(rest, objective, grad.as_deref_mut())?;
        Ok((total, grad))
    }

    /// Terms of one subsequence, pre-divided by the batch size.
    #[allow(clippy::too_many_arguments)]
    fn sequence_terms(
        &self,
        data: &Dataset,
        start: usize,
        horizon: usize,
        noise: &DMatrix<f64>,
        obj: &Objective,
        n_seq: f64,
        mut grad: Option<&mut [f64]>,
    ) -> Result<LossParts> {
        let n = self.latent_dim();
        let frames = horizon + 1;
        let layout = self.layout();
        let dt = self.dynamics.dt();
        if start == 0 || start + horizon + 1 >= data.len() {
            return Err(Error::InvalidArgument(format!("subsequence at {start} with horizon {horizon} exceeds the data")));
        }
        let window = frame_matrix(data, start - 1, frames + 2);
        let obs = window.columns(1, frames).into_owned();
        let dirs = (window.columns(2, frames) - window.columns(0, frames)) / (2.0 * dt);
        let enc = self.encoder.forward_jvp(&obs, &dirs);
        let out = enc.output();
        let mu = out.rows(0, n).into_owned();
        let log_var = out.rows(n, n).into_owned();
        let zdot_t = enc.tangent().rows(0, n).into_owned();

        let mut g_mu = DMatrix::zeros(n, frames);
        let mut g_lv = DMatrix::zeros(n, frames);
        let mut g_zdot = DMatrix::zeros(n, frames);
        let mut parts = LossParts::default();
        let pixels = obs.nrows() as f64;

        // Static reconstruction through sampled latents.
        let sigma = log_var.map(|v| (0.5 * v).exp());
        let z_s = &mu + sigma.component_mul(noise);
        let dec_s = self.decoder.forward(&z_s);
        let diff_s = dec_s.output() - &obs;
        let c_static = 1.0 / (n_seq * frames as f64 * pixels);
        parts.static_recon = diff_s.norm_squared() * c_static;
        let w = obs_weights(obj);

        // KL, optionally centered on the rest latent.
        let center = if self.kl_centered() { self.dynamics.z0().clone() } else { DVector::zeros(n) };
        let c_kl = 1.0 / (n_seq * frames as f64);
        let mut kl = 0.0;
        for j in 0..frames {
            for i in 0..n {
                let d = mu[(i, j)] - center[i];
                kl += 1.0 + log_var[(i, j)] - d * d - log_var[(i, j)].exp();
            }
        }
        parts.kl = -0.5 * kl * c_kl;

        // Rollout from the first frame under the recorded commands.
        let xi0 = LatentState::new(mu.column(0).into_owned(), zdot_t.column(0).into_owned());
        let inputs: Vec<DVector<f64>> = (0..horizon).map(|h| command(data, start + h)).collect();
        let roll = self.dynamics.rollout(&xi0, &inputs)?;
        let zhat = DMatrix::from_fn(n, horizon, |i, h| roll.states[h].z[i]);
        let dec_d = self.decoder.forward(&zhat);
        let target = obs.columns(1, horizon);
        let diff_d = dec_d.output() - target;
        let c_dyn = 1.0 / (n_seq * horizon as f64 * pixels);
        parts.dyn_image = diff_d.norm_squared() * c_dyn;

        let c_lat = 1.0 / (n_seq * horizon as f64 * n as f64);
        let mut latent = 0.0;
        let mut cot = Vec::with_capacity(horizon);
        for h in 0..horizon {
            let s = &roll.states[h];
            let ez = &s.z - mu.column(h + 1);
            let ev = (&s.zdot - zdot_t.column(h + 1)) * dt;
            latent += ez.norm_squared() + ev.norm_squared();
            if grad.is_some() {
                let gz = &ez * (2.0 * c_lat * obj.weights.latent);
                let gv = &ev * (2.0 * c_lat * obj.weights.latent * dt);
                g_mu.column_mut(h + 1).axpy(-1.0, &gz, 1.0);
                g_zdot.column_mut(h + 1).axpy(-1.0, &gv, 1.0);
                let mut c = DVector::zeros(2 * n);
                c.rows_mut(0, n).copy_from(&gz);
                c.rows_mut(n, n).copy_from(&gv);
                cot.push(c);
            }
        }
        parts.latent = latent * c_lat;
        parts.total = w.0 * parts.static_recon + w.1 * parts.dyn_image + w.2 * parts.latent + obj.beta * parts.kl;

        let Some(grad) = grad.as_deref_mut() else {
            return Ok(parts);
        };
        let (g_enc, rest) = grad.split_at_mut(layout.dec);
        let (g_dec, g_dyn) = rest.split_at_mut(layout.dyn_ - layout.dec);

        // Dynamic image term back to predicted latents.
        let g_img_d = diff_d * (2.0 * c_dyn * w.1);
        let g_zhat = self.decoder.backward(&dec_d, &g_img_d, g_dec);
        for h in 0..horizon {
            let mut c = cot[h].rows_mut(0, n);
            c += g_zhat.column(h);
        }
        let rg = self.dynamics.rollout_vjp(&roll.tape, &cot)?;
        for (a, b) in g_dyn.iter_mut().zip(&rg.dparams) {
            *a += b;
        }
        g_mu.column_mut(0).axpy(1.0, &rg.dxi0.rows(0, n), 1.0);
        g_zdot.column_mut(0).axpy(1.0, &rg.dxi0.rows(n, n), 1.0);

        // Static term back to means and log-variances.
        let g_img_s = diff_s * (2.0 * c_static * w.0);
        let g_zs = self.decoder.backward(&dec_s, &g_img_s, g_dec);
        g_mu += &g_zs;
        g_lv += g_zs.component_mul(noise).component_mul(&sigma) * 0.5;

        // KL gradients.
        let k = obj.beta * c_kl;
        let dyn_len = g_dyn.len();
        for j in 0..frames {
            for i in 0..n {
                let d = mu[(i, j)] - center[i];
                g_mu[(i, j)] += k * d;
                g_lv[(i, j)] += k * 0.5 * (log_var[(i, j)].exp() - 1.0);
                if self.kl_centered() {
                    g_dyn[dyn_len - n + i] -= k * d;
                }
            }
        }

        let mut g_out = DMatrix::zeros(2 * n, frames);
        g_out.rows_mut(0, n).copy_from(&g_mu);
        g_out.rows_mut(n, n).copy_from(&g_lv);
        let mut g_tan = DMatrix::zeros(2 * n, frames);
        g_tan.rows_mut(0, n).copy_from(&g_zdot);
        self.encoder.net.backward_jvp_params(&enc, &g_out, &g_tan, g_enc);
        Ok(parts)
    }

    /// Weighted rest-state term; gradient accumulated into `grad`.
    fn rest_terms(&self, rest: &RestPair, obj: &Objective, grad: Option<&mut [f64]>) -> Result<LossParts> {
        let mut parts = LossParts::default();
        if obj.weights.rest == 0.0 {
            parts.rest = self.loss_rest(rest)?;
            return Ok(parts);
        }
        let n = self.latent_dim();
        let layout = self.layout();
        let x = DMatrix::from_column_slice(rest.observation.len(), 1, &rest.observation);
        let trace = self.encoder.net.forward(&x);
        let mu: DVector<f64> = trace.output().column(0).rows(0, n).into_owned();
        let z0 = self.dynamics.z0().clone();
        let dt = self.dynamics.dt();
        let roll = self.dynamics.rollout(&LatentState::at_rest(mu.clone()), std::slice::from_ref(&rest.command))?;
        let next = &roll.states[0];
        let e_enc = &mu - &z0;
        let e_z = &next.z - &z0;
        let e_v = &next.zdot * dt;
        let nf = n as f64;
        parts.rest = 0.5 * (e_enc.norm_squared() / nf + e_z.norm_squared() / nf + e_v.norm_squared() / nf);
        parts.total = obj.weights.rest * parts.rest;
        let Some(grad) = grad else {
            return Ok(parts);
        };
        let c = obj.weights.rest / nf;
        let mut cot = DVector::zeros(2 * n);
        cot.rows_mut(0, n).copy_from(&(&e_z * c));
        cot.rows_mut(n, n).copy_from(&(&e_v * (c * dt)));
        let rg = self.dynamics.rollout_vjp(&roll.tape, &[cot])?;
        let (g_enc, rest_g) = grad.split_at_mut(layout.dec);
        let g_dyn = &mut rest_g[layout.dyn_ - layout.dec..];
        for (a, b) in g_dyn.iter_mut().zip(&rg.dparams) {
            *a += b;
        }
        let dyn_len = g_dyn.len();
        for i in 0..n {
            g_dyn[dyn_len - n + i] -= c * (e_enc[i] + e_z[i]);
        }
        let g_mu = &e_enc * c + rg.dxi0.rows(0, n);
        let mut g_out = DMatrix::zeros(2 * n, 1);
        g_out.view_mut((0, 0), (n, 1)).copy_from(&g_mu);
        self.encoder.net.backward_params(&trace, &g_out, g_enc);
        Ok(parts)
    }

    /// Rest-state loss: encoder agreement with the rest latent and one-step
    /// stationarity of the rest latent under the rest command.
    pub fn loss_rest(&self, rest: &RestPair) -> Result<f64> {
        let mu = self.encoder.mean(&rest.observation)?;
        let z0 = self.dynamics.z0();
        let next = self.dynamics.step(&LatentState::at_rest(mu.clone()), &rest.command)?;
        let n = mu.len() as f64;
        let dt = self.dynamics.dt();
        Ok(0.5 * ((&mu - z0).norm_squared() / n + (&next.z - z0).norm_squared() / n + (&next.zdot * dt).norm_squared() / n))
    }
}

fn obs_weights(obj: &Objective) -> (f64, f64, f64) {
    (obj.weights.static_recon, obj.weights.dyn_image, obj.weights.latent)
}
