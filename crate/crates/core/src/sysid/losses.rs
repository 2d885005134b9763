//! Loss formulas evaluated directly, one term at a time.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::LatentState;
use crate::error::{check_dim, Error, Result};
use crate::plant::Dataset;

use super::model::SysModel;

/// Mean squared difference of two pixel vectors.
pub fn image_mse(a: &[f64], b: &[f64]) -> f64 {
    crate::plant::mse(a, b)
}

/// KL divergence of diagonal Gaussians (columns of `mu`, `log_var`) from a unit
/// Gaussian centered at `center` (zero when `None`), summed over dimensions and
/// averaged over columns.
pub fn loss_kl(mu: &DMatrix<f64>, log_var: &DMatrix<f64>, center: Option<&DVector<f64>>) -> f64 {
    assert_eq!(mu.shape(), log_var.shape(), "mean and log-variance shapes differ");
    let mut acc = 0.0;
    for j in 0..mu.ncols() {
        for i in 0..mu.nrows() {
            let c = center.map_or(0.0, |c| c[i]);
            let d = mu[(i, j)] - c;
            acc += 1.0 + log_var[(i, j)] - d * d - log_var[(i, j)].exp();
        }
    }
    -acc / (2.0 * mu.ncols() as f64)
}

/// Mean over the horizon of coordinate MSE plus `dt`-scaled velocity MSE.
pub fn latent_sequence_loss(pred: &[LatentState], target: &[LatentState], dt: f64) -> Result<f64> {
    check_dim("latent targets", pred.len(), target.len())?;
    if pred.is_empty() {
        return Err(Error::InvalidArgument("empty prediction".into()));
    }
    let mut acc = 0.0;
    for (p, t) in pred.iter().zip(target) {
        let n = p.z.len() as f64;
        acc += (&p.z - &t.z).norm_squared() / n + ((&p.zdot - &t.zdot) * dt).norm_squared() / n;
    }
    Ok(acc / pred.len() as f64)
}

impl SysModel {
    fn rollout_from(&self, data: &Dataset, start: usize, horizon: usize) -> Result<Vec<LatentState>> {
        if horizon == 0 || start == 0 || start + horizon + 1 >= data.len() {
            return Err(Error::InvalidArgument(format!(
                "horizon {horizon} from frame {start} exceeds the sequence"
            )));
        }
        let xi0 = self.latent_state(data, start)?;
        let inputs: Vec<DVector<f64>> = (0..horizon).map(|h| DVector::from_column_slice(&data.u_cmd[start + h])).collect();
        Ok(self.dynamics.rollout(&xi0, &inputs)?.states)
    }

    /// Mean over sequences and steps of the image MSE between decoded
    /// `h`-step predictions and the recorded frames.
    pub fn loss_dyn_multistep(&self, data: &Dataset, starts: &[usize], horizon: usize) -> Result<f64> {
        let mut acc = 0.0;
        for &s in starts {
            let states = self.rollout_from(data, s, horizon)?;
            for (h, st) in states.iter().enumerate() {
                let img = self.decoder.decode(&st.z)?;
                acc += image_mse(&img, &data.observation(s + h + 1).pixels);
            }
        }
        Ok(acc / (starts.len() * horizon) as f64)
    }

    /// Mean over sequences of [`latent_sequence_loss`] against encoded frames.
    pub fn loss_latent_multistep(&self, data: &Dataset, starts: &[usize], horizon: usize) -> Result<f64> {
        let mut acc = 0.0;
        for &s in starts {
            let pred = self.rollout_from(data, s, horizon)?;
            let target = (1..=horizon).map(|h| self.latent_state(data, s + h)).collect::<Result<Vec<_>>>()?;
            acc += latent_sequence_loss(&pred, &target, self.dynamics.dt())?;
        }
        Ok(acc / starts.len() as f64)
    }

    /// Mean autoencoding MSE (mean latents) over the given frames.
    pub fn reconstruction_mse(&self, data: &Dataset, frames: &[usize]) -> Result<f64> {
        let mut acc = 0.0;
        for chunk in frames.chunks(256) {
            let x = DMatrix::from_fn(data.frame_size(), chunk.len(), |i, j| data.frame_pixels(chunk[j])[i] as f64);
            let (mu, _) = self.encoder.encode_batch(&x);
            let y = self.decoder.forward(&mu);
            acc += (y.output() - &x).norm_squared() / data.frame_size() as f64;
        }
        Ok(acc / frames.len() as f64)
    }
}
