use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Result};
use crate::nn::{Activation, JvpTrace, Mlp};
use crate::tensor::{self, TensorMap};

/// Initial bias of the log-variance head; small posterior noise at the start.
const INITIAL_LOG_VARIANCE: f64 = -6.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodeMode {
    Mean,
    Sample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoding {
    pub z: DVector<f64>,
    pub mu: DVector<f64>,
    pub log_var: DVector<f64>,
}

/// Dense network from flattened pixels to the mean and log-variance of the
/// latent coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub net: Mlp,
    latent_dim: usize,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(pixels: usize, latent_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let mut net = Mlp::new(
            &[pixels, hidden, hidden, 2 * latent_dim],
            Activation::Tanh,
            Activation::Identity,
            rng,
        );
        let last = net.layers.last_mut().expect("three layers");
        for i in latent_dim..2 * latent_dim {
            last.bias[i] = INITIAL_LOG_VARIANCE;
        }
        Encoder { net, latent_dim }
    }

    pub fn from_net(net: Mlp) -> Self {
        let latent_dim = net.output_dim() / 2;
        Encoder { net, latent_dim }
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn num_params(&self) -> usize {
        self.net.num_params()
    }

    /// Means and log-variances for a batch of observations stored as columns.
    pub fn encode_batch(&self, obs: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let out = self.net.forward(obs);
        let y = out.output();
        let n = self.latent_dim;
        (y.rows(0, n).into_owned(), y.rows(n, n).into_owned())
    }

    /// Encoder mean of one observation.
    pub fn mean(&self, o: &[f64]) -> Result<DVector<f64>> {
        check_dim("encoder input", self.input_dim(), o.len())?;
        let y = self.net.eval(&DVector::from_column_slice(o));
        Ok(y.rows(0, self.latent_dim).into_owned())
    }

    /// `Mean` is deterministic; `Sample` draws `mu + sigma * eps` from `rng`.
    pub fn encode<R: Rng + ?Sized>(&self, o: &[f64], mode: EncodeMode, rng: &mut R) -> Result<Encoding> {
        check_dim("encoder input", self.input_dim(), o.len())?;
        let y = self.net.eval(&DVector::from_column_slice(o));
        let n = self.latent_dim;
        let mu: DVector<f64> = y.rows(0, n).into_owned();
        let log_var: DVector<f64> = y.rows(n, n).into_owned();
        let z = match mode {
            EncodeMode::Mean => mu.clone(),
            EncodeMode::Sample => DVector::from_fn(n, |i, _| {
                let eps: f64 = rng.sample(StandardNormal);
                mu[i] + (0.5 * log_var[i]).exp() * eps
            }),
        };
        Ok(Encoding { z, mu, log_var })
    }

    /// Encoder outputs and their directional derivatives along the per-column
    /// tangents `dirs`.
    pub fn forward_jvp(&self, obs: &DMatrix<f64>, dirs: &DMatrix<f64>) -> JvpTrace {
        self.net.forward_jvp(obs, dirs)
    }

    /// Latent velocity of the middle frame: the encoder-mean Jacobian applied to
    /// the central difference of the observations.
    pub fn latent_velocity(&self, o_prev: &[f64], o: &[f64], o_next: &[f64], dt: f64) -> Result<DVector<f64>> {
        let d = self.input_dim();
        check_dim("previous frame", d, o_prev.len())?;
        check_dim("frame", d, o.len())?;
        check_dim("next frame", d, o_next.len())?;
        let x = DMatrix::from_column_slice(d, 1, o);
        let v = DMatrix::from_fn(d, 1, |i, _| (o_next[i] - o_prev[i]) / (2.0 * dt));
        let trace = self.net.forward_jvp(&x, &v);
        Ok(trace.tangent().column(0).rows(0, self.latent_dim).into_owned())
    }

    pub fn tensors(&self, prefix: &str, out: &mut TensorMap) {
        tensor::mlp_tensors(&self.net, prefix, out);
    }

    pub fn load_tensors(&mut self, prefix: &str, src: &TensorMap) -> Result<()> {
        tensor::load_mlp(src, prefix, &mut self.net)
    }
}
