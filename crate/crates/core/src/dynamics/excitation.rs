use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{Activation, Mlp, MlpTrace};

/// Pressure at which excitation inputs are centered (kPa).
pub const PRESSURE_CENTER: f64 = 43.0;
/// Pressure normalization scale (kPa).
pub const PRESSURE_SCALE: f64 = 43.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExcitationKind {
    Mlp,
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExcitationMap {
    Mlp(Mlp),
    Linear(DMatrix<f64>),
}

/// Input-to-force map `B(u)`. Inputs are normalized as
/// `(u - input_center) / input_scale` before entering the map.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcitationNet {
    pub map: ExcitationMap,
    pub input_center: f64,
    pub input_scale: f64,
}

impl ExcitationNet {
    /// Two tanh hidden layers of width `hidden`.
    pub fn mlp<R: Rng + ?Sized>(inputs: usize, outputs: usize, hidden: usize, rng: &mut R) -> Self {
        let net = Mlp::new(
            &[inputs, hidden, hidden, outputs],
            Activation::Tanh,
            Activation::Identity,
            rng,
        );
        ExcitationNet::from_map(ExcitationMap::Mlp(net))
    }

    /// Wraps a map with the default pressure normalization.
    pub fn from_map(map: ExcitationMap) -> Self {
        ExcitationNet {
            map,
            input_center: PRESSURE_CENTER,
            input_scale: PRESSURE_SCALE,
        }
    }

    /// Feeds raw inputs to the map without normalization.
    pub fn unnormalized(mut self) -> Self {
        self.input_center = 0.0;
        self.input_scale = 1.0;
        self
    }

    pub fn linear<R: Rng + ?Sized>(inputs: usize, outputs: usize, scale: f64, rng: &mut R) -> Self {
        ExcitationNet::from_map(ExcitationMap::Linear(DMatrix::from_fn(
            outputs,
            inputs,
            |_, _| rng.random_range(-scale..scale),
        )))
    }

    pub fn zeros_linear(inputs: usize, outputs: usize) -> Self {
        ExcitationNet::from_map(ExcitationMap::Linear(DMatrix::zeros(outputs, inputs)))
    }

    pub fn kind(&self) -> ExcitationKind {
        match &self.map {
            ExcitationMap::Mlp(_) => ExcitationKind::Mlp,
            ExcitationMap::Linear(_) => ExcitationKind::Linear,
        }
    }

    pub fn input_dim(&self) -> usize {
        match &self.map {
            ExcitationMap::Mlp(n) => n.input_dim(),
            ExcitationMap::Linear(b) => b.ncols(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match &self.map {
            ExcitationMap::Mlp(n) => n.output_dim(),
            ExcitationMap::Linear(b) => b.nrows(),
        }
    }

    pub fn num_params(&self) -> usize {
        match &self.map {
            ExcitationMap::Mlp(n) => n.num_params(),
            ExcitationMap::Linear(b) => b.len(),
        }
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        match &self.map {
            ExcitationMap::Mlp(n) => n.write_params(out),
            ExcitationMap::Linear(b) => out.extend_from_slice(b.as_slice()),
        }
    }

    pub fn read_params(&mut self, src: &[f64]) -> usize {
        match &mut self.map {
            ExcitationMap::Mlp(n) => n.read_params(src),
            ExcitationMap::Linear(b) => {
                let n = b.len();
                b.as_mut_slice().copy_from_slice(&src[..n]);
                n
            }
        }
    }

    fn normalize(&self, u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(u.len(), 1, |i, _| {
            (u[i] - self.input_center) / self.input_scale
        })
    }

    pub fn eval(&self, u: &DVector<f64>) -> DVector<f64> {
        self.eval_traced(u).0
    }

    pub(crate) fn eval_traced(&self, u: &DVector<f64>) -> (DVector<f64>, Option<MlpTrace>) {
        let un = self.normalize(u);
        match &self.map {
            ExcitationMap::Mlp(n) => {
                let tr = n.forward(&un);
                (DVector::from_column_slice(tr.output().as_slice()), Some(tr))
            }
            ExcitationMap::Linear(b) => {
                let out = b * &un;
                (DVector::from_column_slice(out.as_slice()), None)
            }
        }
    }

    /// Accumulates parameter gradients and returns the gradient w.r.t. raw `u`.
    pub(crate) fn backward(
        &self,
        u: &DVector<f64>,
        trace: Option<&MlpTrace>,
        g_out: &DVector<f64>,
        grad: &mut [f64],
    ) -> DVector<f64> {
        let g = DMatrix::from_column_slice(g_out.len(), 1, g_out.as_slice());
        let g_un = match &self.map {
            ExcitationMap::Mlp(n) => {
                n.backward(trace.expect("mlp excitation needs a trace"), &g, grad)
            }
            ExcitationMap::Linear(b) => {
                let un = self.normalize(u);
                let (rows, cols) = b.shape();
                let mut gb = nalgebra::DMatrixViewMut::from_slice(grad, rows, cols);
                gb.gemm(1.0, &g, &un.transpose(), 1.0);
                b.tr_mul(&g)
            }
        };
        DVector::from_iterator(g_un.len(), g_un.iter().map(|v| v / self.input_scale))
    }
}
