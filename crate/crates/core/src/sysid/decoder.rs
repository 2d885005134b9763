use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Result};
use crate::nn::{sigmoid, Activation, Mlp, MlpTrace};
use crate::tensor::{self, Tensor, TensorMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    Dense,
    KeypointBroadcast,
}

/// Pixels per latent unit of the blob placement map.
pub const KEYPOINT_SCALE: f64 = 8.0;
const BACKGROUND_LOGIT: f64 = -4.0;
const INITIAL_AMPLITUDE: f64 = 3.0;
const INITIAL_WIDTH: f64 = 1.2;

/// Fixed affine placement of blob centers: `center = origin + scale * z_pair`,
/// in (column, row) pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeypointMap {
    pub origin: [f64; 2],
    pub scale: f64,
}

impl KeypointMap {
    pub fn place(&self, pair: [f64; 2]) -> [f64; 2] {
        [
            self.origin[0] + self.scale * pair[0],
            self.origin[1] + self.scale * pair[1],
        ]
    }
}

/// One isotropic Gaussian of a blob template, relative to the blob center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Component {
    pub dx: f64,
    pub dy: f64,
    pub log_width: f64,
    pub amplitude: f64,
}

const COMPONENT_PARAMS: usize = 4;

/// Each latent pair positions one learned blob template; blob fields are summed
/// on top of a learned background and squashed by a sigmoid.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointDecoder {
    pub height: usize,
    pub width: usize,
    pub map: KeypointMap,
    pub background: DVector<f64>,
    /// `blobs[j]` is the template tied to latent pair `j`.
    pub blobs: Vec<Vec<Component>>,
}

/// Separable Gaussian factors of one component along columns and rows.
struct Factors {
    a: f64,
    s2: f64,
    cx: f64,
    cy: f64,
    gx: Vec<f64>,
    gy: Vec<f64>,
}

impl KeypointDecoder {
    pub fn new<R: Rng + ?Sized>(height: usize, width: usize, pairs: usize, components: usize, rng: &mut R) -> Self {
        let map = KeypointMap {
            origin: [0.5 * width as f64, 0.375 * height as f64],
            scale: KEYPOINT_SCALE,
        };
        let blobs = (0..pairs)
            .map(|_| {
                (0..components)
                    .map(|_| Component {
                        dx: 1.5 * rng.sample::<f64, _>(StandardNormal),
                        dy: 1.5 * rng.sample::<f64, _>(StandardNormal),
                        log_width: INITIAL_WIDTH.ln(),
                        amplitude: INITIAL_AMPLITUDE,
                    })
                    .collect()
            })
            .collect();
        KeypointDecoder {
            height,
            width,
            map,
            background: DVector::from_element(height * width, BACKGROUND_LOGIT),
            blobs,
        }
    }

    pub fn pairs(&self) -> usize {
        self.blobs.len()
    }

    pub fn components(&self) -> usize {
        self.blobs.first().map(Vec::len).unwrap_or(0)
    }

    pub fn num_params(&self) -> usize {
        self.background.len() + self.pairs() * self.components() * COMPONENT_PARAMS
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.background.as_slice());
        for c in self.blobs.iter().flatten() {
            out.extend_from_slice(&[c.dx, c.dy, c.log_width, c.amplitude]);
        }
    }

    pub fn read_params(&mut self, src: &[f64]) -> usize {
        let nb = self.background.len();
        self.background.as_mut_slice().copy_from_slice(&src[..nb]);
        let mut off = nb;
        for c in self.blobs.iter_mut().flatten() {
            c.dx = src[off];
            c.dy = src[off + 1];
            c.log_width = src[off + 2];
            c.amplitude = src[off + 3];
            off += COMPONENT_PARAMS;
        }
        off
    }

    /// Image positions of the blob centers for latent coordinates `z`.
    pub fn centers(&self, z: &[f64]) -> Vec<[f64; 2]> {
        (0..self.pairs()).map(|j| self.map.place([z[2 * j], z[2 * j + 1]])).collect()
    }

    fn factors(&self, c: &Component, center: [f64; 2]) -> Factors {
        let s = c.log_width.exp();
        let s2 = s * s;
        let cx = center[0] + c.dx;
        let cy = center[1] + c.dy;
        let gauss = |p: f64, m: f64| (-(p - m) * (p - m) / (2.0 * s2)).exp();
        Factors {
            a: c.amplitude,
            s2,
            cx,
            cy,
            gx: (0..self.width).map(|k| gauss(k as f64 + 0.5, cx)).collect(),
            gy: (0..self.height).map(|k| gauss(k as f64 + 0.5, cy)).collect(),
        }
    }

    /// Summed blob field for one latent vector, before background and squash,
    /// restricted to blob `only` when given.
    pub fn blob_field(&self, z: &[f64], only: Option<usize>) -> Vec<f64> {
        let mut field = vec![0.0; self.height * self.width];
        for (j, center) in self.centers(z).into_iter().enumerate() {
            if only.is_some_and(|k| k != j) {
                continue;
            }
            for comp in &self.blobs[j] {
                let f = self.factors(comp, center);
                for r in 0..self.height {
                    let ay = f.a * f.gy[r];
                    let row = &mut field[r * self.width..(r + 1) * self.width];
                    for (v, gx) in row.iter_mut().zip(&f.gx) {
                        *v += ay * gx;
                    }
                }
            }
        }
        field
    }

    fn decode_column(&self, z: &[f64]) -> Vec<f64> {
        let mut field = self.blob_field(z, None);
        for (v, b) in field.iter_mut().zip(self.background.iter()) {
            *v = sigmoid(*v + b);
        }
        field
    }

    /// Accumulates parameter gradients for one column; returns `dL/dz`.
    fn backward_column(&self, z: &[f64], y: &[f64], g_y: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let (h, w) = (self.height, self.width);
        let g_pre: Vec<f64> = y.iter().zip(g_y).map(|(y, g)| g * y * (1.0 - y)).collect();
        let nb = self.background.len();
        for (gb, g) in grad[..nb].iter_mut().zip(&g_pre) {
            *gb += g;
        }
        let mut g_z = vec![0.0; z.len()];
        let mut off = nb;
        let mut gx_dot = vec![0.0; h];
        let mut gx1_dot = vec![0.0; h];
        let mut gx2_dot = vec![0.0; h];
        for (j, center) in self.centers(z).into_iter().enumerate() {
            for comp in &self.blobs[j] {
                let f = self.factors(comp, center);
                let dxs: Vec<f64> = (0..w).map(|k| k as f64 + 0.5 - f.cx).collect();
                for r in 0..h {
                    let row = &g_pre[r * w..(r + 1) * w];
                    let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
                    for k in 0..w {
                        let t = row[k] * f.gx[k];
                        s0 += t;
                        s1 += t * dxs[k];
                        s2 += t * dxs[k] * dxs[k];
                    }
                    gx_dot[r] = s0;
                    gx1_dot[r] = s1;
                    gx2_dot[r] = s2;
                }
                let (mut d_a, mut d_cx, mut d_cy, mut d_w) = (0.0, 0.0, 0.0, 0.0);
                for r in 0..h {
                    let dy = r as f64 + 0.5 - f.cy;
                    let gy = f.gy[r];
                    d_a += gy * gx_dot[r];
                    d_cx += gy * gx1_dot[r];
                    d_cy += gy * dy * gx_dot[r];
                    d_w += gy * (gx2_dot[r] + dy * dy * gx_dot[r]);
                }
                d_cx *= f.a / f.s2;
                d_cy *= f.a / f.s2;
                d_w *= f.a / f.s2;
                grad[off] += d_cx;
                grad[off + 1] += d_cy;
                grad[off + 2] += d_w;
                grad[off + 3] += d_a;
                off += COMPONENT_PARAMS;
                g_z[2 * j] += self.map.scale * d_cx;
                g_z[2 * j + 1] += self.map.scale * d_cy;
            }
        }
        g_z
    }

    fn tensors(&self, prefix: &str, out: &mut TensorMap) {
        out.insert(format!("{prefix}.background"), Tensor::from_vector(&self.background));
        let blob_matrix = |j: usize| {
            DMatrix::from_fn(self.components(), COMPONENT_PARAMS, |k, p| {
                let c = &self.blobs[j][k];
                [c.dx, c.dy, c.log_width, c.amplitude][p]
            })
        };
        for j in 0..self.pairs() {
            out.insert(format!("{prefix}.blob{j}"), Tensor::from_matrix(&blob_matrix(j)));
        }
        out.insert(format!("{prefix}.origin"), Tensor::Vector(self.map.origin.to_vec()));
        out.insert(format!("{prefix}.scale"), Tensor::Scalar(self.map.scale));
    }

    fn load_tensors(&mut self, prefix: &str, src: &TensorMap) -> Result<()> {
        tensor::load_vector(src, &format!("{prefix}.background"), &mut self.background)?;
        for j in 0..self.pairs() {
            let mut m = DMatrix::zeros(self.components(), COMPONENT_PARAMS);
            tensor::load_matrix(src, &format!("{prefix}.blob{j}"), &mut m)?;
            for (k, c) in self.blobs[j].iter_mut().enumerate() {
                *c = Component {
                    dx: m[(k, 0)],
                    dy: m[(k, 1)],
                    log_width: m[(k, 2)],
                    amplitude: m[(k, 3)],
                };
            }
        }
        let mut origin = DVector::zeros(2);
        tensor::load_vector(src, &format!("{prefix}.origin"), &mut origin)?;
        self.map.origin = [origin[0], origin[1]];
        self.map.scale = tensor::load_scalar(src, &format!("{prefix}.scale"))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Decoder {
    /// Dense network from latent coordinates to sigmoid pixels.
    Dense(Mlp),
    KeypointBroadcast(KeypointDecoder),
}

/// What [`Decoder::backward`] needs from a forward pass.
#[derive(Debug, Clone)]
pub enum DecoderTrace {
    Dense(MlpTrace),
    Keypoint { z: DMatrix<f64>, y: DMatrix<f64> },
}

impl DecoderTrace {
    pub fn output(&self) -> &DMatrix<f64> {
        match self {
            DecoderTrace::Dense(t) => t.output(),
            DecoderTrace::Keypoint { y, .. } => y,
        }
    }
}

impl Decoder {
    pub fn new<R: Rng + ?Sized>(
        kind: DecoderKind,
        height: usize,
        width: usize,
        latent_dim: usize,
        hidden: usize,
        components: usize,
        rng: &mut R,
    ) -> Self {
        match kind {
            DecoderKind::Dense => Decoder::Dense(Mlp::new(
                &[latent_dim, hidden, hidden, height * width],
                Activation::Tanh,
                Activation::Sigmoid,
                rng,
            )),
            DecoderKind::KeypointBroadcast => {
                assert!(latent_dim % 2 == 0, "keypoint decoding needs latent pairs");
                Decoder::KeypointBroadcast(KeypointDecoder::new(height, width, latent_dim / 2, components, rng))
            }
        }
    }

    pub fn kind(&self) -> DecoderKind {
        match self {
            Decoder::Dense(_) => DecoderKind::Dense,
            Decoder::KeypointBroadcast(_) => DecoderKind::KeypointBroadcast,
        }
    }

    pub fn latent_dim(&self) -> usize {
        match self {
            Decoder::Dense(net) => net.input_dim(),
            Decoder::KeypointBroadcast(k) => 2 * k.pairs(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Decoder::Dense(net) => net.output_dim(),
            Decoder::KeypointBroadcast(k) => k.height * k.width,
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            Decoder::Dense(net) => net.num_params(),
            Decoder::KeypointBroadcast(k) => k.num_params(),
        }
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        match self {
            Decoder::Dense(net) => net.write_params(out),
            Decoder::KeypointBroadcast(k) => k.write_params(out),
        }
    }

    pub fn read_params(&mut self, src: &[f64]) -> usize {
        match self {
            Decoder::Dense(net) => net.read_params(src),
            Decoder::KeypointBroadcast(k) => k.read_params(src),
        }
    }

    /// Decodes latent columns into pixel columns.
    pub fn forward(&self, z: &DMatrix<f64>) -> DecoderTrace {
        match self {
            Decoder::Dense(net) => DecoderTrace::Dense(net.forward(z)),
            Decoder::KeypointBroadcast(k) => {
                let mut y = DMatrix::zeros(k.height * k.width, z.ncols());
                for (j, col) in z.column_iter().enumerate() {
                    let zc: Vec<f64> = col.iter().copied().collect();
                    y.column_mut(j).copy_from_slice(&k.decode_column(&zc));
                }
                DecoderTrace::Keypoint { z: z.clone(), y }
            }
        }
    }

    /// Accumulates parameter gradients into `grad`; returns `dL/dz` per column.
    pub fn backward(&self, trace: &DecoderTrace, g_out: &DMatrix<f64>, grad: &mut [f64]) -> DMatrix<f64> {
        match (self, trace) {
            (Decoder::Dense(net), DecoderTrace::Dense(t)) => net.backward(t, g_out, grad),
            (Decoder::KeypointBroadcast(k), DecoderTrace::Keypoint { z, y }) => {
                let mut g_z = DMatrix::zeros(z.nrows(), z.ncols());
                for j in 0..z.ncols() {
                    let zc: Vec<f64> = z.column(j).iter().copied().collect();
                    let gc = k.backward_column(&zc, y.column(j).as_slice(), g_out.column(j).as_slice(), grad);
                    g_z.column_mut(j).copy_from_slice(&gc);
                }
                g_z
            }
            _ => panic!("decoder trace from a different decoder variant"),
        }
    }

    pub fn decode(&self, z: &DVector<f64>) -> Result<Vec<f64>> {
        check_dim("decoder input", self.latent_dim(), z.len())?;
        let zm = DMatrix::from_column_slice(z.len(), 1, z.as_slice());
        Ok(self.forward(&zm).output().as_slice().to_vec())
    }

    pub fn tensors(&self, prefix: &str, out: &mut TensorMap) {
        match self {
            Decoder::Dense(net) => tensor::mlp_tensors(net, prefix, out),
            Decoder::KeypointBroadcast(k) => k.tensors(prefix, out),
        }
    }

    pub fn load_tensors(&mut self, prefix: &str, src: &TensorMap) -> Result<()> {
        match self {
            Decoder::Dense(net) => tensor::load_mlp(src, prefix, net),
            Decoder::KeypointBroadcast(k) => k.load_tensors(prefix, src),
        }
    }

    /// Blob placement map when the decoder ties latent pairs to image positions.
    pub fn keypoint_map(&self) -> Option<KeypointMap> {
        match self {
            Decoder::Dense(_) => None,
            Decoder::KeypointBroadcast(k) => Some(k.map),
        }
    }
}
