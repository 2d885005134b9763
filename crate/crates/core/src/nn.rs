//! Dense feed-forward networks with hand-written reverse-mode and
//! forward-over-reverse derivatives.
//!
//! Batches are stored column-wise: a batch of `n` inputs of dimension `d` is a
//! `d x n` matrix. Parameters are flattened layer by layer as
//! `weight (column-major), bias`, and every gradient routine accumulates into a
//! slice laid out the same way.

use nalgebra::{DMatrix, DMatrixViewMut, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, a: f64) -> f64 {
        match self {
            Activation::Identity => a,
            Activation::Tanh => a.tanh(),
            Activation::Sigmoid => sigmoid(a),
        }
    }

    /// First derivative, expressed through the activation output `y`.
    #[inline]
    fn d1(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }

    /// Second derivative, expressed through the activation output `y`.
    #[inline]
    fn d2(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 0.0,
            Activation::Tanh => -2.0 * y * (1.0 - y * y),
            Activation::Sigmoid => y * (1.0 - y) * (1.0 - 2.0 * y),
        }
    }
}

#[inline]
pub fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(a: f64) -> f64 {
    if a > 30.0 {
        a
    } else {
        a.exp().ln_1p()
    }
}

#[inline]
pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn pre_activation(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut a = &self.weight * x;
        for mut col in a.column_iter_mut() {
            col += &self.bias;
        }
        a
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Activations recorded by [`Mlp::forward`]; `acts[0]` is the input and
/// `acts[l + 1]` the output of layer `l`.
#[derive(Debug, Clone)]
pub struct MlpTrace {
    pub acts: Vec<DMatrix<f64>>,
}

impl MlpTrace {
    pub fn output(&self) -> &DMatrix<f64> {
        self.acts.last().expect("trace always holds the input")
    }
}

/// Primal and tangent activations recorded by [`Mlp::forward_jvp`].
#[derive(Debug, Clone)]
pub struct JvpTrace {
    pub acts: Vec<DMatrix<f64>>,
    pub tangents: Vec<DMatrix<f64>>,
    /// Tangents of each layer's pre-activation, `W * tangents[l]`.
    pub pre_tangents: Vec<DMatrix<f64>>,
}

impl JvpTrace {
    pub fn output(&self) -> &DMatrix<f64> {
        self.acts.last().expect("trace always holds the input")
    }

    pub fn tangent(&self) -> &DMatrix<f64> {
        self.tangents.last().expect("trace always holds the input")
    }
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Self {
        assert!(
            sizes.len() >= 2,
            "an MLP needs at least input and output sizes"
        );
        let n_layers = sizes.len() - 1;
        let layers = (0..n_layers)
            .map(|l| {
                let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weight =
                    DMatrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-limit..limit));
                Dense {
                    weight,
                    bias: DVector::zeros(fan_out),
                    activation: if l + 1 == n_layers { output } else { hidden },
                }
            })
            .collect();
        Mlp { layers }
    }

    /// Multiplies the last layer's weights by `factor` (small-output initialization).
    pub fn scale_output(mut self, factor: f64) -> Self {
        if let Some(last) = self.layers.last_mut() {
            last.weight *= factor;
        }
        self
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.weight.nrows()).unwrap_or(0)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Dense::num_params).sum()
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        for layer in &self.layers {
            out.extend_from_slice(layer.weight.as_slice());
            out.extend_from_slice(layer.bias.as_slice());
        }
    }

    /// Reads parameters from the front of `src`, returning how many were consumed.
    pub fn read_params(&mut self, src: &[f64]) -> usize {
        let mut off = 0;
        for layer in &mut self.layers {
            let nw = layer.weight.len();
            layer
                .weight
                .as_mut_slice()
                .copy_from_slice(&src[off..off + nw]);
            off += nw;
            let nb = layer.bias.len();
            layer
                .bias
                .as_mut_slice()
                .copy_from_slice(&src[off..off + nb]);
            off += nb;
        }
        off
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> MlpTrace {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        for layer in &self.layers {
            let mut a = layer.pre_activation(acts.last().unwrap());
            let act = layer.activation;
            if act != Activation::Identity {
                a.apply(|v| *v = act.apply(*v));
            }
            acts.push(a);
        }
        MlpTrace { acts }
    }

    /// Single-input convenience wrapper.
    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        let xm = DMatrix::from_column_slice(x.len(), 1, x.as_slice());
        let out = self.forward(&xm);
        DVector::from_column_slice(out.output().as_slice())
    }

    /// Reverse pass: accumulates parameter gradients into `grad` and returns the
    /// gradient with respect to the input batch.
    pub fn backward(
        &self,
        trace: &MlpTrace,
        g_out: &DMatrix<f64>,
        grad: &mut [f64],
    ) -> DMatrix<f64> {
        self.backward_impl(trace, g_out, grad, true)
    }

    /// Like [`Mlp::backward`] but skips the input gradient.
    pub fn backward_params(&self, trace: &MlpTrace, g_out: &DMatrix<f64>, grad: &mut [f64]) {
        self.backward_impl(trace, g_out, grad, false);
    }

    fn backward_impl(
        &self,
        trace: &MlpTrace,
        g_out: &DMatrix<f64>,
        grad: &mut [f64],
        input_grad: bool,
    ) -> DMatrix<f64> {
        debug_assert_eq!(grad.len(), self.num_params());
        let offsets = self.offsets();
        let mut g = g_out.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let y = &trace.acts[l + 1];
            let x = &trace.acts[l];
            let act = layer.activation;
            if act != Activation::Identity {
                g.zip_apply(y, |gv, yv| *gv *= act.d1(yv));
            }
            accumulate_layer_grad(layer, &mut grad[offsets[l]..offsets[l + 1]], &g, x, None);
            if l == 0 && !input_grad {
                return DMatrix::zeros(0, 0);
            }
            g = layer.weight.tr_mul(&g);
        }
        g
    }

    /// Forward pass that also propagates a tangent `v` (a directional derivative
    /// of the outputs with respect to the inputs along `v`).
    pub fn forward_jvp(&self, x: &DMatrix<f64>, v: &DMatrix<f64>) -> JvpTrace {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut tangents = Vec::with_capacity(self.layers.len() + 1);
        let mut pre_tangents = Vec::with_capacity(self.layers.len());
        acts.push(x.clone());
        tangents.push(v.clone());
        for layer in &self.layers {
            let mut a = layer.pre_activation(acts.last().unwrap());
            let pre_t = &layer.weight * tangents.last().unwrap();
            let mut t = pre_t.clone();
            let act = layer.activation;
            if act != Activation::Identity {
                a.apply(|v| *v = act.apply(*v));
                t.zip_apply(&a, |tv, yv| *tv *= act.d1(yv));
            }
            pre_tangents.push(pre_t);
            acts.push(a);
            tangents.push(t);
        }
        JvpTrace {
            acts,
            tangents,
            pre_tangents,
        }
    }

    /// Reverse pass through [`Mlp::forward_jvp`], given cotangents of both the
    /// primal output and the tangent output. The input tangent is treated as
    /// constant data; the returned matrix is the gradient with respect to the
    /// primal input.
    pub fn backward_jvp(
        &self,
        trace: &JvpTrace,
        g_out: &DMatrix<f64>,
        g_tan: &DMatrix<f64>,
        grad: &mut [f64],
    ) -> DMatrix<f64> {
        self.backward_jvp_impl(trace, g_out, g_tan, grad, true)
    }

    /// Like [`Mlp::backward_jvp`] but skips the input gradient.
    pub fn backward_jvp_params(
        &self,
        trace: &JvpTrace,
        g_out: &DMatrix<f64>,
        g_tan: &DMatrix<f64>,
        grad: &mut [f64],
    ) {
        self.backward_jvp_impl(trace, g_out, g_tan, grad, false);
    }

    fn backward_jvp_impl(
        &self,
        trace: &JvpTrace,
        g_out: &DMatrix<f64>,
        g_tan: &DMatrix<f64>,
        grad: &mut [f64],
        input_grad: bool,
    ) -> DMatrix<f64> {
        debug_assert_eq!(grad.len(), self.num_params());
        let offsets = self.offsets();
        let mut g = g_out.clone();
        let mut gt = g_tan.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let y = &trace.acts[l + 1];
            let x = &trace.acts[l];
            let xt = &trace.tangents[l];
            let act = layer.activation;
            if act != Activation::Identity {
                let ta = &trace.pre_tangents[l];
                for j in 0..g.ncols() {
                    for i in 0..g.nrows() {
                        let yv = y[(i, j)];
                        let d1 = act.d1(yv);
                        let gtv = gt[(i, j)];
                        g[(i, j)] = d1 * g[(i, j)] + act.d2(yv) * ta[(i, j)] * gtv;
                        gt[(i, j)] = d1 * gtv;
                    }
                }
            }
            accumulate_layer_grad(
                layer,
                &mut grad[offsets[l]..offsets[l + 1]],
                &g,
                x,
                Some((&gt, xt)),
            );
            if l == 0 && !input_grad {
                return DMatrix::zeros(0, 0);
            }
            g = layer.weight.tr_mul(&g);
            gt = layer.weight.tr_mul(&gt);
        }
        g
    }

    fn offsets(&self) -> Vec<usize> {
        let mut offs = Vec::with_capacity(self.layers.len() + 1);
        let mut acc = 0;
        offs.push(0);
        for layer in &self.layers {
            acc += layer.num_params();
            offs.push(acc);
        }
        offs
    }
}

fn accumulate_layer_grad(
    layer: &Dense,
    grad: &mut [f64],
    g_pre: &DMatrix<f64>,
    x: &DMatrix<f64>,
    tangent: Option<(&DMatrix<f64>, &DMatrix<f64>)>,
) {
    let (rows, cols) = layer.weight.shape();
    let (gw, gb) = grad.split_at_mut(rows * cols);
    let mut dw = DMatrixViewMut::from_slice(gw, rows, cols);
    dw.gemm(1.0, g_pre, &x.transpose(), 1.0);
    if let Some((gt, xt)) = tangent {
        dw.gemm(1.0, gt, &xt.transpose(), 1.0);
    }
    for (i, b) in gb.iter_mut().enumerate() {
        *b += g_pre.row(i).sum();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn net(rng: &mut ChaCha8Rng, out_act: Activation) -> Mlp {
        let mut mlp = Mlp::new(&[5, 7, 6, 3], Activation::Tanh, out_act, rng);
        for layer in &mut mlp.layers {
            layer.bias = DVector::from_fn(layer.bias.len(), |_, _| rng.random_range(-0.5..0.5));
        }
        mlp
    }

    #[test]
    fn param_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = net(&mut rng, Activation::Sigmoid);
        let mut b = net(&mut rng, Activation::Sigmoid);
        let mut p = Vec::new();
        a.write_params(&mut p);
        assert_eq!(p.len(), a.num_params());
        assert_eq!(b.read_params(&p), p.len());
        assert_eq!(a, b);
    }

    // Scalar objective: sum(w_out .* y) + sum(w_tan .* y_dot).
    fn objective(
        mlp: &Mlp,
        x: &DMatrix<f64>,
        v: &DMatrix<f64>,
        wo: &DMatrix<f64>,
        wt: &DMatrix<f64>,
    ) -> f64 {
        let tr = mlp.forward_jvp(x, v);
        tr.output().component_mul(wo).sum() + tr.tangent().component_mul(wt).sum()
    }

    #[test]
    fn backward_matches_finite_differences() {
        for act in [Activation::Identity, Activation::Sigmoid] {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let mlp = net(&mut rng, act);
            let x = random_matrix(&mut rng, 5, 4);
            let wo = random_matrix(&mut rng, 3, 4);
            let mut grad = vec![0.0; mlp.num_params()];
            let tr = mlp.forward(&x);
            let gx = mlp.backward(&tr, &wo, &mut grad);

            let f = |m: &Mlp, x: &DMatrix<f64>| m.forward(x).output().component_mul(&wo).sum();
            let mut p = Vec::new();
            mlp.write_params(&mut p);
            let h = 1e-6;
            for k in (0..p.len()).step_by(3) {
                let mut m = mlp.clone();
                let mut q = p.clone();
                q[k] += h;
                m.read_params(&q);
                let fp = f(&m, &x);
                q[k] -= 2.0 * h;
                m.read_params(&q);
                let fm = f(&m, &x);
                let fd = (fp - fm) / (2.0 * h);
                assert!(
                    (fd - grad[k]).abs() < 1e-7 * (1.0 + fd.abs()),
                    "param {k}: {fd} vs {}",
                    grad[k]
                );
            }
            for k in 0..x.len() {
                let mut xp = x.clone();
                xp[k] += h;
                let mut xm = x.clone();
                xm[k] -= h;
                let fd = (f(&mlp, &xp) - f(&mlp, &xm)) / (2.0 * h);
                assert!((fd - gx[k]).abs() < 1e-7 * (1.0 + fd.abs()));
            }
        }
    }

    #[test]
    fn jvp_matches_directional_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = net(&mut rng, Activation::Identity);
        let x = random_matrix(&mut rng, 5, 3);
        let v = random_matrix(&mut rng, 5, 3);
        let tr = mlp.forward_jvp(&x, &v);
        let h = 1e-5;
        let fp = mlp.forward(&(&x + &v * h));
        let fm = mlp.forward(&(&x - &v * h));
        let fd = (fp.output() - fm.output()) / (2.0 * h);
        assert!((fd - tr.tangent()).abs().max() < 1e-8);
        assert_eq!(tr.output(), mlp.forward(&x).output());
    }

    #[test]
    fn backward_jvp_matches_finite_differences() {
        for act in [Activation::Identity, Activation::Sigmoid, Activation::Tanh] {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let mlp = net(&mut rng, act);
            let x = random_matrix(&mut rng, 5, 3);
            let v = random_matrix(&mut rng, 5, 3);
            let wo = random_matrix(&mut rng, 3, 3);
            let wt = random_matrix(&mut rng, 3, 3);
            let tr = mlp.forward_jvp(&x, &v);
            let mut grad = vec![0.0; mlp.num_params()];
            let gx = mlp.backward_jvp(&tr, &wo, &wt, &mut grad);

            let mut p = Vec::new();
            mlp.write_params(&mut p);
            let h = 1e-6;
            for k in 0..p.len() {
                let mut m = mlp.clone();
                let mut q = p.clone();
                q[k] += h;
                m.read_params(&q);
                let fp = objective(&m, &x, &v, &wo, &wt);
                q[k] -= 2.0 * h;
                m.read_params(&q);
                let fm = objective(&m, &x, &v, &wo, &wt);
                let fd = (fp - fm) / (2.0 * h);
                assert!(
                    (fd - grad[k]).abs() < 1e-7 * (1.0 + fd.abs()),
                    "{act:?} param {k}: {fd} vs {}",
                    grad[k]
                );
            }
            for k in 0..x.len() {
                let mut xp = x.clone();
                xp[k] += h;
                let mut xm = x.clone();
                xm[k] -= h;
                let fd = (objective(&mlp, &xp, &v, &wo, &wt) - objective(&mlp, &xm, &v, &wo, &wt))
                    / (2.0 * h);
                assert!((fd - gx[k]).abs() < 1e-7 * (1.0 + fd.abs()));
            }
        }
    }

    #[test]
    fn softplus_inverse_round_trips() {
        for y in [1e-3, 0.5, 1.0, 7.0, 40.0] {
            assert!((softplus(softplus_inverse(y)) - y).abs() < 1e-12 * y.max(1.0));
        }
    }
}
