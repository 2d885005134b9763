use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::{join_xi, split_xi, ExcitationNet, LatentState, StepRecord};
use crate::nn::{Activation, Mlp};

/// Velocity-predicting network: `zdot' = gain * f(xi) + B(u)`, then
/// `z' = z + dt * zdot'` (position uses the new velocity).
#[derive(Debug, Clone, PartialEq)]
pub struct MlpDynModel {
    pub net: Mlp,
    /// Fixed output gain of `f`, so latent velocities of order ten are reachable
    /// from unit-scale network outputs.
    pub output_gain: f64,
    pub excitation: ExcitationNet,
    pub z0: DVector<f64>,
    pub dt: f64,
}

impl MlpDynModel {
    pub fn init<R: Rng + ?Sized>(
        n: usize,
        hidden: usize,
        excitation: ExcitationNet,
        z0: DVector<f64>,
        dt: f64,
        rng: &mut R,
    ) -> Self {
        let net = Mlp::new(
            &[2 * n, hidden, hidden, n],
            Activation::Tanh,
            Activation::Identity,
            rng,
        )
        .scale_output(0.1);
        MlpDynModel {
            net,
            output_gain: 10.0,
            excitation,
            z0,
            dt,
        }
    }

    pub fn step(&self, s: &LatentState, u: &DVector<f64>) -> LatentState {
        self.step_traced(s, u).0
    }

    pub(crate) fn step_traced(
        &self,
        s: &LatentState,
        u: &DVector<f64>,
    ) -> (LatentState, StepRecord) {
        let xi = s.xi();
        let trace = self
            .net
            .forward(&DMatrix::from_column_slice(xi.len(), 1, xi.as_slice()));
        let (b, btrace) = self.excitation.eval_traced(u);
        let f = DVector::from_column_slice(trace.output().as_slice());
        let zdot = f * self.output_gain + b;
        let z = &s.z + &zdot * self.dt;
        (
            LatentState { z, zdot },
            StepRecord {
                input: s.clone(),
                u: u.clone(),
                excitation: btrace,
                inner: Some(trace),
            },
        )
    }

    pub(crate) fn step_vjp(
        &self,
        rec: &StepRecord,
        g_next: &DVector<f64>,
        grad: &mut [f64],
    ) -> (DVector<f64>, DVector<f64>) {
        let (gz_next, gzd_next) = split_xi(g_next);
        let gv = gzd_next + &gz_next * self.dt;
        let nn = self.net.num_params();
        let ne = self.excitation.num_params();
        let (gnet, rest) = grad.split_at_mut(nn);
        let g_u = self
            .excitation
            .backward(&rec.u, rec.excitation.as_ref(), &gv, &mut rest[..ne]);
        let gf = DMatrix::from_iterator(gv.len(), 1, gv.iter().map(|v| v * self.output_gain));
        let g_xi_net = self.net.backward(
            rec.inner.as_ref().expect("mlp step records its trace"),
            &gf,
            gnet,
        );
        let (gz_f, gzd_f) = split_xi(&DVector::from_column_slice(g_xi_net.as_slice()));
        (join_xi(&(gz_next + gz_f), &gzd_f), g_u)
    }

    pub(crate) fn write_params(&self, out: &mut Vec<f64>) {
        self.net.write_params(out);
        self.excitation.write_params(out);
        out.extend_from_slice(self.z0.as_slice());
    }

    pub(crate) fn read_params(&mut self, src: &[f64]) -> usize {
        let mut off = self.net.read_params(src);
        off += self.excitation.read_params(&src[off..]);
        let nz = self.z0.len();
        self.z0.as_mut_slice().copy_from_slice(&src[off..off + nz]);
        off + nz
    }
}
