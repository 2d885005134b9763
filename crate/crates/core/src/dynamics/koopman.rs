use nalgebra::{DMatrix, DVector};

use super::{ExcitationNet, LatentState, StepRecord};

/// Linear latent transition `xi' = A xi + B(u)`. The excitation maps to the
/// full `[z; zdot]` dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct KoopmanModel {
    pub a: DMatrix<f64>,
    pub excitation: ExcitationNet,
    pub z0: DVector<f64>,
    pub dt: f64,
}

/// Stiffness-to-mass and damping-to-mass ratios of the initial transition.
pub(crate) const INIT_STIFFNESS_RATIO: f64 = 40.0;
pub(crate) const INIT_DAMPING_RATIO: f64 = 4.0;

impl KoopmanModel {
    /// Starts from the one-step map of a lightly damped decoupled oscillator bank.
    pub fn init(n: usize, excitation: ExcitationNet, z0: DVector<f64>, dt: f64) -> Self {
        let gamma = 1.0 + dt * INIT_DAMPING_RATIO;
        let k = INIT_STIFFNESS_RATIO;
        let mut a = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            a[(i, i)] = 1.0 - dt * dt * k / gamma;
            a[(i, n + i)] = dt / gamma;
            a[(n + i, i)] = -dt * k / gamma;
            a[(n + i, n + i)] = 1.0 / gamma;
        }
        KoopmanModel {
            a,
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
        let (b, trace) = self.excitation.eval_traced(u);
        let next = &self.a * s.xi() + b;
        (
            LatentState::from_xi(&next),
            StepRecord {
                input: s.clone(),
                u: u.clone(),
                excitation: trace,
                inner: None,
            },
        )
    }

    pub(crate) fn step_vjp(
        &self,
        rec: &StepRecord,
        g_next: &DVector<f64>,
        grad: &mut [f64],
    ) -> (DVector<f64>, DVector<f64>) {
        let na = self.a.len();
        let ne = self.excitation.num_params();
        let (ga, rest) = grad.split_at_mut(na);
        let xi = rec.input.xi();
        let mut ga = nalgebra::DMatrixViewMut::from_slice(ga, self.a.nrows(), self.a.ncols());
        ga.ger(1.0, g_next, &xi, 1.0);
        let g_u =
            self.excitation
                .backward(&rec.u, rec.excitation.as_ref(), g_next, &mut rest[..ne]);
        (self.a.tr_mul(g_next), g_u)
    }

    pub(crate) fn write_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.a.as_slice());
        self.excitation.write_params(out);
        out.extend_from_slice(self.z0.as_slice());
    }

    pub(crate) fn read_params(&mut self, src: &[f64]) -> usize {
        let na = self.a.len();
        self.a.as_mut_slice().copy_from_slice(&src[..na]);
        let mut off = na;
        off += self.excitation.read_params(&src[off..]);
        let nz = self.z0.len();
        self.z0.as_mut_slice().copy_from_slice(&src[off..off + nz]);
        off + nz
    }
}
