use nalgebra::{DMatrix, DMatrixViewMut, DVector};
use serde::{Deserialize, Serialize};

use super::{join_xi, split_xi, ExcitationNet, LatentState, StepRecord};
use crate::error::{Error, Result};
use crate::nn::{sigmoid, softplus, softplus_inverse};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DampingMode {
    Full,
    Rayleigh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegrationMode {
    /// Diagonal damping is solved implicitly through `Gamma = diag(I + dt M^-1 D)`.
    ImplicitDamping,
    /// Plain symplectic Euler with the full damping force applied explicitly.
    Explicit,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Damping {
    /// Unconstrained full matrix.
    Full(DMatrix<f64>),
    /// `D = alpha M + beta K` with `alpha = softplus(alpha_raw)`, `beta = softplus(beta_raw)`.
    Rayleigh { alpha_raw: f64, beta_raw: f64 },
}

/// Second-order latent oscillator network `M zddot + D zdot + K (z - z0) = B(u)`.
///
/// The mass is diagonal and kept positive through a softplus of `mass_raw`.
#[derive(Debug, Clone, PartialEq)]
pub struct OscillatorModel {
    pub mass_raw: DVector<f64>,
    pub damping: Damping,
    pub stiffness: DMatrix<f64>,
    pub z0: DVector<f64>,
    pub excitation: ExcitationNet,
    pub dt: f64,
    pub integration: IntegrationMode,
}

const INIT_MASS: f64 = 1.0 / super::koopman::INIT_STIFFNESS_RATIO;
const INIT_DAMPING: f64 = super::koopman::INIT_DAMPING_RATIO * INIT_MASS;

impl OscillatorModel {
    pub fn init(
        n: usize,
        excitation: ExcitationNet,
        z0: DVector<f64>,
        dt: f64,
        damping: DampingMode,
        integration: IntegrationMode,
    ) -> Self {
        let damping = match damping {
            DampingMode::Full => Damping::Full(DMatrix::identity(n, n) * INIT_DAMPING),
            DampingMode::Rayleigh => Damping::Rayleigh {
                alpha_raw: softplus_inverse(1e-3),
                beta_raw: softplus_inverse(INIT_DAMPING),
            },
        };
        OscillatorModel {
            mass_raw: DVector::from_element(n, softplus_inverse(INIT_MASS)),
            damping,
            stiffness: DMatrix::identity(n, n),
            z0,
            excitation,
            dt,
            integration,
        }
    }

    /// Builds a model from physical matrices; `mass` must be strictly positive.
    pub fn from_matrices(
        mass: &DVector<f64>,
        damping: DMatrix<f64>,
        stiffness: DMatrix<f64>,
        z0: DVector<f64>,
        excitation: ExcitationNet,
        dt: f64,
        integration: IntegrationMode,
    ) -> Self {
        OscillatorModel {
            mass_raw: mass.map(softplus_inverse),
            damping: Damping::Full(damping),
            stiffness,
            z0,
            excitation,
            dt,
            integration,
        }
    }

    pub fn dim(&self) -> usize {
        self.mass_raw.len()
    }

    pub fn mass(&self) -> DVector<f64> {
        self.mass_raw.map(softplus)
    }

    fn rayleigh_coefficients(&self) -> Option<(f64, f64)> {
        match self.damping {
            Damping::Rayleigh {
                alpha_raw,
                beta_raw,
            } => Some((softplus(alpha_raw), softplus(beta_raw))),
            Damping::Full(_) => None,
        }
    }

    pub fn damping_matrix(&self) -> DMatrix<f64> {
        match &self.damping {
            Damping::Full(d) => d.clone(),
            Damping::Rayleigh { .. } => {
                let (alpha, beta) = self.rayleigh_coefficients().unwrap();
                DMatrix::from_diagonal(&self.mass()) * alpha + &self.stiffness * beta
            }
        }
    }

    fn damping_diagonal(&self, mass: &DVector<f64>) -> DVector<f64> {
        match &self.damping {
            Damping::Full(d) => d.diagonal(),
            Damping::Rayleigh { .. } => {
                let (alpha, beta) = self.rayleigh_coefficients().unwrap();
                DVector::from_fn(self.dim(), |i, _| {
                    alpha * mass[i] + beta * self.stiffness[(i, i)]
                })
            }
        }
    }

    /// Diagonal of `Gamma`; all ones in explicit mode.
    pub fn gamma(&self) -> Result<DVector<f64>> {
        let mass = self.mass();
        let n = self.dim();
        if self.integration == IntegrationMode::Explicit {
            return Ok(DVector::from_element(n, 1.0));
        }
        let dd = self.damping_diagonal(&mass);
        let gamma = DVector::from_fn(n, |i, _| 1.0 + self.dt * dd[i] / mass[i]);
        for (index, &value) in gamma.iter().enumerate() {
            if !value.is_finite() || value.abs() < 1e-12 {
                return Err(Error::SingularDamping { index, value });
            }
        }
        Ok(gamma)
    }

    pub fn excitation_force(&self, u: &DVector<f64>) -> DVector<f64> {
        self.excitation.eval(u)
    }

    /// `-K (z - z0)`.
    pub fn stiffness_force(&self, z: &DVector<f64>) -> DVector<f64> {
        -(&self.stiffness * (z - &self.z0))
    }

    /// `E = 1/2 zdot^T M zdot + 1/2 (z - z0)^T K (z - z0)`.
    pub fn energy(&self, s: &LatentState) -> f64 {
        let mass = self.mass();
        let e = &s.z - &self.z0;
        let kinetic: f64 = s.zdot.iter().zip(mass.iter()).map(|(v, m)| m * v * v).sum();
        0.5 * kinetic + 0.5 * e.dot(&(&self.stiffness * &e))
    }

    pub fn step(&self, s: &LatentState, u: &DVector<f64>) -> Result<LatentState> {
        self.step_traced(s, u).map(|(s, _)| s)
    }

    pub(crate) fn step_traced(
        &self,
        s: &LatentState,
        u: &DVector<f64>,
    ) -> Result<(LatentState, StepRecord)> {
        let gamma = self.gamma()?;
        let mass = self.mass();
        let (b, btrace) = self.excitation.eval_traced(u);
        let e = &s.z - &self.z0;
        let mut force = b - &self.stiffness * e;
        if self.integration == IntegrationMode::Explicit {
            force -= self.damping_matrix() * &s.zdot;
        }
        let n = self.dim();
        let zdot = DVector::from_fn(n, |i, _| {
            (s.zdot[i] + self.dt * force[i] / mass[i]) / gamma[i]
        });
        let z = &s.z + &zdot * self.dt;
        Ok((
            LatentState { z, zdot },
            StepRecord {
                input: s.clone(),
                u: u.clone(),
                excitation: btrace,
                inner: None,
            },
        ))
    }

    /// Exact one-step linear map of `(z - z0, zdot)` with the excitation frozen at zero.
    pub fn linearized_update_matrix(&self) -> Result<DMatrix<f64>> {
        let n = self.dim();
        let dt = self.dt;
        let minv = self.mass().map(|m| 1.0 / m);
        let gamma = self.gamma()?;
        // Velocity rows: zdot' = G^-1 (zdot - dt M^-1 K e - [explicit] dt M^-1 D zdot).
        let mut ve = DMatrix::zeros(n, n);
        let mut vv = DMatrix::zeros(n, n);
        let damping = self.damping_matrix();
        for i in 0..n {
            for j in 0..n {
                ve[(i, j)] = -dt * minv[i] * self.stiffness[(i, j)] / gamma[i];
                let mut v = if i == j { 1.0 } else { 0.0 };
                if self.integration == IntegrationMode::Explicit {
                    v -= dt * minv[i] * damping[(i, j)];
                }
                vv[(i, j)] = v / gamma[i];
            }
        }
        let mut out = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            for j in 0..n {
                let ident = if i == j { 1.0 } else { 0.0 };
                out[(i, j)] = ident + dt * ve[(i, j)];
                out[(i, n + j)] = dt * vv[(i, j)];
                out[(n + i, j)] = ve[(i, j)];
                out[(n + i, n + j)] = vv[(i, j)];
            }
        }
        Ok(out)
    }

    fn damping_len(&self) -> usize {
        match &self.damping {
            Damping::Full(d) => d.len(),
            Damping::Rayleigh { .. } => 2,
        }
    }

    pub(crate) fn step_vjp(
        &self,
        rec: &StepRecord,
        g_next: &DVector<f64>,
        grad: &mut [f64],
    ) -> (DVector<f64>, DVector<f64>) {
        let n = self.dim();
        let dt = self.dt;
        let s = &rec.input;
        let mass = self.mass();
        let minv = mass.map(|m| 1.0 / m);
        let (b, _) = self.excitation.eval_traced(&rec.u);
        let e = &s.z - &self.z0;
        let explicit = self.integration == IntegrationMode::Explicit;
        let dmat = self.damping_matrix();
        let mut force = &b - &self.stiffness * &e;
        if explicit {
            force -= &dmat * &s.zdot;
        }
        let dd = self.damping_diagonal(&mass);
        let gamma = if explicit {
            DVector::from_element(n, 1.0)
        } else {
            DVector::from_fn(n, |i, _| 1.0 + dt * dd[i] / mass[i])
        };
        let r = DVector::from_fn(n, |i, _| s.zdot[i] + dt * force[i] * minv[i]);
        let v = r.component_div(&gamma);

        let (gz_next, gzd_next) = split_xi(g_next);
        let gv = gzd_next + &gz_next * dt;
        let g_r = gv.component_div(&gamma);
        let g_f = DVector::from_fn(n, |i, _| dt * minv[i] * g_r[i]);
        let mut g_minv = DVector::from_fn(n, |i, _| dt * force[i] * g_r[i]);
        let mut g_zdot = g_r.clone();
        // Cotangent of the damping matrix, dense for both modes.
        let mut g_d = DMatrix::zeros(n, n);
        if explicit {
            g_zdot -= dmat.tr_mul(&g_f);
            g_d.ger(-1.0, &g_f, &s.zdot, 0.0);
        } else {
            for i in 0..n {
                let g_gamma = -gv[i] * v[i] / gamma[i];
                g_minv[i] += dt * dd[i] * g_gamma;
                g_d[(i, i)] = dt * minv[i] * g_gamma;
            }
        }
        let mut g_mass = DVector::from_fn(n, |i, _| -g_minv[i] * minv[i] * minv[i]);
        let mut g_k = DMatrix::zeros(n, n);
        g_k.ger(-1.0, &g_f, &e, 0.0);
        let g_e = -self.stiffness.tr_mul(&g_f);

        let nd = self.damping_len();
        let (g_mass_raw, rest) = grad.split_at_mut(n);
        let (g_damp, rest) = rest.split_at_mut(nd);
        let (g_stiff, rest) = rest.split_at_mut(n * n);
        let ne = self.excitation.num_params();
        let (g_exc, g_z0) = rest.split_at_mut(ne);

        match self.damping {
            Damping::Full(_) => {
                for (dst, src) in g_damp.iter_mut().zip(g_d.iter()) {
                    *dst += src;
                }
            }
            Damping::Rayleigh {
                alpha_raw,
                beta_raw,
            } => {
                let (alpha, beta) = (softplus(alpha_raw), softplus(beta_raw));
                let mut g_alpha = 0.0;
                for i in 0..n {
                    g_alpha += g_d[(i, i)] * mass[i];
                    g_mass[i] += alpha * g_d[(i, i)];
                }
                let g_beta = g_d.component_mul(&self.stiffness).sum();
                g_k += &g_d * beta;
                g_damp[0] += g_alpha * sigmoid(alpha_raw);
                g_damp[1] += g_beta * sigmoid(beta_raw);
            }
        }
        for i in 0..n {
            g_mass_raw[i] += g_mass[i] * sigmoid(self.mass_raw[i]);
        }
        let mut gk_view = DMatrixViewMut::from_slice(g_stiff, n, n);
        gk_view += &g_k;
        let g_u = self
            .excitation
            .backward(&rec.u, rec.excitation.as_ref(), &g_f, g_exc);
        for i in 0..n {
            g_z0[i] -= g_e[i];
        }
        let g_z = gz_next + g_e;
        (join_xi(&g_z, &g_zdot), g_u)
    }

    pub(crate) fn write_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.mass_raw.as_slice());
        match &self.damping {
            Damping::Full(d) => out.extend_from_slice(d.as_slice()),
            Damping::Rayleigh {
                alpha_raw,
                beta_raw,
            } => out.extend_from_slice(&[*alpha_raw, *beta_raw]),
        }
        out.extend_from_slice(self.stiffness.as_slice());
        self.excitation.write_params(out);
        out.extend_from_slice(self.z0.as_slice());
    }

    pub(crate) fn read_params(&mut self, src: &[f64]) -> usize {
        let n = self.dim();
        self.mass_raw.as_mut_slice().copy_from_slice(&src[..n]);
        let mut off = n;
        match &mut self.damping {
            Damping::Full(d) => {
                let nd = d.len();
                d.as_mut_slice().copy_from_slice(&src[off..off + nd]);
                off += nd;
            }
            Damping::Rayleigh {
                alpha_raw,
                beta_raw,
            } => {
                *alpha_raw = src[off];
                *beta_raw = src[off + 1];
                off += 2;
            }
        }
        let nk = self.stiffness.len();
        self.stiffness
            .as_mut_slice()
            .copy_from_slice(&src[off..off + nk]);
        off += nk;
        off += self.excitation.read_params(&src[off..]);
        self.z0.as_mut_slice().copy_from_slice(&src[off..off + n]);
        off + n
    }
}
