//! Latent dynamical model families and differentiable rollouts.
//!
//! A latent state holds `2m` coordinates `z` (m planar oscillators) and their
//! velocities. Each family advances `(z, zdot)` by one step of `dt` under a
//! pressure input `u`; [`DynModel::rollout`] records a tape from which
//! [`DynModel::rollout_vjp`] computes exact reverse-mode gradients with respect
//! to the inputs, the initial state, and all model parameters.

mod excitation;
mod koopman;
mod mlp_dyn;
mod oscillator;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use excitation::{
    ExcitationKind, ExcitationMap, ExcitationNet, PRESSURE_CENTER, PRESSURE_SCALE,
};
pub use koopman::KoopmanModel;
pub use mlp_dyn::MlpDynModel;
pub use oscillator::{Damping, DampingMode, IntegrationMode, OscillatorModel};

use crate::error::{Error, Result};
use crate::nn::MlpTrace;
use crate::tensor::{self, Tensor, TensorMap};

/// Control and sample period (50 Hz).
pub const DT: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentState {
    #[serde(with = "tensor::dvec")]
    pub z: DVector<f64>,
    #[serde(with = "tensor::dvec")]
    pub zdot: DVector<f64>,
}

impl LatentState {
    pub fn new(z: DVector<f64>, zdot: DVector<f64>) -> Self {
        assert_eq!(z.len(), zdot.len(), "z and zdot must have equal dimension");
        LatentState { z, zdot }
    }

    pub fn at_rest(z: DVector<f64>) -> Self {
        let n = z.len();
        LatentState {
            z,
            zdot: DVector::zeros(n),
        }
    }

    pub fn dim(&self) -> usize {
        self.z.len()
    }

    /// The concatenation `[z; zdot]`.
    pub fn xi(&self) -> DVector<f64> {
        let n = self.z.len();
        DVector::from_fn(
            2 * n,
            |i, _| if i < n { self.z[i] } else { self.zdot[i - n] },
        )
    }

    pub fn from_xi(xi: &DVector<f64>) -> Self {
        let n = xi.len() / 2;
        LatentState {
            z: xi.rows(0, n).into_owned(),
            zdot: xi.rows(n, n).into_owned(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.z.iter().chain(self.zdot.iter()).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    Koopman,
    Mlp,
    Oscillator,
}

/// Structural choices needed to build (or rebuild) a dynamics model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynSpec {
    pub family: FamilyKind,
    /// Number of planar oscillators; the latent coordinate dimension is `2m`.
    pub oscillators: usize,
    pub inputs: usize,
    pub excitation: ExcitationKind,
    pub excitation_hidden: usize,
    pub mlp_hidden: usize,
    pub damping: DampingMode,
    pub integration: IntegrationMode,
    pub dt: f64,
}

impl Default for DynSpec {
    fn default() -> Self {
        DynSpec {
            family: FamilyKind::Oscillator,
            oscillators: 3,
            inputs: 4,
            excitation: ExcitationKind::Mlp,
            excitation_hidden: 32,
            mlp_hidden: 64,
            damping: DampingMode::Full,
            integration: IntegrationMode::ImplicitDamping,
            dt: DT,
        }
    }
}

/// Everything one step needs to be differentiated later.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub input: LatentState,
    pub u: DVector<f64>,
    pub(crate) excitation: Option<MlpTrace>,
    pub(crate) inner: Option<MlpTrace>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DynModel {
    Koopman(KoopmanModel),
    Mlp(MlpDynModel),
    Oscillator(OscillatorModel),
}

/// States `xi(1..=T)` together with the per-step records of the rollout.
#[derive(Debug, Clone)]
pub struct RolloutTape {
    pub records: Vec<StepRecord>,
    pub states: Vec<LatentState>,
}

impl RolloutTape {
    pub fn horizon(&self) -> usize {
        self.records.len()
    }

    /// Re-runs the recorded inputs from the recorded initial state.
    pub fn replay(&self, model: &DynModel) -> Result<Vec<LatentState>> {
        let Some(first) = self.records.first() else {
            return Ok(Vec::new());
        };
        let useq: Vec<DVector<f64>> = self.records.iter().map(|r| r.u.clone()).collect();
        Ok(model.rollout(&first.input, &useq)?.states)
    }
}

#[derive(Debug, Clone)]
pub struct Rollout {
    pub states: Vec<LatentState>,
    pub tape: RolloutTape,
}

#[derive(Debug, Clone)]
pub struct RolloutGradient {
    /// `dJ/du(i)` for `i = 0..T`.
    pub du: Vec<DVector<f64>>,
    /// Gradient w.r.t. the flattened parameters, ordered as [`DynModel::write_params`].
    pub dparams: Vec<f64>,
    /// `dJ/dxi(0)`.
    pub dxi0: DVector<f64>,
}

impl DynModel {
    pub fn init<R: Rng + ?Sized>(spec: &DynSpec, rng: &mut R) -> Self {
        let n = 2 * spec.oscillators;
        let z0 = DVector::zeros(n);
        match spec.family {
            FamilyKind::Koopman => {
                let exc = excitation_for(spec, 2 * n, rng);
                DynModel::Koopman(KoopmanModel::init(n, exc, z0, spec.dt))
            }
            FamilyKind::Mlp => {
                let exc = excitation_for(spec, n, rng);
                DynModel::Mlp(MlpDynModel::init(n, spec.mlp_hidden, exc, z0, spec.dt, rng))
            }
            FamilyKind::Oscillator => {
                let exc = excitation_for(spec, n, rng);
                DynModel::Oscillator(OscillatorModel::init(
                    n,
                    exc,
                    z0,
                    spec.dt,
                    spec.damping,
                    spec.integration,
                ))
            }
        }
    }

    pub fn family(&self) -> FamilyKind {
        match self {
            DynModel::Koopman(_) => FamilyKind::Koopman,
            DynModel::Mlp(_) => FamilyKind::Mlp,
            DynModel::Oscillator(_) => FamilyKind::Oscillator,
        }
    }

    /// Latent coordinate dimension `2m`.
    pub fn latent_dim(&self) -> usize {
        self.z0().len()
    }

    pub fn input_dim(&self) -> usize {
        self.excitation().input_dim()
    }

    pub fn dt(&self) -> f64 {
        match self {
            DynModel::Koopman(k) => k.dt,
            DynModel::Mlp(k) => k.dt,
            DynModel::Oscillator(k) => k.dt,
        }
    }

    /// Rest position `z0`. It drives the oscillator dynamics and is the learnable
    /// rest latent for the other families.
    pub fn z0(&self) -> &DVector<f64> {
        match self {
            DynModel::Koopman(k) => &k.z0,
            DynModel::Mlp(k) => &k.z0,
            DynModel::Oscillator(k) => &k.z0,
        }
    }

    pub fn z0_mut(&mut self) -> &mut DVector<f64> {
        match self {
            DynModel::Koopman(k) => &mut k.z0,
            DynModel::Mlp(k) => &mut k.z0,
            DynModel::Oscillator(k) => &mut k.z0,
        }
    }

    pub fn excitation(&self) -> &ExcitationNet {
        match self {
            DynModel::Koopman(k) => &k.excitation,
            DynModel::Mlp(k) => &k.excitation,
            DynModel::Oscillator(k) => &k.excitation,
        }
    }

    pub fn num_params(&self) -> usize {
        let mut v = Vec::new();
        self.write_params(&mut v);
        v.len()
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        match self {
            DynModel::Koopman(k) => k.write_params(out),
            DynModel::Mlp(k) => k.write_params(out),
            DynModel::Oscillator(k) => k.write_params(out),
        }
    }

    pub fn read_params(&mut self, src: &[f64]) -> usize {
        match self {
            DynModel::Koopman(k) => k.read_params(src),
            DynModel::Mlp(k) => k.read_params(src),
            DynModel::Oscillator(k) => k.read_params(src),
        }
    }

    pub fn params(&self) -> Vec<f64> {
        let mut v = Vec::new();
        self.write_params(&mut v);
        v
    }

    pub fn set_params(&mut self, src: &[f64]) {
        let n = self.read_params(src);
        debug_assert_eq!(n, src.len());
    }

    fn check_inputs(&self, s: &LatentState, u: &DVector<f64>) -> Result<()> {
        crate::error::check_dim("latent state", self.latent_dim(), s.z.len())?;
        crate::error::check_dim("latent velocity", self.latent_dim(), s.zdot.len())?;
        crate::error::check_dim("input", self.input_dim(), u.len())
    }

    pub fn step(&self, s: &LatentState, u: &DVector<f64>) -> Result<LatentState> {
        let (next, _) = self.step_traced(s, u)?;
        if next.is_finite() {
            Ok(next)
        } else {
            Err(Error::Divergence { step: 0 })
        }
    }

    pub(crate) fn step_traced(
        &self,
        s: &LatentState,
        u: &DVector<f64>,
    ) -> Result<(LatentState, StepRecord)> {
        self.check_inputs(s, u)?;
        match self {
            DynModel::Koopman(k) => Ok(k.step_traced(s, u)),
            DynModel::Mlp(k) => Ok(k.step_traced(s, u)),
            DynModel::Oscillator(k) => k.step_traced(s, u),
        }
    }

    /// Reverse pass of one step. `g_next` is the cotangent of `[z'; zdot']`;
    /// returns the cotangents of `[z; zdot]` and of `u`.
    pub(crate) fn step_vjp(
        &self,
        rec: &StepRecord,
        g_next: &DVector<f64>,
        grad: &mut [f64],
    ) -> (DVector<f64>, DVector<f64>) {
        match self {
            DynModel::Koopman(k) => k.step_vjp(rec, g_next, grad),
            DynModel::Mlp(k) => k.step_vjp(rec, g_next, grad),
            DynModel::Oscillator(k) => k.step_vjp(rec, g_next, grad),
        }
    }

    pub fn rollout(&self, xi0: &LatentState, useq: &[DVector<f64>]) -> Result<Rollout> {
        if useq.is_empty() {
            return Err(Error::InvalidArgument(
                "rollout needs at least one input".into(),
            ));
        }
        let mut states = Vec::with_capacity(useq.len());
        let mut records = Vec::with_capacity(useq.len());
        let mut s = xi0.clone();
        for (i, u) in useq.iter().enumerate() {
            let (next, rec) = self.step_traced(&s, u)?;
            if !next.is_finite() {
                return Err(Error::Divergence { step: i });
            }
            records.push(rec);
            states.push(next.clone());
            s = next;
        }
        Ok(Rollout {
            states: states.clone(),
            tape: RolloutTape { records, states },
        })
    }

    /// Exact gradient of a scalar `J(xi(1), ..., xi(T))` given `dJ/dxi(i)` for
    /// `i = 1..=T` (ordered as `[z; zdot]`).
    pub fn rollout_vjp(
        &self,
        tape: &RolloutTape,
        cotangents: &[DVector<f64>],
    ) -> Result<RolloutGradient> {
        crate::error::check_dim("cotangent sequence", tape.horizon(), cotangents.len())?;
        let n = 2 * self.latent_dim();
        let mut dparams = vec![0.0; self.num_params()];
        let mut du = vec![DVector::zeros(self.input_dim()); tape.horizon()];
        let mut g = DVector::zeros(n);
        for i in (0..tape.horizon()).rev() {
            crate::error::check_dim("cotangent", n, cotangents[i].len())?;
            g += &cotangents[i];
            let (g_xi, g_u) = self.step_vjp(&tape.records[i], &g, &mut dparams);
            du[i] = g_u;
            g = g_xi;
        }
        Ok(RolloutGradient {
            du,
            dparams,
            dxi0: g,
        })
    }

    pub fn tensors(&self, prefix: &str, out: &mut TensorMap) {
        match self {
            DynModel::Koopman(k) => {
                out.insert(format!("{prefix}.a"), Tensor::from_matrix(&k.a));
            }
            DynModel::Mlp(k) => tensor::mlp_tensors(&k.net, &format!("{prefix}.f"), out),
            DynModel::Oscillator(k) => {
                out.insert(
                    format!("{prefix}.mass_raw"),
                    Tensor::from_vector(&k.mass_raw),
                );
                match &k.damping {
                    Damping::Full(d) => {
                        out.insert(format!("{prefix}.damping"), Tensor::from_matrix(d));
                    }
                    Damping::Rayleigh {
                        alpha_raw,
                        beta_raw,
                    } => {
                        out.insert(format!("{prefix}.alpha_raw"), Tensor::Scalar(*alpha_raw));
                        out.insert(format!("{prefix}.beta_raw"), Tensor::Scalar(*beta_raw));
                    }
                }
                out.insert(
                    format!("{prefix}.stiffness"),
                    Tensor::from_matrix(&k.stiffness),
                );
            }
        }
        let exc = self.excitation();
        match &exc.map {
            ExcitationMap::Mlp(net) => {
                tensor::mlp_tensors(net, &format!("{prefix}.excitation"), out)
            }
            ExcitationMap::Linear(b) => {
                out.insert(format!("{prefix}.excitation.b"), Tensor::from_matrix(b));
            }
        }
        out.insert(
            format!("{prefix}.excitation.input_center"),
            Tensor::Scalar(exc.input_center),
        );
        out.insert(
            format!("{prefix}.excitation.input_scale"),
            Tensor::Scalar(exc.input_scale),
        );
        out.insert(format!("{prefix}.z0"), Tensor::from_vector(self.z0()));
    }

    pub fn load_tensors(&mut self, prefix: &str, src: &TensorMap) -> Result<()> {
        let excitation = match self {
            DynModel::Koopman(k) => {
                tensor::load_matrix(src, &format!("{prefix}.a"), &mut k.a)?;
                &mut k.excitation
            }
            DynModel::Mlp(k) => {
                tensor::load_mlp(src, &format!("{prefix}.f"), &mut k.net)?;
                &mut k.excitation
            }
            DynModel::Oscillator(k) => {
                tensor::load_vector(src, &format!("{prefix}.mass_raw"), &mut k.mass_raw)?;
                match &mut k.damping {
                    Damping::Full(d) => tensor::load_matrix(src, &format!("{prefix}.damping"), d)?,
                    Damping::Rayleigh {
                        alpha_raw,
                        beta_raw,
                    } => {
                        *alpha_raw = tensor::load_scalar(src, &format!("{prefix}.alpha_raw"))?;
                        *beta_raw = tensor::load_scalar(src, &format!("{prefix}.beta_raw"))?;
                    }
                }
                tensor::load_matrix(src, &format!("{prefix}.stiffness"), &mut k.stiffness)?;
                &mut k.excitation
            }
        };
        match &mut excitation.map {
            ExcitationMap::Mlp(net) => tensor::load_mlp(src, &format!("{prefix}.excitation"), net)?,
            ExcitationMap::Linear(b) => {
                tensor::load_matrix(src, &format!("{prefix}.excitation.b"), b)?
            }
        }
        excitation.input_center =
            tensor::load_scalar(src, &format!("{prefix}.excitation.input_center"))?;
        excitation.input_scale =
            tensor::load_scalar(src, &format!("{prefix}.excitation.input_scale"))?;
        tensor::load_vector(src, &format!("{prefix}.z0"), self.z0_mut())
    }
}

fn excitation_for<R: Rng + ?Sized>(spec: &DynSpec, outputs: usize, rng: &mut R) -> ExcitationNet {
    match spec.excitation {
        ExcitationKind::Mlp => {
            ExcitationNet::mlp(spec.inputs, outputs, spec.excitation_hidden, rng)
        }
        ExcitationKind::Linear => ExcitationNet::linear(spec.inputs, outputs, 0.1, rng),
    }
}

/// Splits a `[z; zdot]` cotangent into its two halves.
pub(crate) fn split_xi(g: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let n = g.len() / 2;
    (g.rows(0, n).into_owned(), g.rows(n, n).into_owned())
}

pub(crate) fn join_xi(gz: &DVector<f64>, gzd: &DVector<f64>) -> DVector<f64> {
    LatentState {
        z: gz.clone(),
        zdot: gzd.clone(),
    }
    .xi()
}

#[cfg(test)]
pub(crate) mod tests;
