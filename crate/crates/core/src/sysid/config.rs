use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dynamics::{DampingMode, DynSpec, ExcitationKind, FamilyKind, IntegrationMode};
use crate::parallel::Execution;

use super::decoder::DecoderKind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    #[serde(rename = "static")]
    pub static_recon: f64,
    pub dyn_image: f64,
    pub latent: f64,
    pub rest: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            static_recon: 1.0,
            dyn_image: 1.0,
            latent: 1.0,
            rest: 0.5,
        }
    }
}

/// Everything that determines a training run. Two runs with equal configs and
/// equal datasets produce identical checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(flatten)]
    pub dynamics: DynSpec,
    pub decoder: DecoderKind,
    /// KL weight.
    pub beta: f64,
    pub weights: LossWeights,
    /// `(epoch, H)` pairs; the horizon switches to `H` at the start of `epoch`.
    pub horizon_schedule: Vec<(usize, usize)>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    pub keypoint_components: usize,
    /// Validation frames used for the latent scale statistic (evenly strided).
    pub scale_frames: usize,
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let epochs = 40;
        TrainConfig {
            dynamics: DynSpec::default(),
            decoder: DecoderKind::KeypointBroadcast,
            beta: 1e-4,
            weights: LossWeights::default(),
            horizon_schedule: default_schedule(epochs),
            learning_rate: 3e-3,
            epochs,
            steps_per_epoch: 50,
            batch_size: 32,
            seed: 0,
            encoder_hidden: 128,
            decoder_hidden: 128,
            keypoint_components: 6,
            scale_frames: 2000,
            execution: Execution::default(),
        }
    }
}

/// H = 2 for the first fifth of training, then 5, 10 and 25 from 40, 60 and 80%.
pub fn default_schedule(epochs: usize) -> Vec<(usize, usize)> {
    let at = |f: f64| (f * epochs as f64).round() as usize;
    vec![(0, 2), (at(0.4), 5), (at(0.6), 10), (at(0.8), 25)]
}

impl TrainConfig {
    /// Config for the given model family and decoder, other settings default.
    pub fn for_model(family: FamilyKind, decoder: DecoderKind) -> Self {
        let mut c = TrainConfig::default();
        c.dynamics.family = family;
        c.decoder = decoder;
        c
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch
    }

    /// Rollout horizon in effect during `epoch`.
    pub fn horizon_at(&self, epoch: usize) -> usize {
        self.horizon_schedule
            .iter()
            .filter(|(e, _)| *e <= epoch)
            .map(|&(_, h)| h)
            .last()
            .unwrap_or(1)
    }

    pub fn max_horizon(&self) -> usize {
        self.horizon_schedule.iter().map(|&(_, h)| h).max().unwrap_or(1)
    }

    /// Rescales the schedule epochs to a new epoch count.
    pub fn with_epochs(mut self, epochs: usize) -> Self {
        let old = self.epochs.max(1) as f64;
        for (e, _) in &mut self.horizon_schedule {
            *e = ((*e as f64) * epochs as f64 / old).round() as usize;
        }
        self.epochs = epochs;
        self
    }

    pub fn validate(&self) -> crate::Result<()> {
        let bad = |m: &str| Err(crate::Error::InvalidArgument(m.to_string()));
        if self.horizon_schedule.is_empty() || self.horizon_schedule.iter().any(|&(_, h)| h == 0) {
            return bad("horizon schedule needs positive horizons");
        }
        if self.horizon_schedule.windows(2).any(|w| w[1].0 < w[0].0 || w[1].1 < w[0].1) {
            return bad("horizon schedule must be non-decreasing");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.beta >= 0.0) {
            return bad("learning rate must be positive and beta non-negative");
        }
        Ok(())
    }
}

/// The seven single-change variants of the full oscillator model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    LinearExcitation,
    DynamicWeights,
    LargeBeta,
    NoRestLoss,
    NoMultiStep,
    RayleighDamping,
    ExplicitDamping,
}

impl Ablation {
    pub const ALL: [Ablation; 7] = [
        Ablation::LinearExcitation,
        Ablation::DynamicWeights,
        Ablation::LargeBeta,
        Ablation::NoRestLoss,
        Ablation::NoMultiStep,
        Ablation::RayleighDamping,
        Ablation::ExplicitDamping,
    ];

    /// 1-based number as listed in the ablation protocol.
    pub fn number(self) -> usize {
        Ablation::ALL.iter().position(|&a| a == self).unwrap() + 1
    }

    pub fn label(self) -> &'static str {
        match self {
            Ablation::LinearExcitation => "linear excitation",
            Ablation::DynamicWeights => "dynamic-image loss weights",
            Ablation::LargeBeta => "beta 0.01",
            Ablation::NoRestLoss => "no rest loss",
            Ablation::NoMultiStep => "single-step loss",
            Ablation::RayleighDamping => "Rayleigh damping",
            Ablation::ExplicitDamping => "explicit damping",
        }
    }

    /// The config field this ablation changes.
    pub fn field(self) -> &'static str {
        match self {
            Ablation::LinearExcitation => "excitation",
            Ablation::DynamicWeights | Ablation::NoRestLoss => "weights",
            Ablation::LargeBeta => "beta",
            Ablation::NoMultiStep => "horizon_schedule",
            Ablation::RayleighDamping => "damping",
            Ablation::ExplicitDamping => "integration",
        }
    }

    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        match self {
            Ablation::LinearExcitation => c.dynamics.excitation = ExcitationKind::Linear,
            Ablation::DynamicWeights => {
                c.weights = LossWeights {
                    static_recon: 1.0,
                    dyn_image: 5.0,
                    latent: 1.0,
                    rest: 1.0,
                }
            }
            Ablation::LargeBeta => c.beta = 0.01,
            Ablation::NoRestLoss => c.weights.rest = 0.0,
            Ablation::NoMultiStep => c.horizon_schedule = vec![(0, 1)],
            Ablation::RayleighDamping => c.dynamics.damping = DampingMode::Rayleigh,
            Ablation::ExplicitDamping => c.dynamics.integration = IntegrationMode::Explicit,
        }
        c
    }
}

/// Names of the top-level serialized fields in which two configs differ.
pub fn config_diff(a: &TrainConfig, b: &TrainConfig) -> Vec<String> {
    let (Ok(Value::Object(va)), Ok(Value::Object(vb))) = (serde_json::to_value(a), serde_json::to_value(b)) else {
        unreachable!("configs serialize to objects")
    };
    let mut keys: Vec<&String> = va.keys().chain(vb.keys()).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .filter(|k| va.get(*k) != vb.get(*k))
        .cloned()
        .collect()
}
