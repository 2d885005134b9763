use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::plant::Dataset;
use crate::tensor::TensorMap;

use super::config::TrainConfig;
use super::model::{Batch, LossParts, Objective, RestPair, SysModel};

/// Mean training losses over one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub horizon: usize,
    pub learning_rate: f64,
    pub loss: LossParts,
}

/// A trained (or freshly initialized) model with everything needed to use it
/// for control.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: SysModel,
    /// Mean per-dimension standard deviation of validation latents.
    pub latent_scale: f64,
    pub rest: RestPair,
    pub height: usize,
    pub width: usize,
    pub history: Vec<EpochRecord>,
}

impl Checkpoint {
    pub fn z0(&self) -> &DVector<f64> {
        self.model.dynamics.z0()
    }

    pub fn tensors(&self) -> TensorMap {
        let mut t = TensorMap::new();
        self.model.encoder.tensors("encoder", &mut t);
        self.model.decoder.tensors("decoder", &mut t);
        self.model.dynamics.tensors("dynamics", &mut t);
        t
    }

    /// Rebuilds the model structure from `config` and fills it from `tensors`.
    pub fn from_parts(
        config: TrainConfig,
        height: usize,
        width: usize,
        tensors: &TensorMap,
        latent_scale: f64,
        rest: RestPair,
        history: Vec<EpochRecord>,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = SysModel::init(&config, height, width, &mut rng);
        model.encoder.load_tensors("encoder", tensors)?;
        model.decoder.load_tensors("decoder", tensors)?;
        model.dynamics.load_tensors("dynamics", tensors)?;
        if !(latent_scale.is_finite() && latent_scale > 0.0) {
            return Err(Error::Malformed {
                format: "checkpoint",
                reason: format!("latent scale {latent_scale} must be positive"),
            });
        }
        Ok(Checkpoint {
            config,
            model,
            latent_scale,
            rest,
            height,
            width,
            history,
        })
    }
}

/// Evenly strided frame indices, at most `count` of them.
pub fn strided_frames(len: usize, count: usize) -> Vec<usize> {
    let count = count.clamp(1, len.max(1));
    (0..count).map(|k| k * len / count).collect()
}

/// Mean over latent dimensions of the standard deviation of encoder means.
pub fn latent_scale(model: &SysModel, data: &Dataset, max_frames: usize) -> f64 {
    let frames = strided_frames(data.len(), max_frames);
    let mut cols = Vec::new();
    for chunk in frames.chunks(512) {
        cols.push(model.encode_frames(data, chunk));
    }
    let n = model.latent_dim();
    let total: usize = cols.iter().map(DMatrix::ncols).sum();
    let mut mean = DVector::<f64>::zeros(n);
    for m in &cols {
        mean += m.column_sum();
    }
    mean /= total as f64;
    let mut var = DVector::<f64>::zeros(n);
    for m in &cols {
        for c in m.column_iter() {
            var += (c - &mean).map(|d| d * d);
        }
    }
    let denom = (total.max(2) - 1) as f64;
    let s = var.iter().map(|v| (v / denom).sqrt()).sum::<f64>() / n as f64;
    if s > 0.0 {
        s
    } else {
        f64::MIN_POSITIVE
    }
}

/// Trains encoder, decoder and dynamics jointly on `train_set` and computes
/// the latent scale on `val_set`. `progress` is called after every epoch.
pub fn train(
    config: &TrainConfig,
    train_set: &Dataset,
    val_set: &Dataset,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<Checkpoint> {
    config.validate()?;
    train_set.validate()?;
    val_set.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = SysModel::init(config, train_set.height, train_set.width, &mut rng);
    let rest = RestPair::from_dataset(train_set);
    let mu_rest = model.encoder.mean(&rest.observation)?;
    model.dynamics.z0_mut().copy_from(&mu_rest);

    let objective = Objective::from_config(config);
    let mut params = model.params();
    let mut adam = Adam::new(
        AdamConfig {
            lr: config.learning_rate,
            ..AdamConfig::default()
        },
        params.len(),
    );
    let total_steps = config.total_steps();
    let mut history = Vec::with_capacity(config.epochs);
    let mut global = 0;
    for epoch in 0..config.epochs {
        let horizon = config.horizon_at(epoch);
        let mut mean = LossParts::default();
        let mut lr = config.learning_rate;
        for step in 0..config.steps_per_epoch {
            let batch = Batch::sample(train_set, config.batch_size, horizon, model.latent_dim(), &mut rng)?;
            let (parts, grad) = match model.batch_loss(train_set, &rest, &batch, &objective, config.execution, true) {
                Ok(r) => r,
                Err(Error::Divergence { .. }) => return Err(Error::TrainingDiverged { epoch, step }),
                Err(e) => return Err(e),
            };
            let grad = grad.expect("gradient requested");
            if !parts.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDiverged { epoch, step });
            }
            lr = adam.learning_rate(global, total_steps);
            adam.step(&mut params, &grad, lr);
            model.set_params(&params);
            global += 1;
            let k = 1.0 / config.steps_per_epoch as f64;
            mean += LossParts {
                static_recon: parts.static_recon * k,
                dyn_image: parts.dyn_image * k,
                latent: parts.latent * k,
                rest: parts.rest * k,
                kl: parts.kl * k,
                total: parts.total * k,
            };
        }
        let record = EpochRecord {
            epoch,
            horizon,
            learning_rate: lr,
            loss: mean,
        };
        progress(&record);
        history.push(record);
    }
    let scale = latent_scale(&model, val_set, config.scale_frames);
    Ok(Checkpoint {
        config: config.clone(),
        model,
        latent_scale: scale,
        rest,
        height: train_set.height,
        width: train_set.width,
        history,
    })
}
