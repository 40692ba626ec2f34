use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{clip_global_norm, AdamState};
use crate::data::{to_batches, PianoRollDataset, Sequence};
use crate::error::{Error, Result};
use crate::metrics::evaluate;
use crate::model::{Dropout, DropoutPlacement, GruModel, ModelSpec};

/// Optimizer settings and the search grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rates: Vec<f64>,
    pub dropouts: Vec<f64>,
    /// Global gradient-norm threshold.
    pub clip_norm: f64,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    /// Sequences per batch.
    pub batch_size: usize,
    pub seed: u64,
    pub dropout_placement: DropoutPlacement,
    /// Fill the `wall_time_s` report column. Off by default so reports are reproducible byte for byte.
    pub record_timing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rates: vec![1e-2, 5e-3, 1e-3],
            dropouts: vec![0.2, 0.3, 0.4, 0.5],
            clip_norm: 5.0,
            max_epochs: 200,
            patience: 10,
            batch_size: 16,
            seed: 0,
            dropout_placement: DropoutPlacement::CellInput,
            record_timing: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rates.is_empty() || self.dropouts.is_empty() {
            return Err(Error::config("the learning-rate and dropout grids must be non-empty"));
        }
        if let Some(lr) = self.learning_rates.iter().find(|&&lr| !(lr > 0.0 && lr.is_finite())) {
            return Err(Error::config(format!("learning rate {lr} is not positive")));
        }
        if let Some(p) = self.dropouts.iter().find(|&&p| !(0.0..1.0).contains(&p)) {
            return Err(Error::config(format!("dropout {p} is outside [0, 1)")));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err(Error::config(format!(
                "clip_norm must be positive, got {}",
                self.clip_norm
            )));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::config("batch_size and max_epochs must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-timestep training loss over the epoch's batches (dropout active).
    pub train_loss: f64,
    pub valid_nll: f64,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// Parameters from the epoch with the lowest validation NLL.
    pub model: GruModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    /// Train NLL of the returned model, without dropout.
    pub train_nll: f64,
    pub valid_nll: f64,
    pub wall_time_s: f64,
}

fn mix(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One optimizer step on a batch; returns the batch's summed loss and its
/// number of valid timesteps.
pub fn train_batch(
    model: &mut GruModel,
    adam: &mut AdamState,
    batch: &crate::data::Batch,
    dropout: Option<&mut Dropout>,
    clip_norm: f64,
) -> Result<(f64, usize)> {
    let n_valid = batch.total_valid();
    if n_valid == 0 {
        return Ok((0.0, 0));
    }
    let scale = 1.0 / n_valid as f64;
    let mut grad = model.zeros_like();
    let mut loss = 0.0;
    let mut dropout = dropout;
    for b in 0..batch.batch_size() {
        let (x, y) = batch.row(b);
        loss += model.loss_and_grad(&x, &y, dropout.as_deref_mut(), scale, &mut grad)?;
    }
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("training loss became {loss}")));
    }
    clip_global_norm(&mut grad.params_mut(), clip_norm)?;
    let grads = grad.params();
    adam.update(&mut model.params_mut(), &grads)?;
    if !model.all_finite() {
        return Err(Error::Numerical("parameters became non-finite".into()));
    }
    Ok((loss, n_valid))
}

/// Trains one grid cell with Adam, global-norm clipping and early stopping on
/// validation NLL. Returns [`Error::Numerical`] if training diverges.
pub fn fit(
    spec: &ModelSpec,
    train: &[Sequence],
    valid: &[Sequence],
    cfg: &TrainConfig,
    lr: f64,
    dropout: f64,
) -> Result<FitOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let mut model = GruModel::init(spec, cfg.seed)?;
    let sizes: Vec<usize> = model.params().iter().map(|s| s.len()).collect();
    let mut adam = AdamState::new(lr, sizes);
    let mut drop = if dropout > 0.0 {
        Some(Dropout::new(
            dropout,
            cfg.dropout_placement,
            ChaCha8Rng::seed_from_u64(mix(cfg.seed, 0xD809)),
        )?)
    } else {
        None
    };

    let mut best = (model.clone(), f64::INFINITY, 0usize);
    let mut history = Vec::new();
    let mut stale = 0;
    for epoch in 1..=cfg.max_epochs {
        let batches = to_batches(train, cfg.batch_size, mix(cfg.seed, epoch as u64))?;
        let (mut total, mut count) = (0.0, 0usize);
        for batch in &batches {
            let (l, n) =
                train_batch(&mut model, &mut adam, batch, drop.as_mut(), cfg.clip_norm).map_err(|e| match e {
                    Error::Numerical(msg) => Error::Numerical(format!("epoch {epoch}: {msg}")),
                    other => other,
                })?;
            total += l;
            count += n;
        }
        let valid_nll = evaluate(&model, valid)?.nll;
        if !valid_nll.is_finite() {
            return Err(Error::Numerical(format!(
                "epoch {epoch}: validation NLL is {valid_nll}"
            )));
        }
        let train_loss = if count > 0 { total / count as f64 } else { 0.0 };
        log::info!("epoch {epoch:>3}  lr {lr}  dropout {dropout}  train {train_loss:.4}  valid {valid_nll:.4}");
        history.push(EpochRecord {
            epoch,
            train_loss,
            valid_nll,
        });
        if valid_nll < best.1 {
            best = (model.clone(), valid_nll, epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    let (model, valid_nll, best_epoch) = best;
    let train_nll = evaluate(&model, train)?.nll;
    Ok(FitOutcome {
        model,
        history,
        best_epoch,
        train_nll,
        valid_nll,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// [`fit`] on a dataset's train and valid splits.
pub fn fit_dataset(
    spec: &ModelSpec,
    data: &PianoRollDataset,
    cfg: &TrainConfig,
    lr: f64,
    dropout: f64,
) -> Result<FitOutcome> {
    fit(spec, &data.train, &data.valid, cfg, lr, dropout)
}
