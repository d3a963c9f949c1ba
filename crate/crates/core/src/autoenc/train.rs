//! Stratified k-fold training with early stopping, and fine-tuning.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::loss;
use super::model::{ArchitectureDescriptor, Autoencoder};
use super::optim::{Adam, CosineWarmRestarts};
use super::tensor::Tensor;
use super::AutoencError;
use crate::seed;
use crate::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub first_period: f64,
    pub period_mult: f64,
    pub max_epochs: usize,
    pub patience: usize,
    /// Validation loss must drop by more than this to count as improvement.
    pub min_delta: f64,
    pub folds: usize,
    pub fine_tune_lr0: f64,
    pub fine_tune_epochs: usize,
    pub init_seed: u64,
    pub fold_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 12,
            lr0: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            first_period: 20.0,
            period_mult: 2.0,
            max_epochs: 140,
            patience: 10,
            min_delta: 1e-6,
            folds: 5,
            fine_tune_lr0: 1e-4,
            fine_tune_epochs: 5,
            init_seed: 0,
            fold_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> CosineWarmRestarts {
        CosineWarmRestarts { lr0: self.lr0, first_period: self.first_period, period_mult: self.period_mult }
    }

    pub fn fine_tune_schedule(&self) -> CosineWarmRestarts {
        CosineWarmRestarts { lr0: self.fine_tune_lr0, ..self.schedule() }
    }
}

/// One row of a loss curve. `val_loss` is absent during fine-tuning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub fold: usize,
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub best_val_loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct FoldResult<S> {
    pub fold: usize,
    /// Parameters from the epoch with the lowest validation loss.
    pub model: Autoencoder<S>,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct TrainOutput<S> {
    pub folds: Vec<FoldResult<S>>,
    /// Index into `folds` of the lowest best validation loss.
    pub best_fold: usize,
    pub curves: Vec<EpochRecord>,
}

/// Assigns every sample to one of `k` folds so each class is spread as
/// evenly as possible. Returns the fold index per sample.
pub fn stratified_folds(labels: &[usize], k: usize, seed: u64) -> Result<Vec<usize>, AutoencError> {
    if k < 2 {
        return Err(AutoencError::InvalidInput(format!("need at least 2 folds, got {k}")));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut fold_of = vec![0; labels.len()];
    let mut rng = seed::rng(seed);
    let mut offset = 0;
    for c in 0..n_classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if idx.is_empty() {
            continue;
        }
        if idx.len() < k {
            return Err(AutoencError::InsufficientData(format!("class {c} has {} samples, fewer than {k} folds", idx.len())));
        }
        idx.shuffle(&mut rng);
        // rotate the starting fold so remainders do not pile onto fold 0
        for (j, &i) in idx.iter().enumerate() {
            fold_of[i] = (j + offset) % k;
        }
        offset = (offset + idx.len()) % k;
    }
    Ok(fold_of)
}

fn gather<S: Scalar>(data: &Tensor<S>, idx: &[usize]) -> Tensor<S> {
    let l = data.sample_len();
    let mut out = Vec::with_capacity(idx.len() * l);
    for &i in idx {
        out.extend_from_slice(data.sample(i));
    }
    Tensor::from_vec([idx.len(), data.shape[1], data.shape[2], data.shape[3]], out)
}

/// Splits `idx` into batches; a trailing singleton joins the previous batch
/// so batch statistics are always defined.
fn batches(idx: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = idx.chunks(size.max(1)).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let start = (out.len() - 1) * size;
        *out.last_mut().unwrap() = &idx[start..];
    }
    out
}

/// Mean per-sample loss in inference mode.
pub fn evaluate_loss<S: Scalar>(model: &Autoencoder<S>, data: &Tensor<S>, idx: &[usize], batch_size: usize) -> Result<f64, AutoencError> {
    let mut total = 0.0;
    for b in idx.chunks(batch_size.max(1)) {
        let x = gather(data, b);
        let out = model.forward(&x)?;
        let l = x.sample_len();
        for i in 0..b.len() {
            total += loss(&out.recon.data[i * l..(i + 1) * l], x.sample(i))?.total;
        }
    }
    Ok(total / idx.len().max(1) as f64)
}

/// One pass over `train_idx` in shuffled batches. Returns the mean batch
/// loss weighted by batch size and the scheduled rate at the epoch start.
#[allow(clippy::too_many_arguments)]
fn run_epoch<S: Scalar>(
    model: &mut Autoencoder<S>,
    opt: &mut Adam<S>,
    data: &Tensor<S>,
    train_idx: &[usize],
    sched: &CosineWarmRestarts,
    epoch: usize,
    batch_size: usize,
    shuffle_seed: u64,
) -> Result<(f64, f64), AutoencError> {
    let mut order = train_idx.to_vec();
    order.shuffle(&mut seed::rng(shuffle_seed));
    let bs = batches(&order, batch_size);
    let nb = bs.len() as f64;
    let mut sum = 0.0;
    for (bi, b) in bs.iter().enumerate() {
        // sample the schedule at the batch midpoint so no batch lands
        // exactly on a period boundary (lr 0)
        let lr = sched.lr_at(epoch as f64 + (bi as f64 + 0.5) / nb);
        let x = gather(data, b);
        let parts = model.loss_and_grad(&x, &x, true)?;
        let mut params = model.params_mut();
        opt.step(&mut params, lr);
        sum += parts.total * b.len() as f64;
    }
    Ok((sum / order.len().max(1) as f64, sched.epoch_start_lr(epoch)))
}

fn check_data<S: Scalar>(data: &Tensor<S>, arch: &ArchitectureDescriptor) -> Result<(), AutoencError> {
    if data.shape[1..] != [arch.input_channels, arch.input_size, arch.input_size] {
        return Err(AutoencError::ShapeMismatch(format!(
            "training data {:?} does not match {}x{}x{} input",
            data.shape, arch.input_channels, arch.input_size, arch.input_size
        )));
    }
    Ok(())
}

/// Trains one model per fold with early stopping on validation loss.
/// `data` holds one sample per subject (the autoencoder target is its input).
/// `progress` sees every epoch record as it is produced.
pub fn train_cv<S: Scalar>(
    data: &Tensor<S>,
    labels: &[usize],
    arch: &ArchitectureDescriptor,
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<TrainOutput<S>, AutoencError> {
    check_data(data, arch)?;
    if labels.len() != data.n() {
        return Err(AutoencError::ShapeMismatch(format!("{} labels for {} samples", labels.len(), data.n())));
    }
    let fold_of = stratified_folds(labels, cfg.folds, cfg.fold_seed)?;
    let sched = cfg.schedule();
    let mut folds = Vec::with_capacity(cfg.folds);
    let mut curves = Vec::new();
    for f in 0..cfg.folds {
        let train_idx: Vec<usize> = (0..data.n()).filter(|&i| fold_of[i] != f).collect();
        let val_idx: Vec<usize> = (0..data.n()).filter(|&i| fold_of[i] == f).collect();
        let mut model = Autoencoder::new(arch.clone(), seed::derive(cfg.init_seed, &[f as u64]))?;
        let mut opt = Adam::new(cfg.beta1, cfg.beta2, cfg.adam_eps);
        let mut best = (f64::INFINITY, 0usize, model.clone());
        let mut since_improvement = 0;
        let mut epochs_run = 0;
        for epoch in 0..cfg.max_epochs {
            let shuffle = seed::derive(cfg.init_seed, &[f as u64, epoch as u64, 1]);
            let (train_loss, lr) = run_epoch(&mut model, &mut opt, data, &train_idx, &sched, epoch, cfg.batch_size, shuffle)?;
            let val = evaluate_loss(&model, data, &val_idx, cfg.batch_size)?;
            epochs_run = epoch + 1;
            if val < best.0 - cfg.min_delta {
                best = (val, epoch, model.clone());
                since_improvement = 0;
            } else {
                since_improvement += 1;
            }
            let rec = EpochRecord { fold: f, epoch, lr, train_loss, val_loss: Some(val), best_val_loss: Some(best.0) };
            log::debug!("fold {f} epoch {epoch}: lr {lr:.6} train {train_loss:.5} val {val:.5}");
            progress(&rec);
            curves.push(rec);
            if since_improvement >= cfg.patience {
                break;
            }
        }
        folds.push(FoldResult {
            fold: f,
            model: best.2,
            best_val_loss: best.0,
            best_epoch: best.1,
            epochs_run,
            train_indices: train_idx,
            val_indices: val_idx,
        });
    }
    let best_fold = (0..folds.len())
        .min_by(|&a, &b| folds[a].best_val_loss.total_cmp(&folds[b].best_val_loss))
        .expect("at least two folds");
    Ok(TrainOutput { folds, best_fold, curves })
}

/// Trains `model` on every sample of `data` for a fixed number of epochs
/// under `sched`, with a fresh optimizer and no validation. `stream`
/// separates the shuffling of independent calls.
pub fn fit_epochs<S: Scalar>(
    model: &Autoencoder<S>,
    data: &Tensor<S>,
    cfg: &TrainConfig,
    sched: &CosineWarmRestarts,
    epochs: usize,
    stream: (usize, u64),
    mut progress: impl FnMut(&EpochRecord),
) -> Result<(Autoencoder<S>, Vec<EpochRecord>), AutoencError> {
    check_data(data, &model.arch)?;
    if data.n() < 2 {
        return Err(AutoencError::InsufficientData(format!("training needs at least 2 samples, got {}", data.n())));
    }
    let (fold, salt) = stream;
    let mut model = model.clone();
    let mut opt = Adam::new(cfg.beta1, cfg.beta2, cfg.adam_eps);
    let idx: Vec<usize> = (0..data.n()).collect();
    let mut records = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let shuffle = seed::derive(cfg.init_seed, &[fold as u64, epoch as u64, salt]);
        let (train_loss, lr) = run_epoch(&mut model, &mut opt, data, &idx, sched, epoch, cfg.batch_size, shuffle)?;
        let rec = EpochRecord { fold, epoch, lr, train_loss, val_loss: None, best_val_loss: None };
        progress(&rec);
        records.push(rec);
    }
    Ok((model, records))
}

/// Continues training `model` on `data` for the fine-tuning epoch budget
/// with a fresh optimizer and a restarted schedule at the reduced rate.
pub fn fine_tune<S: Scalar>(
    model: &Autoencoder<S>,
    data: &Tensor<S>,
    cfg: &TrainConfig,
    fold: usize,
    progress: impl FnMut(&EpochRecord),
) -> Result<(Autoencoder<S>, Vec<EpochRecord>), AutoencError> {
    fit_epochs(model, data, cfg, &cfg.fine_tune_schedule(), cfg.fine_tune_epochs, (fold, 2), progress)
}
