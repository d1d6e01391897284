use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{adam_step, AdamState, ModelConfig, Real, Scaling, Tensor, UNet};
use crate::spectral::io::fmt_real;
use crate::spectral::Spectrum;
use crate::{rng, Error, Result};

/// Samples per parallel work item. Fixed so gradient sums do not depend on
/// the thread count.
const MICRO_BATCH: usize = 16;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 256,
            max_epochs: 100,
            early_stop_patience: 5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            precision: Precision::F32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.learning_rate, self.adam_beta1, self.adam_beta2, self.adam_eps];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config(format!(
                "learning_rate, adam betas and adam_eps must be positive (got {positive:?})"
            )));
        }
        if self.adam_beta1 >= 1.0 || self.adam_beta2 >= 1.0 {
            return Err(Error::Config("adam betas must be below 1".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.early_stop_patience == 0 {
            return Err(Error::Config("batch_size, max_epochs and early_stop_patience must be positive".into()));
        }
        if self.early_stop_patience > self.max_epochs {
            return Err(Error::Config(format!(
                "early_stop_patience {} exceeds max_epochs {}",
                self.early_stop_patience, self.max_epochs
            )));
        }
        Ok(())
    }
}

/// Progress stored alongside the weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingMeta {
    pub epochs_run: usize,
    pub best_val_loss: Option<f64>,
    pub best_epoch: Option<usize>,
}

/// Stops once validation loss has not strictly improved for `patience` epochs.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    best_epoch: Option<usize>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: None, best_epoch: None, stale: 0 }
    }

    pub fn resume(patience: usize, meta: &TrainingMeta) -> Self {
        Self { patience, best: meta.best_val_loss, best_epoch: meta.best_epoch, stale: 0 }
    }

    /// Records one epoch; returns whether it is the new best.
    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> bool {
        let improved = match self.best {
            None => val_loss.is_finite(),
            Some(b) => val_loss < b,
        };
        if improved {
            self.best = Some(val_loss);
            self.best_epoch = Some(epoch);
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        improved
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossHistory {
    pub records: Vec<EpochRecord>,
}

impl LossHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_mse,val_mse\n");
        for r in &self.records {
            out.push_str(&format!("{},{},{}\n", r.epoch, fmt_real(r.train_mse), fmt_real(r.val_mse)));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<LossHistory> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
        let mut records = Vec::new();
        for row in rdr.records() {
            let row = row.map_err(|e| Error::csv(path, e))?;
            let field = |i: usize| row.get(i).unwrap_or("");
            let bad = || Error::Data(format!("{}: malformed loss history row {:?}", path.display(), row));
            records.push(EpochRecord {
                epoch: field(0).parse().map_err(|_| bad())?,
                train_mse: field(1).parse().map_err(|_| bad())?,
                val_mse: field(2).parse().map_err(|_| bad())?,
            });
        }
        Ok(LossHistory { records })
    }
}

/// Input/target rows of equal length.
#[derive(Debug, Clone, Default)]
pub struct PairSet {
    inputs: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
}

impl PairSet {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<Vec<f64>>) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::Data(format!("{} inputs but {} targets", inputs.len(), targets.len())));
        }
        if let Some(i) = inputs.iter().zip(&targets).position(|(a, b)| a.len() != b.len()) {
            return Err(Error::Data(format!("pair {i}: input and target lengths differ")));
        }
        Ok(Self { inputs, targets })
    }

    /// Pairs each input spectrum with the target of the same id.
    pub fn from_spectra(inputs: &[Spectrum], targets: &[Spectrum]) -> Result<Self> {
        let by_id: HashMap<u64, &Spectrum> = targets.iter().map(|s| (s.id, s)).collect();
        let mut tv = Vec::with_capacity(inputs.len());
        for s in inputs {
            let t = by_id.get(&s.id).ok_or_else(|| Error::Data(format!("no target for spectrum {}", s.id)))?;
            tv.push(t.values.clone());
        }
        Self::new(inputs.iter().map(|s| s.values.clone()).collect(), tv)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

pub struct TrainOutcome<T> {
    /// Parameters from the best validation epoch.
    pub model: UNet<T>,
    pub meta: TrainingMeta,
    pub history: LossHistory,
    pub stopped_early: bool,
}

/// Reflection padding that does not repeat the edge sample.
pub fn reflect_pad(values: &[f64], left: usize, right: usize) -> Vec<f64> {
    let n = values.len();
    assert!(left < n && right < n, "reflection padding wider than the signal");
    let mut out = Vec::with_capacity(n + left + right);
    out.extend((0..left).map(|j| values[left - j]));
    out.extend_from_slice(values);
    out.extend((0..right).map(|j| values[n - 2 - j]));
    out
}

struct Padded<T> {
    rows: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Real> Padded<T> {
    fn new(rows: &[Vec<f64>], cfg: &ModelConfig) -> Result<Self> {
        let (l, r) = cfg.padding();
        let scaling = cfg.scaling.unwrap_or(Scaling::IDENTITY);
        let mut data = Vec::with_capacity(rows.len() * cfg.pad_to);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cfg.in_length {
                return Err(Error::Shape(format!("row {i} has {} values, model expects {}", row.len(), cfg.in_length)));
            }
            if let Some(c) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("row {i} has a non-finite value at channel {c}")));
            }
            data.extend(reflect_pad(row, l, r).into_iter().map(|v| T::from_f64_lossy(scaling.apply(v))));
        }
        Ok(Self { rows: rows.len(), width: cfg.pad_to, data })
    }

    fn gather(&self, idx: &[usize]) -> Tensor<T> {
        let mut out = Vec::with_capacity(idx.len() * self.width);
        for &i in idx {
            out.extend_from_slice(&self.data[i * self.width..(i + 1) * self.width]);
        }
        Tensor::from_vec([idx.len(), 1, self.width], out).expect("gathered shape")
    }
}

/// Sum of squared errors and the gradient of `sse / denom`.
fn sse_and_grad<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, denom: usize) -> (f64, Tensor<T>) {
    let scale = T::from_f64_lossy(2.0 / denom as f64);
    let mut grad = Tensor::zeros(pred.shape());
    let mut sse = 0.0;
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let d = p - t;
        sse += d.as_f64() * d.as_f64();
        *g = scale * d;
    }
    (sse, grad)
}

fn mean_loss<T: Real>(model: &UNet<T>, x: &Padded<T>, y: &Padded<T>) -> Result<f64> {
    let idx: Vec<usize> = (0..x.rows).collect();
    let parts: Vec<Result<f64>> = idx
        .par_chunks(MICRO_BATCH)
        .map(|c| {
            let pred = model.forward(&x.gather(c))?;
            let target = y.gather(c);
            Ok(pred.data().iter().zip(target.data()).map(|(&p, &t)| (p - t).as_f64().powi(2)).sum())
        })
        .collect();
    let mut sse = 0.0;
    for p in parts {
        sse += p?;
    }
    Ok(sse / (x.rows * x.width) as f64 * unscale(model.config()))
}

/// Converts a loss on standardised values back to input units.
fn unscale(cfg: &ModelConfig) -> f64 {
    cfg.scaling.map_or(1.0, |s| s.scale * s.scale)
}

/// Mini-batch Adam on MSE with per-epoch shuffling and early stopping.
/// Epoch numbers continue from `meta.epochs_run`; `on_epoch` sees each
/// record as it is produced. A fresh model without a scaling gets one fitted
/// to the training inputs; reported losses are in input units.
pub fn train<T: Real>(
    mut model: UNet<T>,
    meta: &TrainingMeta,
    train_set: &PairSet,
    val_set: &PairSet,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Data(format!(
            "training needs non-empty train and validation sets (got {} and {})",
            train_set.len(),
            val_set.len()
        )));
    }
    if model.config().scaling.is_none() && meta.epochs_run == 0 {
        model.set_scaling(Some(Scaling::fit(&train_set.inputs)?));
    }
    let mc = model.config().clone();
    let (xt, yt) = (Padded::<T>::new(&train_set.inputs, &mc)?, Padded::<T>::new(&train_set.targets, &mc)?);
    let (xv, yv) = (Padded::<T>::new(&val_set.inputs, &mc)?, Padded::<T>::new(&val_set.targets, &mc)?);

    let mut adam = AdamState::new(model.params());
    let mut step = 0u64;
    let mut stopper = EarlyStopping::resume(cfg.early_stop_patience, meta);
    let mut best_params = model.params().to_vec();
    let mut history = LossHistory::default();
    let mut stopped_early = false;
    let shuffle_seed = rng::derive(cfg.seed, "shuffle");
    let mut order: Vec<usize> = (0..xt.rows).collect();

    for epoch in meta.epochs_run + 1..=meta.epochs_run + cfg.max_epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::stream(shuffle_seed, epoch as u64));
        let mut train_sse = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let denom = batch.len() * mc.pad_to;
            let parts: Vec<Result<(f64, Vec<Vec<T>>)>> = batch
                .par_chunks(MICRO_BATCH)
                .map(|c| {
                    let (pred, cache) = model.forward_train(&xt.gather(c))?;
                    let (sse, grad) = sse_and_grad(&pred, &yt.gather(c), denom);
                    Ok((sse, model.backward(cache, &grad)?.0))
                })
                .collect();
            let mut batch_sse = 0.0;
            let mut grads: Option<Vec<Vec<T>>> = None;
            for part in parts {
                let (sse, g) = part?;
                batch_sse += sse;
                match grads.as_mut() {
                    None => grads = Some(g),
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, g)| a.iter_mut().zip(g).for_each(|(a, &g)| *a += g)),
                }
            }
            let grads = grads.expect("non-empty batch");
            if !batch_sse.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite loss or gradient at epoch {epoch}, batch {} (loss {batch_sse:e})",
                    b + 1
                )));
            }
            step += 1;
            adam_step(model.params_mut(), &grads, &mut adam, step, cfg);
            train_sse += batch_sse;
        }
        let record = EpochRecord {
            epoch,
            train_mse: train_sse / (xt.rows * mc.pad_to) as f64 * unscale(&mc),
            val_mse: mean_loss(&model, &xv, &yv)?,
        };
        if !record.val_mse.is_finite() {
            return Err(Error::Numeric(format!("non-finite validation loss at epoch {epoch}")));
        }
        history.records.push(record);
        on_epoch(&record);
        if stopper.observe(epoch, record.val_mse) {
            best_params = model.params().to_vec();
        }
        if stopper.should_stop() {
            stopped_early = true;
            break;
        }
    }
    let epochs_run = history.records.last().map_or(meta.epochs_run, |r| r.epoch);
    model.params_mut().clone_from_slice(&best_params);
    Ok(TrainOutcome {
        model,
        meta: TrainingMeta { epochs_run, best_val_loss: stopper.best(), best_epoch: stopper.best_epoch() },
        history,
        stopped_early,
    })
}

/// Reflect-pads, runs the model and crops back to the input length.
pub fn denoise_values<T: Real>(model: &UNet<T>, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let mc = model.config();
    let x = Padded::<T>::new(rows, mc)?;
    let (l, _) = mc.padding();
    let scaling = mc.scaling.unwrap_or(Scaling::IDENTITY);
    let idx: Vec<usize> = (0..rows.len()).collect();
    let parts: Vec<Result<Vec<Vec<f64>>>> = idx
        .par_chunks(MICRO_BATCH)
        .map(|c| {
            let y = model.forward(&x.gather(c))?;
            Ok((0..c.len())
                .map(|n| y.item(n)[l..l + mc.in_length].iter().map(|v| scaling.invert(v.as_f64())).collect())
                .collect())
        })
        .collect();
    let mut out = Vec::with_capacity(rows.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

pub fn denoise<T: Real>(model: &UNet<T>, spectra: &[Spectrum]) -> Result<Vec<Spectrum>> {
    let rows: Vec<Vec<f64>> = spectra.iter().map(|s| s.values.clone()).collect();
    let out = denoise_values(model, &rows)?;
    Ok(spectra.iter().zip(out).map(|(s, v)| s.with_values(v)).collect())
}
