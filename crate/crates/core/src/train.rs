//! Mini-batch training with early stopping, and the RMSE metrics.

use std::io::Write;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tactile_nn::{
    adam_step, loss_and_grad, AdamConfig, AdamState, Architecture, ForwardCtx, LossKind, Mode, NetworkModel, Tensor,
};

use crate::dataset::{Dataset, Split};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub patience: usize,
    pub max_epochs: usize,
    /// Share of the train split used, sampled by `seed`.
    pub data_fraction: f64,
    pub seed: u64,
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            lr: 1e-3,
            patience: 20,
            max_epochs: 200,
            data_fraction: 1.0,
            seed: 1,
            loss: LossKind::Mse,
        }
    }
}

/// Per-axis RMSE over bins (`dist`) and over per-sample bin sums (`total`), in N.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub dist: [f64; 3],
    pub total: [f64; 3],
}

impl Metrics {
    /// The four numbers compared in recalibration: distribution and total,
    /// horizontal (x and y pooled) and vertical.
    pub fn four(&self) -> [f64; 4] {
        let xy = |v: [f64; 3]| ((v[0] * v[0] + v[1] * v[1]) / 2.0).sqrt();
        [xy(self.dist), xy(self.total), self.dist[2], self.total[2]]
    }

    pub fn summary(&self) -> String {
        format!(
            "RMSE_dist {:.5e} {:.5e} {:.5e} | RMSE_total {:.5e} {:.5e} {:.5e}",
            self.dist[0], self.dist[1], self.dist[2], self.total[0], self.total[1], self.total[2]
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Validation distribution RMSE over all outputs; `None` without a validation split.
    pub val_rmse: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were restored; `None` when no epoch ran.
    pub best_epoch: Option<usize>,
    pub train: Option<Metrics>,
    pub val: Option<Metrics>,
    pub test: Option<Metrics>,
    pub wall_time: Duration,
    pub data_fraction: f64,
    pub train_samples: usize,
    pub frozen_layers: Vec<usize>,
}

impl TrainReport {
    pub fn epochs_run(&self) -> usize {
        self.epochs.len()
    }

    /// Per-epoch CSV; wall time is left out so reruns compare byte for byte.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "train_loss", "val_rmse"])?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                format!("{:.5e}", e.train_loss),
                e.val_rmse.map_or_else(String::new, |v| format!("{v:.5e}")),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `RMSE_dist x y z | RMSE_total x y z` for the test split.
    pub fn summary(&self) -> String {
        match &self.test {
            Some(m) => m.summary(),
            None => "RMSE_dist n/a | RMSE_total n/a".to_string(),
        }
    }
}

fn check_compatible(model: &NetworkModel, data: &Dataset) -> Result<()> {
    let arch = model.arch();
    if arch.camera_count != data.camera_count
        || arch.image_size != data.image_size
        || arch.output_bins != data.label_bins
    {
        return Err(Error::Validation(format!(
            "model expects {} cameras, {} px, {} bins; dataset has {} cameras, {} px, {} bins",
            arch.camera_count,
            arch.image_size,
            arch.output_bins.len(),
            data.camera_count,
            data.image_size,
            data.label_bins.len()
        )));
    }
    Ok(())
}

/// Network input for the listed samples, `[B·cameras, H, W, 1]`.
pub fn batch_input(data: &Dataset, indices: &[usize]) -> Result<Tensor> {
    let s = data.image_size;
    let mut buf = Vec::with_capacity(indices.len() * data.camera_count * s * s);
    for &i in indices {
        for f in &data.samples[i].frames {
            buf.extend_from_slice(f);
        }
    }
    Ok(Tensor::from_vec(&[indices.len() * data.camera_count, s, s, 1], buf)?)
}

fn batch_target(data: &Dataset, indices: &[usize], scale: f64) -> Vec<f32> {
    indices
        .iter()
        .flat_map(|&i| data.samples[i].label.iter().map(move |&v| (v as f64 / scale) as f32))
        .collect()
}

const EVAL_CHUNK: usize = 32;

/// Eval-mode predictions for the listed samples, one vector each.
pub fn predict_samples(model: &NetworkModel, data: &Dataset, indices: &[usize]) -> Result<Vec<Vec<f32>>> {
    check_compatible(model, data)?;
    let width = model.arch().output_width();
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(EVAL_CHUNK) {
        let pred = model.infer(&batch_input(data, chunk)?)?;
        out.extend(pred.data().chunks(width).map(<[f32]>::to_vec));
    }
    Ok(out)
}

/// Prediction for one sample's concatenated difference frames. Frames that
/// equal the rest state show no contact, and the prediction is exactly zero.
pub fn predict_frames(model: &NetworkModel, frames: &[f32]) -> Result<Vec<f32>> {
    if frames.iter().all(|&v| v == 0.0) {
        return Ok(vec![0.0; model.arch().output_width()]);
    }
    Ok(model.predict(frames)?)
}

/// Metrics of `predictions` against the labels of `indices`; `None` when empty.
pub fn metrics_from(predictions: &[Vec<f32>], data: &Dataset, indices: &[usize]) -> Option<Metrics> {
    if indices.is_empty() {
        return None;
    }
    let mut dist_sq = [0.0f64; 3];
    let mut total_sq = [0.0f64; 3];
    let bins = data.label_bins.len();
    for (pred, &i) in predictions.iter().zip(indices) {
        let label = &data.samples[i].label;
        let mut sums = [0.0f64; 3];
        for (k, (p, t)) in pred.iter().zip(label).enumerate() {
            let e = *p as f64 - *t as f64;
            dist_sq[k % 3] += e * e;
            sums[k % 3] += e;
        }
        for a in 0..3 {
            total_sq[a] += sums[a] * sums[a];
        }
    }
    let n = indices.len() as f64;
    Some(Metrics {
        dist: dist_sq.map(|v| (v / (n * bins as f64)).sqrt()),
        total: total_sq.map(|v| (v / n).sqrt()),
    })
}

pub fn metrics(model: &NetworkModel, data: &Dataset, indices: &[usize]) -> Result<Option<Metrics>> {
    let pred = predict_samples(model, data, indices)?;
    Ok(metrics_from(&pred, data, indices))
}

/// A fresh model for training from scratch. The fusion weights start at zero:
/// the feature layer below it is a sigmoid with strictly positive inputs, and
/// a random fusion layer drives it into saturation within a few steps.
pub fn new_model(arch: Architecture, seed: u64) -> Result<NetworkModel> {
    let mut model = NetworkModel::new(arch, seed)?;
    model.fusion_mut().weight.data_mut().fill(0.0);
    Ok(model)
}

/// RMS of every label entry over `indices`, or 1 when they are all zero.
pub fn label_scale(data: &Dataset, indices: &[usize]) -> f64 {
    let (sum, n) = indices
        .iter()
        .flat_map(|&i| data.samples[i].label.iter())
        .fold((0.0f64, 0usize), |(s, n), &v| (s + v as f64 * v as f64, n + 1));
    let rms = if n == 0 { 0.0 } else { (sum / n as f64).sqrt() };
    if rms > 0.0 && rms.is_finite() {
        rms
    } else {
        1.0
    }
}

fn scale_output(model: &mut NetworkModel, factor: f64) {
    let fusion = model.fusion_mut();
    for v in fusion.weight.data_mut().iter_mut().chain(fusion.bias.data_mut().iter_mut()) {
        *v = (*v as f64 * factor) as f32;
    }
}

/// RMSE over every output of the listed samples.
fn overall_rmse(m: &Metrics) -> f64 {
    (m.dist.iter().map(|v| v * v).sum::<f64>() / 3.0).sqrt()
}

/// Train samples used for a data fraction: a seeded shuffle, then a prefix.
pub fn fraction_subset(train: &[usize], fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Validation(format!(
            "data fraction must lie in (0, 1], got {fraction}"
        )));
    }
    if fraction == 1.0 {
        return Ok(train.to_vec());
    }
    let mut shuffled = train.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0xF4AC_7104));
    let keep = ((fraction * train.len() as f64).round() as usize).clamp(1, train.len().max(1));
    shuffled.truncate(keep);
    shuffled.sort_unstable();
    Ok(shuffled)
}

/// Splits a shuffled order into batches; a trailing single sample joins the
/// batch before it so batch statistics always see more than one sample.
fn batches(order: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(size.max(1)).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let last = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").extend(last);
    }
    out
}

/// Trains `model` in place and returns the report. The best-validation
/// parameters are restored before the final metrics; on a numerical failure
/// they are restored as well and the error is returned.
pub fn train(model: &mut NetworkModel, data: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    check_compatible(model, data)?;
    if cfg.batch_size == 0 {
        return Err(Error::Validation("batch size must be positive".into()));
    }
    let started = Instant::now();
    let train_idx = fraction_subset(&data.indices(Split::Train), cfg.data_fraction, cfg.seed)?;
    let val_idx = data.indices(Split::Val);
    let test_idx = data.indices(Split::Test);
    let frozen_layers: Vec<usize> = model
        .layers()
        .iter()
        .enumerate()
        .filter(|(_, l)| l.has_params() && l.is_frozen())
        .map(|(i, _)| i)
        .collect();

    let cams = data.camera_count;
    // Frozen deterministic leading layers are evaluated once per sample.
    let start = model.frozen_prefix_len();
    let cached: Option<Vec<Vec<f32>>> = if start > 0 && !train_idx.is_empty() {
        let mut feats = vec![Vec::new(); data.samples.len()];
        for chunk in train_idx.chunks(EVAL_CHUNK) {
            let out = model.infer_trunk(0, start, &batch_input(data, chunk)?)?;
            let per = out.len() / chunk.len();
            for (k, &i) in chunk.iter().enumerate() {
                feats[i] = out.data()[k * per..(k + 1) * per].to_vec();
            }
        }
        Some(feats)
    } else {
        None
    };
    let cached_shape: Vec<usize> = match &cached {
        Some(_) => {
            let probe = model.infer_trunk(0, start, &batch_input(data, &train_idx[..1])?)?;
            probe.shape()[1..].to_vec()
        }
        None => Vec::new(),
    };

    // Optimisation runs on labels divided by their RMS; the fusion layer is
    // rescaled on the way in and back out so the stored model predicts newtons.
    let scale = label_scale(data, &data.indices(Split::Train));
    scale_output(model, 1.0 / scale);

    let mut adam = AdamState::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let mut best: Option<(f64, usize, NetworkModel)> = None;
    let mut epochs = Vec::new();
    let mut since_best = 0usize;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut step_seed = cfg.seed.wrapping_mul(0x2545_F491_4F6C_DD1D);

    for epoch in 1..=cfg.max_epochs {
        if train_idx.is_empty() {
            break;
        }
        let mut order = train_idx.clone();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut count = 0usize;
        for batch in batches(&order, cfg.batch_size) {
            step_seed = step_seed.wrapping_add(1);
            let mut ctx = ForwardCtx::new(Mode::Train, step_seed);
            let pred = match &cached {
                Some(feats) => {
                    let mut shape = vec![batch.len() * cams];
                    shape.extend(&cached_shape);
                    let buf: Vec<f32> = batch.iter().flat_map(|&i| feats[i].iter().copied()).collect();
                    let x = Tensor::from_vec(&shape, buf)?;
                    model.forward_from(start, &x, batch.len(), &mut ctx)?
                }
                None => model.forward(&batch_input(data, &batch)?, &mut ctx)?,
            };
            let target = batch_target(data, &batch, scale);
            let (loss, grad) = loss_and_grad(cfg.loss, &pred, &target)?;
            if !loss.is_finite() {
                return Err(abort(model, best, scale, format!("non-finite loss in epoch {epoch}")));
            }
            model.zero_grads();
            model.backward(&grad)?;
            let mut params = model.trainable_params_mut();
            if let Err(e) = adam_step(&mut params, &mut adam) {
                return Err(abort(model, best, scale, format!("epoch {epoch}: {e}")));
            }
            loss_sum += loss * batch.len() as f64;
            count += batch.len();
        }
        model.clear_caches();
        let train_loss = loss_sum / count as f64;
        let mut val_pred = predict_samples(model, data, &val_idx)?;
        val_pred
            .iter_mut()
            .flat_map(|p| p.iter_mut())
            .for_each(|v| *v = (*v as f64 * scale) as f32);
        let val_rmse = metrics_from(&val_pred, data, &val_idx).map(|m| overall_rmse(&m));
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_rmse,
        });
        let score = val_rmse.unwrap_or(train_loss);
        if !score.is_finite() {
            return Err(abort(model, best, scale, format!("non-finite validation score in epoch {epoch}")));
        }
        if best.as_ref().is_none_or(|(s, _, _)| score < *s) {
            best = Some((score, epoch, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }

    let best_epoch = best.as_ref().map(|b| b.1);
    if let Some((_, _, m)) = best {
        *model = m;
    }
    scale_output(model, scale);
    Ok(TrainReport {
        epochs,
        best_epoch,
        train: metrics(model, data, &train_idx)?,
        val: metrics(model, data, &val_idx)?,
        test: metrics(model, data, &test_idx)?,
        wall_time: started.elapsed(),
        data_fraction: cfg.data_fraction,
        train_samples: train_idx.len(),
        frozen_layers,
    })
}

fn abort(model: &mut NetworkModel, best: Option<(f64, usize, NetworkModel)>, scale: f64, msg: String) -> Error {
    if let Some((_, _, m)) = best {
        *model = m;
    }
    scale_output(model, scale);
    model.clear_caches();
    Error::Numerical(msg)
}
