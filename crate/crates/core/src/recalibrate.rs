//! Adding a camera to a trained model: freeze the shared trunk up to the
//! hidden layer, retrain the per-camera feature layer and a grown fusion layer.

use std::io::Write;
use std::time::Duration;

use tactile_nn::{Architecture, Layer, NetworkModel};

use crate::dataset::Dataset;
use crate::train::{train, Metrics, TrainConfig, TrainReport};
use crate::{Error, Result};

/// Builds the larger model. Trunk layers before the last trunk dense layer are
/// copied and frozen; that dense layer is freshly initialised. The fusion layer
/// keeps the old weights linking the old cameras (the first `k` cameras) to
/// bins present in both models, and is fresh elsewhere.
pub fn grow_model(old: &NetworkModel, cameras: usize, bins: Vec<u32>, seed: u64) -> Result<NetworkModel> {
    let old_arch = old.arch();
    if cameras < old_arch.camera_count {
        return Err(Error::Validation(format!(
            "cannot recalibrate a {}-camera model for {cameras} cameras",
            old_arch.camera_count
        )));
    }
    let arch = Architecture {
        camera_count: cameras,
        output_bins: bins,
        ..old_arch.clone()
    };
    let fresh = NetworkModel::new(arch.clone(), seed)?;
    let feature = old
        .last_trunk_dense()
        .ok_or_else(|| Error::Validation("model has no dense feature layer".into()))?;
    let trunk = old.trunk_len();
    let mut layers: Vec<Layer<f32>> = Vec::with_capacity(trunk + 1);
    for (i, layer) in old.layers()[..trunk].iter().enumerate() {
        let mut l = if i == feature {
            fresh.layers()[i].clone()
        } else {
            layer.clone()
        };
        l.clear_cache();
        l.set_frozen(i < feature);
        layers.push(l);
    }

    let mut fusion = fresh.fusion().clone();
    fusion.weight.data_mut().fill(0.0);
    let old_fusion = old.fusion();
    let f = arch.feature_width;
    let (old_out, new_out) = (old_fusion.outputs(), fusion.outputs());
    let shared: Vec<(usize, usize)> = arch
        .output_bins
        .iter()
        .enumerate()
        .filter_map(|(p, b)| old_arch.output_bins.binary_search(b).ok().map(|q| (p, q)))
        .collect();
    for row in 0..old_arch.camera_count * f {
        for &(p, q) in &shared {
            for a in 0..3 {
                fusion.weight.data_mut()[row * new_out + 3 * p + a] =
                    old_fusion.weight.data()[row * old_out + 3 * q + a];
            }
        }
    }
    for &(p, q) in &shared {
        for a in 0..3 {
            fusion.bias.data_mut()[3 * p + a] = old_fusion.bias.data()[3 * q + a];
        }
    }
    fusion.frozen = false;
    layers.push(Layer::Dense(fusion));
    Ok(NetworkModel::from_layers(arch, layers)?)
}

/// Whether every frozen layer of `new` holds bit-identical parameters and
/// statistics to the same layer of `old`.
pub fn frozen_layers_identical(old: &NetworkModel, new: &NetworkModel) -> bool {
    let trunk = old.trunk_len().min(new.trunk_len());
    (0..trunk)
        .filter(|&i| new.layers()[i].is_frozen())
        .all(|i| {
            let (a, b) = (&old.layers()[i], &new.layers()[i]);
            let bits = |t: &tactile_nn::Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            a.state().len() == b.state().len()
                && a.state().iter().zip(b.state()).all(|(x, y)| x.shape() == y.shape() && bits(x) == bits(y))
        })
}

/// Grows `old` to the cameras and bins of `data` and retrains on a fraction
/// of its train split.
pub fn recalibrate(
    old: &NetworkModel,
    data: &Dataset,
    fraction: f64,
    cfg: &TrainConfig,
) -> Result<(NetworkModel, TrainReport)> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Validation(format!(
            "recalibration fraction must lie in (0, 1], got {fraction}"
        )));
    }
    if data.image_size != old.arch().image_size {
        return Err(Error::Validation(format!(
            "model expects {} px frames, dataset has {} px",
            old.arch().image_size,
            data.image_size
        )));
    }
    let mut model = grow_model(old, data.camera_count, data.label_bins.clone(), cfg.seed)?;
    let cfg = TrainConfig {
        data_fraction: fraction,
        ..cfg.clone()
    };
    let report = train(&mut model, data, &cfg)?;
    Ok((model, report))
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub fraction: f64,
    pub seed: u64,
    pub test: Metrics,
    pub epochs: usize,
    pub wall_time: Duration,
}

/// Recalibrates once per `(fraction, seed)`.
pub fn fraction_sweep(
    old: &NetworkModel,
    data: &Dataset,
    fractions: &[f64],
    seeds: &[u64],
    cfg: &TrainConfig,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &fraction in fractions {
        for &seed in seeds {
            let (_, report) = recalibrate(old, data, fraction, &TrainConfig { seed, ..cfg.clone() })?;
            let test = report
                .test
                .ok_or_else(|| Error::Validation("dataset has no test samples".into()))?;
            rows.push(SweepRow {
                fraction,
                seed,
                test,
                epochs: report.epochs_run(),
                wall_time: report.wall_time,
            });
        }
    }
    Ok(rows)
}

pub const METRIC_NAMES: [&str; 4] = ["dist_xy", "total_xy", "dist_z", "total_z"];

/// Least-squares line `y = intercept + slope·x`.
pub fn trend_line(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (my - slope * mx, slope)
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["fraction", "seed", "epochs"];
    header.extend(METRIC_NAMES);
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![format!("{}", r.fraction), r.seed.to_string(), r.epochs.to_string()];
        rec.extend(r.test.four().iter().map(|v| format!("{v:.5e}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// One least-squares line per metric over all sweep rows.
pub fn write_trend_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["metric", "intercept", "slope"])?;
    let xs: Vec<f64> = rows.iter().map(|r| r.fraction).collect();
    for (k, name) in METRIC_NAMES.iter().enumerate() {
        let ys: Vec<f64> = rows.iter().map(|r| r.test.four()[k]).collect();
        let (a, b) = trend_line(&xs, &ys);
        w.write_record([name.to_string(), format!("{a:.5e}"), format!("{b:.5e}")])?;
    }
    w.flush()?;
    Ok(())
}
