//! Subcommands of the `tactile` binary. Each writes its artifacts and a
//! manifest into an output directory and returns its one-line summary.

pub mod manifest;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use tactile_core::config::StudyConfig;
use tactile_core::contact::{bin_forces, ForceDistribution, Indentation};
use tactile_core::dataset::{generate_dataset, scatter, Dataset, Split};
use tactile_core::dimensioning::{total_thickness, Variant};
use tactile_core::geometry::{bin_cell, coverage_report, covered_bins};
use tactile_core::optics::{write_pgm, OpticalSim, ParticleField};
use tactile_core::recalibrate::{frozen_layers_identical, recalibrate, write_sweep_csv, write_trend_csv, SweepRow};
use tactile_core::train::{metrics_from, new_model, predict_frames, predict_samples, train, Metrics, TrainConfig};
use tactile_core::{Error, Result};
use tactile_nn::io::{load_model, save_model};
use tactile_nn::{Architecture, NetworkModel};

pub use manifest::RunManifest;

pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

pub fn exit_code(err: &Error) -> i32 {
    if err.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_VALIDATION
    }
}

/// Settings shared by every subcommand.
#[derive(Clone, Debug)]
pub struct Context {
    pub study: StudyConfig,
    pub config_path: Option<PathBuf>,
    pub out: PathBuf,
}

impl Context {
    /// Loads the config (desk-scale defaults without one); `seed` replaces
    /// the configured seed.
    pub fn new(config_path: Option<&Path>, seed: Option<u64>, out: impl Into<PathBuf>) -> Result<Self> {
        let mut study = match config_path {
            Some(p) => StudyConfig::load(p)?,
            None => StudyConfig::desk_scale(),
        };
        if let Some(s) = seed {
            study.sensor.rng_seed = s;
        }
        Ok(Self {
            study,
            config_path: config_path.map(Path::to_path_buf),
            out: out.into(),
        })
    }

    pub fn seed(&self) -> u64 {
        self.study.sensor.rng_seed
    }

    fn manifest(&self, subcommand: &str) -> RunManifest {
        RunManifest::new(subcommand, self.config_path.as_deref(), self.seed(), self.study.hash())
    }

    fn out_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out)?;
        Ok(&self.out)
    }

    fn simulator(&self) -> Result<OpticalSim> {
        let cfg = &self.study.sensor;
        OpticalSim::new(cfg.clone(), ParticleField::generate(cfg, cfg.rng_seed))
    }
}

fn finish(ctx: &Context, mut manifest: RunManifest, outputs: &[&str]) -> Result<()> {
    manifest.outputs.extend(outputs.iter().map(|s| s.to_string()));
    manifest.outputs.push(manifest::FILE_NAME.to_string());
    manifest.write(&ctx.out)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Renders the configured indentation grid into `dataset.tds`.
pub fn cmd_generate(ctx: &Context) -> Result<String> {
    ctx.study.sensor.validate()?;
    let sim = ctx.simulator()?;
    let data = generate_dataset(&sim, &ctx.study.grid, ctx.seed(), ctx.study.hash())?;
    let coverage = coverage_report(&ctx.study.sensor);

    let dir = ctx.out_dir()?;
    data.save(dir.join("dataset.tds"))?;
    fs::write(dir.join("config.txt"), ctx.study.to_text())?;
    coverage.write_polygons_csv(create(dir, "coverage.csv")?)?;
    finish(ctx, ctx.manifest("generate"), &["dataset.tds", "config.txt", "coverage.csv"])?;

    let n = |s| data.indices(s).len();
    Ok(format!(
        "samples {} train {} val {} test {} | {}",
        data.samples.len(),
        n(Split::Train),
        n(Split::Val),
        n(Split::Test),
        coverage.summary()
    ))
}

#[derive(Clone, Debug)]
pub struct TrainArgs {
    pub dataset: PathBuf,
    /// Train on a subset of the cameras, predicting only the bins they see.
    pub cameras: Option<Vec<usize>>,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub patience: usize,
}

impl TrainArgs {
    pub fn new(dataset: impl Into<PathBuf>) -> Self {
        let d = TrainConfig::default();
        Self {
            dataset: dataset.into(),
            cameras: None,
            max_epochs: d.max_epochs,
            batch_size: d.batch_size,
            lr: d.lr,
            patience: d.patience,
        }
    }

    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            lr: self.lr,
            patience: self.patience,
            max_epochs: self.max_epochs,
            seed,
            ..TrainConfig::default()
        }
    }

    fn record(&self, m: &mut RunManifest) {
        let cams = self.cameras.as_ref().map_or_else(
            || "all".to_string(),
            |c| c.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
        );
        m.arg("cameras", cams)
            .arg("max_epochs", self.max_epochs)
            .arg("batch_size", self.batch_size)
            .arg("lr", self.lr)
            .arg("patience", self.patience);
        m.inputs.push(self.dataset.display().to_string());
    }
}

fn load_dataset(ctx: &Context, path: &Path) -> Result<Dataset> {
    let data = Dataset::load(path)?;
    let cfg = &ctx.study.sensor;
    if data.image_size != cfg.image_size || data.bin_nx != cfg.bin_nx || data.bin_ny != cfg.bin_ny {
        return Err(Error::Validation(format!(
            "dataset ({} px, {}x{} bins) does not match the config ({} px, {}x{} bins)",
            data.image_size, data.bin_nx, data.bin_ny, cfg.image_size, cfg.bin_nx, cfg.bin_ny
        )));
    }
    if data.config_hash != ctx.study.hash() {
        eprintln!(
            "warning: {} was generated from a different config ({:016x}, now {:016x})",
            path.display(),
            data.config_hash,
            ctx.study.hash()
        );
    }
    Ok(data)
}

fn write_metrics_csv(dir: &Path, name: &str, rows: &[(&str, Option<Metrics>)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(dir, name)?);
    w.write_record(["split", "dist_x", "dist_y", "dist_z", "total_x", "total_y", "total_z"])?;
    for (split, m) in rows {
        if let Some(m) = m {
            let mut rec = vec![split.to_string()];
            rec.extend(m.dist.iter().chain(&m.total).map(|v| format!("{v:.5e}")));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Trains a model from scratch into `model.tnm`.
pub fn cmd_train(ctx: &Context, args: &TrainArgs) -> Result<String> {
    let mut data = load_dataset(ctx, &args.dataset)?;
    if data.camera_count != ctx.study.sensor.camera_count() {
        return Err(Error::Validation(format!(
            "dataset has {} cameras, config has {}",
            data.camera_count,
            ctx.study.sensor.camera_count()
        )));
    }
    if let Some(cams) = &args.cameras {
        let sub = ctx.study.sensor.with_cameras(cams)?;
        data = data.with_cameras(cams)?.with_label_bins(&covered_bins(&sub))?;
    }
    let arch = Architecture::new(data.camera_count, data.image_size, data.label_bins.clone());
    let mut model = new_model(arch, ctx.seed())?;
    let report = train(&mut model, &data, &args.train_config(ctx.seed()))?;
    eprintln!(
        "trained {} epochs (best {:?}) on {} samples in {:.1} s",
        report.epochs_run(),
        report.best_epoch,
        report.train_samples,
        report.wall_time.as_secs_f64()
    );

    let dir = ctx.out_dir()?;
    save_model(&model, dir.join("model.tnm"))?;
    report.write_csv(create(dir, "train.csv")?)?;
    write_metrics_csv(
        dir,
        "metrics.csv",
        &[("train", report.train), ("val", report.val), ("test", report.test)],
    )?;
    let mut m = ctx.manifest("train");
    args.record(&mut m);
    finish(ctx, m, &["model.tnm", "train.csv", "metrics.csv"])?;
    Ok(report.summary())
}

#[derive(Clone, Debug)]
pub struct RecalibrateArgs {
    pub model: PathBuf,
    pub train: TrainArgs,
    pub fractions: Vec<f64>,
    pub seeds: Vec<u64>,
}

fn model_name(fraction: f64, seed: u64) -> String {
    format!("model_f{fraction}_s{seed}.tnm")
}

/// Grows a trained model onto the configured cameras once per
/// `(fraction, seed)` and writes the error-versus-fraction tables.
pub fn cmd_recalibrate(ctx: &Context, args: &RecalibrateArgs) -> Result<String> {
    if args.fractions.is_empty() || args.seeds.is_empty() {
        return Err(Error::Validation("need at least one fraction and one seed".into()));
    }
    let old = load_model(&args.model)?;
    let data = load_dataset(ctx, &args.train.dataset)?;
    if data.camera_count < old.arch().camera_count {
        return Err(Error::Validation(format!(
            "model has {} cameras, dataset only {}",
            old.arch().camera_count,
            data.camera_count
        )));
    }
    let dir = ctx.out_dir()?;
    let mut rows = Vec::new();
    let mut names = Vec::new();
    let mut all_identical = true;
    for &fraction in &args.fractions {
        for &seed in &args.seeds {
            let cfg = args.train.train_config(seed);
            let (model, report) = recalibrate(&old, &data, fraction, &cfg)?;
            let identical = frozen_layers_identical(&old, &model);
            all_identical &= identical;
            let test = report
                .test
                .ok_or_else(|| Error::Validation("dataset has no test samples".into()))?;
            eprintln!(
                "fraction {fraction} seed {seed}: {} epochs, {:.1} s, frozen layers identical: {identical} | {}",
                report.epochs_run(),
                report.wall_time.as_secs_f64(),
                test.summary()
            );
            let name = model_name(fraction, seed);
            save_model(&model, dir.join(&name))?;
            names.push(name);
            rows.push(SweepRow {
                fraction,
                seed,
                test,
                epochs: report.epochs_run(),
                wall_time: report.wall_time,
            });
        }
    }
    write_sweep_csv(&rows, create(dir, "recalibration.csv")?)?;
    write_trend_csv(&rows, create(dir, "trend.csv")?)?;

    let mut m = ctx.manifest("recalibrate");
    let list = |v: Vec<String>| v.join(",");
    m.arg("fractions", list(args.fractions.iter().map(f64::to_string).collect()))
        .arg("seeds", list(args.seeds.iter().map(u64::to_string).collect()));
    m.inputs.push(args.model.display().to_string());
    args.train.record(&mut m);
    let mut outputs: Vec<&str> = names.iter().map(String::as_str).collect();
    outputs.extend(["recalibration.csv", "trend.csv"]);
    finish(ctx, m, &outputs)?;
    if !all_identical {
        return Err(Error::Validation("frozen layers changed during recalibration".into()));
    }
    Ok(format!("rows {} | frozen_layers_identical true", rows.len()))
}

#[derive(Clone, Debug)]
pub enum PredictTarget {
    /// A single simulated indentation: centre x, y and depth in mm.
    Indentation([f64; 3]),
    Sample { dataset: PathBuf, id: u64 },
}

pub struct Prediction {
    pub predicted: ForceDistribution,
    pub truth: ForceDistribution,
    /// Per-sample errors, as `metrics` would report them for this sample.
    pub metrics: Metrics,
}

fn check_model(ctx: &Context, model: &NetworkModel) -> Result<()> {
    let cfg = &ctx.study.sensor;
    let a = model.arch();
    if a.camera_count != cfg.camera_count() || a.image_size != cfg.image_size {
        return Err(Error::Validation(format!(
            "model expects {} cameras at {} px, config has {} at {} px",
            a.camera_count,
            a.image_size,
            cfg.camera_count(),
            cfg.image_size
        )));
    }
    if a.output_bins.iter().any(|&b| b as usize >= cfg.bin_count()) {
        return Err(Error::Validation("model predicts bins outside the configured grid".into()));
    }
    Ok(())
}

pub fn predict(ctx: &Context, model: &NetworkModel, target: &PredictTarget) -> Result<Prediction> {
    let cfg = &ctx.study.sensor;
    let bins = &model.arch().output_bins;
    match target {
        PredictTarget::Indentation([x, y, depth]) => {
            check_model(ctx, model)?;
            let ind = Indentation::new([*x, *y], *depth, cfg)?;
            let frames = ctx.simulator()?.capture_indentation(Some(&ind), 0)?;
            let input: Vec<f32> = frames.frames.iter().flat_map(|f| f.data.iter().copied()).collect();
            let pred = predict_frames(model, &input)?;
            let full = bin_forces(&ind, cfg)?;
            let label: Vec<f32> = bins
                .iter()
                .flat_map(|&b| full.forces[b as usize].map(|v| v as f32))
                .collect();
            let mut one = Dataset {
                camera_count: 1,
                image_size: 1,
                bin_nx: cfg.bin_nx,
                bin_ny: cfg.bin_ny,
                seed: 0,
                config_hash: 0,
                label_bins: bins.clone(),
                samples: Vec::new(),
            };
            one.samples.push(tactile_core::dataset::Sample {
                id: 0,
                split: Split::Test,
                indentation: [*x as f32, *y as f32, *depth as f32],
                truncated: full.truncated,
                frames: Vec::new(),
                label,
            });
            let metrics = metrics_from(&[pred.clone()], &one, &[0]).expect("one sample");
            Ok(Prediction {
                predicted: scatter(&pred, bins, cfg.bin_nx, cfg.bin_ny),
                truth: full,
                metrics,
            })
        }
        PredictTarget::Sample { dataset, id } => {
            let data = load_dataset(ctx, dataset)?;
            let mut data = if data.camera_count == model.arch().camera_count {
                data
            } else {
                data.with_cameras(&(0..model.arch().camera_count).collect::<Vec<_>>())?
            };
            if data.label_bins != *bins {
                data = data.with_label_bins(bins)?;
            }
            let index = data
                .samples
                .iter()
                .position(|s| s.id == *id)
                .ok_or_else(|| Error::Validation(format!("no sample with id {id}")))?;
            let pred = predict_samples(model, &data, &[index])?;
            let metrics = metrics_from(&pred, &data, &[index]).expect("one sample");
            Ok(Prediction {
                predicted: scatter(&pred[0], bins, cfg.bin_nx, cfg.bin_ny),
                truth: data.label_distribution(index),
                metrics,
            })
        }
    }
}

const AXES: [&str; 3] = ["fx", "fy", "fz"];

/// Writes a component grid as an offset-encoded heatmap scaled by `scale`.
fn write_heatmap(path: &Path, grid: &ForceDistribution, axis: usize, scale: f64) -> Result<()> {
    let data: Vec<f32> = grid
        .forces
        .iter()
        .map(|f| if scale > 0.0 { (f[axis] / scale) as f32 } else { 0.0 })
        .collect();
    write_pgm(path, grid.nx, grid.ny, &data, 8, true)
}

/// Predicted and true force grids per axis as CSV and PGM.
pub fn cmd_predict(ctx: &Context, model_path: &Path, target: &PredictTarget) -> Result<String> {
    let model = load_model(model_path)?;
    let p = predict(ctx, &model, target)?;
    let dir = ctx.out_dir()?;
    let mut outputs = Vec::new();
    for (axis, name) in AXES.iter().enumerate() {
        let scale = p
            .predicted
            .forces
            .iter()
            .chain(&p.truth.forces)
            .map(|f| f[axis].abs())
            .fold(0.0, f64::max);
        for (kind, grid) in [("pred", &p.predicted), ("truth", &p.truth)] {
            let csv_name = format!("{kind}_{name}.csv");
            grid.write_csv_grid(axis, create(dir, &csv_name)?)?;
            let pgm_name = format!("{kind}_{name}.pgm");
            write_heatmap(&dir.join(&pgm_name), grid, axis, scale)?;
            outputs.extend([csv_name, pgm_name]);
        }
    }
    let mut m = ctx.manifest("predict");
    m.inputs.push(model_path.display().to_string());
    match target {
        PredictTarget::Indentation([x, y, d]) => {
            m.arg("at", format!("{x},{y},{d}"));
        }
        PredictTarget::Sample { dataset, id } => {
            m.arg("sample", id);
            m.inputs.push(dataset.display().to_string());
        }
    }
    finish(ctx, m, &outputs.iter().map(String::as_str).collect::<Vec<_>>())?;

    let (peak, _) = p
        .predicted
        .forces
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, f)| if f[2] > best.1 { (i, f[2]) } else { best });
    let (pi, pj) = bin_cell(peak, &ctx.study.sensor);
    let t = p.predicted.totals();
    Ok(format!(
        "peak_fz_bin {peak} cell {pi} {pj} | total {:.5e} {:.5e} {:.5e} | {}",
        t[0],
        t[1],
        t[2],
        p.metrics.summary()
    ))
}

/// Stack thickness of one or all variants.
pub fn cmd_dimension(ctx: &Context, variant: Option<Variant>) -> Result<String> {
    let variants: Vec<Variant> = variant.map_or_else(|| Variant::ALL.to_vec(), |v| vec![v]);
    let spec = &ctx.study.dimensioning;
    let values = variants
        .iter()
        .map(|&v| Ok((v, total_thickness(spec, v)?)))
        .collect::<Result<Vec<_>>>()?;
    let dir = ctx.out_dir()?;
    let mut w = csv::Writer::from_writer(create(dir, "thickness.csv")?);
    w.write_record(["variant", "thickness_mm"])?;
    for (v, t) in &values {
        w.write_record([v.as_str().to_string(), format!("{t:.4}")])?;
    }
    w.flush()?;
    drop(w);
    let mut m = ctx.manifest("dimension");
    m.arg("variant", variant.map_or("all", Variant::as_str));
    finish(ctx, m, &["thickness.csv"])?;
    Ok(values
        .iter()
        .map(|(v, t)| format!("{} {t:.2}", v.as_str()))
        .collect::<Vec<_>>()
        .join(" | "))
}

/// Field-of-view polygons on the particle plane and the uncovered fraction.
pub fn cmd_coverage(ctx: &Context) -> Result<String> {
    ctx.study.sensor.validate()?;
    let report = coverage_report(&ctx.study.sensor);
    let dir = ctx.out_dir()?;
    report.write_polygons_csv(create(dir, "coverage.csv")?)?;
    finish(ctx, ctx.manifest("coverage"), &["coverage.csv"])?;
    Ok(report.summary())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numerical_errors_map_to_three() {
        assert_eq!(exit_code(&Error::Numerical("nan".into())), 3);
        assert_eq!(exit_code(&Error::Validation("bad".into())), 2);
        assert_eq!(exit_code(&Error::Domain("off".into())), 2);
    }

    #[test]
    fn seed_flag_overrides_config() {
        let ctx = Context::new(None, Some(42), "unused").unwrap();
        assert_eq!(ctx.seed(), 42);
        let plain = Context::new(None, None, "unused").unwrap();
        assert_eq!(plain.seed(), StudyConfig::desk_scale().sensor.rng_seed);
        assert_ne!(ctx.study.hash(), plain.study.hash());
    }

    #[test]
    fn model_names_are_distinct() {
        assert_ne!(model_name(0.1, 1), model_name(1.0, 1));
        assert_eq!(model_name(0.25, 3), "model_f0.25_s3.tnm");
    }
}
