//! Command implementations behind the `radfield` binary. Each command is a
//! plain function so it can be driven from tests and examples too.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::dataset::{manifest_path, synthesize_to, SceneDataset, SynthSpec};
use crate::error::{Error, Result};
use crate::field::{FieldConfig, RadianceField};
use crate::metrics::{evaluate, EvalConfig, MetricReport};
use crate::oracle::{NoiseSpec, OrbitSpec};
use crate::params::ParamStore;
use crate::render::{render_image, RenderConfig};
use crate::se3::{apply_correction, CameraIntrinsics, Pose};
use crate::train::{fit_test_embedding, CorrectionGroups, StepRecord, Trainer};

pub const CHECKPOINT: &str = "checkpoint.bin";
pub const METRICS_LOG: &str = "metrics.jsonl";
pub const CORRECTIONS: &str = "corrections.json";
pub const CONFIG_COPY: &str = "config.toml";
pub const REPORT: &str = "report.json";

/// Every key of the experiment config file, with its meaning.
pub const CONFIG_REFERENCE: &str = "\
Config file keys (TOML; unknown keys are errors; every key is optional):
  dataset                         dataset directory
  output                          run directory (checkpoint, logs, reports)
  fit_bbox_to_dataset             use the dataset's aabb as the field box
  [train]
  steps, rays_per_batch           optimization length and batch size
  base_lr, final_lr               cosine learning-rate schedule endpoints
  beta_dq, beta_dt                lr factors of rotation/translation corrections (<= 0.01)
  enable_appearance               learn per-image appearance embeddings
  enable_pose_correction          learn per-image pose corrections
  mask_loss_weight                weight of the opacity-vs-mask term
  seed                            seed of initialization and batch sampling
  max_correction_norm             bound on |dq_vec| (< 1)
  correction_weight_decay         decoupled weight decay on corrections
  correction_max_grad_norm        optional per-group gradient clip on corrections
  mask_dilation                   foreground dilation (px) of the pixel pool
  background_fraction             share of remaining background pixels in the pool
  workers                         gradient lanes per step (0 = all cores)
  log_every                       metrics-log interval in steps
  [field]
  resolution, channels            tri-plane size R and channels C
  fusion                          \"concat\" or \"product\" plane fusion
  sh_degree                       spherical-harmonic bands of the view direction
  density_hidden, color_hidden    hidden layer widths
  density_features                density feature width fed to the color net
  embedding_dim                   appearance embedding width
  bbox_min, bbox_max              field box (overridden by fit_bbox_to_dataset)
  [render]
  near, far, samples_per_ray      ray interval and samples
  background                      rgb behind the target
  stratified_jitter               jitter sample depths during training
  [eval]
  split                           \"test\" or \"train\"
  [eval.fit]
  iters, lr, selector, weight_floor   held-out embedding fit (selector \"even\"/\"odd\")
  [synth]
  views, width, height, fov_deg   orbit sampling and camera
  light_variants                  number of lighting conditions (1-4)
  light_shuffle_seed              optional random light assignment
  holdout_every                   every n-th view is held out (0 = none)
  aabb_margin                     margin added to the target bounds
  [synth.orbit]
  radius, elevation_amplitude_deg, waves
  [synth.noise]
  sigma_rot_deg, sigma_trans, seed   label noise
";

/// Writes an oracle dataset to `out`.
pub fn cmd_synth(spec: &SynthSpec, out: &Path) -> Result<SceneDataset> {
    synthesize_to(spec, out)
}

/// Learned correction of one training image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionRow {
    /// Dataset frame index.
    pub frame: usize,
    pub angle_deg: f64,
    pub translation_m: f64,
    pub dq_vec: [f64; 3],
    pub dt: [f64; 3],
}

pub struct TrainOutcome {
    pub final_loss: f64,
    pub records: Vec<StepRecord>,
    pub checkpoint: PathBuf,
    pub corrections: Vec<CorrectionRow>,
    pub train_frames: Vec<usize>,
    pub refined: Vec<Pose>,
    pub seconds: f64,
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(v)? + "\n").map_err(|e| Error::io(path, e))
}

/// Trains on `cfg.dataset` and writes checkpoint, config copy, metrics log
/// and correction table into `cfg.output`. Progress lines go to `progress`.
pub fn cmd_train(cfg: &ExperimentConfig, mut progress: Option<&mut dyn Write>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let dataset = SceneDataset::load(&cfg.dataset)?;
    let field_cfg = cfg.field_for(&dataset);
    let mut trainer = Trainer::new(&dataset, &field_cfg, &cfg.render, &cfg.train)?;
    create_dir(&cfg.output)?;
    cfg.save(&cfg.output.join(CONFIG_COPY))?;
    let log_path = cfg.output.join(METRICS_LOG);
    let mut log = std::io::BufWriter::new(fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?);
    let t0 = Instant::now();
    let mut records = Vec::new();
    let mut final_loss = f64::NAN;
    while trainer.step() < cfg.train.steps {
        let rec = trainer.train_step_detailed()?;
        final_loss = rec.loss;
        let last = trainer.step() == cfg.train.steps;
        if cfg.train.log_every > 0 && (rec.step % cfg.train.log_every == 0 || last) {
            serde_json::to_writer(&mut log, &rec)?;
            writeln!(log).map_err(|e| Error::io(&log_path, e))?;
            if let Some(w) = progress.as_deref_mut() {
                let _ = writeln!(
                    w,
                    "step {:6}  loss {:.5}  lr {:.2e}  corr {:.3} deg {:.4} m  {:.0}s",
                    rec.step,
                    rec.loss,
                    rec.lr,
                    rec.mean_correction_deg,
                    rec.mean_correction_m,
                    t0.elapsed().as_secs_f64()
                );
            }
            records.push(rec);
        }
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    let checkpoint = cfg.output.join(CHECKPOINT);
    trainer.save_checkpoint(&checkpoint, serde_json::json!({ "config": cfg, "field": field_cfg }))?;
    let corrections = (0..trainer.num_images())
        .map(|a| -> Result<CorrectionRow> {
            let c = trainer.correction(a);
            Ok(CorrectionRow {
                frame: trainer.train_frames[a],
                angle_deg: c.rotation()?.angle().to_degrees(),
                translation_m: c.dt.norm(),
                dq_vec: c.dq_vec.to_array(),
                dt: c.dt.to_array(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_json(&cfg.output.join(CORRECTIONS), &corrections)?;
    Ok(TrainOutcome {
        final_loss,
        records,
        checkpoint,
        corrections,
        refined: trainer.refined_poses()?,
        train_frames: trainer.train_frames.clone(),
        seconds: t0.elapsed().as_secs_f64(),
    })
}

/// A trained model restored from a checkpoint.
pub struct LoadedRun {
    pub config: ExperimentConfig,
    pub field: RadianceField,
    pub store: ParamStore,
    pub train_frames: Vec<usize>,
    pub intrinsics: CameraIntrinsics,
}

pub fn load_run(checkpoint: &Path) -> Result<LoadedRun> {
    let (store, meta) = ParamStore::load_checkpoint(checkpoint)?;
    let bad = |m: &str| Error::Checkpoint(format!("{}: {m}", checkpoint.display()));
    let config: ExperimentConfig =
        serde_json::from_value(meta["experiment"]["config"].clone()).map_err(|_| bad("missing experiment config"))?;
    let field_cfg: FieldConfig =
        serde_json::from_value(meta["experiment"]["field"].clone()).map_err(|_| bad("missing field config"))?;
    let train_frames: Vec<usize> =
        serde_json::from_value(meta["train_frames"].clone()).map_err(|_| bad("missing train_frames"))?;
    let intrinsics: CameraIntrinsics =
        serde_json::from_value(meta["intrinsics"].clone()).map_err(|_| bad("missing intrinsics"))?;
    let field = RadianceField::from_store(&field_cfg, &store)?;
    Ok(LoadedRun { config, field, store, train_frames, intrinsics })
}

/// Training labels of `frames` composed with the corrections stored in
/// `store` (the labels themselves when the run had no corrections).
pub fn refined_labels(store: &ParamStore, dataset: &SceneDataset, frames: &[usize]) -> Result<Vec<Pose>> {
    let groups = CorrectionGroups::find(store);
    frames
        .iter()
        .enumerate()
        .map(|(a, &k)| {
            let label = dataset
                .frames
                .get(k)
                .ok_or_else(|| Error::Dataset(format!("checkpoint refers to missing frame {k}")))?
                .pose;
            match groups {
                Some(g) => apply_correction(&g.get(store, a), &label),
                None => Ok(label),
            }
        })
        .collect()
}

/// Scores `run` on `dataset` with the held-out protocol; writes the report
/// (and panels) under `out` when given.
pub fn cmd_eval(
    run: &LoadedRun,
    dataset: &SceneDataset,
    eval: &EvalConfig,
    out: Option<&Path>,
    panels: bool,
) -> Result<MetricReport> {
    if run.intrinsics != dataset.intrinsics {
        return Err(Error::Intrinsics(format!(
            "checkpoint was trained with {:?} but the dataset has {:?}",
            run.intrinsics, dataset.intrinsics
        )));
    }
    let refined = refined_labels(&run.store, dataset, &run.train_frames)?;
    let panel_dir = out.filter(|_| panels).map(|o| o.join("panels"));
    let report = evaluate(
        &run.field,
        &run.store,
        dataset,
        &run.config.render,
        eval,
        Some((&run.train_frames, &refined)),
        panel_dir.as_deref(),
    )?;
    if let Some(o) = out {
        create_dir(o)?;
        write_json(&o.join(REPORT), &report)?;
    }
    Ok(report)
}

/// Which appearance embedding conditions a novel-view render.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EmbeddingSource {
    #[default]
    Zero,
    /// Learned embedding of training image `k` (index into the train split).
    Image(usize),
    /// Embedding fitted to half of dataset frame `k`.
    Fitted(usize),
}

impl FromStr for EmbeddingSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("embedding source {s:?}: expected zero, image:<k> or fitted:<frame>"));
        if s == "zero" {
            return Ok(EmbeddingSource::Zero);
        }
        let (kind, k) = s.split_once(':').ok_or_else(bad)?;
        let k: usize = k.parse().map_err(|_| bad())?;
        match kind {
            "image" => Ok(EmbeddingSource::Image(k)),
            "fitted" => Ok(EmbeddingSource::Fitted(k)),
            _ => Err(bad()),
        }
    }
}

/// Novel-view trajectory to render.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderSpec {
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub fov_deg: f64,
    pub orbit: OrbitSpec,
    pub source: EmbeddingSource,
}

impl RenderSpec {
    /// Orbit and camera of the run's synthesis settings.
    pub fn from_config(cfg: &ExperimentConfig, frames: usize) -> Self {
        RenderSpec {
            frames,
            width: cfg.synth.width,
            height: cfg.synth.height,
            fov_deg: cfg.synth.fov_deg,
            orbit: cfg.synth.orbit,
            source: EmbeddingSource::Zero,
        }
    }
}

/// Resolves the embedding for `source`; `None` for fields without one.
pub fn resolve_embedding(
    run: &LoadedRun,
    dataset: Option<&SceneDataset>,
    source: EmbeddingSource,
) -> Result<Option<Vec<f64>>> {
    if run.field.appearance().is_none() {
        return match source {
            EmbeddingSource::Zero => Ok(None),
            _ => Err(Error::Config("checkpoint has no appearance embeddings".into())),
        };
    }
    match source {
        EmbeddingSource::Zero => Ok(Some(vec![0.0; run.field.embedding_dim()])),
        EmbeddingSource::Image(k) => {
            run.field.embedding(&run.store, k).map(Some).ok_or_else(|| {
                Error::Config(format!("image {k} out of range ({} training images)", run.train_frames.len()))
            })
        }
        EmbeddingSource::Fitted(k) => {
            let ds = dataset.ok_or_else(|| Error::Config("a fitted embedding needs --dataset".into()))?;
            let f = ds.frames.get(k).ok_or_else(|| Error::Config(format!("frame {k} out of range")))?;
            let pose = f.true_pose.unwrap_or(f.pose);
            fit_test_embedding(&run.field, &run.store, &pose, &ds.intrinsics, &f.image, &run.config.render, &run.config.eval.fit)
        }
    }
}

/// Renders the trajectory of `spec` to `out/frame_NNNN.png`.
pub fn cmd_render(run: &LoadedRun, dataset: Option<&SceneDataset>, spec: &RenderSpec, out: &Path) -> Result<Vec<PathBuf>> {
    if spec.frames == 0 {
        return Err(Error::Config("render needs at least one frame".into()));
    }
    let intr = CameraIntrinsics::from_fov(spec.width, spec.height, spec.fov_deg)?;
    let embedding = resolve_embedding(run, dataset, spec.source)?;
    let cfg = RenderConfig { stratified_jitter: false, ..run.config.render.clone() };
    create_dir(out)?;
    let mut written = Vec::new();
    for (k, pose) in spec.orbit.poses(spec.frames).iter().enumerate() {
        let (img, _) = render_image(&run.field, &run.store, pose, &intr, &cfg, embedding.as_deref())?;
        let path = out.join(format!("frame_{k:04}.png"));
        img.save_png(&path)?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseAxis {
    /// Levels in degrees.
    Rotation,
    /// Levels in percent of the scene diameter.
    Translation,
}

impl FromStr for NoiseAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rotation" | "rot" => Ok(NoiseAxis::Rotation),
            "translation" | "trans" => Ok(NoiseAxis::Translation),
            _ => Err(Error::Config(format!("noise axis {s:?}: expected rotation or translation"))),
        }
    }
}

impl NoiseAxis {
    pub fn name(self) -> &'static str {
        match self {
            NoiseAxis::Rotation => "rotation",
            NoiseAxis::Translation => "translation",
        }
    }

    fn unit(self) -> &'static str {
        match self {
            NoiseAxis::Rotation => "deg",
            NoiseAxis::Translation => "% of scene diameter",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationSpec {
    pub axis: NoiseAxis,
    pub levels: Vec<f64>,
}

impl AblationSpec {
    /// Short grid `{0, 0.5, 1}`.
    pub fn reduced(axis: NoiseAxis) -> Self {
        AblationSpec { axis, levels: vec![0.0, 0.5, 1.0] }
    }

    /// `{0, 0.2, 0.4, 0.8, 1.6}` deg, or `{0, 0.25, 0.5, 1, 2}` % of the
    /// scene diameter (2 mm to 16 mm on a 0.8 m target).
    pub fn full(axis: NoiseAxis) -> Self {
        let levels = match axis {
            NoiseAxis::Rotation => vec![0.0, 0.2, 0.4, 0.8, 1.6],
            NoiseAxis::Translation => vec![0.0, 0.25, 0.5, 1.0, 2.0],
        };
        AblationSpec { axis, levels }
    }

    /// Noise of one grid level for the scene of `synth`.
    pub fn noise(&self, synth: &SynthSpec, level: f64) -> NoiseSpec {
        let mut n = NoiseSpec { seed: synth.noise.seed, ..NoiseSpec::default() };
        match self.axis {
            NoiseAxis::Rotation => n.sigma_rot_deg = level,
            NoiseAxis::Translation => n.sigma_trans = level / 100.0 * synth.scene().diameter(),
        }
        n
    }
}

/// Outcome of one (noise level, correction on/off) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationPoint {
    pub axis: NoiseAxis,
    pub level: f64,
    pub pose_correction: bool,
    pub sigma_rot_deg: f64,
    pub sigma_trans_m: f64,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_jnb: Option<f64>,
    /// Mean error of the noisy training labels.
    pub label_rot_deg: f64,
    pub label_trans_m: f64,
    /// Mean error after applying the learned corrections.
    pub refined_rot_deg: f64,
    pub refined_trans_m: f64,
    pub final_loss: f64,
    pub train_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub points: Vec<AblationPoint>,
}

impl AblationReport {
    pub fn get(&self, level: f64, pose_correction: bool) -> Option<&AblationPoint> {
        self.points.iter().find(|p| p.level == level && p.pose_correction == pose_correction)
    }
}

fn reborrow<'a>(p: &'a mut Option<&mut dyn Write>) -> Option<&'a mut dyn Write> {
    match p {
        Some(w) => Some(&mut **w),
        None => None,
    }
}

fn point_key(axis: NoiseAxis, level: f64, correction: bool) -> String {
    format!("{}_{}_{}", axis.name(), level, if correction { "with" } else { "without" })
}

/// Trains and evaluates every grid level with and without pose correction.
/// Finished points are stored under `out/points` and skipped on re-runs.
/// Writes a CSV table and SVG plots of SSIM, JNB and pose error.
pub fn cmd_ablate(
    base: &ExperimentConfig,
    spec: &AblationSpec,
    out: &Path,
    mut progress: Option<&mut dyn Write>,
) -> Result<AblationReport> {
    base.validate()?;
    if spec.levels.is_empty() || spec.levels.iter().any(|l| !(*l >= 0.0)) {
        return Err(Error::Config("ablation levels must be nonnegative and not empty".into()));
    }
    let points_dir = out.join("points");
    create_dir(&points_dir)?;
    let mut points = Vec::new();
    for &level in &spec.levels {
        let noise = spec.noise(&base.synth, level);
        let data_dir = out.join("data").join(format!("{}_{}", spec.axis.name(), level));
        for correction in [false, true] {
            let key = point_key(spec.axis, level, correction);
            let point_path = points_dir.join(format!("{key}.json"));
            if point_path.exists() {
                let text = fs::read_to_string(&point_path).map_err(|e| Error::io(&point_path, e))?;
                points.push(serde_json::from_str(&text)?);
                if let Some(w) = reborrow(&mut progress) {
                    let _ = writeln!(w, "{key}: done, skipped");
                }
                continue;
            }
            let mut synth = base.synth.clone();
            synth.noise = noise;
            if !manifest_path(&data_dir).exists() {
                synthesize_to(&synth, &data_dir)?;
            }
            let mut cfg = base.clone();
            cfg.synth = synth;
            cfg.dataset = data_dir.clone();
            cfg.output = out.join("runs").join(&key);
            cfg.train.enable_pose_correction = correction;
            if let Some(w) = reborrow(&mut progress) {
                let _ = writeln!(w, "{key}: training");
            }
            let trained = cmd_train(&cfg, reborrow(&mut progress))?;
            let run = load_run(&trained.checkpoint)?;
            let dataset = SceneDataset::load(&cfg.dataset)?;
            let report = cmd_eval(&run, &dataset, &cfg.eval, Some(&cfg.output), true)?;
            let (label, refined) = match (&report.label_pose_error, &report.refined_pose_error) {
                (Some(l), Some(r)) => (l, r),
                _ => return Err(Error::Dataset("ablation datasets must carry true poses".into())),
            };
            let p = AblationPoint {
                axis: spec.axis,
                level,
                pose_correction: correction,
                sigma_rot_deg: noise.sigma_rot_deg,
                sigma_trans_m: noise.sigma_trans,
                mean_psnr: report.mean_psnr,
                mean_ssim: report.mean_ssim,
                mean_jnb: report.mean_jnb,
                label_rot_deg: label.mean_deg,
                label_trans_m: label.mean_m,
                refined_rot_deg: refined.mean_deg,
                refined_trans_m: refined.mean_m,
                final_loss: trained.final_loss,
                train_seconds: trained.seconds,
            };
            if let Some(w) = reborrow(&mut progress) {
                let _ = writeln!(
                    w,
                    "{key}: PSNR {:.2} SSIM {:.4} JNB {:?} pose {:.3}->{:.3} deg {:.4}->{:.4} m",
                    p.mean_psnr,
                    p.mean_ssim,
                    p.mean_jnb,
                    p.label_rot_deg,
                    p.refined_rot_deg,
                    p.label_trans_m,
                    p.refined_trans_m
                );
            }
            write_json(&point_path, &p)?;
            points.push(p);
        }
    }
    let report = AblationReport { points };
    write_ablation_outputs(&report, spec.axis, out)?;
    Ok(report)
}

fn write_ablation_outputs(report: &AblationReport, axis: NoiseAxis, out: &Path) -> Result<()> {
    let name = axis.name();
    let csv_path = out.join(format!("ablation_{name}.csv"));
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| Error::Dataset(format!("{}: {e}", csv_path.display())))?;
    for p in &report.points {
        w.serialize(p).map_err(|e| Error::Dataset(format!("{}: {e}", csv_path.display())))?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    write_json(&out.join(format!("ablation_{name}.json")), report)?;

    let series = |correction: bool, f: &dyn Fn(&AblationPoint) -> Option<f64>| -> Vec<(f64, f64)> {
        let mut v: Vec<(f64, f64)> = report
            .points
            .iter()
            .filter(|p| p.pose_correction == correction)
            .filter_map(|p| f(p).map(|y| (p.level, y)))
            .collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v
    };
    let pose = |p: &AblationPoint| {
        Some(match axis {
            NoiseAxis::Rotation => p.refined_rot_deg,
            NoiseAxis::Translation => 100.0 * p.refined_trans_m,
        })
    };
    let pose_label = match axis {
        NoiseAxis::Rotation => "label error (deg)",
        NoiseAxis::Translation => "label error (cm)",
    };
    let plots: [(&str, &str, &dyn Fn(&AblationPoint) -> Option<f64>); 4] = [
        ("ssim", "mean SSIM", &|p| Some(p.mean_ssim)),
        ("jnb", "mean JNB", &|p| p.mean_jnb),
        ("psnr", "mean PSNR (dB)", &|p| Some(p.mean_psnr)),
        ("pose", pose_label, &pose),
    ];
    for (tag, ylabel, f) in plots {
        let with = series(true, f);
        let without = series(false, f);
        let path = out.join(format!("ablation_{name}_{tag}.svg"));
        line_plot(&path, &format!("noise ({})", axis.unit()), ylabel, &[("with correction", &with), ("without", &without)])?;
    }
    Ok(())
}

fn line_plot(path: &Path, xlabel: &str, ylabel: &str, curves: &[(&str, &[(f64, f64)])]) -> Result<()> {
    let pts: Vec<(f64, f64)> = curves.iter().flat_map(|(_, c)| c.iter().copied()).collect();
    if pts.is_empty() {
        return Ok(());
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in &pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let pad = ((y1 - y0) * 0.1).max(1e-6);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let x1 = if x1 > x0 { x1 } else { x0 + 1.0 };
    let err = |e: String| Error::Dataset(format!("{}: {e}", path.display()));
    let root = SVGBackend::new(path, (560, 360)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| err(e.to_string()))?;
    let mut chart = ChartBuilder::on(&root)
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(56)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(|e| err(e.to_string()))?;
    chart.configure_mesh().x_desc(xlabel).y_desc(ylabel).draw().map_err(|e| err(e.to_string()))?;
    let colors = [RED, BLUE, GREEN, BLACK];
    for (k, (label, c)) in curves.iter().enumerate() {
        let color = colors[k % colors.len()];
        chart
            .draw_series(LineSeries::new(c.iter().copied(), color.stroke_width(2)))
            .map_err(|e| err(e.to_string()))?
            .label(*label)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
        chart
            .draw_series(c.iter().map(|&p| Circle::new(p, 3, color.filled())))
            .map_err(|e| err(e.to_string()))?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| err(e.to_string()))?;
    root.present().map_err(|e| err(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedding_sources_parse() {
        assert_eq!("zero".parse::<EmbeddingSource>().unwrap(), EmbeddingSource::Zero);
        assert_eq!("image:3".parse::<EmbeddingSource>().unwrap(), EmbeddingSource::Image(3));
        assert_eq!("fitted:12".parse::<EmbeddingSource>().unwrap(), EmbeddingSource::Fitted(12));
        assert!("fitted".parse::<EmbeddingSource>().is_err());
        assert!("image:x".parse::<EmbeddingSource>().is_err());
    }

    #[test]
    fn reference_lists_every_config_key() {
        let mut c = ExperimentConfig::default();
        c.train.correction_max_grad_norm = Some(1.0);
        c.synth.light_shuffle_seed = Some(1);
        let value: toml::Table = toml::from_str(&c.to_toml().unwrap()).unwrap();
        fn walk(t: &toml::Table, out: &mut Vec<String>) {
            for (k, v) in t {
                out.push(k.clone());
                if let toml::Value::Table(inner) = v {
                    walk(inner, out);
                }
            }
        }
        let mut keys = Vec::new();
        walk(&value, &mut keys);
        for k in keys {
            assert!(CONFIG_REFERENCE.contains(&k), "config key {k} is undocumented");
        }
    }

    #[test]
    fn translation_levels_scale_with_the_scene() {
        let synth = SynthSpec::default();
        let n = AblationSpec::full(NoiseAxis::Translation).noise(&synth, 2.0);
        assert!((n.sigma_trans - 0.02 * synth.scene().diameter()).abs() < 1e-12);
        assert_eq!(n.sigma_rot_deg, 0.0);
    }
}
