//! Joint optimization of field weights, appearance embeddings and per-image
//! pose corrections.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{SceneDataset, Split};
use crate::error::{Error, Result};
use crate::field::{FieldConfig, RadianceField};
use crate::image::Image;
use crate::params::{
    AdamConfig, GroupId, GroupKind, GroupSpec, Gradients, ParamStore, DEFAULT_MAX_CORRECTION_NORM,
    MAX_CORRECTION_LR_FACTOR,
};
use crate::render::{layout_samples, render_on_tape, RenderConfig};
use crate::se3::{apply_correction, pixel_rays, CameraIntrinsics, Pose, PoseCorrection, Vec3};
use crate::tape::Tape;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub rays_per_batch: usize,
    /// Learning rate at step 0; decays along a cosine to `final_lr`.
    pub base_lr: f64,
    pub final_lr: f64,
    /// Learning-rate factor of the translation corrections (at most 0.01).
    pub beta_dt: f64,
    /// Learning-rate factor of the rotation corrections (at most 0.01).
    pub beta_dq: f64,
    pub enable_appearance: bool,
    pub enable_pose_correction: bool,
    pub mask_loss_weight: f64,
    pub seed: u64,
    /// Rotation-correction vectors are projected back inside this norm.
    pub max_correction_norm: f64,
    /// Decoupled weight decay on the correction groups.
    pub correction_weight_decay: f64,
    /// Per-group gradient-norm clip on the correction groups.
    pub correction_max_grad_norm: Option<f64>,
    /// Pixels within this distance of the foreground join the batch pool.
    pub mask_dilation: usize,
    /// Fraction of remaining background pixels added to the pool.
    pub background_fraction: f64,
    /// Independent gradient lanes per step; 0 uses the available cores.
    pub workers: usize,
    /// Metrics-log interval in steps (0 disables logging).
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 30_000,
            rays_per_batch: 4096,
            base_lr: 1e-2,
            final_lr: 1e-4,
            beta_dt: 0.01,
            beta_dq: 0.01,
            enable_appearance: true,
            enable_pose_correction: true,
            mask_loss_weight: 0.1,
            seed: 0,
            max_correction_norm: DEFAULT_MAX_CORRECTION_NORM,
            correction_weight_decay: 0.0,
            correction_max_grad_norm: None,
            mask_dilation: 8,
            background_fraction: 0.1,
            workers: 0,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("train: {m}")));
        for (name, beta) in [("beta_dt", self.beta_dt), ("beta_dq", self.beta_dq)] {
            if !(0.0..=MAX_CORRECTION_LR_FACTOR).contains(&beta) {
                return bad(format!("{name} = {beta} must lie in [0, {MAX_CORRECTION_LR_FACTOR}]"));
            }
        }
        if self.steps == 0 || self.rays_per_batch == 0 {
            return bad("steps and rays_per_batch must be positive".into());
        }
        if !(self.base_lr > 0.0 && self.final_lr > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if !(self.max_correction_norm > 0.0 && self.max_correction_norm < 1.0) {
            return bad("max_correction_norm must lie in (0, 1)".into());
        }
        if !(0.0..=1.0).contains(&self.background_fraction) || self.mask_loss_weight < 0.0 {
            return bad("background_fraction in [0, 1] and mask_loss_weight >= 0 required".into());
        }
        Ok(())
    }

    /// Cosine-decayed learning rate at `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        let s = (step as f64 / self.steps as f64).min(1.0);
        self.final_lr + 0.5 * (self.base_lr - self.final_lr) * (1.0 + (std::f64::consts::PI * s).cos())
    }

    pub fn lanes(&self) -> usize {
        if self.workers == 0 {
            rayon::current_num_threads()
        } else {
            self.workers
        }
    }
}

/// Rays sampled for one step, before any pose correction.
#[derive(Debug, Clone, Default)]
pub struct RayBatch {
    /// Training-image index per ray (row of the embedding / correction tables).
    pub image: Vec<u32>,
    pub pixel: Vec<(u32, u32)>,
    /// `n x 3` targets.
    pub target: Vec<f64>,
    pub mask: Vec<f64>,
    /// `n x 6` (origin, direction) from the pose labels.
    pub rays: Vec<f64>,
    /// `n x K` uniforms for stratified sampling, empty when jitter is off.
    pub jitter: Vec<f64>,
}

impl RayBatch {
    pub fn len(&self) -> usize {
        self.image.len()
    }

    pub fn is_empty(&self) -> bool {
        self.image.is_empty()
    }

    /// Rows `[start, end)` as a new batch.
    pub fn slice(&self, start: usize, end: usize) -> RayBatch {
        let k = if self.is_empty() { 0 } else { self.jitter.len() / self.len() };
        RayBatch {
            image: self.image[start..end].to_vec(),
            pixel: self.pixel[start..end].to_vec(),
            target: self.target[3 * start..3 * end].to_vec(),
            mask: self.mask[start..end].to_vec(),
            rays: self.rays[6 * start..6 * end].to_vec(),
            jitter: self.jitter[k * start..k * end].to_vec(),
        }
    }
}

/// Binary dilation of a mask with a square of radius `r` (Chebyshev).
pub fn dilate_mask(mask: &[f64], width: usize, height: usize, r: usize) -> Vec<bool> {
    let fg: Vec<bool> = mask.iter().map(|&m| m > 0.5).collect();
    // Separable max filter: rows, then columns.
    let mut rows = vec![false; fg.len()];
    for j in 0..height {
        for i in 0..width {
            let lo = i.saturating_sub(r);
            let hi = (i + r).min(width - 1);
            rows[j * width + i] = (lo..=hi).any(|x| fg[j * width + x]);
        }
    }
    let mut out = vec![false; fg.len()];
    for j in 0..height {
        for i in 0..width {
            let lo = j.saturating_sub(r);
            let hi = (j + r).min(height - 1);
            out[j * width + i] = (lo..=hi).any(|y| rows[y * width + i]);
        }
    }
    out
}

/// Candidate `(training image, pixel index)` pairs for batches: the dilated
/// foreground of every image plus a seeded fraction of the rest.
pub fn pixel_pool(frames: &[&crate::dataset::Frame], intr: &CameraIntrinsics, cfg: &TrainConfig) -> Vec<(u32, u32)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_9001);
    let mut pool = Vec::new();
    for (a, f) in frames.iter().enumerate() {
        let near = dilate_mask(&f.mask, intr.width, intr.height, cfg.mask_dilation);
        for (p, &inside) in near.iter().enumerate() {
            if inside || rng.random::<f64>() < cfg.background_fraction {
                pool.push((a as u32, p as u32));
            }
        }
    }
    pool
}

#[derive(Debug, Clone, Copy)]
pub struct CorrectionGroups {
    pub dq: GroupId,
    pub dt: GroupId,
}

impl CorrectionGroups {
    pub const DQ: &'static str = "correction.dq_vec";
    pub const DT: &'static str = "correction.dt";

    /// Looks the correction groups up by name, e.g. in a loaded checkpoint.
    pub fn find(store: &ParamStore) -> Option<Self> {
        Some(CorrectionGroups { dq: store.find(Self::DQ)?, dt: store.find(Self::DT)? })
    }

    /// Correction of training image `a`.
    pub fn get(&self, store: &ParamStore, a: usize) -> PoseCorrection {
        let q = &store.value(self.dq)[3 * a..3 * a + 3];
        let t = &store.value(self.dt)[3 * a..3 * a + 3];
        PoseCorrection::new(Vec3::new(q[0], q[1], q[2]), Vec3::new(t[0], t[1], t[2]))
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub grad_norms: Vec<(String, f64)>,
    pub mean_correction_deg: f64,
    pub mean_correction_m: f64,
}

/// Training state over the train split of a dataset.
pub struct Trainer {
    pub config: TrainConfig,
    pub render: RenderConfig,
    pub field: RadianceField,
    pub store: ParamStore,
    pub corrections: Option<CorrectionGroups>,
    pub intrinsics: CameraIntrinsics,
    /// Dataset frame index of each training image.
    pub train_frames: Vec<usize>,
    labels: Vec<Pose>,
    images: Vec<Image>,
    masks: Vec<Vec<f64>>,
    pool: Vec<(u32, u32)>,
    step: usize,
}

impl Trainer {
    pub fn new(dataset: &SceneDataset, field_cfg: &FieldConfig, render: &RenderConfig, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        render.validate()?;
        let train_frames = dataset.indices(Split::Train);
        if train_frames.is_empty() {
            return Err(Error::Dataset("no training frames".into()));
        }
        let n = train_frames.len();
        let mut store = ParamStore::new();
        store.adam = AdamConfig::default();
        let field = RadianceField::init(field_cfg, config.enable_appearance.then_some(n), &mut store, config.seed)?;
        let corrections = if config.enable_pose_correction {
            let spec = |name: &str, kind, lr_factor| GroupSpec {
                name: name.into(),
                shape: vec![n, 3],
                kind,
                lr_factor,
                weight_decay: config.correction_weight_decay,
                max_grad_norm: config.correction_max_grad_norm,
            };
            let dq = store.add_group(spec(CorrectionGroups::DQ, GroupKind::CorrectionRotation, config.beta_dq), vec![0.0; 3 * n])?;
            let dt = store.add_group(spec(CorrectionGroups::DT, GroupKind::CorrectionTranslation, config.beta_dt), vec![0.0; 3 * n])?;
            Some(CorrectionGroups { dq, dt })
        } else {
            None
        };
        let frames: Vec<&crate::dataset::Frame> = train_frames.iter().map(|&k| &dataset.frames[k]).collect();
        let pool = pixel_pool(&frames, &dataset.intrinsics, config);
        Ok(Trainer {
            config: config.clone(),
            render: render.clone(),
            field,
            store,
            corrections,
            intrinsics: dataset.intrinsics,
            labels: frames.iter().map(|f| f.pose).collect(),
            images: frames.iter().map(|f| f.image.clone()).collect(),
            masks: frames.iter().map(|f| f.mask.clone()).collect(),
            pool,
            train_frames,
            step: 0,
        })
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn num_images(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[Pose] {
        &self.labels
    }

    pub fn pool(&self) -> &[(u32, u32)] {
        &self.pool
    }

    /// Random stream for `step`, independent of how many steps ran before.
    pub fn step_rng(&self, step: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(step as u64 + 1);
        rng
    }

    /// Uniform draw (with replacement) of `rays_per_batch` pool entries plus
    /// the stratified-sampling uniforms.
    pub fn sample_batch(&self, step: usize) -> Result<RayBatch> {
        let mut rng = self.step_rng(step);
        let n = self.config.rays_per_batch;
        let w = self.intrinsics.width;
        let mut b = RayBatch::default();
        for _ in 0..n {
            let (a, p) = self.pool[rng.random_range(0..self.pool.len())];
            let (i, j) = (p as usize % w, p as usize / w);
            b.image.push(a);
            b.pixel.push((i as u32, j as u32));
            b.target.extend_from_slice(&self.images[a as usize].get(i, j));
            b.mask.push(self.masks[a as usize][p as usize]);
            let ray = pixel_rays(&self.labels[a as usize], &self.intrinsics, &[(i, j)])?[0];
            b.rays.extend_from_slice(&[ray.origin.x, ray.origin.y, ray.origin.z, ray.dir.x, ray.dir.y, ray.dir.z]);
        }
        if self.render.stratified_jitter {
            b.jitter = (0..n * self.render.samples_per_ray).map(|_| rng.random::<f64>()).collect();
        }
        Ok(b)
    }

    /// Loss and gradients of one lane. `normalizer` is the full batch size.
    pub fn lane_gradients(&self, batch: &RayBatch, normalizer: f64) -> Result<(f64, Gradients)> {
        let mut grads = self.store.new_gradients();
        if batch.is_empty() {
            return Ok((0.0, grads));
        }
        let mut tape = Tape::with_store(&self.store);
        let bound = self.field.bind(&mut tape, true, true);
        let mut rays = tape.constant(batch.rays.clone(), 6);
        if let Some(c) = self.corrections {
            let dq = tape.param(c.dq, 3, true);
            let dt = tape.param(c.dt, 3, true);
            rays = tape.refine_rays(rays, dq, dt, batch.image.clone())?;
        }
        let spec = self.field.triplane_spec();
        let jitter = (!batch.jitter.is_empty()).then_some(batch.jitter.as_slice());
        let layout = layout_samples(tape.value(rays), &self.render, spec.bbox_min, spec.bbox_max, jitter);
        let embed = bound.table.map(|t| (t, batch.image.as_slice()));
        let pred = render_on_tape(&mut tape, &self.field, &bound, rays, &layout, &self.render, embed)?;
        let loss = tape.photometric_loss(
            pred,
            batch.target.clone(),
            batch.mask.clone(),
            self.config.mask_loss_weight,
            normalizer,
        )?;
        let value = tape.value(loss)[0];
        tape.backward(loss, &mut grads)?;
        Ok((value, grads))
    }

    /// Loss and summed gradients for a batch split across the configured lanes.
    pub fn batch_gradients(&self, batch: &RayBatch) -> Result<(f64, Gradients)> {
        let lanes = self.config.lanes().clamp(1, batch.len().max(1));
        let n = batch.len();
        let parts: Vec<RayBatch> = (0..lanes).map(|l| batch.slice(l * n / lanes, (l + 1) * n / lanes)).collect();
        let results: Vec<Result<(f64, Gradients)>> =
            parts.par_iter().map(|p| self.lane_gradients(p, n as f64)).collect();
        let mut loss = 0.0;
        let mut grads = Vec::with_capacity(lanes);
        for r in results {
            let (l, g) = r?;
            loss += l;
            grads.push(g);
        }
        let grads = Gradients::reduce_tree(grads).unwrap_or_else(|| self.store.new_gradients());
        Ok((loss, grads))
    }

    /// One optimization step; returns the batch loss.
    pub fn train_step(&mut self) -> Result<f64> {
        Ok(self.train_step_detailed()?.loss)
    }

    pub fn train_step_detailed(&mut self) -> Result<StepRecord> {
        let step = self.step;
        let batch = self.sample_batch(step)?;
        let (loss, grads) = self.batch_gradients(&batch)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step, loss });
        }
        let grad_norms = self
            .store
            .ids()
            .map(|id| {
                let n = grads.group(id).iter().map(|g| g * g).sum::<f64>().sqrt();
                (self.store.group(id).name().to_string(), n)
            })
            .collect();
        let lr = self.config.lr_at(step);
        self.store.accumulate(&grads);
        self.store.adam_step(lr)?;
        if self.corrections.is_some() {
            self.store.project_correction_norms(self.config.max_correction_norm);
        }
        self.step += 1;
        let (deg, m) = self.mean_correction();
        Ok(StepRecord { step, loss, lr, grad_norms, mean_correction_deg: deg, mean_correction_m: m })
    }

    /// Runs the remaining steps, writing a JSON line every `log_every` steps
    /// to `log` when given.
    pub fn train(&mut self, mut log: Option<&mut dyn Write>) -> Result<Vec<StepRecord>> {
        let mut records = Vec::new();
        while self.step < self.config.steps {
            let rec = self.train_step_detailed()?;
            let last = self.step == self.config.steps;
            if self.config.log_every > 0 && (rec.step % self.config.log_every == 0 || last) {
                if let Some(w) = log.as_deref_mut() {
                    serde_json::to_writer(&mut *w, &rec)?;
                    writeln!(w).map_err(|e| Error::io("metrics log", e))?;
                }
                records.push(rec);
            }
        }
        Ok(records)
    }

    /// Correction of training image `a` (zero when corrections are off).
    pub fn correction(&self, a: usize) -> PoseCorrection {
        match self.corrections {
            None => PoseCorrection::default(),
            Some(c) => c.get(&self.store, a),
        }
    }

    /// Labels with the learned corrections applied.
    pub fn refined_poses(&self) -> Result<Vec<Pose>> {
        (0..self.num_images()).map(|a| apply_correction(&self.correction(a), &self.labels[a])).collect()
    }

    /// Mean rotation angle (degrees) and translation norm of the corrections.
    pub fn mean_correction(&self) -> (f64, f64) {
        let n = self.num_images() as f64;
        let mut deg = 0.0;
        let mut m = 0.0;
        for a in 0..self.num_images() {
            let c = self.correction(a);
            deg += (2.0 * c.dq_vec.norm().min(1.0).asin()).to_degrees();
            m += c.dt.norm();
        }
        (deg / n, m / n)
    }

    pub fn checkpoint_meta(&self, extra: serde_json::Value) -> serde_json::Value {
        serde_json::json!({
            "train_frames": self.train_frames,
            "steps_done": self.step,
            "intrinsics": self.intrinsics,
            "experiment": extra,
        })
    }

    pub fn save_checkpoint(&self, path: &Path, extra: serde_json::Value) -> Result<()> {
        self.store.save_checkpoint(path, &self.checkpoint_meta(extra))
    }
}

/// Which checkerboard parity of pixels is used to fit an embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum HalfSelector {
    /// Pixels with `(i + j)` even.
    #[default]
    Even,
    Odd,
}

impl HalfSelector {
    pub fn pixels(self, width: usize, height: usize) -> Vec<(usize, usize)> {
        let want = match self {
            HalfSelector::Even => 0,
            HalfSelector::Odd => 1,
        };
        (0..height).flat_map(|j| (0..width).map(move |i| (i, j))).filter(|(i, j)| (i + j) % 2 == want).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingFitConfig {
    pub iters: usize,
    pub lr: f64,
    pub selector: HalfSelector,
    /// Samples whose compositing weight falls below this are dropped.
    pub weight_floor: f64,
}

impl Default for EmbeddingFitConfig {
    fn default() -> Self {
        EmbeddingFitConfig { iters: 300, lr: 0.05, selector: HalfSelector::Even, weight_floor: 1e-4 }
    }
}

/// Fits a fresh appearance embedding to half of `reference`'s pixels with
/// the field frozen. Only the embedding vector is optimized; the store is
/// borrowed immutably. Returns `None` for fields without an appearance path.
pub fn fit_test_embedding(
    field: &RadianceField,
    store: &ParamStore,
    pose: &Pose,
    intr: &CameraIntrinsics,
    reference: &Image,
    render: &RenderConfig,
    cfg: &EmbeddingFitConfig,
) -> Result<Option<Vec<f64>>> {
    if field.appearance().is_none() {
        return Ok(None);
    }
    if reference.width != intr.width || reference.height != intr.height {
        return Err(Error::Intrinsics(format!(
            "reference is {}x{}, intrinsics {}x{}",
            reference.width, reference.height, intr.width, intr.height
        )));
    }
    let pixels = cfg.selector.pixels(intr.width, intr.height);
    let rays = pixel_rays(pose, intr, &pixels)?;
    let flat: Vec<f64> = rays.iter().flat_map(|r| [r.origin.x, r.origin.y, r.origin.z, r.dir.x, r.dir.y, r.dir.z]).collect();
    let eval_render = RenderConfig { stratified_jitter: false, ..render.clone() };
    let spec = field.triplane_spec();
    let layout = layout_samples(&flat, &eval_render, spec.bbox_min, spec.bbox_max, None);

    // Geometry and the embedding-free part of the first color layer are fixed;
    // compute them once.
    let (base, weights, segments, bias) = {
        let mut tape = Tape::with_store(store);
        let bound = field.bind(&mut tape, false, false);
        let rays_node = tape.constant(flat, 6);
        let points = tape.sample_points(rays_node, layout.ray_of.clone(), layout.depth.clone())?;
        let dirs = tape.sample_dirs(rays_node, layout.ray_of.clone())?;
        let (sigma, feat) = field.density(&mut tape, &bound, points)?;
        let pre = field.color_base(&mut tape, &bound, feat, dirs)?;
        let sv = tape.value(sigma);
        let pv = tape.value(pre);
        let h = tape.cols(pre);
        let mut base = Vec::new();
        let mut weights = Vec::new();
        let mut segments = Vec::with_capacity(pixels.len());
        let mut bias = Vec::with_capacity(pixels.len());
        for &(a, b) in &layout.segments {
            let start = weights.len();
            let mut t = 1.0;
            for s in a..b {
                let keep = (-sv[s] * layout.delta[s]).exp();
                let w = t * (1.0 - keep);
                t *= keep;
                if w >= cfg.weight_floor {
                    weights.push(w);
                    base.extend_from_slice(&pv[s * h..(s + 1) * h]);
                }
            }
            segments.push((start, weights.len()));
            bias.push(eval_render.background.map(|c| c * t));
        }
        (base, weights, segments, bias)
    };
    let target: Vec<f64> = pixels.iter().flat_map(|&(i, j)| reference.get(i, j)).collect();
    let d = field.embedding_dim();
    let h = field.config.color_hidden[0];
    let n_kept = weights.len();

    let mut e = vec![0.0; d];
    let mut m = vec![0.0; d];
    let mut v = vec![0.0; d];
    let adam = AdamConfig::default();
    for it in 0..cfg.iters {
        let mut tape = Tape::with_store(store);
        let bound = field.bind(&mut tape, false, false);
        let table = tape.leaf(e.clone(), d, true);
        let base_node = tape.constant(base.clone(), h);
        let proj = bound.proj.expect("appearance path");
        let term = tape.embed_project(table, proj, vec![0; n_kept])?;
        let pre = tape.add(base_node, term)?;
        let rgb = field.color_head(&mut tape, &bound, pre)?;
        let color = tape.weighted_color(rgb, segments.clone(), weights.clone(), bias.clone())?;
        let loss = tape.photometric_loss(color, target.clone(), Vec::new(), 0.0, pixels.len() as f64)?;
        let mut unused = store.new_gradients();
        tape.backward(loss, &mut unused)?;
        let g = tape.grad(table).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; d]);
        let t = (it + 1) as i32;
        for k in 0..d {
            m[k] = adam.beta1 * m[k] + (1.0 - adam.beta1) * g[k];
            v[k] = adam.beta2 * v[k] + (1.0 - adam.beta2) * g[k] * g[k];
            let mh = m[k] / (1.0 - adam.beta1.powi(t));
            let vh = v[k] / (1.0 - adam.beta2.powi(t));
            e[k] -= cfg.lr * mh / (vh.sqrt() + adam.eps);
        }
    }
    Ok(Some(e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkerboard_halves_partition_the_image() {
        let even = HalfSelector::Even.pixels(7, 5);
        let odd = HalfSelector::Odd.pixels(7, 5);
        assert_eq!(even.len() + odd.len(), 35);
        let mut all: Vec<_> = even.iter().chain(&odd).copied().collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 35);
    }

    #[test]
    fn dilation_grows_by_radius() {
        let mut m = vec![0.0; 25];
        m[12] = 1.0;
        let d = dilate_mask(&m, 5, 5, 1);
        assert_eq!(d.iter().filter(|&&b| b).count(), 9);
        assert!(d[6] && d[18] && !d[0]);
    }

    #[test]
    fn beta_above_bound_is_rejected() {
        let cfg = TrainConfig { beta_dq: 0.1, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let cfg = TrainConfig { steps: 100, ..Default::default() };
        assert!((cfg.lr_at(0) - 1e-2).abs() < 1e-15);
        assert!((cfg.lr_at(100) - 1e-4).abs() < 1e-15);
    }
}
