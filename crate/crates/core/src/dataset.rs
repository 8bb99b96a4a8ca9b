//! File-backed scene datasets.
//!
//! A dataset directory holds `images/NNNN.png` (8-bit RGB),
//! `masks/NNNN.png` (8-bit gray, 255 = foreground) and a `transforms.json`
//! manifest; see the README for the manifest schema.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{load_gray_png, save_gray_png, Image};
use crate::oracle::{light_schedule, render_oracle, Aabb, NoiseSpec, OracleScene, OrbitSpec};
use crate::se3::{CameraIntrinsics, Pose, Quaternion, Vec3};

pub const MANIFEST: &str = "transforms.json";
pub const FORMAT_NAME: &str = "radfield-scene";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// `q = [w, x, y, z]` (camera to world), `t` = camera center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    pub q: [f64; 4],
    pub t: [f64; 3],
}

impl From<Pose> for PoseRecord {
    fn from(p: Pose) -> Self {
        PoseRecord { q: [p.q.w, p.q.x, p.q.y, p.q.z], t: p.t.to_array() }
    }
}

impl From<PoseRecord> for Pose {
    fn from(r: PoseRecord) -> Self {
        Pose::new(Quaternion::new(r.q[0], r.q[1], r.q[2], r.q[3]).normalize(), Vec3::from_array(r.t))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub image: String,
    pub mask: String,
    pub split: Split,
    pub light: usize,
    /// Label used for training.
    pub pose: PoseRecord,
    /// Ground truth, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_pose: Option<PoseRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub intrinsics: CameraIntrinsics,
    /// Box containing the target, used to bound the field.
    pub aabb: Aabb,
    pub light_variants: usize,
    #[serde(default)]
    pub noise: NoiseSpec,
    pub frames: Vec<FrameRecord>,
}

#[derive(Debug, Clone)]
pub struct Frame {
    pub image: Image,
    pub mask: Vec<f64>,
    pub split: Split,
    pub light: usize,
    pub pose: Pose,
    pub true_pose: Option<Pose>,
}

#[derive(Debug, Clone)]
pub struct SceneDataset {
    pub intrinsics: CameraIntrinsics,
    pub aabb: Aabb,
    pub light_variants: usize,
    pub noise: NoiseSpec,
    pub frames: Vec<Frame>,
}

impl SceneDataset {
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.frames.len()).filter(|&k| self.frames[k].split == split).collect()
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest = serde_json::from_str(&text)?;
        if m.format != FORMAT_NAME || m.version != FORMAT_VERSION {
            return Err(Error::Dataset(format!("unsupported manifest {} v{}", m.format, m.version)));
        }
        m.intrinsics.validate()?;
        let frames = m
            .frames
            .par_iter()
            .map(|f| {
                let image = Image::load_png(&dir.join(&f.image))?;
                let (w, h, mask) = load_gray_png(&dir.join(&f.mask))?;
                if image.width != m.intrinsics.width || image.height != m.intrinsics.height || w != image.width || h != image.height
                {
                    return Err(Error::Intrinsics(format!(
                        "{} is {}x{} but intrinsics say {}x{}",
                        f.image, image.width, image.height, m.intrinsics.width, m.intrinsics.height
                    )));
                }
                Ok(Frame {
                    image,
                    mask,
                    split: f.split,
                    light: f.light,
                    pose: f.pose.into(),
                    true_pose: f.true_pose.map(Into::into),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SceneDataset { intrinsics: m.intrinsics, aabb: m.aabb, light_variants: m.light_variants, noise: m.noise, frames })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        for sub in ["images", "masks"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        let records: Vec<FrameRecord> = self
            .frames
            .iter()
            .enumerate()
            .map(|(k, f)| FrameRecord {
                image: format!("images/{k:04}.png"),
                mask: format!("masks/{k:04}.png"),
                split: f.split,
                light: f.light,
                pose: f.pose.into(),
                true_pose: f.true_pose.map(Into::into),
            })
            .collect();
        self.frames.par_iter().zip(&records).try_for_each(|(f, r)| -> Result<()> {
            f.image.save_png(&dir.join(&r.image))?;
            save_gray_png(&dir.join(&r.mask), f.image.width, f.image.height, &f.mask)
        })?;
        let m = Manifest {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            intrinsics: self.intrinsics,
            aabb: self.aabb,
            light_variants: self.light_variants,
            noise: self.noise,
            frames: records,
        };
        let path = dir.join(MANIFEST);
        fs::write(&path, serde_json::to_string_pretty(&m)? + "\n").map_err(|e| Error::io(&path, e))
    }
}

/// Everything needed to synthesize a dataset from the oracle scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub views: usize,
    pub width: usize,
    pub height: usize,
    pub fov_deg: f64,
    pub orbit: OrbitSpec,
    pub light_variants: usize,
    /// Seed for a random light assignment; cycles through variants if unset.
    pub light_shuffle_seed: Option<u64>,
    pub noise: NoiseSpec,
    /// Every `holdout_every`-th view is a test view (0 disables the split).
    pub holdout_every: usize,
    /// Margin added around the target bounds to form the field box.
    pub aabb_margin: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            views: 50,
            width: 64,
            height: 64,
            fov_deg: 56.0,
            orbit: OrbitSpec::default(),
            light_variants: 1,
            light_shuffle_seed: None,
            noise: NoiseSpec::default(),
            holdout_every: 8,
            aabb_margin: 0.15,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.views < 2 {
            return Err(Error::Config(format!("at least 2 views are needed, got {}", self.views)));
        }
        if !(1..=4).contains(&self.light_variants) {
            return Err(Error::Config("light_variants must be between 1 and 4".into()));
        }
        if self.noise.sigma_rot_deg < 0.0 || self.noise.sigma_trans < 0.0 {
            return Err(Error::Config("noise scales must be nonnegative".into()));
        }
        if self.orbit.radius <= 0.0 {
            return Err(Error::Config("orbit radius must be positive".into()));
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::from_fov(self.width, self.height, self.fov_deg).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn scene(&self) -> OracleScene {
        OracleScene::with_light_variants(self.light_variants)
    }
}

/// Renders the oracle scene along the orbit and attaches noisy labels.
pub fn generate_dataset(spec: &SynthSpec) -> Result<SceneDataset> {
    spec.validate()?;
    let scene = spec.scene();
    let intr = spec.intrinsics()?;
    let truth = spec.orbit.poses(spec.views);
    let labels = spec.noise.perturb(&truth);
    let lights = light_schedule(spec.views, spec.light_variants, spec.light_shuffle_seed);
    let frames = (0..spec.views)
        .into_par_iter()
        .map(|k| {
            let (image, mask) = render_oracle(&scene, &truth[k], &intr, lights[k])?;
            let test = spec.holdout_every > 0 && k % spec.holdout_every == spec.holdout_every - 1;
            Ok(Frame {
                image,
                mask,
                split: if test { Split::Test } else { Split::Train },
                light: lights[k],
                pose: labels[k],
                true_pose: Some(truth[k]),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut aabb = scene.bounds();
    for a in 0..3 {
        aabb.min[a] -= spec.aabb_margin;
        aabb.max[a] += spec.aabb_margin;
    }
    Ok(SceneDataset { intrinsics: intr, aabb, light_variants: spec.light_variants, noise: spec.noise, frames })
}

/// [`generate_dataset`] followed by [`SceneDataset::save`].
pub fn synthesize_to(spec: &SynthSpec, out: &Path) -> Result<SceneDataset> {
    let ds = generate_dataset(spec)?;
    ds.save(out)?;
    Ok(ds)
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join(MANIFEST)
}
