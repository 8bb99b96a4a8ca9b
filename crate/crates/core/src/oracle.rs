//! Synthetic ground-truth scene: a box body with two thin side panels,
//! textured with a checker pattern tinted per face and lit by a directional
//! light plus ambient term. Rendering is exact ray casting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::se3::{quat_mul, CameraIntrinsics, Pose, Quaternion, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn contains(&self, p: Vec3) -> bool {
        let p = p.to_array();
        (0..3).all(|a| p[a] > self.min[a] && p[a] < self.max[a])
    }

    /// Nearest entry distance along the ray and the entry face
    /// (`2 * axis + (1 if positive side)`).
    pub fn intersect(&self, origin: Vec3, dir: Vec3) -> Option<(f64, usize)> {
        let o = origin.to_array();
        let d = dir.to_array();
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        let mut face = 0;
        for a in 0..3 {
            if d[a] == 0.0 {
                if o[a] < self.min[a] || o[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let ta = (self.min[a] - o[a]) / d[a];
            let tb = (self.max[a] - o[a]) / d[a];
            let (near, near_face) = if ta < tb { (ta, 2 * a) } else { (tb, 2 * a + 1) };
            let far = ta.max(tb);
            if near > t0 {
                t0 = near;
                face = near_face;
            }
            t1 = t1.min(far);
        }
        (t0 <= t1 && t0 > 0.0).then_some((t0, face))
    }

    pub fn face_normal(face: usize) -> Vec3 {
        let mut n = [0.0; 3];
        n[face / 2] = if face % 2 == 1 { 1.0 } else { -1.0 };
        Vec3::from_array(n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Light {
    /// Unit vector pointing from the scene toward the light.
    pub direction: [f64; 3],
    pub intensity: f64,
    pub ambient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleScene {
    pub body: Aabb,
    pub panels: Vec<Aabb>,
    /// Checker cell size in meters.
    pub checker: f64,
    /// Dark checker cells are scaled by this factor.
    pub checker_contrast: f64,
    pub lights: Vec<Light>,
}

const BODY_COLORS: [[f64; 3]; 6] = [
    [0.85, 0.55, 0.25],
    [0.90, 0.80, 0.30],
    [0.35, 0.70, 0.40],
    [0.80, 0.35, 0.35],
    [0.60, 0.60, 0.75],
    [0.75, 0.75, 0.70],
];
const PANEL_COLORS: [[f64; 3]; 6] = [
    [0.20, 0.30, 0.80],
    [0.25, 0.35, 0.85],
    [0.30, 0.40, 0.75],
    [0.30, 0.40, 0.75],
    [0.15, 0.25, 0.70],
    [0.35, 0.45, 0.90],
];

fn normalize3(v: [f64; 3]) -> [f64; 3] {
    Vec3::from_array(v).normalize().to_array()
}

impl Default for OracleScene {
    fn default() -> Self {
        OracleScene::with_light_variants(1)
    }
}

impl OracleScene {
    /// The standard target lit by `n` (1 to 4) illumination variants.
    pub fn with_light_variants(n: usize) -> Self {
        let all = [
            Light { direction: normalize3([0.5, 0.4, 0.75]), intensity: 0.8, ambient: 0.3 },
            Light { direction: normalize3([-0.7, -0.5, 0.5]), intensity: 1.0, ambient: 0.08 },
            Light { direction: normalize3([-0.3, 0.8, -0.5]), intensity: 0.55, ambient: 0.15 },
            Light { direction: normalize3([0.6, -0.6, -0.55]), intensity: 1.15, ambient: 0.02 },
        ];
        OracleScene {
            body: Aabb { min: [-0.5, -0.35, -0.35], max: [0.5, 0.35, 0.35] },
            panels: vec![
                Aabb { min: [0.55, -0.3, -0.02], max: [1.25, 0.3, 0.02] },
                Aabb { min: [-1.25, -0.3, -0.02], max: [-0.55, 0.3, 0.02] },
            ],
            checker: 0.25,
            checker_contrast: 0.55,
            lights: all[..n.clamp(1, 4)].to_vec(),
        }
    }

    pub fn primitives(&self) -> impl Iterator<Item = (usize, &Aabb)> {
        std::iter::once(&self.body).chain(&self.panels).enumerate()
    }

    /// Box enclosing every primitive.
    pub fn bounds(&self) -> Aabb {
        let mut b = self.body;
        for p in &self.panels {
            for a in 0..3 {
                b.min[a] = b.min[a].min(p.min[a]);
                b.max[a] = b.max[a].max(p.max[a]);
            }
        }
        b
    }

    /// Diagonal length of [`bounds`](Self::bounds).
    pub fn diameter(&self) -> f64 {
        let b = self.bounds();
        (0..3).map(|a| (b.max[a] - b.min[a]).powi(2)).sum::<f64>().sqrt()
    }

    /// Closest hit: distance, primitive index and face.
    pub fn hit(&self, origin: Vec3, dir: Vec3) -> Option<(f64, usize, usize)> {
        self.primitives()
            .filter_map(|(k, b)| b.intersect(origin, dir).map(|(t, f)| (t, k, f)))
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }

    /// Surface albedo at point `p` on face `face` of primitive `prim`.
    pub fn albedo(&self, prim: usize, face: usize, p: Vec3) -> [f64; 3] {
        let base = if prim == 0 { BODY_COLORS[face] } else { PANEL_COLORS[face] };
        let axis = face / 2;
        let p = p.to_array();
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        let cell = (p[u] / self.checker).floor() as i64 + (p[v] / self.checker).floor() as i64;
        let s = if cell.rem_euclid(2) == 0 { 1.0 } else { self.checker_contrast };
        [base[0] * s, base[1] * s, base[2] * s]
    }

    /// Radiance of face `face` under `light`, before texture.
    pub fn shading(light: &Light, face: usize) -> f64 {
        let n = Aabb::face_normal(face);
        light.ambient + light.intensity * n.dot(Vec3::from_array(light.direction)).max(0.0)
    }

    pub fn light(&self, variant: usize) -> Result<&Light> {
        self.lights
            .get(variant)
            .ok_or_else(|| Error::Config(format!("light variant {variant} of {}", self.lights.len())))
    }
}

/// Ray-cast image and exact foreground mask.
pub fn render_oracle(scene: &OracleScene, pose: &Pose, intr: &CameraIntrinsics, variant: usize) -> Result<(Image, Vec<f64>)> {
    intr.validate()?;
    if scene.primitives().any(|(_, b)| b.contains(pose.t)) {
        return Err(Error::CameraInsideGeometry);
    }
    let light = scene.light(variant)?;
    let mut img = Image::new(intr.width, intr.height);
    let mut mask = vec![0.0; intr.num_pixels()];
    for j in 0..intr.height {
        for i in 0..intr.width {
            let d = crate::se3::quat_rotate(pose.q, intr.camera_direction(i, j));
            if let Some((t, prim, face)) = scene.hit(pose.t, d) {
                let p = pose.t + d * t;
                let a = scene.albedo(prim, face, p);
                let s = OracleScene::shading(light, face);
                img.set(i, j, [(a[0] * s).min(1.0), (a[1] * s).min(1.0), (a[2] * s).min(1.0)]);
                mask[j * intr.width + i] = 1.0;
            }
        }
    }
    Ok((img, mask))
}

/// Camera trajectory around the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OrbitSpec {
    /// Distance of every camera center from the origin.
    pub radius: f64,
    /// Peak elevation (degrees) of the wave the ring follows.
    pub elevation_amplitude_deg: f64,
    /// Elevation oscillations per revolution.
    pub waves: f64,
}

impl Default for OrbitSpec {
    fn default() -> Self {
        OrbitSpec { radius: 3.0, elevation_amplitude_deg: 40.0, waves: 3.0 }
    }
}

impl OrbitSpec {
    /// `n` poses evenly spaced in azimuth, each looking at the origin.
    pub fn poses(&self, n: usize) -> Vec<Pose> {
        (0..n)
            .map(|k| {
                let az = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                let el = self.elevation_amplitude_deg.to_radians() * (self.waves * az).sin();
                let eye = Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()) * self.radius;
                Pose::look_at(eye, Vec3::ZERO, Vec3::new(0.0, 0.0, 1.0))
            })
            .collect()
    }
}

/// Per-image label noise: rotation by `|N(0, sigma_rot)|` about a uniformly
/// random axis (applied on the left), translation `N(0, sigma_trans^2 I)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    pub sigma_rot_deg: f64,
    /// Meters.
    pub sigma_trans: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn is_zero(&self) -> bool {
        self.sigma_rot_deg == 0.0 && self.sigma_trans == 0.0
    }

    /// Noisy copies of `poses`. A zero spec returns the inputs unchanged.
    pub fn perturb(&self, poses: &[Pose]) -> Vec<Pose> {
        if self.is_zero() {
            return poses.to_vec();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let rot = Normal::new(0.0, self.sigma_rot_deg.to_radians()).expect("finite sigma");
        let trans = Normal::new(0.0, self.sigma_trans).expect("finite sigma");
        poses
            .iter()
            .map(|p| {
                let axis: [f64; 3] = UnitSphere.sample(&mut rng);
                let angle: f64 = rot.sample(&mut rng);
                let noise = Quaternion::from_axis_angle(Vec3::from_array(axis), angle.abs());
                let dt = Vec3::new(trans.sample(&mut rng), trans.sample(&mut rng), trans.sample(&mut rng));
                Pose::new(quat_mul(noise, p.q).normalize(), p.t + dt)
            })
            .collect()
    }
}

/// Light variant per view: cycles through `n_variants`, or a seeded random
/// pick when `shuffle` is set.
pub fn light_schedule(n_views: usize, n_variants: usize, shuffle: Option<u64>) -> Vec<usize> {
    match shuffle {
        None => (0..n_views).map(|k| k % n_variants.max(1)).collect(),
        Some(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n_views).map(|_| rng.random_range(0..n_variants.max(1))).collect()
        }
    }
}
