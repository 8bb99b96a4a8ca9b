//! Stratified ray sampling and emission-absorption compositing.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::RadianceField;
use crate::params::ParamStore;
use crate::se3::{pixel_rays, CameraIntrinsics, Pose, Ray};
use crate::tape::{NodeId, Tape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    pub near: f64,
    pub far: f64,
    pub samples_per_ray: usize,
    pub background: [f64; 3],
    /// Draw each depth uniformly inside its bin instead of at the midpoint.
    pub stratified_jitter: bool,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig { near: 1.5, far: 4.5, samples_per_ray: 128, background: [0.0; 3], stratified_jitter: true }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.near > 0.0 && self.far > self.near) {
            return Err(Error::Config(format!("render: need 0 < near < far, got {} / {}", self.near, self.far)));
        }
        if self.samples_per_ray == 0 {
            return Err(Error::Config("render: samples_per_ray must be at least 1".into()));
        }
        Ok(())
    }

    pub fn bin_width(&self) -> f64 {
        (self.far - self.near) / self.samples_per_ray as f64
    }

    /// Sample depths; `u` holds one uniform in [0, 1) per bin when jittering.
    pub fn depths(&self, u: Option<&[f64]>) -> Vec<f64> {
        let w = self.bin_width();
        (0..self.samples_per_ray)
            .map(|i| self.near + w * (i as f64 + u.map_or(0.5, |u| u[i])))
            .collect()
    }
}

/// Samples along one ray.
#[derive(Debug, Clone, PartialEq)]
pub struct RaySampleBatch {
    pub depths: Vec<f64>,
    pub positions: Vec<[f64; 3]>,
    pub directions: Vec<[f64; 3]>,
    pub deltas: Vec<f64>,
}

/// Segment lengths `d[i+1] - d[i]`, the last one being the bin width.
pub fn segment_lengths(depths: &[f64], bin_width: f64) -> Vec<f64> {
    let mut out: Vec<f64> = depths.windows(2).map(|w| w[1] - w[0]).collect();
    out.push(bin_width);
    out
}

pub fn sample_ray<R: Rng + ?Sized>(ray: &Ray, cfg: &RenderConfig, rng: Option<&mut R>) -> RaySampleBatch {
    let u: Option<Vec<f64>> = match (cfg.stratified_jitter, rng) {
        (true, Some(rng)) => Some((0..cfg.samples_per_ray).map(|_| rng.random::<f64>()).collect()),
        _ => None,
    };
    let depths = cfg.depths(u.as_deref());
    let o = ray.origin;
    let d = ray.dir;
    let positions = depths.iter().map(|&t| [o.x + t * d.x, o.y + t * d.y, o.z + t * d.z]).collect();
    let directions = vec![d.to_array(); depths.len()];
    let deltas = segment_lengths(&depths, cfg.bin_width());
    RaySampleBatch { depths, positions, directions, deltas }
}

/// Composited color and opacity for one ray. `rgb` is flattened (3 per sample).
pub fn composite_slices(sigma: &[f64], rgb: &[f64], deltas: &[f64], background: [f64; 3]) -> Result<([f64; 3], f64)> {
    let mut t = 1.0;
    let mut c = [0.0; 3];
    let mut opacity = 0.0;
    for i in 0..sigma.len() {
        if !(sigma[i] >= 0.0) {
            return Err(Error::NegativeQuadrature { what: "density", index: i, value: sigma[i] });
        }
        if !(deltas[i] >= 0.0) {
            return Err(Error::NegativeQuadrature { what: "segment length", index: i, value: deltas[i] });
        }
        let keep = (-sigma[i] * deltas[i]).exp();
        let w = t * (1.0 - keep);
        for k in 0..3 {
            c[k] += w * rgb[3 * i + k];
        }
        opacity += w;
        t *= keep;
    }
    for k in 0..3 {
        c[k] += t * background[k];
    }
    Ok((c, opacity))
}

/// Adds the gradients of `g . (rgb, opacity)` with respect to densities and
/// sample colors into `g_sigma` and `g_rgb`.
pub fn composite_backward_slices(
    sigma: &[f64],
    rgb: &[f64],
    deltas: &[f64],
    background: [f64; 3],
    g: [f64; 4],
    g_sigma: &mut [f64],
    g_rgb: &mut [f64],
) {
    let n = sigma.len();
    // trans[i] is the transmittance before sample i; trans[n] after the last.
    let mut trans = Vec::with_capacity(n + 1);
    let mut weights = Vec::with_capacity(n);
    let mut t = 1.0;
    trans.push(t);
    for i in 0..n {
        let keep = (-sigma[i] * deltas[i]).exp();
        weights.push(t * (1.0 - keep));
        t *= keep;
        trans.push(t);
    }
    let t_final = trans[n];
    let gc = [g[0], g[1], g[2]];
    // Running sum over later samples of w_i (g . c_i), seeded with background.
    let mut later = t_final * (gc[0] * background[0] + gc[1] * background[1] + gc[2] * background[2]);
    for i in (0..n).rev() {
        let gci = gc[0] * rgb[3 * i] + gc[1] * rgb[3 * i + 1] + gc[2] * rgb[3 * i + 2];
        let d_tau = trans[i + 1] * gci - later + g[3] * t_final;
        g_sigma[i] += d_tau * deltas[i];
        for k in 0..3 {
            g_rgb[3 * i + k] += weights[i] * gc[k];
        }
        later += weights[i] * gci;
    }
}

/// `(rgb, opacity)` for a list of `(r, g, b, sigma)` samples.
pub fn composite(samples: &[[f64; 4]], deltas: &[f64], background: [f64; 3]) -> Result<([f64; 3], f64)> {
    if samples.len() != deltas.len() {
        return Err(Error::Dimension("composite: samples and deltas differ in length".into()));
    }
    let sigma: Vec<f64> = samples.iter().map(|s| s[3]).collect();
    let rgb: Vec<f64> = samples.iter().flat_map(|s| [s[0], s[1], s[2]]).collect();
    composite_slices(&sigma, &rgb, deltas, background)
}

/// Sample layout of a ray batch after discarding points outside the field's
/// bounding box. Discarded samples contribute nothing, as if their density
/// were zero.
#[derive(Debug, Clone, Default)]
pub struct SampleLayout {
    pub ray_of: Vec<u32>,
    pub depth: Vec<f64>,
    pub delta: Vec<f64>,
    pub segments: Vec<(usize, usize)>,
}

impl SampleLayout {
    pub fn len(&self) -> usize {
        self.depth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depth.is_empty()
    }
}

/// Builds the sample layout for rays given as `n x 6` (origin, direction).
/// `jitter` supplies `n * K` uniforms when stratified sampling is on.
pub fn layout_samples(
    rays: &[f64],
    cfg: &RenderConfig,
    bbox_min: [f64; 3],
    bbox_max: [f64; 3],
    jitter: Option<&[f64]>,
) -> SampleLayout {
    let k = cfg.samples_per_ray;
    let bin = cfg.bin_width();
    let mut out = SampleLayout::default();
    let mut depths = vec![0.0; k];
    for (r, ray) in rays.chunks_exact(6).enumerate() {
        let start = out.depth.len();
        // Clip against the box first so rays that miss it cost nothing.
        if let Some((t0, t1)) = slab_interval(ray, bbox_min, bbox_max) {
            if t1 >= cfg.near && t0 <= cfg.far {
                let w = bin;
                for (i, d) in depths.iter_mut().enumerate() {
                    let u = jitter.map_or(0.5, |j| j[r * k + i]);
                    *d = cfg.near + w * (i as f64 + u);
                }
                for i in 0..k {
                    let t = depths[i];
                    let p = [ray[0] + t * ray[3], ray[1] + t * ray[4], ray[2] + t * ray[5]];
                    if (0..3).all(|a| p[a] >= bbox_min[a] && p[a] <= bbox_max[a]) {
                        out.ray_of.push(r as u32);
                        out.depth.push(t);
                        out.delta.push(if i + 1 < k { depths[i + 1] - t } else { bin });
                    }
                }
            }
        }
        out.segments.push((start, out.depth.len()));
    }
    out
}

/// Parameter interval where the ray is inside the box, if any.
fn slab_interval(ray: &[f64], lo: [f64; 3], hi: [f64; 3]) -> Option<(f64, f64)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        let o = ray[a];
        let d = ray[3 + a];
        if d.abs() < 1e-300 {
            if o < lo[a] || o > hi[a] {
                return None;
            }
            continue;
        }
        let (mut ta, mut tb) = ((lo[a] - o) / d, (hi[a] - o) / d);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
    }
    // Small slack so samples exactly on the boundary are not lost.
    (t1 >= t0 - 1e-12).then_some((t0, t1))
}

/// Records sampling, field evaluation and compositing for `rays` (`n x 6`
/// node). `embed` maps each ray to a row of an embedding table node.
/// Returns the `n x 4` (rgb, opacity) node.
#[allow(clippy::too_many_arguments)]
pub fn render_on_tape(
    tape: &mut Tape<'_>,
    field: &RadianceField,
    bound: &crate::field::BoundField,
    rays: NodeId,
    layout: &SampleLayout,
    cfg: &RenderConfig,
    embed: Option<(NodeId, &[u32])>,
) -> Result<NodeId> {
    let points = tape.sample_points(rays, layout.ray_of.clone(), layout.depth.clone())?;
    let dirs = tape.sample_dirs(rays, layout.ray_of.clone())?;
    let embed = embed.map(|(table, per_ray)| (table, layout.ray_of.iter().map(|&r| per_ray[r as usize]).collect()));
    let out = field.forward(tape, bound, points, dirs, embed)?;
    tape.composite(out.sigma, out.rgb, layout.segments.clone(), layout.delta.clone(), cfg.background)
}

/// Rays per chunk when rendering without gradients.
const RENDER_CHUNK: usize = 256;

/// Renders `(rgb, opacity)` for each ray with midpoint sampling. `embedding`
/// conditions the color network when the field has an appearance path.
pub fn render_rays(
    field: &RadianceField,
    store: &ParamStore,
    rays: &[Ray],
    cfg: &RenderConfig,
    embedding: Option<&[f64]>,
) -> Result<Vec<([f64; 3], f64)>> {
    cfg.validate()?;
    let spec = field.triplane_spec();
    let chunks: Vec<Result<Vec<([f64; 3], f64)>>> = rays
        .par_chunks(RENDER_CHUNK)
        .map(|chunk| {
            let flat: Vec<f64> =
                chunk.iter().flat_map(|r| [r.origin.x, r.origin.y, r.origin.z, r.dir.x, r.dir.y, r.dir.z]).collect();
            let layout = layout_samples(&flat, cfg, spec.bbox_min, spec.bbox_max, None);
            let mut tape = Tape::with_store(store);
            let bound = field.bind(&mut tape, false, false);
            let rays_node = tape.constant(flat, 6);
            let idx = vec![0u32; chunk.len()];
            let embed = match (embedding, field.appearance()) {
                (Some(e), Some(_)) => Some((tape.constant(e.to_vec(), e.len()), idx.as_slice())),
                (Some(_), None) => {
                    return Err(Error::Dimension("embedding given to a field without appearance path".into()))
                }
                _ => None,
            };
            let out = render_on_tape(&mut tape, field, &bound, rays_node, &layout, cfg, embed)?;
            Ok(tape.value(out).chunks_exact(4).map(|v| ([v[0], v[1], v[2]], v[3])).collect())
        })
        .collect();
    let mut out = Vec::with_capacity(rays.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

/// Colors of the given pixels seen from `pose`.
pub fn render_pixels(
    field: &RadianceField,
    store: &ParamStore,
    pose: &Pose,
    intr: &CameraIntrinsics,
    pixels: &[(usize, usize)],
    cfg: &RenderConfig,
    embedding: Option<&[f64]>,
) -> Result<Vec<[f64; 3]>> {
    let rays = pixel_rays(pose, intr, pixels)?;
    Ok(render_rays(field, store, &rays, cfg, embedding)?.into_iter().map(|(c, _)| c).collect())
}

/// Full image (row-major, rgb) and opacity map.
pub fn render_image(
    field: &RadianceField,
    store: &ParamStore,
    pose: &Pose,
    intr: &CameraIntrinsics,
    cfg: &RenderConfig,
    embedding: Option<&[f64]>,
) -> Result<(crate::image::Image, Vec<f64>)> {
    let pixels: Vec<(usize, usize)> =
        (0..intr.height).flat_map(|j| (0..intr.width).map(move |i| (i, j))).collect();
    let rays = pixel_rays(pose, intr, &pixels)?;
    let out = render_rays(field, store, &rays, cfg, embedding)?;
    let mut img = crate::image::Image::new(intr.width, intr.height);
    let mut opacity = Vec::with_capacity(out.len());
    for (k, (c, o)) in out.into_iter().enumerate() {
        img.data[3 * k..3 * k + 3].copy_from_slice(&c);
        opacity.push(o);
    }
    Ok((img, opacity))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midpoint_depths() {
        let cfg = RenderConfig { near: 1.0, far: 3.0, samples_per_ray: 4, stratified_jitter: false, ..Default::default() };
        assert_eq!(cfg.depths(None), vec![1.25, 1.75, 2.25, 2.75]);
        let one = RenderConfig { samples_per_ray: 1, ..cfg };
        assert_eq!(one.depths(None), vec![2.0]);
    }

    #[test]
    fn closed_form_two_samples() {
        let (c, o) = composite(&[[1.0, 0.0, 0.0, 2f64.ln()], [0.0, 1.0, 0.0, 1e3]], &[1.0, 1.0], [0.0; 3]).unwrap();
        assert!((c[0] - 0.5).abs() < 1e-12 && (c[1] - 0.5).abs() < 1e-12 && (o - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_space_is_background() {
        let (c, o) = composite(&[[0.3, 0.3, 0.3, 0.0]; 3], &[0.1; 3], [0.2, 0.4, 0.6]).unwrap();
        assert_eq!((c, o), ([0.2, 0.4, 0.6], 0.0));
    }

    #[test]
    fn negative_density_is_rejected() {
        let err = composite(&[[0.0, 0.0, 0.0, -1.0]], &[0.1], [0.0; 3]).unwrap_err();
        assert!(matches!(err, Error::NegativeQuadrature { index: 0, .. }));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let sigma = [0.4, 2.0, 0.0, 1.3];
        let rgb = [0.1, 0.5, 0.9, 0.3, 0.3, 0.2, 0.8, 0.1, 0.4, 0.6, 0.7, 0.2];
        let deltas = [0.3, 0.2, 0.25, 0.5];
        let bg = [0.2, 0.1, 0.3];
        let g = [0.7, -0.4, 0.2, 0.5];
        let f = |s: &[f64], c: &[f64]| {
            let (col, o) = composite_slices(s, c, &deltas, bg).unwrap();
            g[0] * col[0] + g[1] * col[1] + g[2] * col[2] + g[3] * o
        };
        let mut gs = [0.0; 4];
        let mut gc = [0.0; 12];
        composite_backward_slices(&sigma, &rgb, &deltas, bg, g, &mut gs, &mut gc);
        let h = 1e-6;
        for i in 0..4 {
            let mut a = sigma;
            let mut b = sigma;
            a[i] += h;
            b[i] -= h;
            if b[i] < 0.0 {
                b[i] = 0.0;
                let fd = (f(&a, &rgb) - f(&b, &rgb)) / h;
                assert!((fd - gs[i]).abs() < 1e-5);
                continue;
            }
            let fd = (f(&a, &rgb) - f(&b, &rgb)) / (2.0 * h);
            assert!((fd - gs[i]).abs() < 1e-8, "sigma {i}");
        }
        for i in 0..12 {
            let mut a = rgb;
            let mut b = rgb;
            a[i] += h;
            b[i] -= h;
            let fd = (f(&sigma, &a) - f(&sigma, &b)) / (2.0 * h);
            assert!((fd - gc[i]).abs() < 1e-8, "rgb {i}");
        }
    }
}
