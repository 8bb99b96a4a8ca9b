//! Image-quality and pose-accuracy metrics, and the evaluation protocol.
//!
//! JNB blur score constants:
//! - edges: horizontal Sobel response on 8-bit luma, kept where it exceeds
//!   [`JNB_EDGE_THRESHOLD`] of the image maximum and is a local maximum
//!   along the row;
//! - edge width: distance between the intensity extrema on either side of
//!   the edge along the row;
//! - blocks of 64 x 64 pixels, a block counts when more than 0.2 % of its
//!   pixels are edges;
//! - just-noticeable width 5 px when the edge contrast (difference between
//!   those extrema) is at most 50 gray levels, else 3 px; pooling exponent
//!   3.6.
//!
//! Within a block the edge widths are pooled as a power mean (exponent 3.6)
//! so the block distortion does not grow with the number of edges. The
//! returned score is the pooled distortion divided by the number of edge
//! blocks, so lower means sharper.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{SceneDataset, Split};
use crate::error::{Error, Result};
use crate::field::RadianceField;
use crate::image::Image;
use crate::params::ParamStore;
use crate::render::{render_image, RenderConfig};
use crate::se3::{quat_mul, Pose};
use crate::train::{fit_test_embedding, EmbeddingFitConfig};

pub const PSNR_CAP: f64 = 100.0;
pub const JNB_EDGE_THRESHOLD: f64 = 0.1;
pub const JNB_BLOCK: usize = 64;
pub const JNB_EDGE_FRACTION: f64 = 0.002;
pub const JNB_BETA: f64 = 3.6;

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.same_size(b)?;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64)
}

/// `10 log10(1 / MSE)`, capped at [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for y in 0..SSIM_WINDOW {
        for x in 0..SSIM_WINDOW {
            let (dx, dy) = (x as f64 - r, y as f64 - r);
            w.push((-(dx * dx + dy * dy) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
        }
    }
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

/// Mean SSIM of the luma channels over all window positions that fit inside
/// the image.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.same_size(b)?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::ImageTooSmall { width: a.width, height: a.height, window: SSIM_WINDOW });
    }
    let (la, lb) = (a.luma(), b.luma());
    let win = gaussian_window();
    let c1 = (0.01f64).powi(2);
    let c2 = (0.03f64).powi(2);
    let w = a.width;
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=a.height - SSIM_WINDOW {
        for x0 in 0..=w - SSIM_WINDOW {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in 0..SSIM_WINDOW {
                for dx in 0..SSIM_WINDOW {
                    let g = win[dy * SSIM_WINDOW + dx];
                    let k = (y0 + dy) * w + x0 + dx;
                    let (x, y) = (la[k], lb[k]);
                    mx += g * x;
                    my += g * y;
                    sxx += g * x * x;
                    syy += g * y * y;
                    sxy += g * x * y;
                }
            }
            let vx = sxx - mx * mx;
            let vy = syy - my * my;
            let cov = sxy - mx * my;
            let num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
            let den = (mx * mx + my * my + c1) * (vx + vy + c2);
            total += num / den;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Horizontal Sobel response of a row-major gray image (zero on the border).
fn sobel_x(g: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.0; g.len()];
    for j in 1..h.saturating_sub(1) {
        for i in 1..w.saturating_sub(1) {
            let p = |di: isize, dj: isize| g[(j as isize + dj) as usize * w + (i as isize + di) as usize];
            out[j * w + i] = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
        }
    }
    out
}

/// Width and contrast of the edge at `(i, j)`: distance and intensity
/// difference between the nearest extrema left and right of it along the row.
fn edge_profile(g: &[f64], w: usize, i: usize, j: usize, rising: bool) -> (usize, f64) {
    let row = &g[j * w..(j + 1) * w];
    let up = |a: f64, b: f64| if rising { b > a } else { b < a };
    let mut lo = i;
    while lo > 0 && up(row[lo - 1], row[lo]) {
        lo -= 1;
    }
    let mut hi = i;
    while hi + 1 < w && up(row[hi], row[hi + 1]) {
        hi += 1;
    }
    ((hi - lo).max(1), (row[hi] - row[lo]).abs())
}

/// No-reference blur score (lower is sharper). Errors when no block holds
/// enough edge pixels.
pub fn jnb_score(img: &Image) -> Result<f64> {
    let (w, h) = (img.width, img.height);
    let g: Vec<f64> = img.luma().iter().map(|v| v * 255.0).collect();
    let gx = sobel_x(&g, w, h);
    let peak = gx.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return Err(Error::NoEdges);
    }
    let thresh = JNB_EDGE_THRESHOLD * peak;
    let is_edge = |i: usize, j: usize| {
        let v = gx[j * w + i].abs();
        v > thresh && (i == 0 || v >= gx[j * w + i - 1].abs()) && (i + 1 == w || v > gx[j * w + i + 1].abs())
    };
    let mut total = 0.0;
    let mut blocks = 0usize;
    for by in (0..h).step_by(JNB_BLOCK) {
        for bx in (0..w).step_by(JNB_BLOCK) {
            let (bw, bh) = ((w - bx).min(JNB_BLOCK), (h - by).min(JNB_BLOCK));
            let edges: Vec<(usize, usize)> = (by..by + bh)
                .flat_map(|j| (bx..bx + bw).map(move |i| (i, j)))
                .filter(|&(i, j)| is_edge(i, j))
                .collect();
            if (edges.len() as f64) <= JNB_EDGE_FRACTION * (bw * bh) as f64 {
                continue;
            }
            let mean: f64 = edges
                .iter()
                .map(|&(i, j)| {
                    let (width, contrast) = edge_profile(&g, w, i, j, gx[j * w + i] > 0.0);
                    let w_jnb = if contrast <= 50.0 { 5.0 } else { 3.0 };
                    (width as f64 / w_jnb).powf(JNB_BETA)
                })
                .sum::<f64>()
                / edges.len() as f64;
            let d_block = mean.powf(1.0 / JNB_BETA);
            total += d_block.powf(JNB_BETA);
            blocks += 1;
        }
    }
    if blocks == 0 {
        return Err(Error::NoEdges);
    }
    Ok(total.powf(1.0 / JNB_BETA) / blocks as f64)
}

/// Geodesic angle (radians) between two rotations; sign of the quaternion is
/// irrelevant.
pub fn rotation_error(a: &Pose, b: &Pose) -> f64 {
    let rel = quat_mul(a.q.conjugate(), b.q);
    2.0 * rel.vector().norm().atan2(rel.w.abs())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseErrorSummary {
    pub mean_deg: f64,
    pub median_deg: f64,
    pub mean_m: f64,
    pub median_m: f64,
    pub per_image_deg: Vec<f64>,
    pub per_image_m: Vec<f64>,
}

fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

pub fn pose_error(truth: &[Pose], refined: &[Pose]) -> Result<PoseErrorSummary> {
    if truth.len() != refined.len() {
        return Err(Error::Dimension(format!("{} true poses vs {} refined", truth.len(), refined.len())));
    }
    let deg: Vec<f64> = truth.iter().zip(refined).map(|(a, b)| rotation_error(a, b).to_degrees()).collect();
    let m: Vec<f64> = truth.iter().zip(refined).map(|(a, b)| (a.t - b.t).norm()).collect();
    let n = truth.len().max(1) as f64;
    Ok(PoseErrorSummary {
        mean_deg: deg.iter().sum::<f64>() / n,
        median_deg: median(&deg),
        mean_m: m.iter().sum::<f64>() / n,
        median_m: median(&m),
        per_image_deg: deg,
        per_image_m: m,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub frame: usize,
    pub psnr: f64,
    pub ssim: f64,
    /// `None` when the render has no measurable edges.
    pub jnb: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub images: Vec<ImageMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_jnb: Option<f64>,
    /// Error of the training labels before refinement.
    pub label_pose_error: Option<PoseErrorSummary>,
    /// Error of the refined training labels.
    pub refined_pose_error: Option<PoseErrorSummary>,
}

impl MetricReport {
    pub fn from_images(images: Vec<ImageMetrics>) -> Self {
        let n = images.len().max(1) as f64;
        let jnbs: Vec<f64> = images.iter().filter_map(|m| m.jnb).collect();
        MetricReport {
            mean_psnr: images.iter().map(|m| m.psnr).sum::<f64>() / n,
            mean_ssim: images.iter().map(|m| m.ssim).sum::<f64>() / n,
            mean_jnb: (!jnbs.is_empty()).then(|| jnbs.iter().sum::<f64>() / jnbs.len() as f64),
            images,
            label_pose_error: None,
            refined_pose_error: None,
        }
    }
}

/// Evaluation protocol settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub split: Split,
    pub fit: EmbeddingFitConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { split: Split::Test, fit: EmbeddingFitConfig::default() }
    }
}

/// Reference image, fitted render and the metrics of one frame.
pub struct FrameEvaluation {
    pub frame: usize,
    pub reference: Image,
    pub render: Image,
    pub metrics: ImageMetrics,
}

/// Renders frame `k` of `dataset` (at its true pose when known), fitting a
/// fresh embedding to half of its pixels first, and scores the full image.
pub fn evaluate_frame(
    field: &RadianceField,
    store: &ParamStore,
    dataset: &SceneDataset,
    k: usize,
    render: &RenderConfig,
    cfg: &EvalConfig,
) -> Result<FrameEvaluation> {
    let f = &dataset.frames[k];
    let pose = f.true_pose.unwrap_or(f.pose);
    let rcfg = RenderConfig { stratified_jitter: false, ..render.clone() };
    let e = fit_test_embedding(field, store, &pose, &dataset.intrinsics, &f.image, &rcfg, &cfg.fit)?;
    let (img, _) = render_image(field, store, &pose, &dataset.intrinsics, &rcfg, e.as_deref())?;
    let metrics = ImageMetrics { frame: k, psnr: psnr(&f.image, &img)?, ssim: ssim(&f.image, &img)?, jnb: jnb_score(&img).ok() };
    Ok(FrameEvaluation { frame: k, reference: f.image.clone(), render: img, metrics })
}

/// Evaluates every frame of the configured split. When `refined` is given
/// as `(frame indices, refined poses)`, pose errors against the true poses
/// are included.
pub fn evaluate(
    field: &RadianceField,
    store: &ParamStore,
    dataset: &SceneDataset,
    render: &RenderConfig,
    cfg: &EvalConfig,
    refined: Option<(&[usize], &[Pose])>,
    panels: Option<&Path>,
) -> Result<MetricReport> {
    let frames = dataset.indices(cfg.split);
    let evals: Vec<FrameEvaluation> = frames
        .par_iter()
        .map(|&k| evaluate_frame(field, store, dataset, k, render, cfg))
        .collect::<Result<_>>()?;
    if let Some(dir) = panels {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for e in &evals {
            write_panel(&dir.join(format!("panel_{:04}.png", e.frame)), &e.reference, &e.render)?;
        }
    }
    let mut report = MetricReport::from_images(evals.into_iter().map(|e| e.metrics).collect());
    if let Some((idx, poses)) = refined {
        let truth: Option<Vec<Pose>> = idx.iter().map(|&k| dataset.frames[k].true_pose).collect();
        if let Some(truth) = truth {
            let labels: Vec<Pose> = idx.iter().map(|&k| dataset.frames[k].pose).collect();
            report.label_pose_error = Some(pose_error(&truth, &labels)?);
            report.refined_pose_error = Some(pose_error(&truth, poses)?);
        }
    }
    Ok(report)
}

/// `reference | render | |reference - render|` side by side.
pub fn write_panel(path: &Path, reference: &Image, render: &Image) -> Result<()> {
    reference.same_size(render)?;
    let err = Image {
        width: render.width,
        height: render.height,
        data: reference.data.iter().zip(&render.data).map(|(a, b)| (a - b).abs()).collect(),
    };
    Image::hstack(&[reference, render, &err])?.save_png(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_edge_profile() {
        let img = Image::from_fn(16, 16, |i, _| if i < 8 { [0.1; 3] } else { [0.9; 3] });
        let g: Vec<f64> = img.luma().iter().map(|v| v * 255.0).collect();
        let (width, contrast) = edge_profile(&g, 16, 7, 5, true);
        assert_eq!(width, 1);
        assert!((contrast - 0.8 * 255.0).abs() < 1e-9);
    }

    #[test]
    fn flat_image_has_no_edges() {
        assert!(matches!(jnb_score(&Image::from_fn(32, 32, |_, _| [0.5; 3])), Err(Error::NoEdges)));
    }

    #[test]
    fn ssim_rejects_tiny_images() {
        let a = Image::new(8, 8);
        assert!(matches!(ssim(&a, &a), Err(Error::ImageTooSmall { .. })));
    }
}
