//! Tri-plane feature grids with bilinear lookup.
//!
//! Three axis-aligned planes (xy, xz, yz), each `resolution x resolution x
//! channels`, stored contiguously plane by plane, row (second axis) by
//! column (first axis).

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PlaneFusion {
    /// Per-plane features side by side (`3 * channels` outputs).
    #[default]
    Concat,
    /// Elementwise product across planes (`channels` outputs).
    Product,
}

/// Axis pairs of the xy, xz and yz planes.
pub const PLANE_AXES: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriPlaneSpec {
    pub resolution: usize,
    pub channels: usize,
    pub bbox_min: [f64; 3],
    pub bbox_max: [f64; 3],
    pub fusion: PlaneFusion,
}

/// Corner offsets and bilinear weights for one plane lookup.
#[derive(Debug, Clone, Copy)]
struct Bilinear {
    base: [usize; 4],
    w: [f64; 4],
    fu: f64,
    fv: f64,
    /// Whether the coordinate fell inside the grid along each plane axis.
    inside: [bool; 2],
}

impl TriPlaneSpec {
    pub fn num_params(&self) -> usize {
        3 * self.resolution * self.resolution * self.channels
    }

    pub fn out_dim(&self) -> usize {
        match self.fusion {
            PlaneFusion::Concat => 3 * self.channels,
            PlaneFusion::Product => self.channels,
        }
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.bbox_min[a] && p[a] <= self.bbox_max[a])
    }

    /// Continuous grid coordinate of `x` along `axis`, before clamping.
    fn grid_coord(&self, x: f64, axis: usize) -> f64 {
        let extent = self.bbox_max[axis] - self.bbox_min[axis];
        (x - self.bbox_min[axis]) / extent * (self.resolution - 1) as f64
    }

    fn scale(&self, axis: usize) -> f64 {
        (self.resolution - 1) as f64 / (self.bbox_max[axis] - self.bbox_min[axis])
    }

    fn bilinear(&self, plane: usize, p: [f64; 3]) -> Bilinear {
        let r = self.resolution;
        let c = self.channels;
        let (au, av) = PLANE_AXES[plane];
        let split = |x: f64| -> (usize, f64, bool) {
            let hi = (r - 1) as f64;
            let inside = (0.0..=hi).contains(&x);
            let x = x.clamp(0.0, hi);
            let i0 = (x.floor() as usize).min(r - 2);
            (i0, x - i0 as f64, inside)
        };
        let (u0, fu, iu) = split(self.grid_coord(p[au], au));
        let (v0, fv, iv) = split(self.grid_coord(p[av], av));
        let off = |u: usize, v: usize| ((plane * r + v) * r + u) * c;
        Bilinear {
            base: [off(u0, v0), off(u0 + 1, v0), off(u0, v0 + 1), off(u0 + 1, v0 + 1)],
            w: [(1.0 - fu) * (1.0 - fv), fu * (1.0 - fv), (1.0 - fu) * fv, fu * fv],
            fu,
            fv,
            inside: [iu, iv],
        }
    }

    fn plane_features(&self, planes: &[f64], b: &Bilinear, out: &mut [f64]) {
        let c = self.channels;
        out.fill(0.0);
        for (base, w) in b.base.iter().zip(b.w) {
            for (o, v) in out.iter_mut().zip(&planes[*base..*base + c]) {
                *o += w * v;
            }
        }
    }

    /// Fused features at `p` written to `out` (length [`out_dim`](Self::out_dim)).
    pub fn encode(&self, planes: &[f64], p: [f64; 3], out: &mut [f64]) {
        let c = self.channels;
        match self.fusion {
            PlaneFusion::Concat => {
                for k in 0..3 {
                    let b = self.bilinear(k, p);
                    self.plane_features(planes, &b, &mut out[k * c..(k + 1) * c]);
                }
            }
            PlaneFusion::Product => {
                let mut f = vec![0.0; c];
                out.fill(1.0);
                for k in 0..3 {
                    let b = self.bilinear(k, p);
                    self.plane_features(planes, &b, &mut f);
                    out.iter_mut().zip(&f).for_each(|(o, v)| *o *= v);
                }
            }
        }
    }

    /// Backward of [`encode`](Self::encode). Plane gradients are added into
    /// `gplanes` when given; the position gradient is returned (zero along
    /// axes where the lookup was clamped).
    pub fn encode_backward(
        &self,
        planes: &[f64],
        p: [f64; 3],
        gout: &[f64],
        mut gplanes: Option<&mut [f64]>,
        want_pos: bool,
    ) -> [f64; 3] {
        let c = self.channels;
        let lookups: [Bilinear; 3] = std::array::from_fn(|k| self.bilinear(k, p));
        // Upstream gradient with respect to each plane's interpolated features.
        let mut gfeat = vec![0.0; 3 * c];
        match self.fusion {
            PlaneFusion::Concat => gfeat.copy_from_slice(gout),
            PlaneFusion::Product => {
                let mut f = vec![0.0; 3 * c];
                for k in 0..3 {
                    self.plane_features(planes, &lookups[k], &mut f[k * c..(k + 1) * c]);
                }
                for k in 0..3 {
                    for ch in 0..c {
                        let others: f64 = (0..3).filter(|&o| o != k).map(|o| f[o * c + ch]).product();
                        gfeat[k * c + ch] = gout[ch] * others;
                    }
                }
            }
        }
        let mut gpos = [0.0; 3];
        for (k, b) in lookups.iter().enumerate() {
            let gf = &gfeat[k * c..(k + 1) * c];
            if let Some(gp) = gplanes.as_deref_mut() {
                for (base, w) in b.base.iter().zip(b.w) {
                    for (d, g) in gp[*base..*base + c].iter_mut().zip(gf) {
                        *d += w * g;
                    }
                }
            }
            if want_pos {
                let [c00, c10, c01, c11] = b.base;
                let mut du = 0.0;
                let mut dv = 0.0;
                for ch in 0..c {
                    let (f00, f10, f01, f11) =
                        (planes[c00 + ch], planes[c10 + ch], planes[c01 + ch], planes[c11 + ch]);
                    du += gf[ch] * ((1.0 - b.fv) * (f10 - f00) + b.fv * (f11 - f01));
                    dv += gf[ch] * ((1.0 - b.fu) * (f01 - f00) + b.fu * (f11 - f10));
                }
                let (au, av) = PLANE_AXES[k];
                if b.inside[0] {
                    gpos[au] += du * self.scale(au);
                }
                if b.inside[1] {
                    gpos[av] += dv * self.scale(av);
                }
            }
        }
        gpos
    }
}
