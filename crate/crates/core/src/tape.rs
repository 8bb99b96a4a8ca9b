//! Vector-level reverse-mode tape.
//!
//! Every node holds a row-major matrix (`rows x cols`, flattened) that is
//! computed eagerly when the node is recorded. Each operation carries a
//! hand-written backward rule; [`Tape::backward`] walks the nodes in reverse
//! recording order and accumulates parameter gradients into a
//! [`Gradients`] buffer and leaf gradients into the tape itself.
//!
//! Parameter nodes do not copy their values: they borrow them from the
//! [`ParamStore`] for the lifetime of the tape.

use crate::error::{Error, Result};
use crate::field::sh;
use crate::field::triplane::TriPlaneSpec;
use crate::params::{GroupId, Gradients, ParamStore};
use crate::render;
use crate::se3::{correction_scalar, quat_rotate, Quaternion, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(GroupId),
    Linear { x: NodeId, w: NodeId, b: Option<NodeId>, inp: usize, out: usize },
    Add(NodeId, NodeId),
    Relu(NodeId),
    Softplus(NodeId),
    Sigmoid(NodeId),
    SliceCols { x: NodeId, start: usize },
    ConcatCols(Vec<NodeId>),
    /// Rows of `table` (row width `dim`) multiplied by `w` (`dim x out`),
    /// gathered by `idx`.
    EmbedProject { table: NodeId, w: NodeId, idx: Vec<u32>, dim: usize },
    TriPlane { pos: NodeId, planes: NodeId, spec: TriPlaneSpec },
    ShEncode { dirs: NodeId, degree: usize },
    /// Rays `[origin, dir]` refined by per-image corrections.
    RefineRays { rays: NodeId, dq: NodeId, dt: NodeId, image: Vec<u32> },
    /// `origin + depth * dir` for each (ray, depth) sample.
    SamplePoints { rays: NodeId, ray_of: Vec<u32>, depth: Vec<f64> },
    /// Per-sample copy of the ray direction.
    SampleDirs { rays: NodeId, ray_of: Vec<u32> },
    Composite { sigma: NodeId, rgb: NodeId, segments: Vec<(usize, usize)>, deltas: Vec<f64>, background: [f64; 3] },
    /// Compositing with fixed weights: `sum w_i c_i + bias`.
    WeightedColor { rgb: NodeId, segments: Vec<(usize, usize)>, weights: Vec<f64> },
    PhotometricLoss { pred: NodeId, target: Vec<f64>, mask: Vec<f64>, mask_weight: f64, normalizer: f64 },
    SumSquares(NodeId),
    Dot { x: NodeId, weights: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Vec<f64>,
    cols: usize,
    requires_grad: bool,
}

pub struct Tape<'s> {
    store: Option<&'s ParamStore>,
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Vec<f64>>>,
    consumed: bool,
}

impl<'s> Default for Tape<'s> {
    fn default() -> Self {
        Tape::new()
    }
}

impl<'s> Tape<'s> {
    pub fn new() -> Self {
        Tape { store: None, nodes: Vec::new(), leaf_grads: Vec::new(), consumed: false }
    }

    pub fn with_store(store: &'s ParamStore) -> Self {
        Tape { store: Some(store), ..Tape::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        let node = &self.nodes[id.0];
        match node.op {
            Op::Param(g) => self.store.expect("param node without store").value(g),
            _ => &node.value,
        }
    }

    pub fn cols(&self, id: NodeId) -> usize {
        self.nodes[id.0].cols
    }

    pub fn rows(&self, id: NodeId) -> usize {
        let c = self.cols(id);
        if c == 0 {
            0
        } else {
            self.value(id).len() / c
        }
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Gradient of a leaf recorded with `requires_grad`, after backward.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.leaf_grads.get(id.0).and_then(|g| g.as_deref())
    }

    fn push(&mut self, op: Op, value: Vec<f64>, cols: usize, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { op, value, cols, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&i| self.nodes[i.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Vec<f64>, cols: usize, requires_grad: bool) -> NodeId {
        debug_assert!(cols > 0 && value.len() % cols == 0);
        self.push(Op::Leaf, value, cols, requires_grad)
    }

    pub fn constant(&mut self, value: Vec<f64>, cols: usize) -> NodeId {
        self.leaf(value, cols, false)
    }

    /// Parameter group as a node. `cols` fixes the row width used by
    /// downstream ops; `trainable = false` freezes it.
    pub fn param(&mut self, group: GroupId, cols: usize, trainable: bool) -> NodeId {
        self.push(Op::Param(group), Vec::new(), cols, trainable)
    }

    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let inp = self.cols(x);
        let out = self.cols(w);
        if self.value(w).len() != inp * out {
            return Err(Error::Dimension(format!(
                "linear: input width {inp}, weight has {} entries for {out} outputs",
                self.value(w).len()
            )));
        }
        if let Some(b) = b {
            if self.value(b).len() != out {
                return Err(Error::Dimension("linear: bias width".into()));
            }
        }
        let n = self.rows(x);
        let mut y = vec![0.0; n * out];
        if let Some(b) = b {
            let bv = self.value(b);
            for row in y.chunks_exact_mut(out) {
                row.copy_from_slice(bv);
            }
        }
        gemm(n, inp, out, self.value(x), false, self.value(w), false, &mut y, if b.is_some() { 1.0 } else { 0.0 });
        let mut ids = vec![x, w];
        ids.extend(b);
        let rg = self.rg(&ids);
        Ok(self.push(Op::Linear { x, w, b, inp, out }, y, out, rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).len() != self.value(b).len() {
            return Err(Error::Dimension("add: length mismatch".into()));
        }
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::Add(a, b), v, self.cols(a), rg))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).iter().map(|&a| a.max(0.0)).collect();
        let rg = self.rg(&[x]);
        self.push(Op::Relu(x), v, self.cols(x), rg)
    }

    pub fn softplus(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).iter().map(|&a| softplus(a)).collect();
        let rg = self.rg(&[x]);
        self.push(Op::Softplus(x), v, self.cols(x), rg)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).iter().map(|&a| sigmoid(a)).collect();
        let rg = self.rg(&[x]);
        self.push(Op::Sigmoid(x), v, self.cols(x), rg)
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let c = self.cols(x);
        if start + len > c || len == 0 {
            return Err(Error::Dimension(format!("slice {start}+{len} of width {c}")));
        }
        let mut v = Vec::with_capacity(self.rows(x) * len);
        for row in self.value(x).chunks_exact(c) {
            v.extend_from_slice(&row[start..start + len]);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Op::SliceCols { x, start }, v, len, rg))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let n = self.rows(parts[0]);
        if parts.iter().any(|&p| self.rows(p) != n) {
            return Err(Error::Dimension("concat: row count mismatch".into()));
        }
        let width: usize = parts.iter().map(|&p| self.cols(p)).sum();
        let mut v = Vec::with_capacity(n * width);
        for r in 0..n {
            for &p in parts {
                let c = self.cols(p);
                v.extend_from_slice(&self.value(p)[r * c..(r + 1) * c]);
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(Op::ConcatCols(parts.to_vec()), v, width, rg))
    }

    pub fn embed_project(&mut self, table: NodeId, w: NodeId, idx: Vec<u32>) -> Result<NodeId> {
        let dim = self.cols(table);
        let out = self.cols(w);
        if self.value(w).len() != dim * out {
            return Err(Error::Dimension("embed_project: weight shape".into()));
        }
        let rows = self.rows(table);
        if idx.iter().any(|&i| i as usize >= rows) {
            return Err(Error::Dimension("embed_project: index out of range".into()));
        }
        let mut proj = vec![0.0; rows * out];
        gemm(rows, dim, out, self.value(table), false, self.value(w), false, &mut proj, 0.0);
        let mut v = Vec::with_capacity(idx.len() * out);
        for &i in &idx {
            v.extend_from_slice(&proj[i as usize * out..(i as usize + 1) * out]);
        }
        let rg = self.rg(&[table, w]);
        Ok(self.push(Op::EmbedProject { table, w, idx, dim }, v, out, rg))
    }

    pub fn triplane(&mut self, pos: NodeId, planes: NodeId, spec: &TriPlaneSpec) -> Result<NodeId> {
        if self.cols(pos) != 3 || self.value(planes).len() != spec.num_params() {
            return Err(Error::Dimension("triplane: positions or plane size".into()));
        }
        let out = spec.out_dim();
        let n = self.rows(pos);
        let mut v = vec![0.0; n * out];
        let planes_v = self.value(planes);
        for (p, o) in self.value(pos).chunks_exact(3).zip(v.chunks_exact_mut(out)) {
            spec.encode(planes_v, [p[0], p[1], p[2]], o);
        }
        let rg = self.rg(&[pos, planes]);
        Ok(self.push(Op::TriPlane { pos, planes, spec: spec.clone() }, v, out, rg))
    }

    pub fn sh_encode(&mut self, dirs: NodeId, degree: usize) -> Result<NodeId> {
        if self.cols(dirs) != 3 || !(1..=sh::MAX_DEGREE).contains(&degree) {
            return Err(Error::Dimension("sh_encode: needs 3-column directions".into()));
        }
        let out = degree * degree;
        let mut v = vec![0.0; self.rows(dirs) * out];
        for (d, o) in self.value(dirs).chunks_exact(3).zip(v.chunks_exact_mut(out)) {
            sh::eval(degree, [d[0], d[1], d[2]], o);
        }
        let rg = self.rg(&[dirs]);
        Ok(self.push(Op::ShEncode { dirs, degree }, v, out, rg))
    }

    /// `rays` is `n x 6` (origin, direction); `dq` and `dt` are `N x 3`
    /// tables indexed by `image`.
    pub fn refine_rays(&mut self, rays: NodeId, dq: NodeId, dt: NodeId, image: Vec<u32>) -> Result<NodeId> {
        if self.cols(rays) != 6 || self.rows(rays) != image.len() {
            return Err(Error::Dimension("refine_rays: ray layout".into()));
        }
        let n_img = self.value(dq).len() / 3;
        if self.value(dt).len() != n_img * 3 || image.iter().any(|&a| a as usize >= n_img) {
            return Err(Error::Dimension("refine_rays: correction tables".into()));
        }
        let mut rots = Vec::with_capacity(n_img);
        for v in self.value(dq).chunks_exact(3) {
            let vec = Vec3::new(v[0], v[1], v[2]);
            rots.push(Quaternion::from_scalar_vector(correction_scalar(vec)?, vec));
        }
        let dtv = self.value(dt);
        let mut out = Vec::with_capacity(image.len() * 6);
        for (r, &a) in self.value(rays).chunks_exact(6).zip(&image) {
            let a = a as usize;
            let d = quat_rotate(rots[a], Vec3::new(r[3], r[4], r[5]));
            out.extend_from_slice(&[r[0] + dtv[3 * a], r[1] + dtv[3 * a + 1], r[2] + dtv[3 * a + 2], d.x, d.y, d.z]);
        }
        let rg = self.rg(&[rays, dq, dt]);
        Ok(self.push(Op::RefineRays { rays, dq, dt, image }, out, 6, rg))
    }

    pub fn sample_points(&mut self, rays: NodeId, ray_of: Vec<u32>, depth: Vec<f64>) -> Result<NodeId> {
        if self.cols(rays) != 6 || ray_of.len() != depth.len() {
            return Err(Error::Dimension("sample_points".into()));
        }
        let rv = self.value(rays);
        let mut v = Vec::with_capacity(3 * depth.len());
        for (&r, &t) in ray_of.iter().zip(&depth) {
            let r = &rv[6 * r as usize..6 * r as usize + 6];
            v.extend_from_slice(&[r[0] + t * r[3], r[1] + t * r[4], r[2] + t * r[5]]);
        }
        let rg = self.rg(&[rays]);
        Ok(self.push(Op::SamplePoints { rays, ray_of, depth }, v, 3, rg))
    }

    pub fn sample_dirs(&mut self, rays: NodeId, ray_of: Vec<u32>) -> Result<NodeId> {
        if self.cols(rays) != 6 {
            return Err(Error::Dimension("sample_dirs".into()));
        }
        let rv = self.value(rays);
        let mut v = Vec::with_capacity(3 * ray_of.len());
        for &r in &ray_of {
            v.extend_from_slice(&rv[6 * r as usize + 3..6 * r as usize + 6]);
        }
        let rg = self.rg(&[rays]);
        Ok(self.push(Op::SampleDirs { rays, ray_of }, v, 3, rg))
    }

    /// Emission-absorption compositing. `segments[r]` is the half-open sample
    /// range of ray `r`; the output is `rays x 4` (rgb, opacity).
    pub fn composite(
        &mut self,
        sigma: NodeId,
        rgb: NodeId,
        segments: Vec<(usize, usize)>,
        deltas: Vec<f64>,
        background: [f64; 3],
    ) -> Result<NodeId> {
        if self.cols(sigma) != 1 || self.cols(rgb) != 3 || self.rows(rgb) != self.rows(sigma) || deltas.len() != self.rows(sigma) {
            return Err(Error::Dimension("composite: sample arrays".into()));
        }
        let sv = self.value(sigma);
        let cv = self.value(rgb);
        let mut out = Vec::with_capacity(4 * segments.len());
        for &(a, b) in &segments {
            let (c, o) = render::composite_slices(&sv[a..b], &cv[3 * a..3 * b], &deltas[a..b], background)?;
            out.extend_from_slice(&[c[0], c[1], c[2], o]);
        }
        let rg = self.rg(&[sigma, rgb]);
        Ok(self.push(Op::Composite { sigma, rgb, segments, deltas, background }, out, 4, rg))
    }

    /// Pixel colors `sum_i w_i c_i + bias` with fixed weights; output is
    /// `rays x 3`.
    pub fn weighted_color(
        &mut self,
        rgb: NodeId,
        segments: Vec<(usize, usize)>,
        weights: Vec<f64>,
        bias: Vec<[f64; 3]>,
    ) -> Result<NodeId> {
        if self.cols(rgb) != 3 || weights.len() != self.rows(rgb) || bias.len() != segments.len() {
            return Err(Error::Dimension("weighted_color".into()));
        }
        let cv = self.value(rgb);
        let mut out = Vec::with_capacity(3 * segments.len());
        for (&(a, b), bias) in segments.iter().zip(&bias) {
            let mut acc = *bias;
            for i in a..b {
                for (k, acc) in acc.iter_mut().enumerate() {
                    *acc += weights[i] * cv[3 * i + k];
                }
            }
            out.extend_from_slice(&acc);
        }
        let rg = self.rg(&[rgb]);
        Ok(self.push(Op::WeightedColor { rgb, segments, weights }, out, 3, rg))
    }

    /// `sum ||rgb - target||^2 / (3 normalizer) + mask_weight * sum (opacity -
    /// mask)^2 / normalizer`. `pred` is `rays x 4` or `rays x 3` (then the
    /// mask term is dropped).
    pub fn photometric_loss(
        &mut self,
        pred: NodeId,
        target: Vec<f64>,
        mask: Vec<f64>,
        mask_weight: f64,
        normalizer: f64,
    ) -> Result<NodeId> {
        let c = self.cols(pred);
        let n = self.rows(pred);
        if !(c == 3 || c == 4) || target.len() != 3 * n || (c == 4 && mask.len() != n) {
            return Err(Error::Dimension("photometric_loss".into()));
        }
        let pv = self.value(pred);
        let mut rgb_sq = 0.0;
        let mut mask_sq = 0.0;
        for r in 0..n {
            for k in 0..3 {
                let e = pv[r * c + k] - target[3 * r + k];
                rgb_sq += e * e;
            }
            if c == 4 {
                let e = pv[r * c + 3] - mask[r];
                mask_sq += e * e;
            }
        }
        let loss = rgb_sq / (3.0 * normalizer) + mask_weight * mask_sq / normalizer;
        let rg = self.rg(&[pred]);
        Ok(self.push(Op::PhotometricLoss { pred, target, mask, mask_weight, normalizer }, vec![loss], 1, rg))
    }

    pub fn sum_squares(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).iter().map(|a| a * a).sum();
        let rg = self.rg(&[x]);
        self.push(Op::SumSquares(x), vec![s], 1, rg)
    }

    /// Scalar `sum_i weights_i x_i`.
    pub fn dot(&mut self, x: NodeId, weights: Vec<f64>) -> Result<NodeId> {
        if weights.len() != self.value(x).len() {
            return Err(Error::Dimension("dot: length".into()));
        }
        let s = self.value(x).iter().zip(&weights).map(|(a, b)| a * b).sum();
        let rg = self.rg(&[x]);
        Ok(self.push(Op::Dot { x, weights }, vec![s], 1, rg))
    }

    /// Reverse pass from the scalar `loss`. Parameter gradients are added to
    /// `grads`; leaf gradients become available through [`Tape::grad`]. A
    /// tape can be differentiated once.
    pub fn backward(&mut self, loss: NodeId, grads: &mut Gradients) -> Result<()> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let len = self.value(loss).len();
        if len != 1 {
            return Err(Error::NonScalarLoss(len));
        }
        self.consumed = true;
        let mut g: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            self.leaf_grads = g;
            return Ok(());
        }
        g[loss.0] = Some(vec![1.0]);
        for k in (0..=loss.0).rev() {
            if !self.nodes[k].requires_grad {
                continue;
            }
            let Some(gy) = g[k].take() else { continue };
            let node = &self.nodes[k];
            match &node.op {
                Op::Leaf => {
                    g[k] = Some(gy);
                }
                Op::Param(group) => {
                    let buf = grads.group_mut(*group);
                    for (a, b) in buf.iter_mut().zip(&gy) {
                        *a += b;
                    }
                }
                _ => self.backward_op(k, &gy, &mut g, grads),
            }
        }
        self.leaf_grads = g;
        Ok(())
    }

    fn backward_op(&self, k: usize, gy: &[f64], g: &mut [Option<Vec<f64>>], grads: &mut Gradients) {
        let node = &self.nodes[k];
        let y = &node.value;
        match &node.op {
            Op::Leaf | Op::Param(_) => unreachable!(),
            Op::Linear { x, w, b, inp, out } => {
                let n = gy.len() / out;
                if self.requires_grad(*x) {
                    let gx = self.grad_slot(*x, g, grads);
                    gemm(n, *out, *inp, gy, false, self.value(*w), true, gx, 1.0);
                }
                if self.requires_grad(*w) {
                    let xv = self.value(*x);
                    let gw = self.grad_slot(*w, g, grads);
                    gemm_at_b(n, *inp, *out, xv, gy, gw);
                }
                if let Some(b) = b {
                    if self.requires_grad(*b) {
                        let gb = self.grad_slot(*b, g, grads);
                        for row in gy.chunks_exact(*out) {
                            for (a, r) in gb.iter_mut().zip(row) {
                                *a += r;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for id in [*a, *b] {
                    if self.requires_grad(id) {
                        let ga = self.grad_slot(id, g, grads);
                        ga.iter_mut().zip(gy).for_each(|(s, d)| *s += d);
                    }
                }
            }
            Op::Relu(x) => {
                let gx = self.grad_slot(*x, g, grads);
                for ((s, d), yv) in gx.iter_mut().zip(gy).zip(y) {
                    if *yv > 0.0 {
                        *s += d;
                    }
                }
            }
            Op::Softplus(x) => {
                let xv = self.value(*x);
                let gx = self.grad_slot(*x, g, grads);
                for ((s, d), a) in gx.iter_mut().zip(gy).zip(xv) {
                    *s += d * sigmoid(*a);
                }
            }
            Op::Sigmoid(x) => {
                let gx = self.grad_slot(*x, g, grads);
                for ((s, d), yv) in gx.iter_mut().zip(gy).zip(y) {
                    *s += d * yv * (1.0 - yv);
                }
            }
            Op::SliceCols { x, start } => {
                let c = self.cols(*x);
                let len = node.cols;
                let gx = self.grad_slot(*x, g, grads);
                for (row, grow) in gx.chunks_exact_mut(c).zip(gy.chunks_exact(len)) {
                    for (s, d) in row[*start..*start + len].iter_mut().zip(grow) {
                        *s += d;
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let width = node.cols;
                let mut off = 0;
                for &p in parts {
                    let c = self.cols(p);
                    if self.requires_grad(p) {
                        let gp = self.grad_slot(p, g, grads);
                        for (row, grow) in gp.chunks_exact_mut(c).zip(gy.chunks_exact(width)) {
                            for (s, d) in row.iter_mut().zip(&grow[off..off + c]) {
                                *s += d;
                            }
                        }
                    }
                    off += c;
                }
            }
            Op::EmbedProject { table, w, idx, dim } => {
                let out = node.cols;
                let rows = self.rows(*table);
                // Sum upstream gradients per table row first.
                let mut per_row = vec![0.0; rows * out];
                for (&i, grow) in idx.iter().zip(gy.chunks_exact(out)) {
                    let dst = &mut per_row[i as usize * out..(i as usize + 1) * out];
                    dst.iter_mut().zip(grow).for_each(|(s, d)| *s += d);
                }
                if self.requires_grad(*table) {
                    let gt = self.grad_slot(*table, g, grads);
                    gemm(rows, out, *dim, &per_row, false, self.value(*w), true, gt, 1.0);
                }
                if self.requires_grad(*w) {
                    let tv = self.value(*table);
                    let gw = self.grad_slot(*w, g, grads);
                    gemm_at_b(rows, *dim, out, tv, &per_row, gw);
                }
            }
            Op::TriPlane { pos, planes, spec } => {
                let out = node.cols;
                let pv = self.value(*pos);
                let plv = self.value(*planes);
                let want_pos = self.requires_grad(*pos);
                let want_planes = self.requires_grad(*planes);
                let mut gpos = if want_pos { Some(vec![0.0; pv.len()]) } else { None };
                {
                    let mut gpl = if want_planes { Some(self.grad_slot(*planes, g, grads)) } else { None };
                    for (r, (p, go)) in pv.chunks_exact(3).zip(gy.chunks_exact(out)).enumerate() {
                        let gp = spec.encode_backward(plv, [p[0], p[1], p[2]], go, gpl.as_deref_mut(), want_pos);
                        if let Some(gpos) = gpos.as_mut() {
                            gpos[3 * r..3 * r + 3].copy_from_slice(&gp);
                        }
                    }
                }
                if let Some(gp) = gpos {
                    let dst = self.grad_slot(*pos, g, grads);
                    dst.iter_mut().zip(&gp).for_each(|(s, d)| *s += d);
                }
            }
            Op::ShEncode { dirs, degree } => {
                let out = node.cols;
                let dv = self.value(*dirs);
                let mut tmp = vec![0.0; dv.len()];
                for (r, (d, go)) in dv.chunks_exact(3).zip(gy.chunks_exact(out)).enumerate() {
                    let gd = sh::backward(*degree, [d[0], d[1], d[2]], go);
                    tmp[3 * r..3 * r + 3].copy_from_slice(&gd);
                }
                let gx = self.grad_slot(*dirs, g, grads);
                gx.iter_mut().zip(&tmp).for_each(|(s, d)| *s += d);
            }
            Op::RefineRays { rays, dq, dt, image } => {
                let rv = self.value(*rays);
                if self.requires_grad(*dt) {
                    let gdt = self.grad_slot(*dt, g, grads);
                    for (go, &a) in gy.chunks_exact(6).zip(image) {
                        for c in 0..3 {
                            gdt[3 * a as usize + c] += go[c];
                        }
                    }
                }
                if self.requires_grad(*dq) {
                    let dqv = self.value(*dq).to_vec();
                    let gdq = self.grad_slot(*dq, g, grads);
                    for ((go, r), &a) in gy.chunks_exact(6).zip(rv.chunks_exact(6)).zip(image) {
                        let a = a as usize;
                        let v = Vec3::new(dqv[3 * a], dqv[3 * a + 1], dqv[3 * a + 2]);
                        let gv = rotation_vector_grad(v, Vec3::new(r[3], r[4], r[5]), Vec3::new(go[3], go[4], go[5]));
                        gdq[3 * a] += gv.x;
                        gdq[3 * a + 1] += gv.y;
                        gdq[3 * a + 2] += gv.z;
                    }
                }
                if self.requires_grad(*rays) {
                    let dqv = self.value(*dq).to_vec();
                    let gr = self.grad_slot(*rays, g, grads);
                    for ((go, grow), &a) in gy.chunks_exact(6).zip(gr.chunks_exact_mut(6)).zip(image) {
                        let a = a as usize;
                        let v = Vec3::new(dqv[3 * a], dqv[3 * a + 1], dqv[3 * a + 2]);
                        let w = correction_scalar(v).unwrap_or(0.0);
                        // Transpose of a rotation is the inverse rotation.
                        let inv = Quaternion::from_scalar_vector(w, -v);
                        let gd = quat_rotate(inv, Vec3::new(go[3], go[4], go[5]));
                        for c in 0..3 {
                            grow[c] += go[c];
                        }
                        grow[3] += gd.x;
                        grow[4] += gd.y;
                        grow[5] += gd.z;
                    }
                }
            }
            Op::SamplePoints { rays, ray_of, depth } => {
                let gr = self.grad_slot(*rays, g, grads);
                for ((go, &r), &t) in gy.chunks_exact(3).zip(ray_of).zip(depth) {
                    let base = 6 * r as usize;
                    for c in 0..3 {
                        gr[base + c] += go[c];
                        gr[base + 3 + c] += t * go[c];
                    }
                }
            }
            Op::SampleDirs { rays, ray_of } => {
                let gr = self.grad_slot(*rays, g, grads);
                for (go, &r) in gy.chunks_exact(3).zip(ray_of) {
                    let base = 6 * r as usize + 3;
                    for c in 0..3 {
                        gr[base + c] += go[c];
                    }
                }
            }
            Op::Composite { sigma, rgb, segments, deltas, background } => {
                let sv = self.value(*sigma);
                let cv = self.value(*rgb);
                let mut gs = vec![0.0; sv.len()];
                let mut gc = vec![0.0; cv.len()];
                for (r, &(a, b)) in segments.iter().enumerate() {
                    let go = [gy[4 * r], gy[4 * r + 1], gy[4 * r + 2], gy[4 * r + 3]];
                    render::composite_backward_slices(
                        &sv[a..b],
                        &cv[3 * a..3 * b],
                        &deltas[a..b],
                        *background,
                        go,
                        &mut gs[a..b],
                        &mut gc[3 * a..3 * b],
                    );
                }
                if self.requires_grad(*sigma) {
                    let dst = self.grad_slot(*sigma, g, grads);
                    dst.iter_mut().zip(&gs).for_each(|(s, d)| *s += d);
                }
                if self.requires_grad(*rgb) {
                    let dst = self.grad_slot(*rgb, g, grads);
                    dst.iter_mut().zip(&gc).for_each(|(s, d)| *s += d);
                }
            }
            Op::WeightedColor { rgb, segments, weights } => {
                let gc = self.grad_slot(*rgb, g, grads);
                for (r, &(a, b)) in segments.iter().enumerate() {
                    for i in a..b {
                        for c in 0..3 {
                            gc[3 * i + c] += weights[i] * gy[3 * r + c];
                        }
                    }
                }
            }
            Op::PhotometricLoss { pred, target, mask, mask_weight, normalizer } => {
                let c = self.cols(*pred);
                let pv = self.value(*pred).to_vec();
                let gp = self.grad_slot(*pred, g, grads);
                let n = pv.len() / c;
                for r in 0..n {
                    for k in 0..3 {
                        gp[r * c + k] += gy[0] * 2.0 * (pv[r * c + k] - target[3 * r + k]) / (3.0 * normalizer);
                    }
                    if c == 4 {
                        gp[r * c + 3] += gy[0] * 2.0 * mask_weight * (pv[r * c + 3] - mask[r]) / normalizer;
                    }
                }
            }
            Op::SumSquares(x) => {
                let xv = self.value(*x).to_vec();
                let gx = self.grad_slot(*x, g, grads);
                gx.iter_mut().zip(&xv).for_each(|(s, a)| *s += 2.0 * a * gy[0]);
            }
            Op::Dot { x, weights } => {
                let gx = self.grad_slot(*x, g, grads);
                gx.iter_mut().zip(weights).for_each(|(s, w)| *s += w * gy[0]);
            }
        }
    }

    /// Mutable gradient destination for `id`: the group buffer for
    /// parameters, a lazily allocated slot otherwise.
    fn grad_slot<'g>(&self, id: NodeId, g: &'g mut [Option<Vec<f64>>], grads: &'g mut Gradients) -> &'g mut [f64] {
        match self.nodes[id.0].op {
            Op::Param(group) => grads.group_mut(group),
            _ => {
                let len = self.value(id).len();
                g[id.0].get_or_insert_with(|| vec![0.0; len])
            }
        }
    }
}

/// Gradient of `g . R(v) d` with respect to the correction vector part `v`,
/// where `R(v)` rotates by the unit quaternion `(sqrt(1 - |v|^2), v)`.
pub(crate) fn rotation_vector_grad(v: Vec3, d: Vec3, g: Vec3) -> Vec3 {
    let w = correction_scalar(v).unwrap_or(f64::MIN_POSITIVE);
    // R(v) d = d + 2w (v x d) + 2 v (v.d) - 2 d |v|^2
    let dxg = d.cross(g);
    let term_a = v * (-2.0 * v.dot(dxg) / w) + dxg * (2.0 * w);
    let term_b = g * (2.0 * v.dot(d)) + d * (2.0 * v.dot(g));
    let term_c = v * (-4.0 * d.dot(g));
    term_a + term_b + term_c
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `c = op(a) * op(b) + beta * c` for row-major `a` (`m x k` after op) and
/// `b` (`k x n` after op).
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64], beta: f64) {
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the slices cover the strided extents checked above.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// `c += a^T b` with `a` stored `rows x m`, `b` stored `rows x n`.
fn gemm_at_b(rows: usize, m: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    gemm(m, rows, n, a, true, b, false, c, 1.0);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{GroupKind, GroupSpec};

    fn store_with(name: &str, vals: Vec<f64>) -> (ParamStore, GroupId) {
        let mut s = ParamStore::new();
        let n = vals.len();
        let id = s
            .add_group(
                GroupSpec {
                    name: name.into(),
                    shape: vec![n],
                    kind: GroupKind::Field,
                    lr_factor: 1.0,
                    weight_decay: 0.0,
                    max_grad_norm: None,
                },
                vals,
            )
            .unwrap();
        (s, id)
    }

    #[test]
    fn square_gradient() {
        let (s, id) = store_with("p", vec![3.0]);
        let mut grads = s.new_gradients();
        let mut t = Tape::with_store(&s);
        let p = t.param(id, 1, true);
        let l = t.sum_squares(p);
        t.backward(l, &mut grads).unwrap();
        assert_eq!(grads.group(id), &[6.0]);
    }

    #[test]
    fn constant_loss_has_zero_gradients() {
        let (s, id) = store_with("p", vec![3.0, 1.0]);
        let mut grads = s.new_gradients();
        let mut t = Tape::with_store(&s);
        let _p = t.param(id, 1, true);
        let c = t.constant(vec![2.0], 1);
        let l = t.sum_squares(c);
        t.backward(l, &mut grads).unwrap();
        assert_eq!(grads.group(id), &[0.0, 0.0]);
    }

    #[test]
    fn double_backward_and_non_scalar_are_errors() {
        let (s, id) = store_with("p", vec![1.0, 2.0]);
        let mut grads = s.new_gradients();
        let mut t = Tape::with_store(&s);
        let p = t.param(id, 1, true);
        assert!(matches!(t.backward(p, &mut grads), Err(Error::NonScalarLoss(2))));
        let l = t.sum_squares(p);
        t.backward(l, &mut grads).unwrap();
        assert!(matches!(t.backward(l, &mut grads), Err(Error::TapeConsumed)));
    }

    #[test]
    fn gradients_accumulate() {
        let (s, id) = store_with("p", vec![2.0]);
        let mut grads = s.new_gradients();
        for _ in 0..2 {
            let mut t = Tape::with_store(&s);
            let p = t.param(id, 1, true);
            let l = t.sum_squares(p);
            t.backward(l, &mut grads).unwrap();
        }
        assert_eq!(grads.group(id), &[8.0]);
    }

    #[test]
    fn linear_matches_manual_product() {
        let mut t = Tape::new();
        let x = t.leaf(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 3, true);
        let w = t.leaf(vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0], 2, true);
        let b = t.leaf(vec![0.5, -0.5], 2, false);
        let y = t.linear(x, w, Some(b)).unwrap();
        assert_eq!(t.value(y), &[4.5, 4.5, 10.5, 10.5]);
        let l = t.dot(y, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let mut g = ParamStore::new().new_gradients();
        t.backward(l, &mut g).unwrap();
        // dL/dx row0 = W[:,0], row1 = W[:,1]
        assert_eq!(t.grad(x).unwrap(), &[1.0, 0.0, 1.0, 0.0, 1.0, 1.0]);
        assert_eq!(t.grad(w).unwrap(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert!(t.grad(b).is_none());
    }

    #[test]
    fn mismatched_linear_is_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(vec![1.0, 2.0], 2, false);
        let w = t.leaf(vec![1.0; 6], 2, false);
        assert!(matches!(t.linear(x, w, None), Err(Error::Dimension(_))));
    }

    #[test]
    fn rotation_vector_grad_matches_differences() {
        let v = Vec3::new(0.1, -0.2, 0.15);
        let d = Vec3::new(0.3, 0.4, -0.866).normalize();
        let g = Vec3::new(0.7, -0.1, 0.2);
        let f = |v: Vec3| {
            let q = Quaternion::from_scalar_vector(correction_scalar(v).unwrap(), v);
            quat_rotate(q, d).dot(g)
        };
        let an = rotation_vector_grad(v, d, g);
        let h = 1e-6;
        for axis in 0..3 {
            let mut e = [0.0; 3];
            e[axis] = h;
            let e = Vec3::from_array(e);
            let fd = (f(v + e) - f(v - e)) / (2.0 * h);
            assert!((fd - an.get(axis)).abs() < 1e-8, "{axis}: {fd} vs {}", an.get(axis));
        }
    }
}
