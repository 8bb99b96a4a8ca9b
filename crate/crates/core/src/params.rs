//! Flat learnable-parameter storage, Adam updates with per-group learning-rate
//! factors, and the binary checkpoint format.
//!
//! Checkpoint layout (all integers and floats little-endian):
//!
//! ```text
//! magic    8 bytes  "RADFCKPT"
//! version  u32      currently 1
//! hdr_len  u64      byte length of the JSON header that follows
//! header   JSON     {"step", "meta", "groups": [{name, shape, kind, lr_factor,
//!                    weight_decay, max_grad_norm}]}
//! payload  f64[]    for each group in header order: values, first moments,
//!                   second moments (each `prod(shape)` entries)
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on the learning-rate factor of any pose-correction group.
pub const MAX_CORRECTION_LR_FACTOR: f64 = 0.01;

/// Largest admissible norm of a correction vector part after projection.
pub const DEFAULT_MAX_CORRECTION_NORM: f64 = 0.99;

const MAGIC: &[u8; 8] = b"RADFCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKind {
    Field,
    Embedding,
    CorrectionRotation,
    CorrectionTranslation,
}

impl GroupKind {
    pub fn is_correction(self) -> bool {
        matches!(self, GroupKind::CorrectionRotation | GroupKind::CorrectionTranslation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroupId(pub(crate) usize);

impl GroupId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: GroupKind,
    pub lr_factor: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub max_grad_norm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGroup {
    pub spec: GroupSpec,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl ParamGroup {
    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Dense gradient buffers laid out like the groups of a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub(crate) bufs: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn group(&self, id: GroupId) -> &[f64] {
        &self.bufs[id.0]
    }

    pub fn group_mut(&mut self, id: GroupId) -> &mut [f64] {
        &mut self.bufs[id.0]
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.bufs.iter_mut().zip(&other.bufs) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    /// Pairwise tree reduction in index order. The summation order depends
    /// only on the number of parts, never on scheduling.
    pub fn reduce_tree(mut parts: Vec<Gradients>) -> Option<Gradients> {
        while parts.len() > 1 {
            let mut next = Vec::with_capacity(parts.len().div_ceil(2));
            let mut it = parts.into_iter();
            while let Some(mut a) = it.next() {
                if let Some(b) = it.next() {
                    a.add_assign(&b);
                }
                next.push(a);
            }
            parts = next;
        }
        parts.pop()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    groups: Vec<ParamGroup>,
    step: u64,
    pub adam: AdamConfig,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add_group(&mut self, spec: GroupSpec, value: Vec<f64>) -> Result<GroupId> {
        let expected: usize = spec.shape.iter().product();
        if expected != value.len() {
            return Err(Error::Dimension(format!(
                "group `{}` has shape {:?} but {} values",
                spec.name,
                spec.shape,
                value.len()
            )));
        }
        if self.find(&spec.name).is_some() {
            return Err(Error::Config(format!("duplicate parameter group `{}`", spec.name)));
        }
        validate_lr_factor(&spec)?;
        let n = value.len();
        self.groups.push(ParamGroup {
            spec,
            value,
            grad: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
        });
        Ok(GroupId(self.groups.len() - 1))
    }

    pub fn find(&self, name: &str) -> Option<GroupId> {
        self.groups.iter().position(|g| g.spec.name == name).map(GroupId)
    }

    pub fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    pub fn ids(&self) -> impl Iterator<Item = GroupId> {
        (0..self.groups.len()).map(GroupId)
    }

    pub fn group(&self, id: GroupId) -> &ParamGroup {
        &self.groups[id.0]
    }

    pub fn group_mut(&mut self, id: GroupId) -> &mut ParamGroup {
        &mut self.groups[id.0]
    }

    pub fn value(&self, id: GroupId) -> &[f64] {
        &self.groups[id.0].value
    }

    pub fn value_mut(&mut self, id: GroupId) -> &mut [f64] {
        &mut self.groups[id.0].value
    }

    pub fn grad(&self, id: GroupId) -> &[f64] {
        &self.groups[id.0].grad
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn num_params(&self) -> usize {
        self.groups.iter().map(|g| g.value.len()).sum()
    }

    pub fn set_lr_factor(&mut self, id: GroupId, factor: f64) -> Result<()> {
        let mut spec = self.groups[id.0].spec.clone();
        spec.lr_factor = factor;
        validate_lr_factor(&spec)?;
        self.groups[id.0].spec = spec;
        Ok(())
    }

    pub fn zero_gradients(&mut self) -> Gradients {
        Gradients { bufs: self.groups.iter().map(|g| vec![0.0; g.value.len()]).collect() }
    }

    pub fn new_gradients(&self) -> Gradients {
        Gradients { bufs: self.groups.iter().map(|g| vec![0.0; g.value.len()]).collect() }
    }

    /// Adds `grads` into the per-group gradient buffers.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (g, b) in self.groups.iter_mut().zip(&grads.bufs) {
            for (x, y) in g.grad.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn clear_grads(&mut self) {
        for g in &mut self.groups {
            g.grad.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn grad_norm(&self, id: GroupId) -> f64 {
        self.groups[id.0].grad.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    /// One Adam update with effective rate `base_lr * lr_factor` per group,
    /// then zeroes the gradient buffers. Nothing is modified if any gradient
    /// is non-finite.
    pub fn adam_step(&mut self, base_lr: f64) -> Result<()> {
        for g in &self.groups {
            if g.grad.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteGradient(g.spec.name.clone()));
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.adam;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for g in &mut self.groups {
            let lr = base_lr * g.spec.lr_factor;
            if let Some(max) = g.spec.max_grad_norm {
                let n = g.grad.iter().map(|x| x * x).sum::<f64>().sqrt();
                if n > max {
                    let s = max / n;
                    g.grad.iter_mut().for_each(|x| *x *= s);
                }
            }
            let wd = g.spec.weight_decay;
            for (((p, gr), m), v) in
                g.value.iter_mut().zip(&mut g.grad).zip(&mut g.m).zip(&mut g.v)
            {
                *m = beta1 * *m + (1.0 - beta1) * *gr;
                *v = beta2 * *v + (1.0 - beta2) * *gr * *gr;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                if wd != 0.0 {
                    *p -= lr * wd * *p;
                }
                *p -= lr * mhat / (vhat.sqrt() + eps);
                *gr = 0.0;
            }
        }
        Ok(())
    }

    /// Rescales every 3-vector of the rotation-correction groups whose norm is
    /// at least `max_norm` down to exactly `max_norm`.
    pub fn project_correction_norms(&mut self, max_norm: f64) {
        for g in &mut self.groups {
            if g.spec.kind != GroupKind::CorrectionRotation {
                continue;
            }
            for v in g.value.chunks_exact_mut(3) {
                let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                if n >= max_norm {
                    let s = max_norm / n;
                    v.iter_mut().for_each(|x| *x *= s);
                }
            }
        }
    }

    pub fn save_checkpoint(&self, path: &Path, meta: &serde_json::Value) -> Result<()> {
        let header = CheckpointHeader {
            step: self.step,
            meta: meta.clone(),
            groups: self.groups.iter().map(|g| g.spec.clone()).collect(),
        };
        let hdr = serde_json::to_vec(&header)?;
        let n: usize = self.groups.iter().map(|g| g.value.len()).sum();
        let mut buf = Vec::with_capacity(20 + hdr.len() + 24 * n);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(hdr.len() as u64).to_le_bytes());
        buf.extend_from_slice(&hdr);
        for g in &self.groups {
            for arr in [&g.value, &g.m, &g.v] {
                for x in arr.iter() {
                    buf.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<(ParamStore, serde_json::Value)> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic header"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: CheckpointHeader = serde_json::from_slice(body)?;
        let mut cursor = 20 + hlen;
        let mut read = |n: usize| -> Result<Vec<f64>> {
            let end = cursor + 8 * n;
            let raw = bytes.get(cursor..end).ok_or_else(|| bad("truncated payload"))?;
            cursor = end;
            Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
        };
        let mut store = ParamStore::new();
        for spec in header.groups {
            let n: usize = spec.shape.iter().product();
            let value = read(n)?;
            let m = read(n)?;
            let v = read(n)?;
            let id = store.add_group(spec, value)?;
            store.groups[id.0].m = m;
            store.groups[id.0].v = v;
        }
        if cursor != bytes.len() {
            return Err(bad("trailing bytes after payload"));
        }
        store.step = header.step;
        Ok((store, header.meta))
    }
}

fn validate_lr_factor(spec: &GroupSpec) -> Result<()> {
    if !(spec.lr_factor.is_finite() && spec.lr_factor >= 0.0) {
        return Err(Error::Config(format!("group `{}`: invalid lr factor", spec.name)));
    }
    if spec.kind.is_correction() && spec.lr_factor > MAX_CORRECTION_LR_FACTOR {
        return Err(Error::Config(format!(
            "group `{}`: pose-correction lr factor {} exceeds {}",
            spec.name, spec.lr_factor, MAX_CORRECTION_LR_FACTOR
        )));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    step: u64,
    meta: serde_json::Value,
    groups: Vec<GroupSpec>,
}
