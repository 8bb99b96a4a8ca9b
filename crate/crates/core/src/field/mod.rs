//! The radiance field: tri-plane position features, spherical-harmonics
//! direction features, a density MLP and a color MLP conditioned on an
//! optional per-image appearance embedding.
//!
//! ```text
//! p -> tri-plane -> density MLP -> [sigma_pre | F_sigma]
//! sigma = softplus(sigma_pre)
//! [F_sigma, SH(d)] (+ e W_e) -> color MLP -> sigmoid -> rgb
//! ```
//!
//! The embedding enters only the first color layer, so density never
//! depends on direction or appearance.

pub mod sh;
pub mod triplane;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{GroupId, GroupKind, GroupSpec, ParamStore};
use crate::tape::{NodeId, Tape};
use triplane::{PlaneFusion, TriPlaneSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldConfig {
    /// Plane resolution R (each plane is R x R).
    pub resolution: usize,
    /// Feature channels C per plane.
    pub channels: usize,
    pub fusion: PlaneFusion,
    /// Number of SH bands; `degree^2` direction features.
    pub sh_degree: usize,
    pub density_hidden: Vec<usize>,
    /// Width of the density feature vector passed to the color network.
    pub density_features: usize,
    pub color_hidden: Vec<usize>,
    /// Appearance embedding width D.
    pub embedding_dim: usize,
    pub bbox_min: [f64; 3],
    pub bbox_max: [f64; 3],
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            resolution: 128,
            channels: 16,
            fusion: PlaneFusion::Concat,
            sh_degree: 4,
            density_hidden: vec![64, 64],
            density_features: 15,
            color_hidden: vec![64, 64],
            embedding_dim: 16,
            bbox_min: [-1.5; 3],
            bbox_max: [1.5; 3],
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("field: {m}")));
        if self.resolution < 2 {
            return bad("resolution must be at least 2");
        }
        if self.channels == 0 || self.density_features == 0 {
            return bad("channels and density_features must be positive");
        }
        if !(1..=sh::MAX_DEGREE).contains(&self.sh_degree) {
            return bad("sh_degree must be in 1..=4");
        }
        if self.density_hidden.is_empty() || self.color_hidden.is_empty() {
            return bad("each MLP needs at least one hidden layer");
        }
        if self.density_hidden.iter().chain(&self.color_hidden).any(|&w| w == 0) {
            return bad("hidden widths must be positive");
        }
        if (0..3).any(|a| !(self.bbox_max[a] > self.bbox_min[a])) {
            return bad("bbox_max must exceed bbox_min on every axis");
        }
        Ok(())
    }

    pub fn triplane(&self) -> TriPlaneSpec {
        TriPlaneSpec {
            resolution: self.resolution,
            channels: self.channels,
            bbox_min: self.bbox_min,
            bbox_max: self.bbox_max,
            fusion: self.fusion,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    w: GroupId,
    b: GroupId,
    out: usize,
}

/// Appearance table and the projection of an embedding onto the first
/// color layer.
#[derive(Debug, Clone, Copy)]
pub struct AppearanceGroups {
    pub table: GroupId,
    pub proj: GroupId,
    pub n_images: usize,
}

/// Field architecture plus the ids of its parameter groups in a
/// [`ParamStore`].
#[derive(Debug, Clone)]
pub struct RadianceField {
    pub config: FieldConfig,
    spec: TriPlaneSpec,
    planes: GroupId,
    density: Vec<Layer>,
    color: Vec<Layer>,
    appearance: Option<AppearanceGroups>,
}

/// Parameter nodes of one forward pass.
pub struct BoundField {
    planes: NodeId,
    density: Vec<(NodeId, NodeId)>,
    color: Vec<(NodeId, NodeId)>,
    pub proj: Option<NodeId>,
    pub table: Option<NodeId>,
}

/// Per-sample outputs recorded on a tape.
pub struct FieldNodes {
    pub sigma: NodeId,
    pub rgb: NodeId,
}

fn layer_spec(name: String, shape: Vec<usize>) -> GroupSpec {
    GroupSpec { name, shape, kind: GroupKind::Field, lr_factor: 1.0, weight_decay: 0.0, max_grad_norm: None }
}

impl RadianceField {
    /// Registers all field groups in `store`, initialized from `seed`.
    /// `n_images = None` builds the field without an appearance path.
    pub fn init(config: &FieldConfig, n_images: Option<usize>, store: &mut ParamStore, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = config.triplane();
        let planes_v: Vec<f64> = (0..spec.num_params()).map(|_| rng.random_range(-0.1..0.1)).collect();
        let planes = store.add_group(
            layer_spec(
                "field.planes".into(),
                vec![3, config.resolution, config.resolution, config.channels],
            ),
            planes_v,
        )?;

        let mut add_mlp = |prefix: &str, inp: usize, hidden: &[usize], out: usize, rng: &mut ChaCha8Rng| -> Result<Vec<Layer>> {
            let mut layers = Vec::new();
            let mut widths = vec![inp];
            widths.extend_from_slice(hidden);
            widths.push(out);
            for (l, pair) in widths.windows(2).enumerate() {
                let (i, o) = (pair[0], pair[1]);
                let bound = 1.0 / (i as f64).sqrt();
                let w: Vec<f64> = (0..i * o).map(|_| rng.random_range(-bound..bound)).collect();
                let w = store.add_group(layer_spec(format!("{prefix}.{l}.weight"), vec![i, o]), w)?;
                let b = store.add_group(layer_spec(format!("{prefix}.{l}.bias"), vec![o]), vec![0.0; o])?;
                layers.push(Layer { w, b, out: o });
            }
            Ok(layers)
        };
        let density = add_mlp("field.density", spec.out_dim(), &config.density_hidden, 1 + config.density_features, &mut rng)?;
        let color_in = config.density_features + config.sh_degree * config.sh_degree;
        let color = add_mlp("field.color", color_in, &config.color_hidden, 3, &mut rng)?;

        let appearance = match n_images {
            None => None,
            Some(n) => {
                let d = config.embedding_dim;
                let h = config.color_hidden[0];
                let bound = 1.0 / ((color_in + d) as f64).sqrt();
                let proj_v: Vec<f64> = (0..d * h).map(|_| rng.random_range(-bound..bound)).collect();
                let proj = store.add_group(layer_spec("field.color.embedding_proj".into(), vec![d, h]), proj_v)?;
                let table = store.add_group(
                    GroupSpec {
                        kind: GroupKind::Embedding,
                        ..layer_spec("appearance.embeddings".into(), vec![n, d])
                    },
                    vec![0.0; n * d],
                )?;
                Some(AppearanceGroups { table, proj, n_images: n })
            }
        };
        Ok(RadianceField { config: config.clone(), spec, planes, density, color, appearance })
    }

    /// Rebuilds the group bindings from a store restored from a checkpoint.
    pub fn from_store(config: &FieldConfig, store: &ParamStore) -> Result<Self> {
        config.validate()?;
        let spec = config.triplane();
        let find = |name: &str, expect: usize| -> Result<GroupId> {
            let id = store.find(name).ok_or_else(|| Error::Checkpoint(format!("missing group `{name}`")))?;
            if store.value(id).len() != expect {
                return Err(Error::Checkpoint(format!("group `{name}` has wrong size for this config")));
            }
            Ok(id)
        };
        let planes = find("field.planes", spec.num_params())?;
        let load_mlp = |prefix: &str, inp: usize, hidden: &[usize], out: usize| -> Result<Vec<Layer>> {
            let mut widths = vec![inp];
            widths.extend_from_slice(hidden);
            widths.push(out);
            widths
                .windows(2)
                .enumerate()
                .map(|(l, p)| {
                    Ok(Layer {
                        w: find(&format!("{prefix}.{l}.weight"), p[0] * p[1])?,
                        b: find(&format!("{prefix}.{l}.bias"), p[1])?,
                        out: p[1],
                    })
                })
                .collect()
        };
        let density = load_mlp("field.density", spec.out_dim(), &config.density_hidden, 1 + config.density_features)?;
        let color_in = config.density_features + config.sh_degree * config.sh_degree;
        let color = load_mlp("field.color", color_in, &config.color_hidden, 3)?;
        let appearance = match store.find("appearance.embeddings") {
            None => None,
            Some(table) => {
                let d = config.embedding_dim;
                let n = store.value(table).len() / d.max(1);
                if n * d != store.value(table).len() {
                    return Err(Error::Checkpoint("embedding table width mismatch".into()));
                }
                let proj = find("field.color.embedding_proj", d * config.color_hidden[0])?;
                Some(AppearanceGroups { table, proj, n_images: n })
            }
        };
        Ok(RadianceField { config: config.clone(), spec, planes, density, color, appearance })
    }

    pub fn triplane_spec(&self) -> &TriPlaneSpec {
        &self.spec
    }

    pub fn appearance(&self) -> Option<AppearanceGroups> {
        self.appearance
    }

    pub fn embedding_dim(&self) -> usize {
        self.config.embedding_dim
    }

    /// Ids of every group that belongs to the field weights proper
    /// (everything except the embedding table).
    pub fn weight_groups(&self) -> Vec<GroupId> {
        let mut ids = vec![self.planes];
        for l in self.density.iter().chain(&self.color) {
            ids.push(l.w);
            ids.push(l.b);
        }
        if let Some(a) = self.appearance {
            ids.push(a.proj);
        }
        ids
    }

    /// Embedding of training image `a` (zero-length when appearance is off).
    pub fn embedding(&self, store: &ParamStore, a: usize) -> Option<Vec<f64>> {
        let app = self.appearance?;
        let d = self.config.embedding_dim;
        store.value(app.table).get(a * d..(a + 1) * d).map(|s| s.to_vec())
    }

    /// Records the parameter nodes. With `trainable = false` nothing in the
    /// field receives gradients.
    pub fn bind(&self, tape: &mut Tape<'_>, trainable: bool, train_table: bool) -> BoundField {
        let planes = tape.param(self.planes, self.config.channels, trainable);
        let mut bind_layers = |layers: &[Layer]| {
            layers
                .iter()
                .map(|l| (tape.param(l.w, l.out, trainable), tape.param(l.b, l.out, trainable)))
                .collect::<Vec<_>>()
        };
        let density = bind_layers(&self.density);
        let color = bind_layers(&self.color);
        let (proj, table) = match self.appearance {
            Some(a) => (
                Some(tape.param(a.proj, self.color[0].out, trainable)),
                Some(tape.param(a.table, self.config.embedding_dim, train_table)),
            ),
            None => (None, None),
        };
        BoundField { planes, density, color, proj, table }
    }

    /// Density and the density feature vector for `points` (`n x 3`).
    pub fn density(&self, tape: &mut Tape<'_>, bound: &BoundField, points: NodeId) -> Result<(NodeId, NodeId)> {
        let mut h = tape.triplane(points, bound.planes, &self.spec)?;
        let last = bound.density.len() - 1;
        for (l, &(w, b)) in bound.density.iter().enumerate() {
            h = tape.linear(h, w, Some(b))?;
            if l < last {
                h = tape.relu(h);
            }
        }
        let pre = tape.slice_cols(h, 0, 1)?;
        let sigma = tape.softplus(pre);
        let feat = tape.slice_cols(h, 1, self.config.density_features)?;
        Ok((sigma, feat))
    }

    /// First color-layer pre-activation without the appearance term.
    pub fn color_base(&self, tape: &mut Tape<'_>, bound: &BoundField, feat: NodeId, dirs: NodeId) -> Result<NodeId> {
        let shv = tape.sh_encode(dirs, self.config.sh_degree)?;
        let x = tape.concat_cols(&[feat, shv])?;
        let (w, b) = bound.color[0];
        tape.linear(x, w, Some(b))
    }

    /// Remaining color layers from a first-layer pre-activation.
    pub fn color_head(&self, tape: &mut Tape<'_>, bound: &BoundField, pre: NodeId) -> Result<NodeId> {
        let mut h = tape.relu(pre);
        let n = bound.color.len();
        for (l, &(w, b)) in bound.color.iter().enumerate().skip(1) {
            h = tape.linear(h, w, Some(b))?;
            if l < n - 1 {
                h = tape.relu(h);
            }
        }
        Ok(tape.sigmoid(h))
    }

    /// Full forward pass. `embed` selects a row of `table` (a node holding an
    /// `n x D` embedding table) per sample; `None` skips the appearance term.
    pub fn forward(
        &self,
        tape: &mut Tape<'_>,
        bound: &BoundField,
        points: NodeId,
        dirs: NodeId,
        embed: Option<(NodeId, Vec<u32>)>,
    ) -> Result<FieldNodes> {
        let (sigma, feat) = self.density(tape, bound, points)?;
        let mut pre = self.color_base(tape, bound, feat, dirs)?;
        if let Some((table, idx)) = embed {
            let proj = bound
                .proj
                .ok_or_else(|| Error::Dimension("embedding given to a field without appearance path".into()))?;
            let e = tape.embed_project(table, proj, idx)?;
            pre = tape.add(pre, e)?;
        }
        let rgb = self.color_head(tape, bound, pre)?;
        Ok(FieldNodes { sigma, rgb })
    }

    /// Plain evaluation: `(r, g, b, sigma)` per sample, using `embedding`
    /// for every sample when given.
    pub fn query(
        &self,
        store: &ParamStore,
        positions: &[[f64; 3]],
        directions: &[[f64; 3]],
        embedding: Option<&[f64]>,
    ) -> Result<Vec<[f64; 4]>> {
        if positions.len() != directions.len() {
            return Err(Error::Dimension("positions and directions differ in length".into()));
        }
        for d in directions {
            let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            if (n - 1.0).abs() > 1e-6 {
                return Err(Error::NonUnitDirection(n));
            }
        }
        if let Some(e) = embedding {
            if self.appearance.is_none() || e.len() != self.config.embedding_dim {
                return Err(Error::Dimension(format!(
                    "embedding of length {} for a field with embedding width {}",
                    e.len(),
                    if self.appearance.is_some() { self.config.embedding_dim } else { 0 }
                )));
            }
        }
        let mut tape = Tape::with_store(store);
        let bound = self.bind(&mut tape, false, false);
        let p = tape.constant(positions.iter().flatten().copied().collect(), 3);
        let d = tape.constant(directions.iter().flatten().copied().collect(), 3);
        let embed = embedding.map(|e| (tape.constant(e.to_vec(), e.len()), vec![0u32; positions.len()]));
        let out = self.forward(&mut tape, &bound, p, d, embed)?;
        let s = tape.value(out.sigma);
        let c = tape.value(out.rgb);
        Ok((0..positions.len()).map(|i| [c[3 * i], c[3 * i + 1], c[3 * i + 2], s[i]]).collect())
    }

    /// Tri-plane features at `p` and whether `p` had to be clamped into the
    /// bounding box.
    pub fn encode_position(&self, store: &ParamStore, p: [f64; 3]) -> (Vec<f64>, bool) {
        let mut out = vec![0.0; self.spec.out_dim()];
        self.spec.encode(store.value(self.planes), p, &mut out);
        (out, !self.spec.contains(p))
    }
}

/// SH features for a unit direction.
pub fn encode_direction(degree: usize, d: [f64; 3]) -> Result<Vec<f64>> {
    let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    if (n - 1.0).abs() > 1e-6 {
        return Err(Error::NonUnitDirection(n));
    }
    if !(1..=sh::MAX_DEGREE).contains(&degree) {
        return Err(Error::Dimension(format!("SH degree {degree} unsupported")));
    }
    let mut out = vec![0.0; degree * degree];
    sh::eval(degree, d, &mut out);
    Ok(out)
}
