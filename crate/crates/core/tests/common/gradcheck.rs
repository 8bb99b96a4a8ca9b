//! Finite-difference checks of every differentiable tape op and of the full
//! training loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use radfield::dataset::{generate_dataset, SynthSpec};
use radfield::field::triplane::{PlaneFusion, TriPlaneSpec};
use radfield::field::FieldConfig;
use radfield::params::ParamStore;
use radfield::render::RenderConfig;
use radfield::tape::{NodeId, Tape};
use radfield::train::{TrainConfig, Trainer};
use radfield::Result;

const REL_TOL: f64 = 1e-3;
/// Tolerance for parameters whose finite-difference interval straddles an
/// activation kink.
const KINK_TOL: f64 = 1e-2;

type Build = dyn Fn(&mut Tape<'_>, &[NodeId]) -> Result<NodeId>;

fn readout_weights(n: usize) -> Vec<f64> {
    (0..n).map(|k| (0.7 * k as f64 + 0.3).sin()).collect()
}

fn scalar(inputs: &[(Vec<f64>, usize)], build: &Build, grads: bool) -> (f64, Vec<Vec<f64>>) {
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|(v, c)| tape.leaf(v.clone(), *c, grads)).collect();
    let out = build(&mut tape, &ids).unwrap();
    let w = readout_weights(tape.value(out).len());
    let loss = if tape.value(out).len() == 1 { out } else { tape.dot(out, w).unwrap() };
    let value = tape.value(loss)[0];
    if !grads {
        return (value, Vec::new());
    }
    let mut g = ParamStore::new().new_gradients();
    tape.backward(loss, &mut g).unwrap();
    let gs = ids.iter().map(|&id| tape.grad(id).map(<[f64]>::to_vec).unwrap_or_default()).collect();
    (value, gs)
}

/// Compares tape gradients with central differences for every input entry.
fn check(name: &str, inputs: Vec<(Vec<f64>, usize)>, build: &Build, h: f64) {
    let (_, analytic) = scalar(&inputs, build, true);
    for (a, (vals, _)) in inputs.iter().enumerate() {
        for k in 0..vals.len() {
            let mut up = inputs.clone();
            up[a].0[k] += h;
            let mut down = inputs.clone();
            down[a].0[k] -= h;
            let fd = (scalar(&up, build, false).0 - scalar(&down, build, false).0) / (2.0 * h);
            let g = analytic[a].get(k).copied().unwrap_or(0.0);
            let err = (g - fd).abs();
            assert!(
                err <= REL_TOL * g.abs().max(fd.abs()) + 1e-8,
                "{name}: input {a}[{k}] tape {g:e} vs finite difference {fd:e}"
            );
        }
    }
}

fn random(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn unit_rays(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut v = Vec::new();
    for _ in 0..n {
        let o = random(rng, 3, -0.5, 0.5);
        let mut d = random(rng, 3, -1.0, 1.0);
        let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        d.iter_mut().for_each(|x| *x /= len);
        v.extend(o);
        v.extend(d);
    }
    v
}

pub fn dense_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = (random(&mut rng, 12, -1.0, 1.0), 4);
    let w = (random(&mut rng, 20, -1.0, 1.0), 5);
    let b = (random(&mut rng, 5, -1.0, 1.0), 5);
    check("linear", vec![x.clone(), w.clone(), b], &|t, i| t.linear(i[0], i[1], Some(i[2])), 1e-6);
    check("linear without bias", vec![x.clone(), w], &|t, i| t.linear(i[0], i[1], None), 1e-6);
    let y = (random(&mut rng, 12, -1.0, 1.0), 4);
    check("add", vec![x.clone(), y], &|t, i| t.add(i[0], i[1]), 1e-6);
    check("relu", vec![x.clone()], &|t, i| Ok(t.relu(i[0])), 1e-6);
    check("softplus", vec![x.clone()], &|t, i| Ok(t.softplus(i[0])), 1e-6);
    check("sigmoid", vec![x.clone()], &|t, i| Ok(t.sigmoid(i[0])), 1e-6);
    check("slice_cols", vec![x.clone()], &|t, i| t.slice_cols(i[0], 1, 2), 1e-6);
    let z = (random(&mut rng, 6, -1.0, 1.0), 2);
    check("concat_cols", vec![x.clone(), z], &|t, i| t.concat_cols(&[i[0], i[1]]), 1e-6);
    check("sum_squares", vec![x.clone()], &|t, i| Ok(t.sum_squares(i[0])), 1e-6);
    check("dot", vec![x], &|t, i| t.dot(i[0], readout_weights(12)), 1e-6);
}

pub fn embedding_projection() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let table = (random(&mut rng, 4 * 3, -1.0, 1.0), 3);
    let proj = (random(&mut rng, 3 * 5, -1.0, 1.0), 5);
    check("embed_project", vec![table, proj], &|t, i| t.embed_project(i[0], i[1], vec![2, 0, 2, 3, 1]), 1e-6);
}

pub fn triplane_encodings() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for fusion in [PlaneFusion::Concat, PlaneFusion::Product] {
        let spec = TriPlaneSpec { resolution: 5, channels: 2, bbox_min: [-1.0, -0.5, -0.8], bbox_max: [1.0, 0.7, 0.8], fusion };
        let planes = (random(&mut rng, spec.num_params(), -1.0, 1.0), 1);
        let pos = (random(&mut rng, 3 * 6, -0.45, 0.65), 3);
        let s = spec.clone();
        check("triplane", vec![pos, planes], &move |t, i| t.triplane(i[0], i[1], &s), 1e-6);
    }
}

pub fn spherical_harmonics() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let rays = unit_rays(&mut rng, 5);
    let dirs: Vec<f64> = rays.chunks(6).flat_map(|r| r[3..].to_vec()).collect();
    for degree in 1..=4 {
        check("sh_encode", vec![(dirs.clone(), 3)], &move |t, i| t.sh_encode(i[0], degree), 1e-6);
    }
}

pub fn ray_refinement_and_sampling() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rays = (unit_rays(&mut rng, 4), 6);
    let dq = (random(&mut rng, 6, -0.3, 0.3), 3);
    let dt = (random(&mut rng, 6, -0.1, 0.1), 3);
    check("refine_rays", vec![rays.clone(), dq, dt], &|t, i| t.refine_rays(i[0], i[1], i[2], vec![1, 0, 0, 1]), 1e-6);
    let ray_of = vec![0, 0, 1, 2, 3, 3];
    let depth = vec![0.5, 1.0, 2.0, 0.1, 1.5, 2.5];
    let (r2, d2) = (ray_of.clone(), depth.clone());
    check("sample_points", vec![rays.clone()], &move |t, i| t.sample_points(i[0], r2.clone(), d2.clone()), 1e-6);
    check("sample_dirs", vec![rays], &move |t, i| t.sample_dirs(i[0], ray_of.clone()), 1e-6);
}

pub fn compositing() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let sigma = (random(&mut rng, 9, 0.1, 3.0), 1);
    let rgb = (random(&mut rng, 27, 0.0, 1.0), 3);
    let deltas = random(&mut rng, 9, 0.05, 0.4);
    let segs = vec![(0, 4), (4, 4), (4, 9)];
    let (s2, d2) = (segs.clone(), deltas.clone());
    check(
        "composite",
        vec![sigma, rgb.clone()],
        &move |t, i| t.composite(i[0], i[1], s2.clone(), d2.clone(), [0.2, 0.5, 0.9]),
        1e-6,
    );
    let weights = random(&mut rng, 9, 0.0, 0.3);
    let bias = vec![[0.1, 0.0, 0.2]; 3];
    check("weighted_color", vec![rgb], &move |t, i| t.weighted_color(i[0], segs.clone(), weights.clone(), bias.clone()), 1e-6);
}

pub fn photometric_losses() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let pred4 = (random(&mut rng, 20, 0.0, 1.0), 4);
    let target = random(&mut rng, 15, 0.0, 1.0);
    let mask: Vec<f64> = (0..5).map(|k| (k % 2) as f64).collect();
    let (t2, m2) = (target.clone(), mask.clone());
    check("photometric with mask", vec![pred4], &move |t, i| t.photometric_loss(i[0], t2.clone(), m2.clone(), 0.1, 8.0), 1e-6);
    let pred3 = (random(&mut rng, 15, 0.0, 1.0), 3);
    check("photometric rgb only", vec![pred3], &move |t, i| t.photometric_loss(i[0], target.clone(), Vec::new(), 0.0, 5.0), 1e-6);
}

/// The whole training objective (field, embeddings and pose corrections,
/// rendering and loss) against central differences on 32 random parameters.
pub fn full_training_loss() {
    let spec = SynthSpec { views: 6, width: 16, height: 16, holdout_every: 0, light_variants: 2, ..Default::default() };
    let dataset = generate_dataset(&spec).unwrap();
    let field = FieldConfig {
        resolution: 8,
        channels: 2,
        sh_degree: 2,
        density_hidden: vec![8],
        density_features: 4,
        color_hidden: vec![8],
        embedding_dim: 3,
        bbox_min: dataset.aabb.min,
        bbox_max: dataset.aabb.max,
        ..Default::default()
    };
    let render = RenderConfig { near: 1.6, far: 4.4, samples_per_ray: 24, ..Default::default() };
    let train = TrainConfig { rays_per_batch: 48, workers: 1, ..Default::default() };
    let mut trainer = Trainer::new(&dataset, &field, &render, &train).unwrap();
    // Move corrections and embeddings off zero so their gradients are generic.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for name in ["correction.dq_vec", "correction.dt", "appearance.embeddings"] {
        let id = trainer.store.find(name).unwrap();
        for v in trainer.store.value_mut(id) {
            *v = rng.random_range(-0.02..0.02);
        }
    }
    let batch = trainer.sample_batch(0).unwrap();
    let n = batch.len() as f64;
    let (_, grads) = trainer.lane_gradients(&batch, n).unwrap();

    let mut candidates = Vec::new();
    for id in trainer.store.ids() {
        for (k, g) in grads.group(id).iter().enumerate() {
            if g.abs() > 1e-7 {
                candidates.push((id, k));
            }
        }
    }
    assert!(candidates.len() > 64);
    let h = 1e-4;
    let mut groups_seen = std::collections::BTreeSet::new();
    let mut kinks = 0;
    let loss_at = |t: &mut Trainer, id, k, x: f64| {
        t.store.value_mut(id)[k] = x;
        t.lane_gradients(&batch, n).unwrap().0
    };
    for _ in 0..32 {
        let (id, k) = candidates[rng.random_range(0..candidates.len())];
        let x = trainer.store.value(id)[k];
        let up = loss_at(&mut trainer, id, k, x + h);
        let down = loss_at(&mut trainer, id, k, x - h);
        let mid = loss_at(&mut trainer, id, k, x);
        let fd = (up - down) / (2.0 * h);
        let g = grads.group(id)[k];
        let name = trainer.store.group(id).name().to_string();
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-12);
        if rel(g, fd) > REL_TOL {
            // A ReLU or bilinear-cell boundary inside [x - h, x + h] makes the
            // one-sided slopes disagree; the tape gradient must then match the
            // slope on one side.
            let (right, left) = ((up - mid) / h, (mid - down) / h);
            assert!(
                rel(right, left) > REL_TOL && rel(g, right).min(rel(g, left)) < KINK_TOL,
                "{name}[{k}]: tape {g:e}, central {fd:e}, one-sided {left:e} / {right:e}"
            );
            kinks += 1;
        }
        groups_seen.insert(name);
    }
    assert!(kinks <= 8, "{kinks} of 32 parameters straddle a kink");
    assert!(groups_seen.len() >= 4, "only {groups_seen:?} sampled");
}
