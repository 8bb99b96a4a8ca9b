use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use radfield::dataset::{generate_dataset, synthesize_to, SceneDataset, Split, SynthSpec};
use radfield::metrics::rotation_error;
use radfield::oracle::{render_oracle, Aabb, Light, NoiseSpec, OracleScene, OrbitSpec};
use radfield::se3::{quat_rotate, CameraIntrinsics, Pose, Quaternion, Vec3};
use radfield::Error;

/// Camera at `(0, 0, h)` looking straight down, image x along world +x.
fn top_down(h: f64) -> Pose {
    let m = [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]];
    Pose::new(Quaternion::from_rotation_matrix(m), Vec3::new(0.0, 0.0, h))
}

#[test]
fn top_down_mask_matches_projected_rectangles() {
    let scene = OracleScene::default();
    let intr = CameraIntrinsics::from_fov(96, 96, 60.0).unwrap();
    let h = 3.0;
    let (_, mask) = render_oracle(&scene, &top_down(h), &intr, 0).unwrap();
    let mut checked = 0;
    for j in 0..intr.height {
        for i in 0..intr.width {
            let xc = (i as f64 + 0.5 - intr.cx) / intr.fx;
            let yc = (j as f64 + 0.5 - intr.cy) / intr.fy;
            // World (x, y) where the pixel ray meets a plane at height z.
            let at = |z: f64| (xc * (h - z), -yc * (h - z));
            let inside = |v: f64, lo: f64, hi: f64, margin: f64| -> Option<bool> {
                if v > lo + margin && v < hi - margin {
                    Some(true)
                } else if v < lo - margin || v > hi + margin {
                    Some(false)
                } else {
                    None
                }
            };
            let rect = |z: f64, b: &Aabb| -> Option<bool> {
                let (x, y) = at(z);
                let ix = inside(x, b.min[0], b.max[0], 1e-6)?;
                let iy = inside(y, b.min[1], b.max[1], 1e-6)?;
                Some(ix && iy)
            };
            let parts = [rect(0.35, &scene.body), rect(0.02, &scene.panels[0]), rect(0.02, &scene.panels[1])];
            if parts.iter().any(Option::is_none) {
                continue;
            }
            let expected = parts.iter().any(|p| p.unwrap());
            assert_eq!(mask[j * intr.width + i] == 1.0, expected, "pixel ({i}, {j})");
            checked += 1;
        }
    }
    assert!(checked > 9000);
}

#[test]
fn lambert_shading_follows_the_normal() {
    let mut scene = OracleScene::default();
    scene.lights = vec![Light { direction: [0.0, 0.0, 1.0], intensity: 1.0, ambient: 0.0 }];
    let intr = CameraIntrinsics::from_fov(64, 64, 60.0).unwrap();
    let pose = top_down(3.0);
    let (img, mask) = render_oracle(&scene, &pose, &intr, 0).unwrap();
    let mut lit = 0;
    for j in 0..64 {
        for i in 0..64 {
            if mask[j * 64 + i] == 0.0 {
                continue;
            }
            let d = quat_rotate(pose.q, intr.camera_direction(i, j));
            let (t, prim, face) = scene.hit(pose.t, d).unwrap();
            assert_eq!(face, 5, "only +z faces are visible from above");
            assert_eq!(img.get(i, j), scene.albedo(prim, face, pose.t + d * t));
            lit += 1;
        }
    }
    assert!(lit > 100);
    // From the side the visible faces are perpendicular to the light: black.
    let side = Pose::look_at(Vec3::new(3.0, 0.0, 0.0), Vec3::ZERO, Vec3::new(0.0, 0.0, 1.0));
    let (img, mask) = render_oracle(&scene, &side, &intr, 0).unwrap();
    assert!(mask.iter().sum::<f64>() > 10.0);
    assert!(img.data.iter().all(|&v| v == 0.0));
}

#[test]
fn light_variants_share_geometry() {
    let scene = OracleScene::with_light_variants(4);
    let intr = CameraIntrinsics::from_fov(48, 48, 56.0).unwrap();
    for pose in OrbitSpec::default().poses(6) {
        let (a, ma) = render_oracle(&scene, &pose, &intr, 0).unwrap();
        let (b, mb) = render_oracle(&scene, &pose, &intr, 1).unwrap();
        assert_eq!(ma, mb);
        assert_ne!(a.data, b.data);
    }
}

#[test]
fn nonzero_pixels_lie_inside_the_mask() {
    let scene = OracleScene::with_light_variants(4);
    let intr = CameraIntrinsics::from_fov(48, 48, 56.0).unwrap();
    for (k, pose) in OrbitSpec::default().poses(24).iter().enumerate() {
        let (img, mask) = render_oracle(&scene, pose, &intr, k % 4).unwrap();
        for p in 0..mask.len() {
            if img.data[3 * p..3 * p + 3].iter().any(|&v| v > 0.0) {
                assert_eq!(mask[p], 1.0);
            }
        }
    }
}

#[test]
fn every_face_is_seen_lit_on_the_orbit() {
    let spec = SynthSpec { light_variants: 4, ..Default::default() };
    let scene = spec.scene();
    let intr = spec.intrinsics().unwrap();
    let lights: Vec<usize> = (0..spec.views).map(|k| k % 4).collect();
    // (primitive, face) -> seen while lit.
    let mut seen: BTreeMap<(usize, usize), bool> = BTreeMap::new();
    for (k, pose) in spec.orbit.poses(spec.views).iter().enumerate() {
        let light = scene.light(lights[k]).unwrap();
        for j in 0..intr.height {
            for i in 0..intr.width {
                let d = quat_rotate(pose.q, intr.camera_direction(i, j));
                if let Some((_, prim, face)) = scene.hit(pose.t, d) {
                    let n = Aabb::face_normal(face);
                    let lit = n.dot(Vec3::from_array(light.direction)) > 0.0;
                    *seen.entry((prim, face)).or_default() |= lit;
                }
            }
        }
    }
    // All body faces and the broad faces of both panels.
    let mut required: Vec<(usize, usize)> = (0..6).map(|f| (0, f)).collect();
    required.extend([(1, 4), (1, 5), (2, 4), (2, 5)]);
    for f in required {
        assert_eq!(seen.get(&f), Some(&true), "face {f:?} never seen lit");
    }
}

#[test]
fn camera_inside_geometry_is_rejected() {
    let scene = OracleScene::default();
    let intr = CameraIntrinsics::from_fov(16, 16, 60.0).unwrap();
    let pose = Pose::new(Quaternion::IDENTITY, Vec3::new(0.1, 0.0, 0.0));
    assert!(matches!(render_oracle(&scene, &pose, &intr, 0), Err(Error::CameraInsideGeometry)));
}

fn digest_dir(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, Sha256::digest(std::fs::read(&p).unwrap()).to_vec());
            }
        }
    }
    out
}

#[test]
fn same_seed_gives_byte_identical_datasets() {
    let spec = SynthSpec {
        views: 12,
        width: 32,
        height: 32,
        light_variants: 3,
        light_shuffle_seed: Some(5),
        noise: NoiseSpec { sigma_rot_deg: 0.7, sigma_trans: 0.02, seed: 11 },
        ..Default::default()
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synthesize_to(&spec, a.path()).unwrap();
    synthesize_to(&spec, b.path()).unwrap();
    let (da, db) = (digest_dir(a.path()), digest_dir(b.path()));
    assert_eq!(da.len(), 1 + 2 * 12);
    assert_eq!(da, db);
}

#[test]
fn dataset_round_trips_through_disk() {
    let spec = SynthSpec {
        views: 9,
        width: 24,
        height: 20,
        noise: NoiseSpec { sigma_rot_deg: 0.5, sigma_trans: 0.01, seed: 3 },
        holdout_every: 3,
        ..Default::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let ds = synthesize_to(&spec, dir.path()).unwrap();
    let back = SceneDataset::load(dir.path()).unwrap();
    assert_eq!(back.intrinsics, ds.intrinsics);
    assert_eq!(back.aabb, ds.aabb);
    assert_eq!(back.indices(Split::Test), vec![2, 5, 8]);
    for (a, b) in ds.frames.iter().zip(&back.frames) {
        assert_eq!(a.pose.t, b.pose.t);
        assert!(rotation_error(&a.pose, &b.pose) < 1e-12);
        assert_eq!(a.true_pose.unwrap().t, b.true_pose.unwrap().t);
        assert_eq!(a.mask, b.mask);
        for (x, y) in a.image.data.iter().zip(&b.image.data) {
            assert!((x - y).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }
}

#[test]
fn zero_noise_keeps_labels_exact() {
    let ds = generate_dataset(&SynthSpec { views: 8, width: 16, height: 16, ..Default::default() }).unwrap();
    for f in &ds.frames {
        assert_eq!(Some(f.pose), f.true_pose);
    }
}

#[test]
fn too_few_views_are_rejected() {
    let err = generate_dataset(&SynthSpec { views: 1, ..Default::default() }).unwrap_err();
    assert!(err.is_validation());
}

/// Label rotation error is |N(0, sigma)|: its sample mean over 400 views
/// must sit within 3 standard errors of the folded-normal mean.
#[test]
fn rotation_noise_follows_the_folded_normal() {
    let sigma = 0.8f64;
    let n = 400;
    let truth = OrbitSpec::default().poses(n);
    for seed in [1, 2, 3] {
        let labels = NoiseSpec { sigma_rot_deg: sigma, sigma_trans: 0.01, seed }.perturb(&truth);
        let errs: Vec<f64> = truth.iter().zip(&labels).map(|(a, b)| rotation_error(a, b).to_degrees()).collect();
        let mean = errs.iter().sum::<f64>() / n as f64;
        let expected = sigma * (2.0 / std::f64::consts::PI).sqrt();
        let se = sigma * (1.0 - 2.0 / std::f64::consts::PI).sqrt() / (n as f64).sqrt();
        assert!((mean - expected).abs() < 3.0 * se, "seed {seed}: mean {mean} vs {expected} +- {se}");
        // Translation components are N(0, 0.01^2).
        let var = truth.iter().zip(&labels).map(|(a, b)| (b.t - a.t).norm_squared()).sum::<f64>() / (3 * n) as f64;
        assert!((var.sqrt() - 0.01).abs() < 0.001, "translation sd {}", var.sqrt());
    }
}
