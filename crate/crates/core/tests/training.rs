use std::path::PathBuf;
use std::sync::OnceLock;

use sha2::{Digest, Sha256};

use radfield::cli::{cmd_eval, cmd_train, load_run, LoadedRun, CHECKPOINT};
use radfield::config::ExperimentConfig;
use radfield::dataset::{generate_dataset, synthesize_to, SceneDataset, Split, SynthSpec};
use radfield::metrics::{psnr, rotation_error};
use radfield::params::GroupKind;
use radfield::render::{render_image, RenderConfig};
use radfield::se3::{quat_mul, Quaternion, Vec3};
use radfield::train::{fit_test_embedding, EmbeddingFitConfig, Trainer};

fn small_spec() -> SynthSpec {
    SynthSpec { views: 16, width: 32, height: 32, light_variants: 4, holdout_every: 8, ..Default::default() }
}

fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk();
    cfg.synth = small_spec();
    cfg.field.resolution = 32;
    cfg.render.samples_per_ray = 48;
    cfg.train.steps = 800;
    cfg.train.rays_per_batch = 512;
    cfg.train.base_lr = 2e-2;
    cfg.train.log_every = 0;
    cfg
}

struct Fixture {
    _dir: tempfile::TempDir,
    checkpoint: PathBuf,
    dataset: SceneDataset,
    cfg: ExperimentConfig,
}

/// One short training run shared by the tests that need a fitted field.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config();
        cfg.dataset = dir.path().join("data");
        cfg.output = dir.path().join("run");
        let dataset = synthesize_to(&cfg.synth, &cfg.dataset).unwrap();
        cmd_train(&cfg, None).unwrap();
        Fixture { checkpoint: cfg.output.join(CHECKPOINT), _dir: dir, dataset, cfg }
    })
}

fn eval_render(run: &LoadedRun) -> RenderConfig {
    RenderConfig { stratified_jitter: false, ..run.config.render.clone() }
}

#[test]
fn first_step_moves_corrections_by_beta() {
    let cfg = small_config();
    let ds = generate_dataset(&SynthSpec { noise: radfield::oracle::NoiseSpec { sigma_rot_deg: 1.0, sigma_trans: 0.02, seed: 4 }, ..small_spec() }).unwrap();
    let mut train = cfg.train.clone();
    train.beta_dq = 0.01;
    train.beta_dt = 0.004;
    let mut t = Trainer::new(&ds, &cfg.field_for(&ds), &cfg.render, &train).unwrap();
    // With eps = 0 the first Adam step moves every entry with a nonzero
    // gradient by exactly lr * factor.
    t.store.adam.eps = 0.0;
    let before: Vec<Vec<f64>> = t.store.ids().map(|id| t.store.value(id).to_vec()).collect();
    let lr = train.lr_at(0);
    t.train_step().unwrap();
    let mut seen = [false; 3];
    let mut field_moved = false;
    for (id, old) in t.store.ids().zip(&before) {
        let g = t.store.group(id);
        let factor = match g.spec.kind {
            GroupKind::CorrectionRotation => {
                seen[0] = true;
                0.01
            }
            GroupKind::CorrectionTranslation => {
                seen[1] = true;
                0.004
            }
            _ => {
                seen[2] = true;
                1.0
            }
        };
        assert_eq!(g.spec.lr_factor, factor);
        let moved: Vec<f64> = t.store.value(id).iter().zip(old).map(|(a, b)| (a - b).abs()).filter(|d| *d > 0.0).collect();
        // Field groups whose inputs start at zero (the embedding projection)
        // get no gradient on the first step.
        if g.spec.kind.is_correction() {
            assert!(!moved.is_empty(), "{} did not move", g.name());
        } else {
            field_moved |= !moved.is_empty();
        }
        for d in moved {
            assert!((d / (lr * factor) - 1.0).abs() < 1e-6, "{}: step {d} vs {}", g.name(), lr * factor);
        }
    }
    assert_eq!(seen, [true; 3]);
    assert!(field_moved);
}

#[test]
fn beta_above_bound_is_rejected() {
    let cfg = small_config();
    let ds = generate_dataset(&SynthSpec { views: 4, width: 16, height: 16, holdout_every: 0, ..Default::default() }).unwrap();
    for (dq, dt) in [(0.02, 0.01), (0.01, 0.011), (-0.001, 0.01)] {
        let train = radfield::train::TrainConfig { beta_dq: dq, beta_dt: dt, ..cfg.train.clone() };
        let err = Trainer::new(&ds, &cfg.field_for(&ds), &cfg.render, &train).err().expect("accepted");
        assert!(err.is_validation());
    }
}

/// With a fitted field, the loss gradient of a mislabeled image's rotation
/// correction is a descent direction toward its true pose.
#[test]
fn rotation_gradient_points_back_to_the_true_pose() {
    let f = fixture();
    let run = load_run(&f.checkpoint).unwrap();
    let a = 3;
    for axis in [Vec3::new(0.3, 1.0, -0.4), Vec3::new(1.0, 0.0, 0.2), Vec3::new(-0.2, 0.5, 1.0)] {
        let mut ds = f.dataset.clone();
        let k = ds.indices(Split::Train)[a];
        let truth = ds.frames[k].true_pose.unwrap();
        let offset = Quaternion::from_axis_angle(axis.normalize(), 0.5f64.to_radians());
        ds.frames[k].pose.q = quat_mul(offset, truth.q);
        assert!((rotation_error(&ds.frames[k].pose, &truth).to_degrees() - 0.5).abs() < 1e-9);

        let mut train = f.cfg.train.clone();
        train.rays_per_batch = 4096;
        train.mask_loss_weight = 0.0;
        let mut t = Trainer::new(&ds, &run.config.field_for(&ds), &run.config.render, &train).unwrap();
        for id in t.store.ids().collect::<Vec<_>>() {
            let name = t.store.group(id).name().to_string();
            if let Some(src) = run.store.find(&name) {
                t.store.value_mut(id).copy_from_slice(run.store.value(src));
            }
        }
        let dq = t.corrections.unwrap().dq;
        let mut g = Vec3::ZERO;
        for step in 0..4 {
            let (_, grads) = t.batch_gradients(&t.sample_batch(step).unwrap()).unwrap();
            let row = &grads.group(dq)[3 * a..3 * a + 3];
            g = g + Vec3::new(row[0], row[1], row[2]);
        }
        // The fixing correction undoes the offset: vector part -offset.vector().
        let fix = offset.conjugate().vector().normalize();
        let cos = (-g).normalize().dot(fix);
        assert!(cos > 0.0, "axis {axis:?}: descent direction cos {cos}");
    }
}

#[test]
fn fitted_embedding_reproduces_a_training_appearance() {
    let f = fixture();
    let run = load_run(&f.checkpoint).unwrap();
    let rcfg = eval_render(&run);
    let intr = f.dataset.intrinsics;
    let mut worst = f64::INFINITY;
    for a in [0, 5, 9] {
        let k = run.train_frames[a];
        let pose = f.dataset.frames[k].pose;
        let e = run.field.embedding(&run.store, a).unwrap();
        let (reference, _) = render_image(&run.field, &run.store, &pose, &intr, &rcfg, Some(&e)).unwrap();
        let fit = EmbeddingFitConfig { iters: 600, ..Default::default() };
        let fitted = fit_test_embedding(&run.field, &run.store, &pose, &intr, &reference, &rcfg, &fit).unwrap().unwrap();
        let (img, _) = render_image(&run.field, &run.store, &pose, &intr, &rcfg, Some(&fitted)).unwrap();
        worst = worst.min(psnr(&reference, &img).unwrap());
    }
    assert!(worst >= 40.0, "fitted render PSNR {worst}");
}

#[test]
fn fitted_embedding_beats_the_zero_embedding_on_held_out_views() {
    let f = fixture();
    let run = load_run(&f.checkpoint).unwrap();
    let rcfg = eval_render(&run);
    let intr = f.dataset.intrinsics;
    let mut gain = 0.0;
    let test = f.dataset.indices(Split::Test);
    for &k in &test {
        let fr = &f.dataset.frames[k];
        let pose = fr.true_pose.unwrap();
        let fitted = fit_test_embedding(&run.field, &run.store, &pose, &intr, &fr.image, &rcfg, &EmbeddingFitConfig::default())
            .unwrap()
            .unwrap();
        let (zero, _) = render_image(&run.field, &run.store, &pose, &intr, &rcfg, Some(&vec![0.0; fitted.len()])).unwrap();
        let (fit, _) = render_image(&run.field, &run.store, &pose, &intr, &rcfg, Some(&fitted)).unwrap();
        gain += psnr(&fr.image, &fit).unwrap() - psnr(&fr.image, &zero).unwrap();
    }
    assert!(gain / test.len() as f64 > 0.5, "mean gain {}", gain / test.len() as f64);
}

fn sha(path: &std::path::Path) -> Vec<u8> {
    Sha256::digest(std::fs::read(path).unwrap()).to_vec()
}

#[test]
fn evaluation_leaves_the_checkpoint_untouched_and_is_repeatable() {
    let f = fixture();
    let before = sha(&f.checkpoint);
    let run = load_run(&f.checkpoint).unwrap();
    let values: Vec<Vec<f64>> = run.store.ids().map(|id| run.store.value(id).to_vec()).collect();
    let r1 = cmd_eval(&run, &f.dataset, &run.config.eval, None, false).unwrap();
    let r2 = cmd_eval(&run, &f.dataset, &run.config.eval, None, false).unwrap();
    assert_eq!(r1, r2);
    let after: Vec<Vec<f64>> = run.store.ids().map(|id| run.store.value(id).to_vec()).collect();
    assert_eq!(values, after);
    assert_eq!(before, sha(&f.checkpoint));
}

#[test]
fn checkpoint_round_trip_is_lossless() {
    let f = fixture();
    let run = load_run(&f.checkpoint).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("copy.bin");
    let (_, meta) = radfield::params::ParamStore::load_checkpoint(&f.checkpoint).unwrap();
    run.store.save_checkpoint(&path, &meta).unwrap();
    let again = load_run(&path).unwrap();
    assert_eq!(sha(&f.checkpoint), sha(&path));
    let pose = f.dataset.frames[0].pose;
    let rcfg = eval_render(&run);
    let e = run.field.embedding(&run.store, 0);
    let (a, _) = render_image(&run.field, &run.store, &pose, &f.dataset.intrinsics, &rcfg, e.as_deref()).unwrap();
    let (b, _) = render_image(&again.field, &again.store, &pose, &f.dataset.intrinsics, &rcfg, e.as_deref()).unwrap();
    assert_eq!(a.data, b.data);
    assert_eq!(again.train_frames, run.train_frames);
}
