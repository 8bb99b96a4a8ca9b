use std::path::Path;
use std::process::{Command, Output};

use radfield::dataset::SceneDataset;
use radfield::metrics::rotation_error;

fn radfield(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_radfield")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn help_lists_config_keys() {
    let o = radfield(&["--help"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    for key in ["beta_dq", "rays_per_batch", "samples_per_ray", "light_variants", "sigma_rot_deg"] {
        assert!(text.contains(key), "--help misses {key}");
    }
    for sub in ["synth", "train", "render", "eval", "ablate"] {
        assert!(text.contains(sub));
    }
}

#[test]
fn exit_codes() {
    assert_eq!(code(&radfield(&["frobnicate"])), 1);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    assert_eq!(code(&radfield(&["synth", "--views", "1", "--out", p(&out)])), 1);
    let missing = dir.path().join("nope.bin");
    assert_eq!(code(&radfield(&["eval", "--checkpoint", p(&missing)])), 2);
    let o = radfield(&["synth", "--views", "4", "--width", "16", "--height", "16", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let run = dir.path().join("r");
    let o = radfield(&["--desk", "train", "--dataset", p(&out), "--out", p(&run), "--steps", "1", "--beta-dq", "0.1"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn synth_without_noise_keeps_true_labels() {
    let dir = tempfile::tempdir().unwrap();
    let o = radfield(&["synth", "--views", "400", "--width", "16", "--height", "16", "--out", p(dir.path())]);
    assert_eq!(code(&o), 0);
    let ds = SceneDataset::load(dir.path()).unwrap();
    assert_eq!(ds.frames.len(), 400);
    for f in &ds.frames {
        assert_eq!(Some(f.pose), f.true_pose);
    }
}

#[test]
fn synth_rotation_noise_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let o = radfield(&[
        "--seed", "7", "synth", "--views", "400", "--width", "16", "--height", "16", "--noise-rot", "0.8", "--out",
        p(dir.path()),
    ]);
    assert_eq!(code(&o), 0);
    let ds = SceneDataset::load(dir.path()).unwrap();
    let errs: Vec<f64> = ds.frames.iter().map(|f| rotation_error(&f.pose, &f.true_pose.unwrap()).to_degrees()).collect();
    let n = errs.len() as f64;
    let mean = errs.iter().sum::<f64>() / n;
    let expected = 0.8 * (2.0 / std::f64::consts::PI).sqrt();
    let se = 0.8 * (1.0 - 2.0 / std::f64::consts::PI).sqrt() / n.sqrt();
    assert!((mean - expected).abs() < 3.0 * se, "mean {mean} vs {expected}");
}

#[test]
fn train_eval_render_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    let o = radfield(&["synth", "--views", "8", "--width", "24", "--height", "24", "--light-variants", "2", "--out", p(&data)]);
    assert_eq!(code(&o), 0);
    let o = radfield(&["--desk", "train", "--dataset", p(&data), "--out", p(&run), "--steps", "20", "--rays", "128"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["checkpoint.bin", "metrics.jsonl", "corrections.json", "config.toml"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let ckpt = run.join("checkpoint.bin");
    let eval = |out: &Path| {
        let o = radfield(&["eval", "--checkpoint", p(&ckpt), "--out", p(out), "--no-panels"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(out.join("report.json")).unwrap()
    };
    assert_eq!(eval(&dir.path().join("e1")), eval(&dir.path().join("e2")));

    let frames = dir.path().join("frames");
    let o = radfield(&["render", "--checkpoint", p(&ckpt), "--out", p(&frames), "--frames", "3", "--embedding", "image:1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_dir(&frames).unwrap().count(), 3);

    // A dataset with other intrinsics cannot be scored with this checkpoint.
    let other = dir.path().join("other");
    assert_eq!(code(&radfield(&["synth", "--views", "8", "--width", "32", "--height", "32", "--out", p(&other)])), 0);
    let o = radfield(&["eval", "--checkpoint", p(&ckpt), "--dataset", p(&other), "--out", p(&dir.path().join("e3"))]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("intrinsics"));
}
