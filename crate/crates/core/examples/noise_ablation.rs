//! Label-noise sweep with and without pose correction; writes a CSV table
//! and SVG plots. Re-running resumes from finished points.
//!
//! cargo run --release --example noise_ablation -- <out-dir> [rotation|translation] [steps]

use std::path::PathBuf;

use radfield::cli::{cmd_ablate, AblationSpec, NoiseAxis};
use radfield::config::ExperimentConfig;

fn main() -> radfield::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = PathBuf::from(args.first().map(String::as_str).unwrap_or("runs/ablation"));
    let axis: NoiseAxis = args.get(1).map(String::as_str).unwrap_or("rotation").parse()?;
    let mut cfg = ExperimentConfig::desk();
    // 50 training and 50 held-out views.
    cfg.synth.views = 100;
    cfg.synth.holdout_every = 2;
    if let Some(steps) = args.get(2).and_then(|s| s.parse().ok()) {
        cfg.train.steps = steps;
    }
    let report = cmd_ablate(&cfg, &AblationSpec::reduced(axis), &out, Some(&mut std::io::stderr()))?;
    println!("level  correction  SSIM    JNB     label error -> refined");
    for p in &report.points {
        let (a, b) = match axis {
            NoiseAxis::Rotation => (p.label_rot_deg, p.refined_rot_deg),
            NoiseAxis::Translation => (p.label_trans_m, p.refined_trans_m),
        };
        println!(
            "{:5}  {:10}  {:.4}  {:6.3}  {a:.4} -> {b:.4}",
            p.level,
            p.pose_correction,
            p.mean_ssim,
            p.mean_jnb.unwrap_or(f64::NAN)
        );
    }
    println!("tables and plots in {}", out.display());
    Ok(())
}
