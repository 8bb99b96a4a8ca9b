//! Injects pose-label noise and compares training with and without learned
//! pose corrections: label error before/after and held-out image quality.
//!
//! cargo run --release --example pose_denoising -- [rot_deg] [trans_m] [steps] [beta_dq] [beta_dt]

use radfield::config::ExperimentConfig;
use radfield::dataset::generate_dataset;
use radfield::metrics::evaluate;
use radfield::train::Trainer;

fn main() -> radfield::Result<()> {
    let args: Vec<f64> = std::env::args().skip(1).filter_map(|s| s.parse().ok()).collect();
    let mut cfg = ExperimentConfig::desk();
    cfg.synth.noise.sigma_rot_deg = args.first().copied().unwrap_or(1.0);
    cfg.synth.noise.sigma_trans = args.get(1).copied().unwrap_or(0.0);
    if let Some(&s) = args.get(2) {
        cfg.train.steps = s as usize;
    }
    if let Some(&b) = args.get(3) {
        cfg.train.beta_dq = b;
    }
    if let Some(&b) = args.get(4) {
        cfg.train.beta_dt = b;
    }
    cfg.synth.noise.seed = 7;
    let dataset = generate_dataset(&cfg.synth)?;
    println!(
        "noise: rotation sigma {:.2} deg, translation sigma {:.4} m",
        cfg.synth.noise.sigma_rot_deg, cfg.synth.noise.sigma_trans
    );
    for correct in [false, true] {
        cfg.train.enable_pose_correction = correct;
        let mut trainer = Trainer::new(&dataset, &cfg.field_for(&dataset), &cfg.render, &cfg.train)?;
        trainer.train(None)?;
        let refined = trainer.refined_poses()?;
        let report = evaluate(
            &trainer.field,
            &trainer.store,
            &dataset,
            &cfg.render,
            &cfg.eval,
            Some((&trainer.train_frames, &refined)),
            None,
        )?;
        let (before, after) = (report.label_pose_error.unwrap(), report.refined_pose_error.unwrap());
        println!(
            "correction {:5}  PSNR {:.2}  SSIM {:.4}  JNB {:.4}  rot err {:.3} -> {:.3} deg  trans err {:.4} -> {:.4} m",
            correct,
            report.mean_psnr,
            report.mean_ssim,
            report.mean_jnb.unwrap_or(f64::NAN),
            before.mean_deg,
            after.mean_deg,
            before.mean_m,
            after.mean_m
        );
    }
    Ok(())
}
