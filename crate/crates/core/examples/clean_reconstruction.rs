//! Trains on a clean synthetic orbit and scores held-out views.
//!
//! cargo run --release --example clean_reconstruction -- [steps]

use std::time::Instant;

use radfield::config::ExperimentConfig;
use radfield::dataset::generate_dataset;
use radfield::metrics::evaluate;
use radfield::train::Trainer;

fn main() -> radfield::Result<()> {
    let mut cfg = ExperimentConfig::desk();
    if let Some(steps) = std::env::args().nth(1).and_then(|s| s.parse().ok()) {
        cfg.train.steps = steps;
    }
    cfg.train.enable_appearance = false;
    cfg.train.enable_pose_correction = false;
    let dataset = generate_dataset(&cfg.synth)?;
    let mut trainer = Trainer::new(&dataset, &cfg.field_for(&dataset), &cfg.render, &cfg.train)?;
    let t0 = Instant::now();
    while trainer.step() < cfg.train.steps {
        let rec = trainer.train_step_detailed()?;
        if rec.step % 250 == 0 || trainer.step() == cfg.train.steps {
            println!("step {:5}  loss {:.5}  lr {:.2e}  {:.1}s", rec.step, rec.loss, rec.lr, t0.elapsed().as_secs_f64());
        }
    }
    let report = evaluate(&trainer.field, &trainer.store, &dataset, &cfg.render, &cfg.eval, None, None)?;
    println!(
        "held-out PSNR {:.2} dB  SSIM {:.4}  ({} views, {:.1}s)",
        report.mean_psnr,
        report.mean_ssim,
        report.images.len(),
        t0.elapsed().as_secs_f64()
    );
    Ok(())
}
