//! Four illumination variants: compares training with and without
//! per-image appearance embeddings under the half-pixel evaluation protocol.
//!
//! cargo run --release --example appearance_embeddings -- [steps]

use radfield::config::ExperimentConfig;
use radfield::dataset::generate_dataset;
use radfield::metrics::evaluate;
use radfield::train::Trainer;

fn main() -> radfield::Result<()> {
    let mut cfg = ExperimentConfig::desk();
    if let Some(steps) = std::env::args().nth(1).and_then(|s| s.parse().ok()) {
        cfg.train.steps = steps;
    }
    cfg.synth.light_variants = 4;
    cfg.train.enable_pose_correction = false;
    let dataset = generate_dataset(&cfg.synth)?;
    for appearance in [false, true] {
        cfg.train.enable_appearance = appearance;
        let mut trainer = Trainer::new(&dataset, &cfg.field_for(&dataset), &cfg.render, &cfg.train)?;
        trainer.train(None)?;
        let report = evaluate(&trainer.field, &trainer.store, &dataset, &cfg.render, &cfg.eval, None, None)?;
        println!(
            "appearance {:5}  PSNR {:.2} dB  SSIM {:.4}",
            appearance, report.mean_psnr, report.mean_ssim
        );
    }
    Ok(())
}
