//! Fits an appearance embedding to the even checkerboard half of a held-out
//! view and scores the odd half it never saw, against the zero embedding.
//!
//! cargo run --release --example embedding_fit -- [steps]

use radfield::config::ExperimentConfig;
use radfield::dataset::{generate_dataset, Split};
use radfield::image::Image;
use radfield::metrics::psnr;
use radfield::render::{render_pixels, RenderConfig};
use radfield::train::{fit_test_embedding, HalfSelector, Trainer};

fn main() -> radfield::Result<()> {
    let mut cfg = ExperimentConfig::desk();
    cfg.train.steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1500);
    cfg.synth.light_variants = 4;
    cfg.train.enable_pose_correction = false;
    let dataset = generate_dataset(&cfg.synth)?;
    let mut trainer = Trainer::new(&dataset, &cfg.field_for(&dataset), &cfg.render, &cfg.train)?;
    trainer.train(None)?;
    let render = RenderConfig { stratified_jitter: false, ..cfg.render.clone() };
    let intr = dataset.intrinsics;
    let odd = HalfSelector::Odd.pixels(intr.width, intr.height);
    let as_image = |c: &[[f64; 3]]| Image { width: c.len(), height: 1, data: c.iter().flatten().copied().collect() };
    for k in dataset.indices(Split::Test) {
        let f = &dataset.frames[k];
        let pose = f.true_pose.unwrap_or(f.pose);
        let truth: Vec<[f64; 3]> = odd.iter().map(|&(i, j)| f.image.get(i, j)).collect();
        let e = fit_test_embedding(&trainer.field, &trainer.store, &pose, &intr, &f.image, &render, &cfg.eval.fit)?
            .expect("appearance is enabled");
        let zero = vec![0.0; e.len()];
        let mut line = format!("frame {k:2} light {}", f.light);
        for (tag, emb) in [("zero", &zero), ("fitted", &e)] {
            let pred = render_pixels(&trainer.field, &trainer.store, &pose, &intr, &odd, &render, Some(emb))?;
            line += &format!("  {tag} {:.2} dB", psnr(&as_image(&truth), &as_image(&pred))?);
        }
        println!("{line}");
    }
    Ok(())
}
