//! Trains briefly on four lighting conditions, then renders an orbit with
//! each embedding source (zero, a training image's, fitted to a held-out view).
//!
//! cargo run --release --example novel_views -- <out-dir> [steps]

use std::path::PathBuf;

use radfield::cli::{cmd_render, cmd_synth, cmd_train, load_run, EmbeddingSource, RenderSpec};
use radfield::config::ExperimentConfig;
use radfield::dataset::{SceneDataset, Split};

fn main() -> radfield::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = PathBuf::from(args.first().map(String::as_str).unwrap_or("runs/novel_views"));
    let mut cfg = ExperimentConfig::desk();
    cfg.train.steps = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1000);
    cfg.synth.light_variants = 4;
    cfg.dataset = out.join("data");
    cfg.output = out.join("run");
    cmd_synth(&cfg.synth, &cfg.dataset)?;
    let trained = cmd_train(&cfg, Some(&mut std::io::stderr()))?;
    let run = load_run(&trained.checkpoint)?;
    let dataset = SceneDataset::load(&cfg.dataset)?;
    let held_out = dataset.indices(Split::Test)[0];
    for (tag, source) in
        [("zero", EmbeddingSource::Zero), ("image0", EmbeddingSource::Image(0)), ("fitted", EmbeddingSource::Fitted(held_out))]
    {
        let spec = RenderSpec { source, ..RenderSpec::from_config(&run.config, 12) };
        let files = cmd_render(&run, Some(&dataset), &spec, &out.join(tag))?;
        println!("{tag:7} {} frames in {}", files.len(), out.join(tag).display());
    }
    Ok(())
}
