//! Writes a noisy-label oracle dataset to disk and reports the realized
//! label error.
//!
//! cargo run --release --example synth_dataset -- <out-dir> [views] [rot_deg] [trans_m]

use std::path::PathBuf;

use radfield::dataset::{synthesize_to, SynthSpec};
use radfield::metrics::pose_error;
use radfield::se3::Pose;

fn main() -> radfield::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = PathBuf::from(args.first().map(String::as_str).unwrap_or("data/oracle"));
    let num = |k: usize, d: f64| args.get(k).and_then(|s| s.parse().ok()).unwrap_or(d);
    let mut spec = SynthSpec { views: num(1, 50.0) as usize, light_variants: 4, ..Default::default() };
    spec.noise.sigma_rot_deg = num(2, 0.8);
    spec.noise.sigma_trans = num(3, 0.01);
    spec.noise.seed = 1;
    let ds = synthesize_to(&spec, &out)?;
    let truth: Vec<Pose> = ds.frames.iter().filter_map(|f| f.true_pose).collect();
    let labels: Vec<Pose> = ds.frames.iter().map(|f| f.pose).collect();
    let err = pose_error(&truth, &labels)?;
    println!("{} views written to {}", ds.frames.len(), out.display());
    println!(
        "label error: rotation mean {:.3} deg (median {:.3}), translation mean {:.4} m",
        err.mean_deg, err.median_deg, err.mean_m
    );
    println!("field box {:?} .. {:?}", ds.aabb.min, ds.aabb.max);
    Ok(())
}
