//! PSNR, SSIM and JNB of an oracle view against blurred copies of itself.
//!
//! cargo run --release --example blur_metrics

use radfield::metrics::{jnb_score, psnr, ssim};
use radfield::oracle::{render_oracle, OracleScene, OrbitSpec};
use radfield::se3::CameraIntrinsics;

fn main() -> radfield::Result<()> {
    let scene = OracleScene::with_light_variants(1);
    let intr = CameraIntrinsics::from_fov(128, 128, 56.0)?;
    let pose = OrbitSpec::default().poses(8)[1];
    let (img, _) = render_oracle(&scene, &pose, &intr, 0)?;
    println!("sigma   PSNR      SSIM     JNB");
    for sigma in [0.0, 0.5, 1.0, 2.0, 4.0] {
        let b = if sigma > 0.0 { img.gaussian_blur(sigma) } else { img.clone() };
        println!("{sigma:5.1}  {:7.2}  {:7.4}  {:6.3}", psnr(&img, &b)?, ssim(&img, &b)?, jnb_score(&b)?);
    }
    let brighter = img.map(|v| (v + 0.1).min(1.0));
    println!("JNB after +0.1 brightness: {:.3} (sharp: {:.3})", jnb_score(&brighter)?, jnb_score(&img)?);
    Ok(())
}
