//! Checks tape gradients of a small field-plus-compositing graph against
//! central finite differences.
//!
//! cargo run --release --example gradient_check

use radfield::field::{FieldConfig, RadianceField};
use radfield::params::ParamStore;
use radfield::render::{layout_samples, render_on_tape, RenderConfig};
use radfield::tape::Tape;

fn loss(field: &RadianceField, store: &ParamStore, rays: &[f64], render: &RenderConfig) -> radfield::Result<f64> {
    let mut tape = Tape::with_store(store);
    let bound = field.bind(&mut tape, false, false);
    let r = tape.constant(rays.to_vec(), 6);
    let spec = field.triplane_spec();
    let layout = layout_samples(rays, render, spec.bbox_min, spec.bbox_max, None);
    let out = render_on_tape(&mut tape, field, &bound, r, &layout, render, None)?;
    Ok(tape.value(out).iter().enumerate().map(|(k, v)| (k as f64 * 0.37).sin() * v).sum())
}

fn main() -> radfield::Result<()> {
    let cfg = FieldConfig {
        resolution: 8,
        channels: 2,
        sh_degree: 2,
        density_hidden: vec![8],
        density_features: 4,
        color_hidden: vec![8],
        bbox_min: [-1.0; 3],
        bbox_max: [1.0; 3],
        ..Default::default()
    };
    let render = RenderConfig { near: 1.0, far: 4.0, samples_per_ray: 16, stratified_jitter: false, ..Default::default() };
    let mut store = ParamStore::new();
    let field = RadianceField::init(&cfg, None, &mut store, 3)?;
    let rays: [f64; 12] = [0.1, -0.2, 2.5, 0.0, 0.1, -1.0, -2.5, 0.3, 0.2, 1.0, 0.0, 0.0];
    let rays: Vec<f64> = rays
        .chunks(6)
        .flat_map(|r| {
            let n = (r[3] * r[3] + r[4] * r[4] + r[5] * r[5]).sqrt();
            [r[0], r[1], r[2], r[3] / n, r[4] / n, r[5] / n]
        })
        .collect();

    let mut grads = store.new_gradients();
    {
        let mut tape = Tape::with_store(&store);
        let bound = field.bind(&mut tape, true, false);
        let r = tape.constant(rays.clone(), 6);
        let spec = field.triplane_spec();
        let layout = layout_samples(&rays, &render, spec.bbox_min, spec.bbox_max, None);
        let out = render_on_tape(&mut tape, &field, &bound, r, &layout, &render, None)?;
        let w: Vec<f64> = (0..tape.value(out).len()).map(|k| (k as f64 * 0.37).sin()).collect();
        let l = tape.dot(out, w)?;
        tape.backward(l, &mut grads)?;
    }

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for id in store.ids().collect::<Vec<_>>() {
        let n = store.value(id).len();
        for k in (0..n).step_by((n / 6).max(1)) {
            let x = store.value(id)[k];
            store.value_mut(id)[k] = x + h;
            let up = loss(&field, &store, &rays, &render)?;
            store.value_mut(id)[k] = x - h;
            let down = loss(&field, &store, &rays, &render)?;
            store.value_mut(id)[k] = x;
            let fd = (up - down) / (2.0 * h);
            let g = grads.group(id)[k];
            let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
            println!("{:28} [{k:4}]  tape {g:+.6e}  fd {fd:+.6e}  rel {rel:.1e}", store.group(id).name());
        }
    }
    println!("worst relative error {worst:.2e}");
    Ok(())
}
