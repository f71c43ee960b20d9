//! Compares the gradient variance of the sparse two-index estimator
//! against the dense subtractive one on a scene with a near-opaque
//! occluder in front.
//!
//! Both are unbiased, but the subtractive estimator divides by
//! `1 - alpha` for every hit in front of its pick, so one high-opacity
//! Gaussian is enough to blow up its variance by orders of magnitude.
//!
//! ```sh
//! cargo run --release --example estimator_variance
//! ```

use splatray::grad::{ssplats_grads, stochastic_grads};
use splatray::math::Vec3;
use splatray::scenes::high_opacity_scene;

fn main() {
    let scene = high_opacity_scene();
    let cam = &scene.cameras[0];
    let ray = cam
        .generate_ray((cam.width() / 2, cam.height() / 2), (0.5, 0.5))
        .unwrap();
    let trials = 40_000u32;
    let occluder = 0u32; // the front Gaussian of the bundled scene

    let mut acc = [(Vec3::ZERO, Vec3::ZERO), (Vec3::ZERO, Vec3::ZERO)];
    for t in 0..trials {
        let ours = stochastic_grads(&scene, &ray, 1, 7, t as u64, None, 1).unwrap();
        let ss = ssplats_grads(&scene, &ray, 1, 8, t as u64, 1).unwrap().0;
        for (k, grad) in [ours, ss].iter().enumerate() {
            let v = grad.get(occluder).map(|e| e.d_alpha).unwrap_or(Vec3::ZERO);
            acc[k].0 += v;
            acc[k].1 += v.hadamard(v);
        }
    }
    let n = trials as f64;
    let var_trace = |k: usize| {
        let mean = acc[k].0 / n;
        let var = acc[k].1 / n - mean.hadamard(mean);
        var.x + var.y + var.z
    };
    let (ours, ss) = (var_trace(0), var_trace(1));
    println!("per-round Var[dC/dalpha] of the front occluder over {trials} trials:");
    println!("  two-index estimator : {ours:.4}");
    println!("  subtractive estimator: {ss:.4}");
    println!("  variance ratio       : {:.1}x", ss / ours);
}
