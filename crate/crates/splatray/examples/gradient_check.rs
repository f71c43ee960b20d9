//! Verifies the analytic gradient chain against central finite
//! differences of the sorted blend, over every parameter of every
//! Gaussian the probe rays hit.
//!
//! ```sh
//! cargo run --release --example gradient_check
//! ```

use splatray::camera::Ray;
use splatray::grad::fd_gradcheck;
use splatray::scenes::eight_gaussian_scene;

fn main() {
    let scene = eight_gaussian_scene();
    let origin = scene.cameras[0].pose().trans;
    let mut worst = (0.0f64, String::new());
    let mut comparisons = 0usize;
    for g in &scene.gaussians {
        let ray = Ray::unbounded(origin, g.mean - origin);
        let report = fd_gradcheck(&scene, &ray, 1e-5).unwrap();
        comparisons += report.entries.len();
        for e in &report.entries {
            if e.rel_err > worst.0 {
                worst = (e.rel_err, format!("g{}.{}", e.gaussian, e.param));
            }
        }
    }
    println!("{comparisons} analytic-vs-finite-difference comparisons");
    println!("max relative error {:.3e} at {}", worst.0, worst.1);
    assert!(worst.0 <= 1e-4);
    println!("gradient chain verified to 1e-4");
}
