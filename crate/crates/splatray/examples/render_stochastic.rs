//! Stochastic transparency versus the sorted oracle.
//!
//! Renders the same view with the sorting-free Monte Carlo estimator at
//! increasing sample counts and reports the RMS distance to the exact
//! sorted blend; the error falls off as 1/sqrt(spp) because the estimator
//! is unbiased.
//!
//! ```sh
//! cargo run --release --example render_stochastic
//! ```

use splatray::image::mse;
use splatray::render::{render, RenderMode, RenderOpts};
use splatray::scenes::eight_gaussian_scene;

fn main() {
    let scene = eight_gaussian_scene();
    let reference = render(&scene, 0, &RenderOpts::default());
    std::fs::create_dir_all("examples_out").unwrap();
    reference.write_ppm("examples_out/stochastic_reference.ppm").unwrap();

    println!("{:>6}  {:>10}", "spp", "rms error");
    for spp in [1u32, 4, 16, 64, 256] {
        let img = render(
            &scene,
            0,
            &RenderOpts {
                mode: RenderMode::Stochastic,
                m_f: spp,
                seed: 1,
                env_samples: 1,
            },
        );
        let rms = mse(&img, &reference).unwrap().sqrt();
        println!("{spp:>6}  {rms:>10.5}");
        if spp == 256 {
            img.write_ppm("examples_out/stochastic_256spp.ppm").unwrap();
        }
    }
    println!("wrote examples_out/stochastic_reference.ppm and stochastic_256spp.ppm");
}
