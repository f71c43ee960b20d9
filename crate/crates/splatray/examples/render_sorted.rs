//! Renders the bundled eight-Gaussian scene with exact sorted alpha
//! blending from two viewpoints and writes PPM images.
//!
//! ```sh
//! cargo run --release --example render_sorted
//! ```

use splatray::render::{render, RenderOpts};
use splatray::scenes::eight_gaussian_scene;

fn main() {
    let scene = eight_gaussian_scene();
    std::fs::create_dir_all("examples_out").unwrap();
    for cam in [0usize, 3] {
        let img = render(&scene, cam, &RenderOpts::default());
        let path = format!("examples_out/sorted_view{cam}.ppm");
        img.write_ppm(&path).unwrap();
        println!("wrote {path} ({}x{})", img.width, img.height);
    }
}
