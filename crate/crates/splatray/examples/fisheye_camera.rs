//! Ray tracing handles distorted lenses directly: the same scene rendered
//! through a pinhole and through a wide equidistant fisheye from the same
//! pose. The image centers agree; the fisheye bends everything else.
//!
//! ```sh
//! cargo run --release --example fisheye_camera
//! ```

use splatray::camera::Camera;
use splatray::render::{render, RenderOpts};
use splatray::scenes::eight_gaussian_scene;

fn main() {
    let mut scene = eight_gaussian_scene();
    let pose = *scene.cameras[0].pose();
    scene.cameras = vec![
        Camera::Pinhole {
            pose,
            fov_y: 0.6,
            width: 129,
            height: 129,
        },
        Camera::Fisheye {
            pose,
            fov: 2.8,
            width: 129,
            height: 129,
        },
    ];
    std::fs::create_dir_all("examples_out").unwrap();
    let pin = render(&scene, 0, &RenderOpts::default());
    let fish = render(&scene, 1, &RenderOpts::default());
    pin.write_ppm("examples_out/pinhole.ppm").unwrap();
    fish.write_ppm("examples_out/fisheye.ppm").unwrap();
    let c = (64, 64);
    println!("center pixel, pinhole: {:?}", pin.pixel(c.0, c.1));
    println!("center pixel, fisheye: {:?}", fish.pixel(c.0, c.1));
    println!("wrote examples_out/pinhole.ppm and examples_out/fisheye.ppm");
}
