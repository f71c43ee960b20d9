//! Scene file round trips and strict validation.
//!
//! Writes the bundled scenes as JSON, reads them back field-for-field
//! identical, builds a training dataset directory, and shows the
//! path-qualified errors that malformed documents produce.
//!
//! ```sh
//! cargo run --release --example scene_files
//! ```

use std::path::Path;

use splatray::image::Image;
use splatray::render::{render, RenderOpts};
use splatray::scene_io::{read_scene, scene_from_json, write_dataset, write_scene};
use splatray::scenes::{eight_gaussian_scene, high_opacity_scene, reflective_toy_scene};

fn main() {
    std::fs::create_dir_all("examples_out").unwrap();

    for (name, scene) in [
        ("eight_gaussians", eight_gaussian_scene()),
        ("high_opacity", high_opacity_scene()),
        ("reflective_toy", reflective_toy_scene()),
    ] {
        let path = format!("examples_out/{name}.json");
        write_scene(&scene, &path).unwrap();
        let back = read_scene(&path).unwrap();
        assert_eq!(scene.gaussians, back.gaussians);
        assert_eq!(scene.cameras, back.cameras);
        println!("{path}: {} gaussians, round-trip exact", scene.gaussians.len());
    }

    // a dataset directory: cameras.json + float-CSV target images
    let truth = eight_gaussian_scene();
    let targets: Vec<Image> = (0..truth.cameras.len())
        .map(|v| render(&truth, v, &RenderOpts::default()))
        .collect();
    write_dataset("examples_out/toy_dataset", &truth.cameras, &targets).unwrap();
    println!(
        "examples_out/toy_dataset: {} views written",
        targets.len()
    );

    // strict parsing: unknown fields are rejected with their path
    let bad = r#"{"background":[0,0,0],"gaussians":[
        {"mean":[0,0,5],"quat":[1,0,0,0],"log_scales":[0,0,0],
         "density_logit":0.2,"appearance":{"emissive":[1,1,1]},"opacity":0.5}
    ],"lights":[],"cameras":[]}"#;
    let err = scene_from_json(bad, Path::new(".")).unwrap_err();
    println!("malformed document rejected: {err}");
}
