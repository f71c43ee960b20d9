//! Image-based relighting: builds a two-tone gradient sky, stores it in
//! the binary ENVF format, and renders the reflective toy scene under it
//! with uniform-sphere Monte Carlo integration and stochastic shadow rays.
//!
//! ```sh
//! cargo run --release --example relight_envmap
//! ```

use std::sync::Arc;

use splatray::math::vec3;
use splatray::relight::EnvironmentMap;
use splatray::render::{render, RenderMode, RenderOpts};
use splatray::scene::{Light, Scene};
use splatray::scenes::reflective_toy_scene;

fn main() {
    std::fs::create_dir_all("examples_out").unwrap();

    // warm above the horizon, cool below
    let (w, h) = (16u32, 8u32);
    let mut texels = Vec::with_capacity((w * h) as usize);
    for j in 0..h {
        let t = (j as f32 + 0.5) / h as f32;
        for _ in 0..w {
            texels.push([2.0 - 1.6 * t, 1.2, 0.4 + 1.8 * t]);
        }
    }
    let map = EnvironmentMap::new(w, h, texels).unwrap();
    map.write("examples_out/sky.envf").unwrap();
    let reread = EnvironmentMap::read("examples_out/sky.envf").unwrap();
    assert_eq!(map, reread);

    let base = reflective_toy_scene();
    let scene = Scene::new(
        base.gaussians.clone(),
        vec![Light::Envmap {
            map: Arc::new(reread),
            path: "sky.envf".into(),
        }],
        vec3(0.02, 0.02, 0.04),
        base.cameras.clone(),
    )
    .unwrap();
    let img = render(
        &scene,
        0,
        &RenderOpts {
            mode: RenderMode::Stochastic,
            m_f: 96,
            seed: 5,
            env_samples: 8,
        },
    );
    img.write_ppm("examples_out/relit_envmap.ppm").unwrap();
    println!("wrote examples_out/sky.envf and examples_out/relit_envmap.ppm");
}
