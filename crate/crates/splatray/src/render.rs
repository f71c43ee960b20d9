//! Whole-image forward rendering, pixel-parallel with deterministic
//! output for any worker count.

use rayon::prelude::*;

use crate::blend::{sorted_blend, stochastic_color};
use crate::image::Image;
use crate::math::Vec3;
use crate::relight::surface_color;
use crate::rng::{phase, RngStream};
use crate::scene::Scene;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RenderMode {
    /// Exact sorted alpha blending; shades every hit.
    Sorted,
    /// Sorting-free Monte Carlo transparency; shades one hit per sample.
    Stochastic,
}

impl std::str::FromStr for RenderMode {
    type Err = crate::error::Error;
    fn from_str(s: &str) -> Result<RenderMode, Self::Err> {
        match s {
            "sorted" => Ok(RenderMode::Sorted),
            "stochastic" => Ok(RenderMode::Stochastic),
            _ => Err(crate::error::Error::Config(format!(
                "unknown mode {s:?}, expected sorted|stochastic"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RenderOpts {
    pub mode: RenderMode,
    /// Forward samples per pixel in stochastic mode.
    pub m_f: u32,
    pub seed: u64,
    /// Sphere samples per environment light evaluation.
    pub env_samples: u32,
}

impl Default for RenderOpts {
    fn default() -> Self {
        RenderOpts {
            mode: RenderMode::Sorted,
            m_f: 30,
            seed: 0,
            env_samples: 16,
        }
    }
}

/// Color of one pixel. Rays go through pixel centers; in stochastic mode
/// all samples of a pixel share a single traversal.
pub fn render_pixel(scene: &Scene, camera_idx: usize, px: (u32, u32), opts: &RenderOpts) -> Vec3 {
    let camera = &scene.cameras[camera_idx];
    let Some(ray) = camera.generate_ray(px, (0.5, 0.5)) else {
        return scene.background;
    };
    let pixel = px.1 as u64 * camera.width() as u64 + px.0 as u64;
    match opts.mode {
        RenderMode::Stochastic => {
            stochastic_color(scene, &ray, opts.m_f, opts.seed, pixel, opts.env_samples)
        }
        RenderMode::Sorted => {
            let hits = scene.collect_hits(&ray);
            let mut shade_rng = RngStream::new(opts.seed, pixel, 0, phase::SHADE_FORWARD);
            sorted_blend(
                &hits,
                |h| {
                    surface_color(
                        scene,
                        h.id,
                        ray.at(h.depth),
                        -ray.dir,
                        &mut shade_rng,
                        opts.env_samples,
                    )
                },
                scene.background,
            )
            .0
        }
    }
}

/// Renders one camera view. Rows are processed in parallel; every pixel
/// depends only on its own key, so output is identical for any number of
/// threads.
pub fn render(scene: &Scene, camera_idx: usize, opts: &RenderOpts) -> Image {
    let camera = &scene.cameras[camera_idx];
    let (w, h) = (camera.width(), camera.height());
    let rows: Vec<Vec<[f32; 3]>> = (0..h)
        .into_par_iter()
        .map(|j| {
            (0..w)
                .map(|i| {
                    let c = render_pixel(scene, camera_idx, (i, j), opts);
                    [c.x as f32, c.y as f32, c.z as f32]
                })
                .collect()
        })
        .collect();
    let mut img = Image::new(w, h);
    for (j, row) in rows.into_iter().enumerate() {
        for (i, px) in row.into_iter().enumerate() {
            img.pixels[j * w as usize + i] = px;
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Camera;
    use crate::gaussian::{logit, Gaussian};
    use crate::math::{vec3, Pose};

    fn tiny_scene() -> Scene {
        let gaussians = vec![
            Gaussian::emissive(vec3(0.0, 0.0, 5.0), Vec3::splat(-0.3), logit(0.7), vec3(1.0, 0.2, 0.1)),
            Gaussian::emissive(vec3(0.6, -0.4, 6.5), Vec3::splat(-0.6), logit(0.5), vec3(0.1, 0.9, 0.3)),
            Gaussian::emissive(vec3(-0.7, 0.5, 4.0), Vec3::splat(-0.8), logit(0.4), vec3(0.2, 0.3, 1.0)),
        ];
        let cam = Camera::Pinhole {
            pose: Pose::IDENTITY,
            fov_y: 0.8,
            width: 24,
            height: 18,
        };
        Scene::new(gaussians, vec![], vec3(0.05, 0.05, 0.08), vec![cam]).unwrap()
    }

    #[test]
    fn empty_scene_renders_background() {
        let cam = Camera::Pinhole {
            pose: Pose::IDENTITY,
            fov_y: 0.9,
            width: 8,
            height: 6,
        };
        let scene = Scene::new(vec![], vec![], vec3(0.3, 0.6, 0.9), vec![cam]).unwrap();
        for mode in [RenderMode::Sorted, RenderMode::Stochastic] {
            let img = render(
                &scene,
                0,
                &RenderOpts {
                    mode,
                    ..Default::default()
                },
            );
            for j in 0..6 {
                for i in 0..8 {
                    assert!((img.pixel(i, j) - vec3(0.3, 0.6, 0.9)).length() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn output_identical_across_thread_counts() {
        let scene = tiny_scene();
        let opts = RenderOpts {
            mode: RenderMode::Stochastic,
            m_f: 8,
            seed: 42,
            env_samples: 4,
        };
        let run = |threads: usize| -> Image {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| render(&scene, 0, &opts))
        };
        let one = run(1);
        let four = run(4);
        assert_eq!(one, four);
    }

    #[test]
    fn stochastic_mean_approaches_sorted_render() {
        let scene = tiny_scene();
        let sorted = render(&scene, 0, &RenderOpts::default());
        let stoch = render(
            &scene,
            0,
            &RenderOpts {
                mode: RenderMode::Stochastic,
                m_f: 4000,
                seed: 7,
                env_samples: 1,
            },
        );
        let err = crate::image::mse(&sorted, &stoch).unwrap().sqrt();
        assert!(err < 0.02, "rms {err}");
    }

    #[test]
    fn fisheye_corners_are_background() {
        let mut scene = tiny_scene();
        scene.cameras[0] = Camera::Fisheye {
            pose: Pose::IDENTITY,
            fov: 2.5,
            width: 21,
            height: 21,
        };
        let img = render(&scene, 0, &RenderOpts::default());
        assert!((img.pixel(0, 0) - scene.background).length() < 1e-6);
        assert!((img.pixel(20, 20) - scene.background).length() < 1e-6);
    }
}
