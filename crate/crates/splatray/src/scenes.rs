//! Bundled and procedurally generated scenes shared by the CLI, the test
//! suites and the examples.

use crate::camera::{Camera, Ray};
use crate::gaussian::{logit, Appearance, Gaussian, Reflectance, ALPHA_MAX, ALPHA_MIN};
use crate::math::{quat_from_axis_angle, vec3, Pose, Vec3};
use crate::rng::{phase, RngStream};
use crate::scene::{Light, Scene};

/// Ring of pinhole cameras looking at the origin.
pub fn camera_ring(count: usize, radius: f64, width: u32, height: u32) -> Vec<Camera> {
    (0..count)
        .map(|k| {
            let angle = std::f64::consts::TAU * k as f64 / count as f64;
            let eye = vec3(
                radius * angle.cos(),
                1.5 * ((k % 3) as f64 - 1.0),
                radius * angle.sin(),
            );
            Camera::Pinhole {
                pose: Pose::look_at(eye, Vec3::ZERO, vec3(0.0, 1.0, 0.0)),
                fov_y: 0.6,
                width,
                height,
            }
        })
        .collect()
}

/// Eight emissive Gaussians in a loose shell, with a ring of eight 64x64
/// views. The reconstruction and gradient-check drivers default to this.
pub fn eight_gaussian_scene() -> Scene {
    let palette = [
        vec3(0.95, 0.25, 0.20),
        vec3(0.20, 0.85, 0.30),
        vec3(0.25, 0.35, 0.95),
        vec3(0.95, 0.85, 0.25),
        vec3(0.90, 0.30, 0.85),
        vec3(0.25, 0.85, 0.90),
        vec3(0.95, 0.55, 0.20),
        vec3(0.75, 0.75, 0.75),
    ];
    let mut rng = RngStream::new(0xE1617, 0, 0, phase::TEST);
    let gaussians = (0..8)
        .map(|k| {
            let dir = rng.unit_dir();
            let mean = dir * rng.uniform(0.4, 1.1);
            let axis = rng.unit_dir();
            Gaussian::new(
                mean,
                quat_from_axis_angle(axis, rng.uniform(0.0, std::f64::consts::TAU)),
                vec3(
                    rng.uniform(-1.5, -0.9),
                    rng.uniform(-1.5, -0.9),
                    rng.uniform(-1.5, -0.9),
                ),
                logit(rng.uniform(0.55, 0.9)),
                Appearance::Emissive { rgb: palette[k] },
            )
            .unwrap()
        })
        .collect();
    Scene::new(
        gaussians,
        vec![],
        vec3(0.02, 0.02, 0.03),
        camera_ring(8, 8.0, 64, 64),
    )
    .unwrap()
}

/// A near-opaque occluder in front of a handful of varied hits along the
/// central camera ray; the estimator-variance benchmark targets exactly
/// this configuration.
pub fn high_opacity_scene() -> Scene {
    let mut rng = RngStream::new(0xB0CC, 0, 0, phase::TEST);
    let mut gaussians = vec![Gaussian::emissive(
        vec3(0.0, 0.0, 3.0),
        Vec3::splat(-1.0),
        logit(0.97),
        vec3(0.9, 0.9, 0.2),
    )];
    for k in 0..6 {
        gaussians.push(Gaussian::emissive(
            vec3(
                rng.uniform(-0.05, 0.05),
                rng.uniform(-0.05, 0.05),
                4.0 + k as f64,
            ),
            Vec3::splat(rng.uniform(-0.9, -0.4)),
            logit(rng.uniform(0.3, 0.8)),
            vec3(rng.next_f64(), rng.next_f64(), rng.next_f64()),
        ));
    }
    let cam = Camera::Pinhole {
        pose: Pose::IDENTITY,
        fov_y: 0.6,
        width: 33,
        height: 33,
    };
    Scene::new(gaussians, vec![], vec3(0.05, 0.05, 0.05), vec![cam]).unwrap()
}

/// Eight reflective Gaussians under three point lights, with the same ring
/// of views as the emissive toy.
pub fn reflective_toy_scene() -> Scene {
    let mut rng = RngStream::new(0x5AFE, 0, 0, phase::TEST);
    let gaussians = (0..8)
        .map(|_| {
            let mean = rng.unit_dir() * rng.uniform(0.4, 1.1);
            Gaussian::new(
                mean,
                quat_from_axis_angle(rng.unit_dir(), rng.uniform(0.0, std::f64::consts::TAU)),
                vec3(
                    rng.uniform(-1.4, -0.9),
                    rng.uniform(-1.4, -0.9),
                    rng.uniform(-1.4, -0.9),
                ),
                logit(rng.uniform(0.6, 0.9)),
                Appearance::Reflective(Reflectance::Isotropic {
                    albedo: vec3(
                        rng.uniform(0.2, 0.95),
                        rng.uniform(0.2, 0.95),
                        rng.uniform(0.2, 0.95),
                    ),
                }),
            )
            .unwrap()
        })
        .collect();
    let lights = vec![
        Light::Point {
            position: vec3(4.0, 4.0, 2.0),
            intensity: Vec3::splat(220.0),
        },
        Light::Point {
            position: vec3(-4.0, 2.5, -3.0),
            intensity: vec3(160.0, 180.0, 230.0),
        },
        Light::Point {
            position: vec3(0.5, -4.0, 4.0),
            intensity: vec3(140.0, 110.0, 90.0),
        },
    ];
    Scene::new(
        gaussians,
        lights,
        vec3(0.01, 0.01, 0.015),
        camera_ring(8, 8.0, 64, 64),
    )
    .unwrap()
}

/// Random emissive cloud used as the training starting point.
pub fn random_init_cloud(seed: u64, count: usize, extent: f64) -> Vec<Gaussian> {
    let mut rng = RngStream::new(seed, 0, 0, phase::TEST + 2);
    (0..count)
        .map(|_| {
            Gaussian::new(
                rng.unit_dir() * rng.uniform(0.0, extent),
                quat_from_axis_angle(rng.unit_dir(), rng.uniform(0.0, std::f64::consts::TAU)),
                Vec3::splat(rng.uniform(-1.2, -0.8)),
                logit(rng.uniform(0.25, 0.45)),
                Appearance::Emissive {
                    rgb: vec3(
                        rng.uniform(0.3, 0.7),
                        rng.uniform(0.3, 0.7),
                        rng.uniform(0.3, 0.7),
                    ),
                },
            )
            .unwrap()
        })
        .collect()
}

/// Scene whose hits along the `+z` axis from the origin have exactly the
/// requested opacities (means sit on the ray, so opacity equals the peak
/// density) at depths `2, 3, 4, ...`. The statistical suites are built on
/// this: every blend quantity has a closed form.
pub fn axis_scene(alphas_colors: &[(f64, Vec3)], background: Vec3) -> (Scene, Ray) {
    let gaussians: Vec<Gaussian> = alphas_colors
        .iter()
        .enumerate()
        .map(|(i, &(a, c))| {
            assert!((ALPHA_MIN..=ALPHA_MAX).contains(&a), "alpha {a} out of range");
            Gaussian::emissive(vec3(0.0, 0.0, 2.0 + i as f64), Vec3::splat(-1.2), logit(a), c)
        })
        .collect();
    let scene = Scene::new(gaussians, vec![], background, vec![]).unwrap();
    let ray = Ray::unbounded(Vec3::ZERO, vec3(0.0, 0.0, 1.0));
    (scene, ray)
}

/// Random axis scene with `n` hits, opacities in `[alpha_lo, alpha_hi]`
/// and colors in the unit cube.
pub fn random_axis_scene(
    seed: u64,
    n: usize,
    alpha_lo: f64,
    alpha_hi: f64,
    background: Vec3,
) -> (Scene, Ray, Vec<(f64, Vec3)>) {
    let mut rng = RngStream::new(seed, 0, 0, phase::TEST + 3);
    let spec: Vec<(f64, Vec3)> = (0..n)
        .map(|_| {
            (
                rng.uniform(alpha_lo, alpha_hi),
                vec3(rng.next_f64(), rng.next_f64(), rng.next_f64()),
            )
        })
        .collect();
    let (scene, ray) = axis_scene(&spec, background);
    (scene, ray, spec)
}
