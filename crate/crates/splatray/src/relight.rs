//! Shading of reflective Gaussians under point, directional and
//! environment lights, with stochastically ray-traced shadow transmittance.
//!
//! Each selected Gaussian is shaded as a sum over lights of
//! `f(w_in, w_out) * L(w_in) * T_hat`, where `T_hat` is the 0/1 shadow-ray
//! transmittance estimate. Environment illumination adds a uniform-sphere
//! Monte Carlo term. Transmittance samples are treated as constants by the
//! shading gradients: no gradient flows through shadow-ray opacities.

use std::io::{Read, Write};
use std::sync::Once;

use crate::blend::transmittance_estimate;
use crate::camera::Ray;
use crate::error::{Error, Result};
use crate::gaussian::{Appearance, Gaussian, Reflectance};
use crate::math::{vec3, Vec3};
use crate::rng::RngStream;
use crate::scene::{Light, Scene};

/// Offset backing shadow rays away from both the shaded point and the
/// light position.
pub const SHADOW_EPS: f64 = 1e-4;

const FOUR_PI: f64 = 4.0 * std::f64::consts::PI;

/// Equirectangular radiance grid. Row 0 is the +z pole; the azimuth wraps
/// along a row, the polar angle clamps across rows.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvironmentMap {
    pub width: u32,
    pub height: u32,
    /// Row-major RGB radiance.
    pub texels: Vec<[f32; 3]>,
}

impl EnvironmentMap {
    pub fn new(width: u32, height: u32, texels: Vec<[f32; 3]>) -> Result<EnvironmentMap> {
        if width == 0 || height == 0 {
            return Err(Error::Invalid("environment map must be at least 1x1".into()));
        }
        if texels.len() != (width * height) as usize {
            return Err(Error::Invalid(format!(
                "environment map expects {} texels, got {}",
                width * height,
                texels.len()
            )));
        }
        if texels
            .iter()
            .any(|t| t.iter().any(|&c| !c.is_finite() || c < 0.0))
        {
            return Err(Error::Invalid(
                "environment radiance must be finite and nonnegative".into(),
            ));
        }
        Ok(EnvironmentMap {
            width,
            height,
            texels,
        })
    }

    pub fn constant(width: u32, height: u32, radiance: Vec3) -> EnvironmentMap {
        let t = [radiance.x as f32, radiance.y as f32, radiance.z as f32];
        EnvironmentMap::new(width, height, vec![t; (width * height) as usize]).unwrap()
    }

    fn texel(&self, i: i64, j: i64) -> Vec3 {
        let w = self.width as i64;
        let i = i.rem_euclid(w);
        let j = j.clamp(0, self.height as i64 - 1);
        let t = self.texels[(j * w + i) as usize];
        vec3(t[0] as f64, t[1] as f64, t[2] as f64)
    }

    /// Bilinear radiance lookup for a world direction.
    pub fn sample(&self, dir: Vec3) -> Vec3 {
        let d = dir.normalized();
        let u = d.y.atan2(d.x) / std::f64::consts::TAU + 0.5;
        let v = d.z.clamp(-1.0, 1.0).acos() / std::f64::consts::PI;
        let fu = u * self.width as f64 - 0.5;
        let fv = v * self.height as f64 - 0.5;
        let (i0, j0) = (fu.floor(), fv.floor());
        let (du, dv) = (fu - i0, fv - j0);
        let (i0, j0) = (i0 as i64, j0 as i64);
        let c00 = self.texel(i0, j0);
        let c10 = self.texel(i0 + 1, j0);
        let c01 = self.texel(i0, j0 + 1);
        let c11 = self.texel(i0 + 1, j0 + 1);
        (c00 * (1.0 - du) + c10 * du) * (1.0 - dv) + (c01 * (1.0 - du) + c11 * du) * dv
    }

    /// Reads the binary ENVF format: magic `ENVF`, little-endian u32
    /// width/height/channels (channels must be 3), then row-major f32 RGB.
    pub fn read(path: &str) -> Result<EnvironmentMap> {
        let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut header = [0u8; 16];
        file.read_exact(&mut header)
            .map_err(|e| Error::io(path, e))?;
        if &header[0..4] != b"ENVF" {
            return Err(Error::format(path, "bad magic, expected ENVF"));
        }
        let width = u32::from_le_bytes(header[4..8].try_into().unwrap());
        let height = u32::from_le_bytes(header[8..12].try_into().unwrap());
        let channels = u32::from_le_bytes(header[12..16].try_into().unwrap());
        if channels != 3 {
            return Err(Error::format(
                path,
                format!("expected 3 channels, got {channels}"),
            ));
        }
        let count = (width as usize) * (height as usize);
        let mut bytes = vec![0u8; count * 12];
        file.read_exact(&mut bytes).map_err(|e| Error::io(path, e))?;
        let texels = bytes
            .chunks_exact(12)
            .map(|c| {
                [
                    f32::from_le_bytes(c[0..4].try_into().unwrap()),
                    f32::from_le_bytes(c[4..8].try_into().unwrap()),
                    f32::from_le_bytes(c[8..12].try_into().unwrap()),
                ]
            })
            .collect();
        EnvironmentMap::new(width, height, texels)
    }

    pub fn write(&self, path: &str) -> Result<()> {
        let mut out = Vec::with_capacity(16 + self.texels.len() * 12);
        out.extend_from_slice(b"ENVF");
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&3u32.to_le_bytes());
        for t in &self.texels {
            for c in t {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&out).map_err(|e| Error::io(path, e))
    }
}

/// Gradients of the shade estimator with respect to the reflectance
/// parameters, at the transmittance samples it drew.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ShadeGrad {
    pub albedo: Vec3,
    pub normal: Vec3,
}

/// Cosine-free or cosine-weighted reflectance lobe value (scalar factor
/// multiplying the albedo).
fn lobe(refl: &Reflectance, w_in: Vec3) -> f64 {
    match refl {
        Reflectance::Isotropic { .. } => 1.0 / FOUR_PI,
        Reflectance::LambertNormal { normal, .. } => {
            normal.dot(w_in).max(0.0) / std::f64::consts::PI
        }
    }
}

fn warn_zero_distance() {
    static ONCE: Once = Once::new();
    ONCE.call_once(|| {
        eprintln!("warning: skipping point light at zero distance from a shaded point");
    });
}

/// Shades a reflectance model at `x`. When `grad` is supplied it receives
/// the exact partials of this (stochastic) evaluation with respect to the
/// albedo and normal.
#[allow(clippy::too_many_arguments)]
fn shade_impl(
    refl: &Reflectance,
    x: Vec3,
    _w_out: Vec3,
    lights: &[Light],
    scene: &Scene,
    rng: &mut RngStream,
    env_samples: u32,
    upstream: Vec3,
    mut grad: Option<&mut ShadeGrad>,
) -> Vec3 {
    let albedo = refl.albedo();
    let mut color = Vec3::ZERO;
    let mut accumulate = |w_in: Vec3, radiance: Vec3, t_hat: f64, weight: f64, refl: &Reflectance, grad: &mut Option<&mut ShadeGrad>| {
        let f = lobe(refl, w_in);
        let per_channel = radiance * (f * t_hat * weight);
        color += albedo.hadamard(per_channel);
        if let Some(g) = grad.as_deref_mut() {
            g.albedo += upstream.hadamard(per_channel);
            if let Reflectance::LambertNormal { normal, .. } = refl {
                if normal.dot(w_in) > 0.0 {
                    let s = upstream.dot(albedo.hadamard(radiance))
                        * (t_hat * weight / std::f64::consts::PI);
                    g.normal += w_in * s;
                }
            }
        }
    };
    for light in lights {
        match light {
            Light::Point {
                position,
                intensity,
            } => {
                let to_light = *position - x;
                let dist = to_light.length();
                if dist <= SHADOW_EPS * 2.0 {
                    warn_zero_distance();
                    continue;
                }
                let w_in = to_light / dist;
                let shadow = Ray::new(x, w_in, SHADOW_EPS, dist - SHADOW_EPS).unwrap();
                let t_hat = transmittance_estimate(scene, &shadow, rng);
                accumulate(
                    w_in,
                    *intensity / (dist * dist),
                    t_hat,
                    1.0,
                    refl,
                    &mut grad,
                );
            }
            Light::Directional { dir, irradiance } => {
                let w_in = -dir.normalized();
                let shadow = Ray::new(x, w_in, SHADOW_EPS, f64::INFINITY).unwrap();
                let t_hat = transmittance_estimate(scene, &shadow, rng);
                accumulate(w_in, *irradiance, t_hat, 1.0, refl, &mut grad);
            }
            Light::Envmap { map, .. } => {
                let weight = FOUR_PI / env_samples.max(1) as f64;
                for _ in 0..env_samples.max(1) {
                    let w_in = rng.unit_dir();
                    let shadow = Ray::new(x, w_in, SHADOW_EPS, f64::INFINITY).unwrap();
                    let t_hat = transmittance_estimate(scene, &shadow, rng);
                    accumulate(w_in, map.sample(w_in), t_hat, weight, refl, &mut grad);
                }
            }
        }
    }
    color
}

/// Stochastic shading of one Gaussian at its max-response point: the sum
/// over lights of reflectance times incident radiance times the
/// shadow-ray transmittance estimate. Its expectation is the same sum
/// with the exact transmittance in place of the estimate.
pub fn shade(
    g: &Gaussian,
    x: Vec3,
    w_out: Vec3,
    lights: &[Light],
    scene: &Scene,
    rng: &mut RngStream,
    env_samples: u32,
) -> Vec3 {
    match &g.appearance {
        Appearance::Reflective(refl) => {
            shade_impl(refl, x, w_out, lights, scene, rng, env_samples, Vec3::ZERO, None)
        }
        Appearance::Emissive { rgb } => *rgb,
    }
}

/// Partials of the shade estimator with respect to albedo and normal,
/// chained with `upstream = dL/dcolor`. Passing the same stream state as
/// the matching `shade` call reproduces its transmittance samples exactly.
#[allow(clippy::too_many_arguments)]
pub fn shade_gradient(
    g: &Gaussian,
    x: Vec3,
    w_out: Vec3,
    lights: &[Light],
    scene: &Scene,
    rng: &mut RngStream,
    env_samples: u32,
    upstream: Vec3,
) -> ShadeGrad {
    let mut grad = ShadeGrad::default();
    if let Appearance::Reflective(refl) = &g.appearance {
        shade_impl(
            refl,
            x,
            w_out,
            lights,
            scene,
            rng,
            env_samples,
            upstream,
            Some(&mut grad),
        );
    }
    grad
}

/// Color of any Gaussian along a ray: stored radiance for emissive
/// primitives, stochastic shading under the scene lights for reflective
/// ones.
pub fn surface_color(
    scene: &Scene,
    id: u32,
    x: Vec3,
    w_out: Vec3,
    rng: &mut RngStream,
    env_samples: u32,
) -> Vec3 {
    let g = &scene.gaussians[id as usize];
    match &g.appearance {
        Appearance::Emissive { rgb } => *rgb,
        Appearance::Reflective(refl) => shade_impl(
            refl,
            x,
            w_out,
            &scene.lights,
            scene,
            rng,
            env_samples,
            Vec3::ZERO,
            None,
        ),
    }
}
