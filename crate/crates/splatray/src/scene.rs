//! Immutable scene: Gaussian cloud, lights, background and the
//! acceleration structure, shared freely across worker threads.

use std::sync::Arc;

use crate::blend::Hit;
use crate::bvh::{Bvh, K_SIGMA};
use crate::camera::{Camera, Ray};
use crate::error::Result;
use crate::gaussian::{Gaussian, ALPHA_MIN};
use crate::math::Vec3;
use crate::relight::EnvironmentMap;

#[derive(Clone, Debug)]
pub enum Light {
    /// Radiant intensity with inverse-square falloff.
    Point { position: Vec3, intensity: Vec3 },
    /// `dir` is the propagation direction of the light.
    Directional { dir: Vec3, irradiance: Vec3 },
    /// Image-based illumination from an equirectangular radiance grid.
    /// `path` remembers the file the map was loaded from so scenes round-trip.
    Envmap {
        map: Arc<EnvironmentMap>,
        path: String,
    },
}

#[derive(Clone, Debug)]
pub struct Scene {
    pub gaussians: Vec<Gaussian>,
    pub lights: Vec<Light>,
    pub background: Vec3,
    pub cameras: Vec<Camera>,
    bvh: Bvh,
}

impl Scene {
    pub fn new(
        gaussians: Vec<Gaussian>,
        lights: Vec<Light>,
        background: Vec3,
        cameras: Vec<Camera>,
    ) -> Result<Scene> {
        for cam in &cameras {
            cam.validate()?;
        }
        if !background.is_finite() {
            return Err(crate::error::Error::NonFinite("background color".into()));
        }
        let bvh = Bvh::build(&gaussians, K_SIGMA);
        Ok(Scene {
            gaussians,
            lights,
            background,
            cameras,
            bvh,
        })
    }

    /// Replaces the Gaussians (after an optimizer step) and rebuilds the
    /// acceleration structure.
    pub fn with_gaussians(&self, gaussians: Vec<Gaussian>) -> Scene {
        let bvh = Bvh::build(&gaussians, K_SIGMA);
        Scene {
            gaussians,
            lights: self.lights.clone(),
            background: self.background,
            cameras: self.cameras.clone(),
            bvh,
        }
    }

    pub fn bvh(&self) -> &Bvh {
        &self.bvh
    }

    /// The ray interaction with one Gaussian, or `None` when the response
    /// at the maximum-response point falls below the cutoff.
    pub fn hit_of(&self, id: u32, ray: &Ray) -> Option<Hit> {
        let g = &self.gaussians[id as usize];
        let (t, x) = g.max_response(ray);
        let alpha = g.opacity_at(x);
        (alpha >= ALPHA_MIN).then_some(Hit {
            id,
            alpha,
            depth: t,
        })
    }

    /// Streams every significant hit along the ray to `visit`, in
    /// deterministic traversal order. The order is unspecified to callers;
    /// estimators must not rely on it.
    pub fn for_each_hit(&self, ray: &Ray, mut visit: impl FnMut(Hit)) {
        self.bvh.traverse(ray, |id| {
            if let Some(hit) = self.hit_of(id, ray) {
                visit(hit);
            }
        });
    }

    /// Convenience collector for the sorted oracle; the estimators stream
    /// instead.
    pub fn collect_hits(&self, ray: &Ray) -> Vec<Hit> {
        let mut hits = Vec::new();
        self.for_each_hit(ray, |h| hits.push(h));
        hits
    }
}
