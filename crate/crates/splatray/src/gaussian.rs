//! The anisotropic Gaussian primitive and its response along a ray.
//!
//! A primitive's opacity at a point is `sigma * exp(-(x - mu)^T P (x - mu))`
//! where `P` is the precision (inverse covariance) matrix. Along a ray the
//! opacity is evaluated once, at the maximum-response point, which has a
//! closed form for Gaussians.

use crate::camera::Ray;
use crate::error::{Error, Result};
use crate::math::{quat_norm, quat_normalize, quat_to_mat3, vec3, Mat3, Quat, Vec3};

/// Hits with opacity below this are discarded everywhere: forward picks,
/// gradient draws and shadow rays. Keeps per-ray work bounded and matches
/// the usual 8-bit-alpha cutoff.
pub const ALPHA_MIN: f64 = 1.0 / 255.0;

/// Opacity ceiling. Keeps transmittance products strictly positive and the
/// subtractive gradient estimator's `1 / (1 - alpha)` terms finite.
pub const ALPHA_MAX: f64 = 1.0 - 1e-4;

/// Per-primitive appearance payload.
#[derive(Clone, Debug, PartialEq)]
pub enum Appearance {
    /// Fixed radiance, the standard emissive formulation.
    Emissive { rgb: Vec3 },
    /// Color computed from incident illumination at shading time.
    Reflective(Reflectance),
}

/// Analytic reflectance models for relightable primitives.
#[derive(Clone, Debug, PartialEq)]
pub enum Reflectance {
    /// Direction-free scattering, `f = albedo / (4 pi)`.
    Isotropic { albedo: Vec3 },
    /// Cosine-weighted lobe around a carried normal,
    /// `f = albedo * max(0, n . w_in) / pi`.
    LambertNormal { albedo: Vec3, normal: Vec3 },
}

impl Reflectance {
    pub fn albedo(&self) -> Vec3 {
        match self {
            Reflectance::Isotropic { albedo } | Reflectance::LambertNormal { albedo, .. } => {
                *albedo
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian {
    pub mean: Vec3,
    /// Unit quaternion `[w, x, y, z]`.
    pub quat: Quat,
    /// Log of the per-axis standard deviations; keeps the covariance
    /// positive definite under unconstrained gradient steps.
    pub log_scales: Vec3,
    /// Density through a logistic, so `sigma` stays in (0, 1).
    pub density_logit: f64,
    pub appearance: Appearance,
}

fn check_albedo(albedo: Vec3) -> Result<()> {
    if !albedo.is_finite() || albedo.min(Vec3::ZERO) != Vec3::ZERO || albedo.max_component() > 1.0 {
        return Err(Error::Invalid(format!(
            "albedo {albedo:?} outside [0,1]^3"
        )));
    }
    Ok(())
}

impl Gaussian {
    /// Validates parameters, normalizes the quaternion (and a reflectance
    /// normal, if present) and checks that the derived covariance is SPD.
    pub fn new(
        mean: Vec3,
        quat: Quat,
        log_scales: Vec3,
        density_logit: f64,
        appearance: Appearance,
    ) -> Result<Gaussian> {
        if !mean.is_finite() || !log_scales.is_finite() || !density_logit.is_finite() {
            return Err(Error::NonFinite("gaussian parameters".into()));
        }
        let n = quat_norm(quat);
        if !n.is_finite() || n == 0.0 {
            return Err(Error::Invalid("quaternion has zero or non-finite norm".into()));
        }
        let appearance = match appearance {
            Appearance::Emissive { rgb } => {
                if !rgb.is_finite() || rgb.min(Vec3::ZERO) != Vec3::ZERO {
                    return Err(Error::Invalid(format!("emissive rgb {rgb:?} must be finite and >= 0")));
                }
                Appearance::Emissive { rgb }
            }
            Appearance::Reflective(Reflectance::Isotropic { albedo }) => {
                check_albedo(albedo)?;
                Appearance::Reflective(Reflectance::Isotropic { albedo })
            }
            Appearance::Reflective(Reflectance::LambertNormal { albedo, normal }) => {
                check_albedo(albedo)?;
                let len = normal.length();
                if !len.is_finite() || len == 0.0 {
                    return Err(Error::Invalid("reflectance normal is degenerate".into()));
                }
                // idempotent: an already-unit vector passes through
                // bit-exactly, so file round-trips preserve it
                let normal = if (len - 1.0).abs() <= 1e-12 {
                    normal
                } else {
                    normal / len
                };
                Appearance::Reflective(Reflectance::LambertNormal { albedo, normal })
            }
        };
        let quat = if (n - 1.0).abs() <= 1e-12 {
            quat
        } else {
            quat_normalize(quat)
        };
        let g = Gaussian {
            mean,
            quat,
            log_scales,
            density_logit,
            appearance,
        };
        let cov = g.covariance();
        if !cov.is_symmetric(1e-9) || cov.cholesky().is_none() {
            return Err(Error::Invalid("derived covariance is not SPD".into()));
        }
        Ok(g)
    }

    /// Emissive primitive with unit scales shorthand, used all over tests.
    pub fn emissive(mean: Vec3, log_scales: Vec3, density_logit: f64, rgb: Vec3) -> Gaussian {
        Gaussian::new(
            mean,
            [1.0, 0.0, 0.0, 0.0],
            log_scales,
            density_logit,
            Appearance::Emissive { rgb },
        )
        .expect("valid emissive gaussian")
    }

    pub fn rotation(&self) -> Mat3 {
        quat_to_mat3(quat_normalize(self.quat))
    }

    /// Covariance `R diag(exp(2 s)) R^T`.
    pub fn covariance(&self) -> Mat3 {
        let r = self.rotation();
        let d = Mat3::from_diag(vec3(
            (2.0 * self.log_scales.x).exp(),
            (2.0 * self.log_scales.y).exp(),
            (2.0 * self.log_scales.z).exp(),
        ));
        r * d * r.transpose()
    }

    /// Precision (inverse covariance), formed directly from the factors so
    /// it is exact up to rounding: `R diag(exp(-2 s)) R^T`.
    pub fn precision(&self) -> Mat3 {
        let r = self.rotation();
        let d = Mat3::from_diag(vec3(
            (-2.0 * self.log_scales.x).exp(),
            (-2.0 * self.log_scales.y).exp(),
            (-2.0 * self.log_scales.z).exp(),
        ));
        r * d * r.transpose()
    }

    /// Peak density `sigma` in (0, 1).
    pub fn sigma(&self) -> f64 {
        logistic(self.density_logit)
    }

    /// Parameter and position of the maximum response along `ray`,
    /// clamped into the ray's range:
    /// `t* = d^T P (mu - o) / d^T P d`.
    pub fn max_response(&self, ray: &Ray) -> (f64, Vec3) {
        let p = self.precision();
        let pd = p * ray.dir;
        let denom = ray.dir.dot(pd);
        // d^T P d > 0 for any SPD P and unit d
        assert!(
            denom > 0.0,
            "precision is not positive definite along the ray"
        );
        let t = pd.dot(self.mean - ray.origin) / denom;
        let t = t.clamp(ray.t_min, ray.t_max.min(f64::MAX));
        (t, ray.at(t))
    }

    /// Opacity at `x`, clamped to `[0, ALPHA_MAX]`.
    pub fn opacity_at(&self, x: Vec3) -> f64 {
        let q = x - self.mean;
        let e = q.dot(self.precision() * q);
        (self.sigma() * (-e).exp()).min(ALPHA_MAX)
    }
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Inverse of `logistic`; handy for building primitives with an exact
/// target opacity at the mean.
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}
