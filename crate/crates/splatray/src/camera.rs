//! Rays and camera models.
//!
//! Camera space is x-right, y-down, z-forward; poses map camera space to
//! world space. Two models are supported: a standard pinhole projection
//! and an equidistant fisheye, which ray tracing handles without any of
//! the screen-space approximations that rasterizers need for distorted
//! lenses.

use crate::error::{Error, Result};
use crate::math::{vec3, Pose, Vec3};

#[derive(Clone, Copy, Debug)]
pub struct Ray {
    pub origin: Vec3,
    /// Unit direction.
    pub dir: Vec3,
    pub t_min: f64,
    pub t_max: f64,
}

impl Ray {
    /// Normalizes `dir`; errors when the direction is degenerate or the
    /// parameter range is empty.
    pub fn new(origin: Vec3, dir: Vec3, t_min: f64, t_max: f64) -> Result<Ray> {
        if !origin.is_finite() || !dir.is_finite() {
            return Err(Error::NonFinite("ray origin/direction".into()));
        }
        let len = dir.length();
        if len <= 0.0 || !len.is_finite() {
            return Err(Error::Invalid("ray direction has zero length".into()));
        }
        if !(t_min >= 0.0 && t_min < t_max) {
            return Err(Error::Invalid(format!(
                "ray range [{t_min}, {t_max}] is empty or negative"
            )));
        }
        Ok(Ray {
            origin,
            dir: dir / len,
            t_min,
            t_max,
        })
    }

    /// Unbounded ray from `origin` along `dir`.
    pub fn unbounded(origin: Vec3, dir: Vec3) -> Ray {
        Ray::new(origin, dir, 0.0, f64::INFINITY).expect("valid unbounded ray")
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.dir * t
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Camera {
    Pinhole {
        pose: Pose,
        /// Vertical field of view in radians.
        fov_y: f64,
        width: u32,
        height: u32,
    },
    /// Equidistant fisheye: the angle from the optical axis grows linearly
    /// with the distance from the image center, up to `fov / 2` at the
    /// image circle.
    Fisheye {
        pose: Pose,
        /// Full field of view in radians, at most pi.
        fov: f64,
        width: u32,
        height: u32,
    },
}

impl Camera {
    pub fn width(&self) -> u32 {
        match self {
            Camera::Pinhole { width, .. } | Camera::Fisheye { width, .. } => *width,
        }
    }

    pub fn height(&self) -> u32 {
        match self {
            Camera::Pinhole { height, .. } | Camera::Fisheye { height, .. } => *height,
        }
    }

    pub fn pose(&self) -> &Pose {
        match self {
            Camera::Pinhole { pose, .. } | Camera::Fisheye { pose, .. } => pose,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (w, h) = (self.width(), self.height());
        if w == 0 || h == 0 {
            return Err(Error::Invalid("camera resolution must be nonzero".into()));
        }
        match self {
            Camera::Pinhole { fov_y, .. } => {
                if !(*fov_y > 0.0 && *fov_y < std::f64::consts::PI) {
                    return Err(Error::Invalid(format!("pinhole fov {fov_y} out of (0, pi)")));
                }
            }
            Camera::Fisheye { fov, .. } => {
                if !(*fov > 0.0 && *fov <= std::f64::consts::PI) {
                    return Err(Error::Invalid(format!("fisheye fov {fov} out of (0, pi]")));
                }
            }
        }
        Ok(())
    }

    /// Builds the world-space ray through pixel `(i, j)` at sub-pixel
    /// offset `jitter` in `[0, 1)^2`. Returns `None` for fisheye pixels
    /// outside the image circle, which render as background.
    pub fn generate_ray(&self, px: (u32, u32), jitter: (f64, f64)) -> Option<Ray> {
        let (i, j) = px;
        debug_assert!(i < self.width() && j < self.height());
        let x = i as f64 + jitter.0;
        let y = j as f64 + jitter.1;
        match self {
            Camera::Pinhole {
                pose,
                fov_y,
                width,
                height,
            } => {
                let focal = 0.5 * *height as f64 / (0.5 * fov_y).tan();
                let dir_cam = vec3(
                    (x - 0.5 * *width as f64) / focal,
                    (y - 0.5 * *height as f64) / focal,
                    1.0,
                )
                .normalized();
                Some(Ray::unbounded(pose.trans, pose.apply_dir(dir_cam)))
            }
            Camera::Fisheye {
                pose,
                fov,
                width,
                height,
            } => {
                let dx = x - 0.5 * *width as f64;
                let dy = y - 0.5 * *height as f64;
                let r_max = 0.5 * (*width).min(*height) as f64;
                let r = (dx * dx + dy * dy).sqrt();
                if r > r_max {
                    return None;
                }
                let theta = r / r_max * (0.5 * fov);
                let phi = dy.atan2(dx);
                let (st, ct) = theta.sin_cos();
                let dir_cam = vec3(st * phi.cos(), st * phi.sin(), ct);
                Some(Ray::unbounded(pose.trans, pose.apply_dir(dir_cam)))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Mat3;

    fn axis(pose: &Pose) -> Vec3 {
        pose.apply_dir(vec3(0.0, 0.0, 1.0))
    }

    #[test]
    fn pinhole_center_pixel_is_optical_axis() {
        let cam = Camera::Pinhole {
            pose: Pose::look_at(vec3(1.0, 2.0, -3.0), vec3(0.5, 0.0, 4.0), vec3(0.0, 1.0, 0.0)),
            fov_y: 0.9,
            width: 33,
            height: 33,
        };
        let ray = cam.generate_ray((16, 16), (0.5, 0.5)).unwrap();
        assert!((ray.dir - axis(cam.pose())).length() < 1e-12);
        assert!((ray.dir.length() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fisheye_center_pixel_is_optical_axis() {
        let cam = Camera::Fisheye {
            pose: Pose::IDENTITY,
            fov: std::f64::consts::PI,
            width: 101,
            height: 101,
        };
        let ray = cam.generate_ray((50, 50), (0.5, 0.5)).unwrap();
        assert!((ray.dir - vec3(0.0, 0.0, 1.0)).length() < 1e-12);
    }

    #[test]
    fn fisheye_edge_pixel_is_perpendicular() {
        // pixel sample exactly on the image circle: theta = fov/2 = pi/2
        let cam = Camera::Fisheye {
            pose: Pose::IDENTITY,
            fov: std::f64::consts::PI,
            width: 100,
            height: 100,
        };
        let ray = cam.generate_ray((0, 50), (0.0, 0.0)).unwrap();
        assert!(ray.dir.z.abs() < 1e-6, "dir {:?}", ray.dir);
    }

    #[test]
    fn fisheye_outside_circle_is_invalid() {
        let cam = Camera::Fisheye {
            pose: Pose::IDENTITY,
            fov: 2.0,
            width: 64,
            height: 64,
        };
        assert!(cam.generate_ray((0, 0), (0.1, 0.1)).is_none());
        assert!(cam.generate_ray((32, 32), (0.5, 0.5)).is_some());
    }

    #[test]
    fn generated_rays_are_unit_under_rotation() {
        let cam = Camera::Pinhole {
            pose: Pose {
                rot: Mat3::from_rows(
                    vec3(0.0, 1.0, 0.0),
                    vec3(0.0, 0.0, 1.0),
                    vec3(1.0, 0.0, 0.0),
                )
                .transpose(),
                trans: vec3(5.0, -1.0, 2.0),
            },
            fov_y: 1.2,
            width: 17,
            height: 9,
        };
        for i in 0..17 {
            for j in 0..9 {
                let ray = cam.generate_ray((i, j), (0.25, 0.75)).unwrap();
                assert!((ray.dir.length() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn invalid_rays_are_rejected() {
        assert!(Ray::new(Vec3::ZERO, Vec3::ZERO, 0.0, 1.0).is_err());
        assert!(Ray::new(Vec3::ZERO, vec3(1.0, 0.0, 0.0), 2.0, 1.0).is_err());
        assert!(Ray::new(Vec3::ZERO, vec3(f64::NAN, 0.0, 0.0), 0.0, 1.0).is_err());
    }
}
