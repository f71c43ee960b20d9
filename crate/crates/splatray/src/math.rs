//! Small fixed-size linear algebra: 3-vectors, 3x3 matrices (row-major),
//! unit quaternions and rigid poses. Everything is `f64`; image buffers are
//! the only place the crate drops to `f32`.

use std::ops::{Add, AddAssign, Div, Index, Mul, Neg, Sub};

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

pub const fn vec3(x: f64, y: f64, z: f64) -> Vec3 {
    Vec3 { x, y, z }
}

impl Vec3 {
    pub const ZERO: Vec3 = vec3(0.0, 0.0, 0.0);
    pub const ONE: Vec3 = vec3(1.0, 1.0, 1.0);

    pub fn splat(v: f64) -> Vec3 {
        vec3(v, v, v)
    }

    pub fn from_array(a: [f64; 3]) -> Vec3 {
        vec3(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        vec3(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn length_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn length(self) -> f64 {
        self.length_squared().sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        self / self.length()
    }

    /// Componentwise product (color modulation, anisotropic scaling).
    pub fn hadamard(self, o: Vec3) -> Vec3 {
        vec3(self.x * o.x, self.y * o.y, self.z * o.z)
    }

    pub fn min(self, o: Vec3) -> Vec3 {
        vec3(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    pub fn max(self, o: Vec3) -> Vec3 {
        vec3(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }

    pub fn clamp(self, lo: f64, hi: f64) -> Vec3 {
        vec3(
            self.x.clamp(lo, hi),
            self.y.clamp(lo, hi),
            self.z.clamp(lo, hi),
        )
    }

    pub fn abs(self) -> Vec3 {
        vec3(self.x.abs(), self.y.abs(), self.z.abs())
    }

    pub fn max_component(self) -> f64 {
        self.x.max(self.y).max(self.z)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        vec3(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        vec3(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        vec3(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        vec3(self.x * s, self.y * s, self.z * s)
    }
}

impl Mul<Vec3> for f64 {
    type Output = Vec3;
    fn mul(self, v: Vec3) -> Vec3 {
        v * self
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, s: f64) -> Vec3 {
        vec3(self.x / s, self.y / s, self.z / s)
    }
}

impl Index<usize> for Vec3 {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

/// Row-major 3x3 matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat3 {
    pub m: [[f64; 3]; 3],
}

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3 {
        m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    };

    pub fn from_rows(r0: Vec3, r1: Vec3, r2: Vec3) -> Mat3 {
        Mat3 {
            m: [r0.to_array(), r1.to_array(), r2.to_array()],
        }
    }

    pub fn from_diag(d: Vec3) -> Mat3 {
        Mat3 {
            m: [[d.x, 0.0, 0.0], [0.0, d.y, 0.0], [0.0, 0.0, d.z]],
        }
    }

    pub fn row(&self, i: usize) -> Vec3 {
        Vec3::from_array(self.m[i])
    }

    pub fn col(&self, j: usize) -> Vec3 {
        vec3(self.m[0][j], self.m[1][j], self.m[2][j])
    }

    pub fn transpose(&self) -> Mat3 {
        Mat3::from_rows(self.col(0), self.col(1), self.col(2))
    }

    /// Transposed matrix-vector product `M^T v` without materializing `M^T`.
    pub fn transpose_mul(&self, v: Vec3) -> Vec3 {
        vec3(self.col(0).dot(v), self.col(1).dot(v), self.col(2).dot(v))
    }

    pub fn max_abs(&self) -> f64 {
        self.m
            .iter()
            .flatten()
            .fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().flatten().all(|v| v.is_finite())
    }

    /// Cholesky factor of a symmetric matrix; `None` when not positive
    /// definite. Used as the SPD validity check for covariances.
    #[allow(clippy::needless_range_loop)]
    pub fn cholesky(&self) -> Option<Mat3> {
        let a = &self.m;
        let mut l = [[0.0_f64; 3]; 3];
        for i in 0..3 {
            for j in 0..=i {
                let mut s = a[i][j];
                for k in 0..j {
                    s -= l[i][k] * l[j][k];
                }
                if i == j {
                    if s <= 0.0 {
                        return None;
                    }
                    l[i][j] = s.sqrt();
                } else {
                    l[i][j] = s / l[j][j];
                }
            }
        }
        Some(Mat3 { m: l })
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let a = &self.m;
        (a[0][1] - a[1][0]).abs() <= tol
            && (a[0][2] - a[2][0]).abs() <= tol
            && (a[1][2] - a[2][1]).abs() <= tol
    }
}

impl Mul<Vec3> for Mat3 {
    type Output = Vec3;
    fn mul(self, v: Vec3) -> Vec3 {
        vec3(self.row(0).dot(v), self.row(1).dot(v), self.row(2).dot(v))
    }
}

impl Mul<Mat3> for Mat3 {
    type Output = Mat3;
    fn mul(self, o: Mat3) -> Mat3 {
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = self.row(i).dot(o.col(j));
            }
        }
        Mat3 { m }
    }
}

impl Sub for Mat3 {
    type Output = Mat3;
    fn sub(self, o: Mat3) -> Mat3 {
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = self.m[i][j] - o.m[i][j];
            }
        }
        Mat3 { m }
    }
}

/// Unit quaternion stored as `[w, x, y, z]`.
pub type Quat = [f64; 4];

pub fn quat_norm(q: Quat) -> f64 {
    (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt()
}

pub fn quat_normalize(q: Quat) -> Quat {
    let n = quat_norm(q);
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

pub fn quat_from_axis_angle(axis: Vec3, angle: f64) -> Quat {
    let a = axis.normalized();
    let (s, c) = (angle * 0.5).sin_cos();
    [c, a.x * s, a.y * s, a.z * s]
}

/// Hamilton product; composing `quat_mul(a, b)` rotates by `b` then `a`.
pub fn quat_mul(a: Quat, b: Quat) -> Quat {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

/// Rotation matrix of a unit quaternion.
pub fn quat_to_mat3(q: Quat) -> Mat3 {
    let [w, x, y, z] = q;
    Mat3 {
        m: [
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ],
    }
}

/// Partial derivatives of the rotation matrix with respect to the four
/// quaternion components, evaluated at a unit quaternion. The chain rule
/// through the normalization that `quat_to_mat3` callers apply is handled
/// separately (see `gradients`).
pub fn quat_to_mat3_partials(q: Quat) -> [Mat3; 4] {
    let [w, x, y, z] = q;
    let dw = Mat3 {
        m: [
            [0.0, -2.0 * z, 2.0 * y],
            [2.0 * z, 0.0, -2.0 * x],
            [-2.0 * y, 2.0 * x, 0.0],
        ],
    };
    let dx = Mat3 {
        m: [
            [0.0, 2.0 * y, 2.0 * z],
            [2.0 * y, -4.0 * x, -2.0 * w],
            [2.0 * z, 2.0 * w, -4.0 * x],
        ],
    };
    let dy = Mat3 {
        m: [
            [-4.0 * y, 2.0 * x, 2.0 * w],
            [2.0 * x, 0.0, 2.0 * z],
            [-2.0 * w, 2.0 * z, -4.0 * y],
        ],
    };
    let dz = Mat3 {
        m: [
            [-4.0 * z, -2.0 * w, 2.0 * x],
            [2.0 * w, -4.0 * z, 2.0 * y],
            [2.0 * x, 2.0 * y, 0.0],
        ],
    };
    [dw, dx, dy, dz]
}

/// Rigid camera-to-world transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rot: Mat3,
    pub trans: Vec3,
}

impl Pose {
    pub const IDENTITY: Pose = Pose {
        rot: Mat3::IDENTITY,
        trans: Vec3::ZERO,
    };

    pub fn apply_point(&self, p: Vec3) -> Vec3 {
        self.rot * p + self.trans
    }

    pub fn apply_dir(&self, d: Vec3) -> Vec3 {
        self.rot * d
    }

    /// Builds a pose from 12 row-major values of the 3x4 matrix `[R | t]`.
    pub fn from_rows_3x4(v: &[f64; 12]) -> Pose {
        Pose {
            rot: Mat3 {
                m: [
                    [v[0], v[1], v[2]],
                    [v[4], v[5], v[6]],
                    [v[8], v[9], v[10]],
                ],
            },
            trans: vec3(v[3], v[7], v[11]),
        }
    }

    pub fn to_rows_3x4(&self) -> [f64; 12] {
        let m = &self.rot.m;
        let t = self.trans;
        [
            m[0][0], m[0][1], m[0][2], t.x, m[1][0], m[1][1], m[1][2], t.y, m[2][0], m[2][1],
            m[2][2], t.z,
        ]
    }

    /// Camera at `eye` looking toward `target`; `up` fixes the roll.
    /// Camera space is x-right, y-down, z-forward.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Pose {
        let forward = (target - eye).normalized();
        let right = forward.cross(up).normalized();
        let down = forward.cross(right);
        Pose {
            rot: Mat3::from_rows(right, down, forward).transpose(),
            trans: eye,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_follows_right_hand_rule() {
        let c = vec3(1.0, 0.0, 0.0).cross(vec3(0.0, 1.0, 0.0));
        assert_eq!(c, vec3(0.0, 0.0, 1.0));
    }

    #[test]
    fn mat_vec_and_transpose_agree() {
        let m = Mat3::from_rows(vec3(1.0, 2.0, 3.0), vec3(4.0, 5.0, 6.0), vec3(7.0, 8.0, 10.0));
        let v = vec3(1.0, -2.0, 0.5);
        let lhs = m.transpose() * v;
        let rhs = m.transpose_mul(v);
        assert!((lhs - rhs).length() < 1e-15);
    }

    #[test]
    fn quat_rotation_matches_axis_angle() {
        let q = quat_from_axis_angle(vec3(0.0, 0.0, 1.0), std::f64::consts::FRAC_PI_2);
        let r = quat_to_mat3(q);
        let rotated = r * vec3(1.0, 0.0, 0.0);
        assert!((rotated - vec3(0.0, 1.0, 0.0)).length() < 1e-12);
    }

    #[test]
    fn quat_mul_composes_rotations() {
        let a = quat_from_axis_angle(vec3(0.0, 0.0, 1.0), 0.7);
        let b = quat_from_axis_angle(vec3(1.0, 0.0, 0.0), -0.3);
        let ra = quat_to_mat3(a);
        let rb = quat_to_mat3(b);
        let rab = quat_to_mat3(quat_mul(a, b));
        assert!((rab - ra * rb).max_abs() < 1e-12);
    }

    #[test]
    fn quat_partials_match_finite_differences() {
        let q = quat_normalize([0.9, 0.1, -0.3, 0.2]);
        let parts = quat_to_mat3_partials(q);
        let h = 1e-6;
        for c in 0..4 {
            let mut qp = q;
            let mut qm = q;
            qp[c] += h;
            qm[c] -= h;
            // raw component perturbation, no renormalization: partials are
            // of the unnormalized map
            let rp = quat_to_mat3(qp);
            let rm = quat_to_mat3(qm);
            for i in 0..3 {
                for j in 0..3 {
                    let fd = (rp.m[i][j] - rm.m[i][j]) / (2.0 * h);
                    assert!(
                        (fd - parts[c].m[i][j]).abs() < 1e-6,
                        "component {c} entry ({i},{j}): fd {fd} vs {}",
                        parts[c].m[i][j]
                    );
                }
            }
        }
    }

    #[test]
    fn cholesky_accepts_spd_rejects_indefinite() {
        let spd = Mat3 {
            m: [[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]],
        };
        let l = spd.cholesky().unwrap();
        assert!((l * l.transpose() - spd).max_abs() < 1e-12);
        let indef = Mat3::from_diag(vec3(1.0, -1.0, 1.0));
        assert!(indef.cholesky().is_none());
    }

    #[test]
    fn pose_3x4_roundtrip_and_look_at() {
        let pose = Pose::look_at(vec3(0.0, 1.0, -5.0), Vec3::ZERO, vec3(0.0, 1.0, 0.0));
        let packed = pose.to_rows_3x4();
        let back = Pose::from_rows_3x4(&packed);
        assert_eq!(pose, back);
        // forward axis points at the target
        let fwd = pose.apply_dir(vec3(0.0, 0.0, 1.0));
        let expect = (Vec3::ZERO - vec3(0.0, 1.0, -5.0)).normalized();
        assert!((fwd - expect).length() < 1e-12);
        // rotation is orthonormal
        let rtr = pose.rot.transpose() * pose.rot;
        assert!((rtr - Mat3::IDENTITY).max_abs() < 1e-12);
    }
}
