use nalgebra::{Matrix3, Vector3};
use std::f64::consts::PI;

use super::GeometryError;

/// Unit quaternion in `w, x, y, z` order, stored in canonical sign.
///
/// `q` and `-q` describe the same rotation. Every constructor and every
/// operation returning a quaternion folds the result onto the hemisphere
/// `w > 0` (or, when `w == 0`, the first nonzero vector component positive),
/// so equal rotations compare equal field by field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitQuaternion {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl Default for UnitQuaternion {
    fn default() -> Self {
        Self::identity()
    }
}

impl UnitQuaternion {
    pub const fn identity() -> Self {
        Self {
            w: 1.0,
            x: 0.0,
            y: 0.0,
            z: 0.0,
        }
    }

    /// Normalizes `(w, x, y, z)` and folds it into canonical sign. Input that
    /// is already unit to machine precision is kept bit for bit, so values
    /// read back from a file reproduce the quaternion that was written.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        let norm_sq = w * w + x * x + y * y + z * z;
        let norm = norm_sq.sqrt();
        if !norm.is_finite() || norm < 1e-12 {
            return Err(GeometryError::DegenerateQuaternion);
        }
        if (norm_sq - 1.0).abs() <= 4.0 * f64::EPSILON {
            return Ok(Self::canonical(w, x, y, z));
        }
        Ok(Self::canonical(w / norm, x / norm, y / norm, z / norm))
    }

    pub fn from_wxyz(q: [f64; 4]) -> Result<Self, GeometryError> {
        Self::new(q[0], q[1], q[2], q[3])
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n < 1e-15 || angle == 0.0 {
            return Self::identity();
        }
        let half = 0.5 * angle;
        let s = half.sin() / n;
        Self::canonical(half.cos(), axis.x * s, axis.y * s, axis.z * s)
    }

    pub fn rot_x(angle: f64) -> Self {
        Self::from_axis_angle(&Vector3::x(), angle)
    }

    pub fn rot_y(angle: f64) -> Self {
        Self::from_axis_angle(&Vector3::y(), angle)
    }

    pub fn rot_z(angle: f64) -> Self {
        Self::from_axis_angle(&Vector3::z(), angle)
    }

    /// Exponential map of a rotation vector (axis times angle).
    pub fn from_rotation_vector(v: &Vector3<f64>) -> Self {
        Self::from_axis_angle(v, v.norm())
    }

    /// Inverse of [`from_rotation_vector`](Self::from_rotation_vector), angle in `[0, π]`.
    pub fn to_rotation_vector(&self) -> Vector3<f64> {
        let v = Vector3::new(self.x, self.y, self.z);
        let s = v.norm();
        if s < 1e-15 {
            return Vector3::zeros();
        }
        let angle = 2.0 * s.atan2(self.w);
        v * (angle / s)
    }

    /// Rotation from an orthonormal matrix (Shepperd's method).
    pub fn from_matrix(m: &Matrix3<f64>) -> Result<Self, GeometryError> {
        let trace = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
        let (w, x, y, z) = if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            (
                0.25 * s,
                (m[(2, 1)] - m[(1, 2)]) / s,
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(1, 0)] - m[(0, 1)]) / s,
            )
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
            (
                (m[(2, 1)] - m[(1, 2)]) / s,
                0.25 * s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
            )
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
            (
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                0.25 * s,
                (m[(1, 2)] + m[(2, 1)]) / s,
            )
        } else {
            let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
            (
                (m[(1, 0)] - m[(0, 1)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
                (m[(1, 2)] + m[(2, 1)]) / s,
                0.25 * s,
            )
        };
        Self::new(w, x, y, z)
    }

    fn canonical(w: f64, x: f64, y: f64, z: f64) -> Self {
        let flip = if w != 0.0 {
            w < 0.0
        } else if x != 0.0 {
            x < 0.0
        } else if y != 0.0 {
            y < 0.0
        } else {
            z < 0.0
        };
        if flip {
            Self {
                w: -w,
                x: -x,
                y: -y,
                z: -z,
            }
        } else {
            Self { w, x, y, z }
        }
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn to_wxyz(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    /// Hamilton product `self * rhs` (apply `rhs` first).
    pub fn mul(&self, rhs: &Self) -> Self {
        let (a, b) = (self, rhs);
        let w = a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z;
        let x = a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y;
        let y = a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x;
        let z = a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w;
        // renormalize so long product chains stay on the sphere
        let n = (w * w + x * x + y * y + z * z).sqrt();
        Self::canonical(w / n, x / n, y / n, z / n)
    }

    pub fn inverse(&self) -> Self {
        Self::canonical(self.w, -self.x, -self.y, -self.z)
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        let u = Vector3::new(self.x, self.y, self.z);
        let t = 2.0 * u.cross(v);
        v + self.w * t + u.cross(&t)
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    /// Angle of the relative rotation `self⁻¹ · other`, in `[0, π]`.
    pub fn angle_to(&self, other: &Self) -> f64 {
        rotation_geodesic(self, other)
    }
}

/// Geodesic distance between two rotations in radians, `2·acos(|⟨r1, r2⟩|)`.
///
/// Near zero the arccos form loses precision, so the angle is taken from the
/// relative quaternion's half-angle with `atan2` instead; both agree to
/// machine precision elsewhere.
pub fn rotation_geodesic(r1: &UnitQuaternion, r2: &UnitQuaternion) -> f64 {
    let rel = r1.inverse().mul(r2);
    let s = (rel.x * rel.x + rel.y * rel.y + rel.z * rel.z).sqrt();
    let angle = 2.0 * s.atan2(rel.w.abs());
    angle.clamp(0.0, PI)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn canonical_sign_folds_double_cover() {
        let q = UnitQuaternion::new(-0.5, 0.5, -0.5, 0.5).unwrap();
        assert!(q.w() > 0.0);
        let p = UnitQuaternion::new(0.0, -1.0, 0.0, 0.0).unwrap();
        assert_eq!(p.to_wxyz(), [0.0, 1.0, 0.0, 0.0]);
        let r = UnitQuaternion::new(0.0, 0.0, -0.6, 0.8).unwrap();
        assert_eq!(r.to_wxyz(), [0.0, 0.0, 0.6, -0.8]);
    }

    #[test]
    fn zero_quaternion_rejected() {
        assert_eq!(
            UnitQuaternion::new(0.0, 0.0, 0.0, 0.0),
            Err(GeometryError::DegenerateQuaternion)
        );
    }

    #[test]
    fn rotate_matches_matrix() {
        let q = UnitQuaternion::new(0.3, -0.2, 0.9, 0.1).unwrap();
        let v = Vector3::new(0.4, -1.3, 2.2);
        let a = q.rotate(&v);
        let b = q.to_matrix() * v;
        assert_abs_diff_eq!((a - b).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn matrix_round_trip() {
        for q in [
            UnitQuaternion::new(0.3, -0.2, 0.9, 0.1).unwrap(),
            UnitQuaternion::rot_x(PI),
            UnitQuaternion::rot_y(3.0),
            UnitQuaternion::rot_z(-2.5),
        ] {
            let back = UnitQuaternion::from_matrix(&q.to_matrix()).unwrap();
            assert_abs_diff_eq!(q.dot(&back).abs(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn rotation_vector_round_trip() {
        let v = Vector3::new(0.3, -1.1, 0.7);
        let q = UnitQuaternion::from_rotation_vector(&v);
        assert_abs_diff_eq!((q.to_rotation_vector() - v).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn geodesic_examples() {
        let r1 = UnitQuaternion::new(0.9, 0.1, -0.3, 0.2).unwrap();
        assert_abs_diff_eq!(rotation_geodesic(&r1, &r1), 0.0, epsilon = 1e-12);
        let r2 = r1.mul(&UnitQuaternion::rot_z(PI / 2.0));
        assert_abs_diff_eq!(rotation_geodesic(&r1, &r2), PI / 2.0, epsilon = 1e-12);
        let r3 = r1.mul(&UnitQuaternion::rot_x(PI));
        assert_abs_diff_eq!(rotation_geodesic(&r1, &r3), PI, epsilon = 1e-12);
    }
}
