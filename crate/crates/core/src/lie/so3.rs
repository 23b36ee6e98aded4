//! Exponential and logarithm maps between so(3) and SO(3).

use nalgebra::{Matrix3, Vector3};
use std::f64::consts::PI;

use super::LieError;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Below this norm the Rodrigues coefficients switch to their Taylor series.
pub const SMALL_ANGLE: f64 = 1e-6;

/// Rotations whose angle is this close to π go through the axis-extraction branch.
pub const NEAR_PI: f64 = 1e-3;

/// Skew-symmetric matrix of `w`, so that `hat(w) * v == w.cross(v)`.
pub fn hat(w: &Vec3) -> Mat3 {
    Mat3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Inverse of [`hat`] on the antisymmetric part of `m`.
pub fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// A proper rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Mat3);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Mat3::identity())
    }

    /// Accepts `m` if it is orthogonal with determinant +1 (tolerance 1e-9).
    pub fn from_matrix(m: Mat3) -> Result<Self, LieError> {
        let ortho = (m.transpose() * m - Mat3::identity()).abs().max();
        let det = m.determinant();
        if ortho > 1e-9 || (det - 1.0).abs() > 1e-9 || !m.iter().all(|v| v.is_finite()) {
            return Err(LieError::NotARotation { ortho, det });
        }
        Ok(Rotation(m))
    }

    pub(crate) fn from_matrix_unchecked(m: Mat3) -> Self {
        Rotation(m)
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn into_inner(self) -> Mat3 {
        self.0
    }

    pub fn transpose(&self) -> Rotation {
        Rotation(self.0.transpose())
    }

    pub fn compose(&self, other: &Rotation) -> Rotation {
        Rotation(self.0 * other.0)
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    /// Rotation angle in [0, π].
    pub fn angle(&self) -> f64 {
        let s = vee(&self.0).norm();
        let c = 0.5 * (self.0.trace() - 1.0);
        s.atan2(c)
    }
}

/// `sin θ / θ` and `(1 - cos θ) / θ²` for `θ = sqrt(theta_sq)`.
fn rodrigues_coefficients(theta_sq: f64) -> (f64, f64) {
    if theta_sq < SMALL_ANGLE * SMALL_ANGLE {
        (1.0 - theta_sq / 6.0, 0.5 - theta_sq / 24.0)
    } else {
        let theta = theta_sq.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta_sq)
    }
}

/// Rodrigues formula `I + A(θ) Ŵ + B(θ) Ŵ²`.
pub fn exp_so3(w: &Vec3) -> Rotation {
    let (a, b) = rodrigues_coefficients(w.norm_squared());
    let k = hat(w);
    Rotation(Mat3::identity() + k * a + k * k * b)
}

/// Partial derivatives `∂ exp(ŵ) / ∂ w_k` for k = 0, 1, 2.
pub fn exp_so3_derivatives(w: &Vec3) -> [Mat3; 3] {
    let theta_sq = w.norm_squared();
    let (a, b) = rodrigues_coefficients(theta_sq);
    // A'(θ)/θ and B'(θ)/θ
    let (da, db) = if theta_sq < 1e-4 {
        let t2 = theta_sq;
        (
            -1.0 / 3.0 + t2 / 30.0 - t2 * t2 / 840.0,
            -1.0 / 12.0 + t2 / 180.0 - t2 * t2 / 6720.0,
        )
    } else {
        let t = theta_sq.sqrt();
        let (s, c) = t.sin_cos();
        (
            (t * c - s) / (t * theta_sq),
            (t * s - 2.0 * (1.0 - c)) / (theta_sq * theta_sq),
        )
    };
    let k = hat(w);
    let k2 = k * k;
    let basis = [Vec3::x(), Vec3::y(), Vec3::z()];
    let mut out = [Mat3::zeros(); 3];
    for (idx, e) in basis.iter().enumerate() {
        let ek = hat(e);
        out[idx] = k * (da * w[idx]) + ek * a + k2 * (db * w[idx]) + (ek * k + k * ek) * b;
    }
    out
}

/// Logarithm map with the result norm in [0, π].
///
/// Rotations within [`NEAR_PI`] of a half turn return
/// [`LieError::AngleNearPi`] carrying the axis-extraction estimate.
pub fn log_so3(r: &Rotation) -> Result<Vec3, LieError> {
    let m = r.matrix();
    let v = vee(m);
    let s = v.norm();
    let c = 0.5 * (m.trace() - 1.0);
    let theta = s.atan2(c);
    if theta < SMALL_ANGLE {
        return Ok(v * (1.0 + theta * theta / 6.0));
    }
    if theta > PI - NEAR_PI {
        return Err(LieError::AngleNearPi {
            approx: near_pi_axis_angle(m, &v, theta),
        });
    }
    Ok(v * (theta / theta.sin()))
}

/// Logarithm that never fails, falling back to the low-precision branch near π.
pub fn log_so3_lossy(r: &Rotation) -> Vec3 {
    match log_so3(r) {
        Ok(w) => w,
        Err(LieError::AngleNearPi { approx }) => Vec3::from(approx),
        Err(_) => unreachable!("log_so3 only reports AngleNearPi"),
    }
}

fn near_pi_axis_angle(m: &Mat3, v: &Vec3, theta: f64) -> [f64; 3] {
    // (R + I) / 2 = cos²(θ/2) I + sin²(θ/2) n nᵀ, dominated by n nᵀ near π.
    let sym = (m + Mat3::identity()) * 0.5;
    let col = (0..3)
        .max_by(|&i, &j| sym[(i, i)].total_cmp(&sym[(j, j)]))
        .unwrap_or(0);
    let mut axis: Vec3 = sym.column(col).into();
    let n = axis.norm();
    if n > 0.0 {
        axis /= n;
    } else {
        axis = Vec3::x();
    }
    if axis.dot(v) < 0.0 {
        axis = -axis;
    }
    let w = axis * theta;
    [w.x, w.y, w.z]
}

/// Rescales `w` onto the closed ball of radius π. Returns whether it was clamped.
pub fn clamp_lie_norm(w: &Vec3) -> (Vec3, bool) {
    let n = w.norm();
    if n > PI {
        (w * (PI / n), true)
    } else {
        (*w, false)
    }
}

/// Minimal rotation taking the unit x axis onto the unit vector `u`, as a Lie vector.
///
/// Antiparallel input turns by π about the z axis.
pub fn minimal_rotation_from_x(u: &Vec3) -> Vec3 {
    let axis = Vec3::new(0.0, -u.z, u.y);
    let s = axis.norm();
    let angle = s.atan2(u.x);
    if s < 1e-300 {
        if u.x >= 0.0 {
            Vec3::zeros()
        } else {
            Vec3::new(0.0, 0.0, PI)
        }
    } else {
        axis * (angle / s)
    }
}

/// Minimal rotation (no twist) taking unit vector `from` onto unit vector `to`.
pub fn minimal_rotation_between(from: &Vec3, to: &Vec3) -> Rotation {
    let axis = from.cross(to);
    let s = axis.norm();
    let c = from.dot(to);
    if s < 1e-300 {
        if c >= 0.0 {
            return Rotation::identity();
        }
        // any axis orthogonal to `from`
        let helper = if from.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
        let ortho = from.cross(&helper).normalize();
        return exp_so3(&(ortho * PI));
    }
    exp_so3(&(axis * (s.atan2(c) / s)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn hat_layout() {
        let m = hat(&Vec3::new(1.0, 2.0, 3.0));
        let expected = Mat3::new(0.0, -3.0, 2.0, 3.0, 0.0, -1.0, -2.0, 1.0, 0.0);
        assert_eq!(m, expected);
        assert_eq!(hat(&Vec3::zeros()), Mat3::zeros());
        assert_eq!(m + m.transpose(), Mat3::zeros());
        assert_eq!(vee(&m), Vec3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn exp_identity_and_small_angle() {
        assert_eq!(*exp_so3(&Vec3::zeros()).matrix(), Mat3::identity());
        let w = Vec3::new(1e-8, -2e-8, 3e-9);
        let r = exp_so3(&w);
        assert_abs_diff_eq!(*r.matrix(), Mat3::identity() + hat(&w), epsilon = 1e-15);
    }

    #[test]
    fn log_identity_is_zero() {
        assert_eq!(log_so3(&Rotation::identity()).unwrap(), Vec3::zeros());
    }

    #[test]
    fn log_unit_norm_round_trip() {
        let w = Vec3::new(0.36, -0.48, 0.8);
        let back = log_so3(&exp_so3(&w)).unwrap();
        assert_abs_diff_eq!(back, w, epsilon = 1e-12);
    }

    #[test]
    fn log_near_pi_flags_low_precision() {
        let r = exp_so3(&Vec3::new(PI, 0.0, 0.0));
        match log_so3(&r) {
            Err(LieError::AngleNearPi { approx }) => {
                assert_abs_diff_eq!(approx[0].abs(), PI, epsilon = 1e-9);
                assert_abs_diff_eq!(approx[1], 0.0, epsilon = 1e-9);
                assert_abs_diff_eq!(approx[2], 0.0, epsilon = 1e-9);
            }
            other => panic!("expected AngleNearPi, got {other:?}"),
        }
    }

    #[test]
    fn from_matrix_rejects_reflection() {
        let m = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
        assert!(Rotation::from_matrix(m).is_err());
        assert!(Rotation::from_matrix(*exp_so3(&Vec3::new(0.3, 0.1, 0.2)).matrix()).is_ok());
    }

    #[test]
    fn exp_derivatives_match_finite_differences() {
        for w in [
            Vec3::new(0.3, -0.7, 1.1),
            Vec3::new(1e-5, 2e-5, -1e-5),
            Vec3::new(2.9, 0.1, -0.2),
            Vec3::new(0.004, 0.0, 0.006),
        ] {
            let d = exp_so3_derivatives(&w);
            for k in 0..3 {
                let mut e = Vec3::zeros();
                e[k] = 1e-6;
                let fd = (exp_so3(&(w + e)).into_inner() - exp_so3(&(w - e)).into_inner()) / 2e-6;
                assert_abs_diff_eq!(d[k], fd, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn clamp_rescales_long_vectors() {
        let (w, clamped) = clamp_lie_norm(&Vec3::new(4.0, 0.0, 0.0));
        assert!(clamped);
        assert_abs_diff_eq!(w.norm(), PI, epsilon = 1e-15);
        let (w, clamped) = clamp_lie_norm(&Vec3::new(1.0, 1.0, 0.0));
        assert!(!clamped);
        assert_eq!(w, Vec3::new(1.0, 1.0, 0.0));
    }

    #[test]
    fn minimal_rotation_maps_x_onto_target() {
        for u in [
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(-1.0, 0.0, 0.0),
            Vec3::new(0.2, -0.3, 0.9).normalize(),
            Vec3::x(),
        ] {
            let w = minimal_rotation_from_x(&u);
            assert_abs_diff_eq!(exp_so3(&w).apply(&Vec3::x()), u, epsilon = 1e-12);
            let r = minimal_rotation_between(&Vec3::x(), &u);
            assert_abs_diff_eq!(r.apply(&Vec3::x()), u, epsilon = 1e-12);
        }
    }
}
