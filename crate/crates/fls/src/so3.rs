//! Minimal SO(3) helpers: exponential map, logarithm, and the left Jacobian
//! used by the pose Jacobian of the registration residuals.

use nalgebra::{Matrix3, Vector3};

/// Angle below which Taylor expansions replace the closed forms.
const SMALL_ANGLE: f64 = 1e-8;

/// Copies a static 3x3 matrix into the dynamically sized representation the
/// rest of the crate uses.
pub fn to_dmatrix(m: &Matrix3<f64>) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_column_slice(3, 3, m.as_slice())
}

pub fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Rodrigues formula, `exp([w]x)`.
pub fn exp(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta = w.norm();
    let wx = skew(w);
    if theta < SMALL_ANGLE {
        return Matrix3::identity() + wx + 0.5 * wx * wx;
    }
    let (s, c) = theta.sin_cos();
    Matrix3::identity() + (s / theta) * wx + ((1.0 - c) / (theta * theta)) * wx * wx
}

/// Axis-angle logarithm for rotations with angle in [0, pi].
pub fn log(r: &Matrix3<f64>) -> Vector3<f64> {
    let cos_theta = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();
    if theta < SMALL_ANGLE {
        return Vector3::new(
            r[(2, 1)] - r[(1, 2)],
            r[(0, 2)] - r[(2, 0)],
            r[(1, 0)] - r[(0, 1)],
        ) * 0.5;
    }
    if (std::f64::consts::PI - theta) < 1e-6 {
        // Near pi the antisymmetric part vanishes; recover the axis from the
        // symmetric part instead.
        let m = (r + Matrix3::identity()) * 0.5;
        let axis = if m[(0, 0)] >= m[(1, 1)] && m[(0, 0)] >= m[(2, 2)] {
            Vector3::new(m[(0, 0)].sqrt(), m[(0, 1)] / m[(0, 0)].sqrt(), m[(0, 2)] / m[(0, 0)].sqrt())
        } else if m[(1, 1)] >= m[(2, 2)] {
            Vector3::new(m[(1, 0)] / m[(1, 1)].sqrt(), m[(1, 1)].sqrt(), m[(1, 2)] / m[(1, 1)].sqrt())
        } else {
            Vector3::new(m[(2, 0)] / m[(2, 2)].sqrt(), m[(2, 1)] / m[(2, 2)].sqrt(), m[(2, 2)].sqrt())
        };
        return axis.normalize() * theta;
    }
    Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    ) * (theta / (2.0 * theta.sin()))
}

/// Left Jacobian of SO(3):
/// `J_l(w) = I + (1-cos t)/t^2 [w]x + (t - sin t)/t^3 [w]x^2`.
///
/// Satisfies `exp([w + J_l(w) dw]x) ~= exp([dw']x) exp([w]x)` to first order,
/// which is exactly the chain-rule factor needed when differentiating
/// `exp([w]x) q` with respect to `w` at arbitrary `w`.
pub fn left_jacobian(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta = w.norm();
    let wx = skew(w);
    if theta < SMALL_ANGLE {
        return Matrix3::identity() + 0.5 * wx + (1.0 / 6.0) * wx * wx;
    }
    let t2 = theta * theta;
    Matrix3::identity()
        + ((1.0 - theta.cos()) / t2) * wx
        + ((theta - theta.sin()) / (t2 * theta)) * wx * wx
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn exp_log_round_trip() {
        for w in [
            Vector3::new(0.3, -0.4, 0.9),
            Vector3::new(1e-10, 0.0, 0.0),
            Vector3::new(0.0, 3.0, 0.0),
            Vector3::new(2.2, 1.1, -0.4),
        ] {
            let r = exp(&w);
            let back = log(&r);
            assert_abs_diff_eq!((w - back).norm(), 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn exp_is_rotation() {
        let r = exp(&Vector3::new(0.7, -1.3, 0.2));
        let dev = (r.transpose() * r - Matrix3::identity()).abs().max();
        assert!(dev < 1e-12);
        assert_abs_diff_eq!(r.determinant(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn left_jacobian_matches_finite_difference() {
        let w = Vector3::new(0.5, -0.2, 0.8);
        let q = Vector3::new(0.3, 1.1, -0.7);
        // d/dw [exp([w]x) q] = -[exp([w]x) q]x J_l(w)
        let analytic = -skew(&(exp(&w) * q)) * left_jacobian(&w);
        let h = 1e-7;
        for j in 0..3 {
            let mut wp = w;
            let mut wm = w;
            wp[j] += h;
            wm[j] -= h;
            let fd = (exp(&wp) * q - exp(&wm) * q) / (2.0 * h);
            for i in 0..3 {
                assert_abs_diff_eq!(analytic[(i, j)], fd[i], epsilon = 1e-6);
            }
        }
    }
}
