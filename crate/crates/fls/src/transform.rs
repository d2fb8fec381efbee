//! Similarity transforms (scale, rotation, translation) and error metrics.

use nalgebra::{DMatrix, DVector};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

const ORTHONORMALITY_TOL: f64 = 1e-9;

/// A similarity transform `x -> s * R * x + t` with `s > 0` and `R` a proper
/// rotation. Immutable after construction; the constructor validates the
/// rotation so downstream code can rely on it.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityTransform {
    scale: f64,
    rotation: DMatrix<f64>,
    translation: DVector<f64>,
}

fn check_rotation(rotation: &DMatrix<f64>) -> Result<()> {
    let d = rotation.nrows();
    if rotation.ncols() != d {
        return Err(Error::InvalidRotation(format!(
            "matrix is {}x{}, expected square",
            rotation.nrows(),
            rotation.ncols()
        )));
    }
    let gram = rotation.transpose() * rotation;
    let mut max_dev: f64 = 0.0;
    for i in 0..d {
        for j in 0..d {
            let target = if i == j { 1.0 } else { 0.0 };
            max_dev = max_dev.max((gram[(i, j)] - target).abs());
        }
    }
    if !max_dev.is_finite() || max_dev >= ORTHONORMALITY_TOL {
        return Err(Error::InvalidRotation(format!(
            "max |R^T R - I| = {max_dev:.3e}"
        )));
    }
    if rotation.determinant() <= 0.0 {
        return Err(Error::InvalidRotation("determinant not positive".into()));
    }
    Ok(())
}

impl SimilarityTransform {
    pub fn new(scale: f64, rotation: DMatrix<f64>, translation: DVector<f64>) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::NonFinite(format!("scale {scale}")));
        }
        check_rotation(&rotation)?;
        if rotation.nrows() != translation.len() {
            return Err(Error::DimensionMismatch {
                expected: rotation.nrows(),
                got: translation.len(),
            });
        }
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("translation".into()));
        }
        Ok(Self {
            scale,
            rotation,
            translation,
        })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            scale: 1.0,
            rotation: DMatrix::identity(dim, dim),
            translation: DVector::zeros(dim),
        }
    }

    pub fn from_scale_translation(scale: f64, translation: Vec<f64>) -> Result<Self> {
        let d = translation.len();
        Self::new(
            scale,
            DMatrix::identity(d, d),
            DVector::from_vec(translation),
        )
    }

    pub fn dim(&self) -> usize {
        self.rotation.nrows()
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn rotation(&self) -> &DMatrix<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &DVector<f64> {
        &self.translation
    }

    /// Replaces the scale, keeping rotation and translation.
    pub fn with_scale(mut self, scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::NonFinite(format!("scale {scale}")));
        }
        self.scale = scale;
        Ok(self)
    }

    pub fn apply_point(&self, p: &[f64], out: &mut [f64]) {
        let d = self.dim();
        for i in 0..d {
            let mut v = self.translation[i];
            for j in 0..d {
                v += self.scale * self.rotation[(i, j)] * p[j];
            }
            out[i] = v;
        }
    }

    /// Applies the transform to every point; ordering and cardinality are
    /// preserved.
    pub fn apply(&self, cloud: &PointCloud) -> Result<PointCloud> {
        if cloud.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: cloud.dim(),
            });
        }
        let d = cloud.dim();
        let mut data = vec![0.0; cloud.len() * d];
        for (i, p) in cloud.points().enumerate() {
            self.apply_point(p, &mut data[i * d..(i + 1) * d]);
        }
        let out = PointCloud::new(d, data)?;
        Ok(match cloud.name() {
            Some(n) => out.with_name(n),
            None => out,
        })
    }

    /// Inverse transform: `x -> (1/s) R^T (x - t)`.
    pub fn inverse(&self) -> Self {
        let rot_inv = self.rotation.transpose();
        let translation = -(&rot_inv * &self.translation) / self.scale;
        Self {
            scale: 1.0 / self.scale,
            rotation: rot_inv,
            translation,
        }
    }

    /// Composition `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            scale: self.scale * other.scale,
            rotation: &self.rotation * &other.rotation,
            translation: self.scale * (&self.rotation * &other.translation) + &self.translation,
        }
    }
}

/// Geodesic rotation error in degrees. For d=3 this is
/// `acos((trace(R_gt^T R_est) - 1) / 2)`, clamped into the valid domain.
pub fn rotation_error_deg(r_est: &DMatrix<f64>, r_gt: &DMatrix<f64>) -> Result<f64> {
    check_rotation(r_est)?;
    check_rotation(r_gt)?;
    if r_est.nrows() != r_gt.nrows() {
        return Err(Error::DimensionMismatch {
            expected: r_gt.nrows(),
            got: r_est.nrows(),
        });
    }
    let rel = r_gt.transpose() * r_est;
    let angle = match r_est.nrows() {
        3 => {
            let c = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
            c.acos()
        }
        2 => rel[(1, 0)].atan2(rel[(0, 0)]).abs(),
        d => return Err(Error::UnsupportedDimension(d)),
    };
    Ok(angle.to_degrees().clamp(0.0, 180.0))
}

/// Euclidean norm of the translation difference.
pub fn translation_error(t_est: &DVector<f64>, t_gt: &DVector<f64>) -> Result<f64> {
    if t_est.len() != t_gt.len() {
        return Err(Error::DimensionMismatch {
            expected: t_gt.len(),
            got: t_est.len(),
        });
    }
    Ok((t_est - t_gt).norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3;
    use approx::assert_abs_diff_eq;
    use nalgebra::Vector3;

    fn rot_z_90() -> DMatrix<f64> {
        so3::to_dmatrix(&so3::exp(&Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2)))
    }

    #[test]
    fn identity_is_noop() {
        let cloud = PointCloud::new(3, vec![0.4, -0.2, 1.1, 3.0, 2.0, -1.0]).unwrap();
        let out = SimilarityTransform::identity(3).apply(&cloud).unwrap();
        assert_eq!(cloud, out);
    }

    #[test]
    fn scale_translate_single_point() {
        let t = SimilarityTransform::from_scale_translation(2.0, vec![1.0, 0.0, 0.0]).unwrap();
        let cloud = PointCloud::new(3, vec![0.0, 0.0, 0.0]).unwrap();
        let out = t.apply(&cloud).unwrap();
        assert_eq!(out.point(0), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn rotate_quarter_turn() {
        let t = SimilarityTransform::new(1.0, rot_z_90(), DVector::zeros(3)).unwrap();
        let cloud = PointCloud::new(3, vec![1.0, 0.0, 0.0]).unwrap();
        let out = t.apply(&cloud).unwrap();
        assert_abs_diff_eq!(out.point(0)[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.point(0)[1], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.point(0)[2], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let t = SimilarityTransform::identity(3);
        let cloud = PointCloud::new(2, vec![1.0, 0.0]).unwrap();
        assert!(matches!(
            t.apply(&cloud),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn invalid_rotation_rejected() {
        let mut r = DMatrix::identity(3, 3);
        r[(0, 0)] = 1.1;
        assert!(SimilarityTransform::new(1.0, r, DVector::zeros(3)).is_err());
        // Reflection has det = -1.
        let mut refl = DMatrix::identity(3, 3);
        refl[(2, 2)] = -1.0;
        assert!(SimilarityTransform::new(1.0, refl, DVector::zeros(3)).is_err());
    }

    #[test]
    fn inverse_round_trip() {
        let t = SimilarityTransform::new(
            2.5,
            rot_z_90(),
            DVector::from_vec(vec![0.3, -0.7, 1.2]),
        )
        .unwrap();
        let cloud = PointCloud::new(3, vec![0.4, -0.2, 1.1, 3.0, 2.0, -1.0]).unwrap();
        let back = t.inverse().apply(&t.apply(&cloud).unwrap()).unwrap();
        for (p, q) in cloud.points().zip(back.points()) {
            for (x, y) in p.iter().zip(q) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn rotation_error_basics() {
        let r = rot_z_90();
        assert_abs_diff_eq!(rotation_error_deg(&r, &r).unwrap(), 0.0, epsilon = 1e-9);

        let i = DMatrix::identity(3, 3);
        let r30 = so3::to_dmatrix(&so3::exp(&(Vector3::new(1.0, 2.0, -0.5).normalize()
            * 30f64.to_radians())));
        assert_abs_diff_eq!(
            rotation_error_deg(&i, &r30).unwrap(),
            30.0,
            epsilon = 1e-9
        );
    }

    #[test]
    fn rotation_error_near_pi_is_clamped() {
        let i = DMatrix::identity(3, 3);
        let r = so3::to_dmatrix(&so3::exp(&Vector3::new(179.9f64.to_radians(), 0.0, 0.0)));
        assert_abs_diff_eq!(
            rotation_error_deg(&i, &r).unwrap(),
            179.9,
            epsilon = 1e-6
        );
    }

    #[test]
    fn rotation_error_symmetric() {
        let a = rot_z_90();
        let b = so3::to_dmatrix(&so3::exp(&Vector3::new(0.4, -0.8, 0.2)));
        assert_abs_diff_eq!(
            rotation_error_deg(&a, &b).unwrap(),
            rotation_error_deg(&b, &a).unwrap(),
            epsilon = 1e-9
        );
    }

    #[test]
    fn translation_error_examples() {
        let z = DVector::from_vec(vec![0.0, 0.0, 0.0]);
        assert_eq!(translation_error(&z, &z).unwrap(), 0.0);
        let t = DVector::from_vec(vec![0.3, 0.4, 0.0]);
        assert_abs_diff_eq!(translation_error(&z, &t).unwrap(), 0.5, epsilon = 1e-15);
        let a = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, 1.0, 1.02]);
        assert_abs_diff_eq!(translation_error(&a, &b).unwrap(), 0.02, epsilon = 1e-15);
    }
}
