//! Point cloud container and cloud-level preprocessing.

use crate::error::{Error, Result};
use crate::sum::pairwise_sum;
use crate::transform::SimilarityTransform;

/// An ordered list of d-dimensional points. The registration algorithms are
/// permutation-invariant: the stored order is preserved through transforms
/// but never affects estimation results.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    dim: usize,
    /// Flat row-major storage, `len = dim * count`.
    data: Vec<f64>,
    name: Option<String>,
}

impl PointCloud {
    /// Builds a cloud from flat coordinates. Rejects empty input, unsupported
    /// dimensions and non-finite coordinates.
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::UnsupportedDimension(dim));
        }
        if data.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if data.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: data.len() % dim,
            });
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("coordinate {bad}")));
        }
        Ok(Self {
            dim,
            data,
            name: None,
        })
    }

    pub fn from_points3(points: &[[f64; 3]]) -> Result<Self> {
        Self::new(3, points.iter().flatten().copied().collect())
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.data
    }

    /// Point indices sorted lexicographically by coordinates. Processing
    /// points in this order makes every reduction independent of the stored
    /// order, which is what the bit-exact permutation-invariance guarantees
    /// rest on.
    pub fn canonical_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| {
            self.point(a)
                .iter()
                .zip(self.point(b))
                .find_map(|(x, y)| x.partial_cmp(y).filter(|o| o.is_ne()))
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        idx
    }

    /// A copy of the cloud with points in canonical (lexicographic) order.
    pub fn canonicalized(&self) -> PointCloud {
        let order = self.canonical_order();
        let mut data = Vec::with_capacity(self.data.len());
        for i in order {
            data.extend_from_slice(self.point(i));
        }
        PointCloud {
            dim: self.dim,
            data,
            name: self.name.clone(),
        }
    }

    /// Centroid computed with a fixed-order pairwise reduction over the
    /// canonical point order, so it does not depend on the stored order.
    pub fn centroid(&self) -> Vec<f64> {
        let order = self.canonical_order();
        let n = self.len() as f64;
        (0..self.dim)
            .map(|d| pairwise_sum(order.len(), |i| self.point(order[i])[d]) / n)
            .collect()
    }

    /// Axis-aligned bounding box as (min, max) per dimension.
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![f64::INFINITY; self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim];
        for p in self.points() {
            for d in 0..self.dim {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        (lo, hi)
    }

    /// Largest axis-aligned extent.
    pub fn max_extent(&self) -> f64 {
        let (lo, hi) = self.bounds();
        lo.iter()
            .zip(&hi)
            .map(|(l, h)| h - l)
            .fold(0.0, f64::max)
    }
}

/// Rescales and recenters a cloud so it fits inside the axis-aligned cube of
/// side 1 centered at the origin, with the longest extent mapped to exactly 1.
/// Returns the normalized cloud together with the similarity transform that
/// was applied, so callers can map results back to the original frame.
pub fn normalize_to_unit_cube(cloud: &PointCloud) -> Result<(PointCloud, SimilarityTransform)> {
    let extent = cloud.max_extent();
    if extent <= 0.0 {
        return Err(Error::DegenerateCloud(
            "all points identical, cannot normalize to unit cube".into(),
        ));
    }
    let (lo, hi) = cloud.bounds();
    let scale = 1.0 / extent;
    let center: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| 0.5 * (l + h)).collect();
    let translation: Vec<f64> = center.iter().map(|c| -c * scale).collect();
    let transform = SimilarityTransform::from_scale_translation(scale, translation)?;
    let normalized = transform.apply(cloud)?;
    Ok((normalized, transform))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rejects_empty_and_nonfinite() {
        assert!(matches!(PointCloud::new(3, vec![]), Err(Error::EmptyCloud)));
        assert!(matches!(
            PointCloud::new(3, vec![0.0, f64::NAN, 1.0]),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(
            PointCloud::new(4, vec![0.0; 4]),
            Err(Error::UnsupportedDimension(4))
        ));
        assert!(matches!(
            PointCloud::new(3, vec![0.0; 4]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn centroid_is_order_independent_bitexact() {
        let a = PointCloud::new(3, vec![0.1, 0.7, -0.3, 2.0, -1.0, 0.5, 0.33, 0.1, 0.9]).unwrap();
        let b = PointCloud::new(3, vec![0.33, 0.1, 0.9, 0.1, 0.7, -0.3, 2.0, -1.0, 0.5]).unwrap();
        assert_eq!(a.centroid(), b.centroid());
    }

    #[test]
    fn normalize_cube_corners() {
        let corners: Vec<[f64; 3]> = (0..8)
            .map(|i| [(i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64])
            .collect();
        let cloud = PointCloud::from_points3(&corners).unwrap();
        let (norm, t) = normalize_to_unit_cube(&cloud).unwrap();
        assert_abs_diff_eq!(t.scale(), 1.0, epsilon = 1e-15);
        for p in norm.points() {
            for c in p {
                assert_abs_diff_eq!(c.abs(), 0.5, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn normalize_segment() {
        let cloud = PointCloud::new(3, vec![0.0, 0.0, 0.0, 2.0, 0.0, 0.0]).unwrap();
        let (norm, t) = normalize_to_unit_cube(&cloud).unwrap();
        assert_abs_diff_eq!(t.scale(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(norm.point(0)[0], -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(norm.point(1)[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn normalize_max_extent_is_one() {
        let cloud = PointCloud::new(
            3,
            vec![0.3, -1.2, 4.0, 2.2, 0.4, -0.7, 1.1, 2.2, 3.3, -0.5, 0.0, 1.0],
        )
        .unwrap();
        let (norm, _) = normalize_to_unit_cube(&cloud).unwrap();
        assert_abs_diff_eq!(norm.max_extent(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn normalize_round_trip() {
        let cloud = PointCloud::new(3, vec![0.3, -1.2, 4.0, 2.2, 0.4, -0.7, 1.1, 2.2, 3.3]).unwrap();
        let (norm, t) = normalize_to_unit_cube(&cloud).unwrap();
        let back = t.inverse().apply(&norm).unwrap();
        for (p, q) in cloud.points().zip(back.points()) {
            for (x, y) in p.iter().zip(q) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn normalize_idempotent() {
        let cloud = PointCloud::new(3, vec![0.3, -1.2, 4.0, 2.2, 0.4, -0.7, 1.1, 2.2, 3.3]).unwrap();
        let (norm, _) = normalize_to_unit_cube(&cloud).unwrap();
        let (_, t2) = normalize_to_unit_cube(&norm).unwrap();
        assert_abs_diff_eq!(t2.scale(), 1.0, epsilon = 1e-12);
        for c in t2.translation() {
            assert!(c.abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_degenerate_errors() {
        let cloud = PointCloud::new(3, vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
        assert!(matches!(
            normalize_to_unit_cube(&cloud),
            Err(Error::DegenerateCloud(_))
        ));
    }
}
