//! Normalized cosine bases on a rectangular domain, coefficient vectors of
//! delta mixtures, Sobolev weights, and the truncated delta-distance.

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::sum::pairwise_sum_vec;

/// Basis configuration: rectangular domain, per-dimension maximum index `K`
/// (so `K+1` frequencies per dimension) and the Sobolev weight exponent.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSpec {
    lower: Vec<f64>,
    upper: Vec<f64>,
    order: usize,
    weight_exponent: f64,
}

impl BasisSpec {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, order: usize, weight_exponent: f64) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::Config("domain bounds length mismatch".into()));
        }
        for (l, u) in lower.iter().zip(&upper) {
            if !(l.is_finite() && u.is_finite() && u > l) {
                return Err(Error::Config(format!("invalid domain bounds [{l}, {u}]")));
            }
        }
        if !(weight_exponent.is_finite() && weight_exponent > 0.0) {
            return Err(Error::Config(format!(
                "weight exponent must be positive, got {weight_exponent}"
            )));
        }
        Ok(Self {
            lower,
            upper,
            order,
            weight_exponent,
        })
    }

    /// The symmetric cube `[-1, 1]^d` used by the registration pipeline.
    pub fn symmetric_cube(dim: usize, order: usize, weight_exponent: f64) -> Result<Self> {
        Self::new(vec![-1.0; dim], vec![1.0; dim], order, weight_exponent)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn weight_exponent(&self) -> f64 {
        self.weight_exponent
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn num_indices(&self) -> usize {
        (self.order + 1).pow(self.dim() as u32)
    }

    /// All multi-indices in the fixed lexicographic order (last dimension
    /// varies fastest). This order defines the layout of every coefficient,
    /// weight and residual vector in the crate.
    pub fn indices(&self) -> Vec<Vec<usize>> {
        let d = self.dim();
        let per = self.order + 1;
        let mut out = Vec::with_capacity(self.num_indices());
        let mut k = vec![0usize; d];
        loop {
            out.push(k.clone());
            let mut dim = d;
            loop {
                if dim == 0 {
                    return out;
                }
                dim -= 1;
                k[dim] += 1;
                if k[dim] < per {
                    break;
                }
                k[dim] = 0;
            }
        }
    }

    /// `k_i * pi / (U_i - L_i)`, the angular frequency along dimension `i`.
    pub fn frequency(&self, i: usize, k_i: usize) -> f64 {
        k_i as f64 * std::f64::consts::PI / (self.upper[i] - self.lower[i])
    }

    /// Normalization constant `h_k`. A zero index component contributes the
    /// full interval length (the constant cosine integrates its square to
    /// `U - L`), a nonzero component half of it; this keeps every basis
    /// function unit-norm, which the truncated distance identity relies on.
    pub fn norm_const(&self, k: &[usize]) -> f64 {
        let mut prod = 1.0;
        for i in 0..self.dim() {
            let len = self.upper[i] - self.lower[i];
            prod *= if k[i] == 0 { len } else { len / 2.0 };
        }
        prod.sqrt()
    }

    /// Evaluates basis function `f_k` at `x`. Total: points outside the
    /// domain are evaluated through the same cosines.
    pub fn eval(&self, k: &[usize], x: &[f64]) -> f64 {
        debug_assert_eq!(k.len(), self.dim());
        debug_assert_eq!(x.len(), self.dim());
        let mut prod = 1.0;
        for i in 0..self.dim() {
            prod *= (self.frequency(i, k[i]) * (x[i] - self.lower[i])).cos();
        }
        prod / self.norm_const(k)
    }

    /// Gradient of `f_k` at `x`, written into `out`.
    pub fn grad(&self, k: &[usize], x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        let mut cos = [0.0f64; 3];
        let mut dsin = [0.0f64; 3];
        for i in 0..d {
            let freq = self.frequency(i, k[i]);
            let arg = freq * (x[i] - self.lower[i]);
            cos[i] = arg.cos();
            dsin[i] = -freq * arg.sin();
        }
        let h = self.norm_const(k);
        for i in 0..d {
            let mut v = dsin[i];
            for j in 0..d {
                if j != i {
                    v *= cos[j];
                }
            }
            out[i] = v / h;
        }
    }

    /// Sobolev weights `(1 + |k|^2)^(-p)` in index order.
    pub fn sobolev_weights(&self) -> Vec<f64> {
        self.indices()
            .iter()
            .map(|k| {
                let norm_sq: f64 = k.iter().map(|&ki| (ki * ki) as f64).sum();
                (1.0 + norm_sq).powf(-self.weight_exponent)
            })
            .collect()
    }
}

/// Per-index means of basis evaluations over a cloud: the cloud's finite
/// functional signature. Comparable only under the producing spec.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientVector {
    values: Vec<f64>,
    spec: BasisSpec,
}

impl CoefficientVector {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn spec(&self) -> &BasisSpec {
        &self.spec
    }
}

/// Coefficients of the delta mixture of `cloud`: entry `k` is the mean of
/// `f_k` over all points. Points are reduced in canonical order with a
/// fixed-shape pairwise tree, so the result is bit-exact under permutation
/// of the input and independent of thread count.
pub fn coefficients(spec: &BasisSpec, cloud: &PointCloud) -> Result<CoefficientVector> {
    if cloud.dim() != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            got: cloud.dim(),
        });
    }
    let order = cloud.canonical_order();
    let indices = spec.indices();
    let m = indices.len();
    let n = cloud.len();
    let sums = pairwise_sum_vec(n, m, |i, acc| {
        let p = cloud.point(order[i]);
        for (slot, k) in acc.iter_mut().zip(&indices) {
            *slot += spec.eval(k, p);
        }
    });
    let values = sums.into_iter().map(|s| s / n as f64).collect();
    Ok(CoefficientVector {
        values,
        spec: spec.clone(),
    })
}

/// Truncated squared delta-distance: `sum_k w_k (c_k^A - c_k^B)^2` with unit
/// weights when `weights` is omitted.
pub fn delta_distance_sq(
    a: &CoefficientVector,
    b: &CoefficientVector,
    weights: Option<&[f64]>,
) -> Result<f64> {
    if a.spec != b.spec {
        return Err(Error::SpecMismatch);
    }
    if let Some(w) = weights {
        if w.len() != a.values.len() {
            return Err(Error::DimensionMismatch {
                expected: a.values.len(),
                got: w.len(),
            });
        }
    }
    let mut total = 0.0;
    for (i, (ca, cb)) in a.values.iter().zip(&b.values).enumerate() {
        let diff = ca - cb;
        let w = weights.map_or(1.0, |w| w[i]);
        total += w * diff * diff;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn cube3(order: usize) -> BasisSpec {
        BasisSpec::symmetric_cube(3, order, 2.0).unwrap()
    }

    #[test]
    fn index_order_is_lexicographic_last_fastest() {
        let spec = BasisSpec::symmetric_cube(2, 1, 1.0).unwrap();
        assert_eq!(
            spec.indices(),
            vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]
        );
        assert_eq!(cube3(4).num_indices(), 125);
    }

    #[test]
    fn constant_basis_value() {
        // 1D on [-1, 1]: f_0 = 1/sqrt(2) everywhere.
        let spec = BasisSpec::new(vec![-1.0], vec![1.0], 4, 1.0).unwrap();
        for x in [-1.0, -0.3, 0.0, 0.9, 2.5] {
            assert_abs_diff_eq!(
                spec.eval(&[0], &[x]),
                1.0 / 2f64.sqrt(),
                epsilon = 1e-15
            );
        }
        // Its squared integral over the domain is 1.
        let n = 10_000;
        let h = 2.0 / n as f64;
        let quad: f64 = (0..n)
            .map(|i| {
                let x = -1.0 + (i as f64 + 0.5) * h;
                spec.eval(&[0], &[x]).powi(2) * h
            })
            .sum();
        assert_abs_diff_eq!(quad, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn eval_examples() {
        let spec1 = BasisSpec::new(vec![-1.0], vec![1.0], 4, 1.0).unwrap();
        // k=2, x=0 on [-1,1]: cos(pi * 1) = -1, h_k = 1.
        assert_abs_diff_eq!(spec1.eval(&[2], &[0.0]), -1.0, epsilon = 1e-12);

        let spec3 = cube3(4);
        let v = spec3.eval(&[1, 0, 0], &[-1.0, 0.3, 0.7]);
        assert_abs_diff_eq!(v, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn grad_zero_index_is_zero() {
        let spec = cube3(4);
        let mut g = [1.0; 3];
        spec.grad(&[0, 0, 0], &[0.3, -0.4, 0.9], &mut g);
        assert_eq!(g, [0.0; 3]);
    }

    #[test]
    fn grad_analytic_example() {
        // d=1, [-1,1], k=1, x=0: frequency pi/2, h=1, so the derivative is
        // -(pi/2) sin(pi/2) = -pi/2.
        let spec = BasisSpec::new(vec![-1.0], vec![1.0], 4, 1.0).unwrap();
        let mut g = [0.0];
        spec.grad(&[1], &[0.0], &mut g);
        assert_abs_diff_eq!(g[0], -std::f64::consts::FRAC_PI_2, epsilon = 1e-12);
    }

    #[test]
    fn grad_matches_finite_difference() {
        let spec = cube3(3);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = 1e-6;
        for _ in 0..50 {
            let k: Vec<usize> = (0..3).map(|_| rng.random_range(0..4)).collect();
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut g = [0.0; 3];
            spec.grad(&k, &x, &mut g);
            for i in 0..3 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let fd = (spec.eval(&k, &xp) - spec.eval(&k, &xm)) / (2.0 * h);
                let denom = g[i].abs().max(fd.abs()).max(1e-9);
                assert!(
                    (g[i] - fd).abs() / denom < 1e-6,
                    "k={k:?} x={x:?} dim {i}: {} vs {fd}",
                    g[i]
                );
            }
        }
    }

    #[test]
    fn sobolev_weight_examples() {
        let spec = cube3(4);
        let w = spec.sobolev_weights();
        assert_eq!(w[0], 1.0);
        // k=(0,0,1) is the second index; |k|^2 = 1, p = 2.
        assert_abs_diff_eq!(w[1], 0.25, epsilon = 1e-15);

        let spec1 = BasisSpec::new(vec![0.0], vec![1.0], 4, 1.0).unwrap();
        let w1 = spec1.sobolev_weights();
        assert_abs_diff_eq!(w1[2], 0.2, epsilon = 1e-15);
    }

    #[test]
    fn single_point_coefficients() {
        let spec = cube3(2);
        let cloud = PointCloud::new(3, vec![0.2, -0.5, 0.7]).unwrap();
        let c = coefficients(&spec, &cloud).unwrap();
        for (val, k) in c.values().iter().zip(spec.indices()) {
            assert_abs_diff_eq!(*val, spec.eval(&k, &[0.2, -0.5, 0.7]), epsilon = 1e-15);
        }
        // Constant index averages to 1/h_0 regardless of the cloud.
        assert_abs_diff_eq!(c.values()[0], 1.0 / spec.norm_const(&[0, 0, 0]), epsilon = 1e-15);
    }

    #[test]
    fn coefficients_match_naive_double_loop() {
        let spec = cube3(4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f64> = (0..300).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cloud = PointCloud::new(3, data).unwrap();
        let c = coefficients(&spec, &cloud).unwrap();
        for (val, k) in c.values().iter().zip(spec.indices()) {
            let naive: f64 = cloud.points().map(|p| spec.eval(&k, p)).sum::<f64>()
                / cloud.len() as f64;
            assert_abs_diff_eq!(*val, naive, epsilon = 1e-12);
        }
    }

    #[test]
    fn distance_zero_for_identical_and_shuffled() {
        let spec = cube3(4);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data: Vec<f64> = (0..60).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cloud = PointCloud::new(3, data.clone()).unwrap();
        let ca = coefficients(&spec, &cloud).unwrap();
        assert_eq!(delta_distance_sq(&ca, &ca, None).unwrap(), 0.0);

        let mut pts: Vec<[f64; 3]> = data.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
        pts.shuffle(&mut rng);
        let shuffled = PointCloud::from_points3(&pts).unwrap();
        let cb = coefficients(&spec, &shuffled).unwrap();
        assert_eq!(ca.values(), cb.values());
        assert_eq!(delta_distance_sq(&ca, &cb, None).unwrap(), 0.0);
    }

    #[test]
    fn translation_is_detected() {
        let spec = cube3(4);
        let cloud = PointCloud::new(3, vec![0.1, 0.2, 0.3, -0.4, 0.0, 0.5]).unwrap();
        let shifted = crate::transform::SimilarityTransform::from_scale_translation(
            1.0,
            vec![0.1, 0.0, 0.0],
        )
        .unwrap()
        .apply(&cloud)
        .unwrap();
        let ca = coefficients(&spec, &cloud).unwrap();
        let cb = coefficients(&spec, &shifted).unwrap();
        assert!(delta_distance_sq(&ca, &cb, None).unwrap() > 1e-6);
    }

    #[test]
    fn spec_mismatch_rejected() {
        let a = coefficients(&cube3(2), &PointCloud::new(3, vec![0.0; 3]).unwrap()).unwrap();
        let b = coefficients(&cube3(3), &PointCloud::new(3, vec![0.0; 3]).unwrap()).unwrap();
        assert!(matches!(
            delta_distance_sq(&a, &b, None),
            Err(Error::SpecMismatch)
        ));
    }

    proptest! {
        #[test]
        fn permutation_invariance_bitexact(
            seed in 0u64..1000,
            n in 2usize..40,
        ) {
            let spec = cube3(3);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f64> = (0..n * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let cloud = PointCloud::new(3, data.clone()).unwrap();
            let mut pts: Vec<[f64; 3]> = data.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
            pts.shuffle(&mut rng);
            let shuffled = PointCloud::from_points3(&pts).unwrap();
            let ca = coefficients(&spec, &cloud).unwrap();
            let cb = coefficients(&spec, &shuffled).unwrap();
            prop_assert_eq!(ca.values(), cb.values());
        }
    }
}
