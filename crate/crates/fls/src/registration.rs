//! Functional least-squares pose estimation with known scale.
//!
//! The pose problem minimizes Sobolev-weighted differences between the
//! basis coefficients of the transformed source cloud and the (cached)
//! coefficients of the target cloud, over a rotation increment and a
//! translation. Preprocessing maps both clouds into the `[-1, 1]^d` basis
//! domain; the estimate is mapped back to the original frame on output.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::basis::{coefficients, BasisSpec, CoefficientVector};
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::scale::ScaleOptions;
use crate::so3;
use crate::solver::{solve, LeastSquaresProblem, SolverOptions, SolverReport};
use crate::sum::pairwise_sum_vec;
use crate::transform::SimilarityTransform;

/// Outcome of a registration run. The transform is expressed in the same
/// frame as the input clouds; `final_cost` is the optimized objective in the
/// normalized frame.
#[derive(Debug, Clone)]
pub struct RegistrationResult {
    pub transform: SimilarityTransform,
    pub final_cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub wall_time: f64,
}

/// Configuration for FLS registration.
#[derive(Debug, Clone)]
pub struct FlsConfig {
    /// Maximum basis index per dimension; `order + 1` frequencies per
    /// dimension, so the default 4 gives 5 per dimension (125 residuals in
    /// 3D).
    pub order: usize,
    /// Sobolev weight exponent; `None` selects `(d + 1) / 2`.
    pub weight_exponent: Option<f64>,
    pub solver: SolverOptions,
    /// Start the translation estimate from aligned centroids.
    pub pre_align_centroids: bool,
    /// Fraction of the basis domain kept free around the clouds.
    pub margin: f64,
    /// Options for decoupled scale estimation.
    pub scale: ScaleOptions,
}

impl Default for FlsConfig {
    fn default() -> Self {
        Self {
            order: 4,
            weight_exponent: None,
            solver: SolverOptions::default(),
            pre_align_centroids: true,
            margin: 0.1,
            scale: ScaleOptions::default(),
        }
    }
}

impl FlsConfig {
    pub fn weight_exponent_for(&self, dim: usize) -> f64 {
        self.weight_exponent
            .unwrap_or((dim as f64 + 1.0) / 2.0)
    }

    pub fn basis_spec(&self, dim: usize) -> Result<BasisSpec> {
        BasisSpec::symmetric_cube(dim, self.order, self.weight_exponent_for(dim))
    }
}

/// Per-dimension cosine tables shared by the residual and Jacobian
/// accumulators. Evaluation follows the exact multiply order of
/// `BasisSpec::eval`/`grad` so both routes produce identical values.
struct BasisTables {
    dim: usize,
    per_dim: usize,
    freqs: Vec<f64>,
    lower: Vec<f64>,
    /// Flattened multi-indices, `m * dim` entries.
    flat: Vec<usize>,
    norm: Vec<f64>,
    m: usize,
}

impl BasisTables {
    fn new(spec: &BasisSpec) -> Self {
        let dim = spec.dim();
        let per_dim = spec.order() + 1;
        let freqs: Vec<f64> = (0..dim)
            .flat_map(|i| (0..per_dim).map(move |k| (i, k)))
            .map(|(i, k)| spec.frequency(i, k))
            .collect();
        let indices = spec.indices();
        let norm = indices.iter().map(|k| spec.norm_const(k)).collect();
        let flat = indices.into_iter().flatten().collect();
        Self {
            dim,
            per_dim,
            freqs,
            lower: spec.lower().to_vec(),
            flat,
            norm,
            m: spec.num_indices(),
        }
    }

    fn fill(&self, p: &[f64], cos: &mut [f64], dsin: &mut [f64]) {
        for i in 0..self.dim {
            for k in 0..self.per_dim {
                let freq = self.freqs[i * self.per_dim + k];
                let arg = freq * (p[i] - self.lower[i]);
                let (s, c) = arg.sin_cos();
                cos[i * self.per_dim + k] = c;
                dsin[i * self.per_dim + k] = -freq * s;
            }
        }
    }

    /// `acc[k] += f_k(p)` given filled cosine tables.
    fn add_values(&self, cos: &[f64], acc: &mut [f64]) {
        for k in 0..self.m {
            let kk = &self.flat[k * self.dim..(k + 1) * self.dim];
            let mut prod = 1.0;
            for i in 0..self.dim {
                prod *= cos[i * self.per_dim + kk[i]];
            }
            acc[k] += prod / self.norm[k];
        }
    }

    /// Gradient of `f_k` at the tabled point, written into `out`.
    fn grad(&self, k: usize, cos: &[f64], dsin: &[f64], out: &mut [f64]) {
        let kk = &self.flat[k * self.dim..(k + 1) * self.dim];
        for i in 0..self.dim {
            let mut v = dsin[i * self.per_dim + kk[i]];
            for j in 0..self.dim {
                if j != i {
                    v *= cos[j * self.per_dim + kk[j]];
                }
            }
            out[i] = v / self.norm[k];
        }
    }
}

/// The 3D pose problem: parameters are `(omega, tau)` with the model
/// `p_i = s * exp([omega]x) * R * a_i + t + tau`. The Jacobian is exact at
/// any `omega` through the SO(3) left Jacobian, so no re-centering is needed
/// inside a solve; accepted increments are composed into the base transform
/// afterwards.
pub struct PoseProblem {
    points: Vec<f64>,
    n: usize,
    tables: BasisTables,
    sqrt_weights: Vec<f64>,
    target: Vec<f64>,
    scale: f64,
    base_rotation: Matrix3<f64>,
    base_translation: Vector3<f64>,
}

impl PoseProblem {
    /// `source` is reduced in canonical order internally. The basis spec is
    /// taken from the target coefficients, which are computed once per
    /// registration since they do not depend on the pose.
    pub fn new(
        source: &PointCloud,
        target: &CoefficientVector,
        base: &SimilarityTransform,
    ) -> Result<Self> {
        let spec = target.spec();
        if source.dim() != 3 || spec.dim() != 3 || base.dim() != 3 {
            return Err(Error::UnsupportedDimension(source.dim()));
        }
        let canonical = source.canonicalized();
        let rot = base.rotation();
        let base_rotation = Matrix3::from_fn(|i, j| rot[(i, j)]);
        let base_translation = Vector3::from_fn(|i, _| base.translation()[i]);
        Ok(Self {
            points: canonical.coords().to_vec(),
            n: canonical.len(),
            tables: BasisTables::new(spec),
            sqrt_weights: spec.sobolev_weights().iter().map(|w| w.sqrt()).collect(),
            target: target.values().to_vec(),
            scale: base.scale(),
            base_rotation,
            base_translation,
        })
    }

    fn pose_at(&self, x: &DVector<f64>) -> (Matrix3<f64>, Vector3<f64>, Vector3<f64>) {
        let omega = Vector3::new(x[0], x[1], x[2]);
        let tau = Vector3::new(x[3], x[4], x[5]);
        let rotation = so3::exp(&omega) * self.base_rotation;
        (rotation, self.base_translation + tau, omega)
    }
}

impl LeastSquaresProblem for PoseProblem {
    fn num_params(&self) -> usize {
        6
    }

    fn num_residuals(&self) -> usize {
        self.tables.m
    }

    fn residuals(&self, x: &DVector<f64>) -> DVector<f64> {
        let (rotation, translation, _) = self.pose_at(x);
        let m = self.tables.m;
        let sums = pairwise_sum_vec(self.n, m, |i, acc| {
            let a = Vector3::from_column_slice(&self.points[i * 3..(i + 1) * 3]);
            let p = self.scale * (rotation * a) + translation;
            let mut cos = vec![0.0; 3 * self.tables.per_dim];
            let mut dsin = vec![0.0; 3 * self.tables.per_dim];
            self.tables.fill(p.as_slice(), &mut cos, &mut dsin);
            self.tables.add_values(&cos, acc);
        });
        let inv_n = 1.0 / self.n as f64;
        DVector::from_iterator(
            m,
            (0..m).map(|k| self.sqrt_weights[k] * (sums[k] * inv_n - self.target[k])),
        )
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let (rotation, translation, omega) = self.pose_at(x);
        let left_jac = so3::left_jacobian(&omega);
        let m = self.tables.m;
        let sums = pairwise_sum_vec(self.n, m * 6, |i, acc| {
            let a = Vector3::from_column_slice(&self.points[i * 3..(i + 1) * 3]);
            let q = rotation * a;
            let p = self.scale * q + translation;
            // d p / d omega = -s [exp([w]x) R a]x J_l(w); d p / d tau = I.
            let dp_domega = -self.scale * so3::skew(&q) * left_jac;
            let mut cos = vec![0.0; 3 * self.tables.per_dim];
            let mut dsin = vec![0.0; 3 * self.tables.per_dim];
            self.tables.fill(p.as_slice(), &mut cos, &mut dsin);
            let mut g = [0.0; 3];
            for k in 0..m {
                self.tables.grad(k, &cos, &dsin, &mut g);
                let row = &mut acc[k * 6..(k + 1) * 6];
                for c in 0..3 {
                    row[c] += g[0] * dp_domega[(0, c)]
                        + g[1] * dp_domega[(1, c)]
                        + g[2] * dp_domega[(2, c)];
                    row[3 + c] += g[c];
                }
            }
        });
        let inv_n = 1.0 / self.n as f64;
        DMatrix::from_fn(m, 6, |k, c| {
            self.sqrt_weights[k] * sums[k * 6 + c] * inv_n
        })
    }
}

/// The 2D pose problem: parameters `(theta, tau_x, tau_y)` with the model
/// `p_i = s * rot(theta) * R * a_i + t + tau`.
struct Pose2Problem {
    points: Vec<f64>,
    n: usize,
    tables: BasisTables,
    sqrt_weights: Vec<f64>,
    target: Vec<f64>,
    scale: f64,
    base_rotation: [f64; 4],
    base_translation: [f64; 2],
}

impl Pose2Problem {
    fn new(
        source: &PointCloud,
        target: &CoefficientVector,
        base: &SimilarityTransform,
    ) -> Result<Self> {
        let spec = target.spec();
        if source.dim() != 2 || spec.dim() != 2 || base.dim() != 2 {
            return Err(Error::UnsupportedDimension(source.dim()));
        }
        let canonical = source.canonicalized();
        let r = base.rotation();
        Ok(Self {
            points: canonical.coords().to_vec(),
            n: canonical.len(),
            tables: BasisTables::new(spec),
            sqrt_weights: spec.sobolev_weights().iter().map(|w| w.sqrt()).collect(),
            target: target.values().to_vec(),
            scale: base.scale(),
            base_rotation: [r[(0, 0)], r[(0, 1)], r[(1, 0)], r[(1, 1)]],
            base_translation: [base.translation()[0], base.translation()[1]],
        })
    }

    fn rotation_at(&self, theta: f64) -> [f64; 4] {
        let (s, c) = theta.sin_cos();
        let b = &self.base_rotation;
        [
            c * b[0] - s * b[2],
            c * b[1] - s * b[3],
            s * b[0] + c * b[2],
            s * b[1] + c * b[3],
        ]
    }
}

impl LeastSquaresProblem for Pose2Problem {
    fn num_params(&self) -> usize {
        3
    }

    fn num_residuals(&self) -> usize {
        self.tables.m
    }

    fn residuals(&self, x: &DVector<f64>) -> DVector<f64> {
        let r = self.rotation_at(x[0]);
        let t = [
            self.base_translation[0] + x[1],
            self.base_translation[1] + x[2],
        ];
        let m = self.tables.m;
        let sums = pairwise_sum_vec(self.n, m, |i, acc| {
            let a = &self.points[i * 2..(i + 1) * 2];
            let p = [
                self.scale * (r[0] * a[0] + r[1] * a[1]) + t[0],
                self.scale * (r[2] * a[0] + r[3] * a[1]) + t[1],
            ];
            let mut cos = vec![0.0; 2 * self.tables.per_dim];
            let mut dsin = vec![0.0; 2 * self.tables.per_dim];
            self.tables.fill(&p, &mut cos, &mut dsin);
            self.tables.add_values(&cos, acc);
        });
        let inv_n = 1.0 / self.n as f64;
        DVector::from_iterator(
            m,
            (0..m).map(|k| self.sqrt_weights[k] * (sums[k] * inv_n - self.target[k])),
        )
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let theta = x[0];
        let r = self.rotation_at(theta);
        // Derivative of rot(theta) * R_base with respect to theta.
        let dr = self.rotation_at(theta + std::f64::consts::FRAC_PI_2);
        let t = [
            self.base_translation[0] + x[1],
            self.base_translation[1] + x[2],
        ];
        let m = self.tables.m;
        let sums = pairwise_sum_vec(self.n, m * 3, |i, acc| {
            let a = &self.points[i * 2..(i + 1) * 2];
            let p = [
                self.scale * (r[0] * a[0] + r[1] * a[1]) + t[0],
                self.scale * (r[2] * a[0] + r[3] * a[1]) + t[1],
            ];
            let dp_dtheta = [
                self.scale * (dr[0] * a[0] + dr[1] * a[1]),
                self.scale * (dr[2] * a[0] + dr[3] * a[1]),
            ];
            let mut cos = vec![0.0; 2 * self.tables.per_dim];
            let mut dsin = vec![0.0; 2 * self.tables.per_dim];
            self.tables.fill(&p, &mut cos, &mut dsin);
            let mut g = [0.0; 3];
            for k in 0..m {
                self.tables.grad(k, &cos, &dsin, &mut g);
                let row = &mut acc[k * 3..(k + 1) * 3];
                row[0] += g[0] * dp_dtheta[0] + g[1] * dp_dtheta[1];
                row[1] += g[0];
                row[2] += g[1];
            }
        });
        let inv_n = 1.0 / self.n as f64;
        DMatrix::from_fn(m, 3, |k, c| {
            self.sqrt_weights[k] * sums[k * 3 + c] * inv_n
        })
    }
}

/// Weighted residual vector of the pose objective at transform `t`:
/// entry `k` is `sqrt(w_k) * (mean_i f_k(s R a_i + t) - c_k^B)`.
pub fn residuals(
    source: &PointCloud,
    target: &CoefficientVector,
    transform: &SimilarityTransform,
) -> Result<DVector<f64>> {
    if source.dim() != target.spec().dim() {
        return Err(Error::DimensionMismatch {
            expected: target.spec().dim(),
            got: source.dim(),
        });
    }
    match source.dim() {
        3 => Ok(PoseProblem::new(source, target, transform)?.residuals(&DVector::zeros(6))),
        2 => Ok(Pose2Problem::new(source, target, transform)?.residuals(&DVector::zeros(3))),
        d => Err(Error::UnsupportedDimension(d)),
    }
}

struct Preprocessed {
    source_norm: PointCloud,
    target_norm: PointCloud,
    sigma: f64,
    box_center: Vec<f64>,
    pre_translation: Vec<f64>,
}

/// Centroid alignment followed by a single joint similarity mapping the
/// union bounding box into the basis domain with the configured margin. A
/// single shared scale keeps the rigid ground truth intact.
fn preprocess(
    source: &PointCloud,
    target: &PointCloud,
    scale: f64,
    margin: f64,
) -> Result<Preprocessed> {
    let dim = source.dim();
    let source_centroid = source.centroid();
    let target_centroid = target.centroid();
    let pre_translation: Vec<f64> = (0..dim)
        .map(|i| target_centroid[i] - scale * source_centroid[i])
        .collect();

    let (slo, shi) = source.bounds();
    let (tlo, thi) = target.bounds();
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for i in 0..dim {
        lo[i] = (scale * slo[i] + pre_translation[i]).min(tlo[i]);
        hi[i] = (scale * shi[i] + pre_translation[i]).max(thi[i]);
    }
    let extent = lo
        .iter()
        .zip(&hi)
        .map(|(l, h)| h - l)
        .fold(0.0f64, f64::max);
    if extent <= 0.0 {
        return Err(Error::DegenerateCloud(
            "clouds have zero joint extent".into(),
        ));
    }
    let sigma = 2.0 * (1.0 - margin) / extent;
    let box_center: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| 0.5 * (l + h)).collect();

    let map_source = |p: &[f64], out: &mut Vec<f64>| {
        for i in 0..dim {
            out.push(sigma * (scale * p[i] + pre_translation[i] - box_center[i]));
        }
    };
    let mut sdata = Vec::with_capacity(source.len() * dim);
    for p in source.points() {
        map_source(p, &mut sdata);
    }
    let mut tdata = Vec::with_capacity(target.len() * dim);
    for p in target.points() {
        for i in 0..dim {
            tdata.push(sigma * (p[i] - box_center[i]));
        }
    }
    Ok(Preprocessed {
        source_norm: PointCloud::new(dim, sdata)?,
        target_norm: PointCloud::new(dim, tdata)?,
        sigma,
        box_center,
        pre_translation,
    })
}

/// FLS registration with known scale `s`. Returns the best transform in the
/// original frame; `final_cost` is the optimized objective in the normalized
/// frame.
pub fn register(
    source: &PointCloud,
    target: &PointCloud,
    config: &FlsConfig,
    scale: f64,
    init: &SimilarityTransform,
) -> Result<RegistrationResult> {
    let start = Instant::now();
    let dim = source.dim();
    if target.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: target.dim(),
        });
    }
    if init.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: init.dim(),
        });
    }
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::NonFinite(format!("scale {scale}")));
    }
    if !(0.0..1.0).contains(&config.margin) {
        return Err(Error::Config(format!("margin {} out of [0, 1)", config.margin)));
    }

    let prep = preprocess(source, target, scale, config.margin)?;
    let spec = config.basis_spec(dim)?;
    let target_coeffs = coefficients(&spec, &prep.target_norm)?;

    // Initial pose in the normalized frame. The rotation carries over; the
    // translation either maps the caller's guess through the normalization
    // or starts from aligned centroids.
    let rotation0 = init.rotation().clone();
    let translation0: DVector<f64> = if config.pre_align_centroids {
        let source_norm_centroid = prep.source_norm.centroid();
        let target_norm_centroid = prep.target_norm.centroid();
        let rotated: Vec<f64> = (0..dim)
            .map(|i| {
                (0..dim)
                    .map(|j| rotation0[(i, j)] * source_norm_centroid[j])
                    .sum::<f64>()
            })
            .collect();
        DVector::from_iterator(dim, (0..dim).map(|i| target_norm_centroid[i] - rotated[i]))
    } else {
        DVector::from_iterator(
            dim,
            (0..dim).map(|i| {
                let mut rotated = 0.0;
                for j in 0..dim {
                    rotated +=
                        rotation0[(i, j)] * (prep.pre_translation[j] - prep.box_center[j]);
                }
                prep.sigma * (init.translation()[i] - prep.box_center[i] - rotated)
            }),
        )
    };
    let base = SimilarityTransform::new(1.0, rotation0, translation0)?;

    let (solution, report): (DVector<f64>, SolverReport) = match dim {
        3 => {
            let problem = PoseProblem::new(&prep.source_norm, &target_coeffs, &base)?;
            solve(&problem, &DVector::zeros(6), &config.solver)?
        }
        2 => {
            let problem = Pose2Problem::new(&prep.source_norm, &target_coeffs, &base)?;
            solve(&problem, &DVector::zeros(3), &config.solver)?
        }
        d => return Err(Error::UnsupportedDimension(d)),
    };

    // Compose the solved increment into the base pose, then undo the
    // normalization by conjugation.
    let (rotation_norm, translation_norm) = match dim {
        3 => {
            let omega = Vector3::new(solution[0], solution[1], solution[2]);
            let rot = so3::to_dmatrix(&so3::exp(&omega)) * base.rotation();
            let t = DVector::from_iterator(
                3,
                (0..3).map(|i| base.translation()[i] + solution[3 + i]),
            );
            (rot, t)
        }
        _ => {
            let (s, c) = solution[0].sin_cos();
            let rot = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]) * base.rotation();
            let t = DVector::from_iterator(
                2,
                (0..2).map(|i| base.translation()[i] + solution[1 + i]),
            );
            (rot, t)
        }
    };

    let center = DVector::from_vec(prep.box_center.clone());
    let pre = DVector::from_vec(prep.pre_translation.clone());
    let translation =
        &rotation_norm * (&pre - &center) + &translation_norm / prep.sigma + &center;
    let transform = SimilarityTransform::new(scale, rotation_norm, translation)?;

    Ok(RegistrationResult {
        transform,
        final_cost: report.final_cost,
        iterations: report.iterations,
        converged: report.converged(),
        wall_time: start.elapsed().as_secs_f64(),
    })
}
