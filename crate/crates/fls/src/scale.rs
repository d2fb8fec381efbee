//! Decoupled scale estimation from translation-rotation-invariant
//! measurements (TRIMs): pairwise intra-cloud distances depend only on shape
//! and scale, so the relative scale is recovered by a one-dimensional
//! functional least-squares problem over the TRIM multisets before any pose
//! estimation happens.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::basis::BasisSpec;
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::registration::{register, FlsConfig, RegistrationResult};
use crate::solver::{solve, LeastSquaresProblem, SolverOptions};
use crate::sum::pairwise_sum_vec;
use crate::transform::SimilarityTransform;

/// Pairwise Euclidean distances of a cloud, sorted ascending. Sorting makes
/// every downstream reduction independent of point order.
#[derive(Debug, Clone)]
pub struct TrimSet {
    distances: Vec<f64>,
    source_count: usize,
}

impl TrimSet {
    pub fn distances(&self) -> &[f64] {
        &self.distances
    }

    pub fn source_count(&self) -> usize {
        self.source_count
    }

    pub fn len(&self) -> usize {
        self.distances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distances.is_empty()
    }

    pub fn max_distance(&self) -> f64 {
        *self.distances.last().unwrap()
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Generates TRIMs. All `N(N-1)/2` unordered pairs are used when they fit in
/// `max_pairs`; otherwise `max_pairs` pairs are drawn uniformly (with
/// replacement over the pair set, deterministically from `seed`).
pub fn trims(cloud: &PointCloud, max_pairs: Option<usize>, seed: u64) -> Result<TrimSet> {
    let n = cloud.len();
    if n < 2 {
        return Err(Error::DegenerateCloud(
            "TRIMs require at least 2 points".into(),
        ));
    }
    let exhaustive = n * (n - 1) / 2;
    let budget = max_pairs.unwrap_or(usize::MAX);
    let mut distances = Vec::with_capacity(exhaustive.min(budget));
    if exhaustive <= budget {
        for i in 0..n {
            for j in (i + 1)..n {
                let d = distance(cloud.point(i), cloud.point(j));
                if d == 0.0 {
                    return Err(Error::RedundantPoints);
                }
                distances.push(d);
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        while distances.len() < budget {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            if i == j {
                continue;
            }
            let d = distance(cloud.point(i), cloud.point(j));
            if d == 0.0 {
                return Err(Error::RedundantPoints);
            }
            distances.push(d);
        }
    }
    distances.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(TrimSet {
        distances,
        source_count: n,
    })
}

/// Options for the 1D scale problem.
#[derive(Debug, Clone)]
pub struct ScaleOptions {
    /// Maximum basis index; `order + 1` scalar residuals (default 4, so 5).
    pub order: usize,
    /// Upper bound of the scale search range; the basis domain covers
    /// source TRIMs stretched by up to this factor.
    pub s_max: f64,
    /// TRIM subsampling threshold.
    pub max_pairs: usize,
    /// Seed for TRIM subsampling.
    pub seed: u64,
    /// Headroom factor on the 1D basis domain.
    pub domain_margin: f64,
    /// Seed the solve from the best of a coarse log-spaced scan in addition
    /// to the caller's initial guess.
    pub grid_init: bool,
    pub solver: SolverOptions,
}

impl Default for ScaleOptions {
    fn default() -> Self {
        Self {
            order: 4,
            s_max: 10.0,
            max_pairs: 2_000_000,
            seed: 0,
            domain_margin: 1.5,
            grid_init: true,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScaleEstimate {
    pub scale: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Mean of `f_k` (and optionally of `d * f_k'`) over `s * d` for all TRIM
/// distances `d`, for every `k` up to the spec order. Cosines of the
/// harmonics come from a Chebyshev recurrence on the fundamental angle.
fn trim_means(distances: &[f64], spec: &BasisSpec, s: f64, with_grad: bool) -> (Vec<f64>, Vec<f64>) {
    let per = spec.order() + 1;
    let domain_len = spec.upper()[0] - spec.lower()[0];
    let base_freq = std::f64::consts::PI / domain_len;
    let norms: Vec<f64> = (0..per).map(|k| spec.norm_const(&[k])).collect();
    let width = if with_grad { 2 * per } else { per };
    let n = distances.len();
    let sums = pairwise_sum_vec(n, width, |i, acc| {
        let d = distances[i];
        let phi = base_freq * (s * d - spec.lower()[0]);
        let (sin1, cos1) = phi.sin_cos();
        let mut c_prev = 1.0;
        let mut c_cur = cos1;
        let mut s_prev = 0.0;
        let mut s_cur = sin1;
        for k in 0..per {
            let (ck, sk) = match k {
                0 => (1.0, 0.0),
                1 => (cos1, sin1),
                _ => {
                    let cn = 2.0 * cos1 * c_cur - c_prev;
                    let sn = 2.0 * cos1 * s_cur - s_prev;
                    c_prev = c_cur;
                    c_cur = cn;
                    s_prev = s_cur;
                    s_cur = sn;
                    (cn, sn)
                }
            };
            acc[k] += ck / norms[k];
            if with_grad {
                // d/ds f_k(s d) = -k_bar * sin(k phi) * d / h_k
                acc[per + k] += -(k as f64) * base_freq * sk * d / norms[k];
            }
        }
    });
    let inv_n = 1.0 / n as f64;
    let values = sums[..per].iter().map(|v| v * inv_n).collect();
    let grads = if with_grad {
        sums[per..].iter().map(|v| v * inv_n).collect()
    } else {
        Vec::new()
    };
    (values, grads)
}

/// 1D FLS problem over `u = ln s`: residual `k` is
/// `sqrt(w_k) * (mean_pairs f_k(s |a_i - a_j|) - mean_pairs f_k(|b_i - b_j|))`
/// with `w_k = (1 + k^2)^-1`. Optimizing the log keeps `s` positive without
/// constraints.
pub struct ScaleProblem {
    source_distances: Vec<f64>,
    spec: BasisSpec,
    sqrt_weights: Vec<f64>,
    target: Vec<f64>,
}

impl ScaleProblem {
    pub fn new(source_trims: &TrimSet, target_trims: &TrimSet, options: &ScaleOptions) -> Result<Self> {
        let domain_len = options.domain_margin
            * (options.s_max * source_trims.max_distance()).max(target_trims.max_distance());
        let spec = BasisSpec::new(vec![0.0], vec![domain_len], options.order, 1.0)?;
        let (target, _) = trim_means(target_trims.distances(), &spec, 1.0, false);
        let sqrt_weights = spec.sobolev_weights().iter().map(|w| w.sqrt()).collect();
        Ok(Self {
            source_distances: source_trims.distances().to_vec(),
            spec,
            sqrt_weights,
            target,
        })
    }

    pub fn cost_at_scale(&self, s: f64) -> f64 {
        self.residuals(&DVector::from_vec(vec![s.ln()])).norm_squared()
    }
}

impl LeastSquaresProblem for ScaleProblem {
    fn num_params(&self) -> usize {
        1
    }

    fn num_residuals(&self) -> usize {
        self.spec.order() + 1
    }

    fn residuals(&self, x: &DVector<f64>) -> DVector<f64> {
        let s = x[0].exp();
        let per = self.num_residuals();
        if !s.is_finite() {
            return DVector::from_element(per, f64::NAN);
        }
        let (means, _) = trim_means(&self.source_distances, &self.spec, s, false);
        DVector::from_iterator(
            per,
            (0..per).map(|k| self.sqrt_weights[k] * (means[k] - self.target[k])),
        )
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let s = x[0].exp();
        let per = self.num_residuals();
        let (_, grads) = trim_means(&self.source_distances, &self.spec, s, true);
        // Chain rule: d/du = s * d/ds.
        DMatrix::from_fn(per, 1, |k, _| self.sqrt_weights[k] * grads[k] * s)
    }
}

/// Estimates the relative scale between two clouds from their TRIMs.
pub fn estimate_scale(
    source: &PointCloud,
    target: &PointCloud,
    options: &ScaleOptions,
    initial: f64,
) -> Result<ScaleEstimate> {
    if !(initial.is_finite() && initial > 0.0) {
        return Err(Error::Config(format!("initial scale {initial} must be positive")));
    }
    let source_trims = trims(source, Some(options.max_pairs), options.seed)?;
    let target_trims = trims(target, Some(options.max_pairs), options.seed.wrapping_add(1))?;
    let problem = ScaleProblem::new(&source_trims, &target_trims, options)?;

    let mut best_u = initial.ln();
    let mut best_cost = problem.cost_at_scale(initial);
    if options.grid_init {
        let steps = 33;
        let lo = (1.0 / options.s_max).ln();
        let hi = options.s_max.ln();
        for i in 0..=steps {
            let u = lo + (hi - lo) * i as f64 / steps as f64;
            let cost = problem.residuals(&DVector::from_vec(vec![u])).norm_squared();
            if cost < best_cost {
                best_cost = cost;
                best_u = u;
            }
        }
    }

    let (x, report) = solve(&problem, &DVector::from_vec(vec![best_u]), &options.solver)?;
    let scale = x[0].exp();
    // Log-space optimization keeps the scale positive by construction; an
    // estimate escaping the search range is still reported, flagged as
    // unconverged.
    let in_range = scale.is_finite() && scale > 1.0 / (10.0 * options.s_max) && scale < 10.0 * options.s_max;
    Ok(ScaleEstimate {
        scale: if in_range { scale } else { scale.clamp(1e-8, 10.0 * options.s_max) },
        final_cost: report.final_cost,
        iterations: report.iterations,
        converged: report.converged() && in_range,
    })
}

/// Two-stage registration with unknown scale: recover `s` from TRIMs, then
/// run pose estimation with `s` fixed. The returned transform carries the
/// estimated scale.
pub fn register_with_unknown_scale(
    source: &PointCloud,
    target: &PointCloud,
    config: &FlsConfig,
    init: &SimilarityTransform,
) -> Result<RegistrationResult> {
    let start = std::time::Instant::now();
    let estimate = estimate_scale(source, target, &config.scale, init.scale())?;
    let mut result = register(source, target, config, estimate.scale, init)?;
    result.converged = result.converged && estimate.converged;
    result.wall_time = start.elapsed().as_secs_f64();
    Ok(result)
}
