//! Point-to-point ICP refinement of an FLS pose estimate. Scale stays frozen
//! at whatever the initial transform carries; each iteration solves the
//! closed-form rigid alignment of nearest-neighbor correspondences.

use nalgebra::{DMatrix, DVector};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::kdtree::{median_nn_spacing, KdTree};
use crate::registration::RegistrationResult;
use crate::transform::SimilarityTransform;

#[derive(Debug, Clone)]
pub struct IcpOptions {
    pub max_iterations: usize,
    /// Correspondences farther than this are discarded. `None` picks
    /// `cutoff_factor` times the median nearest-neighbor spacing of the
    /// target, which adapts to cloud density without tuning.
    pub cutoff: Option<f64>,
    pub cutoff_factor: f64,
    /// Stop once the mean-squared correspondence error improves by less.
    pub tolerance: f64,
}

impl Default for IcpOptions {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            cutoff: None,
            cutoff_factor: 3.0,
            tolerance: 1e-10,
        }
    }
}

/// Least-squares rigid alignment mapping `p` onto `q` (Kabsch): SVD of the
/// cross-covariance of the centered pairs, with the sign of the smallest
/// singular direction flipped when the raw optimum is a reflection.
pub(crate) fn kabsch(p: &[Vec<f64>], q: &[Vec<f64>]) -> Result<SimilarityTransform> {
    let dim = p[0].len();
    let n = p.len() as f64;
    let mut p_bar = DVector::zeros(dim);
    let mut q_bar = DVector::zeros(dim);
    for (a, b) in p.iter().zip(q) {
        for d in 0..dim {
            p_bar[d] += a[d];
            q_bar[d] += b[d];
        }
    }
    p_bar /= n;
    q_bar /= n;
    let mut h: DMatrix<f64> = DMatrix::zeros(dim, dim);
    for (a, b) in p.iter().zip(q) {
        for r in 0..dim {
            for c in 0..dim {
                h[(r, c)] += (a[r] - p_bar[r]) * (b[c] - q_bar[c]);
            }
        }
    }
    let svd = h.svd(true, true);
    let u = svd.u.ok_or_else(|| Error::Solver("SVD failed".into()))?;
    let v_t = svd.v_t.ok_or_else(|| Error::Solver("SVD failed".into()))?;
    let v = v_t.transpose();
    let mut d = DMatrix::identity(dim, dim);
    let vut: DMatrix<f64> = &v * u.transpose();
    if vut.determinant() < 0.0 {
        d[(dim - 1, dim - 1)] = -1.0;
    }
    let rotation = v * d * u.transpose();
    let translation = &q_bar - &rotation * &p_bar;
    SimilarityTransform::new(1.0, rotation, translation)
}

/// Refines `t0` by ICP between `source` and `target`. The result's scale
/// equals `t0`'s.
pub fn refine(
    source: &PointCloud,
    target: &PointCloud,
    t0: &SimilarityTransform,
    options: &IcpOptions,
) -> Result<RegistrationResult> {
    refine_with_history(source, target, t0, options).map(|(r, _)| r)
}

pub(crate) fn refine_with_history(
    source: &PointCloud,
    target: &PointCloud,
    t0: &SimilarityTransform,
    options: &IcpOptions,
) -> Result<(RegistrationResult, Vec<f64>)> {
    let start = std::time::Instant::now();
    if source.dim() != target.dim() || source.dim() != t0.dim() {
        return Err(Error::DimensionMismatch {
            expected: target.dim(),
            got: source.dim(),
        });
    }
    let cutoff = options
        .cutoff
        .unwrap_or_else(|| options.cutoff_factor * median_nn_spacing(target));
    let cutoff_sq = cutoff * cutoff;
    let tree = KdTree::new(target);
    let dim = source.dim();

    let mut current = t0.clone();
    let mut prev_mse = f64::INFINITY;
    let mut mse_history = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut buf = vec![0.0; dim];

    while iterations < options.max_iterations {
        let mut pairs_p = Vec::new();
        let mut pairs_q = Vec::new();
        let mut err_sum = 0.0;
        for a in source.points() {
            current.apply_point(a, &mut buf);
            let (j, d_sq) = tree.nearest(&buf, None);
            if d_sq <= cutoff_sq {
                err_sum += d_sq;
                pairs_p.push(buf.clone());
                pairs_q.push(target.point(j).to_vec());
            }
        }
        if pairs_p.len() < 3 {
            return Err(Error::TooFewCorrespondences {
                got: pairs_p.len(),
                need: 3,
            });
        }
        let mse = err_sum / pairs_p.len() as f64;
        if mse <= options.tolerance || prev_mse - mse < options.tolerance {
            converged = true;
            prev_mse = mse;
            mse_history.push(mse);
            break;
        }
        prev_mse = mse;
        mse_history.push(mse);
        let delta = kabsch(&pairs_p, &pairs_q)?;
        current = delta.compose(&current);
        iterations += 1;
    }

    Ok((
        RegistrationResult {
            transform: current,
            final_cost: prev_mse,
            iterations,
            converged,
            wall_time: start.elapsed().as_secs_f64(),
        },
        mse_history,
    ))
}
