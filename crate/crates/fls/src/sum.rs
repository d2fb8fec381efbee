//! Deterministic reductions.
//!
//! All accumulations over points use a fixed-shape pairwise tree whose
//! structure depends only on the element count, so results are identical
//! across thread counts and, combined with canonical point ordering,
//! across input permutations.

use rayon::join;

/// Chunk size below which reductions run sequentially.
const PAR_THRESHOLD: usize = 512;

/// Pairwise (tree) sum of `f(0), ..., f(n-1)`.
pub fn pairwise_sum<F: Fn(usize) -> f64>(n: usize, f: F) -> f64 {
    fn rec<F: Fn(usize) -> f64>(lo: usize, hi: usize, f: &F) -> f64 {
        match hi - lo {
            0 => 0.0,
            1 => f(lo),
            len => {
                let mid = lo + len / 2;
                rec(lo, mid, f) + rec(mid, hi, f)
            }
        }
    }
    rec(0, n, &f)
}

/// Pairwise sum of vector-valued terms: `per_term(i, acc)` must add term `i`
/// into `acc` (which arrives zeroed). The reduction tree is split across
/// threads above a fixed threshold; the tree shape is a function of `n` only.
pub fn pairwise_sum_vec<F>(n: usize, width: usize, per_term: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    fn add(acc: &mut [f64], other: &[f64]) {
        for (a, b) in acc.iter_mut().zip(other) {
            *a += b;
        }
    }

    fn rec<F>(lo: usize, hi: usize, width: usize, per_term: &F) -> Vec<f64>
    where
        F: Fn(usize, &mut [f64]) + Sync,
    {
        let len = hi - lo;
        if len == 0 {
            return vec![0.0; width];
        }
        if len == 1 {
            let mut acc = vec![0.0; width];
            per_term(lo, &mut acc);
            return acc;
        }
        let mid = lo + len / 2;
        if len > PAR_THRESHOLD {
            let (mut left, right) = join(
                || rec(lo, mid, width, per_term),
                || rec(mid, hi, width, per_term),
            );
            add(&mut left, &right);
            left
        } else {
            let mut left = rec(lo, mid, width, per_term);
            let right = rec(mid, hi, width, per_term);
            add(&mut left, &right);
            left
        }
    }

    rec(0, n, width, &per_term)
}
