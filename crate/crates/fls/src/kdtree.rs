//! Static k-d tree for nearest-neighbor lookups during ICP refinement.

use crate::cloud::PointCloud;

struct Node {
    // Splitting hyperplane; leaves keep `left == usize::MAX`.
    axis: usize,
    value: f64,
    left: usize,
    right: usize,
    // Range into `order` covered by this subtree (used only by leaves).
    start: usize,
    end: usize,
}

const LEAF_SIZE: usize = 16;
const NO_CHILD: usize = usize::MAX;

pub struct KdTree<'a> {
    cloud: &'a PointCloud,
    nodes: Vec<Node>,
    order: Vec<usize>,
    root: usize,
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl<'a> KdTree<'a> {
    pub fn new(cloud: &'a PointCloud) -> Self {
        let mut order: Vec<usize> = (0..cloud.len()).collect();
        let mut nodes = Vec::new();
        let n = cloud.len();
        let root = Self::build(cloud, &mut order, &mut nodes, 0, n);
        Self {
            cloud,
            nodes,
            order,
            root,
        }
    }

    fn build(
        cloud: &PointCloud,
        order: &mut [usize],
        nodes: &mut Vec<Node>,
        start: usize,
        end: usize,
    ) -> usize {
        let slice_len = end - start;
        if slice_len <= LEAF_SIZE {
            nodes.push(Node {
                axis: 0,
                value: 0.0,
                left: NO_CHILD,
                right: NO_CHILD,
                start,
                end,
            });
            return nodes.len() - 1;
        }
        // Split on the axis with the widest spread.
        let dim = cloud.dim();
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for &i in &order[start..end] {
            for (d, &c) in cloud.point(i).iter().enumerate() {
                lo[d] = lo[d].min(c);
                hi[d] = hi[d].max(c);
            }
        }
        let axis = (0..dim)
            .max_by(|&a, &b| (hi[a] - lo[a]).partial_cmp(&(hi[b] - lo[b])).unwrap())
            .unwrap();
        let mid = start + slice_len / 2;
        order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            cloud.point(a)[axis]
                .partial_cmp(&cloud.point(b)[axis])
                .unwrap()
                .then(a.cmp(&b))
        });
        let value = cloud.point(order[mid])[axis];
        let slot = nodes.len();
        nodes.push(Node {
            axis,
            value,
            left: NO_CHILD,
            right: NO_CHILD,
            start,
            end,
        });
        let left = Self::build(cloud, order, nodes, start, mid);
        let right = Self::build(cloud, order, nodes, mid, end);
        nodes[slot].left = left;
        nodes[slot].right = right;
        slot
    }

    /// Index and squared distance of the point closest to `query`,
    /// skipping `exclude` if given.
    pub fn nearest(&self, query: &[f64], exclude: Option<usize>) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(self.root, query, exclude, &mut best);
        best
    }

    fn search(&self, node: usize, query: &[f64], exclude: Option<usize>, best: &mut (usize, f64)) {
        let n = &self.nodes[node];
        if n.left == NO_CHILD {
            for &i in &self.order[n.start..n.end] {
                if Some(i) == exclude {
                    continue;
                }
                let d = dist_sq(query, self.cloud.point(i));
                if d < best.1 || (d == best.1 && i < best.0) {
                    *best = (i, d);
                }
            }
            return;
        }
        let delta = query[n.axis] - n.value;
        let (near, far) = if delta < 0.0 {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        self.search(near, query, exclude, best);
        if delta * delta < best.1 {
            self.search(far, query, exclude, best);
        }
    }
}

/// Median over all points of the distance to their nearest other point.
/// ICP uses this as the natural spacing of a cloud when choosing its
/// correspondence cutoff.
pub fn median_nn_spacing(cloud: &PointCloud) -> f64 {
    if cloud.len() < 2 {
        return 0.0;
    }
    let tree = KdTree::new(cloud);
    let mut spacings: Vec<f64> = (0..cloud.len())
        .map(|i| tree.nearest(cloud.point(i), Some(i)).1.sqrt())
        .collect();
    spacings.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = spacings.len();
    if n % 2 == 1 {
        spacings[n / 2]
    } else {
        0.5 * (spacings[n / 2 - 1] + spacings[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..n * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        PointCloud::new(3, data).unwrap()
    }

    fn linear_scan(cloud: &PointCloud, query: &[f64], exclude: Option<usize>) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for i in 0..cloud.len() {
            if Some(i) == exclude {
                continue;
            }
            let d = dist_sq(query, cloud.point(i));
            if d < best.1 || (d == best.1 && i < best.0) {
                best = (i, d);
            }
        }
        best
    }

    #[test]
    fn matches_linear_scan() {
        let cloud = random_cloud(500, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let tree = KdTree::new(&cloud);
        for _ in 0..100 {
            let q = [
                rng.random_range(-1.2..1.2),
                rng.random_range(-1.2..1.2),
                rng.random_range(-1.2..1.2),
            ];
            assert_eq!(tree.nearest(&q, None), linear_scan(&cloud, &q, None));
        }
    }

    #[test]
    fn exclusion_skips_self() {
        let cloud = random_cloud(200, 13);
        let tree = KdTree::new(&cloud);
        for i in 0..cloud.len() {
            let (idx, d) = tree.nearest(cloud.point(i), Some(i));
            assert_ne!(idx, i);
            assert_eq!((idx, d), linear_scan(&cloud, cloud.point(i), Some(i)));
        }
    }

    #[test]
    fn query_on_a_point_returns_it() {
        let cloud = random_cloud(64, 14);
        let tree = KdTree::new(&cloud);
        for i in 0..cloud.len() {
            let (idx, d) = tree.nearest(cloud.point(i), None);
            assert_eq!(idx, i);
            assert_eq!(d, 0.0);
        }
    }

    #[test]
    fn median_spacing_on_grid() {
        // 4x4x4 unit grid: every nearest neighbor is exactly 1 away.
        let mut data = Vec::new();
        for x in 0..4 {
            for y in 0..4 {
                for z in 0..4 {
                    data.extend([x as f64, y as f64, z as f64]);
                }
            }
        }
        let cloud = PointCloud::new(3, data).unwrap();
        assert_eq!(median_nn_spacing(&cloud), 1.0);
    }

    #[test]
    fn small_clouds() {
        let one = PointCloud::new(3, vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(median_nn_spacing(&one), 0.0);
        let tree = KdTree::new(&one);
        assert_eq!(tree.nearest(&[0.0, 0.0, 0.0], None).0, 0);
    }
}
