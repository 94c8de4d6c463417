use nalgebra::Vector3;

use super::GeometryError;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Vector3<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Result<Self, GeometryError> {
        if points.is_empty() {
            return Err(GeometryError::EmptyCloud);
        }
        Ok(Self { points })
    }

    pub(crate) fn from_points_unchecked(points: Vec<Vector3<f64>>) -> Self {
        Self { points }
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn nearest_sq_brute(p: &Vector3<f64>, cloud: &[Vector3<f64>]) -> f64 {
    cloud
        .iter()
        .map(|q| (p - q).norm_squared())
        .fold(f64::INFINITY, f64::min)
}

/// Symmetric chamfer distance, mean of squared nearest-neighbor distances in
/// both directions (units: squared input units). Exhaustive search.
pub fn chamfer(x: &PointCloud, y: &PointCloud) -> Result<f64, GeometryError> {
    if x.is_empty() || y.is_empty() {
        return Err(GeometryError::EmptyCloud);
    }
    let forward: f64 = x.points.iter().map(|p| nearest_sq_brute(p, &y.points)).sum();
    let backward: f64 = y.points.iter().map(|p| nearest_sq_brute(p, &x.points)).sum();
    Ok(forward / x.len() as f64 + backward / y.len() as f64)
}

/// Precision/recall F-score of point proximity at threshold `tau`.
pub fn fscore(x: &PointCloud, y: &PointCloud, tau: f64) -> Result<f64, GeometryError> {
    if x.is_empty() || y.is_empty() {
        return Err(GeometryError::EmptyCloud);
    }
    if !(tau > 0.0) {
        return Err(GeometryError::InvalidParameter("tau must be positive"));
    }
    let tau_sq = tau * tau;
    let xi = NearestIndex::build(x);
    let yi = NearestIndex::build(y);
    let precision = x.points.iter().filter(|p| yi.nearest_sq(p) <= tau_sq).count() as f64 / x.len() as f64;
    let recall = y.points.iter().filter(|p| xi.nearest_sq(p) <= tau_sq).count() as f64 / y.len() as f64;
    if precision + recall == 0.0 {
        Ok(0.0)
    } else {
        Ok(2.0 * precision * recall / (precision + recall))
    }
}

/// Static 3-d tree answering nearest-neighbor squared-distance queries.
///
/// Leaves hold small buckets of points and every node keeps the bounding box
/// of its subtree, so subtrees are pruned by true box distance. That keeps
/// queries from far outside the cloud cheap, which is the common case when a
/// wrong pose hypothesis separates two objects.
#[derive(Debug, Clone)]
pub struct NearestIndex {
    points: Vec<[f64; 3]>,
    nodes: Vec<KdNode>,
}

#[derive(Debug, Clone)]
struct KdNode {
    lo: [f64; 3],
    hi: [f64; 3],
    start: usize,
    end: usize,
    /// Children, `NIL` for leaves.
    left: usize,
    right: usize,
}

const NIL: usize = usize::MAX;
const LEAF_SIZE: usize = 8;

fn box_dist_sq(q: &[f64; 3], lo: &[f64; 3], hi: &[f64; 3]) -> f64 {
    let mut d = 0.0;
    for k in 0..3 {
        let e = (lo[k] - q[k]).max(q[k] - hi[k]).max(0.0);
        d += e * e;
    }
    d
}

fn dist_sq(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let (x, y, z) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    x * x + y * y + z * z
}

impl NearestIndex {
    pub fn build(cloud: &PointCloud) -> Self {
        let mut points: Vec<[f64; 3]> = cloud.points.iter().map(|p| [p.x, p.y, p.z]).collect();
        let mut nodes = Vec::with_capacity(2 * points.len() / LEAF_SIZE + 1);
        if !points.is_empty() {
            let n = points.len();
            Self::build_rec(&mut points, 0, n, &mut nodes);
        }
        Self { points, nodes }
    }

    fn build_rec(points: &mut [[f64; 3]], start: usize, end: usize, nodes: &mut Vec<KdNode>) -> usize {
        let mut lo = points[start];
        let mut hi = points[start];
        for p in &points[start..end] {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let idx = nodes.len();
        nodes.push(KdNode {
            lo,
            hi,
            start,
            end,
            left: NIL,
            right: NIL,
        });
        if end - start > LEAF_SIZE {
            let axis = (0..3).max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b]))).unwrap_or(0);
            let mid = (end - start) / 2;
            points[start..end].select_nth_unstable_by(mid, |a, b| a[axis].total_cmp(&b[axis]));
            let left = Self::build_rec(points, start, start + mid, nodes);
            let right = Self::build_rec(points, start + mid, end, nodes);
            nodes[idx].left = left;
            nodes[idx].right = right;
        }
        idx
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Squared distance from `q` to its nearest indexed point.
    pub fn nearest_sq(&self, q: &Vector3<f64>) -> f64 {
        let mut stack = Vec::with_capacity(64);
        self.nearest_from(&[q.x, q.y, q.z], f64::INFINITY, &mut stack).0
    }

    /// Best squared distance and the position of the point achieving it,
    /// searching only for points strictly closer than `best`.
    fn nearest_from(&self, q: &[f64; 3], mut best: f64, stack: &mut Vec<(usize, f64)>) -> (f64, usize) {
        let mut best_at = NIL;
        if self.nodes.is_empty() {
            return (best, best_at);
        }
        stack.clear();
        stack.push((0, box_dist_sq(q, &self.nodes[0].lo, &self.nodes[0].hi)));
        while let Some((n, d)) = stack.pop() {
            if d >= best {
                continue;
            }
            let node = &self.nodes[n];
            if node.left == NIL {
                for (k, p) in self.points[node.start..node.end].iter().enumerate() {
                    let e = dist_sq(p, q);
                    if e < best {
                        best = e;
                        best_at = node.start + k;
                    }
                }
                continue;
            }
            let (l, r) = (&self.nodes[node.left], &self.nodes[node.right]);
            let dl = box_dist_sq(q, &l.lo, &l.hi);
            let dr = box_dist_sq(q, &r.lo, &r.hi);
            // nearer child on top of the stack
            if dl <= dr {
                stack.push((node.right, dr));
                stack.push((node.left, dl));
            } else {
                stack.push((node.left, dl));
                stack.push((node.right, dr));
            }
        }
        (best, best_at)
    }

    /// Mean over `queries` of the squared nearest distance into this index.
    ///
    /// Consecutive queries are assumed to be spatially coherent: each search
    /// starts from the distance to the previous query's nearest point.
    pub fn mean_nearest_sq(&self, queries: impl ExactSizeIterator<Item = Vector3<f64>>) -> f64 {
        let n = queries.len();
        if self.points.is_empty() {
            return f64::INFINITY;
        }
        let mut stack = Vec::with_capacity(64);
        let mut hint = 0;
        let mut sum = 0.0;
        for q in queries {
            let q = [q.x, q.y, q.z];
            let start = dist_sq(&self.points[hint], &q);
            let (d, at) = self.nearest_from(&q, start, &mut stack);
            if at != NIL {
                hint = at;
            }
            sum += d;
        }
        sum / n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(points: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(points.iter().map(|p| Vector3::new(p[0], p[1], p[2])).collect()).unwrap()
    }

    #[test]
    fn chamfer_examples() {
        let a = cloud(&[[0.0, 0.0, 0.0]]);
        let b = cloud(&[[1.0, 0.0, 0.0]]);
        assert_eq!(chamfer(&a, &b).unwrap(), 2.0);
        let c = cloud(&[[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        assert_eq!(chamfer(&c, &a).unwrap(), 2.0);
        assert_eq!(chamfer(&c, &c).unwrap(), 0.0);
    }

    #[test]
    fn empty_clouds_rejected() {
        assert_eq!(PointCloud::new(vec![]), Err(GeometryError::EmptyCloud));
        let a = cloud(&[[0.0, 0.0, 0.0]]);
        let e = PointCloud::default();
        assert_eq!(chamfer(&a, &e), Err(GeometryError::EmptyCloud));
        assert_eq!(fscore(&e, &a, 0.1), Err(GeometryError::EmptyCloud));
    }

    #[test]
    fn fscore_examples() {
        let tau = 0.05;
        let a = cloud(&[[0.0, 0.0, 0.0], [0.3, 0.1, 0.0]]);
        assert_eq!(fscore(&a, &a, tau).unwrap(), 1.0);
        let shifted = cloud(&[[10.0 * tau, 0.0, 0.0], [0.3 + 10.0 * tau, 0.1, 0.0]]);
        assert_eq!(fscore(&a, &shifted, tau).unwrap(), 0.0);
        let x = cloud(&[[0.0, 0.0, 0.0], [10.0 * tau, 0.0, 0.0]]);
        let y = cloud(&[[0.0, 0.0, 0.0]]);
        assert!((fscore(&x, &y, tau).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn kd_index_agrees_with_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [1usize, 2, 3, 17, 400] {
            let pts: Vec<_> = (0..n)
                .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            let c = PointCloud::new(pts.clone()).unwrap();
            let idx = NearestIndex::build(&c);
            assert_eq!(idx.len(), n);
            for _ in 0..200 {
                let q = Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
                assert_eq!(idx.nearest_sq(&q), nearest_sq_brute(&q, &pts));
            }
        }
    }

    #[test]
    fn warm_started_mean_matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pts: Vec<_> = (0..300)
            .map(|_| Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)))
            .collect();
        let idx = NearestIndex::build(&PointCloud::new(pts.clone()).unwrap());
        for offset in [0.0, 0.3, 3.0] {
            let queries: Vec<_> = (0..150)
                .map(|_| Vector3::new(rng.random_range(-0.5..0.5) + offset, rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)))
                .collect();
            let expected = queries.iter().map(|q| nearest_sq_brute(q, &pts)).sum::<f64>() / queries.len() as f64;
            let got = idx.mean_nearest_sq(queries.iter().copied());
            assert!((got - expected).abs() <= 1e-15 * expected.max(1.0));
        }
    }

    #[test]
    fn kd_index_handles_duplicates() {
        let c = cloud(&[[1.0, 1.0, 1.0]; 9]);
        let idx = NearestIndex::build(&c);
        assert_eq!(idx.nearest_sq(&Vector3::new(1.0, 1.0, 2.0)), 1.0);
    }
}
