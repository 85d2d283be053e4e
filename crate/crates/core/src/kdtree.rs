//! Static 3D k-d tree over a borrowed point slice.

use alloc::vec::Vec;

use crate::geometry::Vec3;

const LEAF_SIZE: usize = 8;

pub struct KdTree<'a> {
    points: &'a [Vec3],
    /// Permutation of point indices; every subtree owns a contiguous range.
    order: Vec<usize>,
    /// Split axis for the node whose pivot sits at `order[mid]`.
    axes: Vec<u8>,
}

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [Vec3]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut axes = alloc::vec![0u8; points.len()];
        build(points, &mut order, &mut axes, 0);
        Self { points, order, axes }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &'a [Vec3] {
        self.points
    }

    /// Nearest point as `(index, squared distance)`.
    pub fn nearest(&self, q: &Vec3) -> Option<(usize, f64)> {
        let mut best = (usize::MAX, f64::INFINITY);
        self.nearest_in(0, self.order.len(), q, &mut best);
        (best.0 != usize::MAX).then_some(best)
    }

    /// Nearest point other than `exclude`.
    pub fn nearest_excluding(&self, q: &Vec3, exclude: usize) -> Option<(usize, f64)> {
        self.knn(q, 2).into_iter().find(|(i, _)| *i != exclude)
    }

    /// The `k` nearest points sorted by increasing squared distance (ties by index).
    pub fn knn(&self, q: &Vec3, k: usize) -> Vec<(usize, f64)> {
        let mut heap: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
        if k > 0 {
            self.knn_in(0, self.order.len(), q, k, &mut heap);
        }
        heap
    }

    /// Indices of all points within `radius` (inclusive), sorted by index.
    pub fn within_radius(&self, q: &Vec3, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.radius_in(0, self.order.len(), q, radius * radius, &mut out);
        out.sort_unstable();
        out
    }

    fn nearest_in(&self, lo: usize, hi: usize, q: &Vec3, best: &mut (usize, f64)) {
        if hi - lo <= LEAF_SIZE {
            for &i in &self.order[lo..hi] {
                let d = (self.points[i] - q).norm_squared();
                if d < best.1 || (d == best.1 && i < best.0) {
                    *best = (i, d);
                }
            }
            return;
        }
        let mid = (lo + hi) / 2;
        let pivot = self.order[mid];
        let axis = self.axes[mid] as usize;
        let delta = q[axis] - self.points[pivot][axis];
        let d = (self.points[pivot] - q).norm_squared();
        if d < best.1 || (d == best.1 && pivot < best.0) {
            *best = (pivot, d);
        }
        let (first, second) = if delta < 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.nearest_in(first.0, first.1, q, best);
        if delta * delta <= best.1 {
            self.nearest_in(second.0, second.1, q, best);
        }
    }

    fn knn_in(&self, lo: usize, hi: usize, q: &Vec3, k: usize, heap: &mut Vec<(usize, f64)>) {
        let worst = |heap: &Vec<(usize, f64)>| if heap.len() < k { f64::INFINITY } else { heap[heap.len() - 1].1 };
        let offer = |i: usize, heap: &mut Vec<(usize, f64)>| {
            let d = (self.points[i] - q).norm_squared();
            if heap.len() < k || d < heap[heap.len() - 1].1 || (d == heap[heap.len() - 1].1 && i < heap[heap.len() - 1].0) {
                let pos = heap.partition_point(|&(j, e)| e < d || (e == d && j < i));
                heap.insert(pos, (i, d));
                heap.truncate(k);
            }
        };
        if hi - lo <= LEAF_SIZE {
            for &i in &self.order[lo..hi] {
                offer(i, heap);
            }
            return;
        }
        let mid = (lo + hi) / 2;
        let pivot = self.order[mid];
        let axis = self.axes[mid] as usize;
        let delta = q[axis] - self.points[pivot][axis];
        offer(pivot, heap);
        let (first, second) = if delta < 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.knn_in(first.0, first.1, q, k, heap);
        if delta * delta <= worst(heap) {
            self.knn_in(second.0, second.1, q, k, heap);
        }
    }

    fn radius_in(&self, lo: usize, hi: usize, q: &Vec3, r2: f64, out: &mut Vec<usize>) {
        if hi - lo <= LEAF_SIZE {
            out.extend(self.order[lo..hi].iter().copied().filter(|&i| (self.points[i] - q).norm_squared() <= r2));
            return;
        }
        let mid = (lo + hi) / 2;
        let pivot = self.order[mid];
        let axis = self.axes[mid] as usize;
        let delta = q[axis] - self.points[pivot][axis];
        if (self.points[pivot] - q).norm_squared() <= r2 {
            out.push(pivot);
        }
        if delta <= 0.0 || delta * delta <= r2 {
            self.radius_in(lo, mid, q, r2, out);
        }
        if delta >= 0.0 || delta * delta <= r2 {
            self.radius_in(mid + 1, hi, q, r2, out);
        }
    }
}

fn build(points: &[Vec3], order: &mut [usize], axes: &mut [u8], offset: usize) {
    let n = order.len();
    if n <= LEAF_SIZE {
        return;
    }
    let (mut lo, mut hi) = (points[order[0]], points[order[0]]);
    for &i in order.iter() {
        lo = lo.inf(&points[i]);
        hi = hi.sup(&points[i]);
    }
    let axis = (hi - lo).imax();
    let mid = n / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
    });
    axes[offset + mid] = axis as u8;
    let (left, rest) = order.split_at_mut(mid);
    build(points, left, axes, offset);
    build(points, &mut rest[1..], axes, offset + mid + 1);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn queries_match_brute_force() {
        let pts = cloud(2000, 1);
        let tree = KdTree::new(&pts);
        let queries = cloud(200, 2);
        for q in &queries {
            let mut all: Vec<(usize, f64)> = pts.iter().enumerate().map(|(i, p)| (i, (p - q).norm_squared())).collect();
            all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            assert_eq!(tree.nearest(q).unwrap(), all[0]);
            assert_eq!(tree.knn(q, 10), all[..10].to_vec());
            let mut within: Vec<usize> = all.iter().filter(|(_, d)| *d <= 0.04).map(|(i, _)| *i).collect();
            within.sort_unstable();
            assert_eq!(tree.within_radius(q, 0.2), within);
        }
    }

    #[test]
    fn tiny_and_empty_trees() {
        let empty: Vec<Vec3> = Vec::new();
        assert!(KdTree::new(&empty).nearest(&Vec3::zeros()).is_none());
        let one = [Vec3::new(1.0, 0.0, 0.0)];
        let t = KdTree::new(&one);
        assert_eq!(t.nearest(&Vec3::zeros()), Some((0, 1.0)));
        assert_eq!(t.knn(&Vec3::zeros(), 3).len(), 1);
        assert!(t.nearest_excluding(&Vec3::zeros(), 0).is_none());
    }

    #[test]
    fn duplicate_points_are_all_found() {
        let pts = alloc::vec![Vec3::zeros(); 50];
        let t = KdTree::new(&pts);
        assert_eq!(t.within_radius(&Vec3::zeros(), 0.0).len(), 50);
        assert_eq!(t.knn(&Vec3::zeros(), 5).iter().map(|x| x.0).collect::<Vec<_>>(), alloc::vec![0, 1, 2, 3, 4]);
    }
}
