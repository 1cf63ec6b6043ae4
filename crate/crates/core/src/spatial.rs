//! Spatial indices: a uniform voxel grid for radius queries and a small
//! k-d tree for nearest-neighbour queries.

use std::collections::HashMap;

use crate::geom::Vec3;

/// Uniform grid hashing points into cubic cells of side `cell`.
pub struct VoxelGrid<'a> {
    points: &'a [Vec3],
    cell: f64,
    cells: HashMap<[i64; 3], Vec<usize>>,
}

impl<'a> VoxelGrid<'a> {
    pub fn new(points: &'a [Vec3], cell: f64) -> Self {
        assert!(cell > 0.0, "voxel size must be positive");
        let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, cell)).or_default().push(i);
        }
        VoxelGrid { points, cell, cells }
    }

    fn key(p: &Vec3, cell: f64) -> [i64; 3] {
        [
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        ]
    }

    /// Indices of points strictly closer than `r` to `q`, ascending.
    pub fn within(&self, q: &Vec3, r: f64) -> Vec<usize> {
        let reach = (r / self.cell).ceil() as i64;
        let k = Self::key(q, self.cell);
        let mut out = Vec::new();
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    if let Some(ids) = self.cells.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        out.extend(ids.iter().copied().filter(|&i| (self.points[i] - q).norm() < r));
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// Static 3-d tree over a point slice.
pub struct KdTree {
    points: Vec<Vec3>,
    // implicit tree: node = (index into `order`, split axis)
    order: Vec<usize>,
    axis: Vec<u8>,
}

impl KdTree {
    pub fn new(points: &[Vec3]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut axis = vec![0u8; points.len()];
        Self::build(points, &mut order, &mut axis, 0);
        KdTree {
            points: points.to_vec(),
            order,
            axis,
        }
    }

    fn build(points: &[Vec3], order: &mut [usize], axis: &mut [u8], depth: usize) {
        if order.len() <= 1 {
            if let Some(a) = axis.first_mut() {
                *a = (depth % 3) as u8;
            }
            return;
        }
        // split along the widest extent
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for &i in order.iter() {
            lo = lo.inf(&points[i]);
            hi = hi.sup(&points[i]);
        }
        let ext = hi - lo;
        let ax = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        let mid = order.len() / 2;
        order.select_nth_unstable_by(mid, |&a, &b| points[a][ax].total_cmp(&points[b][ax]).then(a.cmp(&b)));
        axis[mid] = ax as u8;
        let (left, rest) = order.split_at_mut(mid);
        let (laxis, raxis) = axis.split_at_mut(mid);
        Self::build(points, left, laxis, depth + 1);
        Self::build(points, &mut rest[1..], &mut raxis[1..], depth + 1);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The `k` nearest points to `q` as `(index, squared distance)`, nearest
    /// first; ties by index.
    pub fn knn(&self, q: &Vec3, k: usize) -> Vec<(usize, f64)> {
        let mut best: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
        if k > 0 {
            self.search(q, k, 0, self.order.len(), &mut best);
        }
        best
    }

    pub fn nearest(&self, q: &Vec3) -> Option<(usize, f64)> {
        self.knn(q, 1).into_iter().next()
    }

    fn search(&self, q: &Vec3, k: usize, lo: usize, hi: usize, best: &mut Vec<(usize, f64)>) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let idx = self.order[mid];
        let p = &self.points[idx];
        let d2 = (p - q).norm_squared();
        let worse = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
        if best.len() < k || worse(&(idx, d2), best.last().unwrap()).is_lt() {
            let pos = best.partition_point(|e| worse(e, &(idx, d2)).is_lt());
            best.insert(pos, (idx, d2));
            best.truncate(k);
        }
        if hi - lo == 1 {
            return;
        }
        let ax = self.axis[mid] as usize;
        let diff = q[ax] - p[ax];
        let (first, second) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(q, k, first.0, first.1, best);
        if best.len() < k || diff * diff <= best.last().unwrap().1 {
            self.search(q, k, second.0, second.1, best);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn cloud(n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-0.2..0.2)))
            .collect()
    }

    #[test]
    fn knn_matches_brute_force() {
        let pts = cloud(700, 1);
        let tree = KdTree::new(&pts);
        for q in cloud(50, 2) {
            let mut brute: Vec<(usize, f64)> = pts.iter().enumerate().map(|(i, p)| (i, (p - q).norm_squared())).collect();
            brute.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            brute.truncate(9);
            assert_eq!(tree.knn(&q, 9), brute);
        }
    }

    #[test]
    fn radius_matches_brute_force() {
        let pts = cloud(900, 3);
        let grid = VoxelGrid::new(&pts, 0.1);
        for q in cloud(40, 4) {
            let brute: Vec<usize> = (0..pts.len()).filter(|&i| (pts[i] - q).norm() < 0.17).collect();
            assert_eq!(grid.within(&q, 0.17), brute);
        }
    }

    #[test]
    fn tiny_trees() {
        assert!(KdTree::new(&[]).nearest(&Vec3::zeros()).is_none());
        let t = KdTree::new(&[Vec3::x()]);
        assert_eq!(t.nearest(&Vec3::zeros()), Some((0, 1.0)));
        assert_eq!(t.knn(&Vec3::zeros(), 3).len(), 1);
    }
}
