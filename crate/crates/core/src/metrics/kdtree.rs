//! Static 3-d tree over integer voxel coordinates for exact nearest-neighbour
//! distances under anisotropic spacing.

pub type Voxel = [usize; 3];

/// Squared physical distance; the single formula every distance in this
/// module goes through, so tree and brute-force results agree bit for bit.
#[inline]
pub fn dist_sq(a: &Voxel, b: &Voxel, s: &[f64; 3]) -> f64 {
    let dz = (a[0] as f64 - b[0] as f64) * s[0];
    let dy = (a[1] as f64 - b[1] as f64) * s[1];
    let dx = (a[2] as f64 - b[2] as f64) * s[2];
    dz * dz + dy * dy + dx * dx
}

pub struct KdTree {
    pts: Vec<Voxel>,
    spacing: [f64; 3],
}

impl KdTree {
    pub fn new(mut pts: Vec<Voxel>, spacing: [f64; 3]) -> Self {
        build(&mut pts, 0);
        KdTree { pts, spacing }
    }

    pub fn is_empty(&self) -> bool {
        self.pts.is_empty()
    }

    /// Smallest squared distance from `q` to any stored point.
    pub fn nearest_sq(&self, q: &Voxel) -> f64 {
        let mut best = f64::INFINITY;
        self.search(&self.pts, 0, q, &mut best);
        best
    }

    fn search(&self, pts: &[Voxel], depth: usize, q: &Voxel, best: &mut f64) {
        if pts.is_empty() {
            return;
        }
        let axis = depth % 3;
        let mid = pts.len() / 2;
        let p = &pts[mid];
        let d = dist_sq(p, q, &self.spacing);
        if d < *best {
            *best = d;
        }
        let diff = (q[axis] as f64 - p[axis] as f64) * self.spacing[axis];
        let (near, far) = if q[axis] < p[axis] {
            (&pts[..mid], &pts[mid + 1..])
        } else {
            (&pts[mid + 1..], &pts[..mid])
        };
        self.search(near, depth + 1, q, best);
        // A single squared axis term never exceeds the full rounded sum, so
        // skipping only when it is strictly larger than the best is exact.
        if diff * diff <= *best {
            self.search(far, depth + 1, q, best);
        }
    }
}

fn build(pts: &mut [Voxel], depth: usize) {
    if pts.len() <= 1 {
        return;
    }
    let axis = depth % 3;
    let mid = pts.len() / 2;
    pts.select_nth_unstable_by_key(mid, |p| p[axis]);
    let (lo, hi) = pts.split_at_mut(mid);
    build(lo, depth + 1);
    build(&mut hi[1..], depth + 1);
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn matches_linear_scan(
            pts in proptest::collection::vec((0usize..20, 0usize..20, 0usize..20), 1..60),
            qs in proptest::collection::vec((0usize..20, 0usize..20, 0usize..20), 1..20),
            s in (0.1f64..3.0, 0.1f64..3.0, 0.1f64..3.0),
        ) {
            let sp = [s.0, s.1, s.2];
            let pts: Vec<Voxel> = pts.into_iter().map(|(a, b, c)| [a, b, c]).collect();
            let tree = KdTree::new(pts.clone(), sp);
            for (a, b, c) in qs {
                let q = [a, b, c];
                let brute = pts.iter().map(|p| dist_sq(p, &q, &sp)).fold(f64::INFINITY, f64::min);
                prop_assert_eq!(tree.nearest_sq(&q), brute);
            }
        }
    }
}
