//! Neighbour search and subsampling on `N×3` coordinate matrices.
//!
//! Everything here is index bookkeeping: it reads coordinate values but is not
//! differentiated. The chosen indices are then used with [`Graph::gather`].
//!
//! [`Graph::gather`]: crate::graph::Graph::gather

use std::cmp::Ordering;

use crate::scalar::Scalar;
use crate::tensor::Matrix;

#[inline]
fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

fn lex<T: Scalar>(a: &[T], b: &[T]) -> Ordering {
    for d in 0..3 {
        match a[d].partial_cmp(&b[d]).unwrap_or(Ordering::Equal) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

/// The `k` nearest reference rows of every query row, nearest first; equal
/// distances go to the smaller reference index. Returns `queries.rows() * k'`
/// indices with `k' = min(k, refs.rows())`.
pub fn knn<T: Scalar>(queries: &Matrix<T>, refs: &Matrix<T>, k: usize) -> (Vec<usize>, usize) {
    let k = k.min(refs.rows());
    let mut out = Vec::with_capacity(queries.rows() * k);
    let mut scratch: Vec<(T, usize)> = Vec::with_capacity(refs.rows());
    let by_dist = |a: &(T, usize), b: &(T, usize)| {
        a.0.partial_cmp(&b.0)
            .unwrap_or(Ordering::Equal)
            .then(a.1.cmp(&b.1))
    };
    for q in 0..queries.rows() {
        let qp = queries.row(q);
        scratch.clear();
        scratch.extend((0..refs.rows()).map(|j| (sq_dist(qp, refs.row(j)), j)));
        if k < scratch.len() {
            scratch.select_nth_unstable_by(k - 1, by_dist);
            scratch.truncate(k);
        }
        scratch.sort_unstable_by(by_dist);
        out.extend(scratch.iter().map(|e| e.1));
    }
    (out, k)
}

/// Index of the nearest reference row for every query row.
pub fn nearest<T: Scalar>(queries: &Matrix<T>, refs: &Matrix<T>) -> Vec<usize> {
    knn(queries, refs, 1).0
}

/// Farthest point sampling of `m` rows. The first pick is the point closest to
/// the centroid; every choice depends only on coordinates, never on row order.
pub fn farthest_point_sample<T: Scalar>(points: &Matrix<T>, m: usize) -> Vec<usize> {
    let n = points.rows();
    assert!(m >= 1 && m <= n, "cannot sample {m} of {n} points");
    let mut centroid = [0.0f64; 3];
    for i in 0..n {
        for d in 0..3 {
            centroid[d] += points.get(i, d).f64();
        }
    }
    centroid.iter_mut().for_each(|c| *c /= n as f64);

    let better = |i: usize, di: f64, j: usize, dj: f64, want_max: bool| -> bool {
        let o = if want_max {
            di.partial_cmp(&dj)
        } else {
            dj.partial_cmp(&di)
        };
        match o.unwrap_or(Ordering::Equal) {
            Ordering::Greater => true,
            Ordering::Less => false,
            Ordering::Equal => lex(points.row(i), points.row(j)) == Ordering::Less,
        }
    };

    let to_centroid = |i: usize| -> f64 {
        (0..3)
            .map(|d| (points.get(i, d).f64() - centroid[d]).powi(2))
            .sum()
    };
    let mut first = 0;
    let mut first_d = to_centroid(0);
    for i in 1..n {
        let d = to_centroid(i);
        if better(i, d, first, first_d, false) {
            first = i;
            first_d = d;
        }
    }

    let mut chosen = Vec::with_capacity(m);
    chosen.push(first);
    let mut min_d: Vec<f64> = (0..n)
        .map(|i| sq_dist(points.row(i), points.row(first)).f64())
        .collect();
    while chosen.len() < m {
        let mut best = usize::MAX;
        for i in 0..n {
            if best == usize::MAX || better(i, min_d[i], best, min_d[best], true) {
                best = i;
            }
        }
        chosen.push(best);
        let bp = points.row(best);
        for i in 0..n {
            let d = sq_dist(points.row(i), bp).f64();
            if d < min_d[i] {
                min_d[i] = d;
            }
        }
    }
    chosen
}

/// Groups of rows within `radius` of each centre.
#[derive(Debug, Clone, PartialEq)]
pub struct Groups {
    /// Member row indices, group after group.
    pub members: Vec<usize>,
    /// Group `g` is `members[offsets[g]..offsets[g + 1]]`.
    pub offsets: Vec<usize>,
}

impl Groups {
    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// For every member slot, the index of the group it belongs to.
    pub fn owners(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.members.len());
        for g in 0..self.len() {
            out.extend(std::iter::repeat(g).take(self.offsets[g + 1] - self.offsets[g]));
        }
        out
    }
}

/// Ball query around `points[centres[g]]`. A centre always belongs to its own
/// ball. With `cap`, only the `cap` closest members are kept (ties resolved on
/// coordinates, so the kept values do not depend on row order).
pub fn ball_query<T: Scalar>(
    points: &Matrix<T>,
    centres: &[usize],
    radius: f64,
    cap: Option<usize>,
) -> Groups {
    let r2 = T::of(radius * radius);
    let mut members = Vec::new();
    let mut offsets = Vec::with_capacity(centres.len() + 1);
    offsets.push(0);
    let mut scratch: Vec<(T, usize)> = Vec::new();
    for &c in centres {
        let cp = points.row(c);
        scratch.clear();
        for j in 0..points.rows() {
            let d = sq_dist(cp, points.row(j));
            if d <= r2 || j == c {
                scratch.push((d, j));
            }
        }
        if let Some(cap) = cap {
            if scratch.len() > cap {
                scratch.sort_unstable_by(|a, b| {
                    a.0.partial_cmp(&b.0)
                        .unwrap_or(Ordering::Equal)
                        .then_with(|| lex(points.row(a.1), points.row(b.1)))
                        .then(a.1.cmp(&b.1))
                });
                scratch.truncate(cap.max(1));
            }
        }
        members.extend(scratch.iter().map(|e| e.1));
        offsets.push(members.len());
    }
    Groups { members, offsets }
}
