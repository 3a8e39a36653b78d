use std::collections::HashMap;

use crate::error::{ensure, Result};
use crate::tensor::Real;

/// Fixed-radius neighborhoods in compressed row form. Every list is sorted
/// ascending and contains the point itself.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGraph {
    offsets: Vec<usize>,
    indices: Vec<usize>,
    pub radius: f64,
}

impl NeighborGraph {
    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn neighbors(&self, j: usize) -> &[usize] {
        &self.indices[self.offsets[j]..self.offsets[j + 1]]
    }

    /// Total number of (j, i) pairs.
    pub fn num_pairs(&self) -> usize {
        self.indices.len()
    }

    fn from_lists(lists: Vec<Vec<usize>>, radius: f64) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        let mut indices = Vec::new();
        offsets.push(0);
        for l in lists {
            indices.extend(l);
            offsets.push(indices.len());
        }
        Self {
            offsets,
            indices,
            radius,
        }
    }
}

#[inline]
fn sq_dist<T: Real>(a: &[T; 3], b: &[T; 3]) -> T {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Exact radius search on a uniform grid with cell size `r`.
pub fn radius_neighbors<T: Real>(positions: &[[T; 3]], r: f64) -> Result<NeighborGraph> {
    ensure!(r > 0.0 && r.is_finite(), "neighborhood radius must be positive, got {r}");
    let r2 = T::of(r * r);
    let cell = |p: &[T; 3]| -> [i64; 3] {
        let f = |v: T| (v.to_f64_lossy() / r).floor() as i64;
        [f(p[0]), f(p[1]), f(p[2])]
    };
    let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (i, p) in positions.iter().enumerate() {
        grid.entry(cell(p)).or_default().push(i);
    }
    let mut lists = Vec::with_capacity(positions.len());
    for p in positions {
        let c = cell(p);
        let mut found = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(bucket) = grid.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                        found.extend(bucket.iter().copied().filter(|&i| sq_dist(p, &positions[i]) <= r2));
                    }
                }
            }
        }
        found.sort_unstable();
        lists.push(found);
    }
    Ok(NeighborGraph::from_lists(lists, r))
}

/// The O(N^2) reference scan.
pub fn brute_force_neighbors<T: Real>(positions: &[[T; 3]], r: f64) -> Result<NeighborGraph> {
    ensure!(r > 0.0 && r.is_finite(), "neighborhood radius must be positive, got {r}");
    let r2 = T::of(r * r);
    let lists = positions
        .iter()
        .map(|p| (0..positions.len()).filter(|&i| sq_dist(p, &positions[i]) <= r2).collect())
        .collect();
    Ok(NeighborGraph::from_lists(lists, r))
}

pub(crate) fn squared_distance<T: Real>(a: &[T; 3], b: &[T; 3]) -> T {
    sq_dist(a, b)
}
