use super::neighbors::{squared_distance, NeighborGraph};
use crate::tensor::Real;

pub const DENSITY_FLOOR: f64 = 1e-6;

fn raw_density<T: Real>(positions: &[[T; 3]], graph: &NeighborGraph, i: usize, inv_two_s2: T) -> T {
    let nb = graph.neighbors(i);
    let s: T = nb
        .iter()
        .map(|&k| (-squared_distance(&positions[i], &positions[k]) * inv_two_s2).exp())
        .fold(T::zero(), |a, b| a + b);
    s / T::of(nb.len() as f64)
}

/// Gaussian kernel density over each point's own neighborhood,
/// `pde_i = max(1e-6, mean_k exp(-|p_i - p_k|^2 / (2 sigma^2)))`.
pub fn density_estimate<T: Real>(positions: &[[T; 3]], graph: &NeighborGraph, sigma: T) -> Vec<T> {
    let inv = T::one() / (T::of(2.0) * sigma * sigma);
    let floor = T::of(DENSITY_FLOOR);
    (0..positions.len())
        .map(|i| raw_density(positions, graph, i, inv).max(floor))
        .collect()
}

/// Gradient of `sum(upstream * pde)` with respect to the positions.
pub fn density_backward<T: Real>(
    positions: &[[T; 3]],
    graph: &NeighborGraph,
    sigma: T,
    upstream: &[T],
) -> Vec<[T; 3]> {
    let inv = T::one() / (T::of(2.0) * sigma * sigma);
    let floor = T::of(DENSITY_FLOOR);
    let mut grad = vec![[T::zero(); 3]; positions.len()];
    for i in 0..positions.len() {
        let g = upstream[i];
        if g == T::zero() || raw_density(positions, graph, i, inv) < floor {
            continue;
        }
        let nb = graph.neighbors(i);
        let scale = g / T::of(nb.len() as f64);
        for &k in nb {
            if k == i {
                continue;
            }
            let (pi, pk) = (positions[i], positions[k]);
            let e = (-squared_distance(&pi, &pk) * inv).exp();
            // d/dp_i exp(-|p_i - p_k|^2 inv) = -2 inv (p_i - p_k) e
            let c = -T::of(2.0) * inv * e * scale;
            for a in 0..3 {
                let d = c * (pi[a] - pk[a]);
                grad[i][a] = grad[i][a] + d;
                grad[k][a] = grad[k][a] - d;
            }
        }
    }
    grad
}
