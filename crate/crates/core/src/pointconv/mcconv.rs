use rand::Rng;

use super::neighbors::NeighborGraph;
use crate::error::{ensure, Result};
use crate::tensor::ops::{leaky_relu_grad_scalar, leaky_relu_scalar};
use crate::tensor::{gemm, Real, Tensor, Transpose};

/// Hidden width of every kernel MLP.
pub const HIDDEN: usize = 16;

/// Slope of the leaky ReLU used throughout the network.
pub const LEAKY_SLOPE: f64 = 0.1;

/// Continuous kernel `g: R^3 -> R^{C_in x (C_out + 1)}`, a one hidden layer
/// MLP. Output column `c * (C_out + 1) + o` holds `W[c, o]`; column
/// `c * (C_out + 1) + C_out` holds the update weight `W^u[c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMlp<T> {
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
    pub c_in: usize,
    pub c_out: usize,
}

/// Borrowed kernel weights, as stored inside the model's parameter list.
#[derive(Debug, Clone, Copy)]
pub struct KernelRef<'a, T> {
    pub w1: &'a [T],
    pub b1: &'a [T],
    pub w2: &'a [T],
    pub b2: &'a [T],
    pub c_in: usize,
    pub c_out: usize,
}

/// Uniform in `+-sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<T: Real, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::of(rng.random_range(-limit..=limit))).collect();
    Tensor::from_vec(shape, data).expect("shape matches element count")
}

impl<T: Real> KernelMlp<T> {
    pub fn init<R: Rng + ?Sized>(c_in: usize, c_out: usize, rng: &mut R) -> Self {
        let out = c_in * (c_out + 1);
        Self {
            w1: glorot_uniform(&[3, HIDDEN], 3, HIDDEN, rng),
            b1: Tensor::zeros(&[HIDDEN]),
            w2: glorot_uniform(&[HIDDEN, out], HIDDEN, out, rng),
            b2: Tensor::zeros(&[out]),
            c_in,
            c_out,
        }
    }

    pub fn view(&self) -> KernelRef<'_, T> {
        KernelRef {
            w1: self.w1.data(),
            b1: self.b1.data(),
            w2: self.w2.data(),
            b2: self.b2.data(),
            c_in: self.c_in,
            c_out: self.c_out,
        }
    }
}

impl<T: Real> KernelRef<'_, T> {
    pub fn out_width(&self) -> usize {
        self.c_in * (self.c_out + 1)
    }

    fn validate(&self) -> Result<()> {
        ensure!(
            self.w1.len() == 3 * HIDDEN && self.b1.len() == HIDDEN,
            "kernel MLP hidden layer has wrong size"
        );
        ensure!(
            self.w2.len() == HIDDEN * self.out_width() && self.b2.len() == self.out_width(),
            "kernel MLP output layer does not match {} -> {} channels",
            self.c_in,
            self.c_out
        );
        Ok(())
    }

    /// Pre-activation and activation of the hidden layer at offset `x`.
    fn hidden(&self, x: &[T; 3]) -> ([T; HIDDEN], [T; HIDDEN]) {
        let slope = T::of(LEAKY_SLOPE);
        let mut z = [T::zero(); HIDDEN];
        let mut h = [T::zero(); HIDDEN];
        for k in 0..HIDDEN {
            z[k] = self.b1[k] + x[0] * self.w1[k] + x[1] * self.w1[HIDDEN + k] + x[2] * self.w1[2 * HIDDEN + k];
            h[k] = leaky_relu_scalar(z[k], slope);
        }
        (z, h)
    }

    /// Evaluates the kernel at a normalized offset.
    pub fn eval(&self, x: &[T; 3]) -> Vec<T> {
        let (_, h) = self.hidden(x);
        let w = self.out_width();
        let mut g = self.b2.to_vec();
        for k in 0..HIDDEN {
            for (o, gv) in g.iter_mut().enumerate() {
                *gv = *gv + h[k] * self.w2[k * w + o];
            }
        }
        g
    }

    /// `[w2; b2]` as one `(HIDDEN + 1) * C_in x (C_out + 1)` matrix.
    fn augmented(&self) -> Vec<T> {
        let mut w = Vec::with_capacity(self.w2.len() + self.b2.len());
        w.extend_from_slice(self.w2);
        w.extend_from_slice(self.b2);
        w
    }
}

/// Forward state kept for the backward pass.
#[derive(Debug, Clone)]
pub struct McConvCache<T> {
    /// Per point `(HIDDEN + 1) x C_in` moments
    /// `M_j[k, c] = |N_j|^-1 sum_i h_ij[k] f_i[c] / pde_i`, with `h[HIDDEN] = 1`.
    moments: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct McConvOutput<T> {
    /// `[N, C_out]`.
    pub features: Tensor<T>,
    /// `[N]`, the extra update channel.
    pub update: Vec<T>,
    pub cache: McConvCache<T>,
}

#[derive(Debug, Clone)]
pub struct McConvGrads<T> {
    pub features: Tensor<T>,
    pub positions: Vec<[T; 3]>,
    pub pde: Vec<T>,
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
}

fn offset<T: Real>(pi: &[T; 3], pj: &[T; 3], inv_r: T) -> [T; 3] {
    [(pi[0] - pj[0]) * inv_r, (pi[1] - pj[1]) * inv_r, (pi[2] - pj[2]) * inv_r]
}

fn check_inputs<T: Real>(
    features: &Tensor<T>,
    positions: &[[T; 3]],
    graph: &NeighborGraph,
    pde: &[T],
    kernel: &KernelRef<T>,
    r: f64,
) -> Result<()> {
    kernel.validate()?;
    let n = positions.len();
    ensure!(
        features.shape() == [n, kernel.c_in],
        "mc_conv expects features [{n}, {}], got {:?}",
        kernel.c_in,
        features.shape()
    );
    ensure!(graph.len() == n && pde.len() == n, "neighbor graph or density size mismatch");
    ensure!((graph.radius - r).abs() <= 1e-12 * r.abs().max(1.0), "neighbor graph radius {} differs from layer radius {r}", graph.radius);
    Ok(())
}

/// Monte-Carlo point convolution
/// `out_j = |N_j|^-1 sum_{i in N_j} f_i g((p_i - p_j) / r) / pde_i`.
pub fn mc_conv_forward<T: Real>(
    features: &Tensor<T>,
    positions: &[[T; 3]],
    graph: &NeighborGraph,
    pde: &[T],
    kernel: &KernelRef<T>,
    r: f64,
) -> Result<McConvOutput<T>> {
    check_inputs(features, positions, graph, pde, kernel, r)?;
    let (n, cin, cout) = (positions.len(), kernel.c_in, kernel.c_out);
    let rows = (HIDDEN + 1) * cin;
    let inv_r = T::of(1.0 / r);
    let f = features.data();
    let mut moments = vec![T::zero(); n * rows];
    for j in 0..n {
        let nb = graph.neighbors(j);
        let inv_n = T::one() / T::of(nb.len() as f64);
        let mj = &mut moments[j * rows..(j + 1) * rows];
        for &i in nb {
            let (_, h) = kernel.hidden(&offset(&positions[i], &positions[j], inv_r));
            let w = inv_n / pde[i];
            let fi = &f[i * cin..(i + 1) * cin];
            for k in 0..=HIDDEN {
                let coef = if k == HIDDEN { w } else { h[k] * w };
                if coef == T::zero() {
                    continue;
                }
                for (m, &fv) in mj[k * cin..(k + 1) * cin].iter_mut().zip(fi) {
                    *m = *m + coef * fv;
                }
            }
        }
    }
    let waug = kernel.augmented();
    let mut out = vec![T::zero(); n * (cout + 1)];
    gemm(Transpose::No, Transpose::No, n, cout + 1, rows, T::one(), &moments, &waug, T::zero(), &mut out);
    let mut feats = Vec::with_capacity(n * cout);
    let mut update = Vec::with_capacity(n);
    for row in out.chunks_exact(cout + 1) {
        feats.extend_from_slice(&row[..cout]);
        update.push(row[cout]);
    }
    Ok(McConvOutput {
        features: Tensor::from_vec(&[n, cout], feats)?,
        update,
        cache: McConvCache { moments },
    })
}

/// Gradients of `sum(d_features * out) + sum(d_update * u)`.
#[allow(clippy::too_many_arguments)]
pub fn mc_conv_backward<T: Real>(
    features: &Tensor<T>,
    positions: &[[T; 3]],
    graph: &NeighborGraph,
    pde: &[T],
    kernel: &KernelRef<T>,
    r: f64,
    cache: &McConvCache<T>,
    d_features: &Tensor<T>,
    d_update: &[T],
) -> Result<McConvGrads<T>> {
    check_inputs(features, positions, graph, pde, kernel, r)?;
    let (n, cin, cout) = (positions.len(), kernel.c_in, kernel.c_out);
    d_features.expect_shape("mc_conv_backward", &[n, cout])?;
    ensure!(d_update.len() == n, "update gradient length mismatch");
    let rows = (HIDDEN + 1) * cin;
    let slope = T::of(LEAKY_SLOPE);
    let inv_r = T::of(1.0 / r);

    let mut g = Vec::with_capacity(n * (cout + 1));
    for j in 0..n {
        g.extend_from_slice(&d_features.data()[j * cout..(j + 1) * cout]);
        g.push(d_update[j]);
    }
    let mut dwaug = vec![T::zero(); rows * (cout + 1)];
    gemm(Transpose::Yes, Transpose::No, rows, cout + 1, n, T::one(), &cache.moments, &g, T::zero(), &mut dwaug);
    let waug = kernel.augmented();
    let mut dm = vec![T::zero(); n * rows];
    gemm(Transpose::No, Transpose::Yes, n, rows, cout + 1, T::one(), &g, &waug, T::zero(), &mut dm);

    let f = features.data();
    let mut df = vec![T::zero(); n * cin];
    let mut dpos = vec![[T::zero(); 3]; n];
    let mut dpde = vec![T::zero(); n];
    let mut dw1 = vec![T::zero(); 3 * HIDDEN];
    let mut db1 = vec![T::zero(); HIDDEN];
    for j in 0..n {
        let nb = graph.neighbors(j);
        let inv_n = T::one() / T::of(nb.len() as f64);
        let dmj = &dm[j * rows..(j + 1) * rows];
        for &i in nb {
            let x = offset(&positions[i], &positions[j], inv_r);
            let (z, h) = kernel.hidden(&x);
            let w = inv_n / pde[i];
            let fi = &f[i * cin..(i + 1) * cin];
            let dfi = &mut df[i * cin..(i + 1) * cin];
            let mut q = [T::zero(); HIDDEN + 1];
            for k in 0..=HIDDEN {
                let hk = if k == HIDDEN { T::one() } else { h[k] };
                let row = &dmj[k * cin..(k + 1) * cin];
                let mut s = T::zero();
                for c in 0..cin {
                    s = s + row[c] * fi[c];
                    dfi[c] = dfi[c] + w * hk * row[c];
                }
                q[k] = s * w;
            }
            let total: T = (0..HIDDEN).map(|k| q[k] * h[k]).fold(q[HIDDEN], |a, b| a + b);
            dpde[i] = dpde[i] - total / pde[i];
            let mut dx = [T::zero(); 3];
            for k in 0..HIDDEN {
                let dz = q[k] * leaky_relu_grad_scalar(z[k], slope);
                if dz == T::zero() {
                    continue;
                }
                db1[k] = db1[k] + dz;
                for a in 0..3 {
                    dw1[a * HIDDEN + k] = dw1[a * HIDDEN + k] + x[a] * dz;
                    dx[a] = dx[a] + kernel.w1[a * HIDDEN + k] * dz;
                }
            }
            for a in 0..3 {
                let d = dx[a] * inv_r;
                dpos[i][a] = dpos[i][a] + d;
                dpos[j][a] = dpos[j][a] - d;
            }
        }
    }
    let split = HIDDEN * kernel.out_width();
    Ok(McConvGrads {
        features: Tensor::from_vec(&[n, cin], df)?,
        positions: dpos,
        pde: dpde,
        w1: Tensor::from_vec(&[3, HIDDEN], dw1)?,
        b1: Tensor::from_vec(&[HIDDEN], db1)?,
        w2: Tensor::from_vec(&[HIDDEN, kernel.out_width()], dwaug[..split].to_vec())?,
        b2: Tensor::from_vec(&[kernel.out_width()], dwaug[split..].to_vec())?,
    })
}

#[cfg(test)]
mod tests {
    use super::super::density::density_estimate;
    use super::super::neighbors::radius_neighbors;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_kernel(c_in: usize, c_out: usize, seed: u64) -> KernelMlp<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut k = KernelMlp::init(c_in, c_out, &mut rng);
        k.b1 = glorot_uniform(&[HIDDEN], 1, HIDDEN, &mut rng);
        k.b2 = glorot_uniform(&[c_in * (c_out + 1)], 1, 4, &mut rng);
        k
    }

    #[test]
    fn single_point_equals_hand_product() {
        let k = random_kernel(2, 3, 1);
        let pos = [[0.1, -0.2, 1.5]];
        let g = radius_neighbors(&pos, 0.1).unwrap();
        let f = Tensor::from_vec(&[1, 2], vec![0.7, -1.3]).unwrap();
        let out = mc_conv_forward(&f, &pos, &g, &[1.0], &k.view(), 0.1).unwrap();
        // g(0) = leaky(b1) W2 + b2, reshaped [C_in, C_out + 1].
        let g0 = k.view().eval(&[0.0; 3]);
        for o in 0..3 {
            let want = 0.7 * g0[o] + -1.3 * g0[4 + o];
            assert!((out.features.data()[o] - want).abs() < 1e-12);
        }
        let want_u = 0.7 * g0[3] + -1.3 * g0[7];
        assert!((out.update[0] - want_u).abs() < 1e-12);
    }

    #[test]
    fn brute_force_formula() {
        let k = random_kernel(2, 2, 2);
        let pos = [[0.0, 0.0, 1.0], [0.05, 0.01, 1.02], [0.02, 0.07, 0.98], [0.5, 0.5, 1.0]];
        let r = 0.1;
        let g = radius_neighbors(&pos, r).unwrap();
        let pde = density_estimate(&pos, &g, r / 4.0);
        let f = Tensor::from_vec(&[4, 2], vec![1.0, 2.0, -0.5, 0.3, 0.8, -1.1, 0.2, 0.9]).unwrap();
        let out = mc_conv_forward(&f, &pos, &g, &pde, &k.view(), r).unwrap();
        for j in 0..4 {
            let nb = g.neighbors(j);
            let mut want = [0.0; 3];
            for &i in nb {
                let x = [(pos[i][0] - pos[j][0]) / r, (pos[i][1] - pos[j][1]) / r, (pos[i][2] - pos[j][2]) / r];
                let gv = k.view().eval(&x);
                for c in 0..2 {
                    for o in 0..3 {
                        want[o] += f.data()[i * 2 + c] * gv[c * 3 + o] / pde[i];
                    }
                }
            }
            for o in 0..2 {
                let w = want[o] / nb.len() as f64;
                assert!((out.features.data()[j * 2 + o] - w).abs() < 1e-12);
            }
            assert!((out.update[j] - want[2] / nb.len() as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn channel_mismatch_rejected() {
        let k = random_kernel(2, 3, 3);
        let pos = [[0.0, 0.0, 1.0]];
        let g = radius_neighbors(&pos, 0.1).unwrap();
        let f = Tensor::zeros(&[1, 3]);
        assert!(mc_conv_forward(&f, &pos, &g, &[1.0], &k.view(), 0.1).is_err());
    }
}
