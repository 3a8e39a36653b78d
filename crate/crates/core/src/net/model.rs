//! The coarse-fine network: a 2D block, 2.5D pooling onto a coarse point
//! cloud, a stack of RADU layers, projection and upsampling back to the
//! image, and a second 2D block fed by a skip connection.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::conv2d::{conv2d_backward, conv2d_forward, Conv2d, Conv2dCache, KSIZE};
use crate::error::{ensure, Error, Result};
use crate::geometry::{crop_top_left, pad_reflect, padded_extent, CameraIntrinsics, RayPointCloud};
use crate::pointconv::{
    pool_2_5d, pool_2_5d_backward, radu_layer_backward, radu_layer_forward, upsample_bilinear,
    upsample_bilinear_backward, KernelMlp, KernelRef, PoolCache, PoolMode, RaduLayerCache, RaduLayerConfig, HIDDEN,
    LEAKY_SLOPE,
};
use crate::signal::FEATURE_CHANNELS;
use crate::tensor::ops::leaky_relu_backward_inplace;
use crate::tensor::{GradSlot, Real, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_channels: usize,
    pub block1: Vec<usize>,
    pub radu_channels: Vec<usize>,
    /// Meters, one per RADU layer.
    pub radu_radii: Vec<f64>,
    pub block2: Vec<usize>,
    pub stride: usize,
    pub alpha: f64,
    pub pool_mode: PoolMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_channels: FEATURE_CHANNELS,
            block1: vec![64, 64, 128],
            radu_channels: vec![128, 256, 128],
            radu_radii: vec![0.1, 0.2, 0.4],
            block2: vec![64, 64, 1],
            stride: 8,
            alpha: 0.1,
            pool_mode: PoolMode::Average,
        }
    }
}

impl ModelConfig {
    /// Half the default widths, roughly a quarter of the 2D convolution cost.
    pub fn desk() -> Self {
        Self {
            block1: vec![32, 32, 64],
            radu_channels: vec![64, 128, 64],
            block2: vec![32, 32, 1],
            ..Self::default()
        }
    }

    /// A narrow variant with stride 2 for 8x8 inputs, used by gradient
    /// checks and smoke tests.
    pub fn tiny() -> Self {
        Self {
            input_channels: FEATURE_CHANNELS,
            block1: vec![4, 4, 6],
            radu_channels: vec![6, 8, 6],
            radu_radii: vec![0.1, 0.2, 0.4],
            block2: vec![4, 4, 1],
            stride: 2,
            alpha: 0.1,
            pool_mode: PoolMode::Average,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.input_channels >= 1, "model needs at least one input channel");
        ensure!(!self.block1.is_empty() && !self.block2.is_empty(), "both 2D blocks need a layer");
        ensure!(self.block2.last() == Some(&1), "the last 2D layer must emit one channel");
        ensure!(
            !self.radu_channels.is_empty() && self.radu_channels.len() == self.radu_radii.len(),
            "need one radius per RADU layer"
        );
        ensure!(self.stride >= 1, "pooling stride must be at least 1");
        ensure!(self.alpha > 0.0, "alpha must be positive");
        ensure!(
            self.block1.iter().chain(&self.radu_channels).chain(&self.block2).all(|&c| c > 0),
            "channel counts must be positive"
        );
        Ok(())
    }

    pub fn skip_channels(&self) -> usize {
        *self.block1.last().expect("validated")
    }

    pub fn latent_channels(&self) -> usize {
        *self.radu_channels.last().expect("validated")
    }

    /// Upsampled features, skip features and the coarse distance.
    pub fn block2_input(&self) -> usize {
        self.latent_channels() + self.skip_channels() + 1
    }

    pub fn radu_layers(&self) -> Vec<RaduLayerConfig> {
        let mut c_in = self.skip_channels();
        self.radu_channels
            .iter()
            .zip(&self.radu_radii)
            .map(|(&c_out, &r)| {
                let mut l = RaduLayerConfig::new(r, c_in, c_out);
                l.alpha = self.alpha;
                c_in = c_out;
                l
            })
            .collect()
    }

    fn block_inputs(&self) -> (Vec<usize>, Vec<usize>) {
        let mut b1 = vec![self.input_channels];
        b1.extend_from_slice(&self.block1[..self.block1.len() - 1]);
        let mut b2 = vec![self.block2_input()];
        b2.extend_from_slice(&self.block2[..self.block2.len() - 1]);
        (b1, b2)
    }

    /// Names and shapes of every parameter tensor, in storage order.
    pub fn parameter_layout(&self) -> Vec<(String, Vec<usize>)> {
        let (in1, in2) = self.block_inputs();
        let mut out = Vec::new();
        for (l, (&ci, &co)) in in1.iter().zip(&self.block1).enumerate() {
            out.push((format!("block1.{l}.kernel"), vec![KSIZE, KSIZE, ci, co]));
            out.push((format!("block1.{l}.bias"), vec![co]));
        }
        for (l, cfg) in self.radu_layers().iter().enumerate() {
            let w = cfg.c_in * (cfg.c_out + 1);
            out.push((format!("radu.{l}.w1"), vec![3, HIDDEN]));
            out.push((format!("radu.{l}.b1"), vec![HIDDEN]));
            out.push((format!("radu.{l}.w2"), vec![HIDDEN, w]));
            out.push((format!("radu.{l}.b2"), vec![w]));
        }
        for (l, (&ci, &co)) in in2.iter().zip(&self.block2).enumerate() {
            out.push((format!("block2.{l}.kernel"), vec![KSIZE, KSIZE, ci, co]));
            out.push((format!("block2.{l}.bias"), vec![co]));
        }
        out
    }
}

/// Every learnable tensor with its gradient slot.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    names: Vec<String>,
    slots: Vec<GradSlot<T>>,
}

impl<T: Real> ModelParams<T> {
    /// Fan-based uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (in1, in2) = config.block_inputs();
        let mut tensors = Vec::new();
        for (&ci, &co) in in1.iter().zip(&config.block1) {
            let c = Conv2d::<T>::init(ci, co, rng);
            tensors.push(c.kernel);
            tensors.push(c.bias);
        }
        for cfg in config.radu_layers() {
            let k = KernelMlp::<T>::init(cfg.c_in, cfg.c_out, rng);
            tensors.extend([k.w1, k.b1, k.w2, k.b2]);
        }
        for (&ci, &co) in in2.iter().zip(&config.block2) {
            let c = Conv2d::<T>::init(ci, co, rng);
            tensors.push(c.kernel);
            tensors.push(c.bias);
        }
        Self::from_tensors(config, tensors)
    }

    /// Assembles parameters in [`ModelConfig::parameter_layout`] order.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let layout = config.parameter_layout();
        ensure!(
            layout.len() == tensors.len(),
            "model needs {} tensors, got {}",
            layout.len(),
            tensors.len()
        );
        let mut names = Vec::with_capacity(layout.len());
        let mut slots = Vec::with_capacity(layout.len());
        for ((name, shape), t) in layout.into_iter().zip(tensors) {
            if t.shape() != shape.as_slice() {
                return Err(Error::contract(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            names.push(name);
            slots.push(GradSlot::new(t));
        }
        Ok(Self { config, names, slots })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn slots(&self) -> &[GradSlot<T>] {
        &self.slots
    }

    pub fn slots_mut(&mut self) -> &mut [GradSlot<T>] {
        &mut self.slots
    }

    pub fn values(&self) -> Vec<Tensor<T>> {
        self.slots.iter().map(|s| s.value.clone()).collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.slots.iter().map(|s| s.value.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            names: self.names.clone(),
            slots: self
                .slots
                .iter()
                .map(|s| GradSlot {
                    value: s.value.cast(),
                    grad: s.grad.cast(),
                })
                .collect(),
        }
    }

    pub fn zero_grads(&mut self) {
        self.slots.iter_mut().for_each(GradSlot::zero_grad);
    }

    pub fn accumulate_grads(&mut self, grads: &[Tensor<T>]) -> Result<()> {
        ensure!(grads.len() == self.slots.len(), "gradient list length mismatch");
        for (s, g) in self.slots.iter_mut().zip(grads) {
            s.grad.accumulate(g)?;
        }
        Ok(())
    }

    /// Scales every accumulated gradient, e.g. to average over a batch.
    pub fn scale_grads(&mut self, s: T) {
        for slot in &mut self.slots {
            slot.grad.data_mut().iter_mut().for_each(|g| *g = *g * s);
        }
    }

    /// Zeroes the output layer of every kernel MLP so that RADU layers emit
    /// neither features nor updates.
    pub fn zero_radu_outputs(&mut self) {
        let base = 2 * self.config.block1.len();
        for l in 0..self.config.radu_channels.len() {
            for off in [2, 3] {
                self.slots[base + 4 * l + off].value.data_mut().fill(T::zero());
            }
        }
    }

    /// A network whose output equals its per-pixel input distance: RADU
    /// layers emit nothing, and output channel 0 of every 2D layer copies
    /// one input channel through the center tap. The chain runs from input
    /// channel 0 (`d_1`) through block 1 to the skip connection and on
    /// through block 2. Distances are non-negative, so the leaky
    /// activations pass them unchanged. Other channels keep their random
    /// weights.
    pub fn passthrough<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        let mut p = Self::init(config, rng)?;
        p.zero_radu_outputs();
        let (in1, in2) = p.config.block_inputs();
        let skip = p.config.latent_channels();
        let mut layers = Vec::new();
        for (l, &co) in p.config.block1.iter().enumerate() {
            layers.push((p.block1_index(l), in1[l], co, 0));
        }
        for (l, &co) in p.config.block2.iter().enumerate() {
            layers.push((p.block2_index(l), in2[l], co, if l == 0 { skip } else { 0 }));
        }
        for (i, ci, co, src) in layers {
            let kernel = p.slots[i].value.data_mut();
            // [3, 3, ci, co]: clear output column 0, then set the center tap.
            for row in 0..KSIZE * KSIZE * ci {
                kernel[row * co] = T::zero();
            }
            kernel[((KSIZE * KSIZE / 2) * ci + src) * co] = T::one();
            p.slots[i + 1].value.data_mut()[0] = T::zero();
        }
        Ok(p)
    }

    fn block1_index(&self, l: usize) -> usize {
        2 * l
    }

    fn radu_index(&self, l: usize) -> usize {
        2 * self.config.block1.len() + 4 * l
    }

    fn block2_index(&self, l: usize) -> usize {
        2 * self.config.block1.len() + 4 * self.config.radu_channels.len() + 2 * l
    }

    fn conv(&self, index: usize) -> (&Tensor<T>, &[T]) {
        (&self.slots[index].value, self.slots[index + 1].value.data())
    }

    pub fn radu_kernel(&self, l: usize) -> KernelRef<'_, T> {
        let i = self.radu_index(l);
        let cfg = self.config.radu_layers()[l];
        KernelRef {
            w1: self.slots[i].value.data(),
            b1: self.slots[i + 1].value.data(),
            w2: self.slots[i + 2].value.data(),
            b2: self.slots[i + 3].value.data(),
            c_in: cfg.c_in,
            c_out: cfg.c_out,
        }
    }
}

/// One network input. `features` is `[H, W, C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetInput<T> {
    pub features: Tensor<T>,
    pub init_distance: Tensor<T>,
    /// Pixels that take part in pooling.
    pub mask: Vec<bool>,
    pub intrinsics: CameraIntrinsics,
}

impl<T: Real> NetInput<T> {
    fn validate(&self, channels: usize) -> Result<()> {
        let (h, w) = (self.intrinsics.height, self.intrinsics.width);
        self.features.expect_shape("network input", &[h, w, channels])?;
        self.init_distance.expect_shape("network init distance", &[h, w])?;
        ensure!(self.mask.len() == h * w, "mask length mismatch");
        Ok(())
    }
}

struct ConvStage<T> {
    cache: Conv2dCache<T>,
    /// Output after the activation (or raw for the final layer).
    out: Vec<T>,
}

struct RaduStage<T> {
    cache: RaduLayerCache<T>,
    /// Pre-activation output features.
    raw: Tensor<T>,
}

pub struct ForwardCache<T> {
    height: usize,
    width: usize,
    padded_height: usize,
    padded_width: usize,
    block1: Vec<ConvStage<T>>,
    pool: PoolCache,
    radu: Vec<RaduStage<T>>,
    block2: Vec<ConvStage<T>>,
}

pub struct ForwardOutput<T> {
    /// `[H, W]` final distance.
    pub d_out: Tensor<T>,
    /// `[H, W]` upsampled coarse distance of the 3D block.
    pub d_3d: Tensor<T>,
    /// The coarse cloud after pooling and after each RADU layer.
    pub latent: Vec<RayPointCloud<T>>,
    pub cache: ForwardCache<T>,
}

fn activate<T: Real>(v: &mut [T]) {
    let s = T::of(LEAKY_SLOPE);
    for x in v {
        if *x <= T::zero() {
            *x = *x * s;
        }
    }
}

fn non_finite<T: Real>(v: &[T], what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Scatters point values `[N, C]` onto an `[h, w, C]` grid; empty cells
/// are 0.
fn scatter<T: Real>(values: &[T], pixels: &[usize], cells: usize, c: usize) -> Vec<T> {
    let mut grid = vec![T::zero(); cells * c];
    for (i, &p) in pixels.iter().enumerate() {
        grid[p * c..(p + 1) * c].copy_from_slice(&values[i * c..(i + 1) * c]);
    }
    grid
}

fn gather<T: Real>(grid: &[T], pixels: &[usize], c: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(pixels.len() * c);
    for &p in pixels {
        out.extend_from_slice(&grid[p * c..(p + 1) * c]);
    }
    out
}

pub fn forward<T: Real>(params: &ModelParams<T>, input: &NetInput<T>) -> Result<ForwardOutput<T>> {
    let cfg = &params.config;
    input.validate(cfg.input_channels)?;
    let (h, w) = (input.intrinsics.height, input.intrinsics.width);
    let (ph, pw) = (padded_extent(h, cfg.stride), padded_extent(w, cfg.stride));
    let pad = |data: &[T], c| pad_reflect(data, h, w, c, ph, pw);
    let features = pad(input.features.data(), cfg.input_channels);
    let init = Tensor::from_vec(&[ph, pw], pad(input.init_distance.data(), 1))?;
    let mask = pad_reflect(&input.mask, h, w, 1, ph, pw);
    let intrinsics = input.intrinsics.padded(pw, ph);
    let cells = ph * pw;

    let mut x = features;
    let mut block1 = Vec::with_capacity(cfg.block1.len());
    for l in 0..cfg.block1.len() {
        let (k, b) = params.conv(params.block1_index(l));
        let (mut y, cache) = conv2d_forward(&x, ph, pw, k, b)?;
        activate(&mut y);
        x = y.clone();
        block1.push(ConvStage { cache, out: y });
    }
    non_finite(&x, "2D block 1")?;
    let skip_c = cfg.skip_channels();
    let skip = Tensor::from_vec(&[ph, pw, skip_c], x)?;

    let (cloud0, pool) = pool_2_5d(&init, &mask, &skip, &intrinsics, cfg.stride, cfg.pool_mode)?;
    let coarse = cloud0.intrinsics;
    let mut latent = vec![cloud0];
    let mut radu = Vec::with_capacity(cfg.radu_channels.len());
    for (l, layer) in cfg.radu_layers().iter().enumerate() {
        let (mut next, cache) = radu_layer_forward(latent.last().expect("non-empty"), &params.radu_kernel(l), layer)?;
        let raw = next.features.clone();
        activate(next.features.data_mut());
        non_finite(next.features.data(), "RADU layer")?;
        latent.push(next);
        radu.push(RaduStage { cache, raw });
    }

    let last = latent.last().expect("non-empty");
    let coarse_cells = coarse.num_pixels();
    let lat_c = cfg.latent_channels();
    let feat_grid = scatter(last.features.data(), &last.pixel_index, coarse_cells, lat_c);
    let dist_grid = scatter(&last.distance, &last.pixel_index, coarse_cells, 1);
    let up = upsample_bilinear(&feat_grid, coarse.height, coarse.width, lat_c, cfg.stride)?;
    let d3d = upsample_bilinear(&dist_grid, coarse.height, coarse.width, 1, cfg.stride)?;

    let cat_c = cfg.block2_input();
    let skip = skip.into_data();
    let mut x = Vec::with_capacity(cells * cat_c);
    for p in 0..cells {
        x.extend_from_slice(&up[p * lat_c..(p + 1) * lat_c]);
        x.extend_from_slice(&skip[p * skip_c..(p + 1) * skip_c]);
        x.push(d3d[p]);
    }
    let mut block2 = Vec::with_capacity(cfg.block2.len());
    for l in 0..cfg.block2.len() {
        let (k, b) = params.conv(params.block2_index(l));
        let (mut y, cache) = conv2d_forward(&x, ph, pw, k, b)?;
        if l + 1 < cfg.block2.len() {
            activate(&mut y);
        }
        x = y.clone();
        block2.push(ConvStage { cache, out: y });
    }
    non_finite(&x, "2D block 2")?;

    let d_out = Tensor::from_vec(&[h, w], crop_top_left(&x, pw, 1, h, w))?;
    let d_3d = Tensor::from_vec(&[h, w], crop_top_left(&d3d, pw, 1, h, w))?;
    Ok(ForwardOutput {
        d_out,
        d_3d,
        latent,
        cache: ForwardCache {
            height: h,
            width: w,
            padded_height: ph,
            padded_width: pw,
            block1,
            pool,
            radu,
            block2,
        },
    })
}

/// Gradients of `sum(g_out * d_out) + sum(g_3d * d_3d)` with respect to
/// every parameter, in slot order.
pub fn backward<T: Real>(
    params: &ModelParams<T>,
    fwd: &ForwardOutput<T>,
    g_out: &Tensor<T>,
    g_3d: &Tensor<T>,
) -> Result<Vec<Tensor<T>>> {
    let cfg = &params.config;
    let c = &fwd.cache;
    let (h, w, ph, pw) = (c.height, c.width, c.padded_height, c.padded_width);
    g_out.expect_shape("network backward", &[h, w])?;
    g_3d.expect_shape("network backward", &[h, w])?;
    let cells = ph * pw;
    let embed = |g: &Tensor<T>| {
        let mut full = vec![T::zero(); cells];
        for y in 0..h {
            full[y * pw..y * pw + w].copy_from_slice(&g.data()[y * w..(y + 1) * w]);
        }
        full
    };
    let mut grads: Vec<Tensor<T>> = params.slots().iter().map(|s| Tensor::zeros(s.value.shape())).collect();
    let slope = T::of(LEAKY_SLOPE);

    let mut g = embed(g_out);
    for l in (0..cfg.block2.len()).rev() {
        let stage = &c.block2[l];
        if l + 1 < cfg.block2.len() {
            leaky_relu_backward_inplace(&stage.out, slope, &mut g);
        }
        let idx = params.block2_index(l);
        let cg = conv2d_backward(&stage.cache, &params.slots()[idx].value, &g, true)?;
        grads[idx] = cg.kernel;
        grads[idx + 1] = cg.bias;
        g = cg.input.expect("requested");
    }

    let (lat_c, skip_c, cat_c) = (cfg.latent_channels(), cfg.skip_channels(), cfg.block2_input());
    let mut g_up = Vec::with_capacity(cells * lat_c);
    let mut g_skip = Vec::with_capacity(cells * skip_c);
    let mut g_d3d = embed(g_3d);
    for p in 0..cells {
        let row = &g[p * cat_c..(p + 1) * cat_c];
        g_up.extend_from_slice(&row[..lat_c]);
        g_skip.extend_from_slice(&row[lat_c..lat_c + skip_c]);
        g_d3d[p] = g_d3d[p] + row[cat_c - 1];
    }

    let coarse = fwd.latent[0].intrinsics;
    let g_feat_grid = upsample_bilinear_backward(&g_up, coarse.height, coarse.width, lat_c, cfg.stride)?;
    let g_dist_grid = upsample_bilinear_backward(&g_d3d, coarse.height, coarse.width, 1, cfg.stride)?;
    let pixels = &fwd.latent[0].pixel_index;
    let n = pixels.len();
    let mut gf = Tensor::from_vec(&[n, lat_c], gather(&g_feat_grid, pixels, lat_c))?;
    let mut gd = gather(&g_dist_grid, pixels, 1);

    let layers = cfg.radu_layers();
    for l in (0..layers.len()).rev() {
        let stage = &c.radu[l];
        leaky_relu_backward_inplace(stage.raw.data(), slope, gf.data_mut());
        let kernel = params.radu_kernel(l);
        let rg = radu_layer_backward(&fwd.latent[l], &kernel, &layers[l], &stage.cache, &gf, &gd)?;
        let idx = params.radu_index(l);
        grads[idx] = rg.w1;
        grads[idx + 1] = rg.b1;
        grads[idx + 2] = rg.w2;
        grads[idx + 3] = rg.b2;
        gf = rg.features;
        gd = rg.distance;
    }

    let (_, g_pool) = pool_2_5d_backward(&c.pool, &gd, &gf)?;
    for (a, b) in g_skip.iter_mut().zip(&g_pool) {
        *a = *a + *b;
    }
    let mut g = g_skip;
    for l in (0..cfg.block1.len()).rev() {
        let stage = &c.block1[l];
        leaky_relu_backward_inplace(&stage.out, slope, &mut g);
        let idx = params.block1_index(l);
        let cg = conv2d_backward(&stage.cache, &params.slots()[idx].value, &g, l > 0)?;
        grads[idx] = cg.kernel;
        grads[idx + 1] = cg.bias;
        if let Some(gi) = cg.input {
            g = gi;
        }
    }
    for (name, t) in params.names().iter().zip(&grads) {
        if !t.all_finite() {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
    }
    Ok(grads)
}
