//! AMCW time-of-flight measurement synthesis and inversion.
//!
//! A pixel observes, for each modulation frequency `f` and phase offset
//! `theta`, the correlation tap `m = I + A cos(phase + theta)`. Multiple light
//! paths superpose linearly, which is what biases the recovered phase under
//! multi-path interference.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::tensor::Tensor;

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Pixels whose amplitude falls below this (sensor units) are invalid.
pub const DEFAULT_AMPLITUDE_FLOOR: f64 = 1e-6;

/// Modulation frequencies and the uniformly spaced phase offsets sampled at
/// each of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulationConfig {
    /// Hz, in feature order `f_1, f_2, f_3`.
    pub frequencies: Vec<f64>,
    /// Radians, uniformly spaced over `[0, 2pi)`.
    pub phase_offsets: Vec<f64>,
}

impl Default for ModulationConfig {
    /// 20, 50 and 70 MHz, four offsets each: twelve taps per pixel.
    fn default() -> Self {
        Self::uniform(vec![20e6, 50e6, 70e6], 4).expect("valid default")
    }
}

impl ModulationConfig {
    pub fn uniform(frequencies: Vec<f64>, phases: usize) -> Result<Self> {
        let phase_offsets = (0..phases).map(|i| TAU * i as f64 / phases as f64).collect();
        let config = Self {
            frequencies,
            phase_offsets,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.frequencies.is_empty(), "at least one modulation frequency required");
        for &f in &self.frequencies {
            ensure!(f > 0.0 && f.is_finite(), "modulation frequency must be positive, got {f}");
        }
        let p = self.phase_offsets.len();
        ensure!(p >= 2, "at least 2 phase offsets required, got {p}");
        for (i, &theta) in self.phase_offsets.iter().enumerate() {
            let want = TAU * i as f64 / p as f64;
            ensure!(
                (theta - want).abs() < 1e-9,
                "phase offsets must be uniformly spaced over [0, 2pi): offset {i} is {theta}"
            );
        }
        Ok(())
    }

    pub fn num_frequencies(&self) -> usize {
        self.frequencies.len()
    }

    pub fn num_phases(&self) -> usize {
        self.phase_offsets.len()
    }
}

/// One light path's contribution at one pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct PathComponent {
    pub intensity: f64,
    pub amplitude: f64,
    /// Phase delay per modulation frequency, radians.
    pub phases: Vec<f64>,
}

impl PathComponent {
    /// A path whose round trip equals twice `distance`.
    pub fn at_distance(intensity: f64, amplitude: f64, distance: f64, config: &ModulationConfig) -> Self {
        let phases = config
            .frequencies
            .iter()
            .map(|&f| 4.0 * PI * f * distance / SPEED_OF_LIGHT)
            .collect();
        Self {
            intensity,
            amplitude,
            phases,
        }
    }

    fn validate(&self, frequencies: usize) -> Result<()> {
        ensure!(self.amplitude >= 0.0, "path amplitude must be non-negative");
        ensure!(
            self.intensity >= self.amplitude,
            "path intensity {} below amplitude {}",
            self.intensity,
            self.amplitude
        );
        ensure!(
            self.phases.len() == frequencies,
            "path carries {} phases for {} frequencies",
            self.phases.len(),
            frequencies
        );
        Ok(())
    }
}

/// Raw taps `[F, P, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationFrame {
    pub taps: Tensor<f64>,
    pub config: ModulationConfig,
}

impl CorrelationFrame {
    pub fn new(taps: Tensor<f64>, config: ModulationConfig) -> Result<Self> {
        let s = taps.shape();
        ensure!(s.len() == 4, "tap tensor must be [F, P, H, W], got {s:?}");
        ensure!(
            s[0] == config.num_frequencies() && s[1] == config.num_phases(),
            "tap tensor {s:?} does not match {} frequencies x {} phases",
            config.num_frequencies(),
            config.num_phases()
        );
        Ok(Self { taps, config })
    }

    pub fn height(&self) -> usize {
        self.taps.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.taps.shape()[3]
    }
}

/// Sums every path's sinusoid into the taps of each pixel.
///
/// `components` is row-major over an `height x width` grid. A pixel with no
/// paths gets all-zero taps, which later recovers as invalid.
pub fn synthesize_taps(
    components: &[Vec<PathComponent>],
    height: usize,
    width: usize,
    config: &ModulationConfig,
) -> Result<CorrelationFrame> {
    config.validate()?;
    ensure!(
        components.len() == height * width,
        "expected {} pixels of components, got {}",
        height * width,
        components.len()
    );
    let (nf, np) = (config.num_frequencies(), config.num_phases());
    let plane = height * width;
    let mut taps = Tensor::zeros(&[nf, np, height, width]);
    let data = taps.data_mut();
    for (pix, paths) in components.iter().enumerate() {
        for path in paths {
            path.validate(nf)?;
        }
        for f in 0..nf {
            for (p, &theta) in config.phase_offsets.iter().enumerate() {
                let m: f64 = paths
                    .iter()
                    .map(|c| c.intensity + c.amplitude * (c.phases[f] + theta).cos())
                    .sum();
                data[(f * np + p) * plane + pix] = m;
            }
        }
    }
    CorrelationFrame::new(taps, config.clone())
}

/// Per-frequency intensity, amplitude and phase, `[F, H, W]` each.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasorMap {
    pub intensity: Tensor<f64>,
    pub amplitude: Tensor<f64>,
    /// Radians in `[0, 2pi)`.
    pub phase: Tensor<f64>,
    /// Row-major `[H, W]`; false where any frequency's amplitude is below
    /// the floor.
    pub valid: Vec<bool>,
    pub config: ModulationConfig,
}

impl PhasorMap {
    pub fn height(&self) -> usize {
        self.phase.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.phase.shape()[2]
    }

    /// Wrapped distance map at frequency index `k`.
    pub fn distance(&self, k: usize) -> Vec<f64> {
        let plane = self.height() * self.width();
        let f = self.config.frequencies[k];
        self.phase.data()[k * plane..(k + 1) * plane]
            .iter()
            .map(|&phi| SPEED_OF_LIGHT * phi / (4.0 * PI * f))
            .collect()
    }
}

pub fn recover_phasor(frame: &CorrelationFrame) -> Result<PhasorMap> {
    recover_phasor_with_floor(frame, DEFAULT_AMPLITUDE_FLOOR)
}

/// Least-squares phasor recovery from the taps of every pixel.
///
/// `A` is normalized by `2 / P` so it equals the generating amplitude.
pub fn recover_phasor_with_floor(frame: &CorrelationFrame, amplitude_floor: f64) -> Result<PhasorMap> {
    let config = &frame.config;
    let np = config.num_phases();
    ensure!(np >= 3, "phasor recovery needs at least 3 phase offsets, got {np}");
    let nf = config.num_frequencies();
    let (h, w) = (frame.height(), frame.width());
    let plane = h * w;
    let taps = frame.taps.data();
    let sin: Vec<f64> = config.phase_offsets.iter().map(|t| t.sin()).collect();
    let cos: Vec<f64> = config.phase_offsets.iter().map(|t| t.cos()).collect();

    let mut intensity = vec![0.0; nf * plane];
    let mut amplitude = vec![0.0; nf * plane];
    let mut phase = vec![0.0; nf * plane];
    let mut valid = vec![true; plane];
    for f in 0..nf {
        for pix in 0..plane {
            let (mut re, mut im, mut sum) = (0.0, 0.0, 0.0);
            for p in 0..np {
                let m = taps[(f * np + p) * plane + pix];
                re -= sin[p] * m;
                im += cos[p] * m;
                sum += m;
            }
            let idx = f * plane + pix;
            let a = 2.0 / np as f64 * re.hypot(im);
            intensity[idx] = sum / np as f64;
            amplitude[idx] = a;
            phase[idx] = wrap_phase(re.atan2(im));
            if !(a >= amplitude_floor) {
                valid[pix] = false;
            }
        }
    }
    Ok(PhasorMap {
        intensity: Tensor::from_vec(&[nf, h, w], intensity)?,
        amplitude: Tensor::from_vec(&[nf, h, w], amplitude)?,
        phase: Tensor::from_vec(&[nf, h, w], phase)?,
        valid,
        config: config.clone(),
    })
}

/// Maps any angle into `[0, 2pi)`.
pub fn wrap_phase(phi: f64) -> f64 {
    let r = phi.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Unambiguous range `c / 2f`.
pub fn max_distance(frequency: f64) -> f64 {
    SPEED_OF_LIGHT / (2.0 * frequency)
}

pub fn phase_to_distance(phase: f64, frequency: f64) -> Result<f64> {
    ensure!(frequency > 0.0, "modulation frequency must be positive, got {frequency}");
    Ok(SPEED_OF_LIGHT * phase / (4.0 * PI * frequency))
}

/// Inverse of [`phase_to_distance`], wrapped into `[0, 2pi)`.
pub fn distance_to_phase(distance: f64, frequency: f64) -> Result<f64> {
    ensure!(frequency > 0.0, "modulation frequency must be positive, got {frequency}");
    Ok(wrap_phase(4.0 * PI * frequency * distance / SPEED_OF_LIGHT))
}

/// Two-frequency phase unwrapping by exhaustive search over wrap counts.
///
/// Picks the `(m, n)` with `m <= max_orders.0`, `n <= max_orders.1`
/// minimizing `|(d_a + m dmax_a) - (d_b + n dmax_b)|`, preferring the
/// lexicographically smallest pair on ties, and returns the mean of the two
/// unwrapped candidates.
pub fn unwrap_two_freq(d_a: f64, f_a: f64, d_b: f64, f_b: f64, max_orders: (u32, u32)) -> f64 {
    let (range_a, range_b) = (max_distance(f_a), max_distance(f_b));
    let mut best = (f64::INFINITY, d_a, d_b);
    for m in 0..=max_orders.0 {
        let ua = d_a + m as f64 * range_a;
        for n in 0..=max_orders.1 {
            let ub = d_b + n as f64 * range_b;
            let cost = (ua - ub).abs();
            if cost < best.0 {
                best = (cost, ua, ub);
            }
        }
    }
    0.5 * (best.1 + best.2)
}

/// Smallest wrap-count bounds covering distances up to `range` at both
/// frequencies.
pub fn orders_for_range(range: f64, f_a: f64, f_b: f64) -> (u32, u32) {
    let count = |f: f64| (range / max_distance(f)).floor().max(0.0) as u32;
    (count(f_a), count(f_b))
}

/// Linear mean-variance sensor noise `sigma^2 = gain * m + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub gain: f64,
    pub intercept: f64,
}

impl Default for NoiseModel {
    /// Raspberry Pi 3 camera at ISO 100.
    fn default() -> Self {
        Self {
            gain: 0.33,
            intercept: -18.4,
        }
    }
}

impl NoiseModel {
    /// Variance at mean signal `m`, clamped at zero where the affine model
    /// goes negative.
    pub fn variance(&self, m: f64) -> f64 {
        (self.gain * m + self.intercept).max(0.0)
    }
}

/// Adds zero-mean Gaussian noise with the model's variance to every tap.
pub fn apply_sensor_noise<R: Rng + ?Sized>(
    frame: &CorrelationFrame,
    model: &NoiseModel,
    rng: &mut R,
) -> Result<CorrelationFrame> {
    ensure!(model.gain > 0.0, "noise gain must be positive, got {}", model.gain);
    let mut out = frame.clone();
    for m in out.taps.data_mut() {
        let var = model.variance(*m);
        // Draw unconditionally so the stream stays aligned across pixels.
        let z: f64 = StandardNormal.sample(rng);
        if var > 0.0 {
            *m += var.sqrt() * z;
        }
    }
    Ok(out)
}

/// Ordinary least-squares fit of `(mean, variance)` pairs to
/// `variance = gain * mean + intercept`.
pub fn fit_mean_variance(points: &[(f64, f64)]) -> Result<NoiseModel> {
    ensure!(points.len() >= 2, "need at least two mean-variance points");
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    ensure!(sxx > 0.0, "mean-variance points need distinct means");
    let gain = sxy / sxx;
    Ok(NoiseModel {
        gain,
        intercept: my - gain * mx,
    })
}

/// How `d_1` is unwrapped before it becomes the network's initial distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UnwrapPolicy {
    /// Use the wrapped distance at `f_1` as is.
    #[default]
    None,
    /// Unwrap `d_1` against the frequency at index `partner`.
    TwoFrequency { partner: usize, max_orders: (u32, u32) },
}

/// The five-channel network input plus the initial distance map.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    /// `[5, H, W]`: `d_1, d_2 - d_1, d_3 - d_1, A_2/A_1 - 1, A_3/A_1 - 1`.
    pub channels: Tensor<f64>,
    /// `[H, W]` meters; equal to channel 0.
    pub init_distance: Tensor<f64>,
    /// Row-major `[H, W]`.
    pub valid: Vec<bool>,
}

pub const FEATURE_CHANNELS: usize = 5;

pub fn extract_features(phasors: &PhasorMap, policy: UnwrapPolicy) -> Result<FeatureStack> {
    let nf = phasors.config.num_frequencies();
    ensure!(nf >= 3, "feature extraction needs three frequency planes, got {nf}");
    let (h, w) = (phasors.height(), phasors.width());
    let plane = h * w;
    let freqs = &phasors.config.frequencies;
    let dist: Vec<Vec<f64>> = (0..3).map(|k| phasors.distance(k)).collect();
    let amp = phasors.amplitude.data();

    let d1: Vec<f64> = match policy {
        UnwrapPolicy::None => dist[0].clone(),
        UnwrapPolicy::TwoFrequency { partner, max_orders } => {
            ensure!(partner < nf && partner != 0, "invalid unwrap partner frequency {partner}");
            let d_partner = phasors.distance(partner);
            dist[0]
                .iter()
                .zip(&d_partner)
                .map(|(&a, &b)| unwrap_two_freq(a, freqs[0], b, freqs[partner], max_orders))
                .collect()
        }
    };

    let mut channels = vec![0.0; FEATURE_CHANNELS * plane];
    let mut init = vec![0.0; plane];
    for pix in 0..plane {
        if !phasors.valid[pix] {
            continue;
        }
        let a1 = amp[pix];
        let vals = [
            d1[pix],
            dist[1][pix] - d1[pix],
            dist[2][pix] - d1[pix],
            amp[plane + pix] / a1 - 1.0,
            amp[2 * plane + pix] / a1 - 1.0,
        ];
        for (c, v) in vals.into_iter().enumerate() {
            channels[c * plane + pix] = v;
        }
        init[pix] = d1[pix];
    }
    Ok(FeatureStack {
        channels: Tensor::from_vec(&[FEATURE_CHANNELS, h, w], channels)?,
        init_distance: Tensor::from_vec(&[h, w], init)?,
        valid: phasors.valid.clone(),
    })
}

/// The multi-frequency ToF baseline: `f_lo` unwraps `f_hi` and the two are
/// averaged. Invalid pixels are zero.
pub fn unwrapped_distance(phasors: &PhasorMap, lo: usize, hi: usize, max_orders: (u32, u32)) -> Result<Vec<f64>> {
    let nf = phasors.config.num_frequencies();
    if lo >= nf || hi >= nf {
        return Err(Error::contract(format!(
            "frequency index out of range: ({lo}, {hi}) with {nf} planes"
        )));
    }
    let (fa, fb) = (phasors.config.frequencies[lo], phasors.config.frequencies[hi]);
    let (da, db) = (phasors.distance(lo), phasors.distance(hi));
    Ok(da
        .iter()
        .zip(&db)
        .zip(&phasors.valid)
        .map(|((&a, &b), &ok)| if ok { unwrap_two_freq(a, fa, b, fb, max_orders) } else { 0.0 })
        .collect())
}
