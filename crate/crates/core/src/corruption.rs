//! Latent-code corruption.
//!
//! Each copy is `h + M ⊙ η` where `M` is the foreground mask broadcast over
//! channels and `η[c, ·, ·] ~ N(0, α σ_c²)`, with `σ_c` the population standard
//! deviation of channel `c` of the clean code. Copy `i` draws from its own
//! substream `(seed, i)`, channel-major then row-major, one normal per latent
//! position whether or not it is masked.

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, ImageGrid, LatentCode};
use crate::rng::{substream, Domain};

/// How the foreground mask gates the noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaskMode {
    /// `ĥ = h + 1[x̂ > t] ⊙ η`
    #[default]
    Indicator,
    /// `ĥ = h + (h ⊙ 1[x̂ > t]) ⊙ η`
    ValueScaled,
}

impl MaskMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MaskMode::Indicator => "indicator",
            MaskMode::ValueScaled => "value_scaled",
        }
    }
}

impl std::str::FromStr for MaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "indicator" => Ok(MaskMode::Indicator),
            "value_scaled" => Ok(MaskMode::ValueScaled),
            other => Err(Error::InvalidArgument(format!("unknown mask mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionConfig {
    /// Multiplier on the per-channel latent variance.
    pub alpha: f64,
    /// Number of corrupted copies.
    pub k: usize,
    pub seed: u64,
    /// Output pixels strictly above this count as foreground.
    pub foreground_threshold: f64,
    pub mask_mode: MaskMode,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self {
            alpha: 3.0,
            k: 10,
            seed: 0,
            foreground_threshold: 0.0,
            mask_mode: MaskMode::Indicator,
        }
    }
}

impl CorruptionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha must be finite and non-negative, got {}",
                self.alpha
            )));
        }
        if !self.foreground_threshold.is_finite() {
            return Err(Error::InvalidArgument("foreground threshold must be finite".into()));
        }
        Ok(())
    }
}

/// Population standard deviation of every channel.
pub fn channel_std(h: &LatentCode) -> Vec<f64> {
    (0..h.channels())
        .map(|c| {
            let plane = h.channel(c);
            let n = plane.len() as f64;
            let mean = plane.iter().sum::<f64>() / n;
            (plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
        })
        .collect()
}

/// Thresholds the clean decode and maps the result onto the latent grid by
/// nearest neighbour: target index `i` reads source `floor((i + 0.5) * src / dst)`.
pub fn foreground_mask(
    clean: &ImageGrid,
    threshold: f64,
    target_h: usize,
    target_w: usize,
) -> Result<BinaryMask> {
    if target_h == 0 || target_w == 0 {
        return Err(Error::InvalidArgument(format!(
            "target dims must be positive, got {target_h}x{target_w}"
        )));
    }
    let rows = nearest_indices(clean.height(), target_h);
    let cols = nearest_indices(clean.width(), target_w);
    BinaryMask::from_fn(target_h, target_w, |r, c| {
        clean.get(rows[r], cols[c]) > threshold
    })
}

fn nearest_indices(src: usize, dst: usize) -> Vec<usize> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| (((i as f64 + 0.5) * scale).floor() as usize).min(src - 1))
        .collect()
}

/// Generates `cfg.k` corrupted copies of `h`.
///
/// `σ` is computed once from `h`. Copies are independent of each other and of
/// `k`: the first `min(a, b)` copies of runs with `k = a` and `k = b` coincide.
pub fn corrupt_latents(
    h: &LatentCode,
    mask: &BinaryMask,
    cfg: &CorruptionConfig,
) -> Result<Vec<LatentCode>> {
    cfg.validate()?;
    if mask.dims() != (h.height(), h.width()) {
        return Err(Error::Shape(format!(
            "mask {:?} does not match latent spatial dims {:?}",
            mask.dims(),
            (h.height(), h.width())
        )));
    }
    let scales: Vec<f64> = channel_std(h)
        .into_iter()
        .map(|s| cfg.alpha.sqrt() * s)
        .collect();
    let copy = |i: usize| corrupt_copy(h, mask, &scales, cfg.seed, i as u64, cfg.mask_mode);

    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        Ok((0..cfg.k).into_par_iter().map(copy).collect())
    }
    #[cfg(not(feature = "parallel"))]
    {
        Ok((0..cfg.k).map(copy).collect())
    }
}

fn corrupt_copy(
    h: &LatentCode,
    mask: &BinaryMask,
    scales: &[f64],
    seed: u64,
    index: u64,
    mode: MaskMode,
) -> LatentCode {
    let mut rng = substream(seed, Domain::Corruption, index);
    let mut out = h.clone();
    let plane = h.plane_len();
    let fg = mask.data();
    let data = out.data_mut();
    for (c, &scale) in scales.iter().enumerate() {
        for p in 0..plane {
            let z: f64 = StandardNormal.sample(&mut rng);
            // Zero-scale and background positions are left bit-identical.
            if scale == 0.0 || !fg[p] {
                continue;
            }
            let idx = c * plane + p;
            let noise = scale * z;
            data[idx] += match mode {
                MaskMode::Indicator => noise,
                MaskMode::ValueScaled => h.data()[idx] * noise,
            };
        }
    }
    out
}
