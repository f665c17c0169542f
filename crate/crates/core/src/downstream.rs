//! Segmentation quality and its relation to the confidence score.
//!
//! The correlation study damages each sample's latent code at several
//! strengths, scores the damaged latent, segments its decode and compares
//! the segmentation with the reference mask. Pairs `(δ, DICE)` are then
//! correlated.

use std::collections::VecDeque;
use std::io::Write;

use crate::corruption::CorruptionConfig;
use crate::error::{Error, Result};
use crate::grid::{BinaryMask, ImageGrid};
use crate::model::CodecModel;
use crate::perturb::{csv_err, score_latent};
use crate::rng::derive_seed;
use crate::synthdata::{grade_damage, Sample};
use crate::tensor_io::format_sig;

/// Below this DICE the segmenter is considered to have failed.
pub const DEGRADED_DICE: f64 = 0.5;

/// `2|A∩B| / (|A|+|B|)`; two empty masks score 1.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!(
            "dice of {:?} and {:?} masks",
            a.dims(),
            b.dims()
        )));
    }
    let both = a.data().iter().zip(b.data()).filter(|(x, y)| **x && **y).count();
    let total = a.count() + b.count();
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / total as f64)
}

/// Pearson product-moment correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Shape(format!(
            "pearson of series with {} and {} values",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len();
    if n < 3 {
        return Err(Error::InvalidArgument(format!("pearson needs at least 3 pairs, got {n}")));
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateInput("a series has zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Splits ids into `δ >= cutoff` (kept) and the rest, preserving order.
pub fn threshold_filter<S: AsRef<str>>(samples: &[(S, f64)], cutoff: f64) -> (Vec<String>, Vec<String>) {
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    for (id, delta) in samples {
        if *delta >= cutoff {
            kept.push(id.as_ref().to_string());
        } else {
            rejected.push(id.as_ref().to_string());
        }
    }
    (kept, rejected)
}

/// Predicts a mask for sample `index` from a decoded image.
pub trait Segmenter: Sync {
    fn segment(&self, index: usize, image: &ImageGrid) -> BinaryMask;
}

/// Pixels above `threshold`, reduced to their largest 4-connected component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdSegmenter {
    pub threshold: f64,
}

/// Midway between the default phantom body and organ levels.
pub const DEFAULT_SEGMENT_THRESHOLD: f64 = 0.675;

impl Default for ThresholdSegmenter {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_SEGMENT_THRESHOLD,
        }
    }
}

impl Segmenter for ThresholdSegmenter {
    fn segment(&self, _index: usize, image: &ImageGrid) -> BinaryMask {
        let raw = BinaryMask::from_fn(image.height(), image.width(), |r, c| {
            image.get(r, c) > self.threshold
        })
        .expect("image dims are valid");
        largest_component(&raw)
    }
}

/// Returns the reference masks regardless of the image.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSegmenter {
    pub masks: Vec<BinaryMask>,
}

impl Segmenter for OracleSegmenter {
    fn segment(&self, index: usize, _image: &ImageGrid) -> BinaryMask {
        self.masks[index].clone()
    }
}

/// Largest 4-connected component; ties go to the first in raster order.
pub fn largest_component(mask: &BinaryMask) -> BinaryMask {
    let (h, w) = mask.dims();
    let mut label = vec![0usize; h * w];
    let mut best = (0usize, 0usize);
    let mut next = 0usize;
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if !mask.data()[start] || label[start] != 0 {
            continue;
        }
        next += 1;
        label[start] = next;
        queue.push_back(start);
        let mut size = 0;
        while let Some(p) = queue.pop_front() {
            size += 1;
            let (r, c) = (p / w, p % w);
            let mut visit = |q: usize| {
                if mask.data()[q] && label[q] == 0 {
                    label[q] = next;
                    queue.push_back(q);
                }
            };
            if r > 0 {
                visit(p - w);
            }
            if r + 1 < h {
                visit(p + w);
            }
            if c > 0 {
                visit(p - 1);
            }
            if c + 1 < w {
                visit(p + 1);
            }
        }
        if size > best.1 {
            best = (next, size);
        }
    }
    BinaryMask::from_fn(h, w, |r, c| best.0 != 0 && label[r * w + c] == best.0)
        .expect("dims come from a valid mask")
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationConfig {
    pub corruption: CorruptionConfig,
    /// Latent damage strengths in units of the per-channel latent std.
    pub damage_levels: Vec<f64>,
    pub damage_seed: u64,
}

pub const DEFAULT_DAMAGE_LEVELS: [f64; 6] = [0.0, 0.5, 1.0, 2.0, 4.0, 8.0];

impl Default for CorrelationConfig {
    fn default() -> Self {
        Self {
            corruption: CorruptionConfig::default(),
            damage_levels: DEFAULT_DAMAGE_LEVELS.to_vec(),
            damage_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationRow {
    pub id: String,
    pub level: f64,
    pub delta: f64,
    pub dice: f64,
}

/// Correlation over a subset of the pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeSummary {
    pub n: usize,
    /// `None` when the subset is too small or has a constant series.
    pub pearson_r: Option<f64>,
}

impl RegimeSummary {
    fn of(pairs: &[(f64, f64)]) -> Self {
        let (d, s): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        Self {
            n: pairs.len(),
            pearson_r: pearson(&d, &s).ok(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport {
    pub rows: Vec<CorrelationRow>,
    /// `(δ, dice)` per row.
    pub pairs: Vec<(f64, f64)>,
    pub pearson_r: Option<f64>,
    pub abs_r: Option<f64>,
    pub n: usize,
    /// `"ok"` or the reason no correlation could be computed.
    pub status: String,
    /// Pairs with `dice >= 0.5`.
    pub working: RegimeSummary,
    /// Pairs with `dice < 0.5`.
    pub degraded: RegimeSummary,
    /// Set when some segmentations fell below [`DEGRADED_DICE`]; their
    /// correlation says nothing about image quality.
    pub degraded_regime: bool,
}

impl CorrelationReport {
    pub fn from_rows(rows: Vec<CorrelationRow>) -> Self {
        let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.delta, r.dice)).collect();
        let (d, s): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        let (pearson_r, status) = match pearson(&d, &s) {
            Ok(r) => (Some(r), "ok".to_string()),
            Err(e) => (None, e.to_string()),
        };
        let (working, degraded): (Vec<_>, Vec<_>) =
            pairs.iter().partition(|(_, dice)| *dice >= DEGRADED_DICE);
        let degraded = RegimeSummary::of(&degraded);
        Self {
            n: pairs.len(),
            abs_r: pearson_r.map(f64::abs),
            pearson_r,
            status,
            working: RegimeSummary::of(&working),
            degraded_regime: degraded.n > 0,
            degraded,
            rows,
            pairs,
        }
    }

    /// Rows `id,level,delta,dice` followed by
    /// `summary,n,pearson_r,abs_r,status,degraded_regime,n_degraded`.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
        w.write_record(["id", "level", "delta", "dice"]).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.id.clone(),
                format_sig(r.level),
                format_sig(r.delta),
                format_sig(r.dice),
            ])
            .map_err(csv_err)?;
        }
        let opt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), format_sig);
        w.write_record([
            "summary".to_string(),
            self.n.to_string(),
            opt(self.pearson_r),
            opt(self.abs_r),
            self.status.clone(),
            self.degraded_regime.to_string(),
            self.degraded.n.to_string(),
        ])
        .map_err(csv_err)?;
        w.flush().map_err(|e| Error::Format(e.to_string()))
    }
}

/// Samples need reference masks. Row order is sample-major, level-minor.
pub fn run_correlation_study(
    dataset: &[Sample],
    model: &CodecModel,
    segmenter: &dyn Segmenter,
    cfg: &CorrelationConfig,
) -> Result<CorrelationReport> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("correlation study needs samples".into()));
    }
    if cfg.damage_levels.is_empty() {
        return Err(Error::InvalidArgument("at least one damage level is required".into()));
    }
    cfg.corruption.validate()?;
    if let Some(s) = dataset.iter().find(|s| s.mask.is_none()) {
        return Err(Error::InvalidArgument(format!(
            "sample {} has no reference mask",
            s.id
        )));
    }
    let levels = cfg.damage_levels.len();
    let run = |(i, sample): (usize, &Sample)| -> Result<Vec<CorrelationRow>> {
        let reference = sample.mask.as_ref().expect("checked above");
        let h = model.encode(&sample.image)?;
        let damaged = grade_damage(&h, &cfg.damage_levels, derive_seed(cfg.damage_seed, i as u64))?;
        damaged
            .iter()
            .zip(&cfg.damage_levels)
            .enumerate()
            .map(|(l, (z, &level))| {
                let corruption = CorruptionConfig {
                    seed: derive_seed(cfg.corruption.seed, (i * levels + l) as u64),
                    ..cfg.corruption.clone()
                };
                let scores = score_latent(model, z, &corruption)?;
                let predicted = segmenter.segment(i, &scores.clean);
                Ok(CorrelationRow {
                    id: sample.id.clone(),
                    level,
                    delta: scores.delta(),
                    dice: dice(&predicted, reference)?,
                })
            })
            .collect()
    };

    #[cfg(feature = "parallel")]
    let per_sample: Vec<Vec<CorrelationRow>> = {
        use rayon::prelude::*;
        dataset.par_iter().enumerate().map(run).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let per_sample: Vec<Vec<CorrelationRow>> =
        dataset.iter().enumerate().map(run).collect::<Result<_>>()?;

    Ok(CorrelationReport::from_rows(per_sample.into_iter().flatten().collect()))
}
