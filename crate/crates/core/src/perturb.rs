//! Black-patch sanity study.
//!
//! For every sample the pipeline is scored twice: on the original input and on
//! a copy with a random square patch set to zero. A trustworthy uncertainty
//! signal should rise (higher `γ`, lower `δ`) on the perturbed inputs and
//! concentrate inside the patch.

use std::io::Write;

use rand::Rng;

use crate::corruption::{corrupt_latents, foreground_mask, CorruptionConfig};
use crate::error::{Error, Result};
use crate::grid::{BinaryMask, HeatMap, ImageGrid, LatentCode};
use crate::model::CodecModel;
use crate::rng::{derive_seed, substream, Domain};
use crate::scores::{confidence_score, variance_score, ConfidenceResult, VarianceResult};
use crate::stats::{pooled_histogram, PooledHistogram, Summary};
use crate::synthdata::Sample;
use crate::tensor_io::format_sig;

/// Everything one scoring pass produces.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleScores {
    /// Decode of the uncorrupted latent.
    pub clean: ImageGrid,
    /// Foreground mask on the latent grid.
    pub mask: BinaryMask,
    pub variance: VarianceResult,
    pub confidence: ConfidenceResult,
}

impl SampleScores {
    pub fn gamma(&self) -> f64 {
        self.variance.gamma
    }

    pub fn delta(&self) -> f64 {
        self.confidence.delta
    }

    pub fn heatmap(&self) -> &HeatMap {
        &self.variance.map
    }
}

/// Encodes `x` and scores the latent.
pub fn score_sample(model: &CodecModel, x: &ImageGrid, cfg: &CorruptionConfig) -> Result<SampleScores> {
    let h = model.encode(x)?;
    score_latent(model, &h, cfg)
}

/// Decode, mask, corrupt `k` times, decode the copies, score.
pub fn score_latent(model: &CodecModel, h: &LatentCode, cfg: &CorruptionConfig) -> Result<SampleScores> {
    cfg.validate()?;
    let clean = model.decode(h)?;
    let mask = foreground_mask(&clean, cfg.foreground_threshold, h.height(), h.width())?;
    let copies = corrupt_latents(h, &mask, cfg)?;
    let variants = model.decode_batch(&copies)?;
    let variance = variance_score(&variants)?;
    let confidence = confidence_score(&clean, &variants)?;
    Ok(SampleScores {
        clean,
        mask,
        variance,
        confidence,
    })
}

/// Patch side preserving a 50 px patch to 256 px image ratio.
pub fn default_patch_size(height: usize, width: usize) -> usize {
    let side = height.min(width) as f64;
    ((50.0 / 256.0 * side).round() as usize).max(1)
}

/// Top-left corner `(row, col)` of a patch.
pub type PatchOrigin = (usize, usize);

/// Zeroes a `size x size` square whose origin is uniform over all valid
/// positions, drawn from the `(seed, Patch)` stream.
pub fn black_patch(x: &ImageGrid, size: usize, seed: u64) -> Result<(ImageGrid, PatchOrigin)> {
    let (h, w) = x.dims();
    if size == 0 || size > h.min(w) {
        return Err(Error::InvalidArgument(format!(
            "patch size {size} does not fit a {h}x{w} image"
        )));
    }
    let mut rng = substream(seed, Domain::Patch, 0);
    let row = rng.random_range(0..=h - size);
    let col = rng.random_range(0..=w - size);
    let mut out = x.clone();
    for r in row..row + size {
        for c in col..col + size {
            out.set(r, c, 0.0);
        }
    }
    Ok((out, (row, col)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    /// `None` picks [`default_patch_size`].
    pub patch_size: Option<usize>,
    pub corruption: CorruptionConfig,
    /// Seeds the patch placement.
    pub seed: u64,
    pub histogram_bins: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            patch_size: None,
            corruption: CorruptionConfig::default(),
            seed: 0,
            histogram_bins: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub id: String,
    pub gamma_orig: f64,
    pub delta_orig: f64,
    pub gamma_pert: f64,
    pub delta_pert: f64,
    pub patch_origin: PatchOrigin,
    pub patch_size: usize,
    /// Fraction of patch pixels that were non-zero in the original input.
    pub patch_fg_overlap: f64,
    /// Mean perturbed-input variance inside the patch.
    pub patch_var_inside: f64,
    /// Mean perturbed-input variance over the rest of the image.
    pub patch_var_outside: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyAggregates {
    pub gamma_orig: Summary,
    pub gamma_pert: Summary,
    pub delta_orig: Summary,
    pub delta_pert: Summary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyReport {
    pub rows: Vec<StudyRow>,
    pub aggregates: StudyAggregates,
    /// `δ` histograms: `counts[0]` original, `counts[1]` perturbed.
    pub delta_histogram: PooledHistogram,
    /// Variance maps per sample: `(original, perturbed)`.
    pub heatmaps: Vec<(HeatMap, HeatMap)>,
}

pub fn run_perturbation_study(
    dataset: &[Sample],
    model: &CodecModel,
    study: &StudyConfig,
) -> Result<StudyReport> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("perturbation study needs samples".into()));
    }
    study.corruption.validate()?;
    let run = |(i, sample): (usize, &Sample)| study_sample(i, sample, model, study);

    #[cfg(feature = "parallel")]
    let results: Vec<(StudyRow, (HeatMap, HeatMap))> = {
        use rayon::prelude::*;
        dataset.par_iter().enumerate().map(run).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<(StudyRow, (HeatMap, HeatMap))> =
        dataset.iter().enumerate().map(run).collect::<Result<_>>()?;

    let (rows, heatmaps): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let aggregates = aggregate(&rows)?;
    let d_orig: Vec<f64> = rows.iter().map(|r| r.delta_orig).collect();
    let d_pert: Vec<f64> = rows.iter().map(|r| r.delta_pert).collect();
    let delta_histogram = pooled_histogram(&[&d_orig, &d_pert], study.histogram_bins)?;
    Ok(StudyReport {
        rows,
        aggregates,
        delta_histogram,
        heatmaps,
    })
}

fn study_sample(
    index: usize,
    sample: &Sample,
    model: &CodecModel,
    study: &StudyConfig,
) -> Result<(StudyRow, (HeatMap, HeatMap))> {
    let x = &sample.image;
    let size = study
        .patch_size
        .unwrap_or_else(|| default_patch_size(x.height(), x.width()));
    // Both conditions share the corruption seed: the comparison is paired.
    let corruption = CorruptionConfig {
        seed: derive_seed(study.corruption.seed, index as u64),
        ..study.corruption.clone()
    };
    let orig = score_sample(model, x, &corruption)?;
    let (perturbed, origin) = black_patch(x, size, derive_seed(study.seed, index as u64))?;
    let pert = score_sample(model, &perturbed, &corruption)?;

    let (row0, col0) = origin;
    let in_patch = |r: usize, c: usize| (row0..row0 + size).contains(&r) && (col0..col0 + size).contains(&c);
    let mut fg = 0usize;
    let (mut inside, mut outside) = (0.0, 0.0);
    let map = pert.heatmap();
    for r in 0..x.height() {
        for c in 0..x.width() {
            if in_patch(r, c) {
                inside += map.get(r, c);
                fg += usize::from(x.get(r, c) > 0.0);
            } else {
                outside += map.get(r, c);
            }
        }
    }
    let area = size * size;
    let rest = x.len() - area;
    let row = StudyRow {
        id: sample.id.clone(),
        gamma_orig: orig.gamma(),
        delta_orig: orig.delta(),
        gamma_pert: pert.gamma(),
        delta_pert: pert.delta(),
        patch_origin: origin,
        patch_size: size,
        patch_fg_overlap: fg as f64 / area as f64,
        patch_var_inside: inside / area as f64,
        patch_var_outside: if rest > 0 { outside / rest as f64 } else { 0.0 },
    };
    Ok((row, (orig.variance.map, pert.variance.map)))
}

/// Recomputes the condition summaries from report rows.
pub fn aggregate(rows: &[StudyRow]) -> Result<StudyAggregates> {
    let col = |f: fn(&StudyRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    Ok(StudyAggregates {
        gamma_orig: Summary::of(&col(|r| r.gamma_orig))?,
        gamma_pert: Summary::of(&col(|r| r.gamma_pert))?,
        delta_orig: Summary::of(&col(|r| r.delta_orig))?,
        delta_pert: Summary::of(&col(|r| r.delta_pert))?,
    })
}

impl StudyReport {
    pub fn write_rows_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "id",
            "gamma_orig",
            "delta_orig",
            "gamma_pert",
            "delta_pert",
            "patch_row",
            "patch_col",
            "patch_size",
            "patch_fg_overlap",
            "patch_var_inside",
            "patch_var_outside",
        ])
        .map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.id.clone(),
                format_sig(r.gamma_orig),
                format_sig(r.delta_orig),
                format_sig(r.gamma_pert),
                format_sig(r.delta_pert),
                r.patch_origin.0.to_string(),
                r.patch_origin.1.to_string(),
                r.patch_size.to_string(),
                format_sig(r.patch_fg_overlap),
                format_sig(r.patch_var_inside),
                format_sig(r.patch_var_outside),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Format(e.to_string()))
    }

    pub fn write_aggregates_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["condition", "metric", "mean", "median", "std"])
            .map_err(csv_err)?;
        let a = &self.aggregates;
        for (cond, metric, s) in [
            ("original", "gamma", &a.gamma_orig),
            ("perturbed", "gamma", &a.gamma_pert),
            ("original", "delta", &a.delta_orig),
            ("perturbed", "delta", &a.delta_pert),
        ] {
            w.write_record([
                cond.to_string(),
                metric.to_string(),
                format_sig(s.mean),
                format_sig(s.median),
                format_sig(s.std),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Format(e.to_string()))
    }

    pub fn write_histogram_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bin", "lo", "hi", "count_orig", "count_pert"])
            .map_err(csv_err)?;
        let h = &self.delta_histogram;
        for (b, (lo, hi)) in h.edges().into_iter().enumerate() {
            w.write_record([
                b.to_string(),
                format_sig(lo),
                format_sig(hi),
                h.counts[0][b].to_string(),
                h.counts[1][b].to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Format(e.to_string()))
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}
