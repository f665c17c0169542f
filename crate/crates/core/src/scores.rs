//! Uncertainty (`γ`) and confidence (`δ`) scores over decoded variants.
//!
//! `γ` is the per-pixel population variance across the `k` corrupted decodes,
//! averaged over the image. `δ` is the mean mutual information between the
//! clean decode and each variant, estimated from a joint histogram with
//! `⌊√(n/5)⌋` equal-width bins per axis (`n` = pixels per image).
//!
//! Both are computed so that they are exactly invariant to argument order:
//! per-pixel samples and per-cell MI terms are summed in sorted order.

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, HeatMap, ImageGrid};
use crate::stats::bin_index;

/// Bin count per axis for `n_pixels` samples: `⌊√(n/5)⌋`, at least 1.
pub fn num_bins(n_pixels: usize) -> usize {
    ((n_pixels / 5) as u64).isqrt().max(1) as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceResult {
    pub map: HeatMap,
    pub gamma: f64,
}

impl VarianceResult {
    /// Mean variance over foreground pixels only; `None` for an empty mask.
    pub fn foreground_gamma(&self, mask: &BinaryMask) -> Result<Option<f64>> {
        if mask.dims() != (self.map.height, self.map.width) {
            return Err(Error::Shape(format!(
                "mask {:?} does not match heat map {:?}",
                mask.dims(),
                (self.map.height, self.map.width)
            )));
        }
        let mut fg: Vec<f64> = self
            .map
            .values
            .iter()
            .zip(mask.data())
            .filter_map(|(&v, &m)| m.then_some(v))
            .collect();
        if fg.is_empty() {
            return Ok(None);
        }
        let n = fg.len() as f64;
        Ok(Some(sorted_sum(&mut fg) / n))
    }
}

fn sorted_sum(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    values.iter().sum()
}

pub fn variance_score(images: &[ImageGrid]) -> Result<VarianceResult> {
    if images.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "variance needs at least 2 images, got {}",
            images.len()
        )));
    }
    let first = &images[0];
    for img in &images[1..] {
        first.check_same_dims(img)?;
    }
    let k = images.len() as f64;
    let mut column = vec![0.0; images.len()];
    let mut map = Vec::with_capacity(first.len());
    for p in 0..first.len() {
        for (slot, img) in column.iter_mut().zip(images) {
            *slot = img.data()[p];
        }
        let mean = sorted_sum(&mut column) / k;
        // `column` is sorted now, so the deviations are summed in a fixed order.
        let var = if column[0] == column[column.len() - 1] {
            0.0
        } else {
            column.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / k
        };
        map.push(var);
    }
    let gamma = sorted_sum(&mut map.clone()) / map.len() as f64;
    Ok(VarianceResult {
        map: HeatMap::new(first.height(), first.width(), map)?,
        gamma,
    })
}

/// Value range the joint histogram is laid over.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum HistogramRange {
    /// `[min, max]` over both images together.
    #[default]
    Shared,
    /// A fixed range; values outside it fall into the edge bins.
    Fixed { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LogBase {
    #[default]
    Nats,
    Bits,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MiConfig {
    pub range: HistogramRange,
    pub base: LogBase,
    /// Overrides the `⌊√(n/5)⌋` rule when set.
    pub bins: Option<usize>,
}

/// `bins x bins` co-occurrence counts; rows index `a`, columns index `b`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointHistogram {
    pub bins: usize,
    pub counts: Vec<u64>,
}

impl JointHistogram {
    pub fn get(&self, row: usize, col: usize) -> u64 {
        self.counts[row * self.bins + col]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.chunks(self.bins).map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.bins)
            .map(|c| (0..self.bins).map(|r| self.get(r, c)).sum())
            .collect()
    }
}

pub fn joint_histogram(a: &ImageGrid, b: &ImageGrid, bins: usize) -> Result<JointHistogram> {
    joint_histogram_in(a, b, bins, HistogramRange::Shared)
}

/// Equal-width bins, top edge inclusive. A degenerate range (`max == min`)
/// puts all mass into cell `(0, 0)`.
pub fn joint_histogram_in(
    a: &ImageGrid,
    b: &ImageGrid,
    bins: usize,
    range: HistogramRange,
) -> Result<JointHistogram> {
    a.check_same_dims(b)?;
    if bins == 0 {
        return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
    }
    let (lo, hi) = match range {
        HistogramRange::Shared => a
            .data()
            .iter()
            .chain(b.data())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            }),
        HistogramRange::Fixed { lo, hi } => {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::InvalidArgument(format!(
                    "bad fixed histogram range [{lo}, {hi}]"
                )));
            }
            (lo, hi)
        }
    };
    let mut counts = vec![0u64; bins * bins];
    for (&va, &vb) in a.data().iter().zip(b.data()) {
        counts[bin_index(va, lo, hi, bins) * bins + bin_index(vb, lo, hi, bins)] += 1;
    }
    Ok(JointHistogram { bins, counts })
}

/// Plug-in MI of a joint count table; exact in argument order because the
/// per-cell terms are summed sorted.
pub fn mutual_information_from_counts(hist: &JointHistogram, base: LogBase) -> f64 {
    let n = hist.total();
    if n == 0 {
        return 0.0;
    }
    let rows = hist.row_sums();
    let cols = hist.col_sums();
    let nf = n as f64;
    let mut terms = Vec::new();
    for r in 0..hist.bins {
        for c in 0..hist.bins {
            let count = hist.get(r, c);
            if count == 0 {
                continue;
            }
            // p(x,y) / (p(x) p(y)) = count * n / (row * col)
            let ratio = (count as f64 * nf) / (rows[r] as f64 * cols[c] as f64);
            terms.push(count as f64 / nf * ratio.ln());
        }
    }
    let mi = sorted_sum(&mut terms).max(0.0);
    match base {
        LogBase::Nats => mi,
        LogBase::Bits => mi / std::f64::consts::LN_2,
    }
}

/// MI in nats with the default bin rule and shared range.
pub fn mutual_information(a: &ImageGrid, b: &ImageGrid) -> Result<f64> {
    mutual_information_with(a, b, &MiConfig::default())
}

pub fn mutual_information_with(a: &ImageGrid, b: &ImageGrid, cfg: &MiConfig) -> Result<f64> {
    let bins = cfg.bins.unwrap_or_else(|| num_bins(a.len()));
    let hist = joint_histogram_in(a, b, bins, cfg.range)?;
    Ok(mutual_information_from_counts(&hist, cfg.base))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceResult {
    /// MI between the clean decode and each variant.
    pub per_copy_mi: Vec<f64>,
    pub delta: f64,
}

pub fn confidence_score(clean: &ImageGrid, variants: &[ImageGrid]) -> Result<ConfidenceResult> {
    confidence_score_with(clean, variants, &MiConfig::default())
}

pub fn confidence_score_with(
    clean: &ImageGrid,
    variants: &[ImageGrid],
    cfg: &MiConfig,
) -> Result<ConfidenceResult> {
    if variants.is_empty() {
        return Err(Error::EmptyInput("no variants to compare against".into()));
    }
    let per_copy_mi = variants
        .iter()
        .map(|v| mutual_information_with(clean, v, cfg))
        .collect::<Result<Vec<_>>>()?;
    let delta = per_copy_mi.iter().sum::<f64>() / per_copy_mi.len() as f64;
    Ok(ConfidenceResult { per_copy_mi, delta })
}

/// Entropy (nats) of `a`'s marginal histogram with `bins` bins over its own range.
pub fn marginal_entropy(a: &ImageGrid, bins: usize) -> Result<f64> {
    let hist = joint_histogram(a, a, bins)?;
    let n = hist.total() as f64;
    let mut terms: Vec<f64> = hist
        .row_sums()
        .into_iter()
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .collect();
    Ok(sorted_sum(&mut terms))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(values: &[f64]) -> ImageGrid {
        ImageGrid::new(1, values.len(), values.to_vec()).unwrap()
    }

    #[test]
    fn bin_rule() {
        assert_eq!(num_bins(5), 1);
        assert_eq!(num_bins(4), 1);
        assert_eq!(num_bins(65536), 114);
        assert_eq!(num_bins(4096), 28);
        assert_eq!(num_bins(20), 2);
    }

    #[test]
    fn variance_examples() {
        let same = vec![img(&[0.2, 0.4]); 3];
        let r = variance_score(&same).unwrap();
        assert_eq!(r.gamma, 0.0);
        assert!(r.map.values.iter().all(|&v| v == 0.0));

        let r = variance_score(&[img(&[0.0]), img(&[1.0])]).unwrap();
        assert_eq!(r.map.values, vec![0.25]);
        assert_eq!(r.gamma, 0.25);

        let r = variance_score(&[img(&[0.0]), img(&[0.5]), img(&[1.0])]).unwrap();
        assert!((r.gamma - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn variance_errors() {
        assert!(matches!(variance_score(&[img(&[0.0])]), Err(Error::InvalidArgument(_))));
        assert!(matches!(
            variance_score(&[img(&[0.0]), img(&[0.0, 1.0])]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn foreground_gamma_restricts() {
        let r = variance_score(&[img(&[0.0, 0.0]), img(&[1.0, 0.0])]).unwrap();
        let mask = BinaryMask::new(1, 2, vec![true, false]).unwrap();
        assert_eq!(r.foreground_gamma(&mask).unwrap(), Some(0.25));
        let none = BinaryMask::filled(1, 2, false).unwrap();
        assert_eq!(r.foreground_gamma(&none).unwrap(), None);
    }

    #[test]
    fn histogram_examples() {
        let c = img(&[0.3; 6]);
        let h = joint_histogram(&c, &c, 3).unwrap();
        assert_eq!(h.get(0, 0), 6);
        assert_eq!(h.total(), 6);

        let a = img(&[0.0, 1.0]);
        let b = img(&[1.0, 0.0]);
        assert_eq!(joint_histogram(&a, &a, 2).unwrap().counts, vec![1, 0, 0, 1]);
        assert_eq!(joint_histogram(&a, &b, 2).unwrap().counts, vec![0, 1, 1, 0]);
    }

    #[test]
    fn fixed_range_clamps_into_edge_bins() {
        let a = img(&[-1.0, 0.5, 2.0]);
        let h = joint_histogram_in(&a, &a, 2, HistogramRange::Fixed { lo: 0.0, hi: 1.0 }).unwrap();
        assert_eq!(h.counts, vec![1, 0, 0, 2]);
    }

    #[test]
    fn mi_examples() {
        let c = img(&[0.7; 25]);
        assert_eq!(mutual_information(&c, &c).unwrap(), 0.0);

        let half: Vec<f64> = (0..20).map(|i| if i < 10 { 0.0 } else { 1.0 }).collect();
        let h = img(&half);
        assert!((mutual_information(&h, &h).unwrap() - 2f64.ln()).abs() < 1e-15);

        let a = img(&[0.0, 0.0, 1.0, 1.0]);
        let b = img(&[0.0, 1.0, 0.0, 1.0]);
        assert_eq!(mutual_information(&a, &b).unwrap(), 0.0);
        let cfg = MiConfig {
            bins: Some(2),
            ..Default::default()
        };
        assert!(mutual_information_with(&a, &b, &cfg).unwrap().abs() < 1e-15);
    }

    #[test]
    fn mi_in_bits() {
        let half: Vec<f64> = (0..20).map(|i| if i < 10 { 0.0 } else { 1.0 }).collect();
        let h = img(&half);
        let cfg = MiConfig {
            base: LogBase::Bits,
            ..Default::default()
        };
        assert!((mutual_information_with(&h, &h, &cfg).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn confidence_examples() {
        // 4x8 image: 16 zeros then 16 ones; num_bins(32) = 2.
        let clean: Vec<f64> = (0..32).map(|i| if i < 16 { 0.0 } else { 1.0 }).collect();
        let indep: Vec<f64> = (0..32).map(|i| (i % 2) as f64).collect();
        let clean = ImageGrid::new(4, 8, clean).unwrap();
        let indep = ImageGrid::new(4, 8, indep).unwrap();

        let r = confidence_score(&clean, &[clean.clone(), indep]).unwrap();
        assert!((r.per_copy_mi[0] - 2f64.ln()).abs() < 1e-15);
        assert!(r.per_copy_mi[1].abs() < 1e-15);
        assert!((r.delta - 2f64.ln() / 2.0).abs() < 1e-15);

        let single = confidence_score(&clean, std::slice::from_ref(&clean)).unwrap();
        assert_eq!(single.delta, single.per_copy_mi[0]);
        assert!((single.delta - marginal_entropy(&clean, 2).unwrap()).abs() < 1e-15);

        assert!(matches!(confidence_score(&clean, &[]), Err(Error::EmptyInput(_))));
    }
}
