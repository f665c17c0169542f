//! Small descriptive statistics used by the study reports.

use crate::error::{Error, Result};

/// Mean, median and population standard deviation of a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("cannot summarize an empty sample".into()));
        }
        Ok(Self {
            mean: mean(values),
            median: median(values),
            std: population_std(values),
        })
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

pub fn population_std(values: &[f64]) -> f64 {
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64).sqrt()
}

/// One-sided paired sign test for `first > second`.
///
/// Ties are dropped. Returns `P(X >= wins)` for `X ~ Binomial(n, 1/2)`, or 1
/// when every pair is tied.
pub fn sign_test_greater(first: &[f64], second: &[f64]) -> Result<f64> {
    if first.len() != second.len() {
        return Err(Error::Shape(format!(
            "paired samples differ in length: {} vs {}",
            first.len(),
            second.len()
        )));
    }
    let mut wins = 0u64;
    let mut n = 0u64;
    for (a, b) in first.iter().zip(second) {
        if a != b {
            n += 1;
            if a > b {
                wins += 1;
            }
        }
    }
    if n == 0 {
        return Ok(1.0);
    }
    Ok(binomial_upper_tail(n, wins))
}

fn binomial_upper_tail(n: u64, k: u64) -> f64 {
    // log C(n, i) accumulated incrementally; fine for any n seen in a study.
    let ln_half_n = -(n as f64) * std::f64::consts::LN_2;
    let mut ln_choose = 0.0f64;
    let mut tail = 0.0;
    for i in 0..=n {
        if i > 0 {
            ln_choose += ((n - i + 1) as f64).ln() - (i as f64).ln();
        }
        if i >= k {
            tail += (ln_choose + ln_half_n).exp();
        }
    }
    tail.min(1.0)
}

/// Equal-width histogram of several samples over their pooled range.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledHistogram {
    pub lo: f64,
    pub hi: f64,
    /// `counts[sample][bin]`
    pub counts: Vec<Vec<usize>>,
}

impl PooledHistogram {
    pub fn bins(&self) -> usize {
        self.counts.first().map_or(0, Vec::len)
    }

    pub fn edges(&self) -> Vec<(f64, f64)> {
        let bins = self.bins();
        let width = (self.hi - self.lo) / bins as f64;
        (0..bins)
            .map(|b| {
                let lo = self.lo + width * b as f64;
                let hi = if b + 1 == bins { self.hi } else { lo + width };
                (lo, hi)
            })
            .collect()
    }
}

/// Top edge inclusive; a degenerate pooled range puts everything in bin 0.
pub fn pooled_histogram(samples: &[&[f64]], bins: usize) -> Result<PooledHistogram> {
    if bins == 0 {
        return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
    }
    let (lo, hi) = samples
        .iter()
        .flat_map(|s| s.iter())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if !lo.is_finite() {
        return Err(Error::EmptyInput("no values to histogram".into()));
    }
    let counts = samples
        .iter()
        .map(|s| {
            let mut counts = vec![0usize; bins];
            for &v in s.iter() {
                counts[bin_index(v, lo, hi, bins)] += 1;
            }
            counts
        })
        .collect();
    Ok(PooledHistogram { lo, hi, counts })
}

pub(crate) fn bin_index(v: f64, lo: f64, hi: f64, bins: usize) -> usize {
    if hi <= lo {
        return 0;
    }
    let t = ((v - lo) / (hi - lo) * bins as f64).floor();
    if t <= 0.0 {
        0
    } else {
        (t as usize).min(bins - 1)
    }
}
