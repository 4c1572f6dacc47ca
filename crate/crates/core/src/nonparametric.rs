//! Empirical CDF and quantiles of a single sample, and Gaussian kernel
//! density estimation with Silverman's rule-of-thumb bandwidth.

use crate::error::{Error, Result};
use crate::normal;

pub(crate) fn check_level(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidLevel(p))
    }
}

/// Smallest `i` in `1..=n` with `i/n ≥ p`, i.e. `⌈np⌉` without trusting the
/// rounding of `n·p`.
pub(crate) fn type1_rank(n: usize, p: f64) -> usize {
    let nf = n as f64;
    let mut i = ((nf * p).ceil() as usize).clamp(1, n);
    while i > 1 && (i - 1) as f64 / nf >= p {
        i -= 1;
    }
    while i < n && (i as f64) / nf < p {
        i += 1;
    }
    i
}

/// Type-1 (inverse-CDF) quantile of an ascending slice.
pub(crate) fn sorted_quantile(sorted: &[f64], p: f64) -> f64 {
    sorted[type1_rank(sorted.len(), p) - 1]
}

pub(crate) fn sorted_copy(sample: &[f64]) -> Vec<f64> {
    let mut v = sample.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Empirical distribution function of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Ecdf {
    sorted: Vec<f64>,
}

impl Ecdf {
    pub fn new(sample: &[f64]) -> Result<Self> {
        if sample.is_empty() {
            return Err(Error::DegenerateSample("empty sample".into()));
        }
        if sample.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("observations must be finite".into()));
        }
        Ok(Self {
            sorted: sorted_copy(sample),
        })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    /// F(x) = #{xᵢ ≤ x}/n, right-continuous.
    pub fn eval(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&v| v <= x) as f64 / self.len() as f64
    }
}

/// ξ̄_p = inf{x : F(x) ≥ p}, the order statistic x₍⌈np⌉₎.
pub fn empirical_quantile(ecdf: &Ecdf, p: f64) -> Result<f64> {
    check_level(p)?;
    Ok(sorted_quantile(&ecdf.sorted, p))
}

/// Asymptotic variance p(1−p)/g² of √n (ξ̄_p − ξ_p).
pub fn empirical_quantile_avar(p: f64, density_at: f64) -> Result<f64> {
    check_level(p)?;
    if !(density_at > 0.0) {
        return Err(Error::NonpositiveDensity(density_at));
    }
    Ok(p * (1.0 - p) / (density_at * density_at))
}

/// Silverman's rule of thumb `0.9·min(sd, IQR/1.34)·n^(−1/5)`.
///
/// `sd` uses divisor n−1 and the IQR uses type-1 quantiles. When the IQR is
/// zero but the sample is not constant, `sd` alone is used.
pub fn silverman_bandwidth(sample: &[f64]) -> Result<f64> {
    let n = sample.len();
    if n < 2 {
        return Err(Error::DegenerateSample("bandwidth needs at least two points".into()));
    }
    let nf = n as f64;
    let mean = sample.iter().sum::<f64>() / nf;
    let sd = (sample.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
    if !(sd > 0.0) {
        return Err(Error::DegenerateSample("sample has zero spread".into()));
    }
    let sorted = sorted_copy(sample);
    let iqr = sorted_quantile(&sorted, 0.75) - sorted_quantile(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    Ok(0.9 * spread * nf.powf(-0.2))
}

/// Gaussian kernel density estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct KdeModel {
    sample: Vec<f64>,
    bandwidth: f64,
}

impl KdeModel {
    pub fn new(sample: &[f64], bandwidth: f64) -> Result<Self> {
        if sample.is_empty() {
            return Err(Error::DegenerateSample("empty sample".into()));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::InvalidArgument(format!("bandwidth must be positive, got {bandwidth}")));
        }
        Ok(Self {
            sample: sample.to_vec(),
            bandwidth,
        })
    }

    pub fn silverman(sample: &[f64]) -> Result<Self> {
        Self::new(sample, silverman_bandwidth(sample)?)
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn sample(&self) -> &[f64] {
        &self.sample
    }

    /// Evenly spaced `(x, density)` pairs over `[min − pad·h, max + pad·h]`.
    pub fn grid(&self, points: usize, pad: f64) -> Vec<(f64, f64)> {
        let (lo, hi) = self
            .sample
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        let lo = lo - pad * self.bandwidth;
        let hi = hi + pad * self.bandwidth;
        match points {
            0 => Vec::new(),
            1 => vec![(lo, kde_density(self, lo))],
            _ => {
                let step = (hi - lo) / (points - 1) as f64;
                (0..points)
                    .map(|i| {
                        let x = lo + step * i as f64;
                        (x, kde_density(self, x))
                    })
                    .collect()
            }
        }
    }
}

/// (1/(n·h)) Σ φ((x − xᵢ)/h)
pub fn kde_density(model: &KdeModel, x: f64) -> f64 {
    let h = model.bandwidth;
    let sum: f64 = model.sample.iter().map(|&xi| normal::pdf((x - xi) / h)).sum();
    sum / (model.sample.len() as f64 * h)
}
