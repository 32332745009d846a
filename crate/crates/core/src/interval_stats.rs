//! Entropy intervals and the per-interval accuracy distributions.
//!
//! Users are binned by real entropy into half-open intervals of width 0.05
//! labeled by their upper bound. Each populated interval gets a Gaussian KDE
//! of its accuracies, a Gaussian fitted to that density, and a one-sample
//! Kolmogorov-Smirnov check of the fitted Gaussian against the raw values.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::curve_fit::lm_gaussian_pdf;
use crate::entropy::EntropyProfile;
use crate::error::{Error, Result};
use crate::markov::PredictionResult;

pub const DEFAULT_WIDTH: f64 = 0.05;
pub const DEFAULT_INTERVALS: usize = 84;
pub const DEFAULT_GRID_SIZE: usize = 256;
/// Bins with at least this many users fit the KDE; smaller ones use moments.
pub const KDE_FIT_MIN_USERS: usize = 30;
pub const SIGMA_FLOOR: f64 = 1e-4;
pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyBinning {
    pub width: f64,
    pub n_intervals: usize,
}

impl Default for EntropyBinning {
    fn default() -> Self {
        EntropyBinning {
            width: DEFAULT_WIDTH,
            n_intervals: DEFAULT_INTERVALS,
        }
    }
}

impl EntropyBinning {
    pub fn new(width: f64, n_intervals: usize) -> Result<Self> {
        if !(width > 0.0 && width.is_finite()) || n_intervals == 0 {
            return Err(Error::Config(format!(
                "binning needs a positive width and count, got {width} x {n_intervals}"
            )));
        }
        Ok(EntropyBinning { width, n_intervals })
    }

    /// Upper bound of the zero-based interval `index`.
    pub fn label(&self, index: usize) -> f64 {
        self.width * (index + 1) as f64
    }

    pub fn labels(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_intervals).map(|i| self.label(i))
    }

    pub fn upper_limit(&self) -> f64 {
        self.width * self.n_intervals as f64
    }

    /// Zero-based interval containing `s`, or `None` outside `[0, limit)`.
    ///
    /// Values within 1e-9 (relative) of a boundary count as on it, so a
    /// decimal input like 0.15 lands in `[0.15, 0.20)`.
    pub fn index_of(&self, s: f64) -> Option<usize> {
        if !s.is_finite() || s < 0.0 {
            return None;
        }
        let q = s / self.width;
        let r = q.round();
        let k = if (q - r).abs() <= 1e-9 * r.max(1.0) { r } else { q.floor() };
        let k = k as usize;
        (k < self.n_intervals).then_some(k)
    }

    /// Zero-based index of a label on the discrete domain `{width * n}`.
    pub fn index_of_label(&self, s: f64) -> Option<usize> {
        if !s.is_finite() {
            return None;
        }
        let q = s / self.width;
        let r = q.round();
        if (q - r).abs() > 1e-9 * r.abs().max(1.0) || r < 1.0 {
            return None;
        }
        let n = r as usize;
        (n <= self.n_intervals).then(|| n - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalBin {
    pub index: usize,
    pub s: f64,
    pub accuracies: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Binned {
    /// Populated intervals in ascending order.
    pub bins: Vec<IntervalBin>,
    /// Users whose entropy fell outside the binning range.
    pub spill: usize,
}

/// Bins `(entropy, accuracy)` pairs.
pub fn bin_values(pairs: &[(f64, f64)], binning: &EntropyBinning) -> Binned {
    let mut slots: Vec<Vec<f64>> = vec![Vec::new(); binning.n_intervals];
    let mut spill = 0;
    for &(s, acc) in pairs {
        match binning.index_of(s) {
            Some(k) => slots[k].push(acc),
            None => spill += 1,
        }
    }
    if spill > 0 {
        log::warn!(
            "{spill} users outside entropy range [0, {}) excluded",
            binning.upper_limit()
        );
    }
    let bins = slots
        .into_iter()
        .enumerate()
        .filter(|(_, v)| !v.is_empty())
        .map(|(index, accuracies)| IntervalBin {
            index,
            s: binning.label(index),
            accuracies,
        })
        .collect();
    Binned { bins, spill }
}

pub fn bin_users(rows: &[(EntropyProfile, PredictionResult)], binning: &EntropyBinning) -> Binned {
    let pairs: Vec<(f64, f64)> = rows.iter().map(|(e, p)| (e.s_real, p.accuracy)).collect();
    bin_values(&pairs, binning)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (denominator `m - 1`); zero for one value.
pub fn sample_sd(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let mu = mean(values);
    let ss: f64 = values.iter().map(|v| (v - mu).powi(2)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Silverman's rule `0.9 * min(sd, IQR / 1.34) * m^(-1/5)`. A zero IQR falls
/// back to the standard deviation alone.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let sd = sample_sd(values);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * (values.len() as f64).powf(-0.2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeGrid {
    pub bandwidth: f64,
    pub points: Vec<(f64, f64)>,
}

impl KdeGrid {
    pub fn trapezoid_integral(&self) -> f64 {
        trapezoid(&self.points)
    }
}

pub fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1))
        .sum()
}

/// Gaussian-kernel density of accuracies on `grid_size` points over `[0, 1]`.
///
/// The grid is rescaled to unit trapezoid mass on `[0, 1]`: accuracies pile up
/// against 1.0 in low-entropy intervals and their bandwidth can be far below
/// the grid spacing, so the raw kernel sum is not normalized on this grid.
pub fn kde(values: &[f64], grid_size: usize) -> Result<KdeGrid> {
    if values.len() < 2 {
        return Err(Error::Degenerate(format!("KDE needs 2 samples, got {}", values.len())));
    }
    if grid_size < 2 {
        return Err(Error::Config("KDE grid needs at least 2 points".into()));
    }
    let h = silverman_bandwidth(values);
    if !(h > 0.0) {
        return Err(Error::Degenerate("zero-variance interval".into()));
    }
    let norm = 1.0 / (values.len() as f64 * h * (2.0 * PI).sqrt());
    let step = 1.0 / (grid_size - 1) as f64;
    let mut points: Vec<(f64, f64)> = (0..grid_size)
        .map(|j| {
            let x = j as f64 * step;
            let d: f64 = values
                .iter()
                .map(|v| {
                    let z = (x - v) / h;
                    (-0.5 * z * z).exp()
                })
                .sum();
            (x, d * norm)
        })
        .collect();
    let mass = trapezoid(&points);
    if !(mass > 0.0) {
        return Err(Error::Degenerate("kernel mass does not reach the grid".into()));
    }
    for p in &mut points {
        p.1 /= mass;
    }
    Ok(KdeGrid { bandwidth: h, points })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitMethod {
    KdeLeastSquares,
    Moments,
}

impl FitMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            FitMethod::KdeLeastSquares => "kde-least-squares",
            FitMethod::Moments => "moments",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalGaussian {
    pub mu: f64,
    pub sigma: f64,
    pub method: FitMethod,
}

/// Gaussian parameters for one interval: least squares on the KDE when the
/// bin is large enough and the density exists, sample moments otherwise.
pub fn fit_interval_gaussian(values: &[f64], kde_grid: Option<&KdeGrid>) -> Result<IntervalGaussian> {
    if values.is_empty() {
        return Err(Error::domain("empty entropy interval"));
    }
    let moments = IntervalGaussian {
        mu: mean(values),
        sigma: sample_sd(values).max(SIGMA_FLOOR),
        method: FitMethod::Moments,
    };
    let Some(grid) = kde_grid.filter(|_| values.len() >= KDE_FIT_MIN_USERS) else {
        return Ok(moments);
    };
    match lm_gaussian_pdf(&grid.points, (moments.mu, moments.sigma)) {
        Ok(fit) if fit.mu.is_finite() && (0.0..=1.0).contains(&fit.mu) && fit.sigma > 0.0 && fit.sigma.is_finite() => {
            Ok(IntervalGaussian {
                mu: fit.mu,
                sigma: fit.sigma.max(SIGMA_FLOOR),
                method: FitMethod::KdeLeastSquares,
            })
        }
        _ => Ok(moments),
    }
}

pub fn normal_cdf(x: f64, mu: f64, sigma: f64) -> f64 {
    0.5 * erfc(-(x - mu) / (sigma * std::f64::consts::SQRT_2))
}

/// `P(K > t)` for the Kolmogorov distribution, summing whichever series
/// converges fast at `t` until terms drop below 1e-10.
pub fn kolmogorov_survival(t: f64) -> f64 {
    if !(t > 0.0) {
        return 1.0;
    }
    let p = if t < 1.18 {
        // P(K <= t) = sqrt(2 pi)/t * sum exp(-(2j-1)^2 pi^2 / (8 t^2))
        let c = -PI * PI / (8.0 * t * t);
        let mut sum = 0.0;
        for j in 1.. {
            let k = (2 * j - 1) as f64;
            let term = (c * k * k).exp();
            sum += term;
            if term < 1e-10 {
                break;
            }
        }
        1.0 - (2.0 * PI).sqrt() / t * sum
    } else {
        // P(K > t) = 2 sum (-1)^(j-1) exp(-2 j^2 t^2)
        let mut sum = 0.0;
        for j in 1.. {
            let jf = j as f64;
            let term = (-2.0 * jf * jf * t * t).exp();
            sum += if j % 2 == 1 { term } else { -term };
            if term < 1e-10 {
                break;
            }
        }
        2.0 * sum
    };
    p.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub pass: bool,
}

/// One-sample KS test of `values` against `Normal(mu, sigma)`.
pub fn ks_test(values: &[f64], mu: f64, sigma: f64, alpha: f64) -> Result<KsResult> {
    if values.is_empty() {
        return Err(Error::domain("KS test on an empty sample"));
    }
    if !(sigma > 0.0) {
        return Err(Error::domain(format!("KS test needs sigma > 0, got {sigma}")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len() as f64;
    let statistic = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal_cdf(x, mu, sigma);
            ((i + 1) as f64 / m - f).max(f - i as f64 / m)
        })
        .fold(0.0, f64::max);
    let p_value = kolmogorov_survival(m.sqrt() * statistic);
    Ok(KsResult {
        statistic,
        p_value,
        pass: p_value > alpha,
    })
}

pub fn mse(observed: &[f64], predicted: &[f64]) -> Result<f64> {
    if observed.is_empty() || observed.len() != predicted.len() {
        return Err(Error::domain(format!(
            "MSE over {} observed and {} predicted values",
            observed.len(),
            predicted.len()
        )));
    }
    Ok(observed
        .iter()
        .zip(predicted)
        .map(|(o, p)| (o - p).powi(2))
        .sum::<f64>()
        / observed.len() as f64)
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::domain("Spearman needs two equal-length samples of size >= 2"));
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let (mx, my) = (mean(&rx), mean(&ry));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("constant sample in rank correlation".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalConfig {
    pub binning: EntropyBinning,
    pub grid_size: usize,
    pub alpha: f64,
}

impl Default for IntervalConfig {
    fn default() -> Self {
        IntervalConfig {
            binning: EntropyBinning::default(),
            grid_size: DEFAULT_GRID_SIZE,
            alpha: DEFAULT_ALPHA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalFit {
    pub index: usize,
    pub s: f64,
    pub user_count: usize,
    pub mu: f64,
    pub sigma: f64,
    pub fit_method: FitMethod,
    pub sample_sd: f64,
    /// Absent when the interval is degenerate (one user or zero spread).
    pub kde: Option<KdeGrid>,
    pub ks: KsResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalReport {
    pub intervals: Vec<IntervalFit>,
    pub spill: usize,
}

impl IntervalReport {
    /// Fraction of populated intervals whose KS test fails.
    pub fn ks_fail_fraction(&self) -> f64 {
        if self.intervals.is_empty() {
            return 0.0;
        }
        self.intervals.iter().filter(|f| !f.ks.pass).count() as f64 / self.intervals.len() as f64
    }
}

fn fit_bin(bin: &IntervalBin, config: &IntervalConfig) -> Result<IntervalFit> {
    let grid = match kde(&bin.accuracies, config.grid_size) {
        Ok(g) => Some(g),
        Err(Error::Degenerate(_)) => None,
        Err(e) => return Err(e),
    };
    let g = fit_interval_gaussian(&bin.accuracies, grid.as_ref())?;
    let ks = ks_test(&bin.accuracies, g.mu, g.sigma, config.alpha)?;
    Ok(IntervalFit {
        index: bin.index,
        s: bin.s,
        user_count: bin.accuracies.len(),
        mu: g.mu,
        sigma: g.sigma,
        fit_method: g.method,
        sample_sd: sample_sd(&bin.accuracies),
        kde: grid,
        ks,
    })
}

/// Bins, smooths, fits and tests every populated interval.
pub fn analyze_intervals(pairs: &[(f64, f64)], config: &IntervalConfig) -> Result<IntervalReport> {
    let binned = bin_values(pairs, &config.binning);
    let intervals = binned
        .bins
        .par_iter()
        .map(|bin| fit_bin(bin, config))
        .collect::<Result<Vec<_>>>()?;
    Ok(IntervalReport {
        intervals,
        spill: binned.spill,
    })
}
