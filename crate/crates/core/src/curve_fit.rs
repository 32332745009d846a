//! Least-squares fits for the interval parameters.
//!
//! Closed-form OLS covers the linear mean curve and the quadratic candidate
//! for the spread curve. A Levenberg-Marquardt solver covers the Gaussian
//! bump, the sum of two bumps and the normalized Gaussian density.
//!
//! Two width conventions appear here and must not be mixed up:
//!
//! * bump curves use `A * exp(-((s - m) / w)^2)`, so `w = sqrt(2) * sd`;
//! * the density uses `exp(-(x - mu)^2 / (2 sigma^2)) / (sqrt(2 pi) sigma)`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fitted line `y = a * s + b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub a: f64,
    pub b: f64,
    pub residual_mse: f64,
}

impl LinearFit {
    pub fn eval(&self, s: f64) -> f64 {
        self.a * s + self.b
    }
}

/// Polynomial with coefficients from the highest power down.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialFit {
    pub coefficients: Vec<f64>,
    pub residual_mse: f64,
}

impl PolynomialFit {
    pub fn eval(&self, s: f64) -> f64 {
        self.coefficients.iter().fold(0.0, |acc, c| acc * s + c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverStatus {
    pub converged: bool,
    pub iterations: usize,
}

/// `amplitude * exp(-((s - center) / width)^2)`, width stored positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianCurveFit {
    pub amplitude: f64,
    pub center: f64,
    pub width: f64,
    pub residual_mse: f64,
    pub status: SolverStatus,
}

impl GaussianCurveFit {
    pub fn params(&self) -> [f64; 3] {
        [self.amplitude, self.center, self.width]
    }

    pub fn eval(&self, s: f64) -> f64 {
        GaussianBump.value(s, &self.params())
    }
}

/// Sum of two bumps, ordered so that `first.center <= second.center`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoubleGaussianCurveFit {
    pub first: [f64; 3],
    pub second: [f64; 3],
    pub residual_mse: f64,
    pub status: SolverStatus,
    /// Both components sit on the same center.
    pub collapsed: bool,
}

impl DoubleGaussianCurveFit {
    pub fn params(&self) -> [f64; 6] {
        let [a1, m1, w1] = self.first;
        let [a2, m2, w2] = self.second;
        [a1, m1, w1, a2, m2, w2]
    }

    pub fn eval(&self, s: f64) -> f64 {
        DoubleGaussianBump.value(s, &self.params())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPdfFit {
    pub mu: f64,
    pub sigma: f64,
    pub residual_mse: f64,
    pub status: SolverStatus,
}

fn check_weights(n: usize, weights: Option<&[f64]>) -> Result<()> {
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::domain(format!("{} weights for {n} points", w.len())));
        }
        if w.iter().any(|&x| !(x.is_finite() && x >= 0.0)) {
            return Err(Error::domain("weights must be finite and non-negative"));
        }
    }
    Ok(())
}

fn weight(weights: Option<&[f64]>, i: usize) -> f64 {
    weights.map_or(1.0, |w| w[i])
}

fn mean_squared_residual(points: &[(f64, f64)], f: impl Fn(f64) -> f64) -> f64 {
    points.iter().map(|&(s, y)| (y - f(s)).powi(2)).sum::<f64>() / points.len() as f64
}

fn distinct_abscissae(points: &[(f64, f64)]) -> usize {
    let mut xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    xs.len()
}

pub fn ols_linear(points: &[(f64, f64)]) -> Result<LinearFit> {
    ols_linear_weighted(points, None)
}

/// Closed-form (weighted) least-squares line.
pub fn ols_linear_weighted(points: &[(f64, f64)], weights: Option<&[f64]>) -> Result<LinearFit> {
    check_weights(points.len(), weights)?;
    if points.len() < 2 || distinct_abscissae(points) < 2 {
        return Err(Error::domain("line fit needs two distinct abscissae"));
    }
    let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for (i, &(x, y)) in points.iter().enumerate() {
        let w = weight(weights, i);
        sw += w;
        sx += w * x;
        sy += w * y;
    }
    if sw <= 0.0 {
        return Err(Error::domain("all weights are zero"));
    }
    let (xbar, ybar) = (sx / sw, sy / sw);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (i, &(x, y)) in points.iter().enumerate() {
        let w = weight(weights, i);
        sxx += w * (x - xbar) * (x - xbar);
        sxy += w * (x - xbar) * (y - ybar);
    }
    if sxx <= 0.0 {
        return Err(Error::domain("line fit needs two distinct weighted abscissae"));
    }
    let a = sxy / sxx;
    let b = ybar - a * xbar;
    Ok(LinearFit {
        a,
        b,
        residual_mse: mean_squared_residual(points, |s| a * s + b),
    })
}

pub fn ols_polynomial(points: &[(f64, f64)], degree: usize) -> Result<PolynomialFit> {
    ols_polynomial_weighted(points, degree, None)
}

/// Least-squares polynomial via QR of the (row-weighted) Vandermonde matrix.
pub fn ols_polynomial_weighted(
    points: &[(f64, f64)],
    degree: usize,
    weights: Option<&[f64]>,
) -> Result<PolynomialFit> {
    check_weights(points.len(), weights)?;
    let p = degree + 1;
    if distinct_abscissae(points) < p {
        return Err(Error::domain(format!(
            "degree-{degree} fit needs {p} distinct abscissae"
        )));
    }
    let n = points.len();
    let design = DMatrix::from_fn(n, p, |i, j| {
        weight(weights, i).sqrt() * points[i].0.powi((degree - j) as i32)
    });
    let rhs = DVector::from_fn(n, |i, _| weight(weights, i).sqrt() * points[i].1);
    let qr = design.qr();
    let r = qr.r();
    let scale = r.diagonal().amax().max(f64::MIN_POSITIVE);
    if r.diagonal().iter().any(|d| d.abs() <= 1e-12 * scale) {
        return Err(Error::domain("rank-deficient polynomial design"));
    }
    let qtb = qr.q().transpose() * rhs;
    let coeffs = r
        .solve_upper_triangular(&qtb)
        .ok_or_else(|| Error::domain("rank-deficient polynomial design"))?;
    let fit = PolynomialFit {
        coefficients: coeffs.iter().copied().collect(),
        residual_mse: 0.0,
    };
    let residual_mse = mean_squared_residual(points, |s| fit.eval(s));
    Ok(PolynomialFit { residual_mse, ..fit })
}

/// A curve family with an analytic gradient in its parameters.
pub trait CurveModel {
    fn n_params(&self) -> usize;
    fn value(&self, x: f64, params: &[f64]) -> f64;
    fn gradient(&self, x: f64, params: &[f64], out: &mut [f64]);
    /// Maps a trial point back onto the feasible set.
    fn project(&self, _params: &mut [f64]) {}
}

pub struct GaussianBump;

impl CurveModel for GaussianBump {
    fn n_params(&self) -> usize {
        3
    }

    fn value(&self, s: f64, p: &[f64]) -> f64 {
        let z = (s - p[1]) / p[2];
        p[0] * (-z * z).exp()
    }

    fn gradient(&self, s: f64, p: &[f64], out: &mut [f64]) {
        let (a, m, w) = (p[0], p[1], p[2]);
        let d = s - m;
        let e = (-(d / w).powi(2)).exp();
        out[0] = e;
        out[1] = a * e * 2.0 * d / (w * w);
        out[2] = a * e * 2.0 * d * d / (w * w * w);
    }

    fn project(&self, p: &mut [f64]) {
        p[0] = p[0].max(0.0);
    }
}

pub struct DoubleGaussianBump;

impl CurveModel for DoubleGaussianBump {
    fn n_params(&self) -> usize {
        6
    }

    fn value(&self, s: f64, p: &[f64]) -> f64 {
        GaussianBump.value(s, &p[..3]) + GaussianBump.value(s, &p[3..])
    }

    fn gradient(&self, s: f64, p: &[f64], out: &mut [f64]) {
        GaussianBump.gradient(s, &p[..3], &mut out[..3]);
        GaussianBump.gradient(s, &p[3..], &mut out[3..]);
    }

    fn project(&self, p: &mut [f64]) {
        p[0] = p[0].max(0.0);
        p[3] = p[3].max(0.0);
    }
}

/// Normalized normal density in `(mu, sigma)`.
pub struct GaussianPdf;

impl CurveModel for GaussianPdf {
    fn n_params(&self) -> usize {
        2
    }

    fn value(&self, x: f64, p: &[f64]) -> f64 {
        let z = (x - p[0]) / p[1];
        (-0.5 * z * z).exp() / ((2.0 * PI).sqrt() * p[1])
    }

    fn gradient(&self, x: f64, p: &[f64], out: &mut [f64]) {
        let (mu, sigma) = (p[0], p[1]);
        let f = self.value(x, p);
        let d = x - mu;
        out[0] = f * d / (sigma * sigma);
        out[1] = f * (d * d / sigma.powi(3) - 1.0 / sigma);
    }

    fn project(&self, p: &mut [f64]) {
        p[1] = p[1].abs().max(1e-12);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmSettings {
    pub initial_damping: f64,
    pub damping_up: f64,
    pub damping_down: f64,
    /// Stop when an accepted step lowers the cost by less than this fraction.
    pub cost_tolerance: f64,
    pub step_tolerance: f64,
    pub max_iterations: usize,
    pub weights: Option<Vec<f64>>,
}

impl Default for LmSettings {
    fn default() -> Self {
        LmSettings {
            initial_damping: 1e-3,
            damping_up: 10.0,
            damping_down: 10.0,
            cost_tolerance: 1e-10,
            step_tolerance: 1e-12,
            max_iterations: 200,
            weights: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmReport {
    pub params: Vec<f64>,
    /// Weighted sum of squared residuals at `params`.
    pub cost: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Cost after the initial point and after each accepted step.
    pub cost_history: Vec<f64>,
}

fn weighted_cost<M: CurveModel + ?Sized>(
    model: &M,
    points: &[(f64, f64)],
    params: &[f64],
    weights: Option<&[f64]>,
) -> f64 {
    points
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| weight(weights, i) * (y - model.value(x, params)).powi(2))
        .sum()
}

/// Damped Gauss-Newton with Marquardt diagonal scaling. Steps that raise the
/// cost are never accepted.
pub fn levenberg_marquardt<M: CurveModel + ?Sized>(
    model: &M,
    points: &[(f64, f64)],
    init: &[f64],
    settings: &LmSettings,
) -> Result<LmReport> {
    let np = model.n_params();
    if init.len() != np {
        return Err(Error::domain(format!("{} initial values for {np} parameters", init.len())));
    }
    let weights = settings.weights.as_deref();
    check_weights(points.len(), weights)?;
    let mut params = init.to_vec();
    model.project(&mut params);
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::domain("non-finite initial parameters"));
    }
    let mut cost = weighted_cost(model, points, &params, weights);
    if !cost.is_finite() {
        return Err(Error::Fit("non-finite cost at the initial point".into()));
    }
    let mut history = vec![cost];
    let mut damping = settings.initial_damping;
    let mut grad_row = vec![0.0; np];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < settings.max_iterations {
        if cost == 0.0 {
            converged = true;
            break;
        }
        iterations += 1;
        let mut jtj = DMatrix::<f64>::zeros(np, np);
        let mut jtr = DVector::<f64>::zeros(np);
        for (i, &(x, y)) in points.iter().enumerate() {
            let w = weight(weights, i);
            let r = y - model.value(x, &params);
            model.gradient(x, &params, &mut grad_row);
            for a in 0..np {
                jtr[a] += w * grad_row[a] * r;
                for b in 0..=a {
                    jtj[(a, b)] += w * grad_row[a] * grad_row[b];
                }
            }
        }
        for a in 0..np {
            for b in 0..a {
                jtj[(b, a)] = jtj[(a, b)];
            }
        }
        if jtr.amax() == 0.0 {
            converged = true;
            break;
        }
        let diag_floor = 1e-12 * jtj.diagonal().amax().max(f64::MIN_POSITIVE);
        let mut damped = jtj.clone();
        for a in 0..np {
            damped[(a, a)] += damping * jtj[(a, a)].max(diag_floor);
        }
        let Some(chol) = damped.cholesky() else {
            damping *= settings.damping_up;
            continue;
        };
        let delta = chol.solve(&jtr);
        let mut trial: Vec<f64> = params.iter().zip(delta.iter()).map(|(p, d)| p + d).collect();
        model.project(&mut trial);
        let step_norm = trial
            .iter()
            .zip(&params)
            .map(|(t, p)| (t - p).powi(2))
            .sum::<f64>()
            .sqrt();
        let trial_cost = weighted_cost(model, points, &trial, weights);
        if trial_cost.is_finite() && trial_cost < cost {
            let relative_drop = (cost - trial_cost) / cost;
            params = trial;
            cost = trial_cost;
            history.push(cost);
            damping /= settings.damping_down;
            if relative_drop < settings.cost_tolerance || step_norm < settings.step_tolerance {
                converged = true;
                break;
            }
        } else {
            damping *= settings.damping_up;
            if step_norm < settings.step_tolerance {
                converged = true;
                break;
            }
        }
    }
    if !converged {
        log::warn!("Levenberg-Marquardt hit the {}-iteration cap", settings.max_iterations);
    }
    Ok(LmReport {
        params,
        cost,
        converged,
        iterations,
        cost_history: history,
    })
}

fn require_points(points: &[(f64, f64)], min: usize) -> Result<()> {
    if points.len() < min {
        return Err(Error::domain(format!("need at least {min} points, got {}", points.len())));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::domain("non-finite data point"));
    }
    Ok(())
}

fn require_signal(points: &[(f64, f64)]) -> Result<()> {
    if points.iter().all(|p| p.1 == 0.0) {
        return Err(Error::Degenerate("all ordinates are zero".into()));
    }
    Ok(())
}

fn argmax(points: &[(f64, f64)]) -> usize {
    let mut best = 0;
    for (i, p) in points.iter().enumerate() {
        if p.1 > points[best].1 {
            best = i;
        }
    }
    best
}

pub fn default_gaussian_init(points: &[(f64, f64)]) -> [f64; 3] {
    let i = argmax(points);
    [points[i].1, points[i].0, 1.0]
}

/// Seeds at the two highest local maxima that are at least a tenth of the
/// range apart; with a single peak the second seed goes to the middle of the
/// longer flank.
pub fn default_double_gaussian_init(points: &[(f64, f64)]) -> [f64; 6] {
    let mut sorted: Vec<(f64, f64)> = points.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = sorted.len();
    let y = |i: usize| sorted[i].1;
    let mut peaks: Vec<usize> = (0..n)
        .filter(|&i| (i == 0 || y(i) >= y(i - 1)) && (i + 1 == n || y(i) >= y(i + 1)))
        .collect();
    peaks.sort_by(|&a, &b| y(b).total_cmp(&y(a)).then(a.cmp(&b)));
    let first = peaks[0];
    let min_gap = (n / 10).max(2);
    let second = peaks
        .iter()
        .copied()
        .find(|&i| i.abs_diff(first) >= min_gap)
        .unwrap_or(if first > n - 1 - first {
            first / 2
        } else {
            (first + n - 1) / 2
        });
    [
        y(first),
        sorted[first].0,
        1.0,
        y(second),
        sorted[second].0,
        1.0,
    ]
}

pub fn lm_gaussian(points: &[(f64, f64)], init: Option<[f64; 3]>) -> Result<GaussianCurveFit> {
    lm_gaussian_with(points, init, &LmSettings::default())
}

pub fn lm_gaussian_with(
    points: &[(f64, f64)],
    init: Option<[f64; 3]>,
    settings: &LmSettings,
) -> Result<GaussianCurveFit> {
    require_points(points, 3)?;
    require_signal(points)?;
    let init = init.unwrap_or_else(|| default_gaussian_init(points));
    let rep = levenberg_marquardt(&GaussianBump, points, &init, settings)?;
    let [amplitude, center, width] = [rep.params[0], rep.params[1], rep.params[2].abs()];
    Ok(GaussianCurveFit {
        amplitude,
        center,
        width,
        residual_mse: mean_squared_residual(points, |s| {
            GaussianBump.value(s, &[amplitude, center, width])
        }),
        status: SolverStatus {
            converged: rep.converged,
            iterations: rep.iterations,
        },
    })
}

pub fn lm_double_gaussian(points: &[(f64, f64)], init: Option<[f64; 6]>) -> Result<DoubleGaussianCurveFit> {
    lm_double_gaussian_with(points, init, &LmSettings::default())
}

pub fn lm_double_gaussian_with(
    points: &[(f64, f64)],
    init: Option<[f64; 6]>,
    settings: &LmSettings,
) -> Result<DoubleGaussianCurveFit> {
    require_points(points, 6)?;
    require_signal(points)?;
    let init = init.unwrap_or_else(|| default_double_gaussian_init(points));
    let rep = levenberg_marquardt(&DoubleGaussianBump, points, &init, settings)?;
    let p = &rep.params;
    let mut first = [p[0], p[1], p[2].abs()];
    let mut second = [p[3], p[4], p[5].abs()];
    if first[1] > second[1] {
        std::mem::swap(&mut first, &mut second);
    }
    let collapsed = (first[1] - second[1]).abs() < 1e-6;
    if collapsed {
        log::warn!("double-Gaussian components collapsed onto center {}", first[1]);
    }
    let all = [first[0], first[1], first[2], second[0], second[1], second[2]];
    Ok(DoubleGaussianCurveFit {
        first,
        second,
        residual_mse: mean_squared_residual(points, |s| DoubleGaussianBump.value(s, &all)),
        status: SolverStatus {
            converged: rep.converged,
            iterations: rep.iterations,
        },
        collapsed,
    })
}

/// Fits a normalized normal density to `(x, density)` samples.
pub fn lm_gaussian_pdf(grid: &[(f64, f64)], init: (f64, f64)) -> Result<GaussianPdfFit> {
    lm_gaussian_pdf_with(grid, init, &LmSettings::default())
}

pub fn lm_gaussian_pdf_with(
    grid: &[(f64, f64)],
    init: (f64, f64),
    settings: &LmSettings,
) -> Result<GaussianPdfFit> {
    require_points(grid, 3)?;
    require_signal(grid)?;
    if !(init.1 > 0.0) {
        return Err(Error::domain("initial sigma must be positive"));
    }
    let rep = levenberg_marquardt(&GaussianPdf, grid, &[init.0, init.1], settings)?;
    let (mu, sigma) = (rep.params[0], rep.params[1]);
    Ok(GaussianPdfFit {
        mu,
        sigma,
        residual_mse: mean_squared_residual(grid, |x| GaussianPdf.value(x, &[mu, sigma])),
        status: SolverStatus {
            converged: rep.converged,
            iterations: rep.iterations,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaModelTag {
    Polynomial,
    Gaussian,
    DoubleGaussian,
}

impl SigmaModelTag {
    pub fn n_params(self) -> usize {
        match self {
            SigmaModelTag::Polynomial | SigmaModelTag::Gaussian => 3,
            SigmaModelTag::DoubleGaussian => 6,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SigmaModelTag::Polynomial => "polynomial",
            SigmaModelTag::Gaussian => "gaussian",
            SigmaModelTag::DoubleGaussian => "double_gaussian",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    /// Smallest residual MSE; equal MSEs go to the model with fewer parameters.
    #[default]
    MinMse,
    /// Bayesian information criterion `n ln(SSR / n) + p ln n`.
    Bic,
}

#[derive(Debug, Clone)]
pub struct SigmaCandidates {
    pub polynomial: PolynomialFit,
    pub gaussian: GaussianCurveFit,
    /// Absent when there are fewer points than the six parameters.
    pub double_gaussian: Option<DoubleGaussianCurveFit>,
}

impl SigmaCandidates {
    pub fn fit(points: &[(f64, f64)]) -> Result<Self> {
        Self::fit_weighted(points, None)
    }

    /// Weighted fits; reported `residual_mse` values stay unweighted so the
    /// candidates remain comparable.
    pub fn fit_weighted(points: &[(f64, f64)], weights: Option<&[f64]>) -> Result<Self> {
        let settings = LmSettings {
            weights: weights.map(<[f64]>::to_vec),
            ..LmSettings::default()
        };
        let gaussian = lm_gaussian_with(points, None, &settings)?;
        let double_gaussian = if points.len() >= DoubleGaussianBump.n_params() {
            // also start from the single bump plus an empty second one, so
            // the richer family can never end up worse than the one it nests
            let [a, m, w] = gaussian.params();
            let free = lm_double_gaussian_with(points, None, &settings)?;
            let nested = lm_double_gaussian_with(points, Some([a, m, w, 0.0, m, w]), &settings)?;
            Some(if nested.residual_mse < free.residual_mse { nested } else { free })
        } else {
            None
        };
        Ok(SigmaCandidates {
            polynomial: ols_polynomial_weighted(points, 2, weights)?,
            gaussian,
            double_gaussian,
        })
    }

    /// Residual MSE of a candidate, infinite when it was not fitted.
    pub fn mse(&self, tag: SigmaModelTag) -> f64 {
        match tag {
            SigmaModelTag::Polynomial => self.polynomial.residual_mse,
            SigmaModelTag::Gaussian => self.gaussian.residual_mse,
            SigmaModelTag::DoubleGaussian => self.double_gaussian.as_ref().map_or(f64::INFINITY, |f| f.residual_mse),
        }
    }
}

fn nearly_equal(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()) || a == b
}

/// Picks the spread-curve family. `n_points` is the number of points the
/// candidates were fitted on.
pub fn select_sigma_model(candidates: &SigmaCandidates, n_points: usize, rule: SelectionRule) -> SigmaModelTag {
    let score = |tag: SigmaModelTag| -> f64 {
        let mse = candidates.mse(tag);
        match rule {
            SelectionRule::MinMse => mse,
            SelectionRule::Bic => {
                let n = n_points as f64;
                if mse <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    n * mse.ln() + tag.n_params() as f64 * n.ln()
                }
            }
        }
    };
    let mut best = SigmaModelTag::Polynomial;
    for tag in [SigmaModelTag::Gaussian, SigmaModelTag::DoubleGaussian] {
        let (s, b) = (score(tag), score(best));
        let better = if nearly_equal(s, b) {
            tag.n_params() < best.n_params()
        } else {
            s < b
        };
        if better {
            best = tag;
        }
    }
    best
}
