//! Stage orchestration: per-user analysis, interval fitting and the curve
//! fits that produce a [`FunctionalGaussianModel`], plus plot-ready tables.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::cdr_ingest::Trajectory;
use crate::curve_fit::{ols_linear_weighted, select_sigma_model, LinearFit, SelectionRule, SigmaCandidates, SigmaModelTag};
use crate::entropy::{entropy_profile, EntropyProfile};
use crate::error::{Error, Result};
use crate::fgd_model::{FunctionalGaussianModel, MuLine, Provenance, SigmaBump};
use crate::interval_stats::{
    normal_cdf, EntropyBinning, IntervalConfig, IntervalReport, DEFAULT_ALPHA, DEFAULT_GRID_SIZE,
};
use crate::markov::{evaluate_prequential, EvaluationOptions, PredictionResult};

pub const DEFAULT_MIN_BIN_SIZE: usize = 10;
/// Fewest intervals the curve fits accept.
pub const MIN_FIT_INTERVALS: usize = 5;

/// Labels and fitted `(mu, sigma)` of the nine reference intervals.
pub const PAPER9_S: [f64; 9] = [0.05, 0.55, 1.05, 1.55, 2.05, 2.55, 3.05, 3.55, 4.05];
pub const PAPER9_MU: [f64; 9] = [0.999, 0.928, 0.814, 0.689, 0.580, 0.500, 0.449, 0.419, 0.279];
pub const PAPER9_SIGMA: [f64; 9] = [0.002, 0.019, 0.070, 0.084, 0.0865, 0.081, 0.079, 0.102, 0.057];

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AnalyzeOptions {
    pub evaluation: EvaluationOptions,
    /// Drop users whose analysis fails instead of aborting.
    pub skip_bad_users: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkippedUser {
    pub user_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct AnalyzeOutcome {
    pub rows: Vec<(EntropyProfile, PredictionResult)>,
    pub skipped: Vec<SkippedUser>,
}

impl AnalyzeOutcome {
    pub fn profiles(&self) -> Vec<EntropyProfile> {
        self.rows.iter().map(|r| r.0.clone()).collect()
    }

    pub fn predictions(&self) -> Vec<PredictionResult> {
        self.rows.iter().map(|r| r.1.clone()).collect()
    }
}

/// Entropies and prediction accuracy for every user, in input order.
pub fn analyze(trajectories: &[Trajectory], options: &AnalyzeOptions) -> Result<AnalyzeOutcome> {
    let results: Vec<Result<(EntropyProfile, PredictionResult)>> = trajectories
        .par_iter()
        .map(|t| {
            let run = || Ok((entropy_profile(t)?, evaluate_prequential(t, &options.evaluation)?));
            run().map_err(|source| Error::User {
                user_id: t.user_id().to_owned(),
                source: Box::new(source),
            })
        })
        .collect();
    let mut outcome = AnalyzeOutcome::default();
    for r in results {
        match r {
            Ok(row) => outcome.rows.push(row),
            Err(Error::User { user_id, source }) if options.skip_bad_users => {
                log::warn!("skipping user {user_id}: {source}");
                outcome.skipped.push(SkippedUser {
                    user_id,
                    reason: source.to_string(),
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(outcome)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub interval_width: f64,
    pub n_intervals: usize,
    pub grid_size: usize,
    pub alpha: f64,
    pub min_bin_size: usize,
    pub selection: SelectionRule,
    /// Weight interval points by their user counts.
    pub weighted: bool,
    pub truncated: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        let binning = EntropyBinning::default();
        FitOptions {
            interval_width: binning.width,
            n_intervals: binning.n_intervals,
            grid_size: DEFAULT_GRID_SIZE,
            alpha: DEFAULT_ALPHA,
            min_bin_size: DEFAULT_MIN_BIN_SIZE,
            selection: SelectionRule::MinMse,
            weighted: false,
            truncated: false,
        }
    }
}

impl FitOptions {
    pub fn binning(&self) -> Result<EntropyBinning> {
        EntropyBinning::new(self.interval_width, self.n_intervals)
    }

    pub fn interval_config(&self) -> Result<IntervalConfig> {
        if self.grid_size < 2 {
            return Err(Error::Config(format!("grid_size must be at least 2, got {}", self.grid_size)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must be in (0, 1), got {}", self.alpha)));
        }
        Ok(IntervalConfig {
            binning: self.binning()?,
            grid_size: self.grid_size,
            alpha: self.alpha,
        })
    }
}

/// One interval's fitted parameters as input to the curve fits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalPoint {
    pub s: f64,
    pub user_count: usize,
    pub mu: f64,
    pub sigma: f64,
}

pub fn paper9_points() -> Vec<IntervalPoint> {
    (0..9)
        .map(|i| IntervalPoint {
            s: PAPER9_S[i],
            user_count: 0,
            mu: PAPER9_MU[i],
            sigma: PAPER9_SIGMA[i],
        })
        .collect()
}

/// Mean line and spread-curve candidates over one set of interval points.
#[derive(Debug, Clone)]
pub struct CurveFits {
    pub points: Vec<IntervalPoint>,
    pub mu: LinearFit,
    pub sigma: SigmaCandidates,
    pub selected: SigmaModelTag,
}

impl CurveFits {
    pub fn fit(points: Vec<IntervalPoint>, rule: SelectionRule, weighted: bool) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::Fit(format!("need at least 3 interval points, got {}", points.len())));
        }
        let weights: Option<Vec<f64>> = (weighted && points.iter().all(|p| p.user_count > 0))
            .then(|| points.iter().map(|p| p.user_count as f64).collect());
        let mu_pts: Vec<_> = points.iter().map(|p| (p.s, p.mu)).collect();
        let sigma_pts: Vec<_> = points.iter().map(|p| (p.s, p.sigma)).collect();
        let mu = ols_linear_weighted(&mu_pts, weights.as_deref())?;
        let sigma = SigmaCandidates::fit_weighted(&sigma_pts, weights.as_deref())?;
        let selected = select_sigma_model(&sigma, points.len(), rule);
        Ok(CurveFits {
            points,
            mu,
            sigma,
            selected,
        })
    }

    /// Builds the density model from the mean line and the single-bump
    /// spread curve, whatever family won the selection.
    pub fn model(&self, binning: EntropyBinning, truncated: bool, provenance: Provenance) -> Result<FunctionalGaussianModel> {
        let g = &self.sigma.gaussian;
        let model = FunctionalGaussianModel::new(
            MuLine {
                a: self.mu.a,
                b: self.mu.b,
            },
            SigmaBump {
                amplitude: g.amplitude,
                center: g.center,
                width: g.width,
            },
            binning,
            truncated,
        )
        .map_err(|e| Error::Fit(format!("fitted curves do not form a valid model: {e}")))?;
        Ok(model.with_provenance(provenance))
    }

    fn mse_known(&self, tag: SigmaModelTag) -> bool {
        self.sigma.mse(tag).is_finite()
    }

    pub fn sigma_value(&self, tag: SigmaModelTag, s: f64) -> Option<f64> {
        match tag {
            SigmaModelTag::Polynomial => Some(self.sigma.polynomial.eval(s)),
            SigmaModelTag::Gaussian => Some(self.sigma.gaussian.eval(s)),
            SigmaModelTag::DoubleGaussian => self.sigma.double_gaussian.as_ref().map(|f| f.eval(s)),
        }
    }

    /// Fit-report entries: the mean line, then each spread candidate.
    pub fn entries(&self) -> serde_json::Value {
        let mut sigma = vec![
            json!({
                "tag": SigmaModelTag::Polynomial.as_str(),
                "params": self.sigma.polynomial.coefficients,
                "residual_mse": self.sigma.polynomial.residual_mse,
                "converged": true,
                "iterations": 0,
            }),
            json!({
                "tag": SigmaModelTag::Gaussian.as_str(),
                "params": self.sigma.gaussian.params(),
                "residual_mse": self.sigma.gaussian.residual_mse,
                "converged": self.sigma.gaussian.status.converged,
                "iterations": self.sigma.gaussian.status.iterations,
            }),
        ];
        if let Some(d) = &self.sigma.double_gaussian {
            sigma.push(json!({
                "tag": SigmaModelTag::DoubleGaussian.as_str(),
                "params": d.params(),
                "residual_mse": d.residual_mse,
                "converged": d.status.converged,
                "iterations": d.status.iterations,
                "collapsed": d.collapsed,
            }));
        }
        json!({
            "intervals_used": self.points.len(),
            "mu": {
                "tag": "linear",
                "params": [self.mu.a, self.mu.b],
                "residual_mse": self.mu.residual_mse,
                "converged": true,
                "iterations": 0,
            },
            "sigma": sigma,
            "selected_sigma": self.selected.as_str(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub options: FitOptions,
    pub intervals: IntervalReport,
    /// Fits over intervals with at least `min_bin_size` users.
    pub filtered: CurveFits,
    /// Fits over every populated interval; `None` if they fail.
    pub all_bins: Option<CurveFits>,
    pub model: FunctionalGaussianModel,
}

fn points_of(report: &IntervalReport, min_users: usize) -> Vec<IntervalPoint> {
    report
        .intervals
        .iter()
        .filter(|f| f.user_count >= min_users)
        .map(|f| IntervalPoint {
            s: f.s,
            user_count: f.user_count,
            mu: f.mu,
            sigma: f.sigma,
        })
        .collect()
}

/// Interval analysis, curve fits and model construction over
/// `(s_real, accuracy)` pairs.
pub fn fit_pairs(pairs: &[(f64, f64)], options: &FitOptions, provenance: Provenance) -> Result<FitOutcome> {
    let config = options.interval_config()?;
    let intervals = crate::interval_stats::analyze_intervals(pairs, &config)?;
    if intervals.spill > 0 {
        log::warn!(
            "{} users fall outside [0, {}) and are left out of the fit",
            intervals.spill,
            config.binning.upper_limit()
        );
    }
    let kept = points_of(&intervals, options.min_bin_size.max(1));
    if kept.len() < MIN_FIT_INTERVALS {
        return Err(Error::Fit(format!(
            "only {} intervals have at least {} users; {} are required",
            kept.len(),
            options.min_bin_size,
            MIN_FIT_INTERVALS
        )));
    }
    let filtered = CurveFits::fit(kept, options.selection, options.weighted)?;
    let all_bins = match CurveFits::fit(points_of(&intervals, 1), options.selection, options.weighted) {
        Ok(f) => Some(f),
        Err(e) => {
            log::warn!("all-bins variant failed: {e}");
            None
        }
    };
    let model = filtered.model(config.binning, options.truncated, provenance)?;
    Ok(FitOutcome {
        options: *options,
        intervals,
        filtered,
        all_bins,
        model,
    })
}

pub fn fit_rows(
    rows: &[(EntropyProfile, PredictionResult)],
    options: &FitOptions,
    provenance: Provenance,
) -> Result<FitOutcome> {
    let pairs: Vec<(f64, f64)> = rows.iter().map(|(e, p)| (e.s_real, p.accuracy)).collect();
    fit_pairs(&pairs, options, provenance)
}

/// Curve fits on the nine reference interval pairs.
pub fn fit_paper9(options: &FitOptions, provenance: Provenance) -> Result<(CurveFits, FunctionalGaussianModel)> {
    let fits = CurveFits::fit(paper9_points(), options.selection, false)?;
    let model = fits.model(options.binning()?, options.truncated, provenance)?;
    Ok((fits, model))
}

fn selection_name(rule: SelectionRule) -> &'static str {
    match rule {
        SelectionRule::MinMse => "min_mse",
        SelectionRule::Bic => "bic",
    }
}

impl FitOutcome {
    pub fn report_json(&self) -> String {
        let doc = json!({
            "source": "intervals",
            "selection_rule": selection_name(self.options.selection),
            "min_bin_size": self.options.min_bin_size,
            "weighted": self.options.weighted,
            "populated_intervals": self.intervals.intervals.len(),
            "spill": self.intervals.spill,
            "ks_fail_fraction": self.intervals.ks_fail_fraction(),
            "model_sigma": SigmaModelTag::Gaussian.as_str(),
            "filtered": self.filtered.entries(),
            "all_bins": self.all_bins.as_ref().map(CurveFits::entries),
        });
        serde_json::to_string_pretty(&doc).expect("serializable") + "\n"
    }
}

pub fn paper9_report_json(fits: &CurveFits, rule: SelectionRule) -> String {
    let doc = json!({
        "source": "paper9",
        "selection_rule": selection_name(rule),
        "model_sigma": SigmaModelTag::Gaussian.as_str(),
        "filtered": fits.entries(),
    });
    serde_json::to_string_pretty(&doc).expect("serializable") + "\n"
}

/// One plot-ready CSV table.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotTable {
    pub name: &'static str,
    pub contents: String,
}

fn table(name: &'static str, header: &str, rows: impl IntoIterator<Item = String>) -> PlotTable {
    let mut contents = String::from(header);
    contents.push('\n');
    for r in rows {
        contents.push_str(&r);
        contents.push('\n');
    }
    PlotTable { name, contents }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn normal_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    (-0.5 * z * z).exp() / ((2.0 * std::f64::consts::PI).sqrt() * sigma)
}

/// Mean curve, spread curves and candidate MSEs.
pub fn curve_tables(fits: &CurveFits) -> Vec<PlotTable> {
    let mu = table(
        "mu_curve.csv",
        "s,user_count,mu,linear",
        fits.points
            .iter()
            .map(|p| format!("{},{},{},{}", p.s, p.user_count, p.mu, fits.mu.eval(p.s))),
    );
    let tags = [SigmaModelTag::Polynomial, SigmaModelTag::Gaussian, SigmaModelTag::DoubleGaussian];
    let sigma = table(
        "sigma_curves.csv",
        "s,user_count,sigma,polynomial,gaussian,double_gaussian",
        fits.points.iter().map(|p| {
            let mut row = format!("{},{},{}", p.s, p.user_count, p.sigma);
            for tag in tags {
                write!(row, ",{}", opt(fits.sigma_value(tag, p.s))).unwrap();
            }
            row
        }),
    );
    let mse = table(
        "sigma_mse.csv",
        "model,residual_mse,selected",
        tags.iter().filter(|t| fits.mse_known(**t)).map(|&t| {
            format!("{},{},{}", t.as_str(), fits.sigma.mse(t), t == fits.selected)
        }),
    );
    vec![mu, sigma, mse]
}

/// Model density at `n_x` accuracies in `[0, 1]` for every domain label.
pub fn model_density_table(model: &FunctionalGaussianModel, n_x: usize) -> PlotTable {
    let n_x = n_x.max(2);
    let binning = model.binning();
    let rows = binning.labels().flat_map(move |s| {
        (0..n_x).filter_map(move |j| {
            let x = j as f64 / (n_x - 1) as f64;
            model.pdf(x, s).ok().map(|p| format!("{s:.2},{x},{p}"))
        })
    });
    table("model_densities.csv", "s,x,pdf", rows.collect::<Vec<_>>())
}

/// All plot tables for a fit over user data.
pub fn plot_tables(rows: &[(EntropyProfile, PredictionResult)], outcome: &FitOutcome) -> Vec<PlotTable> {
    let max_s = rows
        .iter()
        .map(|r| r.0.s_rand.max(r.0.s_unc).max(r.0.s_real))
        .fold(0.0f64, f64::max);
    let width = outcome.options.interval_width;
    let n_bins = ((max_s / width).floor() as usize + 1).max(1);
    let mut counts = vec![[0usize; 3]; n_bins];
    for (e, _) in rows {
        for (k, v) in [e.s_rand, e.s_unc, e.s_real].into_iter().enumerate() {
            let b = ((v / width).floor().max(0.0) as usize).min(n_bins - 1);
            counts[b][k] += 1;
        }
    }
    let distribution = table(
        "entropy_distribution.csv",
        "lower,upper,s_rand,s_unc,s_real",
        counts.iter().enumerate().map(|(i, c)| {
            format!("{:.2},{:.2},{},{},{}", width * i as f64, width * (i + 1) as f64, c[0], c[1], c[2])
        }),
    );
    let scatter = table(
        "entropy_accuracy_scatter.csv",
        "user_id,s_real,accuracy",
        rows.iter().map(|(e, p)| format!("{},{},{}", e.user_id, e.s_real, p.accuracy)),
    );
    let densities = table(
        "interval_densities.csv",
        "s,x,kde,gaussian",
        outcome.intervals.intervals.iter().flat_map(|f| {
            f.kde.iter().flat_map(move |g| {
                g.points
                    .iter()
                    .map(move |&(x, d)| format!("{:.2},{x},{d},{}", f.s, normal_pdf(x, f.mu, f.sigma)))
            })
        }),
    );
    let ks = table(
        "interval_ks.csv",
        "s,user_count,sample_sd,ks_D,ks_p,ks_pass,mass_in_unit",
        outcome.intervals.intervals.iter().map(|f| {
            let mass = normal_cdf(1.0, f.mu, f.sigma) - normal_cdf(0.0, f.mu, f.sigma);
            format!(
                "{:.2},{},{},{},{},{},{}",
                f.s, f.user_count, f.sample_sd, f.ks.statistic, f.ks.p_value, f.ks.pass, mass
            )
        }),
    );
    let mut out = vec![distribution, scatter, densities, ks];
    out.extend(curve_tables(&outcome.filtered));
    out.push(model_density_table(&outcome.model, 101));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{generate, GeneratorConfig};

    #[test]
    fn paper9_fixture_fits() {
        let (fits, model) = fit_paper9(&FitOptions::default(), Provenance::default()).unwrap();
        assert!((fits.mu.a + 0.17753).abs() < 1e-5, "{}", fits.mu.a);
        assert!((fits.mu.b - 0.99250).abs() < 1e-5, "{}", fits.mu.b);
        let g = &fits.sigma.gaussian;
        assert!((1.5..=3.5).contains(&g.center) && (0.07..=0.12).contains(&g.amplitude));
        assert_eq!(model.mu_line().a, fits.mu.a);
        let doc: serde_json::Value = serde_json::from_str(&paper9_report_json(&fits, SelectionRule::MinMse)).unwrap();
        assert_eq!(doc["filtered"]["sigma"].as_array().unwrap().len(), 3);
        assert_eq!(doc["filtered"]["mu"]["tag"], "linear");
    }

    #[test]
    fn analyze_reports_or_skips_bad_users() {
        let tz = crate::cdr_ingest::utc();
        let good = Trajectory::from_events("a", (0..50).map(|t| (t * 3600, if t % 2 == 0 { "x" } else { "y" })), &tz).unwrap();
        let short = Trajectory::from_events("b", [(0, "x")], &tz).unwrap();
        let users = vec![good, short];
        let err = analyze(&users, &AnalyzeOptions::default()).unwrap_err();
        assert!(matches!(&err, Error::User { user_id, .. } if user_id == "b"), "{err}");
        let out = analyze(&users, &AnalyzeOptions { skip_bad_users: true, ..Default::default() }).unwrap();
        assert_eq!(out.rows.len(), 1);
        assert_eq!(out.skipped[0].user_id, "b");
        assert!(out.rows[0].1.accuracy > 0.9);
    }

    #[test]
    fn too_few_intervals_is_a_fit_error() {
        let pairs: Vec<(f64, f64)> = (0..100).map(|i| (0.1 + 0.05 * (i % 3) as f64, 0.5 + 0.001 * i as f64)).collect();
        assert!(matches!(fit_pairs(&pairs, &FitOptions::default(), Provenance::default()), Err(Error::Fit(_))));
    }

    #[test]
    fn small_synthetic_fit() {
        let config = GeneratorConfig { n_users: 300, seq_length: 1_500, seed: 3, ..Default::default() };
        let users = generate(&config).unwrap();
        let analyzed = analyze(&users, &AnalyzeOptions::default()).unwrap();
        let opts = FitOptions { min_bin_size: 5, ..Default::default() };
        let out = fit_rows(&analyzed.rows, &opts, Provenance::default()).unwrap();
        assert!(out.model.mu_line().a < 0.0);
        assert!(out.all_bins.as_ref().unwrap().points.len() >= out.filtered.points.len());
        let doc: serde_json::Value = serde_json::from_str(&out.report_json()).unwrap();
        assert_eq!(doc["filtered"]["intervals_used"].as_u64().unwrap() as usize, out.filtered.points.len());
        let tables = plot_tables(&analyzed.rows, &out);
        let names: Vec<_> = tables.iter().map(|t| t.name).collect();
        for want in ["entropy_distribution.csv", "entropy_accuracy_scatter.csv", "interval_densities.csv", "mu_curve.csv", "sigma_curves.csv", "sigma_mse.csv", "model_densities.csv"] {
            assert!(names.contains(&want), "{want}");
        }
        let scatter = tables.iter().find(|t| t.name == "entropy_accuracy_scatter.csv").unwrap();
        assert_eq!(scatter.contents.lines().count(), 301);
    }
}
