//! The functional Gaussian model of accuracy given an entropy interval:
//!
//! ```text
//! p(x | s) = exp(-(x - mu(s))^2 / (2 sigma(s)^2)) / (sqrt(2 pi) sigma(s))
//! mu(s)    = a s + b
//! sigma(s) = A exp(-((s - m) / w)^2)
//! ```
//!
//! `s` ranges over the interval labels `{0.05 n : n = 1..84}` unless the model
//! is switched to extrapolation. The truncated variant renormalizes the
//! density to `[0, 1]`.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::interval_stats::{normal_cdf, EntropyBinning};

pub const PAPER_MU: MuLine = MuLine { a: -0.1726, b: 0.9845 };
pub const PAPER_SIGMA: SigmaBump = SigmaBump {
    amplitude: 0.09415,
    center: 2.548,
    width: 1.96,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuLine {
    pub a: f64,
    pub b: f64,
}

/// Spread curve in the bump convention: `w` is `sqrt(2)` times a standard
/// deviation, not the standard deviation itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaBump {
    pub amplitude: f64,
    pub center: f64,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Provenance {
    pub dataset_id: String,
    pub timestamp: String,
    pub tool_version: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalGaussianModel {
    mu: MuLine,
    sigma: SigmaBump,
    binning: EntropyBinning,
    truncated: bool,
    extrapolate: bool,
    provenance: Provenance,
}

impl FunctionalGaussianModel {
    pub fn new(mu: MuLine, sigma: SigmaBump, binning: EntropyBinning, truncated: bool) -> Result<Self> {
        for (name, v) in [
            ("mu.a", mu.a),
            ("mu.b", mu.b),
            ("sigma.A", sigma.amplitude),
            ("sigma.m", sigma.center),
            ("sigma.w", sigma.width),
        ] {
            if !v.is_finite() {
                return Err(Error::domain(format!("{name} is not finite")));
            }
        }
        if sigma.width == 0.0 {
            return Err(Error::domain("sigma width must be nonzero"));
        }
        let sigma = SigmaBump {
            width: sigma.width.abs(),
            ..sigma
        };
        let model = FunctionalGaussianModel {
            mu,
            sigma,
            binning,
            truncated,
            extrapolate: false,
            provenance: Provenance::default(),
        };
        if let Some(s) = binning.labels().find(|&s| !(model.sigma_unchecked(s) > 0.0)) {
            return Err(Error::domain(format!("sigma({s}) is not positive")));
        }
        Ok(model)
    }

    /// The reference coefficients on the default 84-interval domain.
    pub fn paper(truncated: bool) -> Self {
        Self::new(PAPER_MU, PAPER_SIGMA, EntropyBinning::default(), truncated).expect("valid coefficients")
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    /// Allows evaluation at any finite `s`, not just interval labels.
    pub fn extrapolating(mut self, on: bool) -> Self {
        self.extrapolate = on;
        self
    }

    pub fn mu_line(&self) -> MuLine {
        self.mu
    }

    pub fn sigma_bump(&self) -> SigmaBump {
        self.sigma
    }

    pub fn binning(&self) -> EntropyBinning {
        self.binning
    }

    pub fn truncated(&self) -> bool {
        self.truncated
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    fn check_s(&self, s: f64) -> Result<()> {
        let ok = if self.extrapolate {
            s.is_finite()
        } else {
            self.binning.index_of_label(s).is_some()
        };
        if ok {
            Ok(())
        } else {
            Err(Error::OutOfDomain { s })
        }
    }

    fn sigma_unchecked(&self, s: f64) -> f64 {
        let z = (s - self.sigma.center) / self.sigma.width;
        self.sigma.amplitude * (-z * z).exp()
    }

    pub fn mu_of(&self, s: f64) -> Result<f64> {
        self.check_s(s)?;
        Ok(self.mu.a * s + self.mu.b)
    }

    pub fn sigma_of(&self, s: f64) -> Result<f64> {
        self.check_s(s)?;
        let sigma = self.sigma_unchecked(s);
        if !(sigma > 0.0) {
            return Err(Error::domain(format!("sigma({s}) underflows to zero")));
        }
        Ok(sigma)
    }

    /// Probability mass of the untruncated normal inside `[0, 1]`.
    fn unit_mass(&self, mu: f64, sigma: f64) -> f64 {
        normal_cdf(1.0, mu, sigma) - normal_cdf(0.0, mu, sigma)
    }

    pub fn pdf(&self, x: f64, s: f64) -> Result<f64> {
        let (mu, sigma) = (self.mu_of(s)?, self.sigma_of(s)?);
        let z = (x - mu) / sigma;
        let density = (-0.5 * z * z).exp() / ((2.0 * PI).sqrt() * sigma);
        if !self.truncated {
            return Ok(density);
        }
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::domain(format!("x = {x} outside [0, 1] for a truncated model")));
        }
        Ok(density / self.unit_mass(mu, sigma))
    }

    /// `P(lo <= X <= hi | s)` by adaptive Simpson quadrature. For truncated
    /// models the range is clipped to `[0, 1]`.
    pub fn probability(&self, s: f64, lo: f64, hi: f64, tolerance: f64) -> Result<f64> {
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(Error::domain(format!("bad accuracy range [{lo}, {hi}]")));
        }
        let (mu, sigma) = (self.mu_of(s)?, self.sigma_of(s)?);
        let (lo, hi) = if self.truncated {
            (lo.max(0.0), hi.min(1.0))
        } else {
            (lo, hi)
        };
        if lo >= hi {
            return Ok(0.0);
        }
        // split at the mean and a few sigmas out so narrow peaks are not missed
        let mut cuts = vec![lo, hi];
        for k in [-4.0, -1.0, 0.0, 1.0, 4.0] {
            let c = mu + k * sigma;
            if c > lo && c < hi {
                cuts.push(c);
            }
        }
        cuts.sort_by(f64::total_cmp);
        let f = |x: f64| self.pdf(x, s).unwrap_or(0.0);
        let pieces = (cuts.len() - 1) as f64;
        Ok(cuts
            .windows(2)
            .map(|w| adaptive_simpson(&f, w[0], w[1], tolerance / pieces))
            .sum())
    }

    /// Draws accuracies for one interval; the truncated variant resamples
    /// until each draw lies in `[0, 1]`.
    pub fn sample(&self, s: f64, count: usize, seed: u64) -> Result<Vec<f64>> {
        let (mu, sigma) = (self.mu_of(s)?, self.sigma_of(s)?);
        let normal = Normal::new(mu, sigma).map_err(|e| Error::domain(e.to_string()))?;
        if self.truncated && self.unit_mass(mu, sigma) < 1e-12 {
            return Err(Error::domain("no mass inside [0, 1] to sample from"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let x = normal.sample(&mut rng);
            if !self.truncated || (0.0..=1.0).contains(&x) {
                out.push(x);
            }
        }
        Ok(out)
    }

    /// JSON document with every float printed to 17 significant digits.
    pub fn to_json(&self) -> String {
        let mut out = String::new();
        let p = &self.provenance;
        writeln!(out, "{{").unwrap();
        writeln!(out, "  \"mu\": {{\"a\": {}, \"b\": {}}},", g17(self.mu.a), g17(self.mu.b)).unwrap();
        writeln!(
            out,
            "  \"sigma\": {{\"A\": {}, \"m\": {}, \"w\": {}}},",
            g17(self.sigma.amplitude),
            g17(self.sigma.center),
            g17(self.sigma.width)
        )
        .unwrap();
        writeln!(out, "  \"interval_width\": {},", g17(self.binning.width)).unwrap();
        writeln!(out, "  \"n_intervals\": {},", self.binning.n_intervals).unwrap();
        writeln!(out, "  \"truncated\": {},", self.truncated).unwrap();
        writeln!(
            out,
            "  \"provenance\": {{\"dataset_id\": {}, \"timestamp\": {}, \"tool_version\": {}}}",
            Value::from(p.dataset_id.as_str()),
            Value::from(p.timestamp.as_str()),
            Value::from(p.tool_version.as_str())
        )
        .unwrap();
        writeln!(out, "}}").unwrap();
        out
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Value = serde_json::from_str(text).map_err(|e| Error::Document {
            field: "<document>".into(),
            message: e.to_string(),
        })?;
        let a = number(&doc, &["mu", "a"])?;
        let b = number(&doc, &["mu", "b"])?;
        let amplitude = number(&doc, &["sigma", "A"])?;
        let center = number(&doc, &["sigma", "m"])?;
        let width = number(&doc, &["sigma", "w"])?;
        let interval_width = number(&doc, &["interval_width"])?;
        let n_intervals = lookup(&doc, &["n_intervals"])?
            .as_u64()
            .ok_or_else(|| bad_field(&["n_intervals"], "expected a non-negative integer"))? as usize;
        let truncated = lookup(&doc, &["truncated"])?
            .as_bool()
            .ok_or_else(|| bad_field(&["truncated"], "expected a boolean"))?;
        let provenance = match doc.get("provenance") {
            None | Some(Value::Null) => Provenance::default(),
            Some(_) => Provenance {
                dataset_id: string(&doc, &["provenance", "dataset_id"])?,
                timestamp: string(&doc, &["provenance", "timestamp"])?,
                tool_version: string(&doc, &["provenance", "tool_version"])?,
            },
        };
        let binning = EntropyBinning::new(interval_width, n_intervals).map_err(|e| Error::Document {
            field: "interval_width".into(),
            message: e.to_string(),
        })?;
        if width < 0.0 {
            return Err(bad_field(&["sigma", "w"], "width must be positive"));
        }
        let model = Self::new(MuLine { a, b }, SigmaBump { amplitude, center, width }, binning, truncated)
            .map_err(|e| Error::Document {
                field: "sigma".into(),
                message: e.to_string(),
            })?;
        Ok(model.with_provenance(provenance))
    }
}

impl Default for FunctionalGaussianModel {
    fn default() -> Self {
        Self::paper(false)
    }
}

fn bad_field(path: &[&str], message: &str) -> Error {
    Error::Document {
        field: path.join("."),
        message: message.into(),
    }
}

fn lookup<'a>(doc: &'a Value, path: &[&str]) -> Result<&'a Value> {
    let mut v = doc;
    for (i, key) in path.iter().enumerate() {
        v = v.get(key).ok_or_else(|| bad_field(&path[..=i], "missing field"))?;
    }
    Ok(v)
}

fn number(doc: &Value, path: &[&str]) -> Result<f64> {
    lookup(doc, path)?
        .as_f64()
        .ok_or_else(|| bad_field(path, "expected a number"))
}

fn string(doc: &Value, path: &[&str]) -> Result<String> {
    lookup(doc, path)?
        .as_str()
        .map(str::to_owned)
        .ok_or_else(|| bad_field(path, "expected a string"))
}

/// Formats like C's `%.17g`.
pub fn g17(x: f64) -> String {
    if !x.is_finite() {
        return "null".into();
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{x:.16e}");
    let (mantissa, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    let negative = mantissa.starts_with('-');
    let digits: String = mantissa.chars().filter(char::is_ascii_digit).collect();
    let sign = if negative { "-" } else { "" };
    if (-5..17).contains(&exp) {
        let body = if exp >= 0 {
            let (int, frac) = digits.split_at(exp as usize + 1);
            format!("{int}.{frac}")
        } else {
            format!("0.{}{}", "0".repeat((-exp - 1) as usize), digits)
        };
        let body = body.trim_end_matches('0').trim_end_matches('.');
        format!("{sign}{body}")
    } else {
        let (lead, rest) = digits.split_at(1);
        let rest = rest.trim_end_matches('0');
        let m = if rest.is_empty() { lead.to_string() } else { format!("{lead}.{rest}") };
        format!("{sign}{m}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(fa, flm, fm, a, m);
    let right = simpson(fm, frm, fb, m, b);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// Adaptive Simpson quadrature with Richardson correction.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tolerance: f64) -> f64 {
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = simpson(fa, fm, fb, a, b);
    simpson_step(f, a, b, fa, fm, fb, whole, tolerance, 50)
}
