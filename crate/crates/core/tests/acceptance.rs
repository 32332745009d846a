//! Acceptance suite: prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use mobacc_core::curve_fit::{
    lm_double_gaussian, lm_gaussian, ols_linear, CurveModel, DoubleGaussianBump, GaussianBump, GaussianPdf,
};
use mobacc_core::entropy::{real_entropy_lz, real_entropy_oracle};
use mobacc_core::fgd_model::{FunctionalGaussianModel, Provenance};
use mobacc_core::interval_stats::{ks_test, sample_sd, spearman, EntropyBinning};
use mobacc_core::markov::{evaluate_sequence, EvaluationOptions};
use mobacc_core::pipeline::{
    analyze, fit_rows, plot_tables, AnalyzeOptions, FitOptions, FitOutcome, PAPER9_MU, PAPER9_S, PAPER9_SIGMA,
};
use mobacc_core::report::{write_accuracy_report, write_entropy_report, write_interval_report};
use mobacc_core::synthgen::{generate, GeneratorConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn grid84() -> Vec<f64> {
    (1..=84).map(|n| 0.05 * n as f64).collect()
}

fn uniform_sequence(l: u32, n: usize, seed: u64) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(0..l)).collect()
}

fn paper_pairs(ys: [f64; 9]) -> Vec<(f64, f64)> {
    PAPER9_S.iter().copied().zip(ys).collect()
}

fn criterion_1() -> Check {
    let f = ols_linear(&paper_pairs(PAPER9_MU)).map_err(|e| e.to_string())?;
    ensure((f.a + 0.17753).abs() < 5e-6, format!("slope {}", f.a))?;
    ensure((f.b - 0.99250).abs() < 5e-6, format!("intercept {}", f.b))?;
    ensure((f.a + 0.1726).abs() <= 0.01 && (f.b - 0.9845).abs() <= 0.01, "too far from reference line")?;
    Ok(format!("a = {:.5}, b = {:.5}", f.a, f.b))
}

fn criterion_2() -> Check {
    let f = lm_gaussian(&paper_pairs(PAPER9_SIGMA), None).map_err(|e| e.to_string())?;
    ensure(f.status.converged, "LM did not converge")?;
    ensure((1.5..=3.5).contains(&f.center), format!("center {}", f.center))?;
    ensure((0.07..=0.12).contains(&f.amplitude), format!("amplitude {}", f.amplitude))?;
    Ok(format!("A = {:.5}, m = {:.4}, w = {:.4}", f.amplitude, f.center, f.width))
}

fn criterion_3() -> Check {
    let model = FunctionalGaussianModel::paper(false);
    let p = model.pdf(0.54437, 2.55).map_err(|e| e.to_string())?;
    ensure((p - 4.2372).abs() <= 1e-3, format!("pdf {p}"))?;
    let mut worst = 0.0f64;
    for s in EntropyBinning::default().labels() {
        let (mu, sigma) = (model.mu_of(s).unwrap(), model.sigma_of(s).unwrap());
        let want = 1.0 / ((2.0 * PI).sqrt() * sigma);
        worst = worst.max((model.pdf(mu, s).unwrap() - want).abs());
    }
    ensure(worst <= 1e-9, format!("peak error {worst:e}"))?;
    Ok(format!("pdf = {p:.4}, max peak error {worst:.1e}"))
}

fn jacobian_error<M: CurveModel>(model: &M, params: &[f64], x: f64) -> f64 {
    let n = model.n_params();
    let mut analytic = vec![0.0; n];
    model.gradient(x, params, &mut analytic);
    (0..n)
        .map(|k| {
            let h = 1e-6 * (1.0 + params[k].abs());
            let (mut up, mut down) = (params.to_vec(), params.to_vec());
            up[k] += h;
            down[k] -= h;
            let numeric = (model.value(x, &up) - model.value(x, &down)) / (2.0 * h);
            (analytic[k] - numeric).abs() / analytic[k].abs().max(numeric.abs()).max(1e-3)
        })
        .fold(0.0, f64::max)
}

fn criterion_4() -> Check {
    let truth = [0.09415, 2.548, 1.96];
    let pts: Vec<_> = grid84().into_iter().map(|s| (s, GaussianBump.value(s, &truth))).collect();
    let single = lm_gaussian(&pts, None).map_err(|e| e.to_string())?;
    let err1 = single.params().iter().zip(truth).map(|(g, w)| (g - w).abs()).fold(0.0, f64::max);
    ensure(err1 <= 1e-6, format!("single-bump error {err1:e}"))?;

    let truth6 = [0.08199, 3.534, 0.5552, 0.09343, 1.92, 1.238];
    let pts: Vec<_> = grid84().into_iter().map(|s| (s, DoubleGaussianBump.value(s, &truth6))).collect();
    let double = lm_double_gaussian(&pts, None).map_err(|e| e.to_string())?;
    // components come back ordered by center
    let want = [0.09343, 1.92, 1.238, 0.08199, 3.534, 0.5552];
    let err2 = double.params().iter().zip(want).map(|(g, w)| (g - w).abs()).fold(0.0, f64::max);
    ensure(err2 <= 1e-5, format!("double-bump error {err2:e}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let a = [rng.random_range(0.01..0.2), rng.random_range(0.0..4.2), rng.random_range(0.3..3.0)];
        let b = [rng.random_range(0.01..0.2), rng.random_range(0.0..4.2), rng.random_range(0.3..3.0)];
        let x = rng.random_range(0.0..4.2);
        let ab: Vec<f64> = a.iter().chain(&b).copied().collect();
        let pdf = [rng.random_range(0.2..1.0), rng.random_range(0.02..0.2)];
        worst = worst
            .max(jacobian_error(&GaussianBump, &a, x))
            .max(jacobian_error(&DoubleGaussianBump, &ab, x))
            .max(jacobian_error(&GaussianPdf, &pdf, rng.random_range(0.0..1.0)));
    }
    ensure(worst <= 1e-5, format!("Jacobian relative error {worst:e}"))?;
    Ok(format!("errors {err1:.1e} / {err2:.1e}, Jacobian {worst:.1e}"))
}

fn criterion_5() -> Check {
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let s = real_entropy_lz(&uniform_sequence(4, 10_000, seed)).map_err(|e| e.to_string())?;
        worst = worst.max((s - 2.0).abs() / 2.0);
    }
    ensure(worst <= 0.1, format!("relative LZ error {worst}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut lengths: Vec<usize> = (0..30).map(|_| rng.random_range(2..=1_000)).collect();
    lengths.extend([2, 3, 5_000]);
    for n in lengths {
        let seq = uniform_sequence(rng.random_range(1..=6), n, rng.random());
        let (fast, slow) = (real_entropy_lz(&seq).unwrap(), real_entropy_oracle(&seq).unwrap());
        ensure((fast - slow).abs() <= 1e-12 * slow.max(1.0), format!("n={n}: {fast} vs {slow}"))?;
    }
    let constant = real_entropy_lz(&vec![0u32; 10_000]).unwrap();
    ensure(constant < 0.05, format!("constant sequence {constant}"))?;
    Ok(format!("max relative error {worst:.3}, oracle agrees, constant {constant:.4}"))
}

fn criterion_6() -> Check {
    let opts = EvaluationOptions::default();
    let period: Vec<u32> = (0..1_000).map(|i| i % 2).collect();
    let (attempts, hits) = evaluate_sequence(&period, &opts).map_err(|e| e.to_string())?;
    let periodic = hits as f64 / attempts as f64;
    ensure(periodic >= 0.99, format!("period-2 accuracy {periodic}"))?;
    let mut worst = 0.0f64;
    for l in [2u32, 4, 8] {
        for seed in 0..20 {
            let (attempts, hits) = evaluate_sequence(&uniform_sequence(l, 10_000, seed), &opts).unwrap();
            worst = worst.max((hits as f64 / attempts as f64 - 1.0 / l as f64).abs());
        }
    }
    ensure(worst <= 0.02, format!("uniform deviation {worst}"))?;
    Ok(format!("period-2 {periodic:.4}, max |acc - 1/L| {worst:.4}"))
}

fn criterion_7() -> Check {
    let normal = Normal::new(0.6, 0.08).unwrap();
    let passes = (0..50u64)
        .filter(|&seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let xs: Vec<f64> = (0..1_000).map(|_| normal.sample(&mut rng)).collect();
            ks_test(&xs, 0.6, 0.08, 0.05).unwrap().pass
        })
        .count();
    ensure(passes >= 45, format!("{passes}/50 passed"))?;
    let d = ks_test(&[0.0], 0.0, 1.0, 0.05).map_err(|e| e.to_string())?.statistic;
    ensure((d - 0.5).abs() < 1e-12, format!("single-point D {d}"))?;
    Ok(format!("{passes}/50 runs pass, D = {d}"))
}

struct EndToEnd {
    outcome: FitOutcome,
    rows: Vec<(mobacc_core::entropy::EntropyProfile, mobacc_core::markov::PredictionResult)>,
    artifacts: Vec<u8>,
}

fn end_to_end(threads: usize) -> Result<EndToEnd, String> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| e.to_string())?;
    pool.install(|| {
        let config = GeneratorConfig {
            n_users: 2_000,
            seq_length: 5_000,
            n_locations: 16,
            tour_period: 8,
            rho_min: 0.0,
            rho_max: 1.0,
            seed: 2014,
            ..Default::default()
        };
        let users = generate(&config).map_err(|e| e.to_string())?;
        let rows = analyze(&users, &AnalyzeOptions::default()).map_err(|e| e.to_string())?.rows;
        let provenance = Provenance {
            dataset_id: "synthetic-2014".into(),
            timestamp: "1970-01-01T00:00:00Z".into(),
            tool_version: "acceptance".into(),
        };
        let outcome = fit_rows(&rows, &FitOptions::default(), provenance).map_err(|e| e.to_string())?;
        let mut artifacts = Vec::new();
        let profiles: Vec<_> = rows.iter().map(|r| r.0.clone()).collect();
        let predictions: Vec<_> = rows.iter().map(|r| r.1.clone()).collect();
        write_entropy_report(&mut artifacts, &profiles).map_err(|e| e.to_string())?;
        write_accuracy_report(&mut artifacts, &predictions).map_err(|e| e.to_string())?;
        write_interval_report(&mut artifacts, &outcome.intervals).map_err(|e| e.to_string())?;
        artifacts.extend(outcome.report_json().bytes());
        artifacts.extend(outcome.model.to_json().bytes());
        for t in plot_tables(&rows, &outcome) {
            artifacts.extend(t.contents.bytes());
        }
        Ok(EndToEnd { outcome, rows, artifacts })
    })
}

fn criterion_8(first: &Result<EndToEnd, String>, rerun: &Result<EndToEnd, String>, elapsed: Duration) -> Check {
    let run = first.as_ref().map_err(Clone::clone)?;
    let again = rerun.as_ref().map_err(Clone::clone)?;
    let o = &run.outcome;
    let populated = o.intervals.intervals.iter().filter(|f| f.user_count >= 10).count();
    ensure(populated >= 20, format!("{populated} intervals with >= 10 users"))?;
    let a = o.model.mu_line().a;
    ensure(a < 0.0, format!("mu.a = {a}"))?;
    let selected = o.filtered.selected.as_str();
    ensure(o.report_json().contains(&format!("\"selected_sigma\": \"{selected}\"")), "selection not recorded")?;
    let worst = o
        .intervals
        .intervals
        .iter()
        .filter_map(|f| f.kde.as_ref())
        .map(|g| (g.trapezoid_integral() - 1.0).abs())
        .fold(0.0, f64::max);
    ensure(worst <= 0.02, format!("KDE mass error {worst}"))?;
    ensure(run.artifacts == again.artifacts, "rerun artifacts differ")?;
    ensure(elapsed < Duration::from_secs(300), format!("took {elapsed:?}"))?;
    Ok(format!(
        "{populated} intervals >= 10 users, mu.a = {a:.4}, sigma model {selected}, KDE mass error {worst:.1e}, \
         {} artifact bytes identical across 1 and 4 threads, {:.1?} per run",
        run.artifacts.len(),
        elapsed
    ))
}

fn criterion_9(first: &Result<EndToEnd, String>) -> Check {
    let run = first.as_ref().map_err(Clone::clone)?;
    let mut min_sd = f64::INFINITY;
    let mut checked = 0;
    for f in run.outcome.intervals.intervals.iter().filter(|f| f.user_count >= 2) {
        checked += 1;
        min_sd = min_sd.min(f.sample_sd);
    }
    ensure(min_sd > 0.0, format!("an interval has zero accuracy spread (min sd {min_sd})"))?;
    let s: Vec<f64> = run.rows.iter().map(|r| r.0.s_real).collect();
    let acc: Vec<f64> = run.rows.iter().map(|r| r.1.accuracy).collect();
    let rho = spearman(&s, &acc).map_err(|e| e.to_string())?;
    ensure(rho < -0.8, format!("Spearman {rho}"))?;
    let all_sd = sample_sd(&acc);
    Ok(format!("{checked} intervals with >= 2 users, min sd {min_sd:.4}, Spearman {rho:.4}, overall sd {all_sd:.3}"))
}

fn timed(limit: Duration, f: impl FnOnce() -> Check) -> Check {
    let start = Instant::now();
    let out = f()?;
    let took = start.elapsed();
    ensure(took < limit, format!("took {took:?}, limit {limit:?}"))?;
    Ok(format!("{out} [{took:.2?}]"))
}

fn main() -> ExitCode {
    let mut results: Vec<(u32, &str, Check)> = vec![
        (1, "fixture mu fit", timed(Duration::from_secs(1), criterion_1)),
        (2, "fixture sigma fit", timed(Duration::from_secs(1), criterion_2)),
        (3, "density evaluation", timed(Duration::from_secs(1), criterion_3)),
        (4, "LM solver oracle", timed(Duration::from_secs(5), criterion_4)),
        (5, "entropy estimator", timed(Duration::from_secs(30), criterion_5)),
        (6, "Markov predictor", timed(Duration::from_secs(30), criterion_6)),
        (7, "KS calibration", timed(Duration::from_secs(10), criterion_7)),
    ];
    let start = Instant::now();
    let first = end_to_end(4);
    let elapsed = start.elapsed();
    let rerun = end_to_end(1);
    results.push((8, "end-to-end synthetic pipeline", criterion_8(&first, &rerun, elapsed)));
    results.push((9, "same-entropy accuracy spread", criterion_9(&first)));

    let mut failed = 0;
    for (n, name, r) in &results {
        match r {
            Ok(detail) => println!("criterion {n} PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {n} FAIL {name}: {why}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
