use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use mobacc_core::cdr_ingest::{
    filter_active, ingest as ingest_sources, parse_timezone, read_trajectories, write_trajectories, CdrLayout,
    ColumnMap, IngestOptions, IngestSummary,
};
use mobacc_core::curve_fit::SelectionRule;
use mobacc_core::fgd_model::{FunctionalGaussianModel, Provenance};
use mobacc_core::markov::{EvaluationMode, EvaluationOptions, UnseenContext};
use mobacc_core::pipeline::{
    self, curve_tables, fit_paper9, fit_rows, model_density_table, paper9_report_json, plot_tables, AnalyzeOptions,
    PlotTable,
};
use mobacc_core::report::{
    join_reports, read_accuracy_report, read_entropy_report, write_accuracy_report, write_entropy_report,
    write_interval_report,
};
use mobacc_core::synthgen::generate_users;
use serde_json::json;

use crate::config::PipelineConfig;
use crate::output::{atomic_write, open, write_text, Context, Failure};
use crate::{
    AnalyzeArgs, AnalyzeFlags, EvalArgs, FitArgs, FitFlags, Fixture, GenerateArgs, GeneratorArgs, IngestArgs,
    IngestFlags, RunAllArgs, SelectionArg, UnseenArg,
};

type CmdResult<T = ()> = Result<T, Failure>;

const TRAJECTORIES: &str = "trajectories.csv";
const INGEST_SUMMARY: &str = "ingest_summary.json";
const ENTROPY: &str = "entropy.csv";
const ACCURACY: &str = "accuracy.csv";
const SKIPPED: &str = "skipped_users.json";
const INTERVALS: &str = "intervals.csv";
const FIT_REPORT: &str = "fit_report.json";
const MODEL: &str = "model.json";
const PLOTS: &str = "plots";

fn apply_generator(config: &mut PipelineConfig, args: &GeneratorArgs) {
    let g = &mut config.generator;
    if let Some(v) = args.n_users {
        g.n_users = v;
    }
    if let Some(v) = args.seq_length {
        g.seq_length = v;
    }
    if let Some(v) = args.n_locations {
        g.n_locations = v;
    }
    if let Some(v) = args.rho_min {
        g.rho_min = v;
    }
    if let Some(v) = args.rho_max {
        g.rho_max = v;
    }
    if let Some(v) = args.tour_period {
        g.tour_period = v;
    }
}

fn apply_ingest(config: &mut PipelineConfig, flags: &IngestFlags) {
    if let Some(d) = flags.delimiter {
        config.delimiter = d;
    }
    if let Some(tz) = &flags.timezone {
        config.timezone = tz.clone();
    }
    config.positional |= flags.positional;
    if let Some(n) = flags.min_active_days {
        config.min_active_days = n;
    }
    config.collapse_duplicates |= flags.collapse_duplicates;
    if flags.roam_city.is_some() {
        config.roam_city = flags.roam_city.clone();
    }
}

fn apply_analyze(config: &mut PipelineConfig, flags: &AnalyzeFlags) {
    if let Some(k) = flags.order {
        config.order = k;
    }
    if let Some(u) = flags.unseen {
        config.unseen = match u {
            UnseenArg::Backoff => UnseenContext::Backoff,
            UnseenArg::Miss => UnseenContext::Miss,
        };
    }
    if flags.split.is_some() {
        config.split = flags.split;
    }
    config.skip_bad_users |= flags.skip_bad_users;
}

fn apply_fit(config: &mut PipelineConfig, flags: &FitFlags) {
    if let Some(v) = flags.interval_width {
        config.interval_width = v;
    }
    if let Some(v) = flags.n_intervals {
        config.n_intervals = v;
    }
    if let Some(v) = flags.grid_size {
        config.grid_size = v;
    }
    if let Some(v) = flags.alpha {
        config.alpha = v;
    }
    if let Some(v) = flags.min_bin_size {
        config.min_bin_size = v;
    }
    if let Some(s) = flags.selection {
        config.selection = match s {
            SelectionArg::MinMse => SelectionRule::MinMse,
            SelectionArg::Bic => SelectionRule::Bic,
        };
    }
    config.weighted |= flags.weighted;
    config.truncated |= flags.truncated;
    if flags.dataset_id.is_some() {
        config.dataset_id = flags.dataset_id.clone();
    }
}

fn timezone(config: &PipelineConfig) -> CmdResult<chrono::FixedOffset> {
    parse_timezone(&config.timezone).map_err(Failure::usage)
}

fn write_tables(dir: &Path, tables: &[PlotTable]) -> CmdResult {
    for t in tables {
        write_text(&dir.join(t.name), &t.contents)?;
    }
    Ok(())
}

/// Provenance timestamp: configured value, then `SOURCE_DATE_EPOCH`, then now.
fn provenance_timestamp(config: &PipelineConfig) -> CmdResult<String> {
    if let Some(ts) = &config.timestamp {
        return Ok(ts.clone());
    }
    let when = match std::env::var("SOURCE_DATE_EPOCH") {
        Ok(v) => {
            let secs: i64 = v
                .trim()
                .parse()
                .map_err(|_| Failure::usage(anyhow::anyhow!("SOURCE_DATE_EPOCH is not an integer: {v}")))?;
            DateTime::<Utc>::from_timestamp(secs, 0)
                .ok_or_else(|| Failure::usage(anyhow::anyhow!("SOURCE_DATE_EPOCH out of range: {v}")))?
        }
        Err(_) => Utc::now(),
    };
    Ok(when.format("%Y-%m-%dT%H:%M:%SZ").to_string())
}

fn provenance(config: &PipelineConfig, default_id: String) -> CmdResult<Provenance> {
    Ok(Provenance {
        dataset_id: config.dataset_id.clone().unwrap_or(default_id),
        timestamp: provenance_timestamp(config)?,
        tool_version: concat!("mobacc ", env!("CARGO_PKG_VERSION")).to_owned(),
    })
}

pub fn generate(config: &mut PipelineConfig, args: GenerateArgs) -> CmdResult {
    apply_generator(config, &args.generator);
    let out = args.out.unwrap_or_else(|| config.output_dir.join(TRAJECTORIES));
    write_synthetic(config, &out, args.truth.as_deref())?;
    Ok(())
}

fn write_synthetic(config: &PipelineConfig, out: &Path, truth: Option<&Path>) -> CmdResult<usize> {
    let users = generate_users(&config.generator_config())?;
    let trajectories: Vec<_> = users.iter().map(|u| u.trajectory.clone()).collect();
    atomic_write(out, |w| write_trajectories(w, &trajectories))?;
    if let Some(path) = truth {
        let mut text = String::from("user_id,rho\n");
        for u in &users {
            text.push_str(&format!("{},{}\n", u.trajectory.user_id(), u.rho));
        }
        write_text(path, &text)?;
    }
    println!("wrote {} synthetic users to {}", users.len(), out.display());
    Ok(users.len())
}

fn summary_json(summary: &IngestSummary) -> String {
    serde_json::to_string_pretty(summary).expect("serializable") + "\n"
}

pub fn ingest(config: &mut PipelineConfig, args: IngestArgs) -> CmdResult {
    apply_ingest(config, &args.flags);
    if !args.input.is_empty() {
        config.input = args.input;
    }
    if config.input.is_empty() {
        return Err(Failure::usage(anyhow::anyhow!("no input files given")));
    }
    if !config.delimiter.is_ascii() {
        return Err(Failure::usage(anyhow::anyhow!("delimiter must be a single ASCII character")));
    }
    let layout = CdrLayout {
        delimiter: config.delimiter as u8,
        columns: if config.positional {
            ColumnMap::Positional
        } else {
            ColumnMap::Header
        },
        timezone: timezone(config)?,
    };
    let options = IngestOptions {
        min_active_days: config.min_active_days,
        collapse_duplicates: config.collapse_duplicates,
        roam_city: config.roam_city.clone(),
    };
    let sources = config.input.iter().map(|p| open(p)).collect::<CmdResult<Vec<_>>>()?;
    let outcome = ingest_sources(sources, &layout, &options).map_err(|e| {
        let inputs: Vec<String> = config.input.iter().map(|p| p.display().to_string()).collect();
        Failure::usage(anyhow::Error::from(e).context(inputs.join(", ")))
    })?;
    for d in outcome.diagnostics.iter().take(10) {
        log::warn!("skipped line {}: {}", d.line, d.message);
    }
    if outcome.diagnostics.len() > 10 {
        log::warn!("{} more malformed lines skipped", outcome.diagnostics.len() - 10);
    }
    let out = args.out.unwrap_or_else(|| config.output_dir.join(TRAJECTORIES));
    let summary_path = args.summary.unwrap_or_else(|| config.output_dir.join(INGEST_SUMMARY));
    atomic_write(&out, |w| write_trajectories(w, &outcome.trajectories))?;
    write_text(&summary_path, &summary_json(&outcome.summary))?;
    let s = &outcome.summary;
    println!(
        "kept {} of {} users ({} of {} records), {} malformed lines",
        s.users_kept, s.users_in, s.records_kept, s.records_in, s.spill
    );
    Ok(())
}

fn evaluation_options(config: &PipelineConfig) -> EvaluationOptions {
    EvaluationOptions {
        order: config.order,
        unseen: config.unseen,
        mode: config.split.map_or(EvaluationMode::Prequential, EvaluationMode::Split),
    }
}

fn load_trajectories(config: &PipelineConfig, path: &Path) -> CmdResult<Vec<mobacc_core::cdr_ingest::Trajectory>> {
    let tz = timezone(config)?;
    read_trajectories(open(path)?, &tz).input(path)
}

fn analyze_to(config: &PipelineConfig, trajectories: &[mobacc_core::cdr_ingest::Trajectory], out_dir: &Path) -> CmdResult {
    let options = AnalyzeOptions {
        evaluation: evaluation_options(config),
        skip_bad_users: config.skip_bad_users,
    };
    let outcome = pipeline::analyze(trajectories, &options)?;
    atomic_write(&out_dir.join(ENTROPY), |w| write_entropy_report(w, &outcome.profiles()))?;
    atomic_write(&out_dir.join(ACCURACY), |w| write_accuracy_report(w, &outcome.predictions()))?;
    let skipped_path = out_dir.join(SKIPPED);
    if !outcome.skipped.is_empty() {
        let doc: Vec<_> = outcome
            .skipped
            .iter()
            .map(|s| json!({"user_id": s.user_id, "reason": s.reason}))
            .collect();
        write_text(&skipped_path, &(serde_json::to_string_pretty(&doc).expect("serializable") + "\n"))?;
    } else if skipped_path.exists() {
        std::fs::remove_file(&skipped_path).context(|| format!("cannot remove stale {}", skipped_path.display()))?;
    }
    println!(
        "analyzed {} users ({} skipped) into {}",
        outcome.rows.len(),
        outcome.skipped.len(),
        out_dir.display()
    );
    Ok(())
}

pub fn analyze(config: &mut PipelineConfig, args: AnalyzeArgs) -> CmdResult {
    apply_analyze(config, &args.flags);
    if let Some(tz) = args.timezone {
        config.timezone = tz;
    }
    let out_dir = args.out_dir.unwrap_or_else(|| config.output_dir.clone());
    let input = args.trajectories.unwrap_or_else(|| config.output_dir.join(TRAJECTORIES));
    let trajectories = load_trajectories(config, &input)?;
    analyze_to(config, &trajectories, &out_dir)
}

fn fit_to(config: &PipelineConfig, out_dir: &Path, entropy: &Path, accuracy: &Path) -> CmdResult<FunctionalGaussianModel> {
    let profiles = read_entropy_report(open(entropy)?).input(entropy)?;
    let predictions = read_accuracy_report(open(accuracy)?).input(accuracy)?;
    let rows = join_reports(profiles, predictions).input(accuracy)?;
    let prov = provenance(config, entropy.display().to_string())?;
    let outcome = fit_rows(&rows, &config.fit_options(), prov)?;
    atomic_write(&out_dir.join(INTERVALS), |w| write_interval_report(w, &outcome.intervals))?;
    write_text(&out_dir.join(FIT_REPORT), &outcome.report_json())?;
    write_text(&out_dir.join(MODEL), &outcome.model.to_json())?;
    write_tables(&out_dir.join(PLOTS), &plot_tables(&rows, &outcome))?;
    let mu = outcome.model.mu_line();
    let sigma = outcome.model.sigma_bump();
    println!(
        "mu(s) = {:.5} s + {:.5}; sigma(s) = {:.5} exp(-((s - {:.4}) / {:.4})^2); best sigma family: {}; {} intervals used",
        mu.a,
        mu.b,
        sigma.amplitude,
        sigma.center,
        sigma.width,
        outcome.filtered.selected.as_str(),
        outcome.filtered.points.len()
    );
    Ok(outcome.model)
}

pub fn fit(config: &mut PipelineConfig, args: FitArgs) -> CmdResult {
    apply_fit(config, &args.flags);
    let out_dir = args.out_dir.unwrap_or_else(|| config.output_dir.clone());
    match args.fixture {
        Some(Fixture::Paper9) => {
            let options = config.fit_options();
            let (fits, model) = fit_paper9(&options, provenance(config, "paper9".into())?)?;
            write_text(&out_dir.join(FIT_REPORT), &paper9_report_json(&fits, options.selection))?;
            write_text(&out_dir.join(MODEL), &model.to_json())?;
            let mut tables = curve_tables(&fits);
            tables.push(model_density_table(&model, 101));
            write_tables(&out_dir.join(PLOTS), &tables)?;
            println!(
                "paper9: mu(s) = {:.5} s + {:.5}; best sigma family: {}",
                fits.mu.a,
                fits.mu.b,
                fits.selected.as_str()
            );
        }
        None => {
            let entropy = args.entropy.unwrap_or_else(|| out_dir.join(ENTROPY));
            let accuracy = args.accuracy.unwrap_or_else(|| out_dir.join(ACCURACY));
            fit_to(config, &out_dir, &entropy, &accuracy)?;
        }
    }
    Ok(())
}

pub fn eval(config: &mut PipelineConfig, args: EvalArgs) -> CmdResult {
    config.extrapolate |= args.extrapolate;
    if let Some(t) = args.tolerance {
        config.tolerance = t;
    }
    if !(config.tolerance > 0.0) {
        return Err(Failure::usage(anyhow::anyhow!("tolerance must be positive")));
    }
    let text = std::fs::read_to_string(&args.model).input(&args.model)?;
    let model = FunctionalGaussianModel::from_json(&text)
        .input(&args.model)?
        .extrapolating(config.extrapolate);
    let value = match (args.x, args.range.as_deref()) {
        (Some(x), _) => model.pdf(x, args.s)?,
        (None, Some([lo, hi])) => model.probability(args.s, *lo, *hi, config.tolerance)?,
        _ => return Err(Failure::usage(anyhow::anyhow!("give --x or --range LO HI"))),
    };
    println!("{value}");
    Ok(())
}

pub fn run_all(config: &mut PipelineConfig, args: RunAllArgs) -> CmdResult {
    apply_generator(config, &args.generator);
    apply_analyze(config, &args.analyze);
    apply_fit(config, &args.fit);
    let out_dir: PathBuf = args.out_dir.unwrap_or_else(|| config.output_dir.clone());
    if config.dataset_id.is_none() {
        config.dataset_id = Some(format!("synthetic seed={}", config.seed));
    }

    let traj_path = out_dir.join(TRAJECTORIES);
    write_synthetic(config, &traj_path, None)?;

    let generated = load_trajectories(config, &traj_path)?;
    let users_in = generated.len();
    let records_in = generated.iter().map(|t| t.len()).sum();
    let kept = filter_active(generated, config.min_active_days);
    let summary = IngestSummary {
        users_in,
        users_kept: kept.len(),
        records_in,
        records_kept: kept.iter().map(|t| t.len()).sum(),
        roam_filtered: 0,
        spill: 0,
    };
    write_text(&out_dir.join(INGEST_SUMMARY), &summary_json(&summary))?;
    println!("kept {} of {} users with at least {} active days", kept.len(), users_in, config.min_active_days);

    analyze_to(config, &kept, &out_dir)?;
    let model = fit_to(config, &out_dir, &out_dir.join(ENTROPY), &out_dir.join(ACCURACY))?;

    let s = model.binning().label(model.binning().n_intervals / 2);
    let (mu, sigma) = (model.mu_of(s)?, model.sigma_of(s)?);
    let mass = model.probability(s, mu - sigma, mu + sigma, config.tolerance)?;
    println!(
        "eval at s = {s:.2}: mu = {mu:.5}, sigma = {sigma:.5}, pdf(mu) = {:.5}, P(mu +/- sigma) = {mass:.5}",
        model.pdf(mu, s)?
    );
    Ok(())
}
