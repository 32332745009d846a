use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_mobacc");

const PAPER_MODEL: &str = r#"{
  "mu": {"a": -0.1726, "b": 0.9845},
  "sigma": {"A": 0.09415, "m": 2.548, "w": 1.96},
  "interval_width": 0.05,
  "n_intervals": 84,
  "truncated": TRUNC,
  "provenance": {"dataset_id": "paper", "timestamp": "2014-01-01T00:00:00Z", "tool_version": "test"}
}"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env("SOURCE_DATE_EPOCH", "0")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn value(o: &Output) -> f64 {
    assert!(o.status.success(), "{}", stderr(o));
    stdout(o).trim().parse().unwrap()
}

fn write_model(dir: &Path, truncated: bool) -> String {
    let path = dir.join(if truncated { "trunc.json" } else { "paper.json" });
    fs::write(&path, PAPER_MODEL.replace("TRUNC", &truncated.to_string())).unwrap();
    path.file_name().unwrap().to_str().unwrap().to_owned()
}

/// Writes a 12-column CDR file: `u1` is active on 150 days, `u2` on 149.
fn write_cdr(path: &Path) {
    let mut text = String::from(
        "SERVICE_NBR,CALL_TYPE,OPPOSITE_NO,TOLLTYPE_ID,ROAM_TYPE,START_TIME,END_TIME,DURATION,CITY_ID,ROAM_CITY_ID,OPPCITY_ID,LAC_ID\n",
    );
    for (user, days) in [("u1", 150), ("u2", 149)] {
        for d in 0..days {
            for h in [8, 18] {
                let t = 1_404_172_800 + d * 86_400 + h * 3_600;
                let lac = if h == 8 { "home" } else { "work" };
                text.push_str(&format!("{user},1,x,0,0,{t},{t},60,10,10,10,{lac}\n"));
            }
        }
    }
    text.push_str("broken,line\n");
    fs::write(path, text).unwrap();
}

#[test]
fn ingest_applies_the_active_day_filter() {
    let dir = tempfile::tempdir().unwrap();
    write_cdr(&dir.path().join("cdr.csv"));
    let o = run(dir.path(), &["ingest", "--input", "cdr.csv", "--out", "t.csv", "--summary", "s.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("s.json")).unwrap()).unwrap();
    assert_eq!(summary["users_in"], 2);
    assert_eq!(summary["users_kept"], 1);
    assert_eq!(summary["records_kept"], 300);
    assert_eq!(summary["spill"], 1);
    let traj = fs::read_to_string(dir.path().join("t.csv")).unwrap();
    assert!(traj.starts_with("user_id,timestamp,location_id\nu1,1404201600,home\n"));
    assert_eq!(traj.lines().count(), 301);
}

#[test]
fn missing_input_exits_2_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["ingest", "--input", "no_such_file.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no_such_file.csv"));
    let o = run(dir.path(), &["analyze", "--trajectories", "absent.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("absent.csv"));
}

#[test]
fn generate_then_ingest_keeps_every_user() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["--seed", "3", "generate", "--out", "t.csv", "--n-users", "6", "--seq-length", "3700"]);
    assert!(o.status.success(), "{}", stderr(&o));
    // re-emit the trajectory file as CDR rows
    let traj = fs::read_to_string(dir.path().join("t.csv")).unwrap();
    let mut cdr = String::from("SERVICE_NBR,START_TIME,ROAM_CITY_ID,LAC_ID\n");
    for line in traj.lines().skip(1) {
        let f: Vec<_> = line.split(',').collect();
        cdr.push_str(&format!("{},{},0,{}\n", f[0], f[1], f[2]));
    }
    fs::write(dir.path().join("cdr.csv"), cdr).unwrap();
    let o = run(dir.path(), &["ingest", "--input", "cdr.csv", "--out", "back.csv", "--summary", "s.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("s.json")).unwrap()).unwrap();
    assert_eq!(summary["users_kept"], 6);
    assert_eq!(fs::read(dir.path().join("back.csv")).unwrap(), traj.into_bytes());
}

#[test]
fn analyze_is_deterministic_and_noiseless_users_are_predictable() {
    let dir = tempfile::tempdir().unwrap();
    let gen = ["generate", "--out", "t.csv", "--n-users", "5", "--seq-length", "1000", "--rho-min", "0", "--rho-max", "0"];
    assert!(run(dir.path(), &gen).status.success());
    let o = run(dir.path(), &["analyze", "--trajectories", "t.csv", "--out-dir", "a"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(dir.path(), &["--threads", "1", "analyze", "--trajectories", "t.csv", "--out-dir", "b"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["entropy.csv", "accuracy.csv"] {
        assert_eq!(fs::read(dir.path().join("a").join(f)).unwrap(), fs::read(dir.path().join("b").join(f)).unwrap());
    }
    let acc = fs::read_to_string(dir.path().join("a/accuracy.csv")).unwrap();
    let rows: Vec<_> = acc.lines().skip(1).collect();
    assert_eq!(rows.len(), 5);
    for r in rows {
        let accuracy: f64 = r.rsplit(',').next().unwrap().parse().unwrap();
        assert!(accuracy >= 0.99, "{r}");
    }
}

#[test]
fn analyze_user_errors_exit_1_unless_skipped() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("t.csv"),
        "user_id,timestamp,location_id\nlong,0,a\nlong,1,b\nlong,2,a\nlong,3,b\nshort,0,a\n",
    )
    .unwrap();
    let o = run(dir.path(), &["analyze", "--trajectories", "t.csv", "--out-dir", "r"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("short"));
    let o = run(dir.path(), &["analyze", "--trajectories", "t.csv", "--out-dir", "r", "--skip-bad-users"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(dir.path().join("r/entropy.csv")).unwrap().lines().count(), 2);
    assert!(fs::read_to_string(dir.path().join("r/skipped_users.json")).unwrap().contains("short"));
}

#[test]
fn paper_fixture_fit() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["fit", "--fixture", "paper9", "--out-dir", "f"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let model: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("f/model.json")).unwrap()).unwrap();
    // closed-form slope of the nine reference (s, mu) pairs
    let s = [0.05, 0.55, 1.05, 1.55, 2.05, 2.55, 3.05, 3.55, 4.05];
    let mu = [0.999, 0.928, 0.814, 0.689, 0.580, 0.500, 0.449, 0.419, 0.279];
    let (ms, mm) = (s.iter().sum::<f64>() / 9.0, mu.iter().sum::<f64>() / 9.0);
    let sxy: f64 = s.iter().zip(mu).map(|(x, y)| (x - ms) * (y - mm)).sum();
    let sxx: f64 = s.iter().map(|x| (x - ms).powi(2)).sum();
    let a = model["mu"]["a"].as_f64().unwrap();
    assert!((a - sxy / sxx).abs() < 1e-9, "{a}");
    assert!((a + 0.17753).abs() < 5e-6);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("f/fit_report.json")).unwrap()).unwrap();
    let selected = report["filtered"]["selected_sigma"].as_str().unwrap();
    assert!(["polynomial", "gaussian", "double_gaussian"].contains(&selected));
    assert!(dir.path().join("f/plots/sigma_curves.csv").exists());
}

#[test]
fn eval_examples() {
    let dir = tempfile::tempdir().unwrap();
    let plain = write_model(dir.path(), false);
    let trunc = write_model(dir.path(), true);
    let pdf = value(&run(dir.path(), &["eval", "--model", &plain, "--s", "2.55", "--x", "0.54437"]));
    assert!((pdf - 4.2372).abs() < 1e-3, "{pdf}");
    let mass = value(&run(dir.path(), &["eval", "--model", &trunc, "--s", "2.55", "--range", "0", "1"]));
    assert!((mass - 1.0).abs() < 1e-6, "{mass}");

    let (mu, sigma) = (-0.1726 * 2.55 + 0.9845, 0.09415 * (-((2.55f64 - 2.548) / 1.96).powi(2)).exp());
    let (lo, hi) = ((mu - sigma).to_string(), (mu + sigma).to_string());
    let mass = value(&run(dir.path(), &["eval", "--model", &plain, "--s", "2.55", "--range", &lo, &hi]));
    assert!((mass - 0.6827).abs() < 1e-4, "{mass}");

    let o = run(dir.path(), &["eval", "--model", &plain, "--s", "5.0", "--x", "0.5"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let o = run(dir.path(), &["eval", "--model", &plain, "--s", "2.548", "--x", "0.5", "--extrapolate"]);
    assert!(o.status.success());
    let o = run(dir.path(), &["eval", "--model", "missing.json", "--s", "2.55", "--x", "0.5"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_names_missing_model_fields() {
    let dir = tempfile::tempdir().unwrap();
    let broken = PAPER_MODEL.replace("TRUNC", "false").replace(", \"w\": 1.96", "");
    fs::write(dir.path().join("m.json"), broken).unwrap();
    let o = run(dir.path(), &["eval", "--model", "m.json", "--s", "2.55", "--x", "0.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sigma.w"), "{}", stderr(&o));
}

#[test]
fn fit_with_too_few_intervals_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let mut entropy = String::from("user_id,n,unique_locations,s_rand,s_unc,s_real\n");
    let mut accuracy = String::from("user_id,order,attempts,hits,accuracy\n");
    for i in 0..40 {
        entropy.push_str(&format!("u{i:02},100,4,2.0,1.5,{:.6}\n", 1.01 + 0.05 * (i % 3) as f64));
        accuracy.push_str(&format!("u{i:02},2,98,{},0.5\n", 40 + i));
    }
    fs::write(dir.path().join("entropy.csv"), entropy).unwrap();
    fs::write(dir.path().join("accuracy.csv"), accuracy).unwrap();
    let o = run(dir.path(), &["fit", "--out-dir", "."]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("intervals"));
}

#[test]
fn config_file_sets_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("c.toml"),
        "seed = 5\noutput_dir = \"cfg_out\"\n[generator]\nn_users = 4\nseq_length = 200\n",
    )
    .unwrap();
    let o = run(dir.path(), &["--config", "c.toml", "generate", "--n-users", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let traj = fs::read_to_string(dir.path().join("cfg_out/trajectories.csv")).unwrap();
    assert_eq!(traj.lines().count(), 1 + 3 * 200);
    fs::write(dir.path().join("bad.toml"), "nonsense_key = 1\n").unwrap();
    let o = run(dir.path(), &["--config", "bad.toml", "generate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn run_all_writes_every_stage_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["--seed", "11", "run-all", "--n-users", "400", "--seq-length", "3700", "--min-bin-size", "5"];
    let mut a = args.to_vec();
    a.extend(["--out-dir", "a"]);
    let o = run(dir.path(), &a);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("eval at s ="));
    let mut b = args.to_vec();
    b.extend(["--out-dir", "b"]);
    assert!(run(dir.path(), &b).status.success());
    for f in [
        "trajectories.csv",
        "ingest_summary.json",
        "entropy.csv",
        "accuracy.csv",
        "intervals.csv",
        "fit_report.json",
        "model.json",
        "plots/mu_curve.csv",
        "plots/interval_densities.csv",
        "plots/model_densities.csv",
    ] {
        let (x, y) = (fs::read(dir.path().join("a").join(f)).unwrap(), fs::read(dir.path().join("b").join(f)).unwrap());
        assert!(x == y, "{f} differs between runs");
    }
    let model: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("a/model.json")).unwrap()).unwrap();
    assert!(model["mu"]["a"].as_f64().unwrap() < 0.0);
    assert_eq!(model["provenance"]["timestamp"], "1970-01-01T00:00:00Z");
}
