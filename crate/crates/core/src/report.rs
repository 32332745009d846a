//! CSV report formats shared by the pipeline stages.

use std::io::{Read, Write};

use serde::Deserialize;

use crate::entropy::EntropyProfile;
use crate::error::{Error, Result};
use crate::interval_stats::IntervalReport;
use crate::markov::PredictionResult;

pub const ENTROPY_HEADER: [&str; 6] = ["user_id", "n", "unique_locations", "s_rand", "s_unc", "s_real"];
pub const ACCURACY_HEADER: [&str; 5] = ["user_id", "order", "attempts", "hits", "accuracy"];
pub const INTERVAL_HEADER: [&str; 8] = ["s", "user_count", "mu", "sigma", "fit_method", "ks_D", "ks_p", "ks_pass"];

/// Comment lines written above the interval table.
pub const INTERVAL_CAVEAT: &str = "\
# KS p-values use (mu, sigma) estimated from the same interval sample, so they
# are optimistic (no Lilliefors correction); read ks_pass as a screening flag.
";

fn f6(x: f64) -> String {
    format!("{x:.6}")
}

fn check_header<R: Read>(reader: &mut csv::Reader<R>, expected: &[&str]) -> Result<()> {
    let header = reader.headers()?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header {}, found {}", expected.join(","), header.iter().collect::<Vec<_>>().join(",")),
        });
    }
    Ok(())
}

fn row_error(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

pub fn write_entropy_report<W: Write>(writer: W, rows: &[EntropyProfile]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(ENTROPY_HEADER)?;
    for p in rows {
        w.write_record([
            p.user_id.clone(),
            p.sequence_length.to_string(),
            p.n_unique_locations.to_string(),
            f6(p.s_rand),
            f6(p.s_unc),
            f6(p.s_real),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Deserialize)]
struct EntropyRow {
    user_id: String,
    n: usize,
    unique_locations: usize,
    s_rand: f64,
    s_unc: f64,
    s_real: f64,
}

pub fn read_entropy_report<R: Read>(reader: R) -> Result<Vec<EntropyProfile>> {
    let mut r = csv::Reader::from_reader(reader);
    check_header(&mut r, &ENTROPY_HEADER)?;
    r.deserialize::<EntropyRow>()
        .map(|row| {
            let row = row.map_err(row_error)?;
            Ok(EntropyProfile {
                user_id: row.user_id,
                s_rand: row.s_rand,
                s_unc: row.s_unc,
                s_real: row.s_real,
                n_unique_locations: row.unique_locations,
                sequence_length: row.n,
            })
        })
        .collect()
}

pub fn write_accuracy_report<W: Write>(writer: W, rows: &[PredictionResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(ACCURACY_HEADER)?;
    for p in rows {
        w.write_record([
            p.user_id.clone(),
            p.order.to_string(),
            p.attempts.to_string(),
            p.hits.to_string(),
            f6(p.accuracy),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Deserialize)]
struct AccuracyRow {
    user_id: String,
    order: usize,
    attempts: u64,
    hits: u64,
}

/// Accuracy is recomputed from the counts rather than trusted from the
/// rounded column.
pub fn read_accuracy_report<R: Read>(reader: R) -> Result<Vec<PredictionResult>> {
    let mut r = csv::Reader::from_reader(reader);
    check_header(&mut r, &ACCURACY_HEADER)?;
    r.deserialize::<AccuracyRow>()
        .map(|row| {
            let row = row.map_err(row_error)?;
            if row.attempts == 0 || row.hits > row.attempts {
                return Err(Error::domain(format!(
                    "user {}: {} hits out of {} attempts",
                    row.user_id, row.hits, row.attempts
                )));
            }
            Ok(PredictionResult {
                accuracy: row.hits as f64 / row.attempts as f64,
                user_id: row.user_id,
                order: row.order,
                attempts: row.attempts,
                hits: row.hits,
            })
        })
        .collect()
}

/// Pairs the two reports by user id. Both must list the same users.
pub fn join_reports(
    entropy: Vec<EntropyProfile>,
    accuracy: Vec<PredictionResult>,
) -> Result<Vec<(EntropyProfile, PredictionResult)>> {
    let mut accuracy: std::collections::BTreeMap<String, PredictionResult> =
        accuracy.into_iter().map(|p| (p.user_id.clone(), p)).collect();
    let mut rows = Vec::with_capacity(entropy.len());
    for e in entropy {
        let a = accuracy
            .remove(&e.user_id)
            .ok_or_else(|| Error::domain(format!("user {} has no accuracy row", e.user_id)))?;
        rows.push((e, a));
    }
    if let Some(user) = accuracy.keys().next() {
        return Err(Error::domain(format!("user {user} has no entropy row")));
    }
    Ok(rows)
}

pub fn write_interval_report<W: Write>(mut writer: W, report: &IntervalReport) -> Result<()> {
    writer.write_all(INTERVAL_CAVEAT.as_bytes())?;
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(INTERVAL_HEADER)?;
    for f in &report.intervals {
        w.write_record([
            format!("{:.2}", f.s),
            f.user_count.to_string(),
            f6(f.mu),
            f6(f.sigma),
            f.fit_method.as_str().to_owned(),
            f6(f.ks.statistic),
            f6(f.ks.p_value),
            f.ks.pass.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interval_stats::{analyze_intervals, IntervalConfig};

    fn profile(id: &str, s: f64) -> EntropyProfile {
        EntropyProfile {
            user_id: id.into(),
            s_rand: 2.0,
            s_unc: 1.5,
            s_real: s,
            n_unique_locations: 4,
            sequence_length: 100,
        }
    }

    fn result(id: &str, hits: u64) -> PredictionResult {
        PredictionResult {
            user_id: id.into(),
            order: 2,
            attempts: 98,
            hits,
            accuracy: hits as f64 / 98.0,
        }
    }

    #[test]
    fn entropy_round_trip() {
        let rows = vec![profile("a", 1.25), profile("b", 0.1234567)];
        let mut buf = Vec::new();
        write_entropy_report(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("user_id,n,unique_locations,s_rand,s_unc,s_real\na,100,4,2.000000,1.500000,1.250000\n"));
        let back = read_entropy_report(&buf[..]).unwrap();
        assert_eq!(back[0], rows[0]);
        assert_eq!(back[1].s_real, 0.123457);
    }

    #[test]
    fn accuracy_round_trip_recomputes() {
        let rows = vec![result("a", 49), result("b", 98)];
        let mut buf = Vec::new();
        write_accuracy_report(&mut buf, &rows).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().contains("a,2,98,49,0.500000"));
        assert_eq!(read_accuracy_report(&buf[..]).unwrap(), rows);
        assert!(read_accuracy_report(&b"user_id,order,attempts,hits,accuracy\nx,2,3,4,1\n"[..]).is_err());
        assert!(matches!(read_accuracy_report(&b"id,order\n"[..]), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn join_requires_same_users() {
        let joined = join_reports(vec![profile("b", 1.0), profile("a", 2.0)], vec![result("a", 1), result("b", 2)]).unwrap();
        assert_eq!(joined[0].1.user_id, "b");
        assert!(join_reports(vec![profile("a", 1.0)], vec![result("a", 1), result("c", 2)]).is_err());
        assert!(join_reports(vec![profile("a", 1.0), profile("c", 1.0)], vec![result("a", 1)]).is_err());
    }

    #[test]
    fn interval_report_layout() {
        let pairs: Vec<(f64, f64)> = (0..40).map(|i| (0.12, 0.5 + 0.01 * (i % 7) as f64)).collect();
        let report = analyze_intervals(&pairs, &IntervalConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_interval_report(&mut buf, &report).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert!(lines[0].starts_with('#') && lines[1].starts_with('#'));
        assert_eq!(lines[2], INTERVAL_HEADER.join(","));
        assert!(lines[3].starts_with("0.15,40,"), "{}", lines[3]);
        assert!(lines[3].contains(",kde-least-squares,"));
        assert_eq!(lines.len(), 4);
    }
}
