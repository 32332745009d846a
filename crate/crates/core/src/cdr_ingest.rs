//! CDR record parsing, per-user trajectory assembly and the active-day filter.
//!
//! Input is delimited text with the twelve CDR columns. Only the user, start
//! time, roaming city and location area are interpreted; the other columns are
//! carried through untouched. Trajectories keep their locations interned into a
//! per-user vocabulary sorted ascending, so symbol order equals string order.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::{FixedOffset, NaiveDateTime, TimeZone};

use crate::error::{Error, Result};

pub const DEFAULT_MIN_ACTIVE_DAYS: usize = 150;

const SECONDS_PER_DAY: i64 = 86_400;

/// The twelve CDR columns, in the order the operator export lists them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CdrField {
    ServiceNbr,
    CallType,
    OppositeNo,
    TolltypeId,
    RoamType,
    StartTime,
    EndTime,
    Duration,
    CityId,
    RoamCityId,
    OppcityId,
    LacId,
}

impl CdrField {
    pub const ALL: [CdrField; 12] = [
        CdrField::ServiceNbr,
        CdrField::CallType,
        CdrField::OppositeNo,
        CdrField::TolltypeId,
        CdrField::RoamType,
        CdrField::StartTime,
        CdrField::EndTime,
        CdrField::Duration,
        CdrField::CityId,
        CdrField::RoamCityId,
        CdrField::OppcityId,
        CdrField::LacId,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CdrField::ServiceNbr => "SERVICE_NBR",
            CdrField::CallType => "CALL_TYPE",
            CdrField::OppositeNo => "OPPOSITE_NO",
            CdrField::TolltypeId => "TOLLTYPE_ID",
            CdrField::RoamType => "ROAM_TYPE",
            CdrField::StartTime => "START_TIME",
            CdrField::EndTime => "END_TIME",
            CdrField::Duration => "DURATION",
            CdrField::CityId => "CITY_ID",
            CdrField::RoamCityId => "ROAM_CITY_ID",
            CdrField::OppcityId => "OPPCITY_ID",
            CdrField::LacId => "LAC_ID",
        }
    }

    pub fn from_name(name: &str) -> Option<CdrField> {
        let name = name.trim();
        CdrField::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(name))
    }

    fn slot(self) -> usize {
        self as usize
    }
}

const INTERPRETED: [CdrField; 4] = [
    CdrField::ServiceNbr,
    CdrField::StartTime,
    CdrField::RoamCityId,
    CdrField::LacId,
];

/// One parsed CDR line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CdrRecord {
    pub service_nbr: String,
    /// Epoch seconds.
    pub start_time: i64,
    pub roam_city_id: String,
    pub lac_id: String,
    pub call_type: String,
    pub opposite_no: String,
    pub tolltype_id: String,
    pub roam_type: String,
    pub end_time: String,
    pub duration: String,
    pub city_id: String,
    pub oppcity_id: String,
}

/// How columns map onto [`CdrField`]s.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnMap {
    /// First row is a header; columns are located by name.
    Header,
    /// No header; columns appear in [`CdrField::ALL`] order.
    Positional,
    /// No header; rows have `width` fields and each mapped field sits at the
    /// given zero-based index. Unmapped uninterpreted fields read as empty.
    Explicit {
        columns: BTreeMap<CdrField, usize>,
        width: usize,
    },
}

#[derive(Debug, Clone)]
pub struct CdrLayout {
    pub delimiter: u8,
    pub columns: ColumnMap,
    /// Offset used to interpret civil timestamps and to compute calendar dates.
    pub timezone: FixedOffset,
}

impl Default for CdrLayout {
    fn default() -> Self {
        CdrLayout {
            delimiter: b',',
            columns: ColumnMap::Header,
            timezone: utc(),
        }
    }
}

pub fn utc() -> FixedOffset {
    FixedOffset::east_opt(0).expect("zero offset")
}

/// Parses "+08:00", "-0530", "UTC" or "Z" into a fixed offset.
pub fn parse_timezone(text: &str) -> Result<FixedOffset> {
    let t = text.trim();
    if t.eq_ignore_ascii_case("utc") || t == "Z" {
        return Ok(utc());
    }
    let (sign, rest) = match t.as_bytes().first() {
        Some(b'+') => (1, &t[1..]),
        Some(b'-') => (-1, &t[1..]),
        _ => return Err(Error::Config(format!("bad timezone offset {text:?}"))),
    };
    let digits: String = rest.chars().filter(|c| *c != ':').collect();
    if digits.len() != 4 || !digits.chars().all(|c| c.is_ascii_digit()) {
        return Err(Error::Config(format!("bad timezone offset {text:?}")));
    }
    let hours: i32 = digits[..2].parse().unwrap();
    let minutes: i32 = digits[2..].parse().unwrap();
    FixedOffset::east_opt(sign * (hours * 3600 + minutes * 60))
        .ok_or_else(|| Error::Config(format!("timezone offset out of range {text:?}")))
}

/// Accepts epoch seconds or `YYYY-MM-DD HH:MM:SS` (civil time in `tz`).
pub fn parse_timestamp(text: &str, tz: &FixedOffset) -> Option<i64> {
    let t = text.trim();
    if t.is_empty() {
        return None;
    }
    if let Ok(secs) = t.parse::<i64>() {
        return Some(secs);
    }
    let naive = NaiveDateTime::parse_from_str(t, "%Y-%m-%d %H:%M:%S")
        .or_else(|_| NaiveDateTime::parse_from_str(t, "%Y-%m-%dT%H:%M:%S"))
        .ok()?;
    tz.from_local_datetime(&naive).single().map(|dt| dt.timestamp())
}

fn day_index(ts: i64, tz: &FixedOffset) -> i64 {
    (ts + i64::from(tz.local_minus_utc())).div_euclid(SECONDS_PER_DAY)
}

/// A recoverable problem with a single input line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineDiagnostic {
    pub line: u64,
    pub message: String,
}

impl From<LineDiagnostic> for Error {
    fn from(d: LineDiagnostic) -> Self {
        Error::Parse {
            line: d.line,
            message: d.message,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[allow(clippy::large_enum_variant)]
pub enum ParseEvent {
    Record(CdrRecord),
    Malformed(LineDiagnostic),
}

/// Streaming CDR reader. Yields records and per-line diagnostics in input
/// order; an `Err` item is fatal and ends the stream.
pub struct RecordStream<R: Read> {
    reader: csv::Reader<R>,
    slots: Option<[usize; 12]>,
    expected_width: usize,
    timezone: FixedOffset,
    failed: bool,
    header_pending: bool,
}

pub fn parse_records<R: Read>(source: R, layout: &CdrLayout) -> RecordStream<R> {
    let reader = csv::ReaderBuilder::new()
        .delimiter(layout.delimiter)
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let (slots, header_pending) = match &layout.columns {
        ColumnMap::Header => (None, true),
        ColumnMap::Positional => (Some(std::array::from_fn(|i| i)), false),
        ColumnMap::Explicit { columns, .. } => {
            let mut slots = [usize::MAX; 12];
            for (field, idx) in columns {
                slots[field.slot()] = *idx;
            }
            (Some(slots), false)
        }
    };
    let expected_width = match &layout.columns {
        ColumnMap::Explicit { width, .. } => *width,
        _ => 12,
    };
    RecordStream {
        reader,
        slots,
        expected_width,
        timezone: layout.timezone,
        failed: false,
        header_pending,
    }
}

impl<R: Read> RecordStream<R> {
    fn resolve_header(&mut self, header: &csv::StringRecord) -> Result<()> {
        let mut slots = [usize::MAX; 12];
        for (idx, name) in header.iter().enumerate() {
            if let Some(field) = CdrField::from_name(name) {
                slots[field.slot()] = idx;
            }
        }
        if let Some(missing) = INTERPRETED.iter().find(|f| slots[f.slot()] == usize::MAX) {
            return Err(Error::Parse {
                line: 1,
                message: format!("header lacks column {}", missing.name()),
            });
        }
        self.expected_width = header.len();
        self.slots = Some(slots);
        Ok(())
    }

    fn convert(&self, row: &csv::StringRecord, line: u64) -> std::result::Result<CdrRecord, LineDiagnostic> {
        let bad = |message: String| LineDiagnostic { line, message };
        if row.len() != self.expected_width {
            return Err(bad(format!(
                "expected {} fields, found {}",
                self.expected_width,
                row.len()
            )));
        }
        let slots = self.slots.as_ref().expect("layout resolved");
        let get = |field: CdrField| -> std::result::Result<String, LineDiagnostic> {
            let slot = slots[field.slot()];
            if slot == usize::MAX && !INTERPRETED.contains(&field) {
                return Ok(String::new());
            }
            row.get(slot)
                .map(str::to_owned)
                .ok_or_else(|| bad(format!("missing column {}", field.name())))
        };
        let service_nbr = get(CdrField::ServiceNbr)?;
        if service_nbr.is_empty() {
            return Err(bad("empty SERVICE_NBR".into()));
        }
        let lac_id = get(CdrField::LacId)?;
        if lac_id.is_empty() {
            return Err(bad("empty LAC_ID".into()));
        }
        let raw_start = get(CdrField::StartTime)?;
        let start_time = parse_timestamp(&raw_start, &self.timezone)
            .ok_or_else(|| bad(format!("unparseable START_TIME {raw_start:?}")))?;
        Ok(CdrRecord {
            service_nbr,
            start_time,
            roam_city_id: get(CdrField::RoamCityId)?,
            lac_id,
            call_type: get(CdrField::CallType)?,
            opposite_no: get(CdrField::OppositeNo)?,
            tolltype_id: get(CdrField::TolltypeId)?,
            roam_type: get(CdrField::RoamType)?,
            end_time: get(CdrField::EndTime)?,
            duration: get(CdrField::Duration)?,
            city_id: get(CdrField::CityId)?,
            oppcity_id: get(CdrField::OppcityId)?,
        })
    }
}

impl<R: Read> Iterator for RecordStream<R> {
    type Item = Result<ParseEvent>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let mut row = csv::StringRecord::new();
        loop {
            match self.reader.read_record(&mut row) {
                Ok(false) => return None,
                Ok(true) => {}
                Err(e) => {
                    if let csv::ErrorKind::Utf8 { pos, .. } = e.kind() {
                        let line = pos.as_ref().map_or(0, |p| p.line());
                        return Some(Ok(ParseEvent::Malformed(LineDiagnostic {
                            line,
                            message: "invalid UTF-8".into(),
                        })));
                    }
                    self.failed = true;
                    return Some(Err(e.into()));
                }
            }
            let line = row.position().map_or(0, |p| p.line());
            if self.header_pending {
                self.header_pending = false;
                if let Err(e) = self.resolve_header(&row) {
                    self.failed = true;
                    return Some(Err(e));
                }
                continue;
            }
            if row.len() == 1 && row.get(0).is_some_and(str::is_empty) {
                continue;
            }
            return Some(Ok(match self.convert(&row, line) {
                Ok(rec) => ParseEvent::Record(rec),
                Err(diag) => ParseEvent::Malformed(diag),
            }));
        }
    }
}

/// A user's time-ordered location sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    user_id: String,
    timestamps: Vec<i64>,
    symbols: Vec<u32>,
    vocabulary: Vec<String>,
    active_days: usize,
}

impl Trajectory {
    /// Builds a trajectory from `(timestamp, location)` events in any order.
    /// Sorting is stable, so equal timestamps keep their input order.
    pub fn from_events<S: AsRef<str>>(
        user_id: impl Into<String>,
        events: impl IntoIterator<Item = (i64, S)>,
        tz: &FixedOffset,
    ) -> Result<Self> {
        let mut events: Vec<(i64, S)> = events.into_iter().collect();
        events.sort_by_key(|e| e.0);
        let mut vocabulary: Vec<String> = events.iter().map(|e| e.1.as_ref().to_owned()).collect();
        vocabulary.sort_unstable();
        vocabulary.dedup();
        let symbols = events
            .iter()
            .map(|e| vocabulary.binary_search_by(|v| v.as_str().cmp(e.1.as_ref())).unwrap() as u32)
            .collect();
        let timestamps = events.iter().map(|e| e.0).collect();
        Self::from_parts(user_id.into(), timestamps, symbols, vocabulary, tz)
    }

    /// Builds a trajectory from already-sorted timestamps and symbols into a
    /// sorted, duplicate-free vocabulary.
    pub fn from_parts(
        user_id: String,
        timestamps: Vec<i64>,
        symbols: Vec<u32>,
        vocabulary: Vec<String>,
        tz: &FixedOffset,
    ) -> Result<Self> {
        if user_id.is_empty() {
            return Err(Error::domain("empty user id"));
        }
        if timestamps.is_empty() {
            return Err(Error::domain(format!("user {user_id} has no events")));
        }
        if timestamps.len() != symbols.len() {
            return Err(Error::domain("timestamp and location counts differ"));
        }
        if timestamps.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::domain(format!("events of {user_id} are not time ordered")));
        }
        if vocabulary.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::domain("vocabulary must be sorted and unique"));
        }
        if symbols.iter().any(|&s| s as usize >= vocabulary.len()) {
            return Err(Error::domain("location symbol outside vocabulary"));
        }
        let active_days = count_active_days(&timestamps, tz);
        Ok(Trajectory {
            user_id,
            timestamps,
            symbols,
            vocabulary,
            active_days,
        })
    }

    pub fn user_id(&self) -> &str {
        &self.user_id
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn active_days(&self) -> usize {
        self.active_days
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    /// Location sequence as indices into [`Trajectory::vocabulary`]. The
    /// mapping is order preserving.
    pub fn symbols(&self) -> &[u32] {
        &self.symbols
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn location(&self, symbol: u32) -> &str {
        &self.vocabulary[symbol as usize]
    }

    pub fn events(&self) -> impl Iterator<Item = (i64, &str)> + '_ {
        self.timestamps
            .iter()
            .zip(&self.symbols)
            .map(move |(&t, &s)| (t, self.vocabulary[s as usize].as_str()))
    }

    /// Drops consecutive repeats of the same location.
    pub fn collapse_duplicates(&self, tz: &FixedOffset) -> Trajectory {
        let mut timestamps = Vec::with_capacity(self.len());
        let mut symbols: Vec<u32> = Vec::with_capacity(self.len());
        for (&t, &s) in self.timestamps.iter().zip(&self.symbols) {
            if symbols.last() != Some(&s) {
                timestamps.push(t);
                symbols.push(s);
            }
        }
        Trajectory {
            user_id: self.user_id.clone(),
            active_days: count_active_days(&timestamps, tz),
            timestamps,
            symbols,
            vocabulary: self.vocabulary.clone(),
        }
    }
}

fn count_active_days(sorted_timestamps: &[i64], tz: &FixedOffset) -> usize {
    let mut days = 0;
    let mut last = None;
    for &t in sorted_timestamps {
        let d = day_index(t, tz);
        if last != Some(d) {
            days += 1;
            last = Some(d);
        }
    }
    days
}

/// Groups records by user and orders each user's events by start time.
/// Users come out sorted by id.
pub fn build_trajectories(
    records: impl IntoIterator<Item = CdrRecord>,
    tz: &FixedOffset,
) -> Result<Vec<Trajectory>> {
    let mut by_user: BTreeMap<String, Vec<(i64, String)>> = BTreeMap::new();
    for rec in records {
        by_user
            .entry(rec.service_nbr)
            .or_default()
            .push((rec.start_time, rec.lac_id));
    }
    by_user
        .into_iter()
        .map(|(user, events)| Trajectory::from_events(user, events, tz))
        .collect()
}

pub fn filter_active(trajectories: Vec<Trajectory>, min_active_days: usize) -> Vec<Trajectory> {
    trajectories
        .into_iter()
        .filter(|t| t.active_days() >= min_active_days)
        .collect()
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub min_active_days: usize,
    pub collapse_duplicates: bool,
    /// Keep only records whose ROAM_CITY_ID equals this value.
    pub roam_city: Option<String>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            min_active_days: DEFAULT_MIN_ACTIVE_DAYS,
            collapse_duplicates: false,
            roam_city: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct IngestSummary {
    pub users_in: usize,
    pub users_kept: usize,
    pub records_in: usize,
    pub records_kept: usize,
    pub roam_filtered: usize,
    /// Lines rejected as malformed.
    pub spill: usize,
}

#[derive(Debug)]
pub struct IngestOutcome {
    pub trajectories: Vec<Trajectory>,
    pub summary: IngestSummary,
    pub diagnostics: Vec<LineDiagnostic>,
}

/// Parses, groups and filters one or more CDR sources.
pub fn ingest<R: Read>(
    sources: impl IntoIterator<Item = R>,
    layout: &CdrLayout,
    options: &IngestOptions,
) -> Result<IngestOutcome> {
    let mut records = Vec::new();
    let mut diagnostics = Vec::new();
    let mut summary = IngestSummary::default();
    for source in sources {
        for event in parse_records(source, layout) {
            match event? {
                ParseEvent::Record(rec) => {
                    summary.records_in += 1;
                    if options
                        .roam_city
                        .as_ref()
                        .is_some_and(|city| *city != rec.roam_city_id)
                    {
                        summary.roam_filtered += 1;
                        continue;
                    }
                    records.push(rec);
                }
                ParseEvent::Malformed(diag) => {
                    summary.spill += 1;
                    diagnostics.push(diag);
                }
            }
        }
    }
    let mut trajectories = build_trajectories(records, &layout.timezone)?;
    if options.collapse_duplicates {
        trajectories = trajectories
            .iter()
            .map(|t| t.collapse_duplicates(&layout.timezone))
            .collect();
    }
    summary.users_in = trajectories.len();
    let kept = filter_active(trajectories, options.min_active_days);
    summary.users_kept = kept.len();
    summary.records_kept = kept.iter().map(Trajectory::len).sum();
    Ok(IngestOutcome {
        trajectories: kept,
        summary,
        diagnostics,
    })
}

pub const TRAJECTORY_HEADER: [&str; 3] = ["user_id", "timestamp", "location_id"];

/// Writes `user_id,timestamp,location_id` rows sorted by user then time.
pub fn write_trajectories<W: Write>(writer: W, trajectories: &[Trajectory]) -> Result<()> {
    let mut order: Vec<&Trajectory> = trajectories.iter().collect();
    order.sort_by(|a, b| a.user_id().cmp(b.user_id()));
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(TRAJECTORY_HEADER)?;
    let mut ts_buf = String::new();
    for traj in order {
        for (t, loc) in traj.events() {
            ts_buf.clear();
            use std::fmt::Write as _;
            write!(ts_buf, "{t}").unwrap();
            out.write_record([traj.user_id(), ts_buf.as_str(), loc])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads a trajectory file. Rows of one user need not be contiguous.
pub fn read_trajectories<R: Read>(reader: R, tz: &FixedOffset) -> Result<Vec<Trajectory>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(TRAJECTORY_HEADER) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header {}", TRAJECTORY_HEADER.join(",")),
        });
    }
    let mut by_user: BTreeMap<String, Vec<(i64, String)>> = BTreeMap::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let ts = row[1].parse::<i64>().map_err(|_| Error::Parse {
            line,
            message: format!("bad timestamp {:?}", &row[1]),
        })?;
        by_user
            .entry(row[0].to_owned())
            .or_default()
            .push((ts, row[2].to_owned()));
    }
    by_user
        .into_iter()
        .map(|(user, events)| Trajectory::from_events(user, events, tz))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "SERVICE_NBR,CALL_TYPE,OPPOSITE_NO,TOLLTYPE_ID,ROAM_TYPE,START_TIME,END_TIME,DURATION,CITY_ID,ROAM_CITY_ID,OPPCITY_ID,LAC_ID\n";

    fn line(user: &str, start: &str, roam: &str, lac: &str) -> String {
        format!("{user},1,555,0,0,{start},{start},60,551,{roam},551,{lac}\n")
    }

    fn collect(input: &str, layout: &CdrLayout) -> (Vec<CdrRecord>, Vec<LineDiagnostic>) {
        let mut recs = Vec::new();
        let mut diags = Vec::new();
        for ev in parse_records(input.as_bytes(), layout) {
            match ev.unwrap() {
                ParseEvent::Record(r) => recs.push(r),
                ParseEvent::Malformed(d) => diags.push(d),
            }
        }
        (recs, diags)
    }

    #[test]
    fn twelve_field_line_parses() {
        let input = format!("{HEADER}{}", line("u1", "2014-07-01 08:00:00", "551", "L7"));
        let (recs, diags) = collect(&input, &CdrLayout::default());
        assert!(diags.is_empty());
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].service_nbr, "u1");
        assert_eq!(recs[0].lac_id, "L7");
        assert_eq!(recs[0].roam_city_id, "551");
        assert_eq!(recs[0].start_time, 1_404_201_600);
    }

    #[test]
    fn empty_stream_yields_nothing() {
        let (recs, diags) = collect("", &CdrLayout::default());
        assert!(recs.is_empty() && diags.is_empty());
        let positional = CdrLayout {
            columns: ColumnMap::Positional,
            ..CdrLayout::default()
        };
        let (recs, diags) = collect("", &positional);
        assert!(recs.is_empty() && diags.is_empty());
    }

    #[test]
    fn short_line_is_recoverable() {
        let input = format!(
            "{HEADER}{}u2,1,555,0,0,2014-07-01 09:00:00,x,60,551,551,L1\n{}",
            line("u1", "1404201600", "551", "L1"),
            line("u3", "1404201600", "551", "L2"),
        );
        let (recs, diags) = collect(&input, &CdrLayout::default());
        assert_eq!(recs.len(), 2);
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].line, 3);
        assert!(diags[0].message.contains("expected 12 fields, found 11"));
        assert_eq!(recs[1].service_nbr, "u3");
    }

    #[test]
    fn bad_timestamp_is_recoverable() {
        let input = format!("{HEADER}{}", line("u1", "yesterday", "551", "L1"));
        let (recs, diags) = collect(&input, &CdrLayout::default());
        assert!(recs.is_empty());
        assert_eq!(diags[0].line, 2);
    }

    #[test]
    fn header_missing_column_is_fatal() {
        let input = "SERVICE_NBR,START_TIME\nu1,0\n";
        let mut stream = parse_records(input.as_bytes(), &CdrLayout::default());
        assert!(stream.next().unwrap().is_err());
        assert!(stream.next().is_none());
    }

    #[test]
    fn explicit_columns_and_delimiter() {
        let mut map = BTreeMap::new();
        for (i, f) in CdrField::ALL.iter().rev().enumerate() {
            map.insert(*f, i);
        }
        let layout = CdrLayout {
            delimiter: b'|',
            columns: ColumnMap::Explicit { columns: map, width: 12 },
            timezone: utc(),
        };
        // reversed column order
        let input = "L9|551|551|551|60|x|100|0|0|555|1|u7\n";
        let (recs, diags) = collect(input, &layout);
        assert!(diags.is_empty(), "{diags:?}");
        assert_eq!(recs[0].service_nbr, "u7");
        assert_eq!(recs[0].lac_id, "L9");
        assert_eq!(recs[0].start_time, 100);

        let minimal: BTreeMap<_, _> = [
            (CdrField::ServiceNbr, 0),
            (CdrField::StartTime, 1),
            (CdrField::RoamCityId, 2),
            (CdrField::LacId, 3),
        ]
        .into_iter()
        .collect();
        let layout = CdrLayout {
            delimiter: b',',
            columns: ColumnMap::Explicit { columns: minimal, width: 4 },
            timezone: utc(),
        };
        let (recs, diags) = collect("u1,5,551,L1\nu1,6,551\n", &layout);
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].call_type, "");
        assert_eq!(diags[0].line, 2);
    }

    #[test]
    fn timezone_shifts_civil_time_and_dates() {
        let tz = parse_timezone("+08:00").unwrap();
        assert_eq!(
            parse_timestamp("2014-07-01 08:00:00", &tz),
            Some(1_404_201_600 - 8 * 3600)
        );
        // 12:00 and 20:00 UTC on July 1 fall on different local dates at +08:00
        let t = Trajectory::from_events("u", [(1_404_216_000, "A"), (1_404_244_800, "A")], &tz).unwrap();
        assert_eq!(t.active_days(), 2);
        let t = Trajectory::from_events("u", [(1_404_216_000, "A"), (1_404_244_800, "A")], &utc()).unwrap();
        assert_eq!(t.active_days(), 1);
        assert!(parse_timezone("8").is_err());
        assert_eq!(parse_timezone("-0530").unwrap().local_minus_utc(), -(5 * 3600 + 1800));
    }

    fn rec(user: &str, t: i64, lac: &str) -> CdrRecord {
        CdrRecord {
            service_nbr: user.into(),
            start_time: t,
            roam_city_id: "551".into(),
            lac_id: lac.into(),
            call_type: String::new(),
            opposite_no: String::new(),
            tolltype_id: String::new(),
            roam_type: String::new(),
            end_time: String::new(),
            duration: String::new(),
            city_id: String::new(),
            oppcity_id: String::new(),
        }
    }

    #[test]
    fn build_sorts_events() {
        let trajs = build_trajectories(
            vec![rec("u1", 10 * 3600, "L2"), rec("u1", 8 * 3600, "L1")],
            &utc(),
        )
        .unwrap();
        assert_eq!(trajs.len(), 1);
        let ev: Vec<_> = trajs[0].events().collect();
        assert_eq!(ev, vec![(8 * 3600, "L1"), (10 * 3600, "L2")]);
        assert_eq!(trajs[0].active_days(), 1);
    }

    #[test]
    fn ties_keep_input_order() {
        let trajs = build_trajectories(
            vec![rec("u1", 5, "B"), rec("u1", 5, "A"), rec("u1", 1, "C")],
            &utc(),
        )
        .unwrap();
        let locs: Vec<_> = trajs[0].events().map(|e| e.1).collect();
        assert_eq!(locs, ["C", "B", "A"]);
    }

    #[test]
    fn single_record_and_day_counting() {
        let t = build_trajectories(vec![rec("u1", 0, "A")], &utc()).unwrap();
        assert_eq!((t[0].len(), t[0].active_days()), (1, 1));
        let many: Vec<_> = (0..150).map(|d| rec("u2", d * 86_400 + 3600, "A")).collect();
        let t = build_trajectories(many, &utc()).unwrap();
        assert_eq!(t[0].active_days(), 150);
    }

    fn with_days(user: &str, days: i64) -> Trajectory {
        Trajectory::from_events(user, (0..days).map(|d| (d * 86_400, "A")), &utc()).unwrap()
    }

    #[test]
    fn active_day_threshold() {
        let trajs = vec![with_days("a", 150), with_days("b", 149), with_days("c", 200)];
        let kept = filter_active(trajs.clone(), 150);
        let ids: Vec<_> = kept.iter().map(|t| t.user_id()).collect();
        assert_eq!(ids, ["a", "c"]);
        assert_eq!(filter_active(trajs.clone(), 0), trajs);
    }

    #[test]
    fn collapse_removes_runs_only() {
        let t = Trajectory::from_events("u", [(0, "A"), (1, "A"), (2, "B"), (3, "A")], &utc()).unwrap();
        let c = t.collapse_duplicates(&utc());
        let locs: Vec<_> = c.events().map(|e| e.1).collect();
        assert_eq!(locs, ["A", "B", "A"]);
    }

    #[test]
    fn roam_filter_and_summary() {
        let mut input = HEADER.to_string();
        for d in 0..3 {
            input += &line("u1", &(d * 86_400).to_string(), "551", "L1");
            input += &line("u2", &(d * 86_400).to_string(), "552", "L1");
        }
        input += "garbage\n";
        let opts = IngestOptions {
            min_active_days: 3,
            roam_city: Some("551".into()),
            ..IngestOptions::default()
        };
        let out = ingest([input.as_bytes()], &CdrLayout::default(), &opts).unwrap();
        assert_eq!(out.trajectories.len(), 1);
        assert_eq!(
            out.summary,
            IngestSummary {
                users_in: 1,
                users_kept: 1,
                records_in: 6,
                records_kept: 3,
                roam_filtered: 3,
                spill: 1,
            }
        );
    }

    #[test]
    fn trajectory_file_is_sorted_and_stable() {
        let a = Trajectory::from_events("u2", [(5, "X"), (1, "Y")], &utc()).unwrap();
        let b = Trajectory::from_events("u1", [(3, "Z")], &utc()).unwrap();
        let mut buf = Vec::new();
        write_trajectories(&mut buf, &[a.clone(), b.clone()]).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "user_id,timestamp,location_id\nu1,3,Z\nu2,1,Y\nu2,5,X\n"
        );
        let back = read_trajectories(buf.as_slice(), &utc()).unwrap();
        assert_eq!(back, vec![b, a]);
    }
}
