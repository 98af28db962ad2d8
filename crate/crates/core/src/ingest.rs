//! Loading and validating the three input tables: daily OD trips, cumulative
//! case counts and county demographics.
//!
//! All three are long-form UTF-8 CSV files with fixed headers:
//!
//! ```text
//! date,origin_fips,destination_fips,trips
//! date,fips,cumulative_cases
//! fips,population,pct_age65,pct_male,pct_african_american,median_income
//! ```
//!
//! Loaders stop at the first fatal row and report it with its line number.
//! Non-fatal findings (calendar filtering, forward-filled gaps, downward
//! revisions) are collected into a [`ValidationReport`].

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::model::{AnalysisCalendar, CountyId};

pub const TRIPS_HEADER: [&str; 4] = ["date", "origin_fips", "destination_fips", "trips"];
pub const CASES_HEADER: [&str; 3] = ["date", "fips", "cumulative_cases"];
pub const DEMOGRAPHICS_HEADER: [&str; 6] = [
    "fips",
    "population",
    "pct_age65",
    "pct_male",
    "pct_african_american",
    "median_income",
];

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: expected header `{expected}`, found `{found}`")]
    Header {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("{path}:{line}: {kind}")]
    Row {
        path: PathBuf,
        line: u64,
        kind: RowError,
    },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RowError {
    #[error("malformed row: {0}")]
    Malformed(String),
    #[error("unrecognised date `{0}` (expected YYYY-MM-DD)")]
    DateFormat(String),
    #[error("duplicate record for {0} (first seen on line {1})")]
    Duplicate(String, u64),
    #[error("negative value {0}")]
    Negative(String),
    #[error("self-loop {0} -> {0}: only inter-county trips are allowed")]
    SelfLoop(CountyId),
    #[error("{0}")]
    Invalid(String),
}

impl LoadError {
    pub fn code(&self) -> &'static str {
        match self {
            LoadError::Io { .. } => "io",
            LoadError::Header { .. } => "header",
            LoadError::Row { kind, .. } => match kind {
                RowError::Malformed(_) => "malformed_row",
                RowError::DateFormat(_) => "date_format",
                RowError::Duplicate(..) => "duplicate",
                RowError::Negative(_) => "negative_value",
                RowError::SelfLoop(_) => "self_loop",
                RowError::Invalid(_) => "invalid_value",
            },
        }
    }

    pub fn to_issue(&self) -> Issue {
        let location = match self {
            LoadError::Io { path, .. } | LoadError::Header { path, .. } => path.display().to_string(),
            LoadError::Row { path, line, .. } => format!("{}:{}", path.display(), line),
        };
        Issue {
            severity: Severity::Fatal,
            code: self.code().to_string(),
            message: self.to_string(),
            location: Some(location),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PanelError {
    #[error("duplicate trip record {date} {origin}->{destination}")]
    Duplicate {
        date: NaiveDate,
        origin: CountyId,
        destination: CountyId,
    },
    #[error("self-loop trip record at {0}")]
    SelfLoop(CountyId),
    #[error("trip count must be finite and non-negative, got {0}")]
    InvalidTrips(f64),
    #[error("date {0} is not an analysis day")]
    OffCalendar(NaiveDate),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Info,
    Warning,
    Fatal,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Issue {
    pub severity: Severity,
    pub code: String,
    pub message: String,
    pub location: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DatasetCounts {
    pub read: u64,
    pub accepted: u64,
    pub rejected: u64,
    /// Rows dropped by a filter (off-calendar days) rather than rejected.
    pub excluded: u64,
    /// Values synthesised during loading (forward-filled days).
    pub filled: u64,
}

/// Findings from loading and cross-checking. Any fatal entry means the
/// inputs must not be used downstream.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
    pub counts: BTreeMap<String, DatasetCounts>,
}

impl ValidationReport {
    pub fn has_fatal(&self) -> bool {
        self.issues.iter().any(|i| i.severity == Severity::Fatal)
    }

    pub fn fatal(&self) -> impl Iterator<Item = &Issue> {
        self.issues.iter().filter(|i| i.severity == Severity::Fatal)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Issue> {
        self.issues.iter().filter(|i| i.severity == Severity::Warning)
    }

    pub fn push(&mut self, severity: Severity, code: &str, message: impl Into<String>, location: Option<String>) {
        self.issues.push(Issue {
            severity,
            code: code.to_string(),
            message: message.into(),
            location,
        });
    }

    pub fn merge(&mut self, other: ValidationReport) {
        self.issues.extend(other.issues);
        for (k, v) in other.counts {
            let e = self.counts.entry(k).or_default();
            e.read += v.read;
            e.accepted += v.accepted;
            e.rejected += v.rejected;
            e.excluded += v.excluded;
            e.filled += v.filled;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripRecord {
    pub date: NaiveDate,
    pub origin: CountyId,
    pub destination: CountyId,
    pub trips: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Flow {
    pub origin: CountyId,
    pub destination: CountyId,
    pub trips: f64,
}

/// Sparse daily OD flows over an analysis calendar. Absent pairs carry zero
/// trips. Each day's flows are sorted by `(origin, destination)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TripPanel {
    calendar: AnalysisCalendar,
    days: Vec<Vec<Flow>>,
}

impl TripPanel {
    pub fn from_records(
        calendar: AnalysisCalendar,
        records: impl IntoIterator<Item = TripRecord>,
    ) -> Result<Self, PanelError> {
        let mut days = vec![Vec::new(); calendar.len()];
        for r in records {
            if r.origin == r.destination {
                return Err(PanelError::SelfLoop(r.origin));
            }
            if !r.trips.is_finite() || r.trips < 0.0 {
                return Err(PanelError::InvalidTrips(r.trips));
            }
            let idx = calendar.index_of(r.date).ok_or(PanelError::OffCalendar(r.date))?;
            days[idx].push(Flow {
                origin: r.origin,
                destination: r.destination,
                trips: r.trips,
            });
        }
        for (idx, flows) in days.iter_mut().enumerate() {
            flows.sort_by_key(|f| (f.origin, f.destination));
            if let Some(w) = flows
                .windows(2)
                .find(|w| (w[0].origin, w[0].destination) == (w[1].origin, w[1].destination))
            {
                return Err(PanelError::Duplicate {
                    date: calendar.days()[idx],
                    origin: w[0].origin,
                    destination: w[0].destination,
                });
            }
        }
        Ok(Self { calendar, days })
    }

    pub fn calendar(&self) -> &AnalysisCalendar {
        &self.calendar
    }

    /// Flows on the `idx`-th analysis day.
    pub fn flows_at(&self, idx: usize) -> &[Flow] {
        &self.days[idx]
    }

    /// Flows on `d`; empty when `d` is not an analysis day.
    pub fn flows_on(&self, d: NaiveDate) -> &[Flow] {
        self.calendar.index_of(d).map_or(&[], |i| &self.days[i])
    }

    pub fn records(&self) -> impl Iterator<Item = TripRecord> + '_ {
        self.calendar
            .days()
            .iter()
            .zip(&self.days)
            .flat_map(|(date, flows)| {
                flows.iter().map(move |f| TripRecord {
                    date: *date,
                    origin: f.origin,
                    destination: f.destination,
                    trips: f.trips,
                })
            })
    }

    pub fn len(&self) -> usize {
        self.days.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every county appearing as an origin or destination on any day.
    pub fn counties(&self) -> BTreeSet<CountyId> {
        self.days
            .iter()
            .flatten()
            .flat_map(|f| [f.origin, f.destination])
            .collect()
    }

    pub fn total_trips(&self) -> f64 {
        self.days.iter().flatten().map(|f| f.trips).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct CountyCases {
    first: NaiveDate,
    values: Vec<f64>,
}

/// Daily cumulative case counts per county on a contiguous grid from each
/// county's first report through a shared coverage end date.
///
/// Before a county's first report its count is 0; past the coverage end
/// counts are unknown. Counties absent from the table count as 0.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseSeries {
    end: NaiveDate,
    counties: BTreeMap<CountyId, CountyCases>,
}

impl CaseSeries {
    pub fn empty(end: NaiveDate) -> Self {
        Self {
            end,
            counties: BTreeMap::new(),
        }
    }

    /// Insert a county's contiguous daily series starting at `first`.
    /// Values past the coverage end are dropped; a series ending early is
    /// extended with its last value.
    pub fn insert_daily(&mut self, county: CountyId, first: NaiveDate, mut values: Vec<f64>) {
        if values.is_empty() || first > self.end {
            return;
        }
        let len = (self.end - first).num_days() as usize + 1;
        let last = *values.last().unwrap();
        values.resize(len, last);
        self.counties.insert(county, CountyCases { first, values });
    }

    pub fn coverage_end(&self) -> NaiveDate {
        self.end
    }

    pub fn counties(&self) -> impl Iterator<Item = CountyId> + '_ {
        self.counties.keys().copied()
    }

    pub fn contains_county(&self, c: CountyId) -> bool {
        self.counties.contains_key(&c)
    }

    pub fn first_date(&self, c: CountyId) -> Option<NaiveDate> {
        self.counties.get(&c).map(|s| s.first)
    }

    /// Cumulative count for `c` on `d`, or `None` past the coverage end.
    pub fn cumulative(&self, c: CountyId, d: NaiveDate) -> Option<f64> {
        if d > self.end {
            return None;
        }
        Some(match self.counties.get(&c) {
            Some(s) if d >= s.first => s.values[(d - s.first).num_days() as usize],
            _ => 0.0,
        })
    }

    /// `(date, cumulative)` samples of one county's grid.
    pub fn series(&self, c: CountyId) -> Vec<(NaiveDate, f64)> {
        self.counties.get(&c).map_or_else(Vec::new, |s| {
            s.values
                .iter()
                .enumerate()
                .map(|(i, v)| (s.first + Duration::days(i as i64), *v))
                .collect()
        })
    }

    /// Multiply every count by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for s in out.counties.values_mut() {
            s.values.iter_mut().for_each(|v| *v *= factor);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DemographicsRecord {
    pub county: CountyId,
    pub population: u64,
    pub pct_age65: f64,
    pub pct_male: f64,
    pub pct_african_american: f64,
    pub median_income: f64,
}

impl DemographicsRecord {
    pub fn check(&self) -> Result<(), String> {
        if self.population == 0 {
            return Err(format!("population of {} must be positive", self.county));
        }
        for (name, v) in [
            ("pct_age65", self.pct_age65),
            ("pct_male", self.pct_male),
            ("pct_african_american", self.pct_african_american),
        ] {
            if !(0.0..=100.0).contains(&v) {
                return Err(format!("{name} = {v} is outside [0, 100]"));
            }
        }
        if !(self.median_income.is_finite() && self.median_income > 0.0) {
            return Err(format!("median_income = {} must be positive", self.median_income));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DemographicsTable {
    records: BTreeMap<CountyId, DemographicsRecord>,
}

impl DemographicsTable {
    pub fn from_records(records: impl IntoIterator<Item = DemographicsRecord>) -> Result<Self, String> {
        let mut map = BTreeMap::new();
        for r in records {
            r.check()?;
            if map.insert(r.county, r).is_some() {
                return Err(format!("duplicate county {}", r.county));
            }
        }
        Ok(Self { records: map })
    }

    pub fn get(&self, c: CountyId) -> Option<&DemographicsRecord> {
        self.records.get(&c)
    }

    pub fn contains(&self, c: CountyId) -> bool {
        self.records.contains_key(&c)
    }

    pub fn population(&self, c: CountyId) -> Option<u64> {
        self.records.get(&c).map(|r| r.population)
    }

    pub fn iter(&self) -> impl Iterator<Item = &DemographicsRecord> {
        self.records.values()
    }

    pub fn counties(&self) -> impl Iterator<Item = CountyId> + '_ {
        self.records.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

// ---- parsing helpers ----

fn open(path: &Path) -> Result<csv::Reader<std::fs::File>, LoadError> {
    let file = std::fs::File::open(path).map_err(|source| LoadError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::ReaderBuilder::new().flexible(true).from_reader(file))
}

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, path: &Path, expected: &[&str]) -> Result<(), LoadError> {
    let found = rdr.headers().map_err(|e| csv_error(path, 1, e))?.clone();
    if found.iter().map(str::trim).ne(expected.iter().copied()) {
        return Err(LoadError::Header {
            path: path.to_path_buf(),
            expected: expected.join(","),
            found: found.iter().collect::<Vec<_>>().join(","),
        });
    }
    Ok(())
}

fn csv_error(path: &Path, line: u64, e: csv::Error) -> LoadError {
    if let csv::ErrorKind::Io(_) = e.kind() {
        let csv::ErrorKind::Io(source) = e.into_kind() else { unreachable!() };
        return LoadError::Io {
            path: path.to_path_buf(),
            source,
        };
    }
    LoadError::Row {
        path: path.to_path_buf(),
        line: e.position().map_or(line, |p| p.line()),
        kind: RowError::Malformed(e.to_string()),
    }
}

struct Rows<R: Read> {
    rdr: csv::Reader<R>,
    path: PathBuf,
    width: usize,
}

impl<R: Read> Rows<R> {
    /// Next record and its 1-based line number.
    fn next_row(&mut self) -> Option<Result<(csv::StringRecord, u64), LoadError>> {
        let mut rec = csv::StringRecord::new();
        match self.rdr.read_record(&mut rec) {
            Ok(false) => None,
            Ok(true) => {
                let line = rec.position().map_or(0, |p| p.line());
                if rec.len() != self.width {
                    return Some(Err(self.row_err(
                        line,
                        RowError::Malformed(format!("expected {} fields, found {}", self.width, rec.len())),
                    )));
                }
                Some(Ok((rec, line)))
            }
            Err(e) => Some(Err(csv_error(&self.path, 0, e))),
        }
    }

    fn row_err(&self, line: u64, kind: RowError) -> LoadError {
        LoadError::Row {
            path: self.path.clone(),
            line,
            kind,
        }
    }
}

fn rows(path: &Path, header: &[&str]) -> Result<Rows<std::fs::File>, LoadError> {
    let mut rdr = open(path)?;
    check_header(&mut rdr, path, header)?;
    Ok(Rows {
        rdr,
        path: path.to_path_buf(),
        width: header.len(),
    })
}

pub fn parse_date(s: &str) -> Result<NaiveDate, RowError> {
    let t = s.trim();
    if t.len() != 10 {
        return Err(RowError::DateFormat(s.to_string()));
    }
    NaiveDate::parse_from_str(t, "%Y-%m-%d").map_err(|_| RowError::DateFormat(s.to_string()))
}

fn parse_fips(s: &str) -> Result<CountyId, RowError> {
    s.parse().map_err(|e: crate::model::ModelError| RowError::Malformed(e.to_string()))
}

fn parse_real(field: &str, s: &str) -> Result<f64, RowError> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| RowError::Malformed(format!("{field} `{s}` is not a number")))?;
    if !v.is_finite() {
        return Err(RowError::Malformed(format!("{field} `{s}` is not finite")));
    }
    Ok(v)
}

fn parse_non_negative(field: &str, s: &str) -> Result<f64, RowError> {
    let v = parse_real(field, s)?;
    if v < 0.0 {
        return Err(RowError::Negative(format!("{field} = {s}")));
    }
    Ok(v)
}

// ---- trips ----

struct ParsedTrips {
    path: PathBuf,
    rows: Vec<(TripRecord, u64)>,
    read: u64,
    off_calendar: u64,
}

fn parse_trip_file(path: &Path, calendar: &AnalysisCalendar) -> Result<ParsedTrips, LoadError> {
    let mut it = rows(path, &TRIPS_HEADER)?;
    let mut out = ParsedTrips {
        path: path.to_path_buf(),
        rows: Vec::new(),
        read: 0,
        off_calendar: 0,
    };
    while let Some(row) = it.next_row() {
        let (rec, line) = row?;
        out.read += 1;
        let parsed = (|| {
            let date = parse_date(&rec[0])?;
            let origin = parse_fips(&rec[1])?;
            let destination = parse_fips(&rec[2])?;
            let trips = parse_non_negative("trips", &rec[3])?;
            if origin == destination {
                return Err(RowError::SelfLoop(origin));
            }
            Ok(TripRecord {
                date,
                origin,
                destination,
                trips,
            })
        })()
        .map_err(|kind| it.row_err(line, kind))?;
        if calendar.contains(parsed.date) {
            out.rows.push((parsed, line));
        } else {
            out.off_calendar += 1;
        }
    }
    Ok(out)
}

/// Load one or more OD files into a panel over `calendar`. Rows on
/// non-analysis days are dropped and counted.
pub fn load_trips<P: AsRef<Path> + Sync>(
    paths: &[P],
    calendar: &AnalysisCalendar,
) -> Result<(TripPanel, ValidationReport), LoadError> {
    let parsed: Vec<ParsedTrips> = paths
        .par_iter()
        .map(|p| parse_trip_file(p.as_ref(), calendar))
        .collect::<Result<_, _>>()?;

    let mut report = ValidationReport::default();
    let mut counts = DatasetCounts::default();
    let mut seen: HashMap<(NaiveDate, CountyId, CountyId), u64> = HashMap::new();
    let mut records = Vec::new();
    for file in parsed {
        counts.read += file.read;
        counts.excluded += file.off_calendar;
        if file.off_calendar > 0 {
            report.push(
                Severity::Info,
                "off_calendar",
                format!("{} rows on weekends, holidays or outside the calendar were excluded", file.off_calendar),
                Some(file.path.display().to_string()),
            );
        }
        for (r, line) in file.rows {
            if let Some(first) = seen.insert((r.date, r.origin, r.destination), line) {
                return Err(LoadError::Row {
                    path: file.path,
                    line,
                    kind: RowError::Duplicate(format!("{} {}->{}", r.date, r.origin, r.destination), first),
                });
            }
            records.push(r);
        }
    }
    counts.accepted = records.len() as u64;
    report.counts.insert("trips".into(), counts);
    let panel = TripPanel::from_records(calendar.clone(), records).expect("rows validated while parsing");
    Ok((panel, report))
}

pub fn write_trips<W: Write>(panel: &TripPanel, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRIPS_HEADER)?;
    for r in panel.records() {
        w.write_record([
            r.date.to_string(),
            r.origin.to_string(),
            r.destination.to_string(),
            r.trips.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

// ---- cases ----

/// Load long-form cumulative case counts. Each county's series runs from
/// its first report to the latest date in the file; interior and trailing
/// gaps carry the last value forward.
pub fn load_cases(path: impl AsRef<Path>) -> Result<(CaseSeries, ValidationReport), LoadError> {
    let path = path.as_ref();
    let mut it = rows(path, &CASES_HEADER)?;
    let mut samples: BTreeMap<CountyId, BTreeMap<NaiveDate, (f64, u64)>> = BTreeMap::new();
    let mut counts = DatasetCounts::default();
    while let Some(row) = it.next_row() {
        let (rec, line) = row?;
        counts.read += 1;
        let (date, county, value) = (|| {
            Ok((
                parse_date(&rec[0])?,
                parse_fips(&rec[1])?,
                parse_non_negative("cumulative_cases", &rec[2])?,
            ))
        })()
        .map_err(|kind| it.row_err(line, kind))?;
        if let Some((_, first)) = samples.entry(county).or_default().insert(date, (value, line)) {
            return Err(it.row_err(line, RowError::Duplicate(format!("{date} {county}"), first)));
        }
    }

    let mut report = ValidationReport::default();
    let end = samples.values().filter_map(|s| s.keys().next_back()).max().copied();
    let Some(end) = end else {
        report.counts.insert("cases".into(), counts);
        return Ok((CaseSeries::empty(NaiveDate::MIN), report));
    };
    let mut series = CaseSeries::empty(end);
    for (county, by_date) in samples {
        let first = *by_date.keys().next().expect("non-empty");
        let mut values = Vec::with_capacity((end - first).num_days() as usize + 1);
        let mut last = 0.0;
        let mut downward = 0;
        for d in first.iter_days().take_while(|d| *d <= end) {
            match by_date.get(&d) {
                Some(&(v, _)) => {
                    if v < last {
                        downward += 1;
                    }
                    last = v;
                }
                None => counts.filled += 1,
            }
            values.push(last);
        }
        if downward > 0 {
            report.push(
                Severity::Warning,
                "decreasing_cumulative",
                format!("county {county} has {downward} downward revision(s) of cumulative cases"),
                Some(county.to_string()),
            );
        }
        counts.accepted += by_date.len() as u64;
        series.insert_daily(county, first, values);
    }
    if counts.filled > 0 {
        report.push(
            Severity::Info,
            "forward_filled",
            format!("{} missing county-days filled with the previous value", counts.filled),
            Some(path.display().to_string()),
        );
    }
    report.counts.insert("cases".into(), counts);
    Ok((series, report))
}

pub fn write_cases<W: Write>(cases: &CaseSeries, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CASES_HEADER)?;
    for c in cases.counties() {
        for (d, v) in cases.series(c) {
            w.write_record([d.to_string(), c.to_string(), v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

// ---- demographics ----

pub fn load_demographics(path: impl AsRef<Path>) -> Result<(DemographicsTable, ValidationReport), LoadError> {
    let path = path.as_ref();
    let mut it = rows(path, &DEMOGRAPHICS_HEADER)?;
    let mut records = BTreeMap::new();
    let mut lines = HashMap::new();
    let mut counts = DatasetCounts::default();
    while let Some(row) = it.next_row() {
        let (rec, line) = row?;
        counts.read += 1;
        let r = (|| {
            let county = parse_fips(&rec[0])?;
            let population = parse_real("population", &rec[1])?;
            if population <= 0.0 || population.fract() != 0.0 {
                return Err(RowError::Invalid(format!("population `{}` must be a positive integer", &rec[1])));
            }
            let r = DemographicsRecord {
                county,
                population: population as u64,
                pct_age65: parse_real("pct_age65", &rec[2])?,
                pct_male: parse_real("pct_male", &rec[3])?,
                pct_african_american: parse_real("pct_african_american", &rec[4])?,
                median_income: parse_real("median_income", &rec[5])?,
            };
            r.check().map_err(RowError::Invalid)?;
            Ok(r)
        })()
        .map_err(|kind| it.row_err(line, kind))?;
        if let Some(first) = lines.insert(r.county, line) {
            return Err(it.row_err(line, RowError::Duplicate(r.county.to_string(), first)));
        }
        records.insert(r.county, r);
    }
    counts.accepted = records.len() as u64;
    let mut report = ValidationReport::default();
    report.counts.insert("demographics".into(), counts);
    Ok((DemographicsTable { records }, report))
}

pub fn write_demographics<W: Write>(demo: &DemographicsTable, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(DEMOGRAPHICS_HEADER)?;
    for r in demo.iter() {
        w.write_record([
            r.county.to_string(),
            r.population.to_string(),
            r.pct_age65.to_string(),
            r.pct_male.to_string(),
            r.pct_african_american.to_string(),
            r.median_income.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Share of trip volume whose origin lacks demographics above which the
/// inputs are unusable.
pub const MAX_UNCOVERED_VOLUME: f64 = 0.5;

struct FipsList<'a>(&'a BTreeSet<CountyId>);

impl fmt::Display for FipsList<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

/// Check that the three datasets describe the same counties.
pub fn cross_validate(panel: &TripPanel, cases: &CaseSeries, demo: &DemographicsTable) -> ValidationReport {
    let mut report = ValidationReport::default();
    let counties = panel.counties();
    let no_demo: BTreeSet<_> = counties.iter().copied().filter(|c| !demo.contains(*c)).collect();
    let no_cases: BTreeSet<_> = counties.iter().copied().filter(|c| !cases.contains_county(*c)).collect();
    if !no_demo.is_empty() {
        report.push(
            Severity::Warning,
            "missing_demographics",
            format!(
                "{} trip counties lack demographics and are excluded from risk computations: {}",
                no_demo.len(),
                FipsList(&no_demo)
            ),
            None,
        );
    }
    if !no_cases.is_empty() {
        report.push(
            Severity::Warning,
            "missing_cases",
            format!(
                "{} trip counties have no case reports and are treated as zero: {}",
                no_cases.len(),
                FipsList(&no_cases)
            ),
            None,
        );
    }
    let total = panel.total_trips();
    let uncovered: f64 = panel
        .records()
        .filter(|r| no_demo.contains(&r.origin))
        .map(|r| r.trips)
        .sum();
    if total > 0.0 && uncovered / total > MAX_UNCOVERED_VOLUME {
        report.push(
            Severity::Fatal,
            "demographics_coverage",
            format!(
                "{:.1}% of trip volume originates in counties without demographics",
                100.0 * uncovered / total
            ),
            None,
        );
    }
    report.counts.insert(
        "cross_check".into(),
        DatasetCounts {
            read: counties.len() as u64,
            accepted: (counties.len() - no_demo.len()) as u64,
            rejected: 0,
            excluded: no_demo.len() as u64,
            filled: 0,
        },
    );
    report
}
