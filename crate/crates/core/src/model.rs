//! Shared domain types: county identifiers, the analysis calendar, the
//! behavioural stage partition, regions and lag specifications.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid FIPS code `{0}`")]
    InvalidFips(String),
    #[error("invalid date range: {start} is after {end}")]
    InvalidRange { start: NaiveDate, end: NaiveDate },
    #[error("date {0} is outside the covered range")]
    OutOfRange(NaiveDate),
    #[error("invalid stage partition: {0}")]
    InvalidPartition(String),
    #[error("region `{0}` has no members")]
    EmptyRegion(String),
    #[error("region `{name}` lists county {county} more than once")]
    DuplicateMember { name: String, county: CountyId },
    #[error("lag of {0} weeks is not one of 0, 1, 2, 3")]
    InvalidLag(u32),
    #[error("unknown period label `{0}`")]
    UnknownPeriod(String),
}

/// Five-digit county FIPS code, compared by numeric value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CountyId(u32);

impl CountyId {
    pub const MIN: u32 = 1001;
    pub const MAX: u32 = 99999;

    pub fn new(fips: u32) -> Result<Self, ModelError> {
        if (Self::MIN..=Self::MAX).contains(&fips) {
            Ok(Self(fips))
        } else {
            Err(ModelError::InvalidFips(fips.to_string()))
        }
    }

    pub fn value(self) -> u32 {
        self.0
    }
}

impl fmt::Display for CountyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:05}", self.0)
    }
}

impl FromStr for CountyId {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        if t.is_empty() || t.len() > 5 || !t.bytes().all(|b| b.is_ascii_digit()) {
            return Err(ModelError::InvalidFips(s.to_string()));
        }
        let v: u32 = t.parse().map_err(|_| ModelError::InvalidFips(s.to_string()))?;
        Self::new(v).map_err(|_| ModelError::InvalidFips(s.to_string()))
    }
}

impl Serialize for CountyId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CountyId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Inclusive range of calendar dates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self, ModelError> {
        if start > end {
            return Err(ModelError::InvalidRange { start, end });
        }
        Ok(Self { start, end })
    }

    pub fn single(d: NaiveDate) -> Self {
        Self { start: d, end: d }
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d <= self.end
    }

    pub fn iter_days(&self) -> impl Iterator<Item = NaiveDate> {
        let end = self.end;
        self.start.iter_days().take_while(move |d| *d <= end)
    }
}

impl fmt::Display for DateRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

pub fn is_weekday(d: NaiveDate) -> bool {
    !matches!(d.weekday(), Weekday::Sat | Weekday::Sun)
}

/// Monday of the ISO week containing `d`.
pub fn week_start(d: NaiveDate) -> NaiveDate {
    d - Duration::days(i64::from(d.weekday().num_days_from_monday()))
}

/// Weekdays in `[start, end]` minus holidays, in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnalysisCalendar {
    start: NaiveDate,
    end: NaiveDate,
    holidays: BTreeSet<NaiveDate>,
    days: Vec<NaiveDate>,
}

impl AnalysisCalendar {
    pub fn build(
        start: NaiveDate,
        end: NaiveDate,
        holidays: impl IntoIterator<Item = NaiveDate>,
    ) -> Result<Self, ModelError> {
        let range = DateRange::new(start, end)?;
        let holidays: BTreeSet<NaiveDate> = holidays.into_iter().collect();
        let days = range
            .iter_days()
            .filter(|d| is_weekday(*d) && !holidays.contains(d))
            .collect();
        Ok(Self {
            start,
            end,
            holidays,
            days,
        })
    }

    /// 2020-01-02 through 2020-05-15 without the in-window federal holidays.
    pub fn default_study() -> Self {
        let d = |m, day| NaiveDate::from_ymd_opt(2020, m, day).unwrap();
        Self::build(d(1, 2), d(5, 15), default_holidays()).expect("static range")
    }

    pub fn start(&self) -> NaiveDate {
        self.start
    }

    pub fn end(&self) -> NaiveDate {
        self.end
    }

    pub fn range(&self) -> DateRange {
        DateRange {
            start: self.start,
            end: self.end,
        }
    }

    pub fn holidays(&self) -> &BTreeSet<NaiveDate> {
        &self.holidays
    }

    pub fn days(&self) -> &[NaiveDate] {
        &self.days
    }

    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    pub fn index_of(&self, d: NaiveDate) -> Option<usize> {
        self.days.binary_search(&d).ok()
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.index_of(d).is_some()
    }

    /// Index range of analysis days falling inside `window`.
    pub fn indices_in(&self, window: DateRange) -> std::ops::Range<usize> {
        let lo = self.days.partition_point(|d| *d < window.start);
        let hi = self.days.partition_point(|d| *d <= window.end);
        lo..hi.max(lo)
    }

    pub fn days_in(&self, window: DateRange) -> &[NaiveDate] {
        &self.days[self.indices_in(window)]
    }

    /// Latest analysis day on or before `d`.
    pub fn on_or_before(&self, d: NaiveDate) -> Option<NaiveDate> {
        let i = self.days.partition_point(|x| *x <= d);
        i.checked_sub(1).map(|i| self.days[i])
    }
}

pub fn default_holidays() -> Vec<NaiveDate> {
    [(1, 1), (1, 20), (2, 17)]
        .iter()
        .map(|&(m, d)| NaiveDate::from_ymd_opt(2020, m, d).unwrap())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    PrePandemic,
    BehaviorChange,
    QuarantineFatigue,
    PartialReopening,
}

impl Stage {
    pub const ALL: [Stage; 4] = [
        Stage::PrePandemic,
        Stage::BehaviorChange,
        Stage::QuarantineFatigue,
        Stage::PartialReopening,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Stage::PrePandemic => "pre_pandemic",
            Stage::BehaviorChange => "behavior_change",
            Stage::QuarantineFatigue => "quarantine_fatigue",
            Stage::PartialReopening => "partial_reopening",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Contiguous stages tiling `[start, end]`. Each boundary date is the last
/// day of the stage it closes; the final stage runs to `end`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StagePartition {
    start: NaiveDate,
    boundaries: Vec<(NaiveDate, Stage)>,
}

impl StagePartition {
    /// `cuts` are the last days of the first three stages in order.
    pub fn new(start: NaiveDate, cuts: [NaiveDate; 3], end: NaiveDate) -> Result<Self, ModelError> {
        let dates = [cuts[0], cuts[1], cuts[2], end];
        if start > dates[0] {
            return Err(ModelError::InvalidPartition(format!(
                "first cut {} precedes start {}",
                dates[0], start
            )));
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ModelError::InvalidPartition(
                "cut dates must be strictly increasing and before the end date".into(),
            ));
        }
        let boundaries = dates.into_iter().zip(Stage::ALL).collect();
        Ok(Self { start, boundaries })
    }

    /// Mar 13 / Apr 13 / Apr 23 cuts over the given covered range.
    pub fn default_2020(start: NaiveDate, end: NaiveDate) -> Result<Self, ModelError> {
        let d = |m, day| NaiveDate::from_ymd_opt(2020, m, day).unwrap();
        Self::new(start, [d(3, 13), d(4, 13), d(4, 23)], end)
    }

    pub fn covered(&self) -> DateRange {
        DateRange {
            start: self.start,
            end: self.boundaries.last().expect("four stages").0,
        }
    }

    pub fn stage_of(&self, d: NaiveDate) -> Result<Stage, ModelError> {
        if d < self.start {
            return Err(ModelError::OutOfRange(d));
        }
        self.boundaries
            .iter()
            .find(|(last, _)| d <= *last)
            .map(|(_, s)| *s)
            .ok_or(ModelError::OutOfRange(d))
    }

    pub fn stage_range(&self, stage: Stage) -> DateRange {
        let i = Stage::ALL.iter().position(|s| *s == stage).expect("known stage");
        let start = if i == 0 {
            self.start
        } else {
            self.boundaries[i - 1].0 + Duration::days(1)
        };
        DateRange {
            start,
            end: self.boundaries[i].0,
        }
    }

    pub fn period_range(&self, period: Period) -> DateRange {
        match period {
            Period::AfterPandemic => DateRange {
                start: self.stage_range(Stage::BehaviorChange).start,
                end: self.stage_range(Stage::PartialReopening).end,
            },
            Period::Stage(s) => self.stage_range(s),
        }
    }
}

/// A regression period: one stage, or all three stages after the
/// emergency declaration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Period {
    AfterPandemic,
    Stage(Stage),
}

impl Period {
    /// The five regression periods in reporting order.
    pub const DEFAULT: [Period; 5] = [
        Period::AfterPandemic,
        Period::Stage(Stage::BehaviorChange),
        Period::Stage(Stage::QuarantineFatigue),
        Period::Stage(Stage::PartialReopening),
        Period::Stage(Stage::PrePandemic),
    ];

    pub fn label(self) -> &'static str {
        match self {
            Period::AfterPandemic => "after_pandemic",
            Period::Stage(s) => s.label(),
        }
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Period {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "after_pandemic" {
            return Ok(Period::AfterPandemic);
        }
        Stage::ALL
            .iter()
            .find(|st| st.label() == s)
            .map(|st| Period::Stage(*st))
            .ok_or_else(|| ModelError::UnknownPeriod(s.to_string()))
    }
}

impl Serialize for Period {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for Period {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Named set of counties treated as one aggregated unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionSpec {
    name: String,
    members: BTreeSet<CountyId>,
}

impl RegionSpec {
    pub fn new(name: impl Into<String>, members: impl IntoIterator<Item = CountyId>) -> Result<Self, ModelError> {
        let name = name.into();
        let mut set = BTreeSet::new();
        for c in members {
            if !set.insert(c) {
                return Err(ModelError::DuplicateMember { name, county: c });
            }
        }
        if set.is_empty() {
            return Err(ModelError::EmptyRegion(name));
        }
        Ok(Self { name, members: set })
    }

    pub fn single(c: CountyId) -> Self {
        Self {
            name: c.to_string(),
            members: BTreeSet::from([c]),
        }
    }

    /// The five boroughs of New York City.
    pub fn new_york_city() -> Self {
        let ids = [36061, 36005, 36081, 36047, 36085].map(|f| CountyId::new(f).unwrap());
        Self::new("nyc", ids).unwrap()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn members(&self) -> &BTreeSet<CountyId> {
        &self.members
    }

    pub fn contains(&self, c: CountyId) -> bool {
        self.members.contains(&c)
    }
}

/// Lag between exposure and measured severity, in whole weeks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct LagSpec {
    weeks: u32,
}

impl LagSpec {
    pub const ALL: [LagSpec; 4] = [
        LagSpec { weeks: 0 },
        LagSpec { weeks: 1 },
        LagSpec { weeks: 2 },
        LagSpec { weeks: 3 },
    ];

    pub fn new(weeks: u32) -> Result<Self, ModelError> {
        if weeks > 3 {
            return Err(ModelError::InvalidLag(weeks));
        }
        Ok(Self { weeks })
    }

    pub fn weeks(self) -> u32 {
        self.weeks
    }

    pub fn days(self) -> i64 {
        7 * i64::from(self.weeks)
    }

    pub fn duration(self) -> Duration {
        Duration::days(self.days())
    }
}

impl TryFrom<u32> for LagSpec {
    type Error = ModelError;
    fn try_from(v: u32) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<LagSpec> for u32 {
    fn from(l: LagSpec) -> u32 {
        l.weeks
    }
}
