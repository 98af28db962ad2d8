//! Run configuration, command orchestration and result files.
//!
//! Every command stages its files in memory, then writes them to a fresh
//! temporary directory next to the output directory and renames it into
//! place, so an interrupted run never leaves partial results. Each run also
//! writes `manifest.json` with input and output digests.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::fit::{self, CorrelationPoint, SamplePolicy, ScenarioOutcome};
use crate::ingest::{self, CaseSeries, DemographicsTable, Severity, TripPanel, ValidationReport};
use crate::mobility::{self, DEFAULT_TOTAL_COUNTIES};
use crate::model::{
    default_holidays, AnalysisCalendar, CountyId, DateRange, LagSpec, Period, RegionSpec, Stage, StagePartition,
};
use crate::risk::{ErWeighting, RiskInputs};
use crate::synth::{self, EpiParams, GravityParams, LogLinearTruth, SyntheticWorld, WorldSpec};

pub const TOOL_NAME: &str = "mobrisk";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const VALIDATION_FILE: &str = "validation.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SYNTH_PARAMS_FILE: &str = "synth_params.json";

#[derive(Debug, Error)]
pub enum CommandError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("validation failed: {}", summarize_fatal(.0))]
    Validation(Box<ValidationReport>),
    #[error("computation error: {0}")]
    Computation(String),
}

fn summarize_fatal(r: &ValidationReport) -> String {
    r.fatal()
        .map(|i| match &i.location {
            Some(l) => format!("{l}: {}", i.message),
            None => i.message.clone(),
        })
        .collect::<Vec<_>>()
        .join("; ")
}

impl CommandError {
    /// 1 for fatal validation findings, 2 for computation errors, 3 for
    /// configuration errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Validation(_) => 1,
            CommandError::Computation(_) => 2,
            CommandError::Config(_) => 3,
        }
    }
}

fn computation(e: impl std::fmt::Display) -> CommandError {
    CommandError::Computation(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Validate,
    Analyze,
    Correlate,
    Fit,
    Synth,
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Analyze => "analyze",
            Command::Correlate => "correlate",
            Command::Fit => "fit",
            Command::Synth => "synth",
            Command::Report => "report",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalendarConfig {
    pub start: NaiveDate,
    pub end: NaiveDate,
    #[serde(default = "default_holidays")]
    pub holidays: Vec<NaiveDate>,
}

impl Default for CalendarConfig {
    fn default() -> Self {
        let c = AnalysisCalendar::default_study();
        Self {
            start: c.start(),
            end: c.end(),
            holidays: default_holidays(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum SynthCases {
    /// Reported cases from the metapopulation SIR simulation.
    Epidemic,
    /// Cases under which the log-linear model holds for one scenario.
    Loglinear {
        period: Period,
        lag: LagSpec,
        alpha: f64,
        beta: [f64; 4],
        gamma: f64,
        #[serde(default)]
        sigma: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub world: WorldSpec,
    #[serde(default)]
    pub gravity: GravityParams,
    /// Replaces the generated epidemic parameters when present.
    #[serde(default)]
    pub epi: Option<EpiParams>,
    /// Scale daily flows with the stage-shaped mobility curve.
    #[serde(default)]
    pub stage_multipliers: bool,
    pub cases: SynthCases,
}

fn default_stage_cuts() -> [NaiveDate; 3] {
    let d = |m, day| NaiveDate::from_ymd_opt(2020, m, day).expect("valid date");
    [d(3, 13), d(4, 13), d(4, 23)]
}

fn default_regions() -> BTreeMap<String, Vec<CountyId>> {
    let nyc = RegionSpec::new_york_city();
    BTreeMap::from([(nyc.name().to_string(), nyc.members().iter().copied().collect())])
}

fn default_baseline() -> DateRange {
    let d = |m, day| NaiveDate::from_ymd_opt(2020, m, day).expect("valid date");
    DateRange {
        start: d(1, 2),
        end: d(1, 31),
    }
}

fn default_ma_window() -> usize {
    3
}

fn default_total_counties() -> usize {
    DEFAULT_TOTAL_COUNTIES
}

fn default_top_k() -> usize {
    12
}

fn default_lags() -> Vec<LagSpec> {
    LagSpec::ALL.to_vec()
}

fn default_periods() -> Vec<Period> {
    Period::DEFAULT.to_vec()
}

fn default_importance_periods() -> Vec<Period> {
    vec![
        Period::AfterPandemic,
        Period::Stage(Stage::BehaviorChange),
        Period::Stage(Stage::QuarantineFatigue),
        Period::Stage(Stage::PartialReopening),
    ]
}

/// Run configuration, read from a JSON file. Relative paths resolve against
/// the directory holding the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Trip CSV paths or glob patterns.
    #[serde(default)]
    pub trips: Vec<String>,
    #[serde(default)]
    pub cases: Option<PathBuf>,
    #[serde(default)]
    pub demographics: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub calendar: CalendarConfig,
    /// Last days of the pre-pandemic, behaviour-change and
    /// quarantine-fatigue stages.
    #[serde(default = "default_stage_cuts")]
    pub stage_cuts: [NaiveDate; 3],
    #[serde(default = "default_regions")]
    pub regions: BTreeMap<String, Vec<CountyId>>,
    /// Region used for the region metrics and correlations; may be omitted
    /// when only one region is configured.
    #[serde(default)]
    pub focus_region: Option<String>,
    #[serde(default = "default_baseline")]
    pub baseline: DateRange,
    #[serde(default = "default_ma_window")]
    pub moving_average_window: usize,
    /// Any day of each week to compare against the baseline. Defaults to the
    /// first day of the behaviour-change stage, the last day of that stage,
    /// and the calendar end.
    #[serde(default)]
    pub pct_change_weeks: Option<Vec<NaiveDate>>,
    #[serde(default = "default_total_counties")]
    pub total_county_count: usize,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    /// Window for top destinations and destination spread; defaults to the
    /// whole calendar.
    #[serde(default)]
    pub destination_window: Option<DateRange>,
    #[serde(default = "default_lags")]
    pub lags: Vec<LagSpec>,
    #[serde(default = "default_periods")]
    pub periods: Vec<Period>,
    #[serde(default = "default_importance_periods")]
    pub importance_periods: Vec<Period>,
    /// Case dates for the lagged correlations; defaults to every analysis
    /// day.
    #[serde(default)]
    pub correlation_dates: Option<DateRange>,
    #[serde(default)]
    pub sample_policy: SamplePolicy,
    #[serde(default)]
    pub er_weighting: ErWeighting,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CommandError> {
        serde_json::from_str(text).map_err(|e| CommandError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CommandError> {
        let text =
            fs::read_to_string(path).map_err(|e| CommandError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn analysis_calendar(&self) -> Result<AnalysisCalendar, CommandError> {
        AnalysisCalendar::build(self.calendar.start, self.calendar.end, self.calendar.holidays.iter().copied())
            .map_err(|e| CommandError::Config(format!("calendar: {e}")))
    }

    pub fn partition(&self) -> Result<StagePartition, CommandError> {
        StagePartition::new(self.calendar.start, self.stage_cuts, self.calendar.end)
            .map_err(|e| CommandError::Config(format!("stage_cuts: {e}")))
    }

    pub fn region_specs(&self) -> Result<Vec<RegionSpec>, CommandError> {
        self.regions
            .iter()
            .map(|(name, members)| {
                RegionSpec::new(name.clone(), members.iter().copied())
                    .map_err(|e| CommandError::Config(format!("region {name}: {e}")))
            })
            .collect()
    }

    pub fn focus_region(&self) -> Result<RegionSpec, CommandError> {
        let regions = self.region_specs()?;
        match &self.focus_region {
            Some(name) => regions
                .into_iter()
                .find(|r| r.name() == name)
                .ok_or_else(|| CommandError::Config(format!("focus_region {name} is not a configured region"))),
            None if regions.len() == 1 => Ok(regions.into_iter().next().expect("one region")),
            None => Err(CommandError::Config(
                "focus_region is required when several regions are configured".into(),
            )),
        }
    }

    pub fn pct_change_weeks(&self, partition: &StagePartition) -> Vec<DateRange> {
        let days = match &self.pct_change_weeks {
            Some(w) => w.clone(),
            None => {
                let bc = partition.stage_range(Stage::BehaviorChange);
                vec![bc.start, bc.end, self.calendar.end]
            }
        };
        let mut weeks: Vec<DateRange> = days.into_iter().map(mobility::week_of).collect();
        weeks.dedup();
        weeks
    }

    pub fn destination_window(&self) -> DateRange {
        self.destination_window.unwrap_or(DateRange {
            start: self.calendar.start,
            end: self.calendar.end,
        })
    }

    /// Checks everything that does not need the input files.
    pub fn check(&self) -> Result<(), CommandError> {
        self.check_for(Command::Report)
    }

    /// As [`RunConfig::check`], skipping analysis settings for `synth`.
    pub fn check_for(&self, command: Command) -> Result<(), CommandError> {
        let bad = |m: String| Err(CommandError::Config(m));
        let cal = self.analysis_calendar()?;
        self.partition()?;
        self.region_specs()?;
        if !self.regions.is_empty() {
            self.focus_region()?;
        }
        if self.moving_average_window == 0 || self.moving_average_window.is_multiple_of(2) {
            return bad("moving_average_window must be odd and positive".into());
        }
        if self.top_k == 0 {
            return bad("top_k must be positive".into());
        }
        if self.total_county_count == 0 {
            return bad("total_county_count must be positive".into());
        }
        if command != Command::Synth
            && (self.baseline.start > self.baseline.end || cal.indices_in(self.baseline).is_empty())
        {
            return bad(format!("baseline {} has no analysis days", self.baseline));
        }
        for (name, v) in [("lags", has_repeats(&self.lags)), ("periods", has_repeats(&self.periods))] {
            if v {
                return bad(format!("{name} contains repeats"));
            }
        }
        if has_repeats(&self.importance_periods) {
            return bad("importance_periods contains repeats".into());
        }
        for r in [self.destination_window, self.correlation_dates].into_iter().flatten() {
            if r.start > r.end {
                return bad(format!("invalid range {r}"));
            }
        }
        let mut paths: Vec<String> = self.trips.clone();
        paths.extend(self.cases.iter().map(|p| p.display().to_string()));
        paths.extend(self.demographics.iter().map(|p| p.display().to_string()));
        let mut sorted = paths.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != paths.len() {
            return bad("input paths must be distinct".into());
        }
        Ok(())
    }
}

fn has_repeats<T: PartialEq>(v: &[T]) -> bool {
    v.iter().enumerate().any(|(i, a)| v[..i].contains(a))
}

/// Command-line overrides applied on top of the configuration file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: RunConfig,
    /// SHA-256 of each input file, keyed by its configured path.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of each output file other than the manifest.
    pub outputs: BTreeMap<String, String>,
    pub counters: BTreeMap<String, u64>,
    pub timings_seconds: BTreeMap<String, f64>,
}

/// Outcome of a successful command.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub manifest: RunManifest,
    pub validation: Option<ValidationReport>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(64);
    for b in Sha256::digest(bytes) {
        let _ = write!(s, "{b:02x}");
    }
    s
}

/// Files and bookkeeping for one run.
#[derive(Debug, Default)]
struct Staged {
    files: BTreeMap<String, Vec<u8>>,
    counters: BTreeMap<String, u64>,
    timings: BTreeMap<String, f64>,
}

impl Staged {
    fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.insert(name.into(), bytes);
    }
}

fn timed<T>(timings: &mut BTreeMap<String, f64>, step: &str, f: impl FnOnce() -> T) -> T {
    let t = Instant::now();
    let v = f();
    *timings.entry(step.to_string()).or_insert(0.0) += t.elapsed().as_secs_f64();
    v
}

/// Fixed six-decimal rendering; negative zero prints as zero.
pub fn fmt6(v: f64) -> String {
    let s = format!("{v:.6}");
    if s == "-0.000000" {
        "0.000000".to_string()
    } else {
        s
    }
}

fn fmt6_opt(v: Option<f64>) -> String {
    v.map(fmt6).unwrap_or_default()
}

struct Table {
    buf: String,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        let mut t = Self { buf: String::new() };
        t.row(header.iter().map(|s| s.to_string()));
        t
    }

    fn row(&mut self, fields: impl IntoIterator<Item = String>) {
        let mut first = true;
        for f in fields {
            if !first {
                self.buf.push(',');
            }
            first = false;
            self.buf.push_str(&f);
        }
        self.buf.push('\n');
    }

    fn into_bytes(self) -> Vec<u8> {
        self.buf.into_bytes()
    }
}

fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    let mut b = serde_json::to_vec_pretty(v).expect("serializable");
    b.push(b'\n');
    b
}

/// Loaded and validated inputs.
pub struct Inputs {
    pub panel: TripPanel,
    pub cases: CaseSeries,
    pub demo: DemographicsTable,
}

impl Inputs {
    pub fn risk(&self) -> RiskInputs<'_> {
        RiskInputs::new(&self.panel, &self.cases, &self.demo)
    }
}

fn resolve_trip_paths(
    base: &Path,
    patterns: &[String],
    report: &mut ValidationReport,
) -> Result<Vec<(String, PathBuf)>, CommandError> {
    let mut out = Vec::new();
    for pat in patterns {
        if pat.contains(['*', '?', '[']) {
            let full = base.join(pat);
            let full = full.to_str().ok_or_else(|| CommandError::Config(format!("non UTF-8 path {pat}")))?;
            let mut matched: Vec<PathBuf> = glob::glob(full)
                .map_err(|e| CommandError::Config(format!("trips pattern {pat}: {e}")))?
                .filter_map(Result::ok)
                .collect();
            matched.sort();
            if matched.is_empty() {
                report.push(Severity::Fatal, "no_trip_files", format!("pattern {pat} matches no files"), None);
            }
            for m in matched {
                let key = m.strip_prefix(base).unwrap_or(&m).display().to_string();
                out.push((key, m));
            }
        } else {
            out.push((pat.clone(), base.join(pat)));
        }
    }
    if patterns.is_empty() {
        report.push(Severity::Fatal, "no_trip_files", "no trip files configured", None);
    }
    Ok(out)
}

/// SHA-256 of each input file, keyed by path.
pub type InputDigests = BTreeMap<String, String>;

/// Runs the three loaders and the cross-checks. Returns the inputs only
/// when nothing fatal was found.
pub fn load_inputs(
    cfg: &RunConfig,
    base: &Path,
) -> Result<(Option<Inputs>, ValidationReport, InputDigests), CommandError> {
    let calendar = cfg.analysis_calendar()?;
    let mut report = ValidationReport::default();
    let mut digests = BTreeMap::new();
    let trips = resolve_trip_paths(base, &cfg.trips, &mut report)?;
    let mut named: Vec<(String, PathBuf)> = trips.clone();
    let required = |p: &Option<PathBuf>, what: &str| {
        p.clone().ok_or_else(|| CommandError::Config(format!("{what} path is required")))
    };
    let cases_path = required(&cfg.cases, "cases")?;
    let demo_path = required(&cfg.demographics, "demographics")?;
    named.push((cases_path.display().to_string(), base.join(&cases_path)));
    named.push((demo_path.display().to_string(), base.join(&demo_path)));
    for (key, path) in &named {
        if let Ok(bytes) = fs::read(path) {
            digests.insert(key.clone(), sha256_hex(&bytes));
        }
    }

    let trip_files: Vec<PathBuf> = trips.into_iter().map(|(_, p)| p).collect();
    let panel = if trip_files.is_empty() {
        None
    } else {
        match ingest::load_trips(&trip_files, &calendar) {
            Ok((p, r)) => {
                report.merge(r);
                Some(p)
            }
            Err(e) => {
                report.issues.push(e.to_issue());
                None
            }
        }
    };
    let cases = match ingest::load_cases(base.join(&cases_path)) {
        Ok((c, r)) => {
            report.merge(r);
            Some(c)
        }
        Err(e) => {
            report.issues.push(e.to_issue());
            None
        }
    };
    let demo = match ingest::load_demographics(base.join(&demo_path)) {
        Ok((d, r)) => {
            report.merge(r);
            Some(d)
        }
        Err(e) => {
            report.issues.push(e.to_issue());
            None
        }
    };
    let inputs = match (panel, cases, demo) {
        (Some(panel), Some(cases), Some(demo)) => {
            report.merge(ingest::cross_validate(&panel, &cases, &demo));
            Some(Inputs { panel, cases, demo })
        }
        _ => None,
    };
    let inputs = if report.has_fatal() { None } else { inputs };
    Ok((inputs, report, digests))
}

/// Writes `files` to a temporary sibling of `out` and renames it into
/// place. An existing `out` is replaced only if it holds a previous run.
fn commit(out: &Path, files: &BTreeMap<String, Vec<u8>>) -> Result<(), CommandError> {
    let io = |what: &str, p: &Path, e: std::io::Error| CommandError::Computation(format!("{what} {}: {e}", p.display()));
    let parent = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent).map_err(|e| io("creating", &parent, e))?;
    if out.exists() {
        if !out.is_dir() {
            return Err(CommandError::Config(format!("{} exists and is not a directory", out.display())));
        }
        let empty = fs::read_dir(out).map_err(|e| io("reading", out, e))?.next().is_none();
        if !empty && !out.join(MANIFEST_FILE).is_file() {
            return Err(CommandError::Config(format!(
                "{} is not empty and holds no previous run; refusing to replace it",
                out.display()
            )));
        }
    }
    let tmp = tempfile::Builder::new()
        .prefix(".mobrisk-")
        .tempdir_in(&parent)
        .map_err(|e| io("creating temporary directory in", &parent, e))?;
    for (name, bytes) in files {
        let p = tmp.path().join(name);
        fs::write(&p, bytes).map_err(|e| io("writing", &p, e))?;
    }
    let staged = tmp.keep();
    if out.exists() {
        let backup = tempfile::Builder::new()
            .prefix(".mobrisk-old-")
            .tempdir_in(&parent)
            .map_err(|e| io("creating temporary directory in", &parent, e))?
            .keep();
        let old = backup.join("run");
        fs::rename(out, &old).map_err(|e| io("moving aside", out, e))?;
        fs::rename(&staged, out).map_err(|e| io("renaming into", out, e))?;
        fs::remove_dir_all(&backup).map_err(|e| io("removing", &backup, e))?;
    } else {
        fs::rename(&staged, out).map_err(|e| io("renaming into", out, e))?;
    }
    Ok(())
}

fn config_dir(config_path: &Path) -> PathBuf {
    match config_path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// Loads the configuration at `config_path` and runs `command`.
pub fn run(command: Command, config_path: &Path, overrides: &Overrides) -> Result<RunOutcome, CommandError> {
    let mut cfg = RunConfig::load(config_path)?;
    let base = config_dir(config_path);
    if let Some(seed) = overrides.seed {
        match (&mut cfg.synth, command) {
            (Some(s), _) => s.world.seed = seed,
            (None, Command::Synth) => {}
            (None, _) => return Err(CommandError::Config("--seed applies to synth only".into())),
        }
    }
    let out = match (&overrides.out, &cfg.output) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => base.join(o),
        (None, None) => return Err(CommandError::Config("no output directory (set `output` or --out)".into())),
    };
    run_config(command, &cfg, &base, &out)
}

/// Runs `command` with an already parsed configuration.
pub fn run_config(command: Command, cfg: &RunConfig, base: &Path, out: &Path) -> Result<RunOutcome, CommandError> {
    cfg.check_for(command)?;
    let mut staged = Staged::default();
    let mut digests = BTreeMap::new();
    let mut validation = None;
    let mut failure = None;

    if command == Command::Synth {
        synth_files(cfg, &mut staged)?;
    } else {
        let (inputs, report, d) = timed(&mut staged.timings, "load", || load_inputs(cfg, base))?;
        digests = d;
        for (name, c) in &report.counts {
            for (k, v) in [("read", c.read), ("accepted", c.accepted), ("rejected", c.rejected), ("excluded", c.excluded), ("filled", c.filled)] {
                staged.counters.insert(format!("{name}.{k}"), v);
            }
        }
        staged.add(VALIDATION_FILE, json_bytes(&report));
        match inputs {
            None => failure = Some(CommandError::Validation(Box::new(report.clone()))),
            Some(inputs) => {
                if matches!(command, Command::Analyze | Command::Report) {
                    timed(&mut staged.timings, "analyze", || analyze_files(cfg, &inputs, &mut staged.files))?;
                }
                if matches!(command, Command::Correlate | Command::Report) {
                    timed(&mut staged.timings, "correlate", || correlate_files(cfg, &inputs, &mut staged.files))?;
                }
                if matches!(command, Command::Fit | Command::Report) {
                    let counters = timed(&mut staged.timings, "fit", || fit_files(cfg, &inputs, &mut staged.files))?;
                    staged.counters.extend(counters);
                }
            }
        }
        validation = Some(report);
    }

    let mut echo = cfg.clone();
    echo.output = None;
    let manifest = RunManifest {
        tool: TOOL_NAME.into(),
        version: TOOL_VERSION.into(),
        command: command.name().into(),
        config: echo,
        inputs: digests,
        outputs: staged.files.iter().map(|(k, v)| (k.clone(), sha256_hex(v))).collect(),
        counters: staged.counters.clone(),
        timings_seconds: staged.timings.clone(),
    };
    staged.add(MANIFEST_FILE, json_bytes(&manifest));
    commit(out, &staged.files)?;
    match failure {
        Some(e) => Err(e),
        None => Ok(RunOutcome {
            out_dir: out.to_path_buf(),
            manifest,
            validation,
        }),
    }
}

/// Trend, baseline, percent-change, region and destination tables.
pub fn analyze_files(
    cfg: &RunConfig,
    inputs: &Inputs,
    files: &mut BTreeMap<String, Vec<u8>>,
) -> Result<(), CommandError> {
    let panel = &inputs.panel;
    let partition = cfg.partition()?;
    let calendar = panel.calendar();

    let series = mobility::national_inflow_series(panel);
    let ma = mobility::moving_average(&series, cfg.moving_average_window).map_err(computation)?;
    let ma_col = format!("ma{}", cfg.moving_average_window);
    let mut t = Table::new(&["date", "total", &ma_col]);
    for ((d, v), m) in series.iter().zip(&ma.values) {
        t.row([d.to_string(), fmt6(v), fmt6(*m)]);
    }
    files.insert("trend.csv".into(), t.into_bytes());

    let baselines = mobility::county_baselines(panel, cfg.baseline).map_err(computation)?;
    let mut t = Table::new(&["fips", "baseline"]);
    for (c, v) in &baselines.values {
        t.row([c.to_string(), fmt6(*v)]);
    }
    files.insert("baseline.csv".into(), t.into_bytes());

    let mut summary = Table::new(&["week_start", "week_end", "n_counties", "n_defined", "share_increase"]);
    for week in cfg.pct_change_weeks(&partition) {
        let changes = mobility::weekly_pct_change(panel, week.start, &baselines).map_err(computation)?;
        let mut t = Table::new(&["fips", "pct"]);
        for (c, v) in &changes {
            t.row([c.to_string(), fmt6_opt(*v)]);
        }
        files.insert(format!("pct_change_{}.csv", week.start), t.into_bytes());
        let share = mobility::share_with_increase(&changes).ok();
        summary.row([
            week.start.to_string(),
            week.end.to_string(),
            changes.len().to_string(),
            changes.values().filter(|v| v.is_some()).count().to_string(),
            fmt6_opt(share),
        ]);
    }
    files.insert("pct_change_summary.csv".into(), summary.into_bytes());

    let mut t = Table::new(&["date", "stage"]);
    for d in calendar.days() {
        let s = partition.stage_of(*d).map_err(computation)?;
        t.row([d.to_string(), s.label().to_string()]);
    }
    files.insert("stages.csv".into(), t.into_bytes());
    let mut t = Table::new(&["period", "start", "end", "n_days"]);
    for p in &cfg.periods {
        let r = partition.period_range(*p);
        t.row([p.to_string(), r.start.to_string(), r.end.to_string(), calendar.days_in(r).len().to_string()]);
    }
    files.insert("periods.csv".into(), t.into_bytes());

    let region = cfg.focus_region()?;
    let mut t = Table::new(&[
        "date",
        "inflow",
        "outflow",
        "n_origins",
        "n_destinations",
        "rank_inflow",
        "rank_outflow",
        "rank_norigins",
        "rank_ndest",
    ]);
    for day in mobility::region_daily(panel, &region) {
        let m = day.metrics;
        t.row(
            [
                day.date.to_string(),
                fmt6(m.inflow),
                fmt6(m.outflow),
                m.n_origins.to_string(),
                m.n_destinations.to_string(),
            ]
            .into_iter()
            .chain(day.ranks.iter().map(|r| r.to_string())),
        );
    }
    files.insert("region_daily.csv".into(), t.into_bytes());

    let window = cfg.destination_window();
    let mut t = Table::new(&["rank", "fips", "trips"]);
    for (i, (c, v)) in mobility::top_destinations(panel, &region, window, cfg.top_k).iter().enumerate() {
        t.row([(i + 1).to_string(), c.to_string(), fmt6(*v)]);
    }
    files.insert("top_destinations.csv".into(), t.into_bytes());

    let (mean, frac) =
        mobility::destination_spread(panel, &region, window, cfg.total_county_count).map_err(computation)?;
    let mut t = Table::new(&["window_start", "window_end", "mean_destinations", "fraction", "total_counties"]);
    t.row([
        window.start.to_string(),
        window.end.to_string(),
        fmt6(mean),
        fmt6(frac),
        cfg.total_county_count.to_string(),
    ]);
    files.insert("destination_spread.csv".into(), t.into_bytes());
    Ok(())
}

/// Case dates for the correlation series.
pub fn correlation_case_dates(cfg: &RunConfig, calendar: &AnalysisCalendar) -> Vec<NaiveDate> {
    match cfg.correlation_dates {
        Some(r) => r.iter_days().collect(),
        None => calendar.days().to_vec(),
    }
}

/// One `correlations_lag<T>.csv` per configured lag plus a summary table.
pub fn correlate_files(
    cfg: &RunConfig,
    inputs: &Inputs,
    files: &mut BTreeMap<String, Vec<u8>>,
) -> Result<(), CommandError> {
    let region = cfg.focus_region()?;
    let dates = correlation_case_dates(cfg, inputs.panel.calendar());
    let risk = inputs.risk();
    let mut summary = Table::new(&["lag_weeks", "statistic", "max", "mean", "median", "n_defined"]);
    for lag in &cfg.lags {
        let points = fit::lagged_correlation_series(&risk, &region, *lag, &dates, cfg.sample_policy);
        files.insert(format!("correlations_lag{}.csv", lag.weeks()), correlation_table(&points));
        let s = fit::summarize(&points);
        for (name, stat) in [("pearson", s.pearson), ("spearman", s.spearman)] {
            summary.row([
                lag.weeks().to_string(),
                name.to_string(),
                fmt6_opt(stat.max),
                fmt6_opt(stat.mean),
                fmt6_opt(stat.median),
                s.n_defined.to_string(),
            ]);
        }
    }
    files.insert("correlation_summary.csv".into(), summary.into_bytes());
    Ok(())
}

fn correlation_table(points: &[CorrelationPoint]) -> Vec<u8> {
    let mut t = Table::new(&["case_date", "pearson", "spearman", "n", "defined"]);
    for p in points {
        t.row([
            p.case_date.to_string(),
            fmt6_opt(p.pearson),
            fmt6_opt(p.spearman),
            p.n.to_string(),
            p.defined().to_string(),
        ]);
    }
    t.into_bytes()
}

/// Fits, importance, design dumps, external risk and severity tables.
/// Returns exclusion counters for the manifest.
pub fn fit_files(
    cfg: &RunConfig,
    inputs: &Inputs,
    files: &mut BTreeMap<String, Vec<u8>>,
) -> Result<BTreeMap<String, u64>, CommandError> {
    let partition = cfg.partition()?;
    let risk = inputs.risk();
    let mut periods = cfg.periods.clone();
    for p in &cfg.importance_periods {
        if !periods.contains(p) {
            periods.push(*p);
        }
    }
    let risks = fit::period_risks(&risk, &partition, &periods, cfg.er_weighting);
    let grid = fit::scenarios_from_risk(&risk, &risks, &cfg.lags);
    let universe = fit::design_universe(&risk);

    let mut t = Table::new(&["fips", "window_start", "window_end", "er", "n_origins"]);
    for (p, window, table) in &risks {
        if !cfg.periods.contains(p) {
            continue;
        }
        let table = table.as_ref().map_err(computation)?;
        for c in &universe {
            let e = table.get(*c);
            t.row([
                c.to_string(),
                window.start.to_string(),
                window.end.to_string(),
                fmt6(e.er),
                e.n_origins.to_string(),
            ]);
        }
    }
    files.insert("external_risk.csv".into(), t.into_bytes());

    let mut t = Table::new(&["fips", "anchor", "lag_weeks", "severity", "available"]);
    let mut anchors: Vec<NaiveDate> = risks
        .iter()
        .filter(|(p, _, _)| cfg.periods.contains(p))
        .map(|(_, w, _)| w.end)
        .collect();
    anchors.sort();
    anchors.dedup();
    for anchor in anchors {
        for lag in &cfg.lags {
            for c in &universe {
                let Ok(s) = risk.severity(*c, anchor, *lag) else {
                    continue;
                };
                t.row([
                    c.to_string(),
                    anchor.to_string(),
                    lag.weeks().to_string(),
                    fmt6_opt(s.severity),
                    s.available().to_string(),
                ]);
            }
        }
    }
    files.insert("severity.csv".into(), t.into_bytes());

    let cell = |p: Period| grid.iter().filter(move |o| o.scenario.period == p);
    let mut counters = BTreeMap::new();
    let mut fits = Table::new(&[
        "period",
        "lag_weeks",
        "alpha",
        "beta_age",
        "beta_male",
        "beta_afri",
        "beta_inc",
        "gamma",
        "r2",
        "n",
        "n_excluded",
        "status",
    ]);
    for p in &cfg.periods {
        for o in cell(*p) {
            fits.row(fit_row(o));
            if let Ok(d) = &o.design {
                files.insert(format!("design_{}.csv", o.scenario), design_table(d));
                for (reason, n) in d.exclusion_counts() {
                    counters.insert(format!("excluded.{}.{}", o.scenario, reason.label()), n as u64);
                }
            }
        }
    }
    files.insert("fits.csv".into(), fits.into_bytes());

    let mut imp = Table::new(&["period", "lag_weeks", "r2_full", "r2_ir_only", "delta", "status"]);
    for p in &cfg.importance_periods {
        for o in cell(*p) {
            let mut row = vec![o.scenario.period.to_string(), o.scenario.lag.weeks().to_string()];
            match &o.importance {
                Ok(i) => {
                    row.extend([fmt6(i.r2_full), fmt6(i.r2_ir_only), fmt6(i.delta), "ok".to_string()]);
                }
                Err(e) => {
                    row.extend([String::new(), String::new(), String::new(), e.status().to_string()]);
                }
            }
            imp.row(row);
        }
    }
    files.insert("importance.csv".into(), imp.into_bytes());
    Ok(counters)
}

fn fit_row(o: &ScenarioOutcome) -> Vec<String> {
    let mut row = vec![o.scenario.period.to_string(), o.scenario.lag.weeks().to_string()];
    let (n, n_excl) = match &o.design {
        Ok(d) => (d.rows.len().to_string(), d.exclusions.len().to_string()),
        Err(_) => (String::new(), String::new()),
    };
    match &o.fit {
        Ok(f) => {
            row.push(fmt6(f.alpha));
            row.extend(f.beta.iter().map(|b| fmt6(*b)));
            row.extend([fmt6(f.gamma), fmt6(f.r_squared), n, n_excl, "ok".to_string()]);
        }
        Err(e) => {
            row.extend(std::iter::repeat_n(String::new(), 7));
            row.extend([n, n_excl, e.status().to_string()]);
        }
    }
    row
}

fn design_table(d: &fit::DesignMatrix) -> Vec<u8> {
    let mut t = Table::new(&[
        "fips",
        "status",
        "er",
        "severity",
        "log10_er",
        "age65",
        "male",
        "afri",
        "income",
        "income_std",
        "log10_severity",
    ]);
    let mut rows: Vec<(CountyId, Vec<String>)> = d
        .rows
        .iter()
        .map(|r| {
            let mut v = vec!["included".to_string()];
            v.extend(
                [
                    r.er,
                    r.severity,
                    r.log10_er,
                    r.age65,
                    r.male,
                    r.african_american,
                    r.income,
                    r.income_std,
                    r.log10_severity,
                ]
                .map(fmt6),
            );
            (r.county, v)
        })
        .collect();
    rows.extend(d.exclusions.iter().map(|(c, reason)| {
        let mut v = vec![reason.label().to_string()];
        v.extend(std::iter::repeat_n(String::new(), 9));
        (*c, v)
    }));
    rows.sort_by_key(|(c, _)| *c);
    for (c, v) in rows {
        t.row(std::iter::once(c.to_string()).chain(v));
    }
    t.into_bytes()
}

/// Generates the synthetic world described by `cfg.synth`.
pub fn build_synthetic(cfg: &RunConfig) -> Result<(SyntheticWorld, TripPanel, CaseSeries), CommandError> {
    let sc = cfg
        .synth
        .as_ref()
        .ok_or_else(|| CommandError::Config("synth section is required".into()))?;
    let calendar = cfg.analysis_calendar()?;
    let partition = cfg.partition()?;
    let mut gravity = sc.gravity.clone();
    if sc.stage_multipliers {
        for (d, m) in synth::stage_multipliers(&calendar, &partition) {
            gravity.daily_multipliers.entry(d).or_insert(m);
        }
    }
    let config_err = |e: synth::SynthError| CommandError::Config(e.to_string());
    let mut world = SyntheticWorld::generate(&sc.world, gravity).map_err(config_err)?;
    if let Some(epi) = &sc.epi {
        world.epi = epi.clone();
    }
    world.validate().map_err(config_err)?;
    if let SynthCases::Loglinear { alpha, sigma, .. } = sc.cases {
        if !(0.0..1.0).contains(&alpha) || !(sigma.is_finite() && sigma >= 0.0) {
            return Err(CommandError::Config("loglinear needs 0 <= alpha < 1 and sigma >= 0".into()));
        }
    }
    let panel = synth::gravity_flows(&world, &calendar).map_err(computation)?;
    let cases = match &sc.cases {
        SynthCases::Epidemic => synth::simulate_epidemic(&world, &panel, &calendar),
        SynthCases::Loglinear {
            period,
            lag,
            alpha,
            beta,
            gamma,
            sigma,
        } => synth::generate_loglinear(
            &world,
            &panel,
            partition.period_range(*period),
            *lag,
            LogLinearTruth {
                alpha: *alpha,
                beta: *beta,
                gamma: *gamma,
            },
            *sigma,
        ),
    }
    .map_err(computation)?;
    Ok((world, panel, cases))
}

#[derive(Serialize)]
struct SynthEcho<'a> {
    synth: &'a SynthConfig,
    world: &'a SyntheticWorld,
}

fn synth_files(cfg: &RunConfig, staged: &mut Staged) -> Result<(), CommandError> {
    let (world, panel, cases) = timed(&mut staged.timings, "synth", || build_synthetic(cfg))?;
    let demo = world.demographics();
    let report = ingest::cross_validate(&panel, &cases, &demo);
    if report.has_fatal() {
        return Err(CommandError::Computation(format!("synthetic data failed validation: {}", summarize_fatal(&report))));
    }
    let csv_err = |e: csv::Error| CommandError::Computation(e.to_string());
    let mut od = Vec::new();
    ingest::write_trips(&panel, &mut od).map_err(csv_err)?;
    let mut cs = Vec::new();
    ingest::write_cases(&cases, &mut cs).map_err(csv_err)?;
    let mut dm = Vec::new();
    ingest::write_demographics(&demo, &mut dm).map_err(csv_err)?;
    staged.add("od.csv", od);
    staged.add("cases.csv", cs);
    staged.add("demographics.csv", dm);
    let sc = cfg.synth.as_ref().expect("checked by build_synthetic");
    staged.add(SYNTH_PARAMS_FILE, json_bytes(&SynthEcho { synth: sc, world: &world }));
    staged.counters.insert("synth.counties".into(), world.counties.len() as u64);
    staged.counters.insert("synth.od_rows".into(), panel.len() as u64);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fmt6_normalizes_negative_zero() {
        assert_eq!(fmt6(-1e-9), "0.000000");
        assert_eq!(fmt6(-0.5), "-0.500000");
        assert_eq!(fmt6(0.0078125), "0.007812");
        assert_eq!(fmt6_opt(None), "");
    }

    #[test]
    fn config_defaults_and_checks() {
        let cfg = RunConfig::from_json(r#"{"trips": ["od.csv"], "cases": "c.csv", "demographics": "d.csv"}"#).unwrap();
        cfg.check().unwrap();
        assert_eq!(cfg.lags.len(), 4);
        assert_eq!(cfg.periods.len(), 5);
        assert_eq!(cfg.importance_periods.len(), 4);
        assert_eq!(cfg.focus_region().unwrap(), RegionSpec::new_york_city());
        let weeks = cfg.pct_change_weeks(&cfg.partition().unwrap());
        assert_eq!(weeks.len(), 3);
        assert_eq!(weeks[0].start, NaiveDate::from_ymd_opt(2020, 3, 9).unwrap());

        let bad = [
            r#"{"lags": [4]}"#,
            r#"{"stage_cuts": ["2020-03-13", "2020-04-13", "2021-01-01"]}"#,
            r#"{"trips": ["a.csv"], "cases": "a.csv"}"#,
            r#"{"unknown_key": 1}"#,
            r#"{"moving_average_window": 2}"#,
            r#"{"regions": {"a": ["36061"], "b": ["36005"]}}"#,
        ];
        for text in bad {
            let r = RunConfig::from_json(text).and_then(|c| c.check());
            assert!(matches!(r, Err(CommandError::Config(_))), "{text}");
        }
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CommandError::Config(String::new()).exit_code(), 3);
        assert_eq!(CommandError::Computation(String::new()).exit_code(), 2);
        assert_eq!(CommandError::Validation(Box::default()).exit_code(), 1);
    }

    #[test]
    fn commit_refuses_foreign_directories() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        fs::create_dir(&out).unwrap();
        fs::write(out.join("notes.txt"), "keep").unwrap();
        let files = BTreeMap::from([(MANIFEST_FILE.to_string(), b"{}".to_vec())]);
        assert!(matches!(commit(&out, &files), Err(CommandError::Config(_))));
        assert!(out.join("notes.txt").exists());

        let out2 = dir.path().join("fresh");
        commit(&out2, &files).unwrap();
        commit(&out2, &files).unwrap();
        assert_eq!(fs::read(out2.join(MANIFEST_FILE)).unwrap(), b"{}");
        let leftovers: Vec<_> = fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(leftovers.len(), 2);
    }
}
