//! The log-linear double-risk regression, its ΔR² importance measure, and
//! daily lagged correlations between region outflow and case rates.
//!
//! For each county `j` with demographics, a scenario (period, lag) yields
//!
//! ```text
//! log10 S_j = α · log10 ER_j + β1·age65_j + β2·male_j + β3·afri_j + β4·income_j + γ
//! ```
//!
//! where `ER_j` is the period's external risk and `S_j` the cases per 1000
//! residents `lag` weeks after the period's last day. Income enters as a
//! z-score over the included rows; percentages stay in raw percent.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CountyId, DateRange, LagSpec, Period, RegionSpec, StagePartition};
use crate::risk::{ErWeighting, RiskError, RiskInputs, RiskTable};
use crate::stats::{self, ols_fit, StatsError};

/// Smallest number of usable counties for a scenario fit.
pub const MIN_DESIGN_ROWS: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("only {rows} usable counties (need at least {min})")]
    InsufficientSample { rows: usize, min: usize },
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

impl FitError {
    /// Short status label for tabular output.
    pub fn status(&self) -> &'static str {
        match self {
            FitError::InsufficientSample { .. } => "insufficient_sample",
            FitError::Risk(_) => "risk_error",
            FitError::Stats(StatsError::SingularDesign(_)) => "singular_design",
            FitError::Stats(StatsError::DegenerateTarget) => "degenerate_target",
            FitError::Stats(_) => "fit_error",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Scenario {
    pub period: Period,
    pub lag: LagSpec,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_lag{}", self.period, self.lag.weeks())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    MissingDemographics,
    ZeroEr,
    SeverityUnavailable,
    ZeroSeverity,
}

impl ExclusionReason {
    pub fn label(self) -> &'static str {
        match self {
            ExclusionReason::MissingDemographics => "missing_demographics",
            ExclusionReason::ZeroEr => "zero_er",
            ExclusionReason::SeverityUnavailable => "severity_unavailable",
            ExclusionReason::ZeroSeverity => "zero_severity",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignRow {
    pub county: CountyId,
    pub er: f64,
    pub severity: f64,
    pub log10_er: f64,
    pub age65: f64,
    pub male: f64,
    pub african_american: f64,
    pub income: f64,
    pub income_std: f64,
    pub log10_severity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub scenario: Scenario,
    pub window: DateRange,
    /// Date at which severity is read (`window.end + lag`).
    pub severity_date: NaiveDate,
    pub rows: Vec<DesignRow>,
    pub exclusions: Vec<(CountyId, ExclusionReason)>,
}

impl DesignMatrix {
    fn column(&self, f: impl Fn(&DesignRow) -> f64) -> Vec<f64> {
        self.rows.iter().map(f).collect()
    }

    /// Internal-risk regressors in β order.
    pub fn internal_columns(&self) -> [Vec<f64>; 4] {
        [
            self.column(|r| r.age65),
            self.column(|r| r.male),
            self.column(|r| r.african_american),
            self.column(|r| r.income_std),
        ]
    }

    pub fn target(&self) -> Vec<f64> {
        self.column(|r| r.log10_severity)
    }

    pub fn exclusion_counts(&self) -> BTreeMap<ExclusionReason, usize> {
        let mut m = BTreeMap::new();
        for (_, r) in &self.exclusions {
            *m.entry(*r).or_insert(0) += 1;
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DoubleRiskFit {
    pub scenario: Scenario,
    pub alpha: f64,
    /// Age 65+, male, African-American, standardized income.
    pub beta: [f64; 4],
    pub gamma: f64,
    pub r_squared: f64,
    pub n: usize,
    pub n_excluded: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceResult {
    pub scenario: Scenario,
    pub r2_full: f64,
    pub r2_ir_only: f64,
    pub delta: f64,
}

/// Counties considered for a design: everyone with demographics plus every
/// panel county (the latter may be excluded for missing demographics).
pub fn design_universe(inputs: &RiskInputs<'_>) -> BTreeSet<CountyId> {
    let mut u: BTreeSet<_> = inputs.demo.counties().collect();
    u.extend(inputs.panel.counties());
    u
}

fn design_from_risk(
    inputs: &RiskInputs<'_>,
    scenario: Scenario,
    risk: &RiskTable,
    universe: &BTreeSet<CountyId>,
) -> Result<DesignMatrix, FitError> {
    let window = risk.window;
    let mut rows = Vec::new();
    let mut exclusions = Vec::new();
    for &j in universe {
        let Some(demo) = inputs.demo.get(j) else {
            exclusions.push((j, ExclusionReason::MissingDemographics));
            continue;
        };
        let er = risk.er(j);
        if er <= 0.0 {
            exclusions.push((j, ExclusionReason::ZeroEr));
            continue;
        }
        let sample = inputs.severity(j, window.end, scenario.lag)?;
        let Some(severity) = sample.severity else {
            exclusions.push((j, ExclusionReason::SeverityUnavailable));
            continue;
        };
        if severity <= 0.0 {
            exclusions.push((j, ExclusionReason::ZeroSeverity));
            continue;
        }
        rows.push(DesignRow {
            county: j,
            er,
            severity,
            log10_er: er.log10(),
            age65: demo.pct_age65,
            male: demo.pct_male,
            african_american: demo.pct_african_american,
            income: demo.median_income,
            income_std: 0.0,
            log10_severity: severity.log10(),
        });
    }
    if rows.len() < MIN_DESIGN_ROWS {
        return Err(FitError::InsufficientSample {
            rows: rows.len(),
            min: MIN_DESIGN_ROWS,
        });
    }
    standardize_income(&mut rows);
    Ok(DesignMatrix {
        scenario,
        window,
        severity_date: window.end + scenario.lag.duration(),
        rows,
        exclusions,
    })
}

/// z-score with the sample standard deviation; all zeros when income is
/// constant (the fit then reports a singular design).
fn standardize_income(rows: &mut [DesignRow]) {
    let incomes: Vec<f64> = rows.iter().map(|r| r.income).collect();
    let m = stats::mean(&incomes).unwrap_or(0.0);
    let var = incomes.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (incomes.len() as f64 - 1.0);
    let sd = var.sqrt();
    for r in rows.iter_mut() {
        r.income_std = if sd > 0.0 { (r.income - m) / sd } else { 0.0 };
    }
}

/// Assemble the regression sample for one period window and lag.
pub fn build_design(
    inputs: &RiskInputs<'_>,
    scenario: Scenario,
    window: DateRange,
    weighting: ErWeighting,
) -> Result<DesignMatrix, FitError> {
    let risk = inputs.external_risk_all(window, weighting)?;
    design_from_risk(inputs, scenario, &risk, &design_universe(inputs))
}

pub fn fit_double_risk(design: &DesignMatrix) -> Result<DoubleRiskFit, FitError> {
    let [age, male, afri, inc] = design.internal_columns();
    let cols = [design.column(|r| r.log10_er), age, male, afri, inc];
    let fit = ols_fit(&cols, &design.target())?;
    let b = &fit.coefficients;
    Ok(DoubleRiskFit {
        scenario: design.scenario,
        alpha: b[0],
        beta: [b[1], b[2], b[3], b[4]],
        gamma: fit.intercept,
        r_squared: fit.r_squared,
        n: design.rows.len(),
        n_excluded: design.exclusions.len(),
    })
}

/// R² of the full model against the model with the log external-risk column
/// removed, on the same sample.
pub fn er_importance(design: &DesignMatrix) -> Result<ImportanceResult, FitError> {
    let full = fit_double_risk(design)?;
    let ir = ols_fit(&design.internal_columns(), &design.target())?;
    Ok(ImportanceResult {
        scenario: design.scenario,
        r2_full: full.r_squared,
        r2_ir_only: ir.r_squared,
        delta: full.r_squared - ir.r_squared,
    })
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub scenario: Scenario,
    pub window: DateRange,
    pub design: Result<DesignMatrix, FitError>,
    pub fit: Result<DoubleRiskFit, FitError>,
    pub importance: Result<ImportanceResult, FitError>,
}

/// One fit per (period, lag), periods outermost. A failing cell records its
/// error without affecting the others.
pub fn scenario_grid(
    inputs: &RiskInputs<'_>,
    partition: &StagePartition,
    periods: &[Period],
    lags: &[LagSpec],
    weighting: ErWeighting,
) -> Vec<ScenarioOutcome> {
    let risks = period_risks(inputs, partition, periods, weighting);
    scenarios_from_risk(inputs, &risks, lags)
}

/// Period external risk for each period, computed in parallel.
pub fn period_risks(
    inputs: &RiskInputs<'_>,
    partition: &StagePartition,
    periods: &[Period],
    weighting: ErWeighting,
) -> Vec<(Period, DateRange, Result<RiskTable, RiskError>)> {
    periods
        .par_iter()
        .map(|&p| {
            let w = partition.period_range(p);
            (p, w, inputs.external_risk_all(w, weighting))
        })
        .collect()
}

/// [`scenario_grid`] over precomputed period risks.
pub fn scenarios_from_risk(
    inputs: &RiskInputs<'_>,
    risks: &[(Period, DateRange, Result<RiskTable, RiskError>)],
    lags: &[LagSpec],
) -> Vec<ScenarioOutcome> {
    let universe = design_universe(inputs);
    let cells: Vec<(usize, LagSpec)> = (0..risks.len())
        .flat_map(|i| lags.iter().map(move |l| (i, *l)))
        .collect();
    cells
        .par_iter()
        .map(|&(i, lag)| {
            let (period, window, risk) = &risks[i];
            let scenario = Scenario { period: *period, lag };
            let design = match risk {
                Ok(r) => design_from_risk(inputs, scenario, r, &universe),
                Err(e) => Err(e.clone().into()),
            };
            let fit = design.as_ref().map_err(Clone::clone).and_then(fit_double_risk);
            let importance = design.as_ref().map_err(Clone::clone).and_then(er_importance);
            ScenarioOutcome {
                scenario,
                window: *window,
                design,
                fit,
                importance,
            }
        })
        .collect()
}

/// Which destination counties enter each day's correlation sample.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplePolicy {
    /// Every county that received region trips on any analysis day, with
    /// zero trips on days without flow.
    #[default]
    FixedSetZeroFill,
    /// Only counties with positive region trips on the trip date.
    PositiveFlowOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationPoint {
    pub case_date: NaiveDate,
    pub lag: LagSpec,
    /// Analysis day whose trips are correlated; `None` when it would precede
    /// the calendar.
    pub trip_date: Option<NaiveDate>,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    pub n: usize,
}

impl CorrelationPoint {
    pub fn defined(&self) -> bool {
        self.pearson.is_some() && self.spearman.is_some()
    }
}

/// Destinations outside the region that received positive region trips on
/// any analysis day.
pub fn region_destinations(inputs: &RiskInputs<'_>, region: &RegionSpec) -> BTreeSet<CountyId> {
    inputs
        .panel
        .records()
        .filter(|r| r.trips > 0.0 && region.contains(r.origin) && !region.contains(r.destination))
        .map(|r| r.destination)
        .collect()
}

/// Correlate region→county trips on the trip date with each county's cases
/// per 1000 on `case_date`, where the trip date is `case_date − 7·lag` or
/// the closest earlier analysis day.
pub fn lagged_correlation_series(
    inputs: &RiskInputs<'_>,
    region: &RegionSpec,
    lag: LagSpec,
    case_dates: &[NaiveDate],
    policy: SamplePolicy,
) -> Vec<CorrelationPoint> {
    let dests: Vec<(CountyId, f64)> = region_destinations(inputs, region)
        .into_iter()
        .filter_map(|c| inputs.demo.population(c).map(|p| (c, p as f64)))
        .collect();
    case_dates
        .par_iter()
        .map(|&case_date| correlation_point(inputs, region, lag, case_date, &dests, policy))
        .collect()
}

fn correlation_point(
    inputs: &RiskInputs<'_>,
    region: &RegionSpec,
    lag: LagSpec,
    case_date: NaiveDate,
    dests: &[(CountyId, f64)],
    policy: SamplePolicy,
) -> CorrelationPoint {
    let mut point = CorrelationPoint {
        case_date,
        lag,
        trip_date: None,
        pearson: None,
        spearman: None,
        n: 0,
    };
    let Some(trip_date) = inputs.panel.calendar().on_or_before(case_date - lag.duration()) else {
        return point;
    };
    point.trip_date = Some(trip_date);
    let mut trips: BTreeMap<CountyId, f64> = BTreeMap::new();
    for f in inputs.panel.flows_on(trip_date) {
        if region.contains(f.origin) && !region.contains(f.destination) {
            *trips.entry(f.destination).or_insert(0.0) += f.trips;
        }
    }
    let mut x = Vec::with_capacity(dests.len());
    let mut y = Vec::with_capacity(dests.len());
    for &(c, pop) in dests {
        let t = trips.get(&c).copied().unwrap_or(0.0);
        if policy == SamplePolicy::PositiveFlowOnly && t <= 0.0 {
            continue;
        }
        let Some(cum) = inputs.cases.cumulative(c, case_date) else {
            return point;
        };
        x.push(t);
        y.push(1000.0 * cum / pop);
    }
    point.n = x.len();
    point.pearson = stats::pearson(&x, &y).ok().flatten();
    point.spearman = stats::spearman(&x, &y).ok().flatten();
    point
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Summary {
    pub max: Option<f64>,
    pub mean: Option<f64>,
    pub median: Option<f64>,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        Self {
            max: values.iter().copied().reduce(f64::max),
            mean: stats::mean(values),
            median: stats::median(values),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CorrelationSummary {
    pub pearson: Summary,
    pub spearman: Summary,
    pub n_defined: usize,
}

/// Max, mean and median over the defined points of a series.
pub fn summarize(points: &[CorrelationPoint]) -> CorrelationSummary {
    let p: Vec<f64> = points.iter().filter_map(|c| c.pearson).collect();
    let s: Vec<f64> = points.iter().filter_map(|c| c.spearman).collect();
    CorrelationSummary {
        pearson: Summary::of(&p),
        spearman: Summary::of(&s),
        n_defined: points.iter().filter(|c| c.defined()).count(),
    }
}
