//! Case weights, external risk and lagged outbreak severity.
//!
//! The external risk of county `j` on day `d` is the inbound trip volume
//! weighted by each origin's cumulative cases per 1000 residents:
//!
//! ```text
//! ER_j(d) = Σ_{i ≠ j} w_i(d) · E_ij(d),   w_i(d) = 1000 · cases_i(d) / pop_i
//! ```
//!
//! Sums over origins run in ascending FIPS order and sums over days in date
//! order, so results are bit-reproducible.

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{CaseSeries, DemographicsTable, TripPanel};
use crate::model::{CountyId, DateRange, LagSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RiskError {
    #[error("county {0} has no demographics")]
    MissingDemographics(CountyId),
    #[error("case data for {county} does not cover {date}")]
    BeyondCoverage { county: CountyId, date: NaiveDate },
    #[error("window {0} contains no analysis days")]
    EmptyWindow(DateRange),
    #[error("{0} is not an analysis day")]
    NotInCalendar(NaiveDate),
}

/// How daily flows are weighted when aggregated over a period.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErWeighting {
    /// Each day's flows use that day's origin weights.
    #[default]
    DailySynchronous,
    /// Period-total flows use origin weights on the period's last analysis day.
    PeriodEnd,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaseWeight {
    pub county: CountyId,
    pub date: NaiveDate,
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExternalRisk {
    pub county: CountyId,
    pub window: DateRange,
    pub er: f64,
    /// Distinct origins with a positive weighted contribution in the window.
    pub n_origins: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeveritySample {
    pub county: CountyId,
    pub anchor: NaiveDate,
    pub lag: LagSpec,
    /// Cases per 1000 at `anchor + lag`; `None` past the case coverage.
    pub severity: Option<f64>,
}

impl SeveritySample {
    pub fn available(&self) -> bool {
        self.severity.is_some()
    }

    pub fn target_date(&self) -> NaiveDate {
        self.anchor + self.lag.duration()
    }
}

/// Origins skipped because they lack demographics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RiskDiagnostics {
    pub skipped_origins: BTreeSet<CountyId>,
    pub skipped_flows: usize,
    pub skipped_trips: f64,
}

impl RiskDiagnostics {
    fn skip(&mut self, origin: CountyId, trips: f64) {
        self.skipped_origins.insert(origin);
        self.skipped_flows += 1;
        self.skipped_trips += trips;
    }
}

pub fn case_weight(
    cases: &CaseSeries,
    demo: &DemographicsTable,
    county: CountyId,
    date: NaiveDate,
) -> Result<CaseWeight, RiskError> {
    let pop = demo.population(county).ok_or(RiskError::MissingDemographics(county))?;
    let cum = cases
        .cumulative(county, date)
        .ok_or(RiskError::BeyondCoverage { county, date })?;
    Ok(CaseWeight {
        county,
        date,
        w: 1000.0 * cum / pop as f64,
    })
}

/// The three inputs the risk computations read.
#[derive(Debug, Clone, Copy)]
pub struct RiskInputs<'a> {
    pub panel: &'a TripPanel,
    pub cases: &'a CaseSeries,
    pub demo: &'a DemographicsTable,
}

#[derive(Debug, Clone, Default)]
struct DayRisk {
    er: f64,
    positive_origins: Vec<CountyId>,
}

/// Per-period risk for every destination with inbound flows.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskTable {
    pub window: DateRange,
    pub by_county: BTreeMap<CountyId, ExternalRisk>,
    pub diagnostics: RiskDiagnostics,
}

impl RiskTable {
    /// External risk of `j`; zero when it has no inbound flows.
    pub fn er(&self, j: CountyId) -> f64 {
        self.by_county.get(&j).map_or(0.0, |r| r.er)
    }

    pub fn get(&self, j: CountyId) -> ExternalRisk {
        self.by_county.get(&j).cloned().unwrap_or(ExternalRisk {
            county: j,
            window: self.window,
            er: 0.0,
            n_origins: 0,
        })
    }
}

impl<'a> RiskInputs<'a> {
    pub fn new(panel: &'a TripPanel, cases: &'a CaseSeries, demo: &'a DemographicsTable) -> Self {
        Self { panel, cases, demo }
    }

    pub fn case_weight(&self, county: CountyId, date: NaiveDate) -> Result<CaseWeight, RiskError> {
        case_weight(self.cases, self.demo, county, date)
    }

    /// Daily external risk of every destination on analysis day `idx`.
    fn day_all(&self, idx: usize, diag: &mut RiskDiagnostics) -> Result<BTreeMap<CountyId, DayRisk>, RiskError> {
        let date = self.panel.calendar().days()[idx];
        let mut out: BTreeMap<CountyId, DayRisk> = BTreeMap::new();
        let mut cached: Option<(CountyId, Option<f64>)> = None;
        // flows are sorted by origin, so each destination accumulates in
        // ascending origin order
        for f in self.panel.flows_at(idx) {
            let w = match cached {
                Some((o, w)) if o == f.origin => w,
                _ => {
                    let w = match self.case_weight(f.origin, date) {
                        Ok(cw) => Some(cw.w),
                        Err(RiskError::MissingDemographics(_)) => None,
                        Err(e) => return Err(e),
                    };
                    cached = Some((f.origin, w));
                    w
                }
            };
            let Some(w) = w else {
                diag.skip(f.origin, f.trips);
                continue;
            };
            let contribution = w * f.trips;
            let entry = out.entry(f.destination).or_default();
            entry.er += contribution;
            if contribution > 0.0 {
                entry.positive_origins.push(f.origin);
            }
        }
        Ok(out)
    }

    /// `Σ_i w_i(d) E_ij(d)` for one destination and analysis day.
    pub fn external_risk_day(&self, j: CountyId, d: NaiveDate) -> Result<f64, RiskError> {
        let idx = self.panel.calendar().index_of(d).ok_or(RiskError::NotInCalendar(d))?;
        let mut diag = RiskDiagnostics::default();
        Ok(self.day_all(idx, &mut diag)?.get(&j).map_or(0.0, |r| r.er))
    }

    pub fn external_risk_period(
        &self,
        j: CountyId,
        window: DateRange,
        weighting: ErWeighting,
    ) -> Result<ExternalRisk, RiskError> {
        Ok(self.external_risk_all(window, weighting)?.get(j))
    }

    /// Period external risk for every destination with inbound flows.
    pub fn external_risk_all(&self, window: DateRange, weighting: ErWeighting) -> Result<RiskTable, RiskError> {
        let idx = self.panel.calendar().indices_in(window);
        if idx.is_empty() {
            return Err(RiskError::EmptyWindow(window));
        }
        let mut diag = RiskDiagnostics::default();
        let mut totals: BTreeMap<CountyId, (f64, BTreeSet<CountyId>)> = BTreeMap::new();
        match weighting {
            ErWeighting::DailySynchronous => {
                for i in idx {
                    for (j, day) in self.day_all(i, &mut diag)? {
                        let t = totals.entry(j).or_default();
                        t.0 += day.er;
                        t.1.extend(day.positive_origins);
                    }
                }
            }
            ErWeighting::PeriodEnd => {
                let end = self.panel.calendar().days()[idx.end - 1];
                let mut flows: BTreeMap<(CountyId, CountyId), f64> = BTreeMap::new();
                for i in idx {
                    for f in self.panel.flows_at(i) {
                        *flows.entry((f.destination, f.origin)).or_insert(0.0) += f.trips;
                    }
                }
                for ((j, o), trips) in flows {
                    let w = match self.case_weight(o, end) {
                        Ok(cw) => cw.w,
                        Err(RiskError::MissingDemographics(_)) => {
                            diag.skip(o, trips);
                            continue;
                        }
                        Err(e) => return Err(e),
                    };
                    let t = totals.entry(j).or_default();
                    t.0 += w * trips;
                    if w * trips > 0.0 {
                        t.1.insert(o);
                    }
                }
            }
        }
        let by_county = totals
            .into_iter()
            .map(|(j, (er, origins))| {
                (
                    j,
                    ExternalRisk {
                        county: j,
                        window,
                        er,
                        n_origins: origins.len(),
                    },
                )
            })
            .collect();
        Ok(RiskTable {
            window,
            by_county,
            diagnostics: diag,
        })
    }

    pub fn severity(&self, j: CountyId, anchor: NaiveDate, lag: LagSpec) -> Result<SeveritySample, RiskError> {
        severity(self.cases, self.demo, j, anchor, lag)
    }
}

/// Cumulative cases per 1000 residents `lag` calendar weeks after `anchor`.
pub fn severity(
    cases: &CaseSeries,
    demo: &DemographicsTable,
    j: CountyId,
    anchor: NaiveDate,
    lag: LagSpec,
) -> Result<SeveritySample, RiskError> {
    let pop = demo.population(j).ok_or(RiskError::MissingDemographics(j))?;
    let target = anchor + lag.duration();
    Ok(SeveritySample {
        county: j,
        anchor,
        lag,
        severity: cases.cumulative(j, target).map(|c| 1000.0 * c / pop as f64),
    })
}
