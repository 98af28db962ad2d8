//! Trend, baseline, percent-change and region-flow metrics over a
//! [`TripPanel`].

use std::collections::{BTreeMap, BTreeSet};

use chrono::{Duration, NaiveDate};
use thiserror::Error;

use crate::ingest::TripPanel;
use crate::model::{week_start, CountyId, DateRange, RegionSpec};
use crate::stats::{self, StatsError};

/// Default number of US counties and county-equivalents.
pub const DEFAULT_TOTAL_COUNTIES: usize = 3143;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticsError {
    #[error("window {0} contains no analysis days")]
    EmptyWindow(DateRange),
    #[error("{0} is not an analysis day")]
    NotInCalendar(NaiveDate),
    #[error("no defined entries to summarise")]
    Degenerate,
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Values aligned with the analysis days of their source panel.
#[derive(Debug, Clone, PartialEq)]
pub struct DailySeries {
    pub days: Vec<NaiveDate>,
    pub values: Vec<f64>,
}

impl DailySeries {
    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NaiveDate, f64)> + '_ {
        self.days.iter().copied().zip(self.values.iter().copied())
    }
}

/// Total inter-county trips per analysis day.
pub fn national_inflow_series(panel: &TripPanel) -> DailySeries {
    let days = panel.calendar().days().to_vec();
    let values = (0..days.len())
        .map(|i| panel.flows_at(i).iter().map(|f| f.trips).sum())
        .collect();
    DailySeries { days, values }
}

pub fn moving_average(s: &DailySeries, window: usize) -> Result<DailySeries, AnalyticsError> {
    Ok(DailySeries {
        days: s.days.clone(),
        values: stats::moving_average(&s.values, window)?,
    })
}

/// Total inflow per destination county on the `idx`-th analysis day.
pub fn county_inflow_on(panel: &TripPanel, idx: usize) -> BTreeMap<CountyId, f64> {
    let mut m = BTreeMap::new();
    for f in panel.flows_at(idx) {
        *m.entry(f.destination).or_insert(0.0) += f.trips;
    }
    m
}

/// Mean daily inflow per county over a window.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BaselineTable {
    pub window: Option<DateRange>,
    pub values: BTreeMap<CountyId, f64>,
}

impl BaselineTable {
    pub fn get(&self, c: CountyId) -> Option<f64> {
        self.values.get(&c).copied()
    }
}

fn window_indices(panel: &TripPanel, window: DateRange) -> Result<std::ops::Range<usize>, AnalyticsError> {
    let r = panel.calendar().indices_in(window);
    if r.is_empty() {
        return Err(AnalyticsError::EmptyWindow(window));
    }
    Ok(r)
}

/// Mean inflow per county over the window's analysis days, zero-inflow days
/// included. Every county appearing in the panel gets an entry.
fn mean_inflow(panel: &TripPanel, window: DateRange) -> Result<BTreeMap<CountyId, f64>, AnalyticsError> {
    let idx = window_indices(panel, window)?;
    let n = idx.len() as f64;
    let mut sums: BTreeMap<CountyId, f64> = panel.counties().into_iter().map(|c| (c, 0.0)).collect();
    for i in idx {
        for (c, v) in county_inflow_on(panel, i) {
            *sums.get_mut(&c).expect("panel county") += v;
        }
    }
    sums.values_mut().for_each(|v| *v /= n);
    Ok(sums)
}

pub fn county_baselines(panel: &TripPanel, window: DateRange) -> Result<BaselineTable, AnalyticsError> {
    Ok(BaselineTable {
        window: Some(window),
        values: mean_inflow(panel, window)?,
    })
}

/// Monday-to-Sunday week containing `d`.
pub fn week_of(d: NaiveDate) -> DateRange {
    let s = week_start(d);
    DateRange {
        start: s,
        end: s + Duration::days(6),
    }
}

/// Percent change per county; `None` where the baseline is zero.
pub type PercentChanges = BTreeMap<CountyId, Option<f64>>;

/// Percent change of each county's mean daily inflow in the week containing
/// `week_of` relative to its baseline.
pub fn weekly_pct_change(
    panel: &TripPanel,
    week: NaiveDate,
    baselines: &BaselineTable,
) -> Result<PercentChanges, AnalyticsError> {
    let means = mean_inflow(panel, week_of(week))?;
    Ok(baselines
        .values
        .iter()
        .map(|(c, &base)| {
            let m = means.get(c).copied().unwrap_or(0.0);
            let pct = (base > 0.0).then(|| 100.0 * (m - base) / base);
            (*c, pct)
        })
        .collect())
}

/// Fraction of defined entries that are strictly positive.
pub fn share_with_increase(changes: &PercentChanges) -> Result<f64, AnalyticsError> {
    let defined: Vec<f64> = changes.values().flatten().copied().collect();
    if defined.is_empty() {
        return Err(AnalyticsError::Degenerate);
    }
    let up = defined.iter().filter(|v| **v > 0.0).count();
    Ok(up as f64 / defined.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FlowMetrics {
    pub inflow: f64,
    pub outflow: f64,
    pub n_origins: usize,
    pub n_destinations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionFlowMetrics {
    pub date: NaiveDate,
    pub metrics: FlowMetrics,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankMetric {
    Inflow,
    Outflow,
    NOrigins,
    NDestinations,
}

impl RankMetric {
    pub const ALL: [RankMetric; 4] = [
        RankMetric::Inflow,
        RankMetric::Outflow,
        RankMetric::NOrigins,
        RankMetric::NDestinations,
    ];

    fn value(self, m: &FlowMetrics) -> f64 {
        match self {
            RankMetric::Inflow => m.inflow,
            RankMetric::Outflow => m.outflow,
            RankMetric::NOrigins => m.n_origins as f64,
            RankMetric::NDestinations => m.n_destinations as f64,
        }
    }
}

/// Flow metrics for the region (as one unit) and every panel county outside
/// it, on the `idx`-th analysis day. The region comes first.
fn unit_metrics(panel: &TripPanel, region: &RegionSpec, others: &[CountyId], idx: usize) -> Vec<FlowMetrics> {
    #[derive(Default)]
    struct Acc {
        m: FlowMetrics,
        origins: BTreeSet<CountyId>,
        destinations: BTreeSet<CountyId>,
    }
    let mut region_acc = Acc::default();
    let mut counties: BTreeMap<CountyId, Acc> = others.iter().map(|c| (*c, Acc::default())).collect();
    for f in panel.flows_at(idx) {
        let (o_in, d_in) = (region.contains(f.origin), region.contains(f.destination));
        match (o_in, d_in) {
            (true, true) => {}
            (false, true) => {
                region_acc.m.inflow += f.trips;
                if f.trips > 0.0 {
                    region_acc.origins.insert(f.origin);
                }
            }
            (true, false) => {
                region_acc.m.outflow += f.trips;
                if f.trips > 0.0 {
                    region_acc.destinations.insert(f.destination);
                }
            }
            (false, false) => {}
        }
        if !o_in {
            let a = counties.get_mut(&f.origin).expect("panel county");
            a.m.outflow += f.trips;
            if f.trips > 0.0 {
                a.destinations.insert(f.destination);
            }
        }
        if !d_in {
            let a = counties.get_mut(&f.destination).expect("panel county");
            a.m.inflow += f.trips;
            if f.trips > 0.0 {
                a.origins.insert(f.origin);
            }
        }
    }
    std::iter::once(region_acc)
        .chain(counties.into_values())
        .map(|mut a| {
            a.m.n_origins = a.origins.len();
            a.m.n_destinations = a.destinations.len();
            a.m
        })
        .collect()
}

fn external_counties(panel: &TripPanel, region: &RegionSpec) -> Vec<CountyId> {
    panel.counties().into_iter().filter(|c| !region.contains(*c)).collect()
}

fn day_index(panel: &TripPanel, d: NaiveDate) -> Result<usize, AnalyticsError> {
    panel.calendar().index_of(d).ok_or(AnalyticsError::NotInCalendar(d))
}

/// Inflow and outflow of the region on `d`, excluding flows between its
/// own members.
pub fn region_flow_metrics(
    panel: &TripPanel,
    region: &RegionSpec,
    d: NaiveDate,
) -> Result<RegionFlowMetrics, AnalyticsError> {
    let idx = day_index(panel, d)?;
    let mut m = FlowMetrics::default();
    let mut origins = BTreeSet::new();
    let mut destinations = BTreeSet::new();
    for f in panel.flows_at(idx) {
        match (region.contains(f.origin), region.contains(f.destination)) {
            (false, true) => {
                m.inflow += f.trips;
                if f.trips > 0.0 {
                    origins.insert(f.origin);
                }
            }
            (true, false) => {
                m.outflow += f.trips;
                if f.trips > 0.0 {
                    destinations.insert(f.destination);
                }
            }
            _ => {}
        }
    }
    m.n_origins = origins.len();
    m.n_destinations = destinations.len();
    Ok(RegionFlowMetrics { date: d, metrics: m })
}

/// Competition rank (1 + number of strictly larger values) of the first unit.
fn competition_rank(units: &[FlowMetrics], metric: RankMetric) -> usize {
    let v = metric.value(&units[0]);
    1 + units[1..].iter().filter(|u| metric.value(u) > v).count()
}

/// Rank of the region among itself and every county outside it, descending.
pub fn region_rank(
    panel: &TripPanel,
    region: &RegionSpec,
    metric: RankMetric,
    d: NaiveDate,
) -> Result<usize, AnalyticsError> {
    let idx = day_index(panel, d)?;
    let others = external_counties(panel, region);
    Ok(competition_rank(&unit_metrics(panel, region, &others, idx), metric))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionDay {
    pub date: NaiveDate,
    pub metrics: FlowMetrics,
    /// Ranks in [`RankMetric::ALL`] order.
    pub ranks: [usize; 4],
}

/// Region metrics and all four ranks for every analysis day.
pub fn region_daily(panel: &TripPanel, region: &RegionSpec) -> Vec<RegionDay> {
    let others = external_counties(panel, region);
    panel
        .calendar()
        .days()
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let units = unit_metrics(panel, region, &others, i);
            RegionDay {
                date: *d,
                metrics: units[0],
                ranks: RankMetric::ALL.map(|m| competition_rank(&units, m)),
            }
        })
        .collect()
}

/// External counties receiving the most trips from the region over the
/// window; ties go to the lower FIPS.
pub fn top_destinations(
    panel: &TripPanel,
    region: &RegionSpec,
    window: DateRange,
    k: usize,
) -> Vec<(CountyId, f64)> {
    let mut totals: BTreeMap<CountyId, f64> = BTreeMap::new();
    for i in panel.calendar().indices_in(window) {
        for f in panel.flows_at(i) {
            if region.contains(f.origin) && !region.contains(f.destination) {
                *totals.entry(f.destination).or_insert(0.0) += f.trips;
            }
        }
    }
    let mut v: Vec<_> = totals.into_iter().filter(|(_, t)| *t > 0.0).collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    v.truncate(k);
    v
}

/// Mean daily number of external destinations reached from the region, and
/// that mean as a fraction of `total_counties`.
pub fn destination_spread(
    panel: &TripPanel,
    region: &RegionSpec,
    window: DateRange,
    total_counties: usize,
) -> Result<(f64, f64), AnalyticsError> {
    let idx = window_indices(panel, window)?;
    let n = idx.len() as f64;
    let mut sum = 0usize;
    for i in idx {
        let dests: BTreeSet<_> = panel
            .flows_at(i)
            .iter()
            .filter(|f| f.trips > 0.0 && region.contains(f.origin) && !region.contains(f.destination))
            .map(|f| f.destination)
            .collect();
        sum += dests.len();
    }
    let mean = sum as f64 / n;
    Ok((mean, mean / total_counties as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::TripRecord;
    use crate::model::AnalysisCalendar;
    use proptest::prelude::*;

    fn d(m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, m, day).unwrap()
    }

    fn c(f: u32) -> CountyId {
        CountyId::new(f).unwrap()
    }

    fn cal() -> AnalysisCalendar {
        AnalysisCalendar::build(d(1, 6), d(1, 17), []).unwrap()
    }

    fn panel(recs: &[(NaiveDate, u32, u32, f64)]) -> TripPanel {
        TripPanel::from_records(
            cal(),
            recs.iter().map(|&(date, o, dst, trips)| TripRecord {
                date,
                origin: c(o),
                destination: c(dst),
                trips,
            }),
        )
        .unwrap()
    }

    const A: u32 = 1001;
    const B: u32 = 1003;
    const C: u32 = 1005;
    const X: u32 = 2001;
    const Y: u32 = 2003;

    #[test]
    fn national_series_sums_each_day() {
        let p = panel(&[(d(1, 6), A, B, 100.0), (d(1, 6), B, C, 50.0)]);
        let s = national_inflow_series(&p);
        assert_eq!(s.len(), 10);
        assert_eq!(s.values[0], 150.0);
        assert_eq!(s.values[1], 0.0);
    }

    #[test]
    fn baselines() {
        let p = panel(&[(d(1, 6), A, B, 100.0), (d(1, 7), A, C, 100.0)]);
        let b = county_baselines(&p, DateRange::new(d(1, 6), d(1, 7)).unwrap()).unwrap();
        assert_eq!(b.get(c(B)), Some(50.0));
        assert_eq!(b.get(c(C)), Some(50.0));
        assert_eq!(b.get(c(A)), Some(0.0));
        let empty = DateRange::new(d(1, 11), d(1, 12)).unwrap();
        assert_eq!(county_baselines(&p, empty), Err(AnalyticsError::EmptyWindow(empty)));
    }

    #[test]
    fn weekly_change_cases() {
        let mut recs = vec![];
        for day in 6..=10 {
            recs.push((d(1, day), A, B, 100.0));
            recs.push((d(1, day), B, C, 5.0));
        }
        for day in 13..=17 {
            recs.push((d(1, day), A, B, 65.0));
            recs.push((d(1, day), C, A, 5.0));
        }
        let p = panel(&recs);
        let base = county_baselines(&p, DateRange::new(d(1, 6), d(1, 10)).unwrap()).unwrap();
        let ch = weekly_pct_change(&p, d(1, 15), &base).unwrap();
        assert!((ch[&c(B)].unwrap() + 35.0).abs() < 1e-12);
        assert_eq!(ch[&c(A)], None);
        assert_eq!(weekly_pct_change(&p, d(1, 8), &base).unwrap()[&c(B)], Some(0.0));
    }

    #[test]
    fn share_cases() {
        let m = |v: &[Option<f64>]| -> PercentChanges {
            v.iter().enumerate().map(|(i, x)| (c(1001 + i as u32), *x)).collect()
        };
        assert_eq!(share_with_increase(&m(&[Some(5.0), Some(-3.0), Some(1.0), Some(-2.0)])).unwrap(), 0.5);
        assert_eq!(share_with_increase(&m(&[Some(5.0), None, Some(1.0)])).unwrap(), 1.0);
        assert_eq!(share_with_increase(&m(&[Some(0.0), Some(0.0)])).unwrap(), 0.0);
        assert_eq!(share_with_increase(&m(&[None])), Err(AnalyticsError::Degenerate));
    }

    #[test]
    fn region_metrics_cases() {
        let p = panel(&[(d(1, 6), A, X, 10.0), (d(1, 6), X, B, 5.0), (d(1, 6), A, B, 3.0)]);
        let r = RegionSpec::new("r", [c(X)]).unwrap();
        let m = region_flow_metrics(&p, &r, d(1, 6)).unwrap().metrics;
        assert_eq!(
            m,
            FlowMetrics {
                inflow: 10.0,
                outflow: 5.0,
                n_origins: 1,
                n_destinations: 1
            }
        );

        let p = panel(&[(d(1, 6), X, Y, 99.0)]);
        let r = RegionSpec::new("r", [c(X), c(Y)]).unwrap();
        assert_eq!(region_flow_metrics(&p, &r, d(1, 6)).unwrap().metrics, FlowMetrics::default());
        assert_eq!(region_flow_metrics(&p, &r, d(1, 7)).unwrap().metrics, FlowMetrics::default());
        assert_eq!(
            region_flow_metrics(&p, &r, d(1, 11)),
            Err(AnalyticsError::NotInCalendar(d(1, 11)))
        );
    }

    #[test]
    fn rank_cases() {
        // region inflow 10, other counties 20 and 5
        let p = panel(&[(d(1, 6), A, X, 10.0), (d(1, 6), X, B, 20.0), (d(1, 6), B, C, 5.0)]);
        let r = RegionSpec::new("r", [c(X)]).unwrap();
        assert_eq!(region_rank(&p, &r, RankMetric::Inflow, d(1, 6)).unwrap(), 2);

        let p = panel(&[(d(1, 6), A, X, 20.0), (d(1, 6), X, B, 20.0)]);
        assert_eq!(region_rank(&p, &r, RankMetric::Inflow, d(1, 6)).unwrap(), 1);
        let p = panel(&[(d(1, 6), A, X, 30.0), (d(1, 6), X, B, 20.0)]);
        assert_eq!(region_rank(&p, &r, RankMetric::Inflow, d(1, 6)).unwrap(), 1);
        // A sends 30, more than the region's 20
        let days = region_daily(&p, &r);
        assert_eq!(days[0].ranks, [1, 2, 1, 1]);
    }

    #[test]
    fn top_destination_cases() {
        let p = panel(&[
            (d(1, 6), X, C, 100.0),
            (d(1, 6), X, A, 300.0),
            (d(1, 7), X, B, 200.0),
            (d(1, 7), Y, X, 999.0),
        ]);
        let r = RegionSpec::new("r", [c(X)]).unwrap();
        let all = DateRange::new(d(1, 6), d(1, 17)).unwrap();
        assert_eq!(top_destinations(&p, &r, all, 2), vec![(c(A), 300.0), (c(B), 200.0)]);
        assert_eq!(top_destinations(&p, &r, all, 10).len(), 3);

        let p = panel(&[(d(1, 6), X, B, 50.0), (d(1, 6), X, A, 50.0)]);
        assert_eq!(top_destinations(&p, &r, all, 5), vec![(c(A), 50.0), (c(B), 50.0)]);
    }

    #[test]
    fn spread_cases() {
        let r = RegionSpec::new("r", [c(X)]).unwrap();
        let p = panel(&[(d(1, 6), X, A, 1.0), (d(1, 6), X, B, 1.0), (d(1, 6), X, C, 1.0)]);
        let (m, f) = destination_spread(&p, &r, DateRange::single(d(1, 6)), 3143).unwrap();
        assert_eq!((m, f), (3.0, 3.0 / 3143.0));

        let p = panel(&[
            (d(1, 6), X, A, 1.0),
            (d(1, 6), X, B, 1.0),
            (d(1, 7), X, A, 1.0),
            (d(1, 7), X, B, 1.0),
            (d(1, 7), X, C, 1.0),
            (d(1, 7), X, Y, 1.0),
        ]);
        let w = DateRange::new(d(1, 6), d(1, 7)).unwrap();
        assert_eq!(destination_spread(&p, &r, w, 3143).unwrap().0, 3.0);
        let p = panel(&[(d(1, 6), A, X, 1.0)]);
        assert_eq!(destination_spread(&p, &r, w, 3143).unwrap(), (0.0, 0.0));
    }

    fn arb_panel() -> impl Strategy<Value = Vec<(usize, u32, u32, f64)>> {
        proptest::collection::vec((0usize..10, 1001u32..1008, 1001u32..1008, 0.0f64..1000.0), 0..80)
    }

    fn build(recs: &[(usize, u32, u32, f64)], scale: f64) -> TripPanel {
        let cal = cal();
        let mut m = BTreeMap::new();
        for &(i, o, dst, t) in recs {
            if o != dst {
                m.insert((i, o, dst), t * scale);
            }
        }
        TripPanel::from_records(
            cal.clone(),
            m.into_iter().map(|((i, o, dst), trips)| TripRecord {
                date: cal.days()[i],
                origin: c(o),
                destination: c(dst),
                trips,
            }),
        )
        .unwrap()
    }

    proptest! {
        #[test]
        fn county_inflows_sum_to_national(recs in arb_panel()) {
            let p = build(&recs, 1.0);
            let nat = national_inflow_series(&p);
            for i in 0..nat.len() {
                let s: f64 = county_inflow_on(&p, i).values().sum();
                prop_assert!((s - nat.values[i]).abs() <= 1e-9 * (1.0 + s));
                for (cty, v) in county_inflow_on(&p, i) {
                    let r = region_flow_metrics(&p, &RegionSpec::single(cty), nat.days[i]).unwrap();
                    prop_assert!((r.metrics.inflow - v).abs() <= 1e-9 * (1.0 + v));
                }
            }
        }

        #[test]
        fn scale_free_changes_and_ranks(recs in arb_panel(), lambda in 0.01f64..100.0, pow2 in -6i32..6) {
            let p1 = build(&recs, 1.0);
            let p2 = build(&recs, lambda);
            let w = DateRange::new(d(1, 6), d(1, 10)).unwrap();
            let b1 = county_baselines(&p1, w).unwrap();
            let b2 = county_baselines(&p2, w).unwrap();
            let c1 = weekly_pct_change(&p1, d(1, 13), &b1).unwrap();
            let c2 = weekly_pct_change(&p2, d(1, 13), &b2).unwrap();
            for (k, v) in &c1 {
                match (v, c2[k]) {
                    (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-6),
                    (None, None) => {}
                    _ => prop_assert!(false, "definedness differs"),
                }
            }
            let r = RegionSpec::new("r", [c(1001), c(1002)]).unwrap();
            // power-of-two scaling is exact, so ties survive it
            let p3 = build(&recs, 2f64.powi(pow2));
            let r1 = region_daily(&p1, &r);
            let r3 = region_daily(&p3, &r);
            for (a, b) in r1.iter().zip(&r3) {
                prop_assert_eq!(a.ranks, b.ranks);
            }
        }
    }
}
