//! Deterministic synthetic worlds used as ground truth: gravity-model OD
//! flows, a metapopulation SIR epidemic, and a case generator under which
//! the log-linear double-risk model holds by construction.
//!
//! # Random numbers
//!
//! All randomness comes from ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded with
//! `seed_from_u64(seed)`. Stream 0 draws the world layout, stream 1 the
//! log-linear noise. A uniform deviate is `(next_u64() >> 11) + 0.5` scaled
//! by `2^-53`, which lies strictly inside (0, 1); a standard normal deviate
//! is the inverse normal CDF of one uniform deviate.
//!
//! Layout draws, per county in index order: x, y, log-population, age 65+,
//! male, African-American, median income. Noise draws: one normal per county
//! in ascending FIPS order.

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::ingest::{CaseSeries, DemographicsRecord, DemographicsTable, PanelError, TripPanel, TripRecord};
use crate::model::{AnalysisCalendar, CountyId, DateRange, LagSpec, Stage, StagePartition};

/// Days simulated past the calendar end so three-week lags stay observable.
pub const EPIDEMIC_TAIL_DAYS: i64 = 21;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("a world needs at least two counties, got {0}")]
    TooFewCounties(usize),
    #[error("counties {0} and {1} share a centroid")]
    CoincidentCentroids(CountyId, CountyId),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("external risk of county {0} is not positive")]
    NonPositiveRisk(CountyId),
    #[error("case construction did not converge after {0} iterations")]
    NoConvergence(usize),
    #[error(transparent)]
    Panel(#[from] PanelError),
}

/// Seeded stream of uniform and normal deviates.
pub struct DeviateStream {
    rng: ChaCha8Rng,
    normal: Normal,
}

impl DeviateStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self {
            rng,
            normal: Normal::standard(),
        }
    }

    /// Uniform on the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn standard_normal(&mut self) -> f64 {
        let u = self.uniform();
        self.normal.inverse_cdf(u)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthCounty {
    pub id: CountyId,
    pub population: u64,
    pub x: f64,
    pub y: f64,
    pub pct_age65: f64,
    pub pct_male: f64,
    pub pct_african_american: f64,
    pub median_income: f64,
}

impl SynthCounty {
    pub fn demographics(&self) -> DemographicsRecord {
        DemographicsRecord {
            county: self.id,
            population: self.population,
            pct_age65: self.pct_age65,
            pct_male: self.pct_male,
            pct_african_american: self.pct_african_american,
            median_income: self.median_income,
        }
    }
}

/// `E_ij(d) = m(d) · k · P_i^a · P_j^b / dist_ij^c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GravityParams {
    pub k: f64,
    pub pop_exponent_origin: f64,
    pub pop_exponent_dest: f64,
    pub distance_exponent: f64,
    /// Pairs farther apart than this exchange no trips.
    pub max_distance: Option<f64>,
    /// Per-date multipliers; dates not listed use 1.
    pub daily_multipliers: BTreeMap<NaiveDate, f64>,
}

impl Default for GravityParams {
    fn default() -> Self {
        Self {
            k: 1e-3,
            pop_exponent_origin: 1.0,
            pop_exponent_dest: 1.0,
            distance_exponent: 2.0,
            max_distance: None,
            daily_multipliers: BTreeMap::new(),
        }
    }
}

impl GravityParams {
    pub fn multiplier(&self, d: NaiveDate) -> f64 {
        self.daily_multipliers.get(&d).copied().unwrap_or(1.0)
    }

    fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidParam(m.to_string()));
        if !(self.k.is_finite() && self.k > 0.0) {
            return bad("gravity k must be positive");
        }
        if !(self.pop_exponent_origin.is_finite() && self.pop_exponent_dest.is_finite()) {
            return bad("population exponents must be finite");
        }
        if !(self.distance_exponent.is_finite() && self.distance_exponent >= 0.0) {
            return bad("distance exponent must be non-negative");
        }
        if self.max_distance.is_some_and(|m| m.is_nan() || m <= 0.0) {
            return bad("max_distance must be positive");
        }
        if self.daily_multipliers.values().any(|m| !(m.is_finite() && *m > 0.0)) {
            return bad("daily multipliers must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpiParams {
    pub beta_internal: f64,
    pub import_coefficient: f64,
    pub recovery_rate: f64,
    pub seed_county: CountyId,
    pub seed_cases: u64,
    pub reporting_fraction: f64,
}

impl EpiParams {
    fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidParam(m.to_string()));
        if !(self.beta_internal.is_finite() && self.beta_internal >= 0.0) {
            return bad("beta_internal must be non-negative");
        }
        if !(self.import_coefficient.is_finite() && self.import_coefficient >= 0.0) {
            return bad("import_coefficient must be non-negative");
        }
        if !(self.recovery_rate > 0.0 && self.recovery_rate <= 1.0) {
            return bad("recovery_rate must be in (0, 1]");
        }
        if !(self.reporting_fraction > 0.0 && self.reporting_fraction <= 1.0) {
            return bad("reporting_fraction must be in (0, 1]");
        }
        if self.seed_cases == 0 {
            return bad("seed_cases must be positive");
        }
        Ok(())
    }
}

/// Layout recipe for [`SyntheticWorld::generate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    pub n_counties: usize,
    pub seed: u64,
    /// Side of the square the centroids are drawn in.
    #[serde(default = "default_extent")]
    pub extent: f64,
    #[serde(default = "default_min_pop")]
    pub min_population: u64,
    #[serde(default = "default_max_pop")]
    pub max_population: u64,
    /// When set, the first county sits at the centre with this population.
    #[serde(default)]
    pub epicenter_population: Option<u64>,
}

fn default_extent() -> f64 {
    100.0
}

fn default_min_pop() -> u64 {
    10_000
}

fn default_max_pop() -> u64 {
    1_000_000
}

impl WorldSpec {
    pub fn new(n_counties: usize, seed: u64) -> Self {
        Self {
            n_counties,
            seed,
            extent: default_extent(),
            min_population: default_min_pop(),
            max_population: default_max_pop(),
            epicenter_population: None,
        }
    }
}

/// Everything needed to regenerate a synthetic dataset byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorld {
    pub counties: Vec<SynthCounty>,
    pub seed: u64,
    pub gravity: GravityParams,
    pub epi: EpiParams,
}

/// FIPS code of the `i`-th synthetic county (odd codes from 01001).
pub fn synthetic_fips(i: usize) -> CountyId {
    CountyId::new(1001 + 2 * i as u32).expect("synthetic FIPS in range")
}

impl SyntheticWorld {
    /// Random layout per `spec`; epidemic seeded in the first county.
    pub fn generate(spec: &WorldSpec, gravity: GravityParams) -> Result<Self, SynthError> {
        if spec.n_counties < 2 {
            return Err(SynthError::TooFewCounties(spec.n_counties));
        }
        if spec.n_counties > 49_000 {
            return Err(SynthError::InvalidParam("at most 49000 synthetic counties".into()));
        }
        if spec.extent.is_nan() || spec.extent <= 0.0 || spec.min_population == 0 || spec.min_population > spec.max_population {
            return Err(SynthError::InvalidParam("invalid extent or population range".into()));
        }
        let mut rng = DeviateStream::new(spec.seed, 0);
        let (lo, hi) = ((spec.min_population as f64).ln(), (spec.max_population as f64).ln());
        let counties = (0..spec.n_counties)
            .map(|i| {
                let x = rng.uniform_in(0.0, spec.extent);
                let y = rng.uniform_in(0.0, spec.extent);
                let pop = rng.uniform_in(lo, hi).exp().round().max(1.0) as u64;
                let pct_age65 = rng.uniform_in(8.0, 30.0);
                let pct_male = rng.uniform_in(46.0, 54.0);
                let pct_african_american = rng.uniform_in(0.0, 50.0);
                let median_income = rng.uniform_in(30_000.0, 110_000.0);
                let (x, y, population) = match (i, spec.epicenter_population) {
                    (0, Some(p)) => (spec.extent / 2.0, spec.extent / 2.0, p),
                    _ => (x, y, pop),
                };
                SynthCounty {
                    id: synthetic_fips(i),
                    population,
                    x,
                    y,
                    pct_age65,
                    pct_male,
                    pct_african_american,
                    median_income,
                }
            })
            .collect();
        let world = Self {
            counties,
            seed: spec.seed,
            gravity,
            epi: EpiParams {
                beta_internal: 0.2,
                import_coefficient: 0.05,
                recovery_rate: 0.1,
                seed_county: synthetic_fips(0),
                seed_cases: 100,
                reporting_fraction: 0.5,
            },
        };
        world.validate()?;
        Ok(world)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.counties.len() < 2 {
            return Err(SynthError::TooFewCounties(self.counties.len()));
        }
        self.gravity.validate()?;
        self.epi.validate()?;
        if !self.counties.iter().any(|c| c.id == self.epi.seed_county) {
            return Err(SynthError::InvalidParam(format!(
                "seed county {} is not in the world",
                self.epi.seed_county
            )));
        }
        if self.counties.windows(2).any(|w| w[0].id >= w[1].id) {
            return Err(SynthError::InvalidParam("counties must be sorted by FIPS without repeats".into()));
        }
        for c in &self.counties {
            c.demographics().check().map_err(SynthError::InvalidParam)?;
            if !(c.x.is_finite() && c.y.is_finite()) {
                return Err(SynthError::InvalidParam(format!("centroid of {} is not finite", c.id)));
            }
        }
        Ok(())
    }

    pub fn demographics(&self) -> DemographicsTable {
        DemographicsTable::from_records(self.counties.iter().map(SynthCounty::demographics)).expect("validated world")
    }

    fn index_of(&self, c: CountyId) -> Option<usize> {
        self.counties.binary_search_by_key(&c, |s| s.id).ok()
    }

    /// Day-independent gravity flows `k P_i^a P_j^b / d^c`, sorted by
    /// (origin, destination).
    fn base_flows(&self) -> Result<Vec<(usize, usize, f64)>, SynthError> {
        let g = &self.gravity;
        let mut out = Vec::new();
        for (i, a) in self.counties.iter().enumerate() {
            let pa = (a.population as f64).powf(g.pop_exponent_origin);
            for (j, b) in self.counties.iter().enumerate() {
                if i == j {
                    continue;
                }
                let dist = (a.x - b.x).hypot(a.y - b.y);
                if dist == 0.0 && g.distance_exponent > 0.0 {
                    let (lo, hi) = if a.id < b.id { (a.id, b.id) } else { (b.id, a.id) };
                    return Err(SynthError::CoincidentCentroids(lo, hi));
                }
                if g.max_distance.is_some_and(|m| dist > m) {
                    continue;
                }
                let pb = (b.population as f64).powf(g.pop_exponent_dest);
                out.push((i, j, g.k * pa * pb / dist.powf(g.distance_exponent)));
            }
        }
        Ok(out)
    }
}

/// Gravity-model trips on every analysis day.
pub fn gravity_flows(world: &SyntheticWorld, calendar: &AnalysisCalendar) -> Result<TripPanel, SynthError> {
    world.validate()?;
    let base = world.base_flows()?;
    let mut records = Vec::with_capacity(base.len() * calendar.len());
    for &date in calendar.days() {
        let m = world.gravity.multiplier(date);
        for &(i, j, f) in &base {
            let trips = m * f;
            if trips > 0.0 {
                records.push(TripRecord {
                    date,
                    origin: world.counties[i].id,
                    destination: world.counties[j].id,
                    trips,
                });
            }
        }
    }
    Ok(TripPanel::from_records(calendar.clone(), records)?)
}

/// Multipliers tracing a pre-pandemic plateau, a decline to 0.65 at the end
/// of the behaviour-change stage, and a gradual rebound afterwards.
pub fn stage_multipliers(calendar: &AnalysisCalendar, partition: &StagePartition) -> BTreeMap<NaiveDate, f64> {
    let lerp = |range: DateRange, d: NaiveDate, from: f64, to: f64| {
        let span = (range.end - range.start).num_days().max(1) as f64;
        from + (to - from) * (d - range.start).num_days() as f64 / span
    };
    calendar
        .days()
        .iter()
        .filter_map(|&d| {
            let stage = partition.stage_of(d).ok()?;
            let r = partition.stage_range(stage);
            let m = match stage {
                Stage::PrePandemic => 1.0,
                Stage::BehaviorChange => lerp(r, d, 1.0, 0.65),
                Stage::QuarantineFatigue => lerp(r, d, 0.65, 0.72),
                Stage::PartialReopening => lerp(r, d, 0.72, 0.85),
            };
            Some((d, m))
        })
        .collect()
}

/// Daily compartment sizes from [`simulate_sir`].
#[derive(Debug, Clone, PartialEq)]
pub struct EpidemicTrajectory {
    pub counties: Vec<CountyId>,
    pub dates: Vec<NaiveDate>,
    /// `[day][county]`, state at the end of each day.
    pub susceptible: Vec<Vec<f64>>,
    pub infectious: Vec<Vec<f64>>,
    pub recovered: Vec<Vec<f64>>,
    pub cumulative_infections: Vec<Vec<f64>>,
}

/// Deterministic discrete-day metapopulation SIR from the calendar start
/// through `end`.
///
/// ```text
/// new_j = min(S_j, β S_j I_j / P_j + κ Σ_{i≠j} E_ij(d) I_i / P_i)
/// rec_j = ρ I_j
/// ```
///
/// All counties update synchronously from the start-of-day state. Days
/// without panel flows (weekends, holidays, past the calendar) import
/// nothing.
pub fn simulate_sir(world: &SyntheticWorld, panel: &TripPanel, end: NaiveDate) -> Result<EpidemicTrajectory, SynthError> {
    world.validate()?;
    let n = world.counties.len();
    let epi = &world.epi;
    let pop: Vec<f64> = world.counties.iter().map(|c| c.population as f64).collect();
    let mut s = pop.clone();
    let mut i = vec![0.0; n];
    let mut r = vec![0.0; n];
    let mut cum = vec![0.0; n];
    let seed = world.index_of(epi.seed_county).expect("validated seed");
    let seeded = (epi.seed_cases as f64).min(pop[seed]);
    s[seed] -= seeded;
    i[seed] = seeded;
    cum[seed] = seeded;

    let start = panel.calendar().start();
    let mut traj = EpidemicTrajectory {
        counties: world.counties.iter().map(|c| c.id).collect(),
        dates: Vec::new(),
        susceptible: Vec::new(),
        infectious: Vec::new(),
        recovered: Vec::new(),
        cumulative_infections: Vec::new(),
    };
    let mut imports = vec![0.0; n];
    for date in start.iter_days().take_while(|d| *d <= end) {
        imports.iter_mut().for_each(|v| *v = 0.0);
        for f in panel.flows_on(date) {
            let (Some(o), Some(dst)) = (world.index_of(f.origin), world.index_of(f.destination)) else {
                continue;
            };
            imports[dst] += f.trips * i[o] / pop[o];
        }
        let new: Vec<f64> = (0..n)
            .map(|j| {
                let pressure = epi.beta_internal * s[j] * i[j] / pop[j] + epi.import_coefficient * imports[j];
                pressure.min(s[j]).max(0.0)
            })
            .collect();
        for j in 0..n {
            let rec = epi.recovery_rate * i[j];
            s[j] -= new[j];
            i[j] += new[j] - rec;
            r[j] += rec;
            cum[j] += new[j];
        }
        traj.dates.push(date);
        traj.susceptible.push(s.clone());
        traj.infectious.push(i.clone());
        traj.recovered.push(r.clone());
        traj.cumulative_infections.push(cum.clone());
    }
    Ok(traj)
}

/// Reported cumulative cases, `floor(reporting_fraction × cumulative
/// infections)`, from the calendar start through
/// [`EPIDEMIC_TAIL_DAYS`] past its end.
pub fn simulate_epidemic(
    world: &SyntheticWorld,
    panel: &TripPanel,
    calendar: &AnalysisCalendar,
) -> Result<CaseSeries, SynthError> {
    let end = calendar.end() + Duration::days(EPIDEMIC_TAIL_DAYS);
    let traj = simulate_sir(world, panel, end)?;
    let mut cases = CaseSeries::empty(end);
    for (k, c) in traj.counties.iter().enumerate() {
        let values = traj
            .cumulative_infections
            .iter()
            .map(|day| (world.epi.reporting_fraction * day[k]).floor())
            .collect();
        cases.insert_daily(*c, calendar.start(), values);
    }
    Ok(cases)
}

/// Generating coefficients for [`generate_loglinear`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLinearTruth {
    pub alpha: f64,
    /// Age 65+, male, African-American, standardized income.
    pub beta: [f64; 4],
    pub gamma: f64,
}

const MAX_FIXED_POINT_ITERATIONS: usize = 20_000;

/// Case counts under which, for the given period and lag,
///
/// ```text
/// log10 S_j = α log10 ER_j + β·x_j + γ + ε_j,   ε_j ~ N(0, σ²)
/// ```
///
/// holds for every county, with `ER_j` computed from the returned cases
/// using same-day weights over the period's analysis days and `S_j` read at
/// `period.end + lag`.
///
/// Each county's cumulative count ramps linearly from zero (the day before
/// the calendar start) to its target value `V_j` at `period.end + lag` and
/// stays flat afterwards. Since the ramp is shared, every county's period
/// external risk is linear in the other counties' targets, `ER = A·S`, and
/// the targets solve `S_j = 10^(c_j) · (A·S)_j^α`. The solver starts from
/// unit severities and iterates to the fixed point, which is unique and
/// attracting for `0 ≤ α < 1`.
pub fn generate_loglinear(
    world: &SyntheticWorld,
    panel: &TripPanel,
    period: DateRange,
    lag: LagSpec,
    truth: LogLinearTruth,
    noise_sigma: f64,
) -> Result<CaseSeries, SynthError> {
    world.validate()?;
    if !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
        return Err(SynthError::InvalidParam("noise_sigma must be non-negative".into()));
    }
    if !(truth.alpha.is_finite() && truth.alpha >= 0.0 && truth.alpha < 1.0) {
        return Err(SynthError::InvalidParam("alpha must lie in [0, 1)".into()));
    }
    let calendar = panel.calendar();
    let window = calendar.indices_in(period);
    if window.is_empty() {
        return Err(SynthError::InvalidParam(format!("period {period} has no analysis days")));
    }
    let n = world.counties.len();
    let target_date = period.end + lag.duration();
    let ramp_origin = calendar.start() - Duration::days(1);
    let ramp_span = (target_date - ramp_origin).num_days() as f64;
    let ramp = |d: NaiveDate| ((d - ramp_origin).num_days() as f64 / ramp_span).min(1.0);

    // a_ij = Σ_d ramp(d) E_ij(d), stored per destination
    let mut acc: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
    for idx in window {
        let r = ramp(calendar.days()[idx]);
        for f in panel.flows_at(idx) {
            let (Some(o), Some(dst)) = (world.index_of(f.origin), world.index_of(f.destination)) else {
                continue;
            };
            *acc[dst].entry(o).or_insert(0.0) += r * f.trips;
        }
    }
    let inbound: Vec<Vec<(usize, f64)>> = acc.into_iter().map(|m| m.into_iter().collect()).collect();

    let mut noise = DeviateStream::new(world.seed, 1);
    let eps: Vec<f64> = (0..n).map(|_| noise_sigma * noise.standard_normal()).collect();
    let incomes: Vec<f64> = world.counties.iter().map(|c| c.median_income).collect();
    let m = incomes.iter().sum::<f64>() / n as f64;
    let sd = (incomes.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
    let log_offset: Vec<f64> = world
        .counties
        .iter()
        .zip(&eps)
        .map(|(c, e)| {
            let inc = if sd > 0.0 { (c.median_income - m) / sd } else { 0.0 };
            truth.beta[0] * c.pct_age65
                + truth.beta[1] * c.pct_male
                + truth.beta[2] * c.pct_african_american
                + truth.beta[3] * inc
                + truth.gamma
                + e
        })
        .collect();

    let risk = |sev: &[f64]| -> Vec<f64> {
        inbound
            .iter()
            .map(|row| row.iter().map(|&(o, a)| a * sev[o]).sum())
            .collect()
    };
    if let Some(j) = inbound.iter().position(|row| !row.iter().any(|(_, a)| *a > 0.0)) {
        return Err(SynthError::NonPositiveRisk(world.counties[j].id));
    }
    let mut sev = vec![1.0; n];
    let mut converged = false;
    for _ in 0..MAX_FIXED_POINT_ITERATIONS {
        let er = risk(&sev);
        let next: Vec<f64> = er
            .iter()
            .zip(&log_offset)
            .map(|(&e, &c)| if e > 0.0 { 10f64.powf(truth.alpha * e.log10() + c) } else { 0.0 })
            .collect();
        let settled = next
            .iter()
            .zip(&sev)
            .all(|(a, b)| *a > 0.0 && (a - b).abs() <= 1e-14 * a);
        sev = next;
        if settled {
            converged = true;
            break;
        }
    }
    if let Some(j) = risk(&sev).iter().position(|e| e.is_nan() || *e <= 0.0) {
        return Err(SynthError::NonPositiveRisk(world.counties[j].id));
    }
    if !converged {
        return Err(SynthError::NoConvergence(MAX_FIXED_POINT_ITERATIONS));
    }

    let last = target_date.max(calendar.end());
    let mut cases = CaseSeries::empty(last);
    for (c, s) in world.counties.iter().zip(&sev) {
        let target = s * c.population as f64 / 1000.0;
        let values = calendar
            .start()
            .iter_days()
            .take_while(|d| *d <= last)
            .map(|d| target * ramp(d))
            .collect();
        cases.insert_daily(c.id, calendar.start(), values);
    }
    Ok(cases)
}
