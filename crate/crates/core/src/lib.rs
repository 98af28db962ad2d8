//! Inter-county mobility analytics and the log-linear double-risk model.
//!
//! The crate consumes daily county-to-county trip tables, cumulative case
//! counts and county demographics, and produces:
//!
//! * national trend, baseline and weekly percent-change metrics,
//! * inflow/outflow, ranking and top-destination metrics for a region,
//! * daily lagged correlations between region outflow and case rates,
//! * external-risk weighted regressions of outbreak severity with a
//!   ΔR² importance measure for the external-risk term.
//!
//! [`synth`] generates deterministic synthetic worlds that flow through the
//! ordinary CSV ingestion path and serve as ground truth for the tests.
//!
//! The statistics routines in [`stats`] are generic over [`Real`]; the
//! aliases below fix the scalar type for common uses.

pub mod fit;
pub mod ingest;
pub mod mobility;
pub mod model;
pub mod report;
pub mod risk;
pub mod stats;
pub mod synth;

pub use model::{AnalysisCalendar, CountyId, DateRange, LagSpec, Period, RegionSpec, Stage, StagePartition};
pub use stats::Real;

pub type OlsFit64 = stats::OlsFit<f64>;
pub type OlsFit32 = stats::OlsFit<f32>;
