//! Hourly, census-tract-level aircraft-noise exposure analytics.
//!
//! The crate turns 3-second noise-monitoring-terminal (NMT) readings, flight
//! and weather records and mobile-derived de facto population counts into:
//!
//! * hourly LAeq per terminal ([`acoustics`]),
//! * tract × hour records joined to the terminal covering each tract ([`fusion`]),
//! * threshold exposure matrices, Gini inequality series and runway-rotation
//!   diagnostics ([`exposure`]),
//! * second-order boosted regression trees for hourly noise ([`gbm`]) with exact
//!   path-dependent Shapley attributions ([`shap`]),
//! * population cross-checks ([`validation`]) and a seeded synthetic scenario
//!   generator with known ground truth ([`synth`]).
//!
//! [`pipeline`] wires the stages together for the command-line driver.

// `!(x >= 0.0)` style checks are how NaN gets rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acoustics;
pub mod exposure;
pub mod fusion;
pub mod gbm;
pub mod ingest;
pub mod numeric;
pub mod output;
pub mod pipeline;
pub mod rng;
pub mod shap;
pub mod synth;
pub mod time;
pub mod validation;

pub use acoustics::HourlyLaeq;
pub use exposure::{ExposureMatrix, GiniSeries};
pub use fusion::{FeatureTable, TractHourRecord};
pub use gbm::{Ensemble, TrainConfig};
pub use ingest::{FlightEvent, NmtMeta, PopulationRecord, SplSample, TractMeta, WeatherHour};
pub use shap::Attribution;
pub use time::StudyWindow;
