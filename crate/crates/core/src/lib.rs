//! Spatio-temporal regression for weekly air-pollution panels with a
//! region-level space-time interaction term.
//!
//! The pipeline runs [`ingest`] → [`clustering`] → [`design`] →
//! [`covariance`] → [`estimation`], with [`inference`] testing the
//! interaction coefficients, [`prediction`] producing kriging forecasts and
//! [`simulation`] generating synthetic panels for size and power studies.

pub mod clustering;
pub mod covariance;
pub mod design;
pub mod diagnostics;
pub mod error;
pub mod estimation;
pub mod geo;
pub mod inference;
pub mod ingest;
pub mod layout;
pub mod numfmt;
pub mod prediction;
pub mod simulation;

pub use clustering::{choose_k, kmeans, ClusterAssignment};
pub use error::{Error, Result};
pub use geo::{Coord, Metric};
pub use ingest::{MissingPolicy, StationTable, WeekCalendar, WeeklyPanel};
pub use layout::{Cell, Layout};
pub use covariance::{BlockCovariance, CovarianceParams, SpaceTime, Strategy};
pub use design::{build_design, DesignMatrix, DesignShape};
pub use estimation::{fit, fit_panel, FitOptions, FitReport, FittedModel, WeightScheme};
pub use inference::{lm_test, lm_test_panel, LmReport, LmTestResult};
pub use prediction::{cross_validate_decay, CvReport, Prediction, PredictionRequest, Predictor};
pub use simulation::{simulate_panel, size_power_study, Interaction, SimSpec, StudyCell, StudyConfig, StudyResult};
