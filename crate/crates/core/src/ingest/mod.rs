//! From station and hourly reading files to a complete weekly panel.

mod calendar;
mod panel;
mod readings;
mod stations;

pub use calendar::{WeekCalendar, MONTHLY_SEASONS};
pub use panel::{build_panel, ImputedCell, MissingPolicy, PanelMeta, SiteRecord, WeeklyPanel};
pub use readings::{aggregate_weekly, parse_readings, RawWeeklyTable, Reading, WeeklyField, WEATHER_COVARIATES};
pub use stations::{parse_stations, Station, StationTable};
pub(crate) use stations::csv_error;
