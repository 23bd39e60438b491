use std::path::Path;

use chrono::{DateTime, Utc};
use serde::Deserialize;

use super::calendar::WeekCalendar;
use super::stations::{csv_error, StationTable};
use crate::error::{Error, Result};

/// One hourly observation. Missing measurements are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Reading {
    pub station_id: String,
    pub timestamp: DateTime<Utc>,
    pub pm25: Option<f64>,
    pub temperature: Option<f64>,
    pub humidity: Option<f64>,
    pub wind_speed: Option<f64>,
}

#[derive(Deserialize)]
struct ReadingRow {
    station_id: String,
    timestamp: DateTime<Utc>,
    pm25: Option<f64>,
    temperature: Option<f64>,
    humidity: Option<f64>,
    wind_speed: Option<f64>,
}

const READING_HEADER: [&str; 6] = [
    "station_id",
    "timestamp",
    "pm25",
    "temperature",
    "humidity",
    "wind_speed",
];

/// Covariates produced by [`aggregate_weekly`], in column order.
pub const WEATHER_COVARIATES: [&str; 3] = ["temperature", "humidity", "wind_speed"];

pub fn parse_readings(path: impl AsRef<Path>) -> Result<Vec<Reading>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.iter().ne(READING_HEADER) {
        return Err(Error::Schema(format!(
            "{}: expected header `{}`",
            path.display(),
            READING_HEADER.join(",")
        )));
    }
    let mut out = Vec::new();
    for row in reader.deserialize::<ReadingRow>() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let line = out.len() as u64 + 2;
        let bad = |what: &str| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{what} must be nonnegative"),
        };
        if row.pm25.is_some_and(|v| v < 0.0) {
            return Err(bad("pm25"));
        }
        if row.wind_speed.is_some_and(|v| v < 0.0) {
            return Err(bad("wind_speed"));
        }
        out.push(Reading {
            station_id: row.station_id,
            timestamp: row.timestamp,
            pm25: row.pm25,
            temperature: row.temperature,
            humidity: row.humidity,
            wind_speed: row.wind_speed,
        });
    }
    Ok(out)
}

/// A (site × week) table with possibly missing cells, stored site-major.
#[derive(Debug, Clone, PartialEq)]
pub struct WeeklyField {
    pub name: String,
    pub values: Vec<Option<f64>>,
}

impl WeeklyField {
    pub fn get(&self, n_weeks: usize, site: usize, week: usize) -> Option<f64> {
        self.values[site * n_weeks + week]
    }
}

/// Weekly aggregates before transformation and centering.
#[derive(Debug, Clone)]
pub struct RawWeeklyTable {
    pub stations: StationTable,
    pub calendar: WeekCalendar,
    /// Weekly mean PM2.5 on the original scale.
    pub pm25: WeeklyField,
    pub covariates: Vec<WeeklyField>,
}

#[derive(Clone, Copy, Default)]
struct Mean {
    sum: f64,
    count: usize,
}

impl Mean {
    fn add(&mut self, v: Option<f64>) {
        if let Some(v) = v {
            self.sum += v;
            self.count += 1;
        }
    }

    fn value(self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }
}

/// Averages hourly readings into weeks. PM2.5, temperature and humidity
/// are means of the available hourly values; wind is the largest daily mean
/// wind speed within the week.
pub fn aggregate_weekly(
    readings: &[Reading],
    calendar: &WeekCalendar,
    stations: &StationTable,
) -> Result<RawWeeklyTable> {
    let n = stations.len();
    let t = calendar.n_weeks();
    let cells = n * t;
    let mut pm25 = vec![Mean::default(); cells];
    let mut temp = vec![Mean::default(); cells];
    let mut hum = vec![Mean::default(); cells];
    let mut wind_daily = vec![Mean::default(); n * calendar.n_days()];

    for r in readings {
        let site = stations
            .index_of(&r.station_id)
            .ok_or_else(|| Error::Reference(format!("station `{}` not in station table", r.station_id)))?;
        let day = calendar.day_of(r.timestamp.date_naive()).ok_or_else(|| {
            Error::Range(format!(
                "reading at {} for `{}` outside the study window",
                r.timestamp, r.station_id
            ))
        })?;
        let cell = site * t + day / 7;
        pm25[cell].add(r.pm25);
        temp[cell].add(r.temperature);
        hum[cell].add(r.humidity);
        wind_daily[site * calendar.n_days() + day].add(r.wind_speed);
    }

    let wind = (0..cells)
        .map(|cell| {
            let (site, week) = (cell / t, cell % t);
            let first = site * calendar.n_days() + 7 * week;
            wind_daily[first..first + calendar.week_len(week)]
                .iter()
                .filter_map(|m| m.value())
                .reduce(f64::max)
        })
        .collect();

    let field = |name: &str, values: Vec<Option<f64>>| WeeklyField {
        name: name.to_string(),
        values,
    };
    Ok(RawWeeklyTable {
        stations: stations.clone(),
        calendar: calendar.clone(),
        pm25: field("pm25", pm25.into_iter().map(Mean::value).collect()),
        covariates: vec![
            field(WEATHER_COVARIATES[0], temp.into_iter().map(Mean::value).collect()),
            field(WEATHER_COVARIATES[1], hum.into_iter().map(Mean::value).collect()),
            field(WEATHER_COVARIATES[2], wind),
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::Coord;
    use crate::ingest::stations::Station;
    use chrono::{Duration, NaiveDate, TimeZone};
    use proptest::prelude::*;

    fn stations() -> StationTable {
        StationTable::geographic(vec![
            Station { id: "A".into(), coord: Coord::new(25.0, 121.0) },
            Station { id: "B".into(), coord: Coord::new(24.0, 120.0) },
        ])
        .unwrap()
    }

    fn calendar() -> WeekCalendar {
        WeekCalendar::weeks(NaiveDate::from_ymd_opt(2010, 1, 1).unwrap(), 2).unwrap()
    }

    fn reading(id: &str, hour: i64, pm25: Option<f64>, wind: Option<f64>) -> Reading {
        Reading {
            station_id: id.into(),
            timestamp: Utc.with_ymd_and_hms(2010, 1, 1, 0, 0, 0).unwrap() + Duration::hours(hour),
            pm25,
            temperature: Some(20.0),
            humidity: Some(70.0),
            wind_speed: wind,
        }
    }

    #[test]
    fn constant_hourly_pm25_gives_that_weekly_mean() {
        let rs: Vec<_> = (0..168).map(|h| reading("A", h, Some(16.0), Some(1.0))).collect();
        let raw = aggregate_weekly(&rs, &calendar(), &stations()).unwrap();
        assert_eq!(raw.pm25.get(2, 0, 0), Some(16.0));
        assert_eq!(raw.pm25.get(2, 0, 1), None);
        assert_eq!(raw.pm25.get(2, 1, 0), None);
    }

    #[test]
    fn wind_is_max_of_daily_means() {
        let daily = [2.0, 5.0, 3.0, 1.0, 4.0, 0.5, 2.5];
        let mut rs = Vec::new();
        for (d, w) in daily.iter().enumerate() {
            // two readings per day averaging to `w`
            rs.push(reading("A", 24 * d as i64, Some(10.0), Some(w - 1.0)));
            rs.push(reading("A", 24 * d as i64 + 12, Some(10.0), Some(w + 1.0)));
        }
        // a single gusty hour does not beat a windier day on average
        rs.push(reading("A", 6, Some(10.0), Some(7.0)));
        let raw = aggregate_weekly(&rs, &calendar(), &stations()).unwrap();
        assert_eq!(raw.covariates[2].get(2, 0, 0), Some(5.0));
    }

    #[test]
    fn partial_week_uses_available_measurements() {
        let mut rs = Vec::new();
        for d in 0..3 {
            rs.push(reading("B", 24 * d, Some(10.0 * (d + 1) as f64), None));
        }
        rs.push(reading("B", 30, None, None));
        let raw = aggregate_weekly(&rs, &calendar(), &stations()).unwrap();
        assert_eq!(raw.pm25.get(2, 1, 0), Some(20.0));
        assert_eq!(raw.covariates[2].get(2, 1, 0), None);
    }

    #[test]
    fn unknown_station_is_reference_error() {
        let rs = vec![reading("Z", 0, Some(1.0), None)];
        assert!(matches!(
            aggregate_weekly(&rs, &calendar(), &stations()),
            Err(Error::Reference(_))
        ));
    }

    #[test]
    fn reading_outside_window_is_range_error() {
        let rs = vec![reading("A", 24 * 20, Some(1.0), None)];
        assert!(matches!(
            aggregate_weekly(&rs, &calendar(), &stations()),
            Err(Error::Range(_))
        ));
    }

    proptest! {
        #[test]
        fn aggregation_ignores_reading_order(
            values in proptest::collection::vec((0i64..336, 0.0f64..200.0, 0.0f64..20.0), 1..60),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let rs: Vec<_> = values.iter().map(|&(h, p, w)| reading("A", h, Some(p), Some(w))).collect();
            let mut shuffled = rs.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a = aggregate_weekly(&rs, &calendar(), &stations()).unwrap();
            let b = aggregate_weekly(&shuffled, &calendar(), &stations()).unwrap();
            let fields_a = std::iter::once(&a.pm25).chain(&a.covariates);
            let fields_b = std::iter::once(&b.pm25).chain(&b.covariates);
            for (fa, fb) in fields_a.zip(fields_b) {
                for (x, y) in fa.values.iter().zip(&fb.values) {
                    match (x, y) {
                        (Some(x), Some(y)) => prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0)),
                        (None, None) => {}
                        _ => prop_assert!(false, "missingness differs"),
                    }
                }
            }
        }
    }
}
