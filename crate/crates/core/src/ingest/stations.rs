use std::collections::HashMap;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::geo::Coord;

#[derive(Debug, Clone, PartialEq)]
pub struct Station {
    pub id: String,
    pub coord: Coord,
}

/// Monitoring sites with unique ids, in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct StationTable {
    stations: Vec<Station>,
    index: HashMap<String, usize>,
}

impl StationTable {
    /// Builds a table of planar sites. Only id uniqueness is checked.
    pub fn new(stations: Vec<Station>) -> Result<Self> {
        let mut index = HashMap::with_capacity(stations.len());
        for (i, s) in stations.iter().enumerate() {
            if index.insert(s.id.clone(), i).is_some() {
                return Err(Error::Schema(format!("duplicate station_id `{}`", s.id)));
            }
        }
        Ok(Self { stations, index })
    }

    /// Builds a table of geographic sites (`x` = latitude, `y` = longitude).
    pub fn geographic(stations: Vec<Station>) -> Result<Self> {
        for s in &stations {
            check_lat_lon(&s.id, s.coord.x, s.coord.y)?;
        }
        Self::new(stations)
    }

    pub fn len(&self) -> usize {
        self.stations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stations.is_empty()
    }

    pub fn get(&self, i: usize) -> &Station {
        &self.stations[i]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Station> {
        self.stations.iter()
    }

    pub fn coords(&self) -> Vec<Coord> {
        self.stations.iter().map(|s| s.coord).collect()
    }
}

fn check_lat_lon(id: &str, lat: f64, lon: f64) -> Result<()> {
    if !(-90.0..=90.0).contains(&lat) {
        return Err(Error::Range(format!(
            "station `{id}`: latitude {lat} outside [-90, 90]"
        )));
    }
    if !(-180.0..=180.0).contains(&lon) {
        return Err(Error::Range(format!(
            "station `{id}`: longitude {lon} outside [-180, 180]"
        )));
    }
    Ok(())
}

#[derive(Deserialize)]
struct StationRow {
    station_id: String,
    latitude: f64,
    longitude: f64,
}

const STATION_HEADER: [&str; 3] = ["station_id", "latitude", "longitude"];

/// Reads a `station_id,latitude,longitude` CSV.
pub fn parse_stations(path: impl AsRef<Path>) -> Result<StationTable> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.iter().ne(STATION_HEADER) {
        return Err(Error::Schema(format!(
            "{}: expected header `{}`",
            path.display(),
            STATION_HEADER.join(",")
        )));
    }
    let mut stations = Vec::new();
    for row in reader.deserialize::<StationRow>() {
        let row = row.map_err(|e| csv_error(path, e))?;
        stations.push(Station {
            id: row.station_id,
            coord: Coord::new(row.latitude, row.longitude),
        });
    }
    StationTable::geographic(stations)
}

pub(crate) fn csv_error(path: &Path, err: csv::Error) -> Error {
    let line = err.position().map_or(0, |p| p.line());
    match err.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        kind => Error::Parse {
            path: path.to_path_buf(),
            line,
            message: describe_csv_kind(kind),
        },
    }
}

fn describe_csv_kind(kind: csv::ErrorKind) -> String {
    match kind {
        csv::ErrorKind::Deserialize { err, .. } => err.to_string(),
        csv::ErrorKind::UnequalLengths {
            expected_len, len, ..
        } => format!("expected {expected_len} fields, found {len}"),
        csv::ErrorKind::Utf8 { err, .. } => err.to_string(),
        other => format!("{other:?}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn reads_valid_file() {
        let f = write("station_id,latitude,longitude\nA,25.0,121.5\nB,24.1,120.7\nC,22.6,120.3\n");
        let table = parse_stations(f.path()).unwrap();
        assert_eq!(table.len(), 3);
        assert_eq!(table.get(1).id, "B");
        assert_eq!(table.get(2).coord, Coord::new(22.6, 120.3));
        assert_eq!(table.index_of("C"), Some(2));
    }

    #[test]
    fn rejects_duplicate_ids() {
        let f = write("station_id,latitude,longitude\nA,25.0,121.5\nA,24.1,120.7\n");
        assert!(matches!(parse_stations(f.path()), Err(Error::Schema(_))));
    }

    #[test]
    fn rejects_out_of_range_latitude() {
        let f = write("station_id,latitude,longitude\nA,95.0,121.5\n");
        assert!(matches!(parse_stations(f.path()), Err(Error::Range(_))));
    }

    #[test]
    fn malformed_row_reports_line() {
        let f = write("station_id,latitude,longitude\nA,25.0,121.5\nB,north,120.7\n");
        match parse_stations(f.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_header_is_schema_error() {
        let f = write("id,lat,lon\nA,25.0,121.5\n");
        assert!(matches!(parse_stations(f.path()), Err(Error::Schema(_))));
    }
}
