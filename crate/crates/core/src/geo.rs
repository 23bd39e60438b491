//! Site coordinates and the distance metrics used for clustering and covariance.

use serde::{Deserialize, Serialize};

const EARTH_RADIUS_KM: f64 = 6371.0088;

/// A site position. Under [`Metric::GreatCircle`] `x` is latitude and `y` is
/// longitude, both in degrees; under [`Metric::Euclidean`] they are planar
/// coordinates in arbitrary units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coord {
    pub x: f64,
    pub y: f64,
}

impl Coord {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// Haversine distance in kilometers.
    #[default]
    GreatCircle,
    Euclidean,
}

impl Metric {
    pub fn distance(self, a: Coord, b: Coord) -> f64 {
        match self {
            Metric::Euclidean => (a.x - b.x).hypot(a.y - b.y),
            Metric::GreatCircle => haversine_km(a, b),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::GreatCircle => "greatcircle",
            Metric::Euclidean => "euclidean",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "greatcircle" => Ok(Metric::GreatCircle),
            "euclidean" => Ok(Metric::Euclidean),
            other => Err(format!("unknown metric `{other}`")),
        }
    }
}

fn haversine_km(a: Coord, b: Coord) -> f64 {
    let (lat1, lat2) = (a.x.to_radians(), b.x.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.y - a.y).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_degree_of_latitude_is_about_111_km() {
        let d = Metric::GreatCircle.distance(Coord::new(23.0, 121.0), Coord::new(24.0, 121.0));
        assert!((d - 111.19).abs() < 0.05, "{d}");
    }

    #[test]
    fn euclidean_is_planar() {
        assert_eq!(
            Metric::Euclidean.distance(Coord::new(0.0, 0.0), Coord::new(3.0, 4.0)),
            5.0
        );
    }

    #[test]
    fn metric_names_round_trip() {
        for m in [Metric::GreatCircle, Metric::Euclidean] {
            assert_eq!(m.name().parse::<Metric>().unwrap(), m);
        }
    }
}
