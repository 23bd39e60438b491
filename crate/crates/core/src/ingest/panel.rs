use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::calendar::WeekCalendar;
use super::readings::RawWeeklyTable;
use super::stations::{csv_error, Station, StationTable};
use crate::clustering::ClusterAssignment;
use crate::error::{Error, Result};
use crate::geo::{Coord, Metric};
use crate::layout::Layout;
use crate::numfmt::sig10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissingPolicy {
    #[default]
    Error,
    /// Linear interpolation in time per site; edges copy the nearest value.
    Interpolate,
}

impl std::str::FromStr for MissingPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "error" => Ok(MissingPolicy::Error),
            "interpolate" => Ok(MissingPolicy::Interpolate),
            other => Err(format!("unknown missing policy `{other}`")),
        }
    }
}

/// Complete (site × week) panel of the transformed, centered response and
/// centered covariates. All per-cell vectors are in canonical order (see
/// [`Layout`]); per-site vectors are indexed by station table position.
#[derive(Debug, Clone)]
pub struct WeeklyPanel {
    pub sites: StationTable,
    pub calendar: WeekCalendar,
    pub clusters: ClusterAssignment,
    pub layout: Layout,
    pub covariate_names: Vec<String>,
    /// Square-root response before centering.
    pub z: Vec<f64>,
    /// Response centered by its site mean.
    pub y: Vec<f64>,
    /// Centered covariates, one vector per covariate.
    pub covariates: Vec<Vec<f64>>,
    pub site_means: Vec<f64>,
    pub covariate_means: Vec<f64>,
    /// Cells filled by interpolation, as (site, week).
    pub imputed: Vec<(usize, usize)>,
}

impl WeeklyPanel {
    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn n_weeks(&self) -> usize {
        self.calendar.n_weeks()
    }

    /// N = nT.
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn metric(&self) -> Metric {
        self.clusters.metric
    }

    pub fn coords(&self) -> Vec<Coord> {
        self.sites.coords()
    }

    /// Season of every cell in canonical order.
    pub fn cell_seasons(&self) -> Vec<usize> {
        self.layout.cells().map(|c| self.calendar.season_of(c.week)).collect()
    }

    /// Recomputes site means of `z` and global covariate means and re-centers.
    pub fn recenter(&self) -> WeeklyPanel {
        let n = self.n_sites();
        let t = self.n_weeks();
        let mut site_means = vec![0.0; n];
        for (cell, z) in self.layout.cells().zip(&self.z) {
            site_means[cell.site] += z / t as f64;
        }
        let y = self
            .layout
            .cells()
            .zip(&self.z)
            .map(|(c, z)| z - site_means[c.site])
            .collect();
        let mut covariate_means = self.covariate_means.clone();
        let covariates = self
            .covariates
            .iter()
            .zip(covariate_means.iter_mut())
            .map(|(col, mean)| {
                let shift = col.iter().sum::<f64>() / col.len() as f64;
                *mean += shift;
                col.iter().map(|v| v - shift).collect()
            })
            .collect();
        WeeklyPanel {
            y,
            covariates,
            site_means,
            covariate_means,
            ..self.clone()
        }
    }

    /// The panel restricted to its first `n_weeks` weeks. Values are kept as
    /// they are; nothing is re-centered.
    pub fn truncate_weeks(&self, n_weeks: usize) -> Result<WeeklyPanel> {
        let calendar = self.calendar.truncate(n_weeks)?;
        let layout = Layout::new(&self.clusters, n_weeks);
        let pick = |v: &[f64]| -> Vec<f64> {
            layout
                .cells()
                .map(|c| v[self.layout.index_of_site(c.site, c.week)])
                .collect()
        };
        Ok(WeeklyPanel {
            sites: self.sites.clone(),
            calendar,
            clusters: self.clusters.clone(),
            covariate_names: self.covariate_names.clone(),
            z: pick(&self.z),
            y: pick(&self.y),
            covariates: self.covariates.iter().map(|c| pick(c)).collect(),
            site_means: self.site_means.clone(),
            covariate_means: self.covariate_means.clone(),
            imputed: self.imputed.iter().copied().filter(|&(_, w)| w < n_weeks).collect(),
            layout,
        })
    }

    /// Writes `cluster,week,station_id,season,y,z,<covariates>` in canonical
    /// order. Cluster, week and season are 1-based in the file.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = ["cluster", "week", "station_id", "season", "y", "z"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend(self.covariate_names.iter().cloned());
        w.write_record(&header).map_err(write_err)?;
        for (i, c) in self.layout.cells().enumerate() {
            let mut rec = vec![
                (c.cluster + 1).to_string(),
                (c.week + 1).to_string(),
                self.sites.get(c.site).id.clone(),
                (self.calendar.season_of(c.week) + 1).to_string(),
                sig10(self.y[i]),
                sig10(self.z[i]),
            ];
            rec.extend(self.covariates.iter().map(|col| sig10(col[i])));
            w.write_record(&rec).map_err(write_err)?;
        }
        w.flush().map_err(|e| Error::io("panel csv", e))
    }

    pub fn write_csv_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn meta(&self) -> PanelMeta {
        PanelMeta {
            stations: self
                .sites
                .iter()
                .map(|s| SiteRecord {
                    station_id: s.id.clone(),
                    x: s.coord.x,
                    y: s.coord.y,
                })
                .collect(),
            metric: self.metric(),
            start_date: self.calendar.start_date(),
            n_days: self.calendar.n_days(),
            covariate_names: self.covariate_names.clone(),
            covariate_means: self.covariate_means.clone(),
            centroids: self.clusters.centroids.clone(),
            imputed: self
                .imputed
                .iter()
                .map(|&(s, w)| ImputedCell {
                    station_id: self.sites.get(s).id.clone(),
                    week: w + 1,
                })
                .collect(),
        }
    }

    /// Reads a panel CSV written by [`WeeklyPanel::write_csv`] together with
    /// its metadata.
    pub fn read_csv(path: impl AsRef<Path>, meta: &PanelMeta) -> Result<WeeklyPanel> {
        let path = path.as_ref();
        let stations: Vec<Station> = meta
            .stations
            .iter()
            .map(|s| Station {
                id: s.station_id.clone(),
                coord: Coord::new(s.x, s.y),
            })
            .collect();
        let sites = match meta.metric {
            Metric::GreatCircle => StationTable::geographic(stations)?,
            Metric::Euclidean => StationTable::new(stations)?,
        };
        let calendar = WeekCalendar::new(meta.start_date, meta.n_days)?;
        let t = calendar.n_weeks();
        let p = meta.covariate_names.len();

        let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
        let mut expected = vec!["cluster", "week", "station_id", "season", "y", "z"];
        expected.extend(meta.covariate_names.iter().map(String::as_str));
        if header.iter().ne(expected.iter().copied()) {
            return Err(Error::Schema(format!(
                "{}: expected header `{}`",
                path.display(),
                expected.join(",")
            )));
        }

        struct Row {
            cluster: usize,
            week: usize,
            site: usize,
            y: f64,
            z: f64,
            cov: Vec<f64>,
        }
        let mut rows = Vec::with_capacity(sites.len() * t);
        for rec in reader.records() {
            let rec = rec.map_err(|e| csv_error(path, e))?;
            let line = rec.position().map_or(0, |p| p.line());
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line,
                message,
            };
            let num = |i: usize| -> Result<f64> {
                rec[i].trim().parse::<f64>().map_err(|e| parse_err(format!("column {}: {e}", expected[i])))
            };
            let idx = |i: usize| -> Result<usize> {
                match rec[i].trim().parse::<usize>() {
                    Ok(v) if v >= 1 => Ok(v - 1),
                    _ => Err(parse_err(format!("column {}: expected a positive integer", expected[i]))),
                }
            };
            let site = sites
                .index_of(rec[2].trim())
                .ok_or_else(|| Error::Reference(format!("line {line}: unknown station `{}`", &rec[2])))?;
            rows.push(Row {
                cluster: idx(0)?,
                week: idx(1)?,
                site,
                y: num(4)?,
                z: num(5)?,
                cov: (0..p).map(|j| num(6 + j)).collect::<Result<_>>()?,
            });
        }
        if rows.len() != sites.len() * t {
            return Err(Error::Schema(format!(
                "{}: {} rows but {} sites x {t} weeks expected",
                path.display(),
                rows.len(),
                sites.len()
            )));
        }

        let mut member_of = vec![usize::MAX; sites.len()];
        for r in &rows {
            if member_of[r.site] == usize::MAX {
                member_of[r.site] = r.cluster;
            } else if member_of[r.site] != r.cluster {
                return Err(Error::Schema(format!(
                    "station `{}` appears in more than one cluster",
                    sites.get(r.site).id
                )));
            }
        }
        let clusters = ClusterAssignment::new(member_of, meta.centroids.clone(), meta.metric)?;
        let layout = Layout::new(&clusters, t);
        for (cell, r) in layout.cells().zip(&rows) {
            if cell.site != r.site || cell.week != r.week {
                return Err(Error::Schema(format!(
                    "{}: rows are not in cluster, week, site order",
                    path.display()
                )));
            }
        }

        let mut site_means = vec![0.0; sites.len()];
        for (cell, r) in layout.cells().zip(&rows) {
            site_means[cell.site] += (r.z - r.y) / t as f64;
        }
        let imputed = meta
            .imputed
            .iter()
            .map(|c| {
                sites
                    .index_of(&c.station_id)
                    .map(|s| (s, c.week.saturating_sub(1)))
                    .ok_or_else(|| Error::Reference(format!("imputed cell names unknown station `{}`", c.station_id)))
            })
            .collect::<Result<_>>()?;
        Ok(WeeklyPanel {
            z: rows.iter().map(|r| r.z).collect(),
            y: rows.iter().map(|r| r.y).collect(),
            covariates: (0..p).map(|j| rows.iter().map(|r| r.cov[j]).collect()).collect(),
            sites,
            calendar,
            clusters,
            layout,
            covariate_names: meta.covariate_names.clone(),
            site_means,
            covariate_means: meta.covariate_means.clone(),
            imputed,
        })
    }
}

fn write_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io("csv output", source),
        other => Error::Schema(format!("{other:?}")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteRecord {
    pub station_id: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImputedCell {
    pub station_id: String,
    /// 1-based.
    pub week: usize,
}

/// Everything needed next to the panel CSV to rebuild a [`WeeklyPanel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelMeta {
    pub stations: Vec<SiteRecord>,
    pub metric: Metric,
    pub start_date: NaiveDate,
    pub n_days: usize,
    pub covariate_names: Vec<String>,
    pub covariate_means: Vec<f64>,
    pub centroids: Vec<Coord>,
    pub imputed: Vec<ImputedCell>,
}

/// Square-root transforms and centers a weekly table.
pub fn build_panel(
    raw: &RawWeeklyTable,
    clusters: &ClusterAssignment,
    policy: MissingPolicy,
) -> Result<WeeklyPanel> {
    let n = raw.stations.len();
    let t = raw.calendar.n_weeks();
    if clusters.n_sites() != n {
        return Err(Error::Reference(format!(
            "cluster assignment covers {} sites, table has {n}",
            clusters.n_sites()
        )));
    }
    let mut imputed = Vec::new();
    let mut complete = |values: &[Option<f64>], record: bool| -> Result<Vec<f64>> {
        let mut out = vec![0.0; n * t];
        for site in 0..n {
            let row = &values[site * t..(site + 1) * t];
            let filled = fill_row(row, policy).map_err(|week| Error::Completeness {
                site: raw.stations.get(site).id.clone(),
                week: week + 1,
            })?;
            if record {
                imputed.extend(row.iter().enumerate().filter(|(_, v)| v.is_none()).map(|(w, _)| (site, w)));
            }
            out[site * t..(site + 1) * t].copy_from_slice(&filled);
        }
        Ok(out)
    };

    let pm25 = complete(&raw.pm25.values, true)?;
    let raw_covs = raw
        .covariates
        .iter()
        .map(|f| complete(&f.values, false))
        .collect::<Result<Vec<_>>>()?;
    for f in &raw.covariates {
        for (i, v) in f.values.iter().enumerate() {
            if v.is_none() && !imputed.contains(&(i / t, i % t)) {
                imputed.push((i / t, i % t));
            }
        }
    }
    imputed.sort_unstable();

    let z_site: Vec<f64> = pm25.iter().map(|v| v.sqrt()).collect();
    let site_means: Vec<f64> = (0..n)
        .map(|s| z_site[s * t..(s + 1) * t].iter().sum::<f64>() / t as f64)
        .collect();
    let covariate_means: Vec<f64> = raw_covs
        .iter()
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect();

    let layout = Layout::new(clusters, t);
    let z = layout.from_site_major(&z_site);
    let y = layout
        .cells()
        .zip(&z)
        .map(|(c, z)| z - site_means[c.site])
        .collect();
    let covariates = raw_covs
        .iter()
        .zip(&covariate_means)
        .map(|(c, m)| layout.from_site_major(c).into_iter().map(|v| v - m).collect())
        .collect();

    Ok(WeeklyPanel {
        sites: raw.stations.clone(),
        calendar: raw.calendar.clone(),
        clusters: clusters.clone(),
        layout,
        covariate_names: raw.covariates.iter().map(|f| f.name.clone()).collect(),
        z,
        y,
        covariates,
        site_means,
        covariate_means,
        imputed,
    })
}

/// Fills gaps in one site's series, or returns the first missing week.
fn fill_row(row: &[Option<f64>], policy: MissingPolicy) -> Result<Vec<f64>, usize> {
    if let Some(first_gap) = row.iter().position(Option::is_none) {
        if policy == MissingPolicy::Error {
            return Err(first_gap);
        }
    } else {
        return Ok(row.iter().map(|v| v.unwrap()).collect());
    }
    let known: Vec<(usize, f64)> = row
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|v| (i, v)))
        .collect();
    if known.is_empty() {
        return Err(0);
    }
    Ok((0..row.len())
        .map(|i| {
            let after = known.partition_point(|&(k, _)| k < i);
            match (after.checked_sub(1).map(|b| known[b]), known.get(after)) {
                (_, Some(&(k, v))) if k == i => v,
                (Some((i0, v0)), Some(&(i1, v1))) => {
                    v0 + (v1 - v0) * (i - i0) as f64 / (i1 - i0) as f64
                }
                (Some((_, v)), None) | (None, Some(&(_, v))) => v,
                (None, None) => unreachable!("known is nonempty"),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::readings::WeeklyField;

    fn table(pm25: Vec<Option<f64>>, n_weeks: usize) -> RawWeeklyTable {
        let n = pm25.len() / n_weeks;
        let stations = StationTable::geographic(
            (0..n)
                .map(|i| Station {
                    id: format!("S{i}"),
                    coord: Coord::new(23.0 + i as f64 * 0.1, 121.0),
                })
                .collect(),
        )
        .unwrap();
        let temp: Vec<Option<f64>> = (0..pm25.len()).map(|i| Some(10.0 + i as f64)).collect();
        RawWeeklyTable {
            stations,
            calendar: WeekCalendar::weeks(NaiveDate::from_ymd_opt(2010, 1, 1).unwrap(), n_weeks).unwrap(),
            pm25: WeeklyField { name: "pm25".into(), values: pm25 },
            covariates: vec![WeeklyField { name: "temperature".into(), values: temp }],
        }
    }

    fn one_cluster(raw: &RawWeeklyTable) -> ClusterAssignment {
        ClusterAssignment::single(&raw.stations.coords(), Metric::GreatCircle).unwrap()
    }

    #[test]
    fn square_root_and_site_centering() {
        let raw = table(vec![Some(25.0), Some(49.0), Some(36.0), Some(36.0)], 2);
        let panel = build_panel(&raw, &one_cluster(&raw), MissingPolicy::Error).unwrap();
        // canonical order within one cluster: week 1 (S0, S1), week 2 (S0, S1)
        assert_eq!(panel.z, vec![5.0, 6.0, 7.0, 6.0]);
        assert_eq!(panel.y, vec![-1.0, 0.0, 1.0, 0.0]);
        assert_eq!(panel.site_means, vec![6.0, 6.0]);
        assert_eq!(panel.covariate_means, vec![11.5]);
        assert!(panel.covariates[0].iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn missing_week_is_error_by_default() {
        let raw = table(vec![Some(25.0), None, Some(36.0), Some(36.0)], 2);
        match build_panel(&raw, &one_cluster(&raw), MissingPolicy::Error) {
            Err(Error::Completeness { site, week }) => {
                assert_eq!(site, "S0");
                assert_eq!(week, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn interpolation_fills_interior_and_edges() {
        let raw = table(vec![None, Some(4.0), None, Some(16.0), Some(1.0), Some(1.0), Some(1.0), Some(1.0)], 4);
        let panel = build_panel(&raw, &one_cluster(&raw), MissingPolicy::Interpolate).unwrap();
        let z0: Vec<f64> = (0..4).map(|w| panel.z[panel.layout.index_of_site(0, w)]).collect();
        assert_eq!(z0, vec![2.0, 2.0, 10f64.sqrt(), 4.0]);
        assert_eq!(panel.imputed, vec![(0, 0), (0, 2)]);
    }

    #[test]
    fn site_without_any_value_fails_even_with_interpolation() {
        let raw = table(vec![None, None, Some(1.0), Some(1.0)], 2);
        assert!(build_panel(&raw, &one_cluster(&raw), MissingPolicy::Interpolate).is_err());
    }

    #[test]
    fn ten_years_of_66_sites_has_34452_cells() {
        let n_weeks = 522;
        let raw = table(vec![Some(20.0); 66 * n_weeks], n_weeks);
        let clusters = crate::clustering::kmeans(&raw.stations.coords(), 8, Metric::GreatCircle, 1).unwrap();
        let panel = build_panel(&raw, &clusters, MissingPolicy::Error).unwrap();
        assert_eq!(panel.len(), 34452);
    }

    #[test]
    fn recentering_a_centered_panel_is_a_no_op() {
        let values: Vec<Option<f64>> = (0..30).map(|i| Some(5.0 + (i * 7 % 11) as f64)).collect();
        let raw = table(values, 10);
        let panel = build_panel(&raw, &one_cluster(&raw), MissingPolicy::Error).unwrap();
        let again = panel.recenter();
        for (a, b) in panel.y.iter().zip(&again.y) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in panel.covariates[0].iter().zip(&again.covariates[0]) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in panel.covariate_means.iter().zip(&again.covariate_means) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_round_trip_preserves_panel() {
        let values: Vec<Option<f64>> = (0..24).map(|i| Some(3.0 + (i * 5 % 7) as f64)).collect();
        let raw = table(values, 8);
        let clusters = ClusterAssignment::from_members(vec![1, 0, 1], &raw.stations.coords(), Metric::GreatCircle).unwrap();
        let panel = build_panel(&raw, &clusters, MissingPolicy::Error).unwrap();
        let mut buf = Vec::new();
        panel.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("cluster,week,station_id,season,y,z,temperature\n1,1,S1,1,"));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("panel.csv");
        std::fs::write(&path, &buf).unwrap();
        let back = WeeklyPanel::read_csv(&path, &panel.meta()).unwrap();
        assert_eq!(back.clusters.member_of, panel.clusters.member_of);
        for (a, b) in back.y.iter().zip(&panel.y) {
            assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }
        for (a, b) in back.site_means.iter().zip(&panel.site_means) {
            assert!((a - b).abs() <= 1e-9);
        }
    }
}
