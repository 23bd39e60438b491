//! Residual tables for diagnostic plots: standardized residuals against
//! fitted values, residuals by month, and normal QQ coordinates.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimation::{normal_quantile, FittedModel};
use crate::ingest::WeeklyPanel;
use crate::numfmt::sig10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualRow {
    pub cluster: usize,
    pub week: usize,
    pub station_id: String,
    pub season: usize,
    pub fitted: f64,
    pub residual: f64,
    /// Entry of Ω̂^{-1/2} ε̂ / σ̂.
    pub standardized: f64,
}

/// One row per panel cell, in canonical order.
pub fn residual_table(model: &FittedModel, panel: &WeeklyPanel) -> Result<Vec<ResidualRow>> {
    if model.n_obs() != panel.len() {
        return Err(Error::Dimension {
            expected: panel.len(),
            got: model.n_obs(),
        });
    }
    let standardized = model.standardized_residuals()?;
    Ok(panel
        .layout
        .cells()
        .enumerate()
        .map(|(i, c)| ResidualRow {
            cluster: c.cluster,
            week: c.week,
            station_id: panel.sites.get(c.site).id.clone(),
            season: panel.calendar.season_of(c.week),
            fitted: model.fitted[i],
            residual: model.residuals[i],
            standardized: standardized[i],
        })
        .collect())
}

/// `cluster,week,station_id,season,fitted,residual,standardized`, 1-based.
pub fn write_residuals<W: Write>(rows: &[ResidualRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Schema(format!("writing residuals: {e}"));
    w.write_record(["cluster", "week", "station_id", "season", "fitted", "residual", "standardized"])
        .map_err(err)?;
    for r in rows {
        w.write_record([
            (r.cluster + 1).to_string(),
            (r.week + 1).to_string(),
            r.station_id.clone(),
            (r.season + 1).to_string(),
            sig10(r.fitted),
            sig10(r.residual),
            sig10(r.standardized),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io("residuals", e))
}

/// Sorted sample against standard normal quantiles at `(i - 0.5) / n`.
pub fn qq_points(sample: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            let q = normal_quantile((i as f64 + 0.5) / n).expect("probability inside (0, 1)");
            (q, v)
        })
        .collect()
}

/// `theoretical,sample`.
pub fn write_qq<W: Write>(points: &[(f64, f64)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Schema(format!("writing qq data: {e}"));
    w.write_record(["theoretical", "sample"]).map_err(err)?;
    for (q, v) in points {
        w.write_record([sig10(*q), sig10(*v)]).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io("qq", e))
}
