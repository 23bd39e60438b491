//! Best linear unbiased prediction at new space-time points and the
//! cross-validation search over the decay parameters.
//!
//! With ε̂ = Y − Xθ̂ and Ω̂ on the correlation scale, the predictor at
//! `(s', t')` is `x(s',t')'θ̂ + k'Ω̂⁻¹ε̂` where `k` holds
//! `ρ_s(d(s', s)) · ρ_t(|t' − t| / (T − 1))` for training points in the
//! target's cluster and zero elsewhere. The process covariance carries no
//! nugget, so `k` has none either.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::covariance::{time_step, BlockCovariance, CovarianceParams, SpaceTime, Strategy};
use crate::design::{build_design, scaled_week, DesignShape};
use crate::error::{Error, Result};
use crate::estimation::{fit_panel, FitOptions, FitReport, FittedModel};
use crate::geo::Coord;
use crate::ingest::{csv_error, WeeklyPanel};
use crate::numfmt::sig10;

pub const DEFAULT_PHI_S_GRID: [f64; 7] = [0.001, 0.005, 0.01, 0.05, 0.1, 0.3, 0.5];
pub const DEFAULT_PHI_T_GRID: [f64; 4] = [0.5, 0.75, 1.0, 1.5];

/// Fewest weeks a panel may have for the time split.
pub const MIN_CV_WEEKS: usize = 10;

/// A target point. `week` is 0-based and may lie past the training window.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRequest {
    /// A known station, or a label for a new site when `coord` is given.
    pub station_id: Option<String>,
    pub coord: Option<Coord>,
    pub week: usize,
    /// Raw (uncentered) covariate values in the panel's covariate order.
    pub covariates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub station_id: String,
    pub week: usize,
    pub cluster: usize,
    /// Regression part x'θ̂ alone.
    pub regression: f64,
    pub y_hat: f64,
    pub z_hat: f64,
    pub pm25_hat: f64,
}

/// Where a request lands: its cluster, coordinates and back-transform shift.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedSite {
    pub label: String,
    pub coord: Coord,
    pub cluster: usize,
    pub site_mean: f64,
    /// Table index when the request names a training station.
    pub station: Option<usize>,
}

/// A fitted model prepared for repeated prediction. Holds `Ω̂⁻¹ε̂` reshaped
/// per cluster as a week × member matrix.
#[derive(Debug, Clone)]
pub struct Predictor<'a> {
    panel: &'a WeeklyPanel,
    shape: DesignShape,
    theta: DVector<f64>,
    phi_s: f64,
    phi_t: f64,
    weights: Vec<DMatrix<f64>>,
}

impl<'a> Predictor<'a> {
    /// Requires a converged fit on `panel`.
    pub fn new(model: &FittedModel, panel: &'a WeeklyPanel) -> Result<Self> {
        if !model.converged {
            return Err(Error::Domain("prediction needs a converged fit".into()));
        }
        Self::from_parts(panel, &model.theta, &model.residuals, &model.covariance)
    }

    /// From estimates and the covariance they were fitted with; `residuals`
    /// are `Y − Xθ̂` in canonical order.
    pub fn from_parts(
        panel: &'a WeeklyPanel,
        theta: &DVector<f64>,
        residuals: &DVector<f64>,
        cov: &BlockCovariance,
    ) -> Result<Self> {
        let shape = DesignShape::of(panel);
        if theta.len() != shape.n_columns() {
            return Err(Error::Dimension {
                expected: shape.n_columns(),
                got: theta.len(),
            });
        }
        if residuals.len() != panel.len() || cov.len() != panel.len() {
            return Err(Error::Dimension {
                expected: panel.len(),
                got: residuals.len().max(cov.len()),
            });
        }
        let solved = cov.solve_vec(residuals)?;
        let layout = &panel.layout;
        let weights = (0..layout.n_clusters())
            .map(|k| {
                let block = layout.block(k);
                let n_k = layout.members(k).len();
                // canonical order inside a block is week-major
                DMatrix::from_row_slice(layout.n_weeks(), n_k, &solved.as_slice()[block])
            })
            .collect();
        Ok(Self {
            panel,
            shape,
            theta: theta.clone(),
            phi_s: cov.params().phi_s,
            phi_t: cov.params().phi_t,
            weights,
        })
    }

    /// Rebuilds Ω̂ from stored estimates and recomputes the residuals.
    pub fn from_estimates(panel: &'a WeeklyPanel, theta: &DVector<f64>, params: &CovarianceParams) -> Result<Self> {
        let design = build_design(panel)?;
        let y = DVector::from_column_slice(&panel.y);
        if theta.len() != design.ncols() {
            return Err(Error::Dimension {
                expected: design.ncols(),
                got: theta.len(),
            });
        }
        let residuals = y - &design.matrix * theta;
        let unit = CovarianceParams {
            sigma2: 1.0,
            ..params.clone()
        };
        let cov = BlockCovariance::build(&SpaceTime::of(panel), &unit, Strategy::Spectral)?;
        Self::from_parts(panel, theta, &residuals, &cov)
    }

    /// From a saved fit summary; coefficient labels must match the design.
    pub fn from_report(panel: &'a WeeklyPanel, report: &FitReport) -> Result<Self> {
        let labels = DesignShape::of(panel).labels(&panel.covariate_names);
        let saved: Vec<&str> = report.coefficients.iter().map(|c| c.label.as_str()).collect();
        if saved != labels.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(Error::Schema(format!(
                "fit coefficients [{}] do not match the panel design [{}]",
                saved.join(", "),
                labels.join(", ")
            )));
        }
        if !report.converged {
            return Err(Error::Domain("prediction needs a converged fit".into()));
        }
        let theta = DVector::from_iterator(saved.len(), report.coefficients.iter().map(|c| c.estimate));
        let params = CovarianceParams {
            sigma2: report.sigma2,
            tau2: report.tau2.clone(),
            phi_s: report.phi_s,
            phi_t: report.phi_t,
        };
        params.validate()?;
        Self::from_estimates(panel, &theta, &params)
    }

    pub fn resolve(&self, req: &PredictionRequest) -> Result<ResolvedSite> {
        let sites = &self.panel.sites;
        if let Some(idx) = req.station_id.as_deref().and_then(|id| sites.index_of(id)) {
            return Ok(ResolvedSite {
                label: sites.get(idx).id.clone(),
                coord: sites.get(idx).coord,
                cluster: self.panel.clusters.member_of[idx],
                site_mean: self.panel.site_means[idx],
                station: Some(idx),
            });
        }
        let Some(coord) = req.coord else {
            return Err(Error::Request(match &req.station_id {
                Some(id) => format!("unknown station `{id}` and no coordinates given"),
                None => "request has neither a station id nor coordinates".into(),
            }));
        };
        if !(coord.x.is_finite() && coord.y.is_finite()) {
            return Err(Error::Request("request coordinates must be finite".into()));
        }
        let metric = self.panel.metric();
        let nearest = sites
            .coords()
            .iter()
            .enumerate()
            .map(|(i, c)| (i, metric.distance(*c, coord)))
            .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
            .0;
        Ok(ResolvedSite {
            label: req
                .station_id
                .clone()
                .unwrap_or_else(|| format!("{}:{}", sig10(coord.x), sig10(coord.y))),
            coord,
            cluster: self.panel.clusters.assign_new_site(coord),
            site_mean: self.panel.site_means[nearest],
            station: None,
        })
    }

    /// The design row of a request, covariates centered with the stored means.
    pub fn design_row(&self, req: &PredictionRequest, cluster: usize) -> Result<Vec<f64>> {
        if req.covariates.len() != self.shape.n_covariates {
            return Err(Error::Request(format!(
                "expected {} covariates, got {}",
                self.shape.n_covariates,
                req.covariates.len()
            )));
        }
        if req.covariates.iter().any(|v| !v.is_finite()) {
            return Err(Error::Request("request covariates must be complete".into()));
        }
        let centered: Vec<f64> = req
            .covariates
            .iter()
            .zip(&self.panel.covariate_means)
            .map(|(v, m)| v - m)
            .collect();
        let season = self.panel.calendar.season_at(req.week);
        Ok(self.shape.row(&centered, season, cluster, scaled_week(req.week, self.panel.n_weeks())))
    }

    /// The correlation vector `k` of a target, one week × member matrix per
    /// cluster (zero outside the target's cluster), in canonical order.
    pub fn correlation_vector(&self, site: &ResolvedSite, week: usize) -> DVector<f64> {
        let layout = &self.panel.layout;
        let mut k = DVector::zeros(layout.len());
        let (rho_t, rho_s) = self.correlation_factors(site, week);
        for (w, rt) in rho_t.iter().enumerate() {
            for (l, rs) in rho_s.iter().enumerate() {
                k[layout.index(site.cluster, w, l)] = rt * rs;
            }
        }
        k
    }

    fn correlation_factors(&self, site: &ResolvedSite, week: usize) -> (Vec<f64>, Vec<f64>) {
        let t = self.panel.n_weeks();
        let step = time_step(t);
        let rho_t = (0..t).map(|w| (-self.phi_t * week.abs_diff(w) as f64 * step).exp()).collect();
        let metric = self.panel.metric();
        let coords = self.panel.sites.coords();
        let rho_s = self
            .panel
            .layout
            .members(site.cluster)
            .iter()
            .map(|&s| (-self.phi_s * metric.distance(site.coord, coords[s])).exp())
            .collect();
        (rho_t, rho_s)
    }

    pub fn predict(&self, req: &PredictionRequest) -> Result<Prediction> {
        let site = self.resolve(req)?;
        let row = self.design_row(req, site.cluster)?;
        let regression: f64 = row.iter().zip(self.theta.iter()).map(|(a, b)| a * b).sum();
        let (rho_t, rho_s) = self.correlation_factors(&site, req.week);
        let w = &self.weights[site.cluster];
        let mut kriging = 0.0;
        for (i, rt) in rho_t.iter().enumerate() {
            if *rt == 0.0 {
                continue;
            }
            let row_sum: f64 = rho_s.iter().enumerate().map(|(l, rs)| rs * w[(i, l)]).sum();
            kriging += rt * row_sum;
        }
        let y_hat = regression + kriging;
        let z_hat = y_hat + site.site_mean;
        Ok(Prediction {
            station_id: site.label,
            week: req.week,
            cluster: site.cluster,
            regression,
            y_hat,
            z_hat,
            pm25_hat: back_transform(z_hat),
        })
    }

    pub fn predict_all(&self, requests: &[PredictionRequest]) -> Result<Vec<Prediction>> {
        requests.iter().map(|r| self.predict(r)).collect()
    }
}

/// Square-root scale to concentration: negatives clamp to 0 before squaring.
pub fn back_transform(z: f64) -> f64 {
    let z = z.max(0.0);
    z * z
}

/// Mean squared difference between two equally long sequences.
pub fn mse(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    if actual.len() != predicted.len() {
        return Err(Error::Dimension {
            expected: actual.len(),
            got: predicted.len(),
        });
    }
    if actual.is_empty() {
        return Err(Error::InsufficientData("no points to score".into()));
    }
    Ok(actual.iter().zip(predicted).map(|(a, p)| (a - p).powi(2)).sum::<f64>() / actual.len() as f64)
}

/// Writes `station_id,week,y_hat,z_hat,pm25_hat` with 1-based weeks.
pub fn write_predictions<W: Write>(predictions: &[Prediction], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Schema(format!("writing predictions: {e}"));
    w.write_record(["station_id", "week", "y_hat", "z_hat", "pm25_hat"]).map_err(err)?;
    for p in predictions {
        w.write_record([
            p.station_id.clone(),
            (p.week + 1).to_string(),
            sig10(p.y_hat),
            sig10(p.z_hat),
            sig10(p.pm25_hat),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io("predictions", e))
}

/// Reads `station_id,latitude,longitude,week,<covariates...>`. Coordinates
/// may be blank for known stations; weeks are 1-based.
pub fn read_requests(path: &Path, covariate_names: &[String]) -> Result<Vec<PredictionRequest>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let column = |name: &str| headers.iter().position(|h| h == name);
    let missing = |name: &str| Error::Schema(format!("{}: missing column `{name}`", path.display()));
    let id_col = column("station_id").ok_or_else(|| missing("station_id"))?;
    let week_col = column("week").ok_or_else(|| missing("week"))?;
    let (lat_col, lon_col) = (column("latitude"), column("longitude"));
    let cov_cols = covariate_names
        .iter()
        .map(|n| column(n).ok_or_else(|| missing(n)))
        .collect::<Result<Vec<_>>>()?;

    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = i as u64 + 2;
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let field = |c: usize| record.get(c).unwrap_or("");
        let number = |c: usize, what: &str| -> Result<Option<f64>> {
            let raw = field(c);
            if raw.is_empty() {
                return Ok(None);
            }
            raw.parse::<f64>()
                .map(Some)
                .map_err(|_| parse_err(format!("invalid {what} `{raw}`")))
        };
        let station_id = Some(field(id_col).to_string()).filter(|s| !s.is_empty());
        let lat = lat_col.map(|c| number(c, "latitude")).transpose()?.flatten();
        let lon = lon_col.map(|c| number(c, "longitude")).transpose()?.flatten();
        let coord = match (lat, lon) {
            (Some(x), Some(y)) => Some(Coord::new(x, y)),
            (None, None) => None,
            _ => return Err(parse_err("give both coordinates or neither".into())),
        };
        let week: usize = field(week_col)
            .parse()
            .map_err(|_| parse_err(format!("invalid week `{}`", field(week_col))))?;
        if week == 0 {
            return Err(parse_err("weeks are 1-based".into()));
        }
        let covariates = cov_cols
            .iter()
            .zip(covariate_names)
            .map(|(&c, name)| number(c, name)?.ok_or_else(|| parse_err(format!("missing covariate `{name}`"))))
            .collect::<Result<Vec<_>>>()?;
        out.push(PredictionRequest {
            station_id,
            coord,
            week: week - 1,
            covariates,
        });
    }
    Ok(out)
}

/// First `n_train` weeks for fitting, the rest for scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TimeSplit {
    pub n_train: usize,
    pub n_test: usize,
}

impl TimeSplit {
    /// Rounds `fraction · T` to the nearest week, keeping at least one week
    /// on each side.
    pub fn new(n_weeks: usize, fraction: f64) -> Result<Self> {
        if n_weeks < MIN_CV_WEEKS {
            return Err(Error::InsufficientData(format!(
                "time split needs at least {MIN_CV_WEEKS} weeks, panel has {n_weeks}"
            )));
        }
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::Domain(format!("training fraction {fraction} outside (0, 1)")));
        }
        let n_train = ((fraction * n_weeks as f64).round() as usize).clamp(1, n_weeks - 1);
        Ok(Self {
            n_train,
            n_test: n_weeks - n_train,
        })
    }
}

/// Held-out scores of one decay pair on the later weeks of a panel.
#[derive(Debug, Clone, Serialize)]
pub struct HoldoutScore {
    pub phi_s: f64,
    pub phi_t: f64,
    pub split: TimeSplit,
    pub mse: f64,
    /// The same fit scored with x'θ̂ alone.
    pub regression_mse: f64,
    pub converged: bool,
}

/// Fits on the first `split.n_train` weeks (threshold weights, panel left
/// as centered on the full window) and predicts every site over the rest.
pub fn holdout_score(
    panel: &WeeklyPanel,
    split: TimeSplit,
    phi_s: f64,
    phi_t: f64,
    options: &FitOptions,
) -> Result<HoldoutScore> {
    let train = panel.truncate_weeks(split.n_train)?;
    let design = build_design(&train)?;
    let model = fit_panel(&train, &design, phi_s, phi_t, options)?;
    let predictor = Predictor::from_parts(&train, &model.theta, &model.residuals, &model.covariance)?;

    let mut actual = Vec::with_capacity(panel.n_sites() * split.n_test);
    let mut blup = Vec::with_capacity(actual.capacity());
    let mut regression = Vec::with_capacity(actual.capacity());
    for site in 0..panel.n_sites() {
        for week in split.n_train..panel.n_weeks() {
            let idx = panel.layout.index_of_site(site, week);
            let raw: Vec<f64> = panel
                .covariates
                .iter()
                .zip(&panel.covariate_means)
                .map(|(col, m)| col[idx] + m)
                .collect();
            let req = PredictionRequest {
                station_id: Some(panel.sites.get(site).id.clone()),
                coord: None,
                week,
                covariates: raw,
            };
            let p = predictor.predict(&req)?;
            actual.push(panel.y[idx]);
            blup.push(p.y_hat);
            regression.push(p.regression);
        }
    }
    Ok(HoldoutScore {
        phi_s,
        phi_t,
        split,
        mse: mse(&actual, &blup)?,
        regression_mse: mse(&actual, &regression)?,
        converged: model.converged,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CvCell {
    pub phi_s: f64,
    pub phi_t: f64,
    pub mse: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CvReport {
    pub split: TimeSplit,
    /// φ_s-major over the full Cartesian product.
    pub grid: Vec<CvCell>,
    pub best_phi_s: f64,
    pub best_phi_t: f64,
    pub best_mse: f64,
}

impl CvReport {
    /// `phi_s,phi_t,mse`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::Schema(format!("writing cv grid: {e}"));
        w.write_record(["phi_s", "phi_t", "mse"]).map_err(err)?;
        for c in &self.grid {
            w.write_record([sig10(c.phi_s), sig10(c.phi_t), sig10(c.mse)]).map_err(err)?;
        }
        w.flush().map_err(|e| Error::io("cv csv", e))
    }
}

/// Scores every (φ_s, φ_t) pair on an 80/20 time split and reports the
/// pair with the smallest held-out MSE (first in grid order on ties).
pub fn cross_validate_decay(
    panel: &WeeklyPanel,
    grid_s: &[f64],
    grid_t: &[f64],
    options: &FitOptions,
) -> Result<CvReport> {
    if grid_s.is_empty() || grid_t.is_empty() {
        return Err(Error::Domain("decay grids must be nonempty".into()));
    }
    if let Some(bad) = grid_s.iter().chain(grid_t).find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::Domain(format!("decay {bad} must be positive")));
    }
    let split = TimeSplit::new(panel.n_weeks(), 0.8)?;
    let pairs: Vec<(f64, f64)> = grid_s.iter().flat_map(|&s| grid_t.iter().map(move |&t| (s, t))).collect();
    let grid = pairs
        .par_iter()
        .map(|&(phi_s, phi_t)| {
            holdout_score(panel, split, phi_s, phi_t, options).map(|h| CvCell {
                phi_s,
                phi_t,
                mse: h.mse,
                converged: h.converged,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = grid
        .iter()
        .filter(|c| c.mse.is_finite())
        .fold(None::<&CvCell>, |best, c| match best {
            Some(b) if b.mse <= c.mse => Some(b),
            _ => Some(c),
        })
        .ok_or_else(|| Error::InsufficientData("no grid cell produced a finite MSE".into()))?;
    Ok(CvReport {
        split,
        best_phi_s: best.phi_s,
        best_phi_t: best.phi_t,
        best_mse: best.mse,
        grid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::BuildOptions;
    use crate::estimation::{fit, WeightScheme};
    use crate::simulation::{simulate_panel, Interaction, SimSpec};

    fn fitted(n: usize, t: usize, seed: u64) -> (crate::simulation::SimulatedPanel, FittedModel) {
        let sim = simulate_panel(&SimSpec::new(n, t, Interaction::Linear), seed).unwrap();
        let w = WeightScheme::identity(sim.panel.len());
        let m = fit(&sim.space_time(), &sim.design, &sim.response(), 0.1, 0.75, &w, &FitOptions::default()).unwrap();
        (sim, m)
    }

    fn request_at(panel: &WeeklyPanel, site: usize, week: usize) -> PredictionRequest {
        let idx = panel.layout.index_of_site(site, week.min(panel.n_weeks() - 1));
        PredictionRequest {
            station_id: Some(panel.sites.get(site).id.clone()),
            coord: None,
            week,
            covariates: panel.covariates.iter().zip(&panel.covariate_means).map(|(c, m)| c[idx] + m).collect(),
        }
    }

    #[test]
    fn mse_closed_forms() {
        let y = [1.0, -2.0, 3.5];
        assert_eq!(mse(&y, &y).unwrap(), 0.0);
        let shifted: Vec<f64> = y.iter().map(|v| v + 0.3).collect();
        assert!((mse(&y, &shifted).unwrap() - 0.09).abs() < 1e-15);
        assert!(mse(&[], &[]).is_err());
    }

    #[test]
    fn back_transform_clamps() {
        assert_eq!(back_transform(-1.5), 0.0);
        assert_eq!(back_transform(3.0), 9.0);
    }

    #[test]
    fn zero_correlation_gives_regression_only() {
        let (sim, m) = fitted(12, 52, 1);
        let predictor = Predictor::new(&m, &sim.panel).unwrap();
        // far in the future every temporal correlation underflows to 0
        let req = request_at(&sim.panel, 3, 200_000);
        let p = predictor.predict(&req).unwrap();
        let row = predictor.design_row(&req, p.cluster).unwrap();
        let xb: f64 = row.iter().zip(m.theta.iter()).map(|(a, b)| a * b).sum();
        assert_eq!(p.y_hat, xb);
        assert_eq!(p.regression, xb);
    }

    #[test]
    fn no_nugget_interpolates_training_points() {
        // 5 sites x 10 weeks = 50 points
        let sim = simulate_panel(&SimSpec::new(5, 52, Interaction::Linear), 4).unwrap();
        let panel = sim.panel.truncate_weeks(10).unwrap();
        // ten weeks cannot identify every season, so skip the rank check;
        // interpolation holds for any θ
        let x = crate::design::assemble(&panel).unwrap().matrix;
        let theta = DVector::from_column_slice(&sim.truth.theta);
        let residuals = DVector::from_column_slice(&panel.y) - &x * &theta;
        let params = CovarianceParams::unit(12, 0.1, 0.75);
        let opts = BuildOptions { nugget_weight: 0.0, strategy: Strategy::Dense, ..Default::default() };
        let cov = BlockCovariance::build_with(&SpaceTime::of(&panel), &params, opts).unwrap();
        let predictor = Predictor::from_parts(&panel, &theta, &residuals, &cov).unwrap();
        let mut worst: f64 = 0.0;
        for site in 0..panel.n_sites() {
            for week in 0..panel.n_weeks() {
                let p = predictor.predict(&request_at(&panel, site, week)).unwrap();
                worst = worst.max((p.y_hat - panel.y[panel.layout.index_of_site(site, week)]).abs());
            }
        }
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn correlation_vector_matches_brute_force() {
        let (sim, m) = fitted(9, 52, 2);
        let predictor = Predictor::new(&m, &sim.panel).unwrap();
        let req = PredictionRequest {
            station_id: None,
            coord: Some(Coord::new(40.0, 17.0)),
            week: 55,
            covariates: vec![0.1, -0.4],
        };
        let site = predictor.resolve(&req).unwrap();
        let k = predictor.correlation_vector(&site, req.week);
        let panel = &sim.panel;
        let coords = panel.coords();
        for (i, cell) in panel.layout.cells().enumerate() {
            let expected = if panel.clusters.member_of[cell.site] == site.cluster {
                let d = panel.metric().distance(site.coord, coords[cell.site]);
                (-0.1 * d).exp() * (-0.75 * (55 - cell.week) as f64 / 51.0).exp()
            } else {
                0.0
            };
            assert!((k[i] - expected).abs() <= 1e-15 * expected.max(1.0), "{i}");
        }
        // k'Ω⁻¹ε̂ computed densely agrees with the factored sum
        let p = predictor.predict(&req).unwrap();
        let dense = k.dot(&m.covariance.solve_vec(&m.residuals).unwrap());
        assert!((p.y_hat - p.regression - dense).abs() < 1e-10);
    }

    #[test]
    fn saved_report_reproduces_predictions() {
        let sim = simulate_panel(&SimSpec::new(8, 52, Interaction::Linear), 8).unwrap();
        let m = fit_panel(&sim.panel, &sim.design, 0.1, 0.75, &FitOptions::default()).unwrap();
        let json = serde_json::to_string(&m.report()).unwrap();
        let report: FitReport = serde_json::from_str(&json).unwrap();
        let a = Predictor::new(&m, &sim.panel).unwrap();
        let b = Predictor::from_report(&sim.panel, &report).unwrap();
        let req = request_at(&sim.panel, 1, 57);
        let (pa, pb) = (a.predict(&req).unwrap(), b.predict(&req).unwrap());
        assert!((pa.y_hat - pb.y_hat).abs() < 1e-9);
    }

    #[test]
    fn prediction_is_deterministic() {
        let (sim, m) = fitted(8, 52, 3);
        let predictor = Predictor::new(&m, &sim.panel).unwrap();
        let req = request_at(&sim.panel, 2, 60);
        assert_eq!(predictor.predict(&req).unwrap(), predictor.predict(&req).unwrap());
    }

    #[test]
    fn new_sites_use_nearest_centroid_and_station() {
        let (sim, m) = fitted(10, 52, 5);
        let panel = &sim.panel;
        let predictor = Predictor::new(&m, panel).unwrap();
        let target = panel.sites.get(4).coord;
        let req = PredictionRequest {
            station_id: Some("NEW".into()),
            coord: Some(Coord::new(target.x + 1e-3, target.y)),
            week: 3,
            covariates: vec![0.0, 0.0],
        };
        let site = predictor.resolve(&req).unwrap();
        assert_eq!(site.label, "NEW");
        assert_eq!(site.cluster, panel.clusters.assign_new_site(req.coord.unwrap()));
        assert_eq!(site.site_mean, panel.site_means[4]);
        assert!(site.station.is_none());

        let unknown = PredictionRequest { coord: None, ..req };
        assert!(matches!(predictor.resolve(&unknown), Err(Error::Request(_))));
    }

    #[test]
    fn split_rounds_and_guards() {
        assert_eq!(TimeSplit::new(522, 0.8).unwrap(), TimeSplit { n_train: 418, n_test: 104 });
        assert_eq!(TimeSplit::new(10, 0.8).unwrap(), TimeSplit { n_train: 8, n_test: 2 });
        assert!(matches!(TimeSplit::new(9, 0.8), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn cv_covers_grid_and_picks_minimum() {
        let sim = simulate_panel(&SimSpec::new(8, 70, Interaction::Linear), 6).unwrap();
        let report = cross_validate_decay(&sim.panel, &[0.05, 0.1, 0.5], &[0.5, 1.5], &FitOptions::default()).unwrap();
        assert_eq!(report.grid.len(), 6);
        assert_eq!(report.split.n_train, 56);
        let min = report.grid.iter().map(|c| c.mse).fold(f64::INFINITY, f64::min);
        assert_eq!(report.best_mse, min);
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 7);
    }

    #[test]
    fn requests_round_trip_from_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("req.csv");
        std::fs::write(&path, "station_id,latitude,longitude,week,a,b\nS001,,,3,1.5,2\nX,24.5,121.2,600,0,-1\n").unwrap();
        let reqs = read_requests(&path, &["a".into(), "b".into()]).unwrap();
        assert_eq!(reqs.len(), 2);
        assert_eq!(reqs[0].week, 2);
        assert!(reqs[0].coord.is_none());
        assert_eq!(reqs[1].coord, Some(Coord::new(24.5, 121.2)));
        assert_eq!(reqs[1].covariates, vec![0.0, -1.0]);

        std::fs::write(&path, "station_id,latitude,longitude,week,a,b\nS001,,,0,1,2\n").unwrap();
        assert!(matches!(read_requests(&path, &["a".into(), "b".into()]), Err(Error::Parse { line: 2, .. })));
    }
}
