//! Fixed-effects design: centered covariates, season indicators for seasons
//! 2..J, and one region × scaled-time column per cluster.

use std::io::Write;
use std::ops::Range;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::ingest::WeeklyPanel;
use crate::numfmt::sig10;

/// Maps a 1-based week `t` of `n_weeks` onto `[0, 1]` as `(t - 1)/(n_weeks - 1)`.
pub fn scale_time(t: usize, n_weeks: usize) -> Result<f64> {
    if t == 0 || t > n_weeks {
        return Err(Error::Domain(format!("week {t} outside 1..={n_weeks}")));
    }
    Ok(scaled_week(t - 1, n_weeks))
}

/// Scaled time of a 0-based week. Weeks past the end extrapolate beyond 1.
pub fn scaled_week(week: usize, n_weeks: usize) -> f64 {
    if n_weeks <= 1 {
        0.0
    } else {
        week as f64 / (n_weeks - 1) as f64
    }
}

/// Column counts of each parameter block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DesignShape {
    pub n_covariates: usize,
    pub n_seasons: usize,
    pub n_clusters: usize,
}

impl DesignShape {
    pub fn of(panel: &WeeklyPanel) -> Self {
        Self {
            n_covariates: panel.covariates.len(),
            n_seasons: panel.calendar.n_seasons(),
            n_clusters: panel.clusters.k(),
        }
    }

    pub fn n_columns(&self) -> usize {
        self.n_covariates + self.n_seasons - 1 + self.n_clusters
    }

    pub fn covariates(&self) -> Range<usize> {
        0..self.n_covariates
    }

    pub fn seasons(&self) -> Range<usize> {
        self.n_covariates..self.n_covariates + self.n_seasons - 1
    }

    pub fn interactions(&self) -> Range<usize> {
        self.n_covariates + self.n_seasons - 1..self.n_columns()
    }

    /// One design row. `season` and `cluster` are 0-based; season 0 is the
    /// reference level with no column.
    pub fn row(&self, covariates: &[f64], season: usize, cluster: usize, scaled_time: f64) -> Vec<f64> {
        let mut row = vec![0.0; self.n_columns()];
        row[..self.n_covariates].copy_from_slice(covariates);
        if season > 0 {
            row[self.seasons().start + season - 1] = 1.0;
        }
        row[self.interactions().start + cluster] = scaled_time;
        row
    }

    pub fn labels(&self, covariate_names: &[String]) -> Vec<String> {
        covariate_names
            .iter()
            .cloned()
            .chain((2..=self.n_seasons).map(|j| format!("season_{j}")))
            .chain((1..=self.n_clusters).map(|k| format!("trend_cluster_{k}")))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub matrix: DMatrix<f64>,
    pub labels: Vec<String>,
    pub shape: DesignShape,
}

impl DesignMatrix {
    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    /// Columns without the interaction block.
    pub fn restricted(&self) -> DesignMatrix {
        let keep = self.shape.interactions().start;
        DesignMatrix {
            matrix: self.matrix.columns(0, keep).into_owned(),
            labels: self.labels[..keep].to_vec(),
            shape: DesignShape {
                n_clusters: 0,
                ..self.shape
            },
        }
    }

    pub fn interaction_block(&self) -> DMatrix<f64> {
        let r = self.shape.interactions();
        self.matrix.columns(r.start, r.len()).into_owned()
    }

    /// Errors naming the first column that is (numerically) a linear
    /// combination of the ones before it.
    pub fn check_rank(&self) -> Result<()> {
        let mut basis: Vec<nalgebra::DVector<f64>> = Vec::with_capacity(self.ncols());
        for (j, col) in self.matrix.column_iter().enumerate() {
            let mut v = col.into_owned();
            let norm0 = v.norm();
            // two passes of modified Gram-Schmidt
            for _ in 0..2 {
                for q in &basis {
                    let proj = q.dot(&v);
                    v.axpy(-proj, q, 1.0);
                }
            }
            let norm = v.norm();
            if norm0 == 0.0 || norm <= 1e-10 * norm0 {
                return Err(Error::Rank(format!(
                    "design column `{}` is collinear with earlier columns",
                    self.labels[j]
                )));
            }
            basis.push(v / norm);
        }
        Ok(())
    }

    /// Labeled dump for debugging, rows in canonical order.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Schema(format!("writing design: {e}"));
        w.write_record(&self.labels).map_err(io)?;
        for row in self.matrix.row_iter() {
            w.write_record(row.iter().map(|&v| sig10(v))).map_err(io)?;
        }
        w.flush().map_err(|e| Error::io("design csv", e))
    }
}

/// Design rows for every panel cell in canonical order, with a rank check.
pub fn build_design(panel: &WeeklyPanel) -> Result<DesignMatrix> {
    let design = assemble(panel)?;
    design.check_rank()?;
    Ok(design)
}

pub(crate) fn assemble(panel: &WeeklyPanel) -> Result<DesignMatrix> {
    if panel.clusters.n_sites() != panel.n_sites() {
        return Err(Error::Reference(format!(
            "{} sites but cluster assignment covers {}",
            panel.n_sites(),
            panel.clusters.n_sites()
        )));
    }
    let shape = DesignShape::of(panel);
    let t = panel.n_weeks();
    let mut matrix = DMatrix::zeros(panel.len(), shape.n_columns());
    let mut covs = vec![0.0; shape.n_covariates];
    for (i, cell) in panel.layout.cells().enumerate() {
        for (v, col) in covs.iter_mut().zip(&panel.covariates) {
            *v = col[i];
        }
        let row = shape.row(
            &covs,
            panel.calendar.season_of(cell.week),
            cell.cluster,
            scaled_week(cell.week, t),
        );
        for (j, v) in row.into_iter().enumerate() {
            matrix[(i, j)] = v;
        }
    }
    Ok(DesignMatrix {
        labels: shape.labels(&panel.covariate_names),
        matrix,
        shape,
    })
}
