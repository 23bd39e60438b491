//! The error covariance Ω = Σ_v + D on correlation scale (σ² factored out).
//!
//! Under canonical ordering Ω is block diagonal with one block per cluster,
//!
//! ```text
//! B_k = Σ_t ⊗ Σ_s^(k) + D_t ⊗ I_{n_k}
//! ```
//!
//! where `Σ_t` is the AR(1)-type temporal correlation `ψ^|i-j|`, `Σ_s^(k)`
//! the exponential spatial correlation between the cluster's sites and
//! `D_t` the diagonal of seasonal noise ratios τ²_{m(t)}.
//!
//! Two factorizations are available. [`Strategy::Dense`] assembles each
//! block and factors it directly. [`Strategy::Spectral`] diagonalizes
//! `Σ_s^(k) = U Λ U'` once; in the rotated basis the block splits into
//! `n_k` independent `T × T` systems `λ_i Σ_t + D_t`.

use std::sync::OnceLock;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{Coord, Metric};
use crate::ingest::WeeklyPanel;
use crate::layout::Layout;

/// `exp(-decay * distance)`.
pub fn exp_corr(distance: f64, decay: f64) -> Result<f64> {
    if !(distance >= 0.0) {
        return Err(Error::Domain(format!("distance {distance} must be nonnegative")));
    }
    if !(decay > 0.0) {
        return Err(Error::Domain(format!("decay {decay} must be positive")));
    }
    Ok((-decay * distance).exp())
}

/// Variance parameters of the error process. `tau2[0]` is pinned to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceParams {
    pub sigma2: f64,
    pub tau2: Vec<f64>,
    /// Spatial decay per distance unit of the site metric.
    pub phi_s: f64,
    /// Temporal decay per unit of scaled time.
    pub phi_t: f64,
}

impl CovarianceParams {
    /// σ² = 1 and all τ² = 1.
    pub fn unit(n_seasons: usize, phi_s: f64, phi_t: f64) -> Self {
        Self {
            sigma2: 1.0,
            tau2: vec![1.0; n_seasons],
            phi_s,
            phi_t,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Domain(m));
        if !(self.sigma2 > 0.0) {
            return bad(format!("sigma2 = {} must be positive", self.sigma2));
        }
        if self.tau2.is_empty() || self.tau2[0] != 1.0 {
            return bad("tau2 of the first season must be exactly 1".into());
        }
        if let Some(t) = self.tau2.iter().find(|t| !(**t > 0.0)) {
            return bad(format!("tau2 = {t} must be positive"));
        }
        if !(self.phi_s > 0.0) || !(self.phi_t > 0.0) {
            return bad(format!("decays must be positive (phi_s = {}, phi_t = {})", self.phi_s, self.phi_t));
        }
        Ok(())
    }

    /// Lag-one temporal correlation ψ = exp(-φ_t d_t) with d_t = 1/(T-1).
    pub fn psi(&self, n_weeks: usize) -> f64 {
        (-self.phi_t * time_step(n_weeks)).exp()
    }
}

pub(crate) fn time_step(n_weeks: usize) -> f64 {
    if n_weeks <= 1 {
        1.0
    } else {
        1.0 / (n_weeks - 1) as f64
    }
}

/// Where the observations are: ordering, site positions and week seasons.
#[derive(Debug, Clone)]
pub struct SpaceTime {
    pub layout: Layout,
    pub coords: Vec<Coord>,
    pub metric: Metric,
    /// 0-based season of each week.
    pub week_seasons: Vec<usize>,
    /// J, including seasons that no week falls in.
    pub n_seasons: usize,
}

impl SpaceTime {
    pub fn of(panel: &WeeklyPanel) -> Self {
        Self {
            layout: panel.layout.clone(),
            coords: panel.coords(),
            metric: panel.metric(),
            week_seasons: panel.calendar.seasons().to_vec(),
            n_seasons: panel.calendar.n_seasons(),
        }
    }

    pub fn n_weeks(&self) -> usize {
        self.layout.n_weeks()
    }

    pub fn len(&self) -> usize {
        self.layout.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layout.is_empty()
    }
}

/// Temporal correlation matrix, exactly Toeplitz in the lag.
pub fn temporal_correlation(n_weeks: usize, phi_t: f64) -> DMatrix<f64> {
    let step = time_step(n_weeks);
    let by_lag: Vec<f64> = (0..n_weeks).map(|l| (-phi_t * step * l as f64).exp()).collect();
    DMatrix::from_fn(n_weeks, n_weeks, |i, j| by_lag[i.abs_diff(j)])
}

pub fn spatial_correlation(coords: &[Coord], metric: Metric, phi_s: f64) -> DMatrix<f64> {
    let n = coords.len();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            (-phi_s * metric.distance(coords[i], coords[j])).exp()
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Dense,
    #[default]
    Spectral,
}

/// Construction switches. The weights scale the process and nugget parts of
/// every block and exist for diagnostics; fitting always uses 1 and 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildOptions {
    pub strategy: Strategy,
    pub process_weight: f64,
    pub nugget_weight: f64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            strategy: Strategy::Spectral,
            process_weight: 1.0,
            nugget_weight: 1.0,
        }
    }
}

impl From<Strategy> for BuildOptions {
    fn from(strategy: Strategy) -> Self {
        Self {
            strategy,
            ..Self::default()
        }
    }
}

struct TimeSystem {
    lambda: f64,
    chol: Cholesky<f64, Dyn>,
    inv_sqrt: OnceLock<InverseRoot>,
}

/// `A^{-1/2} = Q diag(μ^{-1/2}) Q'`, kept factored: applying it to a few
/// columns is much cheaper than forming the product.
struct InverseRoot {
    vectors: DMatrix<f64>,
    scales: DVector<f64>,
}

impl InverseRoot {
    fn of(a: DMatrix<f64>) -> Self {
        let eig = a.symmetric_eigen();
        let scales = eig.eigenvalues.map(|mu| 1.0 / mu.max(f64::MIN_POSITIVE).sqrt());
        Self {
            vectors: eig.eigenvectors,
            scales,
        }
    }

    fn apply<S>(&self, x: &nalgebra::Matrix<f64, Dyn, Dyn, S>) -> DMatrix<f64>
    where
        S: nalgebra::storage::Storage<f64, Dyn, Dyn>,
    {
        let mut inner = self.vectors.tr_mul(x);
        for (mut row, s) in inner.row_iter_mut().zip(self.scales.iter()) {
            row *= *s;
        }
        &self.vectors * inner
    }
}

enum Factor {
    Dense {
        matrix: DMatrix<f64>,
        chol: Cholesky<f64, Dyn>,
        inv_sqrt: OnceLock<InverseRoot>,
    },
    Spectral(Vec<TimeSystem>),
}

struct Block {
    spatial: DMatrix<f64>,
    spatial_eigen: SymmetricEigen<f64, Dyn>,
    factor: Factor,
}

/// Factored Ω, immutable once built.
pub struct BlockCovariance {
    space_time: SpaceTime,
    params: CovarianceParams,
    options: BuildOptions,
    temporal: DMatrix<f64>,
    /// Diagonal of D_t per week (already scaled by the nugget weight).
    nugget: Vec<f64>,
    blocks: Vec<Block>,
}

impl std::fmt::Debug for BlockCovariance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BlockCovariance")
            .field("n", &self.len())
            .field("clusters", &self.blocks.len())
            .field("params", &self.params)
            .field("strategy", &self.options.strategy)
            .finish()
    }
}

impl BlockCovariance {
    pub fn build(space_time: &SpaceTime, params: &CovarianceParams, strategy: Strategy) -> Result<Self> {
        Self::build_with(space_time, params, strategy.into())
    }

    pub fn build_with(space_time: &SpaceTime, params: &CovarianceParams, options: BuildOptions) -> Result<Self> {
        params.validate()?;
        let n_seasons = params.tau2.len();
        if let Some(&s) = space_time.week_seasons.iter().find(|&&s| s >= n_seasons) {
            return Err(Error::Domain(format!("week season {s} has no tau2 (only {n_seasons} given)")));
        }
        let t = space_time.n_weeks();
        let temporal = temporal_correlation(t, params.phi_t).scale(options.process_weight);
        let nugget: Vec<f64> = space_time
            .week_seasons
            .iter()
            .map(|&s| options.nugget_weight * params.tau2[s])
            .collect();
        let layout = &space_time.layout;
        let blocks = (0..layout.n_clusters())
            .into_par_iter()
            .map(|k| {
                let coords: Vec<Coord> = layout.members(k).iter().map(|&s| space_time.coords[s]).collect();
                let spatial = spatial_correlation(&coords, space_time.metric, params.phi_s);
                let spatial_eigen = spatial.clone().symmetric_eigen();
                let factor = match options.strategy {
                    Strategy::Dense => {
                        let matrix = assemble_block(&temporal, &spatial, &nugget);
                        let chol = factor_with_jitter(matrix.clone(), k)?;
                        Factor::Dense {
                            matrix,
                            chol,
                            inv_sqrt: OnceLock::new(),
                        }
                    }
                    Strategy::Spectral => Factor::Spectral(
                        spatial_eigen
                            .eigenvalues
                            .iter()
                            .map(|&lambda| {
                                let mut a = temporal.scale(lambda);
                                for (w, d) in nugget.iter().enumerate() {
                                    a[(w, w)] += d;
                                }
                                Ok(TimeSystem {
                                    lambda,
                                    chol: factor_with_jitter(a, k)?,
                                    inv_sqrt: OnceLock::new(),
                                })
                            })
                            .collect::<Result<_>>()?,
                    ),
                };
                Ok(Block {
                    spatial,
                    spatial_eigen,
                    factor,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            space_time: space_time.clone(),
            params: params.clone(),
            options,
            temporal,
            nugget,
            blocks,
        })
    }

    pub fn len(&self) -> usize {
        self.space_time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn params(&self) -> &CovarianceParams {
        &self.params
    }

    pub fn space_time(&self) -> &SpaceTime {
        &self.space_time
    }

    pub fn layout(&self) -> &Layout {
        &self.space_time.layout
    }

    /// Σ_t scaled by the process weight.
    pub fn temporal(&self) -> &DMatrix<f64> {
        &self.temporal
    }

    pub fn spatial(&self, cluster: usize) -> &DMatrix<f64> {
        &self.blocks[cluster].spatial
    }

    pub fn spatial_eigen(&self, cluster: usize) -> &SymmetricEigen<f64, Dyn> {
        &self.blocks[cluster].spatial_eigen
    }

    /// Ω x.
    pub fn mul(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.apply(x, |block, k, rows| match &block.factor {
            Factor::Dense { matrix, .. } => matrix * rows,
            Factor::Spectral(systems) => {
                let mut g = self.rotate_in(k, rows);
                for (gi, sys) in g.iter_mut().zip(systems) {
                    let mut out = (&self.temporal * &*gi).scale(sys.lambda);
                    for (w, d) in self.nugget.iter().enumerate() {
                        for c in 0..gi.ncols() {
                            out[(w, c)] += d * gi[(w, c)];
                        }
                    }
                    *gi = out;
                }
                self.rotate_out(k, &g)
            }
        })
    }

    /// Ω⁻¹ x.
    pub fn solve(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.apply(x, |block, k, rows| match &block.factor {
            Factor::Dense { chol, .. } => chol.solve(rows),
            Factor::Spectral(systems) => {
                let mut g = self.rotate_in(k, rows);
                for (gi, sys) in g.iter_mut().zip(systems) {
                    sys.chol.solve_mut(gi);
                }
                self.rotate_out(k, &g)
            }
        })
    }

    pub fn solve_vec(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.solve(&as_column(v))?.column(0).into_owned())
    }

    /// Ω^{-1/2} x with the symmetric (spectral) square root of each block.
    pub fn inv_sqrt_apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.apply(x, |block, k, rows| match &block.factor {
            Factor::Dense { matrix, inv_sqrt, .. } => inv_sqrt.get_or_init(|| InverseRoot::of(matrix.clone())).apply(rows),
            Factor::Spectral(systems) => {
                let mut g = self.rotate_in(k, rows);
                for (gi, sys) in g.iter_mut().zip(systems) {
                    let root = sys.inv_sqrt.get_or_init(|| InverseRoot::of(self.time_system(sys.lambda)));
                    *gi = root.apply(&*gi);
                }
                self.rotate_out(k, &g)
            }
        })
    }

    pub fn inv_sqrt_apply_vec(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.inv_sqrt_apply(&as_column(v))?.column(0).into_owned())
    }

    /// `λ Σ_t + D_t`, the temporal system of one spatial eigenvalue.
    fn time_system(&self, lambda: f64) -> DMatrix<f64> {
        let mut a = self.temporal.scale(lambda);
        for (w, d) in self.nugget.iter().enumerate() {
            a[(w, w)] += d;
        }
        a
    }

    /// Computes every block's inverse square root up front, in parallel.
    pub fn prepare_inv_sqrt(&self) {
        self.blocks.par_iter().for_each(|block| match &block.factor {
            Factor::Dense { matrix, inv_sqrt, .. } => {
                inv_sqrt.get_or_init(|| InverseRoot::of(matrix.clone()));
            }
            Factor::Spectral(systems) => systems.par_iter().for_each(|sys| {
                sys.inv_sqrt.get_or_init(|| InverseRoot::of(self.time_system(sys.lambda)));
            }),
        });
    }

    /// log det Ω.
    pub fn log_det(&self) -> f64 {
        let chol_log_det = |c: &Cholesky<f64, Dyn>| 2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        self.blocks
            .iter()
            .map(|b| match &b.factor {
                Factor::Dense { chol, .. } => chol_log_det(chol),
                Factor::Spectral(systems) => systems.iter().map(|s| chol_log_det(&s.chol)).sum(),
            })
            .sum()
    }

    /// The assembled `n_k T × n_k T` block of one cluster.
    pub fn block_dense(&self, cluster: usize) -> DMatrix<f64> {
        assemble_block(&self.temporal, &self.blocks[cluster].spatial, &self.nugget)
    }

    /// Ω as a dense `N × N` matrix. Only sensible for small panels.
    pub fn dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut out = DMatrix::zeros(n, n);
        for k in 0..self.blocks.len() {
            let r = self.layout().block(k);
            out.view_mut((r.start, r.start), (r.len(), r.len()))
                .copy_from(&self.block_dense(k));
        }
        out
    }

    fn apply<F>(&self, x: &DMatrix<f64>, op: F) -> Result<DMatrix<f64>>
    where
        F: Fn(&Block, usize, &DMatrix<f64>) -> DMatrix<f64> + Sync,
    {
        if x.nrows() != self.len() {
            return Err(Error::Dimension {
                expected: self.len(),
                got: x.nrows(),
            });
        }
        let parts: Vec<DMatrix<f64>> = self
            .blocks
            .par_iter()
            .enumerate()
            .map(|(k, block)| {
                let r = self.layout().block(k);
                let rows = x.rows(r.start, r.len()).into_owned();
                op(block, k, &rows)
            })
            .collect();
        let mut out = DMatrix::zeros(x.nrows(), x.ncols());
        for (k, part) in parts.into_iter().enumerate() {
            let r = self.layout().block(k);
            out.rows_mut(r.start, r.len()).copy_from(&part);
        }
        Ok(out)
    }

    /// Rows of one cluster (time-major, site-minor) into the spatial eigenbasis:
    /// one `T × q` matrix per eigenvector.
    fn rotate_in(&self, cluster: usize, rows: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let u = &self.blocks[cluster].spatial_eigen.eigenvectors;
        let n_k = u.nrows();
        let (t, q) = (self.space_time.n_weeks(), rows.ncols());
        let mut g = vec![DMatrix::zeros(t, q); n_k];
        for c in 0..q {
            for w in 0..t {
                for s in 0..n_k {
                    let v = rows[(w * n_k + s, c)];
                    if v != 0.0 {
                        for (i, gi) in g.iter_mut().enumerate() {
                            gi[(w, c)] += v * u[(s, i)];
                        }
                    }
                }
            }
        }
        g
    }

    fn rotate_out(&self, cluster: usize, g: &[DMatrix<f64>]) -> DMatrix<f64> {
        let u = &self.blocks[cluster].spatial_eigen.eigenvectors;
        let n_k = u.nrows();
        let (t, q) = (self.space_time.n_weeks(), g[0].ncols());
        let mut rows = DMatrix::zeros(t * n_k, q);
        for (i, gi) in g.iter().enumerate() {
            for c in 0..q {
                for w in 0..t {
                    let v = gi[(w, c)];
                    for s in 0..n_k {
                        rows[(w * n_k + s, c)] += v * u[(s, i)];
                    }
                }
            }
        }
        rows
    }
}

pub(crate) fn as_column(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

fn assemble_block(temporal: &DMatrix<f64>, spatial: &DMatrix<f64>, nugget: &[f64]) -> DMatrix<f64> {
    let mut b = temporal.kronecker(spatial);
    let n_k = spatial.nrows();
    for (w, d) in nugget.iter().enumerate() {
        for s in 0..n_k {
            b[(w * n_k + s, w * n_k + s)] += d;
        }
    }
    b
}

/// Cholesky, retried once with `1e-10 * mean(diag)` added to the diagonal.
fn factor_with_jitter(mut a: DMatrix<f64>, cluster: usize) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(a.clone()) {
        return Ok(c);
    }
    let jitter = 1e-10 * a.diagonal().mean();
    for i in 0..a.nrows() {
        a[(i, i)] += jitter;
    }
    match Cholesky::new(a.clone()) {
        Some(c) => Ok(c),
        None => Err(Error::Conditioning {
            cluster,
            pivot: smallest_pivot(&a),
        }),
    }
}

/// The first nonpositive pivot met by an unpivoted Cholesky sweep, or the
/// smallest pivot if the sweep completes.
fn smallest_pivot(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    let mut smallest = f64::INFINITY;
    for j in 0..n {
        let d = a[(j, j)] - (0..j).map(|k| l[(j, k)] * l[(j, k)]).sum::<f64>();
        smallest = smallest.min(d);
        if !(d > 0.0) {
            return d;
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..n {
            let s = a[(i, j)] - (0..j).map(|k| l[(i, k)] * l[(j, k)]).sum::<f64>();
            l[(i, j)] = s / ljj;
        }
    }
    smallest
}
