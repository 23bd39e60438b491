//! Iterative feasible GLS with threshold weights.
//!
//! Each iteration rebuilds Ω̂ from the current seasonal ratios τ̂², solves
//! the weighted normal equations `X'VX θ = X'VY` with
//! `V = Ω̂^{-1/2} W Ω̂^{-1/2}`, sets `σ̂² = ε̂'Ω̂⁻¹ε̂ / N`, and re-estimates
//! each τ̂_j² (j ≥ 2) by maximizing the Gaussian likelihood of that season's
//! residuals under `σ̂²(Σ_v^(j) + τ_j² I)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::covariance::{BlockCovariance, CovarianceParams, SpaceTime, Strategy};
use crate::design::DesignMatrix;
use crate::error::{Error, Result};
use crate::ingest::WeeklyPanel;

/// PM2.5 level (µg/m³) above which observations get the larger weight.
pub const PM25_THRESHOLD: f64 = 35.0;

/// Two-level observation weights: `1 + 2/ln N` where `z ≥ √35`, `1 - 2/ln N`
/// elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightScheme {
    pub threshold: f64,
    pub w_high: f64,
    pub w_low: f64,
    /// Per observation, canonical order.
    pub weights: Vec<f64>,
}

impl WeightScheme {
    pub fn from_z(z: &[f64]) -> Self {
        let n = z.len() as f64;
        let delta = 2.0 / n.ln();
        let (w_high, w_low) = (1.0 + delta, 1.0 - delta);
        let threshold = PM25_THRESHOLD.sqrt();
        Self {
            threshold,
            w_high,
            w_low,
            weights: z.iter().map(|&v| if v >= threshold { w_high } else { w_low }).collect(),
        }
    }

    /// W = I.
    pub fn identity(n: usize) -> Self {
        Self {
            threshold: PM25_THRESHOLD.sqrt(),
            w_high: 1.0,
            w_low: 1.0,
            weights: vec![1.0; n],
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            w_high: self.w_high * c,
            w_low: self.w_low * c,
            weights: self.weights.iter().map(|w| w * c).collect(),
            ..self.clone()
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// All weights equal, so V is proportional to Ω⁻¹.
    pub fn is_uniform(&self) -> bool {
        self.weights.windows(2).all(|w| w[0] == w[1])
    }
}

pub fn weight_matrix(panel: &WeeklyPanel) -> WeightScheme {
    WeightScheme::from_z(&panel.z)
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}

/// Solves `A x = b` for symmetric positive definite `A`.
pub(crate) fn solve_spd(a: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Rank(format!("{what} is singular or not positive definite")))?;
    Ok(chol.solve(b))
}

/// θ̂ = (X'VX)⁻¹X'VY with V = Ω^{-1/2} W Ω^{-1/2}, never forming V.
pub fn weighted_gls_step(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    cov: &BlockCovariance,
    weights: &WeightScheme,
) -> Result<DVector<f64>> {
    check_len(cov.len(), x.nrows())?;
    check_len(cov.len(), y.len())?;
    check_len(cov.len(), weights.len())?;
    let mut xy = DMatrix::zeros(x.nrows(), x.ncols() + 1);
    xy.columns_mut(0, x.ncols()).copy_from(x);
    xy.set_column(x.ncols(), y);
    let q = x.ncols();
    let (normal, rhs) = if weights.is_uniform() {
        let solved = cov.solve(&xy)?;
        let cross = x.transpose() * solved;
        (cross.columns(0, q).into_owned(), cross.columns(q, 1).into_owned())
    } else {
        let mut white = cov.inv_sqrt_apply(&xy)?;
        let scaled = {
            let mut s = white.clone();
            for (mut row, &w) in s.row_iter_mut().zip(&weights.weights) {
                row *= w;
            }
            s
        };
        white = white.transpose() * scaled;
        (white.view((0, 0), (q, q)).into_owned(), white.view((0, q), (q, 1)).into_owned())
    };
    Ok(solve_spd(&normal, &rhs, "X'VX")?.column(0).into_owned())
}

/// σ̂² = ε'Ω⁻¹ε / N.
pub fn estimate_sigma2(residuals: &DVector<f64>, cov: &BlockCovariance) -> Result<f64> {
    check_len(cov.len(), residuals.len())?;
    if residuals.iter().all(|&r| r == 0.0) {
        log::warn!("zero residual vector: degenerate fit, sigma2 = 0");
        return Ok(0.0);
    }
    let solved = cov.solve_vec(residuals)?;
    Ok(residuals.dot(&solved) / residuals.len() as f64)
}

const LOG_TAU2_MIN: f64 = -9.210_340_371_976_182; // ln 1e-4
const LOG_TAU2_MAX: f64 = 9.210_340_371_976_182; // ln 1e4
const LOG_TAU2_TOL: f64 = 1e-6;
const GRID_POINTS: usize = 101;

/// Gaussian likelihood of one season's residuals as a function of τ²,
/// in the eigenbasis of that season's process correlation: eigenvalues
/// `c_i` and rotated residuals `r_i`.
#[derive(Debug, Clone, Default)]
pub struct SeasonLikelihood {
    pub eigenvalues: Vec<f64>,
    pub rotated: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TauEstimate {
    pub tau2: f64,
    pub log_likelihood: f64,
    pub at_bound: bool,
}

impl SeasonLikelihood {
    /// From a residual vector and the (dense) season submatrix of Σ_v.
    pub fn dense(residuals: &DVector<f64>, sigma_v: &DMatrix<f64>) -> Result<Self> {
        check_len(sigma_v.nrows(), residuals.len())?;
        let eig = SymmetricEigen::new(sigma_v.clone());
        let rotated = eig.eigenvectors.transpose() * residuals;
        Ok(Self {
            eigenvalues: eig.eigenvalues.iter().map(|&c| c.max(0.0)).collect(),
            rotated: rotated.iter().copied().collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.rotated.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rotated.is_empty()
    }

    pub fn log_likelihood(&self, tau2: f64, sigma2: f64) -> f64 {
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        -0.5 * self
            .eigenvalues
            .iter()
            .zip(&self.rotated)
            .map(|(&c, &r)| {
                let v = sigma2 * (c + tau2);
                ln2pi + v.ln() + r * r / v
            })
            .sum::<f64>()
    }

    /// Maximizes over ln τ² ∈ [ln 1e-4, ln 1e4]: a 101-point scan locates
    /// the best bracket, golden-section search refines it to 1e-6.
    pub fn maximize(&self, sigma2: f64) -> TauEstimate {
        let f = |u: f64| self.log_likelihood(u.exp(), sigma2);
        let step = (LOG_TAU2_MAX - LOG_TAU2_MIN) / (GRID_POINTS - 1) as f64;
        let grid = |i: usize| LOG_TAU2_MIN + step * i as f64;
        let best = (0..GRID_POINTS)
            .map(|i| (i, f(grid(i))))
            .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
        let lo = grid(best.0.saturating_sub(1));
        let hi = grid((best.0 + 1).min(GRID_POINTS - 1));
        let (u, v) = golden_max(f, lo, hi, LOG_TAU2_TOL);
        let (u, v) = if v >= best.1 { (u, v) } else { (grid(best.0), best.1) };
        TauEstimate {
            tau2: u.exp(),
            log_likelihood: v,
            at_bound: u - LOG_TAU2_MIN < 1e-3 || LOG_TAU2_MAX - u < 1e-3,
        }
    }
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let u = 0.5 * (a + b);
    (u, f(u))
}

/// MLE of τ_j² for residuals `ε_j ~ N(0, σ²(Σ_v^(j) + τ_j² I))`.
pub fn mle_tau(residuals: &DVector<f64>, sigma_v: &DMatrix<f64>, sigma2: f64) -> Result<TauEstimate> {
    if !(sigma2 > 0.0) {
        return Err(Error::Domain(format!("sigma2 = {sigma2} must be positive")));
    }
    Ok(SeasonLikelihood::dense(residuals, sigma_v)?.maximize(sigma2))
}

/// Eigen-structure of Σ_v restricted to one season: per cluster the season's
/// temporal submatrix Kronecker the cluster's spatial correlation.
struct SeasonStructure {
    season: usize,
    weeks: Vec<usize>,
    temporal_eigen: SymmetricEigen<f64, nalgebra::Dyn>,
}

impl SeasonStructure {
    fn all(cov: &BlockCovariance) -> Vec<SeasonStructure> {
        let st = cov.space_time();
        let n_seasons = cov.params().tau2.len();
        (0..n_seasons)
            .filter_map(|season| {
                let weeks: Vec<usize> = (0..st.n_weeks()).filter(|&w| st.week_seasons[w] == season).collect();
                if weeks.is_empty() {
                    return None;
                }
                let sub = DMatrix::from_fn(weeks.len(), weeks.len(), |a, b| cov.temporal()[(weeks[a], weeks[b])]);
                Some(SeasonStructure {
                    season,
                    weeks,
                    temporal_eigen: sub.symmetric_eigen(),
                })
            })
            .collect()
    }

    fn likelihood(&self, cov: &BlockCovariance, residuals: &DVector<f64>) -> SeasonLikelihood {
        let layout = cov.layout();
        let v = &self.temporal_eigen.eigenvectors;
        let mut out = SeasonLikelihood::default();
        for k in 0..layout.n_clusters() {
            let n_k = layout.members(k).len();
            let e = DMatrix::from_fn(self.weeks.len(), n_k, |a, s| residuals[layout.index(k, self.weeks[a], s)]);
            let u = &cov.spatial_eigen(k).eigenvectors;
            let rotated = v.transpose() * e * u;
            for (b, &lambda) in cov.spatial_eigen(k).eigenvalues.iter().enumerate() {
                for (a, &mu) in self.temporal_eigen.eigenvalues.iter().enumerate() {
                    out.eigenvalues.push((mu * lambda).max(0.0));
                    out.rotated.push(rotated[(a, b)]);
                }
            }
        }
        out
    }
}

/// The season-`season` submatrix of Σ_v (cross-season entries dropped) and
/// the matching residual entries, in canonical order. For tests and small
/// problems.
pub fn season_block(cov: &BlockCovariance, residuals: &DVector<f64>, season: usize) -> (DVector<f64>, DMatrix<f64>) {
    let layout = cov.layout();
    let st = cov.space_time();
    let idx: Vec<usize> = layout.cells().enumerate().filter(|(_, c)| st.week_seasons[c.week] == season).map(|(i, _)| i).collect();
    let mut sigma = DMatrix::zeros(idx.len(), idx.len());
    for (a, &i) in idx.iter().enumerate() {
        let ci = layout.locate(i);
        for (b, &j) in idx.iter().enumerate() {
            let cj = layout.locate(j);
            if ci.cluster == cj.cluster {
                sigma[(a, b)] = cov.temporal()[(ci.week, cj.week)] * cov.spatial(ci.cluster)[(ci.local, cj.local)];
            }
        }
    }
    (DVector::from_iterator(idx.len(), idx.iter().map(|&i| residuals[i])), sigma)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Cap on passes through the GLS / σ² / τ² cycle, extrapolated ones included.
    pub max_iter: usize,
    pub tol: f64,
    pub strategy: Strategy,
    /// Squared-extrapolation acceleration of the τ² fixed point. The limit
    /// is the same; only the number of passes changes.
    pub accelerate: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-6,
            strategy: Strategy::Spectral,
            accelerate: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub theta: Vec<f64>,
    pub sigma2: f64,
    pub tau2: Vec<f64>,
    /// Relative to the previous record; `None` for the first pass.
    pub max_rel_change: Option<f64>,
    /// The pass started from an extrapolated τ², so its change does not
    /// count towards convergence.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub extrapolated: bool,
}

#[derive(Debug, Clone)]
pub struct FittedModel {
    pub labels: Vec<String>,
    pub theta: DVector<f64>,
    pub sigma2: f64,
    /// τ̂² per season (first season pinned to 1), those of the final Ω̂.
    pub tau2: Vec<f64>,
    pub params: CovarianceParams,
    pub std_errors: DVector<f64>,
    /// σ̂²(X'Ω̂⁻¹X)⁻¹.
    pub theta_covariance: DMatrix<f64>,
    pub fitted: DVector<f64>,
    pub residuals: DVector<f64>,
    pub trace: Vec<IterationRecord>,
    pub converged: bool,
    pub warnings: Vec<String>,
    /// Factored Ω̂ at the final iterate.
    pub covariance: Arc<BlockCovariance>,
}

impl FittedModel {
    pub fn n_obs(&self) -> usize {
        self.residuals.len()
    }

    /// Ω̂^{-1/2} ε̂ / σ̂.
    pub fn standardized_residuals(&self) -> Result<DVector<f64>> {
        let scale = if self.sigma2 > 0.0 { self.sigma2.sqrt() } else { 1.0 };
        Ok(self.covariance.inv_sqrt_apply_vec(&self.residuals)? / scale)
    }

    /// `θ̂ ± z·SE` for each coefficient.
    pub fn confidence_intervals(&self, z: f64) -> Vec<(f64, f64)> {
        self.theta
            .iter()
            .zip(self.std_errors.iter())
            .map(|(&t, &se)| (t - z * se, t + z * se))
            .collect()
    }

    /// Summary with 95% Wald intervals.
    pub fn report(&self) -> FitReport {
        self.report_at(0.95).expect("0.95 is a valid confidence")
    }

    /// Summary with Wald intervals at `confidence` (e.g. 0.95).
    pub fn report_at(&self, confidence: f64) -> Result<FitReport> {
        let z = normal_quantile(0.5 + confidence / 2.0)
            .filter(|_| confidence > 0.0 && confidence < 1.0)
            .ok_or_else(|| Error::Domain(format!("confidence {confidence} outside (0, 1)")))?;
        let ci = self.confidence_intervals(z);
        Ok(FitReport {
            confidence,
            coefficients: self
                .labels
                .iter()
                .enumerate()
                .map(|(i, label)| Coefficient {
                    label: label.clone(),
                    estimate: self.theta[i],
                    std_error: self.std_errors[i],
                    ci_lower: ci[i].0,
                    ci_upper: ci[i].1,
                })
                .collect(),
            sigma2: self.sigma2,
            tau2: self.tau2.clone(),
            phi_s: self.params.phi_s,
            phi_t: self.params.phi_t,
            n_obs: self.n_obs(),
            iterations: self.trace.len(),
            converged: self.converged,
            warnings: self.warnings.clone(),
            trace: self.trace.clone(),
        })
    }
}

/// Standard normal quantile, `None` outside (0, 1).
pub fn normal_quantile(p: f64) -> Option<f64> {
    use statrs::distribution::{ContinuousCDF, Normal};
    (p > 0.0 && p < 1.0).then(|| Normal::standard().inverse_cdf(p))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Coefficient {
    pub label: String,
    pub estimate: f64,
    pub std_error: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
}

/// Serializable summary of a fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    /// Coverage of the Wald intervals in `coefficients`.
    pub confidence: f64,
    pub coefficients: Vec<Coefficient>,
    pub sigma2: f64,
    pub tau2: Vec<f64>,
    pub phi_s: f64,
    pub phi_t: f64,
    pub n_obs: usize,
    pub iterations: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
    pub trace: Vec<IterationRecord>,
}

/// Σ w ê² with ê = Ω^{-1/2}(y - Xθ)/σ.
pub fn weighted_loss(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    theta: &DVector<f64>,
    cov: &BlockCovariance,
    sigma2: f64,
    weights: &WeightScheme,
) -> Result<f64> {
    let e = cov.inv_sqrt_apply_vec(&(y - x * theta))? / sigma2.sqrt();
    Ok(e.iter().zip(&weights.weights).map(|(e, w)| w * e * e).sum())
}

fn max_rel_change(old: &[f64], new: &[f64]) -> f64 {
    old.iter()
        .zip(new)
        .map(|(o, n)| (n - o).abs() / o.abs().max(1.0))
        .fold(0.0, f64::max)
}

struct FitPass {
    cov: BlockCovariance,
    theta: DVector<f64>,
    sigma2: f64,
    input_tau2: Vec<f64>,
    next_tau2: Vec<f64>,
}

/// One cycle: Ω from `tau2`, weighted GLS for θ, plug-in σ², then the
/// per-season τ² maximizers.
#[allow(clippy::too_many_arguments)]
fn fit_pass(
    space_time: &SpaceTime,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    phi_s: f64,
    phi_t: f64,
    weights: &WeightScheme,
    options: &FitOptions,
    tau2: Vec<f64>,
    seasons: &mut Option<Vec<SeasonStructure>>,
    warnings: &mut Vec<String>,
) -> Result<FitPass> {
    let n = y.len();
    let params = CovarianceParams {
        sigma2: 1.0,
        tau2: tau2.clone(),
        phi_s,
        phi_t,
    };
    let cov = BlockCovariance::build(space_time, &params, options.strategy)?;
    let theta = weighted_gls_step(x, y, &cov, weights)?;
    let residuals = y - x * &theta;
    let sigma2 = estimate_sigma2(&residuals, &cov)?;
    let degenerate = !(sigma2 > 1e-14 * (y.norm_squared() / n as f64).max(f64::MIN_POSITIVE));

    let mut next_tau2 = tau2.clone();
    if degenerate {
        if !warnings.iter().any(|w| w.starts_with("degenerate")) {
            warnings.push("degenerate fit: residuals are numerically zero".to_string());
        }
    } else {
        let structures = seasons.get_or_insert_with(|| SeasonStructure::all(&cov));
        for s in structures.iter().filter(|s| s.season > 0) {
            let est = s.likelihood(&cov, &residuals).maximize(sigma2);
            next_tau2[s.season] = est.tau2;
            if est.at_bound {
                let msg = format!("tau2 for season {} hit a search bound", s.season + 1);
                if !warnings.contains(&msg) {
                    warnings.push(msg);
                }
            }
        }
    }
    Ok(FitPass {
        cov,
        theta,
        sigma2,
        input_tau2: tau2,
        next_tau2,
    })
}

/// Squared extrapolation (SQUAREM, scheme S3) of three successive τ² iterates
/// on the log scale. `None` when the step would not move past `t2`.
fn squarem(t0: &[f64], t1: &[f64], t2: &[f64], step_max: &mut f64) -> Option<Vec<f64>> {
    let (lo, hi) = (LOG_TAU2_MIN, LOG_TAU2_MAX);
    let (u0, u1, u2): (Vec<f64>, Vec<f64>, Vec<f64>) = (
        t0.iter().map(|v| v.ln()).collect(),
        t1.iter().map(|v| v.ln()).collect(),
        t2.iter().map(|v| v.ln()).collect(),
    );
    let r: Vec<f64> = u1.iter().zip(&u0).map(|(a, b)| a - b).collect();
    let v: Vec<f64> = (0..u0.len()).map(|i| u2[i] - 2.0 * u1[i] + u0[i]).collect();
    let norm = |w: &[f64]| w.iter().map(|e| e * e).sum::<f64>().sqrt();
    let (nr, nv) = (norm(&r), norm(&v));
    if !(nv > 0.0) || !nr.is_finite() {
        return None;
    }
    let raw = -nr / nv;
    let alpha = raw.max(-*step_max);
    if raw <= -*step_max {
        *step_max *= 4.0;
    }
    if alpha >= -1.0 {
        return None;
    }
    let out = (0..u0.len())
        .map(|i| (u0[i] - 2.0 * alpha * r[i] + alpha * alpha * v[i]).clamp(lo, hi).exp())
        .collect();
    Some(out)
}

/// Runs the iterative estimator with fixed decays `phi_s`, `phi_t`.
pub fn fit(
    space_time: &SpaceTime,
    design: &DesignMatrix,
    y: &DVector<f64>,
    phi_s: f64,
    phi_t: f64,
    weights: &WeightScheme,
    options: &FitOptions,
) -> Result<FittedModel> {
    let n = space_time.len();
    check_len(n, design.nrows())?;
    check_len(n, y.len())?;
    let x = &design.matrix;
    let mut warnings = Vec::new();
    let mut seasons: Option<Vec<SeasonStructure>> = None;
    let mut trace: Vec<IterationRecord> = Vec::new();
    let mut run = |tau2: Vec<f64>, extrapolated: bool, trace: &mut Vec<IterationRecord>, warnings: &mut Vec<String>| {
        let pass = fit_pass(space_time, x, y, phi_s, phi_t, weights, options, tau2, &mut seasons, warnings)?;
        let state: Vec<f64> = pass.theta.iter().chain(&pass.next_tau2).copied().chain([pass.sigma2]).collect();
        let change = trace.last().map(|prev| {
            let old: Vec<f64> = prev.theta.iter().chain(&prev.tau2).copied().chain([prev.sigma2]).collect();
            max_rel_change(&old, &state)
        });
        trace.push(IterationRecord {
            theta: pass.theta.iter().copied().collect(),
            sigma2: pass.sigma2,
            tau2: pass.next_tau2.clone(),
            max_rel_change: change,
            extrapolated,
        });
        Ok::<_, Error>((pass, change))
    };

    let (mut last, _) = run(vec![1.0; space_time.n_seasons], false, &mut trace, &mut warnings)?;
    // successive genuine iterates since the last extrapolation
    let mut cycle = vec![last.input_tau2.clone(), last.next_tau2.clone()];
    let mut step_max = 1.0;
    let mut converged = false;
    while trace.len() < options.max_iter {
        let (pass, change) = run(last.next_tau2.clone(), false, &mut trace, &mut warnings)?;
        last = pass;
        if change.is_some_and(|c| c < options.tol) {
            converged = true;
            break;
        }
        cycle.push(last.next_tau2.clone());
        if !options.accelerate || cycle.len() < 3 || trace.len() >= options.max_iter {
            if cycle.len() > 3 {
                cycle.remove(0);
            }
            continue;
        }
        let Some(proposal) = squarem(&cycle[0], &cycle[1], &cycle[2], &mut step_max) else {
            cycle.remove(0);
            continue;
        };
        match run(proposal, true, &mut trace, &mut warnings) {
            Ok((pass, _)) => {
                last = pass;
                cycle = vec![last.next_tau2.clone()];
            }
            Err(e) if e.is_numerical() => {
                log::debug!("extrapolated step rejected: {e}");
                step_max = 1.0;
                cycle = vec![last.next_tau2.clone()];
            }
            Err(e) => return Err(e),
        }
    }
    if !converged {
        warnings.push(format!("no convergence after {} iterations", options.max_iter));
    }
    let FitPass { cov, theta, sigma2, .. } = last;

    let solved = cov.solve(x)?;
    let info = x.transpose() * solved;
    let identity = DMatrix::identity(info.nrows(), info.ncols());
    let theta_covariance = solve_spd(&info, &identity, "X'Ω⁻¹X")? * sigma2;
    let std_errors = theta_covariance.diagonal().map(|v| v.max(0.0).sqrt());
    let fitted = x * &theta;
    let residuals = y - &fitted;
    let tau2 = cov.params().tau2.clone();
    let params = CovarianceParams {
        sigma2,
        ..cov.params().clone()
    };
    Ok(FittedModel {
        labels: design.labels.clone(),
        theta,
        sigma2,
        tau2,
        params,
        std_errors,
        theta_covariance,
        fitted,
        residuals,
        trace,
        converged,
        warnings,
        covariance: Arc::new(cov),
    })
}

/// [`fit`] on a panel's response with its threshold weights.
pub fn fit_panel(panel: &WeeklyPanel, design: &DesignMatrix, phi_s: f64, phi_t: f64, options: &FitOptions) -> Result<FittedModel> {
    let y = DVector::from_column_slice(&panel.y);
    fit(&SpaceTime::of(panel), design, &y, phi_s, phi_t, &weight_matrix(panel), options)
}
