//! Score (Lagrange multiplier) test of H₀: γ₁ = … = γ_K = 0.
//!
//! Only the restricted model is fitted. With ε̃, Ω̃ and σ̃² from that fit the
//! score for the interaction block is `s = X_γ'Ω̃⁻¹ε̃ / σ̃²` and the statistic
//! is `σ̃² s' M⁻¹ s`, where `M` is the Schur complement of the X_δ block in
//! `X'Ω̃⁻¹X`. Under H₀ it is asymptotically χ² with K degrees of freedom.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::covariance::{BlockCovariance, SpaceTime};
use crate::design::DesignMatrix;
use crate::error::{Error, Result};
use crate::estimation::{fit, solve_spd, FitOptions, FittedModel, WeightScheme};
use crate::ingest::WeeklyPanel;

#[derive(Debug, Clone)]
pub struct LmTestResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub score: DVector<f64>,
    pub restricted_fit: FittedModel,
}

impl LmTestResult {
    pub fn rejects(&self, level: f64) -> bool {
        self.p_value < level
    }

    pub fn report(&self, level: f64) -> LmReport {
        LmReport {
            statistic: self.statistic,
            df: self.df,
            p_value: self.p_value,
            level,
            reject: self.rejects(level),
            restricted_converged: self.restricted_fit.converged,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LmReport {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub level: f64,
    pub reject: bool,
    pub restricted_converged: bool,
}

/// Upper-tail probability of χ²_df.
pub fn chi2_sf(statistic: f64, df: usize) -> f64 {
    if df == 0 {
        return 1.0;
    }
    let dist = ChiSquared::new(df as f64).expect("positive degrees of freedom");
    dist.sf(statistic.max(0.0)).clamp(0.0, 1.0)
}

/// The statistic and score at a restricted estimate.
pub fn lm_statistic(
    x_delta: &DMatrix<f64>,
    x_gamma: &DMatrix<f64>,
    residuals: &DVector<f64>,
    cov: &BlockCovariance,
    sigma2: f64,
) -> Result<(f64, DVector<f64>)> {
    let (qd, qg) = (x_delta.ncols(), x_gamma.ncols());
    let n = residuals.len();
    let mut stacked = DMatrix::zeros(n, qd + qg + 1);
    stacked.columns_mut(0, qd).copy_from(x_delta);
    stacked.columns_mut(qd, qg).copy_from(x_gamma);
    stacked.set_column(qd + qg, residuals);
    let solved = cov.solve(&stacked)?;

    let xg_oi = x_gamma.transpose() * &solved;
    let gg = xg_oi.columns(qd, qg).into_owned();
    let gd = xg_oi.columns(0, qd).into_owned();
    let ge = xg_oi.column(qd + qg).into_owned();
    let dd = x_delta.transpose() * solved.columns(0, qd);

    // relative to the unadjusted interaction information, so exact
    // collinearity is caught even when rounding leaves M barely positive
    let scale = gg.diagonal().max().max(f64::MIN_POSITIVE);
    let m = if qd > 0 {
        let dd_inv_dg = solve_spd(&dd, &gd.transpose(), "X_δ'Ω⁻¹X_δ")?;
        &gg - &gd * dd_inv_dg
    } else {
        gg
    };
    let m = (&m + m.transpose()) * 0.5;
    let collinear = || Error::Rank("interaction columns are collinear given the restricted design".into());
    if m.clone().symmetric_eigenvalues().min() <= 1e-10 * scale {
        return Err(collinear());
    }
    let chol = m.cholesky().ok_or_else(collinear)?;

    if !(sigma2 > 0.0) {
        return Ok((0.0, DVector::zeros(qg)));
    }
    let score = &ge / sigma2;
    let statistic = ge.dot(&chol.solve(&ge)) / sigma2;
    Ok((statistic.max(0.0), score))
}

/// Fits the restricted model (W = I) and tests the interaction block.
pub fn lm_test(
    space_time: &SpaceTime,
    design: &DesignMatrix,
    y: &DVector<f64>,
    phi_s: f64,
    phi_t: f64,
    options: &FitOptions,
) -> Result<LmTestResult> {
    let restricted = design.restricted();
    let x_gamma = design.interaction_block();
    let df = x_gamma.ncols();
    let restricted_fit = fit(
        space_time,
        &restricted,
        y,
        phi_s,
        phi_t,
        &WeightScheme::identity(y.len()),
        options,
    )?;
    let (statistic, score) = lm_statistic(
        &restricted.matrix,
        &x_gamma,
        &restricted_fit.residuals,
        &restricted_fit.covariance,
        restricted_fit.sigma2,
    )?;
    Ok(LmTestResult {
        statistic,
        df,
        p_value: chi2_sf(statistic, df),
        score,
        restricted_fit,
    })
}

pub fn lm_test_panel(
    panel: &WeeklyPanel,
    design: &DesignMatrix,
    phi_s: f64,
    phi_t: f64,
    options: &FitOptions,
) -> Result<LmTestResult> {
    let y = DVector::from_column_slice(&panel.y);
    lm_test(&SpaceTime::of(panel), design, &y, phi_s, phi_t, options)
}
