//! Single-factor direct forecasts: the first principal component of the
//! EM-balanced panel augments a per-horizon autoregression whose lag orders
//! are chosen by BIC.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{TimeSeriesPanel, YearMonth};
use crate::error::{Error, Result};
use crate::numerics::{bic, em_balance, ols, principal_components, standardize, EmConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FactorConfig {
    pub max_factor_lags: usize,
    pub max_own_lags: usize,
    pub em_tol: f64,
    pub em_max_iter: usize,
}

impl Default for FactorConfig {
    fn default() -> Self {
        FactorConfig {
            max_factor_lags: 3,
            max_own_lags: 6,
            em_tol: 1e-6,
            em_max_iter: 500,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FactorSeries {
    pub dates: Vec<YearMonth>,
    pub values: Vec<f64>,
    pub loadings: Vec<f64>,
    pub em_iterations: usize,
    pub em_converged: bool,
}

/// First principal component of the standardized, EM-balanced panel. The
/// sign makes the loadings sum to a positive number, so the series does not
/// depend on column order.
pub fn extract_factor(panel: &TimeSeriesPanel, cfg: &FactorConfig) -> Result<FactorSeries> {
    if panel.n_vars() < 2 {
        return Err(Error::Precondition(format!(
            "factor extraction needs at least 2 variables, got {}",
            panel.n_vars()
        )));
    }
    let em = em_balance(
        panel,
        EmConfig {
            factors: 1,
            tol: cfg.em_tol,
            max_iter: cfg.em_max_iter,
        },
    )?;
    let (z, _, _) = standardize(&em.data);
    if z.amax() == 0.0 {
        return Err(Error::Factorization("every series in the window is constant".into()));
    }
    let pc = principal_components(&z, 1).map_err(|e| match e {
        Error::Dimension(m) => Error::Factorization(m),
        other => other,
    })?;
    Ok(FactorSeries {
        dates: panel.dates().to_vec(),
        values: pc.factors.column(0).iter().cloned().collect(),
        loadings: pc.loadings.column(0).iter().cloned().collect(),
        em_iterations: em.iterations,
        em_converged: em.converged,
    })
}

pub fn write_factor_csv(path: &Path, factor: &FactorSeries) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "date,factor")?;
    for (d, v) in factor.dates.iter().zip(&factor.values) {
        writeln!(w, "{},{}", d.to_iso_date(), v)?;
    }
    w.flush()?;
    Ok(())
}

/// `y_t = α + Σ_l β_l f_{t-h-l} + Σ_l γ_l y_{t-h-l} + e_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorRegressionSpec {
    pub variable: String,
    pub horizon: usize,
    pub factor_lags: usize,
    pub own_lags: usize,
    pub intercept: f64,
    pub factor_coefs: Vec<f64>,
    pub own_coefs: Vec<f64>,
    pub resid_var: f64,
    pub bic: f64,
}

fn direct_design(y: &[f64], f: &[f64], h: usize, qf: usize, qy: usize, start: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let rows = y.len() - start;
    let x = DMatrix::from_fn(rows, 1 + qf + qy, |r, c| {
        let t = start + r;
        if c == 0 {
            1.0
        } else if c <= qf {
            f[t - h - (c - 1)]
        } else {
            y[t - h - (c - 1 - qf)]
        }
    });
    let target = DMatrix::from_fn(rows, 1, |r, _| y[start + r]);
    (x, target)
}

/// Fit every `(q_f, q_y)` in `1..=max_qf x 1..=max_qy` on a common sample
/// and keep the BIC minimizer. `y` and `f` are aligned and complete.
pub fn fit_direct(variable: &str, y: &[f64], f: &[f64], h: usize, max_qf: usize, max_qy: usize) -> Result<FactorRegressionSpec> {
    if y.len() != f.len() {
        return Err(Error::Dimension(format!("series of length {} and factor of length {}", y.len(), f.len())));
    }
    if h == 0 || max_qf == 0 || max_qy == 0 {
        return Err(Error::Config("horizon and lag ceilings must be at least 1".into()));
    }
    if y.iter().chain(f).any(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("'{variable}' has missing values in the regression window")));
    }
    let start = h + max_qf.max(max_qy) - 1;
    let k_max = 1 + max_qf + max_qy;
    if y.len() < start + k_max + 1 {
        return Err(Error::Precondition(format!(
            "'{variable}' has {} observations; h = {h} with up to {k_max} regressors needs {}",
            y.len(),
            start + k_max + 1
        )));
    }
    let mut best: Option<FactorRegressionSpec> = None;
    for qf in 1..=max_qf {
        for qy in 1..=max_qy {
            let (x, target) = direct_design(y, f, h, qf, qy, start);
            let fit = ols(&x, &target)?;
            let rows = x.nrows();
            let rss = fit.resid.norm_squared().max(f64::MIN_POSITIVE);
            let score = bic(rss, rows, 1 + qf + qy)?;
            if best.as_ref().map_or(true, |b| score < b.bic) {
                let c = fit.coef.column(0);
                best = Some(FactorRegressionSpec {
                    variable: variable.to_string(),
                    horizon: h,
                    factor_lags: qf,
                    own_lags: qy,
                    intercept: c[0],
                    factor_coefs: c.rows(1, qf).iter().cloned().collect(),
                    own_coefs: c.rows(1 + qf, qy).iter().cloned().collect(),
                    resid_var: fit.sigma2[0],
                    bic: score,
                });
            }
        }
    }
    Ok(best.expect("grid is non-empty"))
}

/// `ŷ_{T+h}` from the latest factor and own values (last element is `T`).
pub fn forecast_direct(spec: &FactorRegressionSpec, f: &[f64], y: &[f64]) -> Result<f64> {
    if f.len() < spec.factor_lags || y.len() < spec.own_lags {
        return Err(Error::Validation(format!(
            "'{}' needs {} factor and {} own values at the origin",
            spec.variable, spec.factor_lags, spec.own_lags
        )));
    }
    let mut out = spec.intercept;
    for (l, b) in spec.factor_coefs.iter().enumerate() {
        out += b * f[f.len() - 1 - l];
    }
    for (l, g) in spec.own_coefs.iter().enumerate() {
        out += g * y[y.len() - 1 - l];
    }
    if !out.is_finite() {
        return Err(Error::Validation(format!("'{}' has missing regressors at the origin", spec.variable)));
    }
    Ok(out)
}
