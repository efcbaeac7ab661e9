//! Univariate autoregressive benchmark and residual scales.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::numerics::ols;

const MIN_AR1_OBS: usize = 10;

/// Longest run of observed values ending at the last observed point.
/// Leading gaps are dropped; an interior gap truncates the run.
pub fn contiguous_tail(series: &[Option<f64>]) -> Vec<f64> {
    let end = match series.iter().rposition(|v| v.is_some()) {
        Some(e) => e + 1,
        None => return Vec::new(),
    };
    let start = series[..end]
        .iter()
        .rposition(|v| v.is_none())
        .map_or(0, |s| s + 1);
    series[start..end].iter().map(|v| v.unwrap()).collect()
}

/// Regress `y_t` on `(1, y_{t-1}, ..., y_{t-p})`.
fn ar_design(y: &[f64], p: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = y.len() - p;
    let x = DMatrix::from_fn(n, p + 1, |r, c| if c == 0 { 1.0 } else { y[p + r - c] });
    let target = DMatrix::from_fn(n, 1, |r, _| y[p + r]);
    (x, target)
}

/// OLS intercept and slope of an AR(1).
pub fn ar1_fit(y: &[f64]) -> Result<(f64, f64)> {
    if y.len() < MIN_AR1_OBS {
        return Err(Error::Precondition(format!(
            "AR(1) needs at least {MIN_AR1_OBS} observations, got {}",
            y.len()
        )));
    }
    let (x, target) = ar_design(y, 1);
    let fit = ols(&x, &target).map_err(|e| match e {
        Error::Singular(_) => Error::Singular("degenerate AR(1) fit (constant series)".into()),
        other => other,
    })?;
    Ok((fit.coef[(0, 0)], fit.coef[(1, 0)]))
}

/// Iterated AR(1) point forecasts for horizons `1..=h_max`.
pub fn ar1_forecast(y: &[f64], h_max: usize) -> Result<Vec<f64>> {
    let (c, rho) = ar1_fit(y)?;
    let last = *y.last().expect("length checked");
    let mut out = Vec::with_capacity(h_max);
    let mut level = last;
    for _ in 0..h_max {
        level = c + rho * level;
        out.push(level);
    }
    Ok(out)
}

/// Standard error of an AR(p) regression with intercept, denominator `T - p - 1`
/// where `T` counts regression rows.
pub fn ar_resid_scale(y: &[f64], p: usize) -> Result<f64> {
    if y.len() < p + 10 {
        return Err(Error::Precondition(format!(
            "AR({p}) scale needs at least {} observations, got {}",
            p + 10,
            y.len()
        )));
    }
    let (x, target) = ar_design(y, p);
    let fit = ols(&x, &target)?;
    Ok(fit.sigma2[0].max(0.0).sqrt())
}
