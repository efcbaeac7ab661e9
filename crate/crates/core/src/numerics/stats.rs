use nalgebra::DMatrix;

use super::linalg::ols;
use crate::error::{Error, Result};

/// Bayesian information criterion, `T ln(rss/T) + k ln T`.
pub fn bic(rss: f64, t: usize, k_params: usize) -> Result<f64> {
    if t == 0 {
        return Err(Error::Domain("BIC needs T > 0".into()));
    }
    if !(rss > 0.0) || !rss.is_finite() {
        return Err(Error::Domain(format!("BIC needs positive finite rss, got {rss}")));
    }
    let tf = t as f64;
    Ok(tf * (rss / tf).ln() + k_params as f64 * tf.ln())
}

/// Lag-one partial autocorrelation, estimated as the slope of `y_t` on
/// `(1, y_{t-1})` over consecutive observed pairs.
pub fn partial_autocorr_lag1(series: &[Option<f64>]) -> Result<f64> {
    let n_obs = series.iter().filter(|v| v.is_some()).count();
    if n_obs < 3 {
        return Err(Error::UndefinedStatistic(format!(
            "need at least 3 observations, have {n_obs}"
        )));
    }
    let pairs: Vec<(f64, f64)> = series
        .windows(2)
        .filter_map(|w| Some((w[0]?, w[1]?)))
        .collect();
    if pairs.len() < 2 {
        return Err(Error::UndefinedStatistic("fewer than 2 consecutive pairs".into()));
    }
    let lag_mean = pairs.iter().map(|p| p.0).sum::<f64>() / pairs.len() as f64;
    let spread = pairs.iter().map(|p| (p.0 - lag_mean).abs()).fold(0.0, f64::max);
    if spread <= 1e-14 * lag_mean.abs().max(1.0) {
        return Err(Error::UndefinedStatistic("constant series".into()));
    }
    let x = DMatrix::from_fn(pairs.len(), 2, |i, j| if j == 0 { 1.0 } else { pairs[i].0 });
    let y = DMatrix::from_fn(pairs.len(), 1, |i, _| pairs[i].1);
    let fit = ols(&x, &y).map_err(|e| Error::UndefinedStatistic(e.to_string()))?;
    Ok(fit.coef[(1, 0)])
}

/// Sample quantile with linear interpolation between order statistics
/// (the "inclusive" convention: position `(n-1)p`).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Standard deviation with denominator `n - 1`; zero for a single value.
pub fn sample_std(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}
