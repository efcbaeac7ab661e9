use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Largest diagonal jitter, relative to the mean absolute diagonal, tried
/// before a factorization is declared failed.
pub const MAX_RELATIVE_JITTER: f64 = 1e-6;
const FIRST_RELATIVE_JITTER: f64 = 1e-12;

/// Lower Cholesky factor of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    pub lower: DMatrix<f64>,
    /// Absolute amount added to the diagonal before factorizing.
    pub jitter_applied: f64,
}

impl CholeskyFactor {
    /// Factorize `a`, escalating diagonal jitter from zero, then 1e-12 by
    /// powers of ten up to 1e-6 (scaled by the mean absolute diagonal).
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if n != a.ncols() {
            return Err(Error::Dimension(format!("{}x{} matrix is not square", n, a.ncols())));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Factorization("matrix has non-finite entries".into()));
        }
        let sym = (a + a.transpose()) * 0.5;
        let scale = {
            let m = sym.diagonal().iter().map(|d| d.abs()).sum::<f64>() / n.max(1) as f64;
            if m > 0.0 {
                m
            } else {
                1.0
            }
        };
        let mut rel = 0.0;
        loop {
            let jitter = rel * scale;
            let mut m = sym.clone();
            for i in 0..n {
                m[(i, i)] += jitter;
            }
            if let Some(c) = m.cholesky() {
                let lower = c.unpack();
                if lower.diagonal().iter().all(|d| *d > 0.0) {
                    return Ok(CholeskyFactor {
                        lower,
                        jitter_applied: jitter,
                    });
                }
            }
            rel = if rel == 0.0 { FIRST_RELATIVE_JITTER } else { rel * 10.0 };
            if rel > MAX_RELATIVE_JITTER * 1.000_001 {
                return Err(Error::Factorization(format!(
                    "{n}x{n} matrix not positive definite after jitter {:.1e}",
                    MAX_RELATIVE_JITTER * scale
                )));
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.lower.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// Solve `A x = b`.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let y = self
            .lower
            .solve_lower_triangular(b)
            .expect("positive diagonal");
        self.lower
            .transpose()
            .solve_upper_triangular(&y)
            .expect("positive diagonal")
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.dim();
        let inv = self.solve(&DMatrix::identity(n, n));
        (&inv + inv.transpose()) * 0.5
    }

    /// Inverse of the lower factor.
    pub fn lower_inverse(&self) -> DMatrix<f64> {
        let n = self.dim();
        self.lower
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .expect("positive diagonal")
    }
}

/// Least-squares fit of every column of `Y` on `X`.
#[derive(Debug, Clone)]
pub struct OlsFit {
    pub coef: DMatrix<f64>,
    pub resid: DMatrix<f64>,
    /// Residual variance per column, denominator `T - K` (`NaN` when `T == K`).
    pub sigma2: Vec<f64>,
}

/// Reciprocal condition threshold on the R factor below which X is treated
/// as rank deficient.
const RANK_TOL: f64 = 1e-12;

/// Column-wise OLS via Householder QR.
pub fn ols(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<OlsFit> {
    let (t, k) = x.shape();
    if y.nrows() != t {
        return Err(Error::Dimension(format!("X has {t} rows, Y has {}", y.nrows())));
    }
    if t < k || k == 0 {
        return Err(Error::Dimension(format!("need T >= K >= 1, got T={t}, K={k}")));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite regression input".into()));
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let diag: Vec<f64> = r.diagonal().iter().map(|d| d.abs()).collect();
    let dmax = diag.iter().cloned().fold(0.0, f64::max);
    let dmin = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    if dmax == 0.0 || dmin <= RANK_TOL * dmax {
        return Err(Error::Singular(format!(
            "design matrix rank deficient (|r_min|/|r_max| = {:.2e})",
            if dmax == 0.0 { 0.0 } else { dmin / dmax }
        )));
    }
    let qty = qr.q().transpose() * y;
    let coef = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Singular("triangular solve failed".into()))?;
    let resid = y - x * &coef;
    let dof = (t - k) as f64;
    let sigma2 = resid
        .column_iter()
        .map(|c| if t > k { c.norm_squared() / dof } else { f64::NAN })
        .collect();
    Ok(OlsFit { coef, resid, sigma2 })
}
