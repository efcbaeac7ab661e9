use nalgebra::{DMatrix, SymmetricEigen};

use crate::data::TimeSeriesPanel;
use crate::error::{Error, Result};

/// Principal components of a column-standardized matrix.
#[derive(Debug, Clone)]
pub struct Principal {
    /// `T x k`, equal to `Z * loadings`.
    pub factors: DMatrix<f64>,
    /// `N x k`, orthonormal columns.
    pub loadings: DMatrix<f64>,
    /// Leading eigenvalues of `Z'Z / (T - 1)`, descending.
    pub eigvals: Vec<f64>,
}

/// Column means and standard deviations (denominator `T - 1`). Zero spreads
/// are reported as 1 so constant columns standardize to zero.
pub fn standardize(x: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, Vec<f64>) {
    let t = x.nrows();
    let mut means = Vec::with_capacity(x.ncols());
    let mut sds = Vec::with_capacity(x.ncols());
    let mut z = x.clone();
    for (j, mut col) in z.column_iter_mut().enumerate() {
        let m = x.column(j).sum() / t as f64;
        let var = x.column(j).iter().map(|v| (v - m) * (v - m)).sum::<f64>()
            / (t.saturating_sub(1).max(1)) as f64;
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        col.iter_mut().for_each(|v| *v = (*v - m) / sd);
        means.push(m);
        sds.push(sd);
    }
    (z, means, sds)
}

/// Flip `v` so its entries sum to a positive number; when the sum is
/// numerically zero the largest-magnitude entry is made positive. The rule
/// does not depend on the ordering of the entries.
pub(crate) fn normalize_sign(v: &mut [f64]) {
    let sum: f64 = v.iter().sum();
    let scale: f64 = v.iter().map(|x| x.abs()).sum();
    let flip = if sum.abs() > 1e-10 * scale.max(f64::MIN_POSITIVE) {
        sum < 0.0
    } else {
        let big = v
            .iter()
            .cloned()
            .fold(0.0_f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        big < 0.0
    };
    if flip {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

pub fn principal_components(z: &DMatrix<f64>, k: usize) -> Result<Principal> {
    let (t, n) = z.shape();
    if k == 0 || k > t.min(n) {
        return Err(Error::Dimension(format!("k = {k} outside 1..={}", t.min(n))));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite entries in PCA input".into()));
    }
    let denom = (t.saturating_sub(1)).max(1) as f64;
    let cov = (z.transpose() * z) / denom;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let kth = eig.eigenvalues[order[k - 1]];
    if !(top > 0.0) || kth <= 1e-12 * top {
        return Err(Error::Dimension(format!(
            "requested {k} components but the matrix has lower rank"
        )));
    }
    let mut loadings = DMatrix::zeros(n, k);
    let mut eigvals = Vec::with_capacity(k);
    for (c, &idx) in order.iter().take(k).enumerate() {
        let mut v: Vec<f64> = eig.eigenvectors.column(idx).iter().cloned().collect();
        normalize_sign(&mut v);
        loadings.set_column(c, &nalgebra::DVector::from_vec(v));
        eigvals.push(eig.eigenvalues[idx]);
    }
    let factors = z * &loadings;
    Ok(Principal {
        factors,
        loadings,
        eigvals,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmConfig {
    pub factors: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            factors: 1,
            tol: 1e-6,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmOutcome {
    pub data: DMatrix<f64>,
    pub iterations: usize,
    /// False when `max_iter` was reached first; `data` is the last iterate.
    pub converged: bool,
}

/// Fill missing cells of a panel with a k-factor approximation, iterating
/// until imputations settle.
pub fn em_balance(panel: &TimeSeriesPanel, cfg: EmConfig) -> Result<EmOutcome> {
    em_balance_matrix(panel.values(), panel.mask(), cfg)
}

pub fn em_balance_matrix(
    values: &DMatrix<f64>,
    observed: &DMatrix<bool>,
    cfg: EmConfig,
) -> Result<EmOutcome> {
    let (t, n) = values.shape();
    if observed.shape() != (t, n) {
        return Err(Error::Dimension("mask shape differs from values".into()));
    }
    for j in 0..n {
        let cnt = observed.column(j).iter().filter(|o| **o).count();
        if cnt < 2 {
            return Err(Error::Precondition(format!(
                "column {j} has {cnt} observed values, need at least 2"
            )));
        }
    }
    let missing: Vec<(usize, usize)> = (0..n)
        .flat_map(|j| (0..t).map(move |i| (i, j)))
        .filter(|&(i, j)| !observed[(i, j)])
        .collect();
    if missing.is_empty() {
        return Ok(EmOutcome {
            data: values.clone(),
            iterations: 0,
            converged: true,
        });
    }
    let mut x = values.clone();
    for j in 0..n {
        let obs: Vec<f64> = (0..t).filter(|&i| observed[(i, j)]).map(|i| values[(i, j)]).collect();
        let m = obs.iter().sum::<f64>() / obs.len() as f64;
        for i in 0..t {
            if !observed[(i, j)] {
                x[(i, j)] = m;
            }
        }
    }
    let k = cfg.factors.min(t.min(n)).max(1);
    for iter in 1..=cfg.max_iter {
        let (z, means, sds) = standardize(&x);
        let pc = principal_components(&z, k)?;
        let fitted = &pc.factors * pc.loadings.transpose();
        let mut change = 0.0;
        let mut level = 0.0;
        for &(i, j) in &missing {
            let new = fitted[(i, j)] * sds[j] + means[j];
            let old = x[(i, j)];
            change += (new - old) * (new - old);
            level += old * old;
            x[(i, j)] = new;
        }
        let rel = if level > 0.0 { (change / level).sqrt() } else { change.sqrt() };
        if rel < cfg.tol {
            return Ok(EmOutcome {
                data: x,
                iterations: iter,
                converged: true,
            });
        }
    }
    log::warn!("EM balancing did not converge in {} iterations", cfg.max_iter);
    Ok(EmOutcome {
        data: x,
        iterations: cfg.max_iter,
        converged: false,
    })
}
