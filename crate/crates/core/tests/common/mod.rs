#![allow(dead_code)]

use macrofc::data::{TimeSeriesPanel, TransformCode, YearMonth};
use macrofc::numerics::RngStream;
use nalgebra::{DMatrix, DVector};

/// Simulate `t` rows of a VAR with coefficients `phi` (`K x N`, intercept
/// first) and shock factor `chol`, after a burn-in of 100 rows.
pub fn simulate_var(phi: &DMatrix<f64>, chol: &DMatrix<f64>, p: usize, t: usize, seed: u64) -> DMatrix<f64> {
    let n = phi.ncols();
    let mut rng = RngStream::new(seed, 0);
    let burn = 100;
    let total = burn + t + p;
    let mut y = DMatrix::zeros(total, n);
    for r in p..total {
        let mut x = DVector::zeros(n * p + 1);
        x[0] = 1.0;
        for l in 1..=p {
            for j in 0..n {
                x[1 + (l - 1) * n + j] = y[(r - l, j)];
            }
        }
        let e = DVector::from_fn(n, |_, _| rng.standard_normal());
        let next = phi.tr_mul(&x) + chol * e;
        y.row_mut(r).copy_from(&next.transpose());
    }
    y.rows(burn + p, t).into_owned()
}

pub fn panel_of(values: DMatrix<f64>) -> TimeSeriesPanel {
    let n = values.ncols();
    TimeSeriesPanel::from_matrix(
        YearMonth::new(1990, 1).unwrap(),
        (0..n).map(|j| format!("v{j}")).collect(),
        values,
        vec![TransformCode::Diff; n],
    )
    .unwrap()
}

/// Least squares through the normal equations solved by SVD, independent of
/// the library's QR path.
pub fn svd_ols(x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    x.clone().svd(true, true).solve(y, 1e-14).unwrap()
}

/// Log density of the multivariate Student-t marginal of a conjugate
/// regression: `y ~ t_{2a}(Z m, (b/a)(I + Z V Zᵀ))`.
pub fn nig_marginal_logpdf(
    y: &DVector<f64>,
    z: &DMatrix<f64>,
    m: &DVector<f64>,
    v: &DMatrix<f64>,
    a: f64,
    b: f64,
) -> f64 {
    use statrs::function::gamma::ln_gamma;
    let t = y.len() as f64;
    let nu = 2.0 * a;
    let scale = (DMatrix::identity(y.len(), y.len()) + z * v * z.transpose()) * (b / a);
    let inv = scale.clone().try_inverse().unwrap();
    let r = y - z * m;
    let q = (r.transpose() * inv * &r)[(0, 0)];
    let logdet = scale.determinant().ln();
    ln_gamma((nu + t) / 2.0) - ln_gamma(nu / 2.0) - (t / 2.0) * (nu * std::f64::consts::PI).ln() - 0.5 * logdet
        - ((nu + t) / 2.0) * (1.0 + q / nu).ln()
}

/// Importance-sampling estimate of `ln p(y)` for a univariate conjugate
/// regression, sampling `(φ, σ²)` from the prior
/// `σ² ~ IG(v0/2, s0/2)`, `φ | σ² ~ N(φ0, σ² Ω0)`.
/// Returns `(estimate, standard error of the estimate on the log scale)`.
pub fn mc_log_marginal(
    y: &[f64],
    x: &DMatrix<f64>,
    phi0: &[f64],
    omega0_diag: &[f64],
    s0: f64,
    v0: f64,
    draws: usize,
    seed: u64,
) -> (f64, f64) {
    use rand_distr::{Distribution, Gamma};
    let mut rng = RngStream::new(seed, 0);
    let gamma = Gamma::new(v0 / 2.0, 2.0 / s0).unwrap();
    let k = phi0.len();
    let t = y.len() as f64;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..draws {
        let sigma2 = 1.0 / gamma.sample(&mut rng);
        let phi: Vec<f64> = (0..k)
            .map(|c| phi0[c] + (sigma2 * omega0_diag[c]).sqrt() * rng.standard_normal())
            .collect();
        let rss: f64 = y
            .iter()
            .enumerate()
            .map(|(r, v)| {
                let fit: f64 = (0..k).map(|c| x[(r, c)] * phi[c]).sum();
                (v - fit).powi(2)
            })
            .sum();
        let lik = (-0.5 * t * (2.0 * std::f64::consts::PI * sigma2).ln() - rss / (2.0 * sigma2)).exp();
        sum += lik;
        sum_sq += lik * lik;
    }
    let n = draws as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean) * n / (n - 1.0);
    (mean.ln(), (var / n).sqrt() / mean)
}

/// Stationary VAR(1) panel in transformed units, monthly from `start`.
pub fn transformed_panel(n: usize, start: YearMonth, t: usize, seed: u64) -> TimeSeriesPanel {
    let mut rng = RngStream::new(seed, 77);
    let mut rows: Vec<Vec<f64>> = vec![vec![0.0; n]];
    for _ in 0..50 + t {
        let prev = rows.last().unwrap().clone();
        rows.push((0..n).map(|i| 0.2 + 0.5 * prev[i] + 0.1 * prev[(i + 1) % n] + rng.standard_normal()).collect());
    }
    let y = DMatrix::from_fn(t, n, |r, c| rows[rows.len() - t + r][c]);
    let mut p = TimeSeriesPanel::from_matrix(
        start,
        (0..n).map(|j| format!("v{j}")).collect(),
        y,
        vec![TransformCode::Diff; n],
    )
    .unwrap();
    p.set_transformed(true);
    p
}

pub fn stack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows() + b.nrows(), a.ncols(), |r, c| if r < a.nrows() { a[(r, c)] } else { b[(r - a.nrows(), c)] })
}

/// Prior as `K` extra rows `(Ω0^{-1/2} Φ0, Ω0^{-1/2})` on top of the data,
/// solved by SVD least squares.
pub fn augmented_oracle(y: &DMatrix<f64>, x: &DMatrix<f64>, prior: &macrofc::bvar::NiwPrior) -> DMatrix<f64> {
    let k = x.ncols();
    let w = prior.omega0_diag.map(|v| 1.0 / v.sqrt());
    let yp = DMatrix::from_fn(k, y.ncols(), |r, c| w[r] * prior.phi0[(r, c)]);
    let xp = DMatrix::from_diagonal(&w);
    svd_ols(&stack(&xp, x), &stack(&yp, y))
}

/// Regressors of structural equation `i`: `(-y_0 .. -y_{i-1}, x)`.
pub fn structural_regressors(design: &macrofc::bvar::VarDesign, i: usize) -> DMatrix<f64> {
    let (t, k) = design.x.shape();
    DMatrix::from_fn(t, i + k, |r, c| if c < i { -design.y[(r, c)] } else { design.x[(r, c - i)] })
}

/// Normal-inverse-gamma regression posterior by explicit inversion:
/// returns `(mean, covariance factor V̄, b̄)`.
pub fn textbook_nig(
    y: &DVector<f64>,
    z: &DMatrix<f64>,
    m: &DVector<f64>,
    var: &DVector<f64>,
    b0: f64,
) -> (DVector<f64>, DMatrix<f64>, f64) {
    let v_inv = DMatrix::from_diagonal(&var.map(|x| 1.0 / x));
    let v_bar = (&v_inv + z.transpose() * z).try_inverse().unwrap();
    let mean = &v_bar * (&v_inv * m + z.transpose() * y);
    let b = b0
        + 0.5 * (y.dot(y) + (m.transpose() * &v_inv * m)[(0, 0)]
            - (mean.transpose() * v_bar.clone().try_inverse().unwrap() * &mean)[(0, 0)]);
    (mean, v_bar, b)
}

/// Relative Frobenius error between the sample covariance of `vec(Φ)`
/// draws and `E[Σ] ⊗ Ω̄`.
pub fn kronecker_rel_error(post: &macrofc::numerics::NiwPosterior, draws: usize, seed: u64) -> f64 {
    let sampler = macrofc::numerics::NiwSampler::new(post).unwrap();
    let mut rng = RngStream::new(seed, 0);
    let dim = post.phi_bar.len();
    let mut mean = DVector::zeros(dim);
    let mut outer = DMatrix::zeros(dim, dim);
    for _ in 0..draws {
        let d = sampler.draw(&mut rng);
        let v = DVector::from_column_slice(d.phi.as_slice());
        mean += &v;
        outer += &v * v.transpose();
    }
    mean /= draws as f64;
    let cov = outer / draws as f64 - &mean * mean.transpose();
    let n = post.s_bar.nrows() as f64;
    let e_sigma = &post.s_bar / (post.v_bar - n - 1.0);
    let want = e_sigma.kronecker(&post.omega_bar);
    (&cov - &want).norm() / want.norm()
}
