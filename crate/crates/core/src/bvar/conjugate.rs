use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{simulate_paths, SimulationSummary, VarDesign};
use crate::error::{Error, Result};
use crate::numerics::{ln_multigamma, CholeskyFactor, NiwPosterior, NiwSampler, RngStream};
use crate::optim::{maximize_positive, SearchConfig};

/// Minnesota and dummy-observation hyperparameters. An infinite `mu1` or
/// `mu2` drops the corresponding dummy block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConjugateHyper {
    pub lambda0: f64,
    pub lambda1: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub phi_star: Vec<f64>,
}

impl ConjugateHyper {
    pub fn new(phi_star: Vec<f64>) -> Self {
        ConjugateHyper {
            lambda0: 100.0,
            lambda1: 0.2,
            mu1: 1.0,
            mu2: 1.0,
            phi_star,
        }
    }

    fn check(&self) -> Result<()> {
        for (name, v) in [
            ("lambda0", self.lambda0),
            ("lambda1", self.lambda1),
            ("mu1", self.mu1),
            ("mu2", self.mu2),
        ] {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct NiwPrior {
    pub phi0: DMatrix<f64>,
    /// Diagonal of the `K x K` row covariance.
    pub omega0_diag: DVector<f64>,
    pub s0: DMatrix<f64>,
    pub v0: f64,
    pub sigma_hat: Vec<f64>,
}

impl NiwPrior {
    pub fn omega0(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.omega0_diag)
    }
}

pub fn minnesota_prior(n: usize, p: usize, hyper: &ConjugateHyper, sigma_hat: &[f64]) -> Result<NiwPrior> {
    hyper.check()?;
    if sigma_hat.len() != n || hyper.phi_star.len() != n {
        return Err(Error::Dimension(format!(
            "{} scales and {} prior means for {n} variables",
            sigma_hat.len(),
            hyper.phi_star.len()
        )));
    }
    if let Some(j) = sigma_hat.iter().position(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(Error::Scale(format!("residual scale of variable {j} is {}", sigma_hat[j])));
    }
    let k = n * p + 1;
    let mut phi0 = DMatrix::zeros(k, n);
    for i in 0..n {
        phi0[(1 + i, i)] = hyper.phi_star[i];
    }
    let omega0_diag = DVector::from_fn(k, |c, _| {
        if c == 0 {
            hyper.lambda0 * hyper.lambda0
        } else {
            let lag = ((c - 1) / n + 1) as f64;
            let j = (c - 1) % n;
            hyper.lambda1 * hyper.lambda1 / (lag * lag * sigma_hat[j] * sigma_hat[j])
        }
    });
    let v0 = n as f64 + 2.0;
    let s0 = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            (v0 - n as f64 - 1.0) * sigma_hat[i] * sigma_hat[i]
        } else {
            0.0
        }
    });
    Ok(NiwPrior {
        phi0,
        omega0_diag,
        s0,
        v0,
        sigma_hat: sigma_hat.to_vec(),
    })
}

/// Sum-of-coefficients rows followed by the single-unit-root row.
/// `presample` holds the first `p` observations; its column means anchor
/// the dummies.
pub fn dummy_observations(presample: &DMatrix<f64>, hyper: &ConjugateHyper) -> (DMatrix<f64>, DMatrix<f64>) {
    let (p, n) = presample.shape();
    let k = n * p + 1;
    let ybar: Vec<f64> = (0..n).map(|j| presample.column(j).mean()).collect();
    let mut yrows: Vec<Vec<f64>> = Vec::new();
    let mut xrows: Vec<Vec<f64>> = Vec::new();
    if hyper.mu1.is_finite() {
        for i in 0..n {
            let v = ybar[i] / hyper.mu1;
            let mut yr = vec![0.0; n];
            yr[i] = v;
            let mut xr = vec![0.0; k];
            for l in 0..p {
                xr[1 + l * n + i] = v;
            }
            yrows.push(yr);
            xrows.push(xr);
        }
    }
    if hyper.mu2.is_finite() {
        let yr: Vec<f64> = ybar.iter().map(|v| v / hyper.mu2).collect();
        let mut xr = vec![0.0; k];
        xr[0] = 1.0 / hyper.mu2;
        for l in 0..p {
            for j in 0..n {
                xr[1 + l * n + j] = yr[j];
            }
        }
        yrows.push(yr);
        xrows.push(xr);
    }
    let yd = DMatrix::from_fn(yrows.len(), n, |r, c| yrows[r][c]);
    let xd = DMatrix::from_fn(xrows.len(), k, |r, c| xrows[r][c]);
    (yd, xd)
}

/// Cross products of one block of rows.
#[derive(Debug, Clone)]
struct Moments {
    xtx: DMatrix<f64>,
    xty: DMatrix<f64>,
    yty: DMatrix<f64>,
    rows: usize,
}

impl Moments {
    fn of(y: &DMatrix<f64>, x: &DMatrix<f64>) -> Self {
        Moments {
            xtx: x.tr_mul(x),
            xty: x.tr_mul(y),
            yty: y.tr_mul(y),
            rows: y.nrows(),
        }
    }

    fn plus(&self, other: &Moments) -> Moments {
        Moments {
            xtx: &self.xtx + &other.xtx,
            xty: &self.xty + &other.xty,
            yty: &self.yty + &other.yty,
            rows: self.rows + other.rows,
        }
    }
}

fn posterior_from_moments(m: &Moments, prior: &NiwPrior) -> Result<NiwPosterior> {
    let k = prior.phi0.nrows();
    if m.xtx.shape() != (k, k) || m.xty.ncols() != prior.phi0.ncols() {
        return Err(Error::Dimension("data and prior dimensions disagree".into()));
    }
    let prec_diag = prior.omega0_diag.map(|w| 1.0 / w);
    let mut precision = m.xtx.clone();
    for i in 0..k {
        precision[(i, i)] += prec_diag[i];
    }
    let chol = CholeskyFactor::new(&precision)?;
    let rhs = DMatrix::from_fn(k, prior.phi0.ncols(), |r, c| prec_diag[r] * prior.phi0[(r, c)]) + &m.xty;
    let phi_bar = chol.solve(&rhs);
    let omega_bar = chol.inverse();
    // residual cross product plus prior-deviation term; avoids differencing
    // two large quadratic forms in the prior.
    let ete = &m.yty - phi_bar.tr_mul(&m.xty) - m.xty.tr_mul(&phi_bar) + phi_bar.tr_mul(&(&m.xtx * &phi_bar));
    let dev = &phi_bar - &prior.phi0;
    let weighted = DMatrix::from_fn(k, dev.ncols(), |r, c| prec_diag[r] * dev[(r, c)]);
    let s_bar = &prior.s0 + ete + dev.tr_mul(&weighted);
    let s_bar = (&s_bar + s_bar.transpose()) * 0.5;
    Ok(NiwPosterior {
        phi_bar,
        omega_bar,
        s_bar,
        v_bar: prior.v0 + m.rows as f64,
    })
}

/// Conjugate update on rows `(y, x)`; dummy rows, if any, must already be
/// stacked in.
pub fn posterior(y: &DMatrix<f64>, x: &DMatrix<f64>, prior: &NiwPrior) -> Result<NiwPosterior> {
    if y.nrows() != x.nrows() {
        return Err(Error::Dimension(format!("Y has {} rows, X has {}", y.nrows(), x.nrows())));
    }
    posterior_from_moments(&Moments::of(y, x), prior)
}

/// `ln p(Y)` for `t` rows of an `n`-variable system.
pub fn log_marginal_likelihood(prior: &NiwPrior, post: &NiwPosterior, t: usize, n: usize) -> Result<f64> {
    let tf = t as f64;
    let nf = n as f64;
    let ln_omega_bar = CholeskyFactor::new(&post.omega_bar)?.log_det();
    let ln_omega0: f64 = prior.omega0_diag.iter().map(|w| w.ln()).sum();
    let ln_s_bar = CholeskyFactor::new(&post.s_bar)?.log_det();
    let ln_s0 = CholeskyFactor::new(&prior.s0)?.log_det();
    let v0 = prior.v0;
    Ok(-(tf * nf / 2.0) * std::f64::consts::PI.ln()
        + (nf / 2.0) * (ln_omega_bar - ln_omega0)
        - ((v0 + tf) / 2.0) * ln_s_bar
        + (v0 / 2.0) * ln_s0
        + ln_multigamma(n, (v0 + tf) / 2.0)
        - ln_multigamma(n, v0 / 2.0))
}

fn ln_ml_moments(m: &Moments, prior: &NiwPrior) -> Result<f64> {
    if m.rows == 0 {
        return Ok(0.0);
    }
    let post = posterior_from_moments(m, prior)?;
    log_marginal_likelihood(prior, &post, m.rows, prior.phi0.ncols())
}

/// `ln p(Y | θ)` with the dummy rows treated as part of the prior:
/// `ln p(Y, Y_d) - ln p(Y_d)`.
pub fn marginal_objective(design: &VarDesign, sigma_hat: &[f64], hyper: &ConjugateHyper) -> Result<f64> {
    let data = Moments::of(&design.y, &design.x);
    objective_with(&data, design, sigma_hat, hyper)
}

fn objective_with(data: &Moments, design: &VarDesign, sigma_hat: &[f64], hyper: &ConjugateHyper) -> Result<f64> {
    let prior = minnesota_prior(design.n_vars(), design.p, hyper, sigma_hat)?;
    let (yd, xd) = dummy_observations(&design.presample, hyper);
    let dummies = Moments::of(&yd, &xd);
    Ok(ln_ml_moments(&data.plus(&dummies), &prior)? - ln_ml_moments(&dummies, &prior)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConjugateSearch {
    pub lambda1: (f64, f64),
    pub mu1: (f64, f64),
    pub mu2: (f64, f64),
    pub search: SearchConfig,
}

impl Default for ConjugateSearch {
    fn default() -> Self {
        ConjugateSearch {
            lambda1: (0.01, 5.0),
            mu1: (0.01, 50.0),
            mu2: (0.01, 50.0),
            search: SearchConfig::default(),
        }
    }
}

/// Maximize the marginal likelihood over `(λ1, μ1, μ2)`, holding `λ0` and
/// `phi_star` from `base`.
pub fn optimize_hyperparameters(
    design: &VarDesign,
    sigma_hat: &[f64],
    base: &ConjugateHyper,
    cfg: &ConjugateSearch,
) -> Result<ConjugateHyper> {
    let data = Moments::of(&design.y, &design.x);
    let at = |theta: &[f64]| ConjugateHyper {
        lambda1: theta[0],
        mu1: theta[1],
        mu2: theta[2],
        ..base.clone()
    };
    let res = maximize_positive(
        |theta| objective_with(&data, design, sigma_hat, &at(theta)).unwrap_or(f64::NEG_INFINITY),
        &[cfg.lambda1, cfg.mu1, cfg.mu2],
        &cfg.search,
    )?;
    Ok(at(&res.argmax))
}

#[derive(Debug, Clone)]
pub struct ConjugateFit {
    pub hyper: ConjugateHyper,
    pub prior: NiwPrior,
    pub posterior: NiwPosterior,
    pub log_ml: f64,
}

pub fn fit_conjugate(design: &VarDesign, hyper: &ConjugateHyper, sigma_hat: &[f64]) -> Result<ConjugateFit> {
    let prior = minnesota_prior(design.n_vars(), design.p, hyper, sigma_hat)?;
    let (yd, xd) = dummy_observations(&design.presample, hyper);
    let data = Moments::of(&design.y, &design.x);
    let dummies = Moments::of(&yd, &xd);
    let all = data.plus(&dummies);
    let post = posterior_from_moments(&all, &prior)?;
    let log_ml = log_marginal_likelihood(&prior, &post, all.rows, design.n_vars())? - ln_ml_moments(&dummies, &prior)?;
    Ok(ConjugateFit {
        hyper: hyper.clone(),
        prior,
        posterior: post,
        log_ml,
    })
}

/// Predictive simulation from the posterior; `recent` holds the last `p`
/// observations, oldest first.
pub fn forecast(
    post: &NiwPosterior,
    recent: &DMatrix<f64>,
    h: usize,
    rng: &mut RngStream,
    n_draws: usize,
) -> Result<SimulationSummary> {
    let sampler = NiwSampler::new(post)?;
    simulate_paths(
        |r| {
            let d = sampler.draw(r);
            Ok((d.phi, d.sigma_factor))
        },
        recent,
        h,
        n_draws,
        rng,
    )
}
