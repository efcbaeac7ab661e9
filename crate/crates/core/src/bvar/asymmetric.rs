use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::{simulate_paths, SimulationSummary, VarDesign};
use crate::error::{Error, Result};
use crate::numerics::{CholeskyFactor, RngStream};
use crate::optim::{maximize_positive, SearchConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymmetricHyper {
    pub kappa1: f64,
    pub kappa2: f64,
    pub kappa3: f64,
    pub v0: f64,
    /// Inverse-gamma scales, `(v0 - N - 1) σ̂_j²`.
    pub s2: Vec<f64>,
    /// Prior mean of the first own lag per variable.
    pub phi_star: Vec<f64>,
}

impl AsymmetricHyper {
    /// Defaults: `v0 = N + 2`, `κ3 = 100`.
    pub fn new(sigma_hat: &[f64], phi_star: Vec<f64>) -> Self {
        let n = sigma_hat.len() as f64;
        let v0 = n + 2.0;
        AsymmetricHyper {
            kappa1: 0.04,
            kappa2: 0.0016,
            kappa3: 100.0,
            v0,
            s2: sigma_hat.iter().map(|s| (v0 - n - 1.0) * s * s).collect(),
            phi_star,
        }
    }

    pub fn n_vars(&self) -> usize {
        self.s2.len()
    }
}

/// Conjugate prior of one structural equation over
/// `θ = (α_1..α_{i}, intercept, lag coefficients)`:
/// `θ | σ² ~ N(mean, σ² diag(var))`, `σ² ~ IG(shape, scale)`.
#[derive(Debug, Clone)]
pub struct EquationPrior {
    pub index: usize,
    pub mean: DVector<f64>,
    pub var: DVector<f64>,
    pub shape: f64,
    pub scale: f64,
}

/// Prior for equation `i` (zero-based; equation `i` has `i` contemporaneous
/// coefficients).
pub fn equation_prior(i: usize, hyper: &AsymmetricHyper, p: usize) -> Result<EquationPrior> {
    let n = hyper.n_vars();
    if i >= n {
        return Err(Error::Dimension(format!("equation {i} of {n}")));
    }
    if hyper.phi_star.len() != n {
        return Err(Error::Dimension("prior means and scales differ in length".into()));
    }
    if let Some(j) = hyper.s2.iter().position(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(Error::Scale(format!("scale of variable {j} is {}", hyper.s2[j])));
    }
    for (name, v) in [("kappa1", hyper.kappa1), ("kappa2", hyper.kappa2), ("kappa3", hyper.kappa3)] {
        if !(v > 0.0) {
            return Err(Error::Config(format!("{name} must be positive, got {v}")));
        }
    }
    let k = n * p + 1;
    let dim = i + k;
    let mut mean = DVector::zeros(dim);
    let mut var = DVector::zeros(dim);
    for j in 0..i {
        var[j] = 1.0 / hyper.s2[j];
    }
    var[i] = hyper.kappa3;
    for c in 1..k {
        let lag = ((c - 1) / n + 1) as f64;
        let j = (c - 1) % n;
        let kappa = if j == i { hyper.kappa1 } else { hyper.kappa2 };
        var[i + c] = kappa / (lag * lag * hyper.s2[j]);
    }
    mean[i + 1 + i] = hyper.phi_star[i];
    let shape = (hyper.v0 + (i + 1) as f64 - n as f64) / 2.0;
    if !(shape > 0.0) {
        return Err(Error::Config(format!("v0 = {} too small for {n} variables", hyper.v0)));
    }
    Ok(EquationPrior {
        index: i,
        mean,
        var,
        shape,
        scale: hyper.s2[i] / 2.0,
    })
}

#[derive(Debug, Clone)]
pub struct EquationPosterior {
    pub index: usize,
    pub mean: DVector<f64>,
    /// Lower Cholesky factor of the posterior precision `V⁻¹ + Z'Z`.
    pub precision_factor: DMatrix<f64>,
    pub shape: f64,
    pub scale: f64,
    pub log_ml: f64,
}

impl EquationPosterior {
    /// `V̄ = (V⁻¹ + Z'Z)⁻¹`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let l_inv = self
            .precision_factor
            .solve_lower_triangular(&DMatrix::identity(self.mean.len(), self.mean.len()))
            .expect("positive diagonal");
        l_inv.tr_mul(&l_inv)
    }
}

/// Regressors of equation `i`: `(-y_0, ..., -y_{i-1}, x)`.
pub fn equation_regressors(design: &VarDesign, i: usize) -> DMatrix<f64> {
    let (t, k) = design.x.shape();
    DMatrix::from_fn(t, i + k, |r, c| if c < i { -design.y[(r, c)] } else { design.x[(r, c - i)] })
}

struct EqMoments {
    ztz: DMatrix<f64>,
    zty: DVector<f64>,
    yty: f64,
    rows: usize,
}

fn eq_moments(y: &DVector<f64>, z: &DMatrix<f64>) -> EqMoments {
    EqMoments {
        ztz: z.tr_mul(z),
        zty: z.tr_mul(y),
        yty: y.dot(y),
        rows: y.len(),
    }
}

fn fit_moments(m: &EqMoments, prior: &EquationPrior) -> Result<EquationPosterior> {
    let dim = prior.mean.len();
    if m.ztz.nrows() != dim {
        return Err(Error::Dimension(format!("{} regressors for a prior of dimension {dim}", m.ztz.nrows())));
    }
    let prec = prior.var.map(|v| 1.0 / v);
    let mut precision = m.ztz.clone();
    for c in 0..dim {
        precision[(c, c)] += prec[c];
    }
    let chol = CholeskyFactor::new(&precision)?;
    let rhs = DMatrix::from_column_slice(dim, 1, (prec.component_mul(&prior.mean) + &m.zty).as_slice());
    let mean: DVector<f64> = chol.solve(&rhs).column(0).into_owned();
    let ete = m.yty - 2.0 * mean.dot(&m.zty) + mean.dot(&(&m.ztz * &mean));
    let dev = &mean - &prior.mean;
    let quad = dev.component_mul(&dev).dot(&prec);
    let shape = prior.shape + m.rows as f64 / 2.0;
    let scale = prior.scale + 0.5 * (ete.max(0.0) + quad);
    let ln_v_bar = -chol.log_det();
    let ln_v: f64 = prior.var.iter().map(|v| v.ln()).sum();
    let log_ml = -(m.rows as f64 / 2.0) * (2.0 * std::f64::consts::PI).ln() + 0.5 * (ln_v_bar - ln_v)
        + prior.shape * prior.scale.ln()
        - shape * scale.ln()
        + ln_gamma(shape)
        - ln_gamma(prior.shape);
    Ok(EquationPosterior {
        index: prior.index,
        mean,
        precision_factor: chol.lower,
        shape,
        scale,
        log_ml,
    })
}

/// Normal-inverse-gamma update of one equation on `(y, z)`.
pub fn fit_equation(y: &DVector<f64>, z: &DMatrix<f64>, prior: &EquationPrior) -> Result<EquationPosterior> {
    if z.nrows() != y.len() {
        return Err(Error::Dimension(format!("y has {} rows, Z has {}", y.len(), z.nrows())));
    }
    fit_moments(&eq_moments(y, z), prior)
}

#[derive(Debug, Clone)]
pub struct AsymmetricPosterior {
    pub hyper: AsymmetricHyper,
    pub equations: Vec<EquationPosterior>,
    pub log_ml: f64,
    pub p: usize,
}

fn design_moments(design: &VarDesign) -> Vec<EqMoments> {
    (0..design.n_vars())
        .into_par_iter()
        .map(|i| {
            let y: DVector<f64> = design.y.column(i).into_owned();
            eq_moments(&y, &equation_regressors(design, i))
        })
        .collect()
}

fn fit_with(moments: &[EqMoments], hyper: &AsymmetricHyper, p: usize) -> Result<AsymmetricPosterior> {
    let equations = moments
        .par_iter()
        .enumerate()
        .map(|(i, m)| fit_moments(m, &equation_prior(i, hyper, p)?))
        .collect::<Result<Vec<_>>>()?;
    let log_ml = equations.iter().map(|e| e.log_ml).sum();
    Ok(AsymmetricPosterior {
        hyper: hyper.clone(),
        equations,
        log_ml,
        p,
    })
}

pub fn fit_asymmetric(design: &VarDesign, hyper: &AsymmetricHyper) -> Result<AsymmetricPosterior> {
    if hyper.n_vars() != design.n_vars() {
        return Err(Error::Dimension("hyperparameters sized for a different system".into()));
    }
    fit_with(&design_moments(design), hyper, design.p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KappaSearch {
    pub kappa1: (f64, f64),
    pub kappa2: (f64, f64),
    pub search: SearchConfig,
}

impl Default for KappaSearch {
    fn default() -> Self {
        KappaSearch {
            kappa1: (1e-4, 10.0),
            kappa2: (1e-4, 10.0),
            search: SearchConfig::default(),
        }
    }
}

pub fn optimize_kappas(design: &VarDesign, base: &AsymmetricHyper, cfg: &KappaSearch) -> Result<AsymmetricHyper> {
    if base.n_vars() != design.n_vars() {
        return Err(Error::Dimension("hyperparameters sized for a different system".into()));
    }
    let moments = design_moments(design);
    let at = |theta: &[f64]| AsymmetricHyper {
        kappa1: theta[0],
        kappa2: theta[1],
        ..base.clone()
    };
    let res = maximize_positive(
        |theta| fit_with(&moments, &at(theta), design.p).map_or(f64::NEG_INFINITY, |f| f.log_ml),
        &[cfg.kappa1, cfg.kappa2],
        &cfg.search,
    )?;
    Ok(at(&res.argmax))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructuralEquation {
    pub index: usize,
    pub alpha: Vec<f64>,
    /// Intercept followed by lag coefficients.
    pub beta: DVector<f64>,
    pub sigma2: f64,
}

#[derive(Debug, Clone)]
pub struct ReducedForm {
    /// `K x N`, intercept row first.
    pub phi: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    /// `A⁻¹ D^{1/2}`, a square root of `sigma`.
    pub factor: DMatrix<f64>,
}

pub fn structural_to_reduced(equations: &[StructuralEquation]) -> Result<ReducedForm> {
    let n = equations.len();
    if n == 0 {
        return Err(Error::Dimension("no equations".into()));
    }
    let k = equations[0].beta.len();
    let mut a = DMatrix::identity(n, n);
    let mut b = DMatrix::zeros(n, k);
    for (i, eq) in equations.iter().enumerate() {
        if eq.alpha.len() != i || eq.beta.len() != k {
            return Err(Error::Dimension(format!("equation {i} has malformed coefficients")));
        }
        if !(eq.sigma2 > 0.0) {
            return Err(Error::Domain(format!("equation {i} variance {}", eq.sigma2)));
        }
        for (j, v) in eq.alpha.iter().enumerate() {
            a[(i, j)] = *v;
        }
        b.row_mut(i).copy_from(&eq.beta.transpose());
    }
    let a_inv = a.solve_lower_triangular(&DMatrix::identity(n, n)).expect("unit diagonal");
    let phi = (&a_inv * b).transpose();
    let mut factor = a_inv;
    for (j, eq) in equations.iter().enumerate() {
        let s = eq.sigma2.sqrt();
        factor.column_mut(j).scale_mut(s);
    }
    let sigma = &factor * factor.transpose();
    Ok(ReducedForm { phi, sigma, factor })
}

/// Inverse of [`structural_to_reduced`] via the Cholesky factor of `Σ`.
pub fn reduced_to_structural(phi: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<Vec<StructuralEquation>> {
    let n = sigma.nrows();
    if phi.ncols() != n {
        return Err(Error::Dimension("Φ and Σ disagree".into()));
    }
    let l = sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Factorization("Σ not positive definite".into()))?
        .unpack();
    let mut a_inv = l.clone();
    for j in 0..n {
        let d = l[(j, j)];
        a_inv.column_mut(j).scale_mut(1.0 / d);
    }
    let a = a_inv.solve_lower_triangular(&DMatrix::identity(n, n)).expect("unit diagonal");
    let b = &a * phi.transpose();
    Ok((0..n)
        .map(|i| StructuralEquation {
            index: i,
            alpha: (0..i).map(|j| a[(i, j)]).collect(),
            beta: b.row(i).transpose(),
            sigma2: l[(i, i)] * l[(i, i)],
        })
        .collect())
}

impl AsymmetricPosterior {
    /// One joint draw of every structural equation, in equation order.
    pub fn draw(&self, rng: &mut RngStream) -> Result<Vec<StructuralEquation>> {
        self.equations
            .iter()
            .map(|eq| {
                let g = Gamma::new(eq.shape, 1.0 / eq.scale)
                    .map_err(|e| Error::Domain(format!("inverse gamma: {e}")))?;
                let sigma2 = 1.0 / g.sample(rng);
                let dim = eq.mean.len();
                let z = DVector::from_fn(dim, |_, _| rng.standard_normal());
                let shift = eq
                    .precision_factor
                    .transpose()
                    .solve_upper_triangular(&z)
                    .expect("positive diagonal");
                let theta = &eq.mean + shift * sigma2.sqrt();
                let i = eq.index;
                Ok(StructuralEquation {
                    index: i,
                    alpha: theta.rows(0, i).iter().cloned().collect(),
                    beta: theta.rows(i, dim - i).into_owned(),
                    sigma2,
                })
            })
            .collect()
    }

    /// Reduced form implied by the posterior means (`σ²` at its mean).
    pub fn mean_reduced_form(&self) -> Result<ReducedForm> {
        let eqs: Vec<StructuralEquation> = self
            .equations
            .iter()
            .map(|eq| {
                let i = eq.index;
                StructuralEquation {
                    index: i,
                    alpha: eq.mean.rows(0, i).iter().cloned().collect(),
                    beta: eq.mean.rows(i, eq.mean.len() - i).into_owned(),
                    sigma2: eq.scale / (eq.shape - 1.0).max(f64::MIN_POSITIVE),
                }
            })
            .collect();
        structural_to_reduced(&eqs)
    }
}

pub fn forecast_asymmetric(
    post: &AsymmetricPosterior,
    recent: &DMatrix<f64>,
    h: usize,
    rng: &mut RngStream,
    n_draws: usize,
) -> Result<SimulationSummary> {
    simulate_paths(
        |r| {
            let red = structural_to_reduced(&post.draw(r)?)?;
            Ok((red.phi, red.factor))
        },
        recent,
        h,
        n_draws,
        rng,
    )
}
