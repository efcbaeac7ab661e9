//! Bayesian VARs: the natural-conjugate Normal-inverse-Wishart model with
//! Minnesota moments and dummy observations, and the asymmetric conjugate
//! model estimated equation by equation in structural form.

mod asymmetric;
mod conjugate;

pub use asymmetric::{
    equation_prior, fit_asymmetric, fit_equation, forecast_asymmetric, optimize_kappas,
    reduced_to_structural, structural_to_reduced, AsymmetricHyper, AsymmetricPosterior, EquationPosterior,
    EquationPrior, KappaSearch, ReducedForm, StructuralEquation,
};
pub use conjugate::{
    dummy_observations, fit_conjugate, forecast, log_marginal_likelihood, marginal_objective, minnesota_prior,
    optimize_hyperparameters, posterior, ConjugateFit, ConjugateHyper, ConjugateSearch, NiwPrior,
};

use nalgebra::{DMatrix, DVector};

use crate::benchmark::ar_resid_scale;
use crate::data::{TimeSeriesPanel, TransformCode};
use crate::error::{Error, Result};
use crate::numerics::RngStream;

/// Stacked VAR regression. Row `t` of `x` is `(1, y_{t-1}', ..., y_{t-p}')`.
#[derive(Debug, Clone)]
pub struct VarDesign {
    pub y: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub p: usize,
    pub names: Vec<String>,
    pub tcodes: Vec<TransformCode>,
    /// First `p` observations of the window (oldest first).
    pub presample: DMatrix<f64>,
    /// Last `p` observations of the window (oldest first).
    pub recent: DMatrix<f64>,
    /// Every observation of the window, for univariate scale estimates.
    pub levels: DMatrix<f64>,
}

impl VarDesign {
    pub fn n_vars(&self) -> usize {
        self.y.ncols()
    }

    pub fn n_rows(&self) -> usize {
        self.y.nrows()
    }

    pub fn n_regressors(&self) -> usize {
        self.x.ncols()
    }
}

pub fn build_design(panel: &TimeSeriesPanel, p: usize) -> Result<VarDesign> {
    let (t, n) = (panel.n_obs(), panel.n_vars());
    if p == 0 {
        return Err(Error::Config("lag order must be at least 1".into()));
    }
    if n == 0 || t <= p {
        return Err(Error::Dimension(format!(
            "{t} rows cannot support a VAR({p}) on {n} variables"
        )));
    }
    for j in 0..n {
        if let Some(r) = (0..t).find(|&r| !panel.is_observed(r, j)) {
            return Err(Error::Validation(format!(
                "'{}' missing at {} inside the estimation window",
                panel.names()[j],
                panel.dates()[r]
            )));
        }
    }
    let v = panel.values();
    let rows = t - p;
    let k = n * p + 1;
    let y = v.rows(p, rows).into_owned();
    let x = DMatrix::from_fn(rows, k, |r, c| {
        if c == 0 {
            1.0
        } else {
            let lag = (c - 1) / n + 1;
            let j = (c - 1) % n;
            v[(p + r - lag, j)]
        }
    });
    Ok(VarDesign {
        y,
        x,
        p,
        names: panel.names().to_vec(),
        tcodes: panel.tcodes().to_vec(),
        presample: v.rows(0, p).into_owned(),
        recent: v.rows(t - p, p).into_owned(),
        levels: v.clone(),
    })
}

/// Prior mean of the first own lag: 1 for series kept in levels (code 1),
/// 0 otherwise.
pub fn unit_root_prior(codes: &[TransformCode]) -> Vec<f64> {
    codes
        .iter()
        .map(|c| if *c == TransformCode::Level { 1.0 } else { 0.0 })
        .collect()
}

/// AR(p) residual standard errors per variable, over the whole window.
pub fn residual_scales(design: &VarDesign) -> Result<Vec<f64>> {
    (0..design.n_vars())
        .map(|j| {
            let col: Vec<f64> = design.levels.column(j).iter().cloned().collect();
            ar_resid_scale(&col, design.p)
        })
        .collect()
}

/// Mean of simulated predictive paths.
#[derive(Debug, Clone)]
pub struct SimulationSummary {
    /// `H x N`; row `h-1` holds the h-step point forecasts.
    pub mean: DMatrix<f64>,
    pub kept: usize,
    pub discarded: usize,
}

/// Iterate `y_{t+1} = Φ' x_t + F ε` for `h` steps per draw, where `draw`
/// supplies `(Φ, F)`. Paths that turn non-finite are discarded; more than
/// half discarded is a failure.
pub fn simulate_paths<D>(mut draw: D, recent: &DMatrix<f64>, h: usize, n_draws: usize, rng: &mut RngStream) -> Result<SimulationSummary>
where
    D: FnMut(&mut RngStream) -> Result<(DMatrix<f64>, DMatrix<f64>)>,
{
    if h == 0 || n_draws == 0 {
        return Err(Error::Config("need at least one horizon and one draw".into()));
    }
    let (p, n) = recent.shape();
    let k = n * p + 1;
    let mut sum = DMatrix::zeros(h, n);
    let mut kept = 0;
    let mut discarded = 0;
    let mut path = DMatrix::zeros(h, n);
    for _ in 0..n_draws {
        let (phi, factor) = draw(rng)?;
        if phi.shape() != (k, n) || factor.shape() != (n, n) {
            return Err(Error::Dimension("draw shapes do not match the lag history".into()));
        }
        // state: 1, then most recent observation first
        let mut state = DVector::zeros(k);
        state[0] = 1.0;
        for l in 0..p {
            for j in 0..n {
                state[1 + l * n + j] = recent[(p - 1 - l, j)];
            }
        }
        let mut finite = true;
        for step in 0..h {
            let eps = DVector::from_fn(n, |_, _| rng.standard_normal());
            let next = phi.tr_mul(&state) + &factor * eps;
            if next.iter().any(|v| !v.is_finite()) {
                finite = false;
                break;
            }
            path.row_mut(step).copy_from(&next.transpose());
            if k > n + 1 {
                for idx in (n + 1..k).rev() {
                    state[idx] = state[idx - n];
                }
            }
            state.rows_mut(1, n).copy_from(&next);
        }
        if finite {
            sum += &path;
            kept += 1;
        } else {
            discarded += 1;
        }
    }
    if discarded * 2 > n_draws {
        return Err(Error::Forecast(format!(
            "{discarded} of {n_draws} predictive paths were non-finite"
        )));
    }
    Ok(SimulationSummary {
        mean: sum / kept as f64,
        kept,
        discarded,
    })
}
