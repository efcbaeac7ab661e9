//! Deterministic numerical kernels shared by the forecasting models.

mod linalg;
mod pca;
mod sampling;
mod stats;

pub use linalg::{ols, CholeskyFactor, OlsFit, MAX_RELATIVE_JITTER};
pub use pca::{em_balance, em_balance_matrix, principal_components, standardize, EmConfig, EmOutcome, Principal};
pub use sampling::{sample_matric_normal_iw, NiwDraw, NiwPosterior, NiwSampler, RngStream};
pub use stats::{bic, mean, partial_autocorr_lag1, quantile_sorted, sample_std};

/// `ln Γ_N(a)`, the log multivariate gamma function.
pub fn ln_multigamma(n: usize, a: f64) -> f64 {
    let nf = n as f64;
    nf * (nf - 1.0) / 4.0 * std::f64::consts::PI.ln()
        + (0..n)
            .map(|j| statrs::function::gamma::ln_gamma(a - j as f64 / 2.0))
            .sum::<f64>()
}
