use nalgebra::DMatrix;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use super::linalg::CholeskyFactor;
use crate::error::{Error, Result};

/// Seeded random stream. Identical `(seed, stream)` pairs yield identical
/// sequences; streams never share state.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha20Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RngStream { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn normal_matrix(&mut self, rows: usize, cols: usize) -> DMatrix<f64> {
        // column-major fill order
        let data: Vec<f64> = (0..rows * cols).map(|_| self.standard_normal()).collect();
        DMatrix::from_vec(rows, cols, data)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Normal-inverse-Wishart distribution over `(Φ, Σ)`:
/// `Σ ~ IW(S̄, v̄)`, `vec(Φ) | Σ ~ N(vec(Φ̄), Σ ⊗ Ω̄)`.
#[derive(Debug, Clone)]
pub struct NiwPosterior {
    /// `K x N` mean.
    pub phi_bar: DMatrix<f64>,
    /// `K x K` row covariance.
    pub omega_bar: DMatrix<f64>,
    /// `N x N` inverse-Wishart scale.
    pub s_bar: DMatrix<f64>,
    pub v_bar: f64,
}

/// One joint draw. `sigma_factor` satisfies `F Fᵀ = Σ`.
#[derive(Debug, Clone)]
pub struct NiwDraw {
    pub phi: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub sigma_factor: DMatrix<f64>,
}

/// Draws from a [`NiwPosterior`] with factorizations computed once.
#[derive(Debug, Clone)]
pub struct NiwSampler {
    phi_bar: DMatrix<f64>,
    omega_lower: DMatrix<f64>,
    scale_lower: DMatrix<f64>,
    chi: Vec<ChiSquared<f64>>,
}

impl NiwSampler {
    pub fn new(post: &NiwPosterior) -> Result<Self> {
        let (k, n) = post.phi_bar.shape();
        if post.omega_bar.shape() != (k, k) || post.s_bar.shape() != (n, n) {
            return Err(Error::Dimension("posterior moment shapes disagree".into()));
        }
        if !(post.v_bar > (n as f64) - 1.0) {
            return Err(Error::Domain(format!(
                "degrees of freedom {} too small for dimension {n}",
                post.v_bar
            )));
        }
        let omega_lower = CholeskyFactor::new(&post.omega_bar)?.lower;
        let scale_lower = CholeskyFactor::new(&post.s_bar)?.lower;
        let chi = (0..n)
            .map(|i| {
                ChiSquared::new(post.v_bar - i as f64)
                    .map_err(|e| Error::Domain(format!("chi-squared: {e}")))
            })
            .collect::<Result<_>>()?;
        Ok(NiwSampler {
            phi_bar: post.phi_bar.clone(),
            omega_lower,
            scale_lower,
            chi,
        })
    }

    /// `Σ ~ IW(S̄, v̄)` through the Bartlett decomposition; returns `(Σ, F)`.
    pub fn draw_sigma(&self, rng: &mut RngStream) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.scale_lower.nrows();
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n {
            a[(i, i)] = self.chi[i].sample(rng).sqrt();
            for j in 0..i {
                a[(i, j)] = rng.standard_normal();
            }
        }
        let a_inv = a
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .expect("Bartlett factor has positive diagonal");
        let factor = &self.scale_lower * a_inv.transpose();
        let sigma = &factor * factor.transpose();
        (sigma, factor)
    }

    pub fn draw(&self, rng: &mut RngStream) -> NiwDraw {
        let (sigma, factor) = self.draw_sigma(rng);
        let (k, n) = self.phi_bar.shape();
        let z = rng.normal_matrix(k, n);
        let phi = &self.phi_bar + &self.omega_lower * z * factor.transpose();
        NiwDraw {
            phi,
            sigma,
            sigma_factor: factor,
        }
    }
}

/// `n_draws` joint draws of `(Φ, Σ)`.
pub fn sample_matric_normal_iw(
    post: &NiwPosterior,
    rng: &mut RngStream,
    n_draws: usize,
) -> Result<Vec<(DMatrix<f64>, DMatrix<f64>)>> {
    let sampler = NiwSampler::new(post)?;
    Ok((0..n_draws)
        .map(|_| {
            let d = sampler.draw(rng);
            (d.phi, d.sigma)
        })
        .collect())
}
