mod common;

use common::{augmented_oracle, kronecker_rel_error, mc_log_marginal, panel_of, simulate_var, stack, svd_ols};
use macrofc::bvar::{
    build_design, dummy_observations, fit_conjugate, forecast, log_marginal_likelihood, marginal_objective,
    minnesota_prior, optimize_hyperparameters, posterior, residual_scales, ConjugateHyper, ConjugateSearch, NiwPrior,
};
use macrofc::numerics::{NiwPosterior, RngStream};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn no_dummies(phi_star: Vec<f64>, lambda1: f64) -> ConjugateHyper {
    ConjugateHyper {
        lambda1,
        mu1: f64::INFINITY,
        mu2: f64::INFINITY,
        ..ConjugateHyper::new(phi_star)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn posterior_matches_augmented_ols(
        n in 1usize..=3,
        p in 1usize..=2,
        t in 5usize..=30,
        lambda1 in 0.05f64..2.0,
        mu1 in 0.1f64..10.0,
        mu2 in 0.1f64..10.0,
        seed in any::<u64>(),
    ) {
        let mut rng = RngStream::new(seed, 1);
        let raw = rng.normal_matrix(t + p, n);
        let design = build_design(&panel_of(raw), p).unwrap();
        let sig: Vec<f64> = (0..n).map(|_| 0.5 + rng.standard_normal().abs()).collect();
        let hyper = ConjugateHyper { lambda1, mu1, mu2, ..ConjugateHyper::new(vec![1.0; n]) };
        let prior = minnesota_prior(n, p, &hyper, &sig).unwrap();
        let (yd, xd) = dummy_observations(&design.presample, &hyper);
        let ya = stack(&design.y, &yd);
        let xa = stack(&design.x, &xd);
        let post = posterior(&ya, &xa, &prior).unwrap();
        let oracle = augmented_oracle(&ya, &xa, &prior);
        prop_assert!((&post.phi_bar - &oracle).amax() < 1e-8);
        prop_assert_eq!(post.v_bar, prior.v0 + (t + n + 1) as f64);
    }

    #[test]
    fn dummy_order_does_not_change_evidence(seed in any::<u64>()) {
        let mut rng = RngStream::new(seed, 2);
        let design = build_design(&panel_of(rng.normal_matrix(25, 3)), 2).unwrap();
        let hyper = ConjugateHyper { lambda1: 0.3, mu1: 0.7, mu2: 2.0, ..ConjugateHyper::new(vec![0.0; 3]) };
        let prior = minnesota_prior(3, 2, &hyper, &[1.0, 0.8, 1.3]).unwrap();
        let (yd, xd) = dummy_observations(&design.presample, &hyper);
        let rev = |m: &DMatrix<f64>| DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| m[(m.nrows() - 1 - r, c)]);
        let a = posterior(&stack(&design.y, &yd), &stack(&design.x, &xd), &prior).unwrap();
        let b = posterior(&stack(&rev(&yd), &design.y), &stack(&rev(&xd), &design.x), &prior).unwrap();
        let rows = design.n_rows() + yd.nrows();
        let la = log_marginal_likelihood(&prior, &a, rows, 3).unwrap();
        let lb = log_marginal_likelihood(&prior, &b, rows, 3).unwrap();
        prop_assert!((la - lb).abs() < 1e-8 * la.abs().max(1.0));
    }
}

#[test]
fn dogmatic_and_diffuse_limits() {
    let phi = DMatrix::from_row_slice(3, 2, &[0.1, -0.2, 0.5, 0.1, 0.0, 0.3]);
    let y = simulate_var(&phi, &DMatrix::identity(2, 2), 1, 120, 7);
    let design = build_design(&panel_of(y), 1).unwrap();
    let tight = minnesota_prior(2, 1, &no_dummies(vec![1.0, 0.0], 1e-6), &[1.0, 1.0]).unwrap();
    let tight = NiwPrior {
        omega0_diag: DVector::from_element(3, 1e-12),
        ..tight
    };
    let post = posterior(&design.y, &design.x, &tight).unwrap();
    assert!((&post.phi_bar - &tight.phi0).amax() < 1e-6);

    let loose = NiwPrior {
        omega0_diag: DVector::from_element(3, 1e12),
        ..tight
    };
    let post = posterior(&design.y, &design.x, &loose).unwrap();
    let ols = svd_ols(&design.x, &design.y);
    assert!((&post.phi_bar - ols).amax() < 1e-6);
}

#[test]
fn shrinkage_is_monotone_in_tightness() {
    let phi = DMatrix::from_row_slice(5, 2, &[0.3, 0.1, 0.6, 0.2, -0.1, 0.4, 0.1, 0.0, 0.0, 0.1]);
    let y = simulate_var(&phi, &DMatrix::identity(2, 2), 2, 150, 13);
    let design = build_design(&panel_of(y), 2).unwrap();
    let sig = residual_scales(&design).unwrap();
    let mut last = f64::INFINITY;
    for lambda1 in [5.0, 2.0, 1.0, 0.5, 0.2, 0.1, 0.05, 0.01] {
        let prior = minnesota_prior(2, 2, &no_dummies(vec![0.0, 0.0], lambda1), &sig).unwrap();
        let post = posterior(&design.y, &design.x, &prior).unwrap();
        // intercept row is governed by λ0, not λ1
        let dist = (&post.phi_bar - &prior.phi0).rows(1, 4).norm();
        assert!(dist <= last + 1e-12, "λ1 = {lambda1}: {dist} > {last}");
        last = dist;
    }
}

#[test]
fn rescaling_data_shifts_evidence_by_jacobian() {
    let phi = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 0.5, 0.1, 0.2, 0.3]);
    let y = simulate_var(&phi, &DMatrix::identity(2, 2), 1, 40, 3);
    let design = build_design(&panel_of(y), 1).unwrap();
    let prior = minnesota_prior(2, 1, &no_dummies(vec![1.0, 0.0], 0.4), &[1.2, 0.9]).unwrap();
    let base = posterior(&design.y, &design.x, &prior).unwrap();
    let l0 = log_marginal_likelihood(&prior, &base, design.n_rows(), 2).unwrap();
    let c: f64 = 3.5;
    let scaled_prior = NiwPrior {
        phi0: &prior.phi0 * c,
        s0: &prior.s0 * (c * c),
        ..prior.clone()
    };
    let scaled = posterior(&(&design.y * c), &design.x, &scaled_prior).unwrap();
    let l1 = log_marginal_likelihood(&scaled_prior, &scaled, design.n_rows(), 2).unwrap();
    let want = l0 - (design.n_rows() * 2) as f64 * c.ln();
    assert!((l1 - want).abs() < 1e-8, "{l1} vs {want}");
}

#[test]
fn closed_form_evidence_matches_importance_sampling() {
    let y = [0.5, 1.1, 0.8, 1.4];
    let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.2, 1.0, 0.5, 1.0, 1.1, 1.0, 0.8]);
    let prior = NiwPrior {
        phi0: DMatrix::from_row_slice(2, 1, &[0.0, 0.5]),
        omega0_diag: DVector::from_vec(vec![1.0, 0.25]),
        s0: DMatrix::from_element(1, 1, 1.0),
        v0: 3.0,
        sigma_hat: vec![1.0],
    };
    let post = posterior(&DMatrix::from_column_slice(4, 1, &y), &x, &prior).unwrap();
    let exact = log_marginal_likelihood(&prior, &post, 4, 1).unwrap();
    let (est, se) = mc_log_marginal(&y, &x, &[0.0, 0.5], &[1.0, 0.25], 1.0, 3.0, 200_000, 99);
    assert!((exact - est).abs() < 3.0 * se, "closed form {exact}, MC {est} ± {se}");
}

#[test]
fn kronecker_covariance_of_draws() {
    let phi = DMatrix::from_row_slice(3, 2, &[0.2, 0.0, 0.5, 0.2, 0.1, 0.4]);
    let chol = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.4, 0.8]);
    let y = simulate_var(&phi, &chol, 1, 60, 21);
    let design = build_design(&panel_of(y), 1).unwrap();
    let sig = residual_scales(&design).unwrap();
    let fit = fit_conjugate(&design, &no_dummies(vec![0.0, 0.0], 0.5), &sig).unwrap();
    let rel = kronecker_rel_error(&fit.posterior, 100_000, 5);
    assert!(rel < 0.03, "relative Frobenius error {rel}");
}

#[test]
fn one_step_mean_matches_analytic_projection() {
    let phi = DMatrix::from_row_slice(3, 2, &[0.2, -0.1, 0.6, 0.1, 0.2, 0.3]);
    let y = simulate_var(&phi, &DMatrix::identity(2, 2), 1, 80, 8);
    let design = build_design(&panel_of(y), 1).unwrap();
    let sig = residual_scales(&design).unwrap();
    let fit = fit_conjugate(&design, &ConjugateHyper::new(vec![0.0, 0.0]), &sig).unwrap();
    let post = &fit.posterior;
    let n_draws = 100_000;
    let sim = forecast(post, &design.recent, 1, &mut RngStream::new(17, 3), n_draws).unwrap();
    let x = DVector::from_vec(vec![1.0, design.recent[(0, 0)], design.recent[(0, 1)]]);
    let analytic = post.phi_bar.tr_mul(&x);
    let spread = 1.0 + (x.transpose() * &post.omega_bar * &x)[(0, 0)];
    for j in 0..2 {
        let var = post.s_bar[(j, j)] / (post.v_bar - 3.0) * spread;
        let se = (var / n_draws as f64).sqrt();
        assert!((sim.mean[(0, j)] - analytic[j]).abs() < 3.0 * se, "variable {j}");
    }
}

#[test]
fn zero_variance_limit_is_deterministic() {
    let post = NiwPosterior {
        phi_bar: DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 0.5, 0.0, 0.0, 0.5]),
        omega_bar: DMatrix::identity(3, 3) * 1e-30,
        s_bar: DMatrix::identity(2, 2) * 1e-30,
        v_bar: 10.0,
    };
    let recent = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
    let sim = forecast(&post, &recent, 6, &mut RngStream::new(1, 1), 50).unwrap();
    for h in 0..6 {
        assert!((sim.mean[(h, 0)] - 0.5f64.powi(h as i32 + 1)).abs() < 1e-9);
    }
    let a = forecast(&post, &recent, 3, &mut RngStream::new(4, 4), 1).unwrap();
    let b = forecast(&post, &recent, 3, &mut RngStream::new(4, 4), 1).unwrap();
    assert_eq!(a.mean, b.mean);
}

#[test]
fn optimizer_beats_verification_grid_and_is_deterministic() {
    let phi = DMatrix::from_row_slice(5, 2, &[0.1, 0.0, 0.7, 0.1, 0.0, 0.5, 0.1, 0.0, 0.0, 0.1]);
    let y = simulate_var(&phi, &DMatrix::identity(2, 2), 2, 120, 31);
    let design = build_design(&panel_of(y), 2).unwrap();
    let sig = residual_scales(&design).unwrap();
    let base = ConjugateHyper::new(vec![1.0, 0.0]);
    let cfg = ConjugateSearch::default();
    let best = optimize_hyperparameters(&design, &sig, &base, &cfg).unwrap();
    let again = optimize_hyperparameters(&design, &sig, &base, &cfg).unwrap();
    assert_eq!(best, again);
    let top = marginal_objective(&design, &sig, &best).unwrap();
    let grid = |lo: f64, hi: f64| (0..5).map(move |i| (lo.ln() + (hi / lo).ln() * i as f64 / 4.0).exp());
    for l in grid(0.01, 5.0) {
        for m1 in grid(0.01, 50.0) {
            for m2 in grid(0.01, 50.0) {
                let h = ConjugateHyper {
                    lambda1: l,
                    mu1: m1,
                    mu2: m2,
                    ..base.clone()
                };
                let v = marginal_objective(&design, &sig, &h).unwrap();
                assert!(top >= v - 1e-9, "({l}, {m1}, {m2}) gives {v} > {top}");
            }
        }
    }
}

#[test]
fn white_noise_selects_tight_prior() {
    let phi = DMatrix::zeros(7, 3);
    let y = simulate_var(&phi, &DMatrix::identity(3, 3), 2, 200, 77);
    let design = build_design(&panel_of(y), 2).unwrap();
    let sig = residual_scales(&design).unwrap();
    let best = optimize_hyperparameters(&design, &sig, &ConjugateHyper::new(vec![0.0; 3]), &ConjugateSearch::default())
        .unwrap();
    assert!(best.lambda1 < 0.5, "{best:?}");
}
