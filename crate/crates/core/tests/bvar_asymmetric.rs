mod common;

use common::{nig_marginal_logpdf, panel_of, simulate_var, structural_regressors, svd_ols, textbook_nig};
use macrofc::bvar::{
    build_design, equation_prior, fit_asymmetric, fit_equation, forecast_asymmetric, optimize_kappas,
    reduced_to_structural, residual_scales, structural_to_reduced, AsymmetricHyper, AsymmetricPosterior,
    EquationPosterior, KappaSearch, StructuralEquation,
};
use macrofc::numerics::RngStream;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand_distr::{Distribution, Gamma};
use statrs::function::gamma::ln_gamma;

fn hyper_for(n: usize, kappa1: f64, kappa2: f64, scales: &[f64]) -> AsymmetricHyper {
    AsymmetricHyper {
        kappa1,
        kappa2,
        ..AsymmetricHyper::new(scales, vec![0.0; n])
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn equations_match_textbook_nig(
        seed in any::<u64>(),
        kappa1 in 0.01f64..2.0,
        kappa2 in 0.001f64..1.0,
        p in 1usize..=2,
    ) {
        let mut rng = RngStream::new(seed, 7);
        let design = build_design(&panel_of(rng.normal_matrix(20 + p, 2)), p).unwrap();
        let hyper = hyper_for(2, kappa1, kappa2, &[0.9, 1.4]);
        let post = fit_asymmetric(&design, &hyper).unwrap();
        for i in 0..2 {
            let prior = equation_prior(i, &hyper, p).unwrap();
            let z = structural_regressors(&design, i);
            let y: DVector<f64> = design.y.column(i).into_owned();
            let v = DMatrix::from_diagonal(&prior.var);
            let (mean, v_bar, b) = textbook_nig(&y, &z, &prior.mean, &prior.var, prior.scale);
            let eq = &post.equations[i];
            prop_assert!((&eq.mean - &mean).amax() < 1e-10);
            prop_assert!((eq.covariance() - &v_bar).amax() < 1e-10);
            prop_assert!((eq.shape - (prior.shape + 10.0)).abs() < 1e-12);
            prop_assert!((eq.scale - b).abs() < 1e-10 * b.abs().max(1.0));
            let lp = nig_marginal_logpdf(&y, &z, &prior.mean, &v, prior.shape, prior.scale);
            prop_assert!((eq.log_ml - lp).abs() < 1e-8 * lp.abs().max(1.0), "{} vs {}", eq.log_ml, lp);
        }
    }

    #[test]
    fn reduced_form_round_trip(seed in any::<u64>(), n in 1usize..=4) {
        let mut rng = RngStream::new(seed, 3);
        let k = 2 * n + 1;
        let phi = rng.normal_matrix(k, n);
        let l = DMatrix::from_fn(n, n, |i, j| match i.cmp(&j) {
            std::cmp::Ordering::Greater => rng.standard_normal() * 0.5,
            std::cmp::Ordering::Equal => 0.5 + rng.standard_normal().abs(),
            std::cmp::Ordering::Less => 0.0,
        });
        let sigma = &l * l.transpose();
        let eqs = reduced_to_structural(&phi, &sigma).unwrap();
        let red = structural_to_reduced(&eqs).unwrap();
        prop_assert!((&red.phi - &phi).amax() < 1e-10);
        prop_assert!((&red.sigma - &sigma).amax() < 1e-10);
        let back = reduced_to_structural(&red.phi, &red.sigma).unwrap();
        for (a, b) in back.iter().zip(&eqs) {
            prop_assert!((a.sigma2 - b.sigma2).abs() < 1e-10);
            prop_assert!(a.alpha.iter().zip(&b.alpha).all(|(x, y)| (x - y).abs() < 1e-10));
        }
    }
}

#[test]
fn identity_structure_is_reduced_form() {
    let eqs: Vec<StructuralEquation> = (0..3)
        .map(|i| StructuralEquation {
            index: i,
            alpha: vec![0.0; i],
            beta: DVector::from_fn(4, |r, _| (r + i) as f64 * 0.1),
            sigma2: 1.0 + i as f64,
        })
        .collect();
    let red = structural_to_reduced(&eqs).unwrap();
    for (i, eq) in eqs.iter().enumerate() {
        assert_eq!(red.phi.column(i).into_owned(), eq.beta);
        assert!((red.sigma[(i, i)] - eq.sigma2).abs() < 1e-14);
    }
}

#[test]
fn limits_of_prior_strength() {
    let phi = DMatrix::from_row_slice(3, 2, &[0.1, 0.2, 0.5, 0.1, -0.1, 0.3]);
    let chol = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 1.0]);
    let design = build_design(&panel_of(simulate_var(&phi, &chol, 1, 150, 4)), 1).unwrap();
    let diffuse = AsymmetricHyper {
        kappa1: 1e12,
        kappa2: 1e12,
        kappa3: 1e12,
        v0: 4.0,
        s2: vec![1e-12, 1e-12],
        phi_star: vec![1.0, 0.0],
    };
    let post = fit_asymmetric(&design, &diffuse).unwrap();
    for i in 0..2 {
        let z = structural_regressors(&design, i);
        let y = design.y.columns(i, 1).into_owned();
        let ols = svd_ols(&z, &y);
        assert!((post.equations[i].mean.clone() - ols.column(0)).amax() < 1e-6);
    }
    let dogmatic = AsymmetricHyper {
        kappa1: 1e-14,
        kappa2: 1e-14,
        kappa3: 1e-14,
        v0: 4.0,
        s2: vec![1e14, 1e14],
        phi_star: vec![1.0, 0.0],
    };
    let post = fit_asymmetric(&design, &dogmatic).unwrap();
    for i in 0..2 {
        let prior = equation_prior(i, &dogmatic, 1).unwrap();
        assert!((&post.equations[i].mean - &prior.mean).amax() < 1e-6);
    }
}

/// One-observation-at-a-time Student-t predictive densities.
fn sequential_log_predictive(y: &DVector<f64>, z: &DMatrix<f64>, m: &DVector<f64>, var: &DVector<f64>, a0: f64, b0: f64) -> f64 {
    let mut prec = DMatrix::from_diagonal(&var.map(|v| 1.0 / v));
    let mut mean = m.clone();
    let (mut a, mut b) = (a0, b0);
    let mut total = 0.0;
    for t in 0..y.len() {
        let x: DVector<f64> = z.row(t).transpose();
        let cov = prec.clone().try_inverse().unwrap();
        let s2 = (b / a) * (1.0 + (x.transpose() * &cov * &x)[(0, 0)]);
        let nu = 2.0 * a;
        let r = y[t] - x.dot(&mean);
        total += ln_gamma((nu + 1.0) / 2.0) - ln_gamma(nu / 2.0) - 0.5 * (nu * std::f64::consts::PI * s2).ln()
            - ((nu + 1.0) / 2.0) * (1.0 + r * r / (nu * s2)).ln();
        let new_prec = &prec + &x * x.transpose();
        let new_mean = new_prec.clone().try_inverse().unwrap() * (&prec * &mean + &x * y[t]);
        b += 0.5 * (y[t] * y[t] + (mean.transpose() * &prec * &mean)[(0, 0)]
            - (new_mean.transpose() * &new_prec * &new_mean)[(0, 0)]);
        a += 0.5;
        prec = new_prec;
        mean = new_mean;
    }
    total
}

#[test]
fn summed_evidence_equals_sequential_predictive() {
    let phi = DMatrix::from_row_slice(3, 2, &[0.0, 0.1, 0.4, 0.2, 0.0, 0.3]);
    let design = build_design(&panel_of(simulate_var(&phi, &DMatrix::identity(2, 2), 1, 25, 12)), 1).unwrap();
    let hyper = hyper_for(2, 0.2, 0.05, &[1.0, 1.1]);
    let post = fit_asymmetric(&design, &hyper).unwrap();
    let mut seq = 0.0;
    for i in 0..2 {
        let prior = equation_prior(i, &hyper, 1).unwrap();
        let y: DVector<f64> = design.y.column(i).into_owned();
        seq += sequential_log_predictive(&y, &structural_regressors(&design, i), &prior.mean, &prior.var, prior.shape, prior.scale);
    }
    assert!((post.log_ml - seq).abs() < 1e-8, "{} vs {seq}", post.log_ml);
}

#[test]
fn equation_order_is_irrelevant() {
    let mut rng = RngStream::new(8, 0);
    let design = build_design(&panel_of(rng.normal_matrix(40, 3)), 2).unwrap();
    let hyper = hyper_for(3, 0.3, 0.02, &[1.0, 0.7, 1.5]);
    let joint = fit_asymmetric(&design, &hyper).unwrap();
    for i in (0..3).rev() {
        let prior = equation_prior(i, &hyper, 2).unwrap();
        let y: DVector<f64> = design.y.column(i).into_owned();
        let eq = fit_equation(&y, &structural_regressors(&design, i), &prior).unwrap();
        assert_eq!(eq.mean, joint.equations[i].mean);
        assert_eq!(eq.scale, joint.equations[i].scale);
        assert_eq!(eq.log_ml, joint.equations[i].log_ml);
    }
}

/// Monte-Carlo mean of `Σ = A⁻¹ D A⁻ᵀ` under the prior.
fn prior_sigma_mean(hyper: &AsymmetricHyper, draws: usize, seed: u64) -> DMatrix<f64> {
    let n = hyper.n_vars();
    let priors: Vec<_> = (0..n).map(|i| equation_prior(i, hyper, 1).unwrap()).collect();
    let gammas: Vec<_> = priors.iter().map(|p| Gamma::new(p.shape, 1.0 / p.scale).unwrap()).collect();
    let mut rng = RngStream::new(seed, 0);
    let mut acc = DMatrix::zeros(n, n);
    for _ in 0..draws {
        let eqs: Vec<StructuralEquation> = (0..n)
            .map(|i| {
                let sigma2 = 1.0 / gammas[i].sample(&mut rng);
                let alpha = (0..i).map(|j| (sigma2 * priors[i].var[j]).sqrt() * rng.standard_normal()).collect();
                StructuralEquation {
                    index: i,
                    alpha,
                    beta: DVector::zeros(n + 1),
                    sigma2,
                }
            })
            .collect();
        acc += structural_to_reduced(&eqs).unwrap().sigma;
    }
    acc / draws as f64
}

#[test]
fn induced_covariance_prior_is_diagonal_of_scales() {
    let sig = [0.8, 1.5, 1.1];
    for order in [[0usize, 1, 2], [2, 0, 1]] {
        let s: Vec<f64> = order.iter().map(|&j| sig[j]).collect();
        let hyper = hyper_for(3, 0.2, 0.02, &s);
        let mean = prior_sigma_mean(&hyper, 2_000_000, 42);
        for i in 0..3 {
            let want = s[i] * s[i];
            let rel = (mean[(i, i)] - want).abs() / want;
            assert!(rel < 0.05, "order {order:?}, variable {i}: {} vs {want}", mean[(i, i)]);
            for j in 0..i {
                assert!(mean[(i, j)].abs() < 0.05 * (s[i] * s[j]), "off-diagonal {i},{j}: {}", mean[(i, j)]);
            }
        }
    }
}

#[test]
fn kappa_search_beats_grid_and_separates_cross_lags() {
    // strong own lags, no cross dynamics
    let phi = DMatrix::from_row_slice(7, 3, &[
        0.0, 0.0, 0.0, //
        0.7, 0.0, 0.0, //
        0.0, 0.6, 0.0, //
        0.0, 0.0, 0.5, //
        0.1, 0.0, 0.0, //
        0.0, 0.1, 0.0, //
        0.0, 0.0, 0.1,
    ]);
    let design = build_design(&panel_of(simulate_var(&phi, &DMatrix::identity(3, 3), 2, 250, 61)), 2).unwrap();
    let sig = residual_scales(&design).unwrap();
    let base = AsymmetricHyper::new(&sig, vec![0.0; 3]);
    let cfg = KappaSearch::default();
    let best = optimize_kappas(&design, &base, &cfg).unwrap();
    assert_eq!(best, optimize_kappas(&design, &base, &cfg).unwrap());
    assert!(best.kappa2 < best.kappa1, "{best:?}");
    let top = fit_asymmetric(&design, &best).unwrap().log_ml;
    let grid: Vec<f64> = (0..7).map(|i| (1e-4f64.ln() + (1e5f64).ln() * i as f64 / 6.0).exp()).collect();
    for &k1 in &grid {
        for &k2 in &grid {
            let v = fit_asymmetric(&design, &hyper_for(3, k1, k2, &sig)).unwrap().log_ml;
            assert!(top >= v - 1e-9, "({k1}, {k2}): {v} > {top}");
        }
    }
}

#[test]
fn forecasts_zero_variance_and_projection() {
    // pinned posterior: own lag 0.5, no contemporaneous terms, tiny variance
    let dim = |i: usize| i + 3;
    let eqs: Vec<EquationPosterior> = (0..2)
        .map(|i| {
            let mut mean = DVector::zeros(dim(i));
            mean[i + 1 + i] = 0.5;
            EquationPosterior {
                index: i,
                mean,
                precision_factor: DMatrix::identity(dim(i), dim(i)) * 1e15,
                shape: 1e6,
                scale: 1e-24,
                log_ml: 0.0,
            }
        })
        .collect();
    let pinned = AsymmetricPosterior {
        hyper: hyper_for(2, 1.0, 1.0, &[1.0, 1.0]),
        equations: eqs,
        log_ml: 0.0,
        p: 1,
    };
    let recent = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
    let sim = forecast_asymmetric(&pinned, &recent, 5, &mut RngStream::new(1, 0), 20).unwrap();
    for h in 0..5 {
        assert!((sim.mean[(h, 1)] - 0.5f64.powi(h as i32 + 1)).abs() < 1e-9);
    }

    let phi = DMatrix::from_row_slice(3, 2, &[0.3, 0.0, 0.5, 0.2, 0.0, 0.4]);
    let chol = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.6, 0.8]);
    let design = build_design(&panel_of(simulate_var(&phi, &chol, 1, 90, 2)), 1).unwrap();
    let sig = residual_scales(&design).unwrap();
    let post = fit_asymmetric(&design, &hyper_for(2, 0.3, 0.1, &sig)).unwrap();
    let n_draws = 100_000;
    let sim = forecast_asymmetric(&post, &design.recent, 1, &mut RngStream::new(3, 9), n_draws).unwrap();
    let x = DVector::from_vec(vec![1.0, design.recent[(0, 0)], design.recent[(0, 1)]]);
    let analytic = post.mean_reduced_form().unwrap().phi.tr_mul(&x);
    // spread of single paths from independent replicates
    let reps: Vec<DMatrix<f64>> = (0..5000)
        .map(|s| forecast_asymmetric(&post, &design.recent, 1, &mut RngStream::new(1000 + s, 0), 1).unwrap().mean)
        .collect();
    for j in 0..2 {
        let vals: Vec<f64> = reps.iter().map(|m| m[(0, j)]).collect();
        let se = macrofc::numerics::sample_std(&vals) / (n_draws as f64).sqrt();
        assert!((sim.mean[(0, j)] - analytic[j]).abs() < 3.0 * se, "variable {j}");
    }
    let a = forecast_asymmetric(&post, &design.recent, 4, &mut RngStream::new(6, 6), 1).unwrap();
    let b = forecast_asymmetric(&post, &design.recent, 4, &mut RngStream::new(6, 6), 1).unwrap();
    assert_eq!(a.mean, b.mean);
}
