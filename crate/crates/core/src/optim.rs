//! Bounded maximization of cheap, low-dimensional objectives over positive
//! parameters: a coarse logarithmic grid followed by Nelder-Mead refinement
//! in log coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// Grid points per dimension.
    pub grid_points: usize,
    pub max_iter: usize,
    /// Stop when the spread of simplex values falls below this.
    pub f_tol: f64,
    /// ... and the simplex diameter (in log units) below this.
    pub x_tol: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            grid_points: 7,
            max_iter: 400,
            f_tol: 1e-9,
            x_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub argmax: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (a + b)];
    }
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// Maximize `f` over the box `bounds` (all strictly positive).
pub fn maximize_positive<F>(mut f: F, bounds: &[(f64, f64)], cfg: &SearchConfig) -> Result<SearchResult>
where
    F: FnMut(&[f64]) -> f64,
{
    let dim = bounds.len();
    if dim == 0 {
        return Err(Error::Config("empty search space".into()));
    }
    for &(lo, hi) in bounds {
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::Config(format!("invalid bounds [{lo}, {hi}]")));
        }
    }
    let lo: Vec<f64> = bounds.iter().map(|b| b.0.ln()).collect();
    let hi: Vec<f64> = bounds.iter().map(|b| b.1.ln()).collect();
    let mut evals = 0usize;
    let mut eval = |u: &[f64]| -> f64 {
        evals += 1;
        let x: Vec<f64> = u.iter().map(|v| v.exp()).collect();
        let v = f(&x);
        if v.is_finite() {
            -v
        } else {
            f64::INFINITY
        }
    };

    let n_grid = cfg.grid_points.max(1);
    let axes: Vec<Vec<f64>> = (0..dim).map(|d| linspace(lo[d], hi[d], n_grid)).collect();
    let mut best_u = vec![0.0; dim];
    let mut best = f64::INFINITY;
    let total = n_grid.pow(dim as u32);
    let mut u = vec![0.0; dim];
    for idx in 0..total {
        let mut rem = idx;
        for d in 0..dim {
            u[d] = axes[d][rem % n_grid];
            rem /= n_grid;
        }
        let v = eval(&u);
        if v < best {
            best = v;
            best_u.clone_from(&u);
        }
    }
    if !best.is_finite() {
        return Err(Error::Optimization("objective non-finite at every grid point".into()));
    }

    let clamp = |u: &mut [f64]| {
        for d in 0..dim {
            u[d] = u[d].clamp(lo[d], hi[d]);
        }
    };
    let step: Vec<f64> = (0..dim)
        .map(|d| {
            let s = if n_grid > 1 { (hi[d] - lo[d]) / (n_grid - 1) as f64 * 0.5 } else { 0.5 };
            if s > 0.0 {
                s
            } else {
                1e-3
            }
        })
        .collect();
    let mut simplex: Vec<(Vec<f64>, f64)> = vec![(best_u.clone(), best)];
    for d in 0..dim {
        let mut v = best_u.clone();
        v[d] += step[d];
        if v[d] > hi[d] {
            v[d] = best_u[d] - step[d];
        }
        clamp(&mut v);
        let fv = eval(&v);
        simplex.push((v, fv));
    }

    for _ in 0..cfg.max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let f_best = simplex[0].1;
        let f_worst = simplex[dim].1;
        let diam = simplex
            .iter()
            .skip(1)
            .map(|(v, _)| v.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if (f_worst - f_best).abs() <= cfg.f_tol * (1.0 + f_best.abs()) && diam <= cfg.x_tol {
            break;
        }
        let centroid: Vec<f64> = (0..dim)
            .map(|d| simplex[..dim].iter().map(|(v, _)| v[d]).sum::<f64>() / dim as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            let mut p: Vec<f64> = (0..dim)
                .map(|d| centroid[d] + t * (simplex[dim].0[d] - centroid[d]))
                .collect();
            clamp(&mut p);
            p
        };
        let xr = along(-1.0);
        let fr = eval(&xr);
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = eval(&xe);
            simplex[dim] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[dim - 1].1 {
            simplex[dim] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < simplex[dim].1 {
            let x = along(-0.5);
            let fx = eval(&x);
            (x, fx)
        } else {
            let x = along(0.5);
            let fx = eval(&x);
            (x, fx)
        };
        if fc < simplex[dim].1.min(fr) {
            simplex[dim] = (xc, fc);
            continue;
        }
        let x0 = simplex[0].0.clone();
        for vert in simplex.iter_mut().skip(1) {
            let mut v: Vec<f64> = vert.0.iter().zip(&x0).map(|(a, b)| b + 0.5 * (a - b)).collect();
            clamp(&mut v);
            let fv = eval(&v);
            *vert = (v, fv);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (u_best, f_best) = if simplex[0].1 < best {
        simplex[0].clone()
    } else {
        (best_u, best)
    };
    Ok(SearchResult {
        argmax: u_best.iter().map(|v| v.exp()).collect(),
        value: -f_best,
        evaluations: evals,
    })
}
