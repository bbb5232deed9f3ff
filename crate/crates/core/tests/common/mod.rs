#![allow(dead_code)]

use gagfl::Panel;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(r: &mut ChaCha8Rng) -> f64 {
    r.sample(StandardNormal)
}

/// Panel with standard normal regressors and
/// `y = x' beta_{g(i),t} + sigma e`. `beta(g, t)` returns a length-k vector.
pub fn panel_from(
    labels: &[usize],
    t_len: usize,
    k: usize,
    sigma: f64,
    seed: u64,
    beta: impl Fn(usize, usize) -> Vec<f64>,
) -> Panel {
    let n = labels.len();
    let mut r = rng(seed);
    let mut x = Vec::with_capacity(n * t_len * k);
    let mut y = Vec::with_capacity(n * t_len);
    for &g in labels {
        for t in 0..t_len {
            let xs: Vec<f64> = (0..k).map(|_| normal(&mut r)).collect();
            let b = beta(g, t);
            y.push(xs.iter().zip(&b).map(|(a, c)| a * c).sum::<f64>() + sigma * normal(&mut r));
            x.extend(xs);
        }
    }
    Panel::new(n, t_len, k, y, x).unwrap()
}

/// Least squares through an SVD of the explicit design.
pub fn dense_ols(rows: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let p = rows[0].len();
    let a = DMatrix::from_fn(rows.len(), p, |r, c| rows[r][c]);
    let b = DVector::from_column_slice(y);
    a.svd(true, true)
        .solve(&b, 1e-13)
        .unwrap()
        .as_slice()
        .to_vec()
}

/// Residual sum of squares of `dense_ols`.
pub fn dense_ssr(rows: &[Vec<f64>], y: &[f64]) -> f64 {
    let b = dense_ols(rows, y);
    rows.iter()
        .zip(y)
        .map(|(r, v)| {
            let fit: f64 = r.iter().zip(&b).map(|(a, c)| a * c).sum();
            (v - fit).powi(2)
        })
        .sum()
}

/// Every labeling of `n` units into `g` groups with no group empty.
pub fn all_assignments(n: usize, g: usize) -> Vec<Vec<usize>> {
    let total = g.pow(n as u32);
    (0..total)
        .map(|mut code| {
            (0..n)
                .map(|_| {
                    let l = code % g;
                    code /= g;
                    l
                })
                .collect::<Vec<_>>()
        })
        .filter(|l| (0..g).all(|h| l.contains(&h)))
        .collect()
}

/// Penalized objective of one group written out directly:
/// `(1/nt) sum (y - x'b_t)^2 + lambda sum_t w_t ||b_t - b_{t-1}||`.
pub fn group_objective(
    panel: &Panel,
    members: &[usize],
    path: &[f64],
    weights: &[f64],
    lambda: f64,
) -> f64 {
    let (t_len, k) = (panel.n_periods(), panel.n_regressors());
    let mut loss = 0.0;
    for &i in members {
        for t in 0..t_len {
            let fit: f64 = panel
                .x(i, t)
                .iter()
                .zip(&path[t * k..(t + 1) * k])
                .map(|(a, b)| a * b)
                .sum();
            loss += (panel.y(i, t) - fit).powi(2);
        }
    }
    let mut pen = 0.0;
    for t in 1..t_len {
        let d: f64 = (0..k)
            .map(|c| (path[t * k + c] - path[(t - 1) * k + c]).powi(2))
            .sum();
        pen += weights[t - 1] * d.sqrt();
    }
    loss / panel.n_obs() as f64 + lambda * pen
}

/// ADMM on `min f(b) + lambda sum w_t ||u_t||` subject to `u = D b`, run
/// far past the solver's tolerance.
pub fn admm_group(
    panel: &Panel,
    members: &[usize],
    weights: &[f64],
    lambda: f64,
    iters: usize,
) -> Vec<f64> {
    let (t_len, k) = (panel.n_periods(), panel.n_regressors());
    let dim = t_len * k;
    let nt = panel.n_obs() as f64;
    let mut h = DMatrix::<f64>::zeros(dim, dim);
    let mut c = DVector::<f64>::zeros(dim);
    for &i in members {
        for t in 0..t_len {
            let x = panel.x(i, t);
            for a in 0..k {
                c[t * k + a] += 2.0 * x[a] * panel.y(i, t) / nt;
                for b in 0..k {
                    h[(t * k + a, t * k + b)] += 2.0 * x[a] * x[b] / nt;
                }
            }
        }
    }
    let m = (t_len - 1) * k;
    let d = DMatrix::<f64>::from_fn(m, dim, |r, col| {
        let (t, a) = (r / k + 1, r % k);
        if col == t * k + a {
            1.0
        } else if col == (t - 1) * k + a {
            -1.0
        } else {
            0.0
        }
    });
    let rho: f64 = 1.0;
    let dtd: DMatrix<f64> = d.transpose() * &d;
    let system = (&h + dtd * rho).cholesky().unwrap();
    let mut u = DVector::<f64>::zeros(m);
    let mut v = DVector::<f64>::zeros(m);
    for _ in 0..iters {
        let b = system.solve(&(&c + rho * d.transpose() * (&u - &v)));
        let db = &d * &b;
        for t in 0..t_len - 1 {
            let s = db.rows(t * k, k) + v.rows(t * k, k);
            let norm = s.norm();
            let thr = lambda * weights[t] / rho;
            let scale = if norm > thr { 1.0 - thr / norm } else { 0.0 };
            u.rows_mut(t * k, k).copy_from(&(s * scale));
        }
        v += &db - &u;
    }
    // keep the thresholded jumps (exact zeros) and re-solve the level
    {
        let mut path = vec![0.0; dim];
        let mut g = DMatrix::<f64>::zeros(k, k);
        let mut rhs = DVector::<f64>::zeros(k);
        let mut offset = vec![0.0; dim];
        for t in 1..t_len {
            for a in 0..k {
                offset[t * k + a] = offset[(t - 1) * k + a] + u[(t - 1) * k + a];
            }
        }
        for t in 0..t_len {
            let ht = h.view((t * k, t * k), (k, k));
            g += ht;
            let off = DVector::from_column_slice(&offset[t * k..(t + 1) * k]);
            rhs += c.rows(t * k, k) - ht * off;
        }
        let base = g.cholesky().unwrap().solve(&rhs);
        for t in 0..t_len {
            for a in 0..k {
                path[t * k + a] = base[a] + offset[t * k + a];
            }
        }
        path
    }
}
