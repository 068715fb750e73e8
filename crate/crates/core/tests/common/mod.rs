//! Reference implementations used as oracles by the integration tests. Nothing
//! here calls into the library code it checks.
#![allow(dead_code)]

use drcc::cem::CostWeights;
use drcc::{Mat2, Vec2};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};

/// Discounted tracking cost written out term by term.
pub fn reference_cost(x0: Vec2, goal: Vec2, u: &[Vec2], dt: f64, w: &CostWeights) -> f64 {
    let mut x = x0;
    let mut total = 0.0;
    for (k, uk) in u.iter().enumerate() {
        let e = x - goal;
        total += w.discount.powi(k as i32) * ((e.transpose() * w.q * e)[0] + (uk.transpose() * w.r * uk)[0]);
        x += uk * dt;
    }
    let t = if w.terminal_goal_offset { x - goal } else { x };
    total + (t.transpose() * w.q_terminal * t)[0]
}

/// Box-constrained QP over the stacked controls, solved by projected
/// coordinate descent. Returns the minimizing control sequence.
pub fn qp_optimum(x0: Vec2, goal: Vec2, k: usize, dt: f64, u_max: f64, w: &CostWeights) -> Vec<Vec2> {
    let n = 2 * k;
    // x_j = x0 + dt * S_j u, S_j sums the first j controls
    let select = |j: usize| {
        let mut s = DMatrix::<f64>::zeros(2, n);
        for i in 0..j {
            s[(0, 2 * i)] = dt;
            s[(1, 2 * i + 1)] = dt;
        }
        s
    };
    let dq = |m: &Mat2| DMatrix::from_row_slice(2, 2, &[m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]]);
    let (q, r, qk) = (dq(&w.q), dq(&w.r), dq(&w.q_terminal));
    let mut h = DMatrix::<f64>::zeros(n, n);
    let mut c = DVector::<f64>::zeros(n);
    let e0 = DVector::from_vec(vec![x0.x - goal.x, x0.y - goal.y]);
    for j in 0..k {
        let g = w.discount.powi(j as i32);
        let s = select(j);
        h += (s.transpose() * &q * &s) * (2.0 * g);
        c += (s.transpose() * &q * &e0) * (2.0 * g);
        for a in 0..2 {
            for b in 0..2 {
                h[(2 * j + a, 2 * j + b)] += 2.0 * g * r[(a, b)];
            }
        }
    }
    let s = select(k);
    let tail = if w.terminal_goal_offset { e0.clone() } else { DVector::from_vec(vec![x0.x, x0.y]) };
    h += (s.transpose() * &qk * &s) * 2.0;
    c += (s.transpose() * &qk * &tail) * 2.0;

    let mut u = DVector::<f64>::zeros(n);
    let mut grad = &h * &u + &c;
    for _ in 0..100_000 {
        let mut moved = 0.0f64;
        for i in 0..n {
            let target = (u[i] - grad[i] / h[(i, i)]).clamp(-u_max, u_max);
            let delta = target - u[i];
            if delta != 0.0 {
                u[i] = target;
                grad.axpy(delta, &h.column(i), 1.0);
                moved = moved.max(delta.abs());
            }
        }
        if moved < 1e-13 {
            break;
        }
    }
    (0..k).map(|j| Vec2::new(u[2 * j], u[2 * j + 1])).collect()
}

/// Distance from `point` to the boundary `{x : (x-c)^T E (x-c) = 1}`, found by
/// casting rays from the center (radius `1/sqrt(v^T E v)`) and refining the
/// closest one.
pub fn radial_boundary_distance(center: Vec2, shape: &Mat2, point: Vec2) -> (f64, f64) {
    let at = |t: f64| {
        let v = Vec2::new(t.cos(), t.sin());
        center + v / (v.transpose() * shape * v)[0].sqrt()
    };
    let dist = |t: f64| (at(t) - point).norm();
    let n = 2000;
    let step = std::f64::consts::TAU / n as f64;
    let grid: Vec<f64> = (0..n).map(|i| dist(i as f64 * step)).collect();
    let coarse_min = grid.iter().copied().fold(f64::INFINITY, f64::min);
    let i_best = grid.iter().position(|&d| d == coarse_min).unwrap();
    let (mut lo, mut hi) = ((i_best as f64 - 1.0) * step, (i_best as f64 + 1.0) * step);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..100 {
        let (a, b) = (hi - g * (hi - lo), lo + g * (hi - lo));
        if dist(a) < dist(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    (dist(0.5 * (lo + hi)).min(coarse_min), coarse_min)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Gaussian,
    TwoPoint,
    UniformEllipse,
    HeavyTail,
}

pub const FAMILIES: [Family; 4] =
    [Family::Gaussian, Family::TwoPoint, Family::UniformEllipse, Family::HeavyTail];

/// Draws with mean `mu` and covariance `sigma`, using the symmetric square root
/// of `sigma` as the mixing matrix.
pub fn draw<R: Rng>(family: Family, mu: Vec2, sigma: &Mat2, n: usize, rng: &mut R) -> Vec<Vec2> {
    let eig = sigma.symmetric_eigen();
    let root = eig.eigenvectors
        * Mat2::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()))
        * eig.eigenvectors.transpose();
    let t5 = StudentT::new(5.0).unwrap();
    (0..n)
        .map(|_| {
            let z = match family {
                Family::Gaussian => Vec2::new(StandardNormal.sample(rng), StandardNormal.sample(rng)),
                Family::TwoPoint => {
                    Vec2::new(if rng.random::<bool>() { 1.0 } else { -1.0 }, if rng.random::<bool>() { 1.0 } else { -1.0 })
                }
                Family::UniformEllipse => {
                    let a = rng.random::<f64>() * std::f64::consts::TAU;
                    Vec2::new(a.cos(), a.sin()) * 2f64.sqrt()
                }
                // t_5 has variance 5/3
                Family::HeavyTail => Vec2::new(t5.sample(rng), t5.sample(rng)) * 0.6f64.sqrt(),
            };
            mu + root * z
        })
        .collect()
}

/// Mean of the `ceil(eps n)` largest losses, plus its standard error.
pub fn tail_mean(mut losses: Vec<f64>, eps: f64) -> (f64, f64) {
    losses.sort_by(f64::total_cmp);
    let n = losses.len();
    let m = ((eps * n as f64) - 1e-9).ceil() as usize;
    let var = losses[n - m];
    let cvar = losses[n - m..].iter().sum::<f64>() / m as f64;
    let excess: Vec<f64> = losses.iter().map(|l| (l - var).max(0.0)).collect();
    let mean = excess.iter().sum::<f64>() / n as f64;
    let sd = (excess.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    (cvar, sd / (eps * (n as f64).sqrt()))
}

/// Paired t statistic of `a - b`.
pub fn paired_t(a: &[f64], b: &[f64]) -> (f64, f64) {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let sd = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    (mean, mean / (sd / n.sqrt()))
}
