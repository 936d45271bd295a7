//! Limited-memory BFGS with Armijo backtracking.
//!
//! Objectives return `None` for points outside the finite-energy domain; the
//! line search treats those as rejected trial points and keeps backtracking,
//! so no infinite-energy iterate is ever accepted.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct LbfgsOptions {
    pub grad_tol: f64,
    pub max_iter: usize,
    pub memory: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self { grad_tol: 1e-8, max_iter: 500, memory: 8 }
    }
}

#[derive(Clone, Debug)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACK: usize = 60;
const NOISE: f64 = 1e-12;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Minimizes `f` from `x0`. The returned value exceeds `f(x0)` by at most
/// rounding noise.
pub fn lbfgs<F>(x0: Vec<f64>, opts: &LbfgsOptions, mut f: F) -> Result<LbfgsResult>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let (mut value, mut grad) = f(&x0).ok_or(Error::InfiniteEnergyState)?;
    let mut x = x0;
    let mut grad_norm = norm(&grad);
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut iterations = 0;

    while grad_norm > opts.grad_tol && iterations < opts.max_iter {
        let mut dir = two_loop(&grad, &history);
        let mut slope = dot(&grad, &dir);
        if !(slope < 0.0) {
            history.clear();
            dir = grad.iter().map(|g| -g).collect();
            slope = -grad_norm * grad_norm;
        }
        let mut alpha = if history.is_empty() { (1.0 / grad_norm).min(1.0) } else { 1.0 };

        let mut accepted = None;
        for _ in 0..MAX_BACKTRACK {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + alpha * di).collect();
            if let Some((fv, g)) = f(&trial) {
                if fv <= value + ARMIJO * alpha * slope {
                    accepted = Some((trial, fv, g));
                    break;
                }
                // Near convergence the predicted decrease drops below the
                // rounding noise of `value`; fall back to the approximate
                // Armijo condition on the directional derivative.
                if fv <= value + NOISE * (1.0 + value.abs()) && dot(&dir, &g) <= (2.0 * ARMIJO - 1.0) * slope {
                    accepted = Some((trial, fv, g));
                    break;
                }
            }
            alpha *= 0.5;
        }

        let Some((x_new, f_new, g_new)) = accepted else {
            if history.is_empty() {
                break;
            }
            history.clear();
            continue;
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-14 * norm(&s) * norm(&y) {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        x = x_new;
        value = f_new;
        grad = g_new;
        grad_norm = norm(&grad);
        iterations += 1;
    }

    Ok(LbfgsResult {
        converged: grad_norm <= opts.grad_tol,
        x,
        value,
        grad,
        grad_norm,
        iterations,
    })
}

fn two_loop(grad: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = grad.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter().map(|v| -v).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> Option<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        Some((f, g))
    }

    #[test]
    fn solves_rosenbrock() {
        let opts = LbfgsOptions { grad_tol: 1e-10, max_iter: 500, memory: 8 };
        let r = lbfgs(vec![-1.2, 1.0], &opts, rosenbrock).unwrap();
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-8 && (r.x[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn optimal_start_takes_no_iterations() {
        let r = lbfgs(vec![1.0, 1.0], &LbfgsOptions::default(), rosenbrock).unwrap();
        assert_eq!(r.iterations, 0);
        assert!(r.converged);
    }

    #[test]
    fn barrier_is_never_crossed() {
        // f(x) = x² − 4x on x > 1, +∞ otherwise, started near the barrier
        // with a first step that would jump across it.
        let f = |x: &[f64]| {
            if x[0] <= 1.0 {
                None
            } else {
                Some((1.0 / (x[0] - 1.0) + (x[0] - 3.0).powi(2), vec![-1.0 / (x[0] - 1.0).powi(2) + 2.0 * (x[0] - 3.0)]))
            }
        };
        let r = lbfgs(vec![1.05], &LbfgsOptions::default(), f).unwrap();
        assert!(r.converged);
        assert!(r.x[0] > 1.0);
    }

    #[test]
    fn empty_problem_is_trivially_converged() {
        let r = lbfgs(Vec::new(), &LbfgsOptions::default(), |_| Some((3.0, Vec::new()))).unwrap();
        assert!(r.converged);
        assert_eq!(r.iterations, 0);
        assert_eq!(r.value, 3.0);
    }

    #[test]
    fn infinite_start_is_an_error() {
        assert!(lbfgs(vec![0.0], &LbfgsOptions::default(), |_| None).is_err());
    }
}
