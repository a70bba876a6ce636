//! Damped Newton and limited-memory BFGS, both with a backtracking Armijo
//! line search.
//!
//! The objective may return `+inf` to mark points outside its domain; the
//! line search treats those as rejected trial steps.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub max_iter: usize,
    /// Stop when the max-norm of the gradient falls below this.
    pub grad_tol: f64,
    pub max_line_search: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            memory: 8,
            max_iter: 500,
            grad_tol: 1e-6,
            max_line_search: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    Converged,
    MaxIterations,
    /// No step along the search direction reduced the objective.
    LineSearchFailed,
    /// Newton made no further progress and its decrement is below the
    /// rounding level of the objective; the gradient tolerance is
    /// unreachable at this magnitude.
    RoundingLimited,
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
}

impl Minimum {
    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }
}

pub fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f`, which writes the gradient into its second argument and
/// returns the objective value. `x0` must have a finite objective.
pub fn minimize<F>(mut f: F, x0: &[f64], config: &LbfgsConfig) -> Option<Minimum>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(config.memory);
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut alpha_buf = vec![0.0; config.memory];

    for iter in 0..config.max_iter {
        if max_norm(&g) <= config.grad_tol {
            return Some(Minimum {
                x,
                value: fx,
                gradient: g,
                iterations: iter,
                termination: Termination::Converged,
            });
        }

        // two-loop recursion
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        for (k, (s, y, rho)) in history.iter().enumerate().rev() {
            let a = rho * dot(s, &d);
            alpha_buf[k] = a;
            for (di, yi) in d.iter_mut().zip(y) {
                *di -= a * yi;
            }
        }
        let gamma = history
            .back()
            .map(|(s, y, _)| dot(s, y) / dot(y, y))
            .unwrap_or_else(|| 1.0 / max_norm(&g).max(1.0));
        d.iter_mut().for_each(|v| *v *= gamma);
        for (k, (s, y, rho)) in history.iter().enumerate() {
            let b = rho * dot(y, &d);
            for (di, si) in d.iter_mut().zip(s) {
                *di += si * (alpha_buf[k] - b);
            }
        }
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            // not a descent direction: restart from steepest descent
            history.clear();
            let scale = 1.0 / max_norm(&g).max(1.0);
            d = g.iter().map(|v| -v * scale).collect();
            slope = dot(&g, &d);
        }

        let mut step = 1.0;
        let mut accepted = false;
        let mut f_new = f64::INFINITY;
        for _ in 0..config.max_line_search {
            for i in 0..n {
                x_new[i] = x[i] + step * d[i];
            }
            f_new = f(&x_new, &mut g_new);
            if f_new.is_finite() && f_new <= fx + 1e-4 * step * slope {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return Some(Minimum {
                x,
                value: fx,
                gradient: g,
                iterations: iter,
                termination: Termination::LineSearchFailed,
            });
        }

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if history.len() == config.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        x.copy_from_slice(&x_new);
        g.copy_from_slice(&g_new);
        fx = f_new;
    }

    let termination = if max_norm(&g) <= config.grad_tol {
        Termination::Converged
    } else {
        Termination::MaxIterations
    };
    Some(Minimum {
        x,
        value: fx,
        gradient: g,
        iterations: config.max_iter,
        termination,
    })
}

/// `g' H^-1 g`, or `None` when `h` is not positive definite.
fn newton_decrement(h: &[f64], g: &[f64]) -> Option<f64> {
    let n = g.len();
    let chol = nalgebra::DMatrix::from_row_slice(n, n, h).cholesky()?;
    let gv = nalgebra::DVector::from_column_slice(g);
    Some(gv.dot(&chol.solve(&gv)))
}

/// Damped Newton for small smooth problems with an exact Hessian.
///
/// `f` returns value, gradient and row-major Hessian, or `None` outside the
/// domain. Steps solve `(H + lambda I) d = -g`; lambda grows until the
/// shifted Hessian factors and the Armijo condition holds, and shrinks after
/// each accepted step.
pub fn newton_minimize<F>(mut f: F, x0: &[f64], config: &LbfgsConfig) -> Option<Minimum>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>, Vec<f64>)>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut fx, mut g, mut h) = f(&x)?;
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut lambda = 0.0_f64;
    let mut stalled = 0;
    for iter in 0..config.max_iter {
        if max_norm(&g) <= config.grad_tol {
            return Some(Minimum {
                x,
                value: fx,
                gradient: g,
                iterations: iter,
                termination: Termination::Converged,
            });
        }
        let diag_scale = (0..n).fold(0.0_f64, |m, i| m.max(h[i * n + i].abs())).max(1.0);
        let mut accepted = false;
        for _ in 0..config.max_line_search {
            let mut shifted = nalgebra::DMatrix::from_row_slice(n, n, &h);
            for i in 0..n {
                shifted[(i, i)] += lambda;
            }
            if let Some(chol) = shifted.cholesky() {
                let d = chol.solve(&nalgebra::DVector::from_iterator(n, g.iter().map(|v| -v)));
                let slope: f64 = g.iter().zip(d.iter()).map(|(a, b)| a * b).sum();
                let trial: Vec<f64> = x.iter().zip(d.iter()).map(|(a, b)| a + b).collect();
                if slope < 0.0 {
                    if let Some((ft, gt, ht)) = f(&trial) {
                        if ft.is_finite() && ft <= fx + 1e-4 * slope {
                            // relative progress below rounding: the gradient
                            // tolerance is out of reach at this magnitude
                            if fx - ft <= 1e-13 * fx.abs() {
                                stalled += 1;
                            } else {
                                stalled = 0;
                            }
                            x = trial;
                            fx = ft;
                            g = gt;
                            h = ht;
                            accepted = true;
                            lambda *= 0.1;
                            if lambda < 1e-12 * diag_scale {
                                lambda = 0.0;
                            }
                            break;
                        }
                    }
                }
            }
            lambda = if lambda == 0.0 { 1e-6 * diag_scale } else { lambda * 10.0 };
        }
        if !accepted || stalled >= 5 {
            let termination = if newton_decrement(&h, &g).is_some_and(|d| d <= 1e-10 * fx.abs()) {
                Termination::RoundingLimited
            } else {
                Termination::LineSearchFailed
            };
            return Some(Minimum {
                x,
                value: fx,
                gradient: g,
                iterations: iter,
                termination,
            });
        }
    }
    let termination = if max_norm(&g) <= config.grad_tol {
        Termination::Converged
    } else {
        Termination::MaxIterations
    };
    Some(Minimum {
        x,
        value: fx,
        gradient: g,
        iterations: config.max_iter,
        termination,
    })
}
