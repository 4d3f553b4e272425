//! Limited-memory BFGS with a backtracking (Armijo) line search.
//!
//! The objective closure returns `None` where it is undefined (for example a
//! model covariance that is not positive definite); the line search treats
//! that like an increase and backtracks.

use std::collections::VecDeque;

use nalgebra::DVector;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsOptions {
    /// Number of stored correction pairs.
    pub memory: usize,
    pub max_iters: usize,
    /// Stop once the Euclidean gradient norm is at or below this value.
    pub grad_tol: f64,
    /// Sufficient-decrease constant.
    pub armijo: f64,
    pub max_backtracks: usize,
    /// Relative decrease below which an iteration counts as stalled.
    pub ftol: f64,
    /// Consecutive stalled iterations before giving up.
    pub stall_iters: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iters: 500,
            grad_tol: 1e-6,
            armijo: 1e-4,
            max_backtracks: 50,
            ftol: 1e-14,
            stall_iters: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientTol,
    MaxIters,
    /// No measurable decrease is possible along the search direction.
    Stagnation,
}

#[derive(Debug, Clone)]
pub struct LbfgsOutcome {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

struct History {
    pairs: VecDeque<(DVector<f64>, DVector<f64>, f64)>,
    cap: usize,
}

impl History {
    fn push(&mut self, s: DVector<f64>, y: DVector<f64>) {
        let sy = s.dot(&y);
        if sy <= 1e-12 * s.norm() * y.norm() {
            return;
        }
        if self.pairs.len() == self.cap {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, 1.0 / sy));
    }

    /// Two-loop recursion: returns `-H g`.
    fn direction(&self, g: &DVector<f64>) -> DVector<f64> {
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = rho * s.dot(&q);
            q.axpy(-a, y, 1.0);
            alphas.push(a);
        }
        if let Some((s, y, _)) = self.pairs.back() {
            q *= s.dot(y) / y.norm_squared();
        }
        for ((s, y, rho), a) in self.pairs.iter().zip(alphas.into_iter().rev()) {
            let b = rho * y.dot(&q);
            q.axpy(a - b, s, 1.0);
        }
        -q
    }
}

/// Minimizes `f` from `x0`. The returned value never exceeds `f(x0)`.
pub fn minimize<F>(mut f: F, x0: DVector<f64>, opts: &LbfgsOptions) -> Result<LbfgsOutcome>
where
    F: FnMut(&DVector<f64>) -> Option<(f64, DVector<f64>)>,
{
    let mut evaluations = 1;
    let (mut fx, mut gx) = f(&x0)
        .filter(|(v, g)| v.is_finite() && g.iter().all(|e| e.is_finite()))
        .ok_or_else(|| Error::InvalidArgument("objective undefined at the starting point".into()))?;
    let mut x = x0;
    let mut hist = History {
        pairs: VecDeque::with_capacity(opts.memory),
        cap: opts.memory.max(1),
    };
    let mut stalled = 0;

    for iter in 0..opts.max_iters {
        let gnorm = gx.norm();
        if gnorm <= opts.grad_tol {
            return Ok(LbfgsOutcome {
                x,
                value: fx,
                grad_norm: gnorm,
                iterations: iter,
                evaluations,
                termination: Termination::GradientTol,
            });
        }

        let mut dir = hist.direction(&gx);
        let mut slope = dir.dot(&gx);
        if !(slope < 0.0) || hist.pairs.is_empty() {
            dir = -&gx;
            slope = -gnorm * gnorm;
        }
        let first_step = if hist.pairs.is_empty() { (1.0 / gnorm).min(1.0) } else { 1.0 };

        let mut accepted = None;
        let mut any_feasible = false;
        for attempt in 0..2 {
            let mut step = first_step;
            for _ in 0..opts.max_backtracks {
                let trial = &x + &dir * step;
                evaluations += 1;
                if let Some((ft, gt)) = f(&trial) {
                    if ft.is_finite() && gt.iter().all(|e| e.is_finite()) {
                        any_feasible = true;
                        if ft <= fx + opts.armijo * step * slope {
                            accepted = Some((trial, ft, gt));
                            break;
                        }
                    }
                }
                step *= 0.5;
            }
            if accepted.is_some() || attempt == 1 {
                break;
            }
            // fall back to steepest descent with a fresh memory
            hist.pairs.clear();
            dir = -&gx;
            slope = -gnorm * gnorm;
        }

        let Some((xn, fnew, gnew)) = accepted else {
            if any_feasible {
                return Ok(LbfgsOutcome {
                    x,
                    value: fx,
                    grad_norm: gnorm,
                    iterations: iter,
                    evaluations,
                    termination: Termination::Stagnation,
                });
            }
            return Err(Error::LineSearchFailed {
                iteration: iter,
                backtracks: opts.max_backtracks,
            });
        };

        if fx - fnew <= opts.ftol * fx.abs().max(1.0) {
            stalled += 1;
        } else {
            stalled = 0;
        }
        hist.push(&xn - &x, &gnew - &gx);
        x = xn;
        fx = fnew;
        gx = gnew;
        if stalled >= opts.stall_iters {
            return Ok(LbfgsOutcome {
                grad_norm: gx.norm(),
                x,
                value: fx,
                iterations: iter + 1,
                evaluations,
                termination: Termination::Stagnation,
            });
        }
    }
    Ok(LbfgsOutcome {
        grad_norm: gx.norm(),
        x,
        value: fx,
        iterations: opts.max_iters,
        evaluations,
        termination: Termination::MaxIters,
    })
}
