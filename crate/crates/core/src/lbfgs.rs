//! Limited-memory BFGS maximizer with a backtracking line search.
//!
//! Internally minimizes `h = -objective`. Steps satisfy the Armijo condition;
//! a step that fails the curvature condition is still taken but its pair is
//! not stored. The quasi-Newton memory survives the periodic chunk hook, so a
//! hook that only observes the iterate leaves the trajectory unchanged.

use std::collections::VecDeque;

use crate::error::Result;

const ARMIJO_C1: f64 = 1e-4;
const CURVATURE_C2: f64 = 0.9;
const MAX_BACKTRACKS: usize = 60;

/// A differentiable objective to be maximized.
pub trait Objective {
    /// Value at `x`; writes the gradient into `grad`.
    fn value_and_gradient(&mut self, x: &[f64], grad: &mut [f64], iteration: usize) -> Result<f64>;

    /// Called after every `chunk` accepted iterations with the current iterate.
    fn end_of_chunk(&mut self, _x: &[f64], _iteration: usize) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaximizeOptions {
    /// Accepted iterations between hook calls and convergence checks.
    pub chunk: usize,
    pub max_chunks: usize,
    /// Threshold on the infinity norm of the gradient.
    pub grad_tol: f64,
    pub memory: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIterations,
    /// No step along the search direction improved the objective.
    LineSearchFailure,
}

#[derive(Debug, Clone)]
pub struct MaximizeOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub chunks: usize,
    pub termination: Termination,
    /// Objective at the start and after every accepted iteration.
    pub trace: Vec<f64>,
}

impl MaximizeOutcome {
    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

struct History {
    pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    capacity: usize,
}

impl History {
    fn push(&mut self, s: Vec<f64>, y: Vec<f64>, sy: f64) {
        if self.pairs.len() == self.capacity {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, 1.0 / sy));
    }

    /// Two-loop recursion: returns `-H q`.
    fn direction(&self, q: &[f64]) -> Vec<f64> {
        let mut r = q.to_vec();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = rho * dot(s, &r);
            r.iter_mut().zip(y).for_each(|(ri, yi)| *ri -= a * yi);
            alphas.push(a);
        }
        if let Some((s, y, _)) = self.pairs.back() {
            let scale = dot(s, y) / dot(y, y);
            r.iter_mut().for_each(|v| *v *= scale);
        }
        for ((s, y, rho), a) in self.pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &r);
            r.iter_mut().zip(s).for_each(|(ri, si)| *ri += (a - b) * si);
        }
        r.iter_mut().for_each(|v| *v = -*v);
        r
    }
}

/// Maximizes `obj` from `x0`.
///
/// Convergence is tested only at chunk boundaries. A line-search failure at a
/// point whose gradient already meets `grad_tol` counts as convergence.
pub fn maximize<O: Objective + ?Sized>(obj: &mut O, x0: Vec<f64>, opts: &MaximizeOptions) -> Result<MaximizeOutcome> {
    let n = x0.len();
    let mut x = x0;
    let mut grad = vec![0.0; n];
    let mut value = obj.value_and_gradient(&x, &mut grad, 0)?;
    // q is the gradient of the minimized function -objective.
    let mut q: Vec<f64> = grad.iter().map(|g| -g).collect();
    let mut history = History { pairs: VecDeque::with_capacity(opts.memory), capacity: opts.memory.max(1) };
    let mut trace = vec![value];
    let max_iterations = opts.chunk * opts.max_chunks;
    let (mut iterations, mut chunks) = (0usize, 0usize);

    let finish = |x: Vec<f64>, value, grad, iterations, chunks, termination, trace| MaximizeOutcome {
        x,
        value,
        grad,
        iterations,
        chunks,
        termination,
        trace,
    };

    if inf_norm(&q) <= opts.grad_tol {
        return Ok(finish(x, value, grad, 0, 0, Termination::Converged, trace));
    }

    let mut x_new = vec![0.0; n];
    let mut grad_new = vec![0.0; n];
    while iterations < max_iterations {
        let mut d = history.direction(&q);
        let mut slope = dot(&q, &d);
        // Also catches a NaN slope.
        if slope.is_nan() || slope >= 0.0 {
            history.pairs.clear();
            d = q.iter().map(|v| -v).collect();
            slope = dot(&q, &d);
        }
        let mut step = if history.pairs.is_empty() { 1.0 / dot(&q, &q).sqrt() } else { 1.0 };

        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            x_new.iter_mut().zip(&x).zip(&d).for_each(|((xn, xi), di)| *xn = xi + step * di);
            let v = obj.value_and_gradient(&x_new, &mut grad_new, iterations + 1)?;
            if v.is_finite() && -v <= -value + ARMIJO_C1 * step * slope {
                accepted = Some(v);
                break;
            }
            step *= 0.5;
        }

        let Some(v_new) = accepted else {
            if !history.pairs.is_empty() {
                history.pairs.clear();
                continue;
            }
            let termination =
                if inf_norm(&q) <= opts.grad_tol { Termination::Converged } else { Termination::LineSearchFailure };
            return Ok(finish(x, value, grad, iterations, chunks, termination, trace));
        };

        let q_new: Vec<f64> = grad_new.iter().map(|g| -g).collect();
        let s: Vec<f64> = d.iter().map(|di| step * di).collect();
        let y: Vec<f64> = q_new.iter().zip(&q).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if dot(&q_new, &d) >= CURVATURE_C2 * slope && sy > 0.0 {
            history.push(s, y, sy);
        }

        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut grad, &mut grad_new);
        q = q_new;
        value = v_new;
        iterations += 1;
        trace.push(value);

        if iterations % opts.chunk == 0 {
            chunks += 1;
            obj.end_of_chunk(&x, iterations)?;
            if inf_norm(&q) <= opts.grad_tol {
                return Ok(finish(x, value, grad, iterations, chunks, Termination::Converged, trace));
            }
        }
    }
    Ok(finish(x, value, grad, iterations, chunks, Termination::MaxIterations, trace))
}
