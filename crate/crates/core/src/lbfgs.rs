//! Limited-memory BFGS with a weak Wolfe bracketing line search.

use std::collections::VecDeque;

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsParams {
    pub memory: usize,
    /// Stop when `|g|_inf <= grad_tol + grad_tol_rel * |f|`.
    pub grad_tol: f64,
    pub grad_tol_rel: f64,
    pub max_iterations: usize,
    /// Armijo constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    pub max_linesearch: usize,
    /// Cost plateau test: stop when `(f_{k-past} - f_k) / max(1, |f_k|) < delta`.
    /// Disabled when `past == 0`.
    pub past: usize,
    pub delta: f64,
}

impl Default for LbfgsParams {
    fn default() -> Self {
        Self {
            memory: 8,
            grad_tol: 1e-6,
            grad_tol_rel: 1e-6,
            max_iterations: 10_000,
            c1: 1e-4,
            c2: 0.9,
            max_linesearch: 64,
            past: 0,
            delta: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientTolerance,
    CostPlateau,
    MaxIterations,
    /// No step satisfying the Wolfe conditions was found; the best point so
    /// far is returned.
    LineSearchFailure,
}

impl Termination {
    pub fn converged(self) -> bool {
        matches!(self, Termination::GradientTolerance | Termination::CostPlateau)
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad_inf: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
    /// Accepted cost values, starting with `f(x0)`.
    pub history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Minimizer of the cubic interpolating values and slopes at `a` and `b`.
fn cubic_min(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> f64 {
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    if disc < 0.0 {
        return f64::NAN;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2)
}

/// Minimize `f`, which writes the gradient into its second argument and
/// returns the value.
pub fn minimize<F>(mut f: F, x0: Vec<f64>, params: &LbfgsParams) -> LbfgsResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    let mut evaluations = 1;
    let mut history = vec![fx];
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(params.memory);
    let mut d = vec![0.0; n];
    let mut xt = vec![0.0; n];
    let mut gt = vec![0.0; n];
    let mut alpha_buf = vec![0.0; params.memory.max(1)];

    let stop = |fx: f64, g: &[f64]| inf_norm(g) <= params.grad_tol + params.grad_tol_rel * fx.abs();

    let finish = |x: Vec<f64>, fx, g: &[f64], iterations, evaluations, termination, history| LbfgsResult {
        x,
        f: fx,
        grad_inf: inf_norm(g),
        iterations,
        evaluations,
        termination,
        history,
    };

    if !fx.is_finite() {
        return finish(x, fx, &g, 0, evaluations, Termination::LineSearchFailure, history);
    }

    for iter in 0..params.max_iterations {
        if stop(fx, &g) {
            return finish(x, fx, &g, iter, evaluations, Termination::GradientTolerance, history);
        }

        // Two-loop recursion.
        for (di, gi) in d.iter_mut().zip(&g) {
            *di = -gi;
        }
        for (k, (s, y, rho)) in pairs.iter().enumerate().rev() {
            let a = rho * dot(s, &d);
            alpha_buf[k] = a;
            for (di, yi) in d.iter_mut().zip(y) {
                *di -= a * yi;
            }
        }
        if let Some((s, y, _)) = pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            d.iter_mut().for_each(|v| *v *= gamma);
        }
        for (k, (s, y, rho)) in pairs.iter().enumerate() {
            let b = rho * dot(y, &d);
            for (di, si) in d.iter_mut().zip(s) {
                *di += (alpha_buf[k] - b) * si;
            }
        }

        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            pairs.clear();
            for (di, gi) in d.iter_mut().zip(&g) {
                *di = -gi;
            }
            slope = dot(&g, &d);
        }

        let mut step = if pairs.is_empty() { (1.0 / inf_norm(&d)).min(1.0) } else { 1.0 };
        let (mut lo, mut hi) = (0.0, f64::INFINITY);
        let (mut f_lo, mut d_lo) = (fx, slope);
        let mut hi_info: Option<(f64, f64)> = None;
        let mut accepted = None;
        for _ in 0..params.max_linesearch {
            for i in 0..n {
                xt[i] = x[i] + step * d[i];
            }
            let ft = f(&xt, &mut gt);
            evaluations += 1;
            let dt = dot(&gt, &d);
            if !ft.is_finite() || ft > fx + params.c1 * step * slope {
                hi = step;
                hi_info = (ft.is_finite() && dt.is_finite()).then_some((ft, dt));
            } else if dt < params.c2 * slope {
                lo = step;
                f_lo = ft;
                d_lo = dt;
            } else {
                accepted = Some(ft);
                break;
            }
            step = if hi.is_finite() {
                let w = hi - lo;
                let guess = hi_info.map(|(f_hi, d_hi)| cubic_min(lo, f_lo, d_lo, hi, f_hi, d_hi)).unwrap_or(f64::NAN);
                if guess.is_finite() {
                    guess.clamp(lo + 0.1 * w, hi - 0.1 * w)
                } else {
                    lo + 0.5 * w
                }
            } else {
                4.0 * step
            };
        }
        let Some(ft) = accepted else {
            return finish(x, fx, &g, iter, evaluations, Termination::LineSearchFailure, history);
        };

        let s: Vec<f64> = xt.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 0.0 {
            if pairs.len() == params.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        std::mem::swap(&mut x, &mut xt);
        std::mem::swap(&mut g, &mut gt);
        fx = ft;
        history.push(fx);

        if params.past > 0 && history.len() > params.past {
            let prev = history[history.len() - 1 - params.past];
            if (prev - fx) / fx.abs().max(1.0) < params.delta {
                return finish(x, fx, &g, iter + 1, evaluations, Termination::CostPlateau, history);
            }
        }
    }
    let term = if stop(fx, &g) { Termination::GradientTolerance } else { Termination::MaxIterations };
    finish(x, fx, &g, params.max_iterations, evaluations, term, history)
}
