//! Limited-memory BFGS with a strong-Wolfe line search.

use std::collections::VecDeque;

use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub max_evals: usize,
    /// Stop when the max-norm of the gradient falls below this.
    pub grad_tol: f64,
    /// Stop when an accepted step improves the objective by less than `f_tol · max(1, |f|)`.
    pub f_tol: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            memory: 10,
            max_evals: 200,
            grad_tol: 1e-6,
            f_tol: 1e-12,
            c1: 1e-4,
            c2: 0.9,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LbfgsStatus {
    GradientConverged,
    ObjectiveConverged,
    MaxEvaluations,
    LineSearchFailed,
}

#[derive(Clone, Debug)]
pub struct LbfgsResult<T> {
    pub x: Vec<T>,
    pub f: T,
    pub evals: usize,
    pub iterations: usize,
    pub status: LbfgsStatus,
}

struct Tracker<'a, T, F> {
    f: F,
    evals: usize,
    max_evals: usize,
    best_x: Vec<T>,
    best_f: T,
    grad: &'a mut Vec<T>,
}

impl<T: Real, F: FnMut(&[T], &mut [T]) -> T> Tracker<'_, T, F> {
    fn eval(&mut self, x: &[T]) -> T {
        self.evals += 1;
        let v = (self.f)(x, self.grad);
        let v = if v.is_finite() && self.grad.iter().all(|g| g.is_finite()) {
            v
        } else {
            T::infinity()
        };
        if v < self.best_f {
            self.best_f = v;
            self.best_x.clear();
            self.best_x.extend_from_slice(x);
        }
        v
    }

    fn exhausted(&self) -> bool {
        self.evals >= self.max_evals
    }
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(x, y)| *x * *y).sum()
}

fn inf_norm<T: Real>(a: &[T]) -> T {
    a.iter().fold(T::zero(), |m, x| m.max(x.abs()))
}

/// Minimizer of the cubic interpolating two points with derivatives, safeguarded into `[lo, hi]`.
fn cubic_min<T: Real>(a: T, fa: T, ga: T, b: T, fb: T, gb: T) -> T {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let d1 = ga + gb - T::lit(3.0) * (fa - fb) / (a - b);
    let disc = d1 * d1 - ga * gb;
    let mid = T::lit(0.5) * (a + b);
    if !(disc >= T::zero()) {
        return mid;
    }
    let d2 = disc.sqrt() * (b - a).signum();
    let t = b - (b - a) * (gb + d2 - d1) / (gb - ga + T::lit(2.0) * d2);
    let margin = T::lit(0.1) * (hi - lo);
    if t.is_finite() && t > lo + margin && t < hi - margin {
        t
    } else {
        mid
    }
}

/// Minimizes `f` from `x0`. `f(x, grad)` returns the value and writes the gradient.
///
/// The returned point is the best one evaluated, so `result.f ≤ f(x0)` always holds.
pub fn minimize<T: Real, F>(f: F, x0: &[T], cfg: &LbfgsConfig) -> LbfgsResult<T>
where
    F: FnMut(&[T], &mut [T]) -> T,
{
    let n = x0.len();
    let mut g = vec![T::zero(); n];
    let mut tr = Tracker {
        f,
        evals: 0,
        max_evals: cfg.max_evals.max(1),
        best_x: x0.to_vec(),
        best_f: T::infinity(),
        grad: &mut g,
    };
    let mut x = x0.to_vec();
    let mut fx = tr.eval(&x);
    let mut gx = tr.grad.clone();
    let mut iterations = 0;
    let status;

    if !fx.is_finite() {
        let best_f = tr.best_f;
        return LbfgsResult {
            x,
            f: best_f,
            evals: tr.evals,
            iterations,
            status: LbfgsStatus::LineSearchFailed,
        };
    }

    let (c1, c2) = (T::lit(cfg.c1), T::lit(cfg.c2));
    let mut hist: VecDeque<(Vec<T>, Vec<T>, T)> = VecDeque::with_capacity(cfg.memory);
    let mut rho_work = vec![T::zero(); cfg.memory];

    loop {
        if inf_norm(&gx) < T::lit(cfg.grad_tol) {
            status = LbfgsStatus::GradientConverged;
            break;
        }
        if tr.exhausted() {
            status = LbfgsStatus::MaxEvaluations;
            break;
        }

        // two-loop recursion
        let mut d: Vec<T> = gx.iter().map(|&v| -v).collect();
        for (i, (s, y, rho)) in hist.iter().enumerate().rev() {
            let a = *rho * dot(s, &d);
            rho_work[i] = a;
            for (dj, yj) in d.iter_mut().zip(y) {
                *dj -= a * *yj;
            }
        }
        if let Some((s, y, _)) = hist.back() {
            let gamma = dot(s, y) / dot(y, y);
            for dj in &mut d {
                *dj *= gamma;
            }
        }
        for (i, (s, y, rho)) in hist.iter().enumerate() {
            let b = *rho * dot(y, &d);
            let a = rho_work[i];
            for (dj, sj) in d.iter_mut().zip(s) {
                *dj += (a - b) * *sj;
            }
        }
        let mut dg = dot(&d, &gx);
        if !(dg < T::zero()) {
            hist.clear();
            d = gx.iter().map(|&v| -v).collect();
            dg = dot(&d, &gx);
        }
        let mut step = if hist.is_empty() {
            T::one().min(T::one() / inf_norm(&gx).max(T::epsilon()))
        } else {
            T::one()
        };

        // strong-Wolfe bracketing followed by zoom
        let trial = |alpha: T| -> Vec<T> { x.iter().zip(&d).map(|(xi, di)| *xi + alpha * *di).collect() };
        let f0 = fx;
        let mut prev_a = T::zero();
        let mut prev_f = f0;
        let mut prev_g = dg;
        let mut accepted: Option<(T, Vec<T>, T, Vec<T>)> = None;
        let mut first = true;
        'search: loop {
            if tr.exhausted() {
                break;
            }
            let xt = trial(step);
            let ft = tr.eval(&xt);
            let gt = tr.grad.clone();
            let dgt = if ft.is_finite() { dot(&gt, &d) } else { T::nan() };
            if !ft.is_finite() || ft > f0 + c1 * step * dg || (!first && ft >= prev_f) {
                let lo = (prev_a, prev_f, prev_g);
                let hi = (step, ft, dgt);
                accepted = zoom(&mut tr, &x, &d, f0, dg, lo, hi, c1, c2);
                break 'search;
            }
            if dgt.abs() <= -c2 * dg {
                accepted = Some((step, xt, ft, gt));
                break;
            }
            if dgt >= T::zero() {
                accepted = zoom(&mut tr, &x, &d, f0, dg, (step, ft, dgt), (prev_a, prev_f, prev_g), c1, c2);
                break;
            }
            prev_a = step;
            prev_f = ft;
            prev_g = dgt;
            step *= T::lit(2.0);
            first = false;
            if step > T::lit(1e10) {
                accepted = Some((prev_a, trial(prev_a), prev_f, gt));
                break;
            }
        }

        let Some((_a, x_new, f_new, g_new)) = accepted else {
            status = if tr.exhausted() {
                LbfgsStatus::MaxEvaluations
            } else {
                LbfgsStatus::LineSearchFailed
            };
            break;
        };
        iterations += 1;
        let s: Vec<T> = x_new.iter().zip(&x).map(|(a, b)| *a - *b).collect();
        let y: Vec<T> = g_new.iter().zip(&gx).map(|(a, b)| *a - *b).collect();
        let sy = dot(&s, &y);
        let improvement = fx - f_new;
        x = x_new;
        fx = f_new;
        gx = g_new;
        if sy > T::epsilon() * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if hist.len() == cfg.memory {
                hist.pop_front();
            }
            hist.push_back((s, y, T::one() / sy));
        }
        if improvement.abs() <= T::lit(cfg.f_tol) * fx.abs().max(T::one()) {
            status = LbfgsStatus::ObjectiveConverged;
            break;
        }
    }

    let best_f = tr.best_f;
    let best_x = std::mem::take(&mut tr.best_x);
    LbfgsResult {
        x: best_x,
        f: best_f,
        evals: tr.evals,
        iterations,
        status,
    }
}

#[allow(clippy::too_many_arguments)]
fn zoom<T: Real, F: FnMut(&[T], &mut [T]) -> T>(
    tr: &mut Tracker<'_, T, F>,
    x: &[T],
    d: &[T],
    f0: T,
    dg0: T,
    mut lo: (T, T, T),
    mut hi: (T, T, T),
    c1: T,
    c2: T,
) -> Option<(T, Vec<T>, T, Vec<T>)> {
    for _ in 0..30 {
        if tr.exhausted() {
            break;
        }
        let a = if hi.1.is_finite() && hi.2.is_finite() {
            cubic_min(lo.0, lo.1, lo.2, hi.0, hi.1, hi.2)
        } else {
            T::lit(0.5) * (lo.0 + hi.0)
        };
        if (hi.0 - lo.0).abs() < T::epsilon() * lo.0.abs().max(T::one()) {
            break;
        }
        let xt: Vec<T> = x.iter().zip(d).map(|(xi, di)| *xi + a * *di).collect();
        let ft = tr.eval(&xt);
        let gt = tr.grad.clone();
        let dgt = if ft.is_finite() { dot(&gt, d) } else { T::nan() };
        if !ft.is_finite() || ft > f0 + c1 * a * dg0 || ft >= lo.1 {
            hi = (a, ft, dgt);
        } else {
            if dgt.abs() <= -c2 * dg0 {
                return Some((a, xt, ft, gt));
            }
            if dgt * (hi.0 - lo.0) >= T::zero() {
                hi = lo;
            }
            lo = (a, ft, dgt);
        }
    }
    // accept the best sufficient-decrease point found, if any
    if lo.0 > T::zero() && lo.1 < f0 {
        let xt: Vec<T> = x.iter().zip(d).map(|(xi, di)| *xi + lo.0 * *di).collect();
        let ft = tr.eval(&xt);
        let gt = tr.grad.clone();
        return Some((lo.0, xt, ft, gt));
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64], g: &mut [f64]) -> f64 {
        let (a, b) = (x[0], x[1]);
        g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
        g[1] = 200.0 * (b - a * a);
        (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
    }

    #[test]
    fn solves_rosenbrock() {
        let cfg = LbfgsConfig {
            max_evals: 1000,
            grad_tol: 1e-9,
            ..Default::default()
        };
        let r = minimize(rosenbrock, &[-1.2, 1.0], &cfg);
        assert!((r.x[0] - 1.0).abs() < 1e-6, "{r:?}");
        assert!((r.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn quadratic_in_single_precision() {
        let f = |x: &[f32], g: &mut [f32]| {
            g[0] = 2.0 * (x[0] - 3.0);
            g[1] = 8.0 * (x[1] + 1.0);
            (x[0] - 3.0).powi(2) + 4.0 * (x[1] + 1.0).powi(2)
        };
        let cfg = LbfgsConfig {
            grad_tol: 1e-4,
            ..Default::default()
        };
        let r = minimize(f, &[0.0_f32, 0.0], &cfg);
        assert!((r.x[0] - 3.0).abs() < 1e-3 && (r.x[1] + 1.0).abs() < 1e-3);
    }

    #[test]
    fn never_worse_than_start() {
        // non-smooth objective
        let f = |x: &[f64], g: &mut [f64]| {
            g[0] = x[0].signum();
            x[0].abs()
        };
        let r = minimize(f, &[0.3], &LbfgsConfig::default());
        assert!(r.f <= 0.3);
    }

    #[test]
    fn budget_respected() {
        let cfg = LbfgsConfig {
            max_evals: 7,
            grad_tol: 0.0,
            ..Default::default()
        };
        let r = minimize(rosenbrock, &[-1.2, 1.0], &cfg);
        assert!(r.evals <= 8);
        assert!(r.f <= 24.2 + 1e-12);
    }
}
