//! Limited-memory BFGS minimizer with a strong-Wolfe line search.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iter: usize,
    /// Stop once the gradient's max-norm drops below this.
    pub grad_tol: f64,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    pub max_line_search: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iter: 100,
            grad_tol: 1e-6,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// The line search could not satisfy the Wolfe conditions; `x` is the
    /// best iterate found.
    pub line_search_failed: bool,
}

/// Minimize `f`, which returns the objective and writes the gradient into
/// its second argument.
pub fn minimize<F>(mut f: F, x0: &[f64], opts: &LbfgsOptions) -> LbfgsResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut d = vec![0.0; n];
    let mut alpha_buf = vec![0.0; opts.memory];
    let mut iterations = 0;
    let mut line_search_failed = false;

    while iterations < opts.max_iter {
        let gnorm = inf_norm(&g);
        if gnorm < opts.grad_tol || n == 0 {
            break;
        }
        two_loop(&g, &history, &mut d, &mut alpha_buf);
        let mut dg = dot(&d, &g);
        if !(dg < 0.0) {
            // not a descent direction: restart from steepest descent
            history.clear();
            d.iter_mut().zip(&g).for_each(|(di, gi)| *di = -gi);
            dg = dot(&d, &g);
        }
        let step0 = if history.is_empty() {
            (1.0 / l2_norm(&g)).min(1.0)
        } else {
            1.0
        };
        let ls = strong_wolfe(&mut f, &x, fx, dg, &d, step0, opts);
        iterations += 1;
        let Some(ls) = ls else {
            line_search_failed = true;
            break;
        };
        let s: Vec<f64> = ls.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = ls.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * l2_norm(&s) * l2_norm(&y) {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        x = ls.x;
        g = ls.g;
        fx = ls.value;
    }
    let grad_norm = inf_norm(&g);
    LbfgsResult {
        x,
        value: fx,
        grad_norm,
        iterations,
        converged: grad_norm < opts.grad_tol,
        line_search_failed,
    }
}

fn two_loop(
    g: &[f64],
    history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    d: &mut [f64],
    alpha: &mut [f64],
) {
    d.iter_mut().zip(g).for_each(|(di, gi)| *di = -gi);
    for (i, (s, y, rho)) in history.iter().enumerate().rev() {
        let a = rho * dot(s, d);
        alpha[i] = a;
        axpy(-a, y, d);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        d.iter_mut().for_each(|v| *v *= gamma);
    }
    for (i, (s, y, rho)) in history.iter().enumerate() {
        let b = rho * dot(y, d);
        axpy(alpha[i] - b, s, d);
    }
}

struct Point {
    step: f64,
    x: Vec<f64>,
    value: f64,
    g: Vec<f64>,
    slope: f64,
}

struct Accepted {
    x: Vec<f64>,
    value: f64,
    g: Vec<f64>,
}

fn strong_wolfe<F>(
    f: &mut F,
    x0: &[f64],
    f0: f64,
    dg0: f64,
    d: &[f64],
    step0: f64,
    opts: &LbfgsOptions,
) -> Option<Accepted>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let eval = |f: &mut F, step: f64| -> Point {
        let x: Vec<f64> = x0.iter().zip(d).map(|(a, b)| a + step * b).collect();
        let mut g = vec![0.0; x.len()];
        let value = f(&x, &mut g);
        let slope = dot(&g, d);
        Point {
            step,
            x,
            value,
            g,
            slope,
        }
    };
    let armijo = |p: &Point| p.value <= f0 + opts.c1 * p.step * dg0 && p.value.is_finite();
    let curvature = |p: &Point| p.slope.abs() <= -opts.c2 * dg0;

    let mut prev = Point {
        step: 0.0,
        x: x0.to_vec(),
        value: f0,
        g: Vec::new(),
        slope: dg0,
    };
    let mut step = step0;
    let mut best: Option<Point> = None;
    for i in 0..opts.max_line_search {
        let p = eval(f, step);
        if !armijo(&p) || (i > 0 && p.value >= prev.value) {
            return zoom(f, &eval, prev, p, f0, dg0, opts, &mut best);
        }
        if curvature(&p) {
            return Some(accept(p));
        }
        if p.slope >= 0.0 {
            return zoom(f, &eval, p, prev, f0, dg0, opts, &mut best);
        }
        step = p.step * 2.0;
        prev = p;
        keep_best(&mut best, &prev);
    }
    best.map(accept)
}

#[allow(clippy::too_many_arguments)]
fn zoom<F, E>(
    f: &mut F,
    eval: &E,
    mut lo: Point,
    mut hi: Point,
    f0: f64,
    dg0: f64,
    opts: &LbfgsOptions,
    best: &mut Option<Point>,
) -> Option<Accepted>
where
    E: Fn(&mut F, f64) -> Point,
{
    if lo.step > 0.0 {
        keep_best(best, &lo);
    }
    for _ in 0..opts.max_line_search {
        let step = interpolate(&lo, &hi);
        let p = eval(f, step);
        if !(p.value <= f0 + opts.c1 * p.step * dg0) || !p.value.is_finite() || p.value >= lo.value {
            hi = p;
        } else {
            if p.slope.abs() <= -opts.c2 * dg0 {
                return Some(accept(p));
            }
            if p.slope * (hi.step - lo.step) >= 0.0 {
                hi = lo;
            }
            keep_best(best, &p);
            lo = p;
        }
        if (hi.step - lo.step).abs() < 1e-16 * lo.step.abs().max(1.0) {
            break;
        }
    }
    best.take().map(accept)
}

/// Safeguarded cubic interpolation between two bracket ends.
fn interpolate(lo: &Point, hi: &Point) -> f64 {
    let (a, b) = (lo.step, hi.step);
    let (left, right) = (a.min(b), a.max(b));
    let width = right - left;
    if hi.value.is_finite() && hi.slope.is_finite() {
        let d1 = lo.slope + hi.slope - 3.0 * (lo.value - hi.value) / (a - b);
        let disc = d1 * d1 - lo.slope * hi.slope;
        if disc >= 0.0 {
            let d2 = (b - a).signum() * disc.sqrt();
            let t = b - (b - a) * (hi.slope + d2 - d1) / (hi.slope - lo.slope + 2.0 * d2);
            if t.is_finite() && t > left + 0.1 * width && t < right - 0.1 * width {
                return t;
            }
        }
    }
    0.5 * (left + right)
}

fn keep_best(best: &mut Option<Point>, p: &Point) {
    let better = best.as_ref().is_none_or(|b| p.value < b.value);
    if better && p.value.is_finite() {
        *best = Some(Point {
            step: p.step,
            x: p.x.clone(),
            value: p.value,
            g: p.g.clone(),
            slope: p.slope,
        });
    }
}

fn accept(p: Point) -> Accepted {
    Accepted {
        x: p.x,
        value: p.value,
        g: p.g,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += a * xi);
}

fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}
