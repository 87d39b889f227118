//! Small quadrature and 1-D optimisation helpers.

use std::f64::consts::PI;
use std::ops::{Add, Mul};

/// Composite Simpson rule on `[a, b]` with the smallest even number of
/// panels whose width does not exceed `max_step`.
pub fn simpson<T, F>(f: F, a: f64, b: f64, max_step: f64) -> T
where
    T: Copy + Add<Output = T> + Mul<f64, Output = T>,
    F: Fn(f64) -> T,
{
    let panels = simpson_panels(a, b, max_step);
    let h = (b - a) / panels as f64;
    let mut acc = f(a) + f(b) * 1.0;
    for k in 1..panels {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc = acc + f(a + h * k as f64) * w;
    }
    acc * (h / 3.0)
}

/// Number of Simpson panels used by [`simpson`] (always even, at least 2).
pub fn simpson_panels(a: f64, b: f64, max_step: f64) -> usize {
    assert!(max_step > 0.0, "max_step must be positive");
    let raw = ((b - a).abs() / max_step).ceil() as usize;
    let even = raw + raw % 2;
    even.max(2)
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, by Newton iteration on
/// the Legendre recurrence.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(order >= 1);
    let mut nodes = vec![0.0; order];
    let mut weights = vec![0.0; order];
    let n = order as f64;
    for i in 0..order.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(order, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(order, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[order - 1 - i] = x;
        weights[i] = w;
        weights[order - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(order: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=order {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let n = order as f64;
    let dp = n * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Maximises `f` on `[a, b]` with Brent's parabolic/golden-section method.
/// Returns `(argmax, max)`.
pub fn brent_maximize<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> (f64, f64) {
    const GOLD: f64 = 0.381_966_011_250_105_1;
    let g = |x: f64| -f(x);
    let (mut a, mut b) = (a.min(b), a.max(b));
    let mut x = a + GOLD * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = g(x);
    let (mut fw, mut fv) = (fx, fx);
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    for _ in 0..200 {
        let xm = 0.5 * (a + b);
        let tol1 = tol * x.abs() + 1e-14;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            e = d;
            if p.abs() < (0.5 * q * etemp).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = tol1.copysign(xm - x);
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = GOLD * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = g(u);
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    (x, -fx)
}

/// Maximum of a function sampled at `k * step`, `k = 0..len`, refined by
/// [`brent_maximize`] on the two cells around the best sample. Returns
/// `(argmax, max)`; the refinement is kept only if it improves on the grid.
pub fn refine_grid_max<F: Fn(f64) -> f64>(samples: &[f64], step: f64, f: F) -> (f64, f64) {
    let (best, &fb) = samples
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty grid");
    let last = step * (samples.len() - 1) as f64;
    let lo = (best as f64 - 1.0).max(0.0) * step;
    let hi = ((best + 1) as f64 * step).min(last);
    if hi <= lo {
        return (best as f64 * step, fb);
    }
    let (t, v) = brent_maximize(f, lo, hi, 1e-10);
    if v >= fb {
        (t, v)
    } else {
        (best as f64 * step, fb)
    }
}
