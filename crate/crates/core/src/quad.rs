//! Adaptive Gauss–Legendre quadrature in one and two dimensions.
//!
//! Panels are bisected until the difference between the one-panel estimate
//! and the sum over sub-panels falls below the local error budget. The
//! target is a *relative* error; an absolute floor protects integrals whose
//! value is near zero.

use crate::{Error, Result};
use std::sync::OnceLock;

/// Number of Gauss–Legendre nodes per panel.
const ORDER: usize = 16;
/// Hard cap on bisection depth.
const MAX_DEPTH: usize = 48;
const ABS_FLOOR: f64 = 1e-300;

/// Nodes and weights of the `ORDER`-point rule on `[-1, 1]`.
fn gauss_rule() -> &'static [(f64, f64); ORDER] {
    static RULE: OnceLock<[(f64, f64); ORDER]> = OnceLock::new();
    RULE.get_or_init(|| {
        let mut rule = [(0.0, 0.0); ORDER];
        let n = ORDER;
        for i in 0..n {
            // Newton iteration from the Chebyshev-like initial guess.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            rule[n - 1 - i] = (x, w);
        }
        rule
    })
}

/// Legendre polynomial `P_n(x)` and its derivative by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Fixed-order Gauss–Legendre estimate on `[a, b]`.
fn panel<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut sum = 0.0;
    for &(x, w) in gauss_rule().iter() {
        sum += w * f(mid + half * x);
    }
    sum * half
}

/// Integrate `f` over `[a, b]` to relative accuracy `rel_tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let whole = panel(&f, a, b);
    // Scale the budget by the L1 mass so that near-cancelling integrands
    // still get a meaningful relative target.
    let mass = panel(&|x: f64| f(x).abs(), a, b).abs();
    let scale = whole.abs().max(mass).max(ABS_FLOOR);
    let mut worst: f64 = 0.0;
    let value = adapt_1d(&f, a, b, whole, rel_tol * scale, 0, &mut worst)?;
    Ok(value)
}

fn adapt_1d<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    whole: f64,
    tol: f64,
    depth: usize,
    worst: &mut f64,
) -> Result<f64> {
    let mid = 0.5 * (a + b);
    let left = panel(f, a, mid);
    let right = panel(f, mid, b);
    let refined = left + right;
    let err = (refined - whole).abs();
    if err <= tol || err <= ABS_FLOOR {
        return Ok(refined);
    }
    if depth >= MAX_DEPTH {
        *worst = worst.max(err);
        return Err(Error::QuadratureNoConvergence {
            achieved: err,
            requested: tol,
        });
    }
    let l = adapt_1d(f, a, mid, left, 0.5 * tol, depth + 1, worst)?;
    let r = adapt_1d(f, mid, b, right, 0.5 * tol, depth + 1, worst)?;
    Ok(l + r)
}

/// Fixed-order tensor Gauss–Legendre estimate on a rectangle.
fn panel_2d<F: Fn(f64, f64) -> f64>(f: &F, ax: f64, bx: f64, ay: f64, by: f64) -> f64 {
    let hx = 0.5 * (bx - ax);
    let mx = 0.5 * (ax + bx);
    let hy = 0.5 * (by - ay);
    let my = 0.5 * (ay + by);
    let rule = gauss_rule();
    let mut sum = 0.0;
    for &(x, wx) in rule.iter() {
        let px = mx + hx * x;
        let mut row = 0.0;
        for &(y, wy) in rule.iter() {
            row += wy * f(px, my + hy * y);
        }
        sum += wx * row;
    }
    sum * hx * hy
}

/// Integrate `f` over the rectangle `[ax, bx] x [ay, by]` to relative
/// accuracy `rel_tol` by adaptive quad-tree refinement.
pub fn integrate_2d<F: Fn(f64, f64) -> f64>(
    f: F,
    ax: f64,
    bx: f64,
    ay: f64,
    by: f64,
    rel_tol: f64,
) -> Result<f64> {
    if ax == bx || ay == by {
        return Ok(0.0);
    }
    let whole = panel_2d(&f, ax, bx, ay, by);
    let mass = panel_2d(&|x: f64, y: f64| f(x, y).abs(), ax, bx, ay, by).abs();
    let scale = whole.abs().max(mass).max(ABS_FLOOR);
    adapt_2d(&f, ax, bx, ay, by, whole, rel_tol * scale, 0)
}

fn adapt_2d<F: Fn(f64, f64) -> f64>(
    f: &F,
    ax: f64,
    bx: f64,
    ay: f64,
    by: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> Result<f64> {
    let mx = 0.5 * (ax + bx);
    let my = 0.5 * (ay + by);
    let q = [
        (ax, mx, ay, my),
        (mx, bx, ay, my),
        (ax, mx, my, by),
        (mx, bx, my, by),
    ];
    let parts: Vec<f64> = q
        .iter()
        .map(|&(a, b, c, d)| panel_2d(f, a, b, c, d))
        .collect();
    let refined: f64 = parts.iter().sum();
    let err = (refined - whole).abs();
    if err <= tol || err <= ABS_FLOOR {
        return Ok(refined);
    }
    if depth >= MAX_DEPTH / 2 {
        return Err(Error::QuadratureNoConvergence {
            achieved: err,
            requested: tol,
        });
    }
    let mut sum = 0.0;
    for (&(a, b, c, d), &part) in q.iter().zip(parts.iter()) {
        sum += adapt_2d(f, a, b, c, d, part, 0.25 * tol, depth + 1)?;
    }
    Ok(sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn polynomial_exact() {
        let v = integrate(|x| x * x, 0.0, 1.0, 1e-12).unwrap();
        assert_relative_eq!(v, 1.0 / 3.0, epsilon = 1e-13);
    }

    #[test]
    fn oscillatory() {
        let v = integrate(|x| (10.0 * x).sin(), 0.0, 1.0, 1e-11).unwrap();
        let exact = (1.0 - 10.0f64.cos()) / 10.0;
        assert_relative_eq!(v, exact, epsilon = 1e-10);
    }

    #[test]
    fn cancelling_integrand() {
        // Exact value 0; error is judged against the L1 mass, not against 0.
        let v = integrate(|x| (10.0 * x).sin(), 0.0, std::f64::consts::PI, 1e-11).unwrap();
        assert!(v.abs() < 1e-11, "got {v}");
    }

    #[test]
    fn with_kink() {
        // |x - 0.3| has a kink; adaptive bisection must still converge.
        let v = integrate(|x| (x - 0.3f64).abs(), 0.0, 1.0, 1e-10).unwrap();
        let exact = 0.3f64.powi(2) / 2.0 + 0.7f64.powi(2) / 2.0;
        assert_relative_eq!(v, exact, epsilon = 1e-9);
    }

    #[test]
    fn two_d_gaussian() {
        let v = integrate_2d(|x, y| (-x * x - y * y).exp(), -6.0, 6.0, -6.0, 6.0, 1e-10).unwrap();
        assert_relative_eq!(v, std::f64::consts::PI, epsilon = 1e-9);
    }

    #[test]
    fn empty_interval_is_zero() {
        assert_eq!(integrate(|x| x, 2.0, 2.0, 1e-9).unwrap(), 0.0);
    }
}
