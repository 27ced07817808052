//! Radial covariance models and closed-form excursion expectations.
//!
//! Every model is normalized at construction so that `C(0) = 1` and the
//! Hessian of `C` at the origin is `-I`. Those two normalizations are hard
//! preconditions of every expectation formula below: with them in force,
//! the expected Euler characteristic of an excursion set over a planar
//! region depends on the region only through its area, boundary length and
//! Euler characteristic, with universal level-dependent weights `rho_i`.
//!
//! Everything here is a pure function of immutable inputs; unrestricted
//! concurrent use is safe.

use crate::geom::Vec2;
use crate::quad;
use crate::{Error, Result};

/// Probe step for the one-time numerical normalization of the Hessian.
const NORM_STEP: f64 = 1e-4;

/// Radial covariance family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CovKind {
    /// `exp(-r^2)` before rescaling; Gaussian (squared-exponential) model.
    GaussianExp,
    /// `exp(-r^p)` with `p` in `(0, 2]`.
    PoweredExp(f64),
    /// Matern model with smoothness `nu > 2`.
    MaternLike(f64),
}

impl CovKind {
    fn name(&self) -> String {
        match self {
            CovKind::GaussianExp => "gaussian-exp".to_string(),
            CovKind::PoweredExp(p) => format!("powered-exp({p})"),
            CovKind::MaternLike(nu) => format!("matern({nu})"),
        }
    }
}

/// A radial covariance `C(x) = raw(scale * |x|)` with `C(0) = 1` and
/// `C''(0) = -I`.
#[derive(Debug, Clone)]
pub struct CovarianceModel {
    kind: CovKind,
    scale: f64,
}

impl CovarianceModel {
    /// Build and normalize a model.
    pub fn new(kind: CovKind) -> Result<Self> {
        match kind {
            CovKind::PoweredExp(p) => {
                if !(p > 0.0 && p <= 2.0) {
                    return Err(Error::InvalidModel(format!(
                        "powered-exp exponent must lie in (0, 2], got {p}"
                    )));
                }
            }
            CovKind::MaternLike(nu) => {
                if !(nu > 2.0) {
                    return Err(Error::InvalidModel(format!(
                        "matern smoothness must exceed 2, got {nu}"
                    )));
                }
            }
            CovKind::GaussianExp => {}
        }
        let scale = match kind {
            // exp(-(s r)^2) has radial second derivative -2 s^2 at 0.
            CovKind::GaussianExp => std::f64::consts::FRAC_1_SQRT_2,
            _ => normalize_numerically(&kind)?,
        };
        Ok(CovarianceModel { kind, scale })
    }

    pub fn gaussian() -> Self {
        CovarianceModel::new(CovKind::GaussianExp).expect("gaussian model is always valid")
    }

    pub fn kind(&self) -> CovKind {
        self.kind
    }

    /// Internal length rescaling applied to arguments.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn name(&self) -> String {
        self.kind.name()
    }

    /// Covariance as a function of distance.
    pub fn radial(&self, r: f64) -> f64 {
        raw_radial(&self.kind, self.scale * r.abs())
    }

    /// Covariance at lag `x`.
    pub fn evaluate(&self, x: Vec2) -> f64 {
        self.radial(x.norm())
    }

    /// Distance beyond which the covariance is negligible (below `eps`),
    /// found by doubling search and capped at 1e6. Drives embedding sizes.
    pub fn decay_reach(&self, eps: f64) -> f64 {
        let mut r = 1.0f64;
        while self.radial(r).abs() > eps && r < 1e6 {
            r *= 2.0;
        }
        // refine downward
        let mut lo = r / 2.0;
        let mut hi = r;
        if self.radial(lo).abs() <= eps {
            return lo;
        }
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if self.radial(mid).abs() > eps {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }

    /// Finite-difference Hessian of `C` at the origin (for invariant checks).
    pub fn hessian_at_origin(&self, step: f64) -> [[f64; 2]; 2] {
        let c = |x: f64, y: f64| self.evaluate(Vec2::new(x, y));
        let h = step;
        let dxx = (c(h, 0.0) - 2.0 * c(0.0, 0.0) + c(-h, 0.0)) / (h * h);
        let dyy = (c(0.0, h) - 2.0 * c(0.0, 0.0) + c(0.0, -h)) / (h * h);
        let dxy = (c(h, h) - c(h, -h) - c(-h, h) + c(-h, -h)) / (4.0 * h * h);
        [[dxx, dxy], [dxy, dyy]]
    }
}

/// Unnormalized radial profile of each family at unit scale.
fn raw_radial(kind: &CovKind, r: f64) -> f64 {
    match kind {
        CovKind::GaussianExp => (-r * r).exp(),
        CovKind::PoweredExp(p) => (-r.powf(*p)).exp(),
        CovKind::MaternLike(nu) => matern_radial(*nu, r),
    }
}

/// Matern profile `2^(1-nu)/Gamma(nu) r^nu K_nu(r)`, with value 1 at 0.
fn matern_radial(nu: f64, r: f64) -> f64 {
    if r == 0.0 {
        return 1.0;
    }
    let log_pref = (1.0 - nu) * std::f64::consts::LN_2 - libm::lgamma(nu);
    let k = bessel_k(nu, r);
    if k == 0.0 {
        return 0.0;
    }
    (log_pref + nu * r.ln() + k.ln()).exp()
}

/// Modified Bessel function of the second kind by the integral
/// representation `K_nu(x) = ∫_0^∞ exp(-x cosh t) cosh(nu t) dt`.
fn bessel_k(nu: f64, x: f64) -> f64 {
    debug_assert!(x > 0.0);
    // Truncate where the integrand underflows: x cosh(t) - nu t > 750.
    let mut t_max = 1.0f64;
    while x * t_max.cosh() - nu * t_max < 750.0 && t_max < 700.0 {
        t_max += 0.5;
    }
    quad::integrate(
        |t| (-x * t.cosh() + (nu * t).cosh().ln()).exp(),
        0.0,
        t_max,
        1e-12,
    )
    .unwrap_or(0.0)
}

/// Solve for the scale making the probe-step second difference equal -1.
fn normalize_numerically(kind: &CovKind) -> Result<f64> {
    let d = NORM_STEP;
    // g(s) = -2 (raw(s d) - 1) / d^2 is continuous, increasing in s, with
    // g(0) = 0; bracket the root of g(s) = 1 and bisect.
    let g = |s: f64| -2.0 * (raw_radial(kind, s * d) - 1.0) / (d * d);
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    let mut n = 0;
    while g(hi) < 1.0 {
        lo = hi;
        hi *= 2.0;
        n += 1;
        if n > 200 {
            return Err(Error::InvalidModel(format!(
                "normalization scale not found for {}",
                kind.name()
            )));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Excursion threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Level(pub f64);

impl Level {
    pub fn new(u: f64) -> Result<Self> {
        if !u.is_finite() {
            return Err(Error::InvalidModel(format!(
                "level must be finite, got {u}"
            )));
        }
        Ok(Level(u))
    }
}

/// Probabilists' Hermite polynomial `H_n` by the three-term recurrence.
pub fn hermite(n: usize, x: f64) -> f64 {
    let mut h0 = 1.0;
    if n == 0 {
        return h0;
    }
    let mut h1 = x;
    for k in 1..n {
        let h2 = x * h1 - k as f64 * h0;
        h0 = h1;
        h1 = h2;
    }
    h1
}

/// `H_{-1}(x) = sqrt(2 pi) Psi(x) exp(x^2 / 2)`.
pub fn hermite_minus_one(x: f64) -> f64 {
    (2.0 * std::f64::consts::PI).sqrt() * gauss_tail(x) * (0.5 * x * x).exp()
}

/// Upper tail `Psi(u) = P(N(0,1) >= u)`.
pub fn gauss_tail(u: f64) -> f64 {
    0.5 * libm::erfc(u * std::f64::consts::FRAC_1_SQRT_2)
}

/// Level-dependent weight `rho_i(u) = (2 pi)^{-(i+1)/2} H_{i-1}(u) exp(-u^2/2)`
/// for `i` in `{0, 1, 2}`.
pub fn rho(i: usize, u: Level) -> Result<f64> {
    let u = u.0;
    let h = match i {
        0 => hermite_minus_one(u),
        1 | 2 => hermite(i - 1, u),
        _ => return Err(Error::KernelIndex(i)),
    };
    let p = (2.0 * std::f64::consts::PI).powf(-((i as f64 + 1.0) / 2.0));
    Ok(p * h * (-0.5 * u * u).exp())
}

/// Expected Euler characteristic of an excursion above `u` over a planar
/// region of given area and boundary length.
pub fn expected_chi_2d(area: f64, perimeter: f64, u: Level) -> Result<f64> {
    if area < 0.0 {
        return Err(Error::NegativeMeasure {
            name: "area",
            value: area,
        });
    }
    if perimeter < 0.0 {
        return Err(Error::NegativeMeasure {
            name: "perimeter",
            value: perimeter,
        });
    }
    let uu = u.0;
    let two_pi = 2.0 * std::f64::consts::PI;
    Ok(
        (-0.5 * uu * uu).exp() * (uu * area / two_pi.powf(1.5) + perimeter / (2.0 * two_pi))
            + gauss_tail(uu),
    )
}

/// Expected Euler characteristic over a curve of given length.
pub fn expected_chi_1d(length: f64, u: Level) -> Result<f64> {
    if length < 0.0 {
        return Err(Error::NegativeMeasure {
            name: "length",
            value: length,
        });
    }
    let uu = u.0;
    Ok((-0.5 * uu * uu).exp() * length / (2.0 * std::f64::consts::PI) + gauss_tail(uu))
}

/// Expected *modified* Euler characteristic: the top Lipschitz–Killing term
/// alone, `measure * rho_d(u)`.
pub fn expected_phi(dim: usize, measure: f64, u: Level) -> Result<f64> {
    if measure < 0.0 {
        return Err(Error::NegativeMeasure {
            name: "measure",
            value: measure,
        });
    }
    match dim {
        1 | 2 => Ok(measure * rho(dim, u)?),
        _ => Err(Error::Dimension(dim)),
    }
}

/// All partial derivatives of the normalized Gaussian covariance
/// `C(x) = exp(-|x|^2 / 2)` up to order four, needed to assemble joint
/// distributions of the field and its derivatives at two points.
#[derive(Debug, Clone, Copy)]
pub struct GaussianDerivatives;

impl GaussianDerivatives {
    pub fn c(t: Vec2) -> f64 {
        (-0.5 * t.norm_sq()).exp()
    }

    /// First derivative `dC/dt_i`.
    pub fn d1(t: Vec2, i: usize) -> f64 {
        -comp(t, i) * Self::c(t)
    }

    /// Second derivative `d2C/dt_i dt_j`.
    pub fn d2(t: Vec2, i: usize, j: usize) -> f64 {
        (comp(t, i) * comp(t, j) - kron(i, j)) * Self::c(t)
    }

    /// Third derivative.
    pub fn d3(t: Vec2, i: usize, j: usize, k: usize) -> f64 {
        let (ti, tj, tk) = (comp(t, i), comp(t, j), comp(t, k));
        (kron(i, k) * tj + kron(j, k) * ti + kron(i, j) * tk - ti * tj * tk) * Self::c(t)
    }

    /// Fourth derivative.
    pub fn d4(t: Vec2, i: usize, j: usize, k: usize, l: usize) -> f64 {
        let (ti, tj, tk, tl) = (comp(t, i), comp(t, j), comp(t, k), comp(t, l));
        let quad_delta =
            kron(i, k) * kron(j, l) + kron(j, k) * kron(i, l) + kron(i, j) * kron(k, l);
        let pairs = kron(i, l) * tj * tk
            + kron(j, l) * ti * tk
            + kron(k, l) * ti * tj
            + kron(i, k) * tj * tl
            + kron(j, k) * ti * tl
            + kron(i, j) * tk * tl;
        (quad_delta - pairs + ti * tj * tk * tl) * Self::c(t)
    }

    /// Hessian of `C` at lag `t` as a 2x2 array.
    pub fn hessian(t: Vec2) -> [[f64; 2]; 2] {
        [
            [Self::d2(t, 0, 0), Self::d2(t, 0, 1)],
            [Self::d2(t, 1, 0), Self::d2(t, 1, 1)],
        ]
    }
}

fn comp(t: Vec2, i: usize) -> f64 {
    if i == 0 {
        t.x
    } else {
        t.y
    }
}

fn kron(i: usize, j: usize) -> f64 {
    if i == j {
        1.0
    } else {
        0.0
    }
}
