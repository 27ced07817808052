//! Plane deformations: construction, composition, differentiation, polar
//! representation, and quadrature for the measures of deformed domains.
//!
//! A deformation is an orientation-preserving diffeomorphism of the plane
//! fixing the origin. Spiral deformations are the special class whose polar
//! representation is `(r, phi) -> (f(r), g(r) + phi)` with `f` strictly
//! increasing and surjective; they are exactly the deformations that
//! commute with rotations up to a rotation, hence preserve isotropy.

use crate::expr::Expr;
use crate::geom::{Mat2, Vec2};
use crate::quad;
use crate::{Error, Result};
use std::f64::consts::{PI, TAU};
use std::fmt;
use std::sync::Arc;

/// Relative target for all measure quadratures.
pub const MEASURE_REL_TOL: f64 = 1e-9;

/// Probe lattice size used by constructors to check `det J > 0`.
const PROBE_SIDE: usize = 32;

/// A scalar function together with its derivative.
#[derive(Clone)]
pub struct ScalarMap {
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    df: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    desc: String,
}

impl fmt::Debug for ScalarMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ScalarMap({})", self.desc)
    }
}

impl ScalarMap {
    pub fn new<F, D>(f: F, df: D, desc: &str) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        ScalarMap {
            f: Arc::new(f),
            df: Arc::new(df),
            desc: desc.to_string(),
        }
    }

    /// Build from a parsed expression; the derivative is symbolic.
    pub fn from_expr(expr: &Expr) -> Self {
        let d = expr.derivative();
        let desc = expr.to_string();
        let e = expr.clone();
        ScalarMap {
            f: Arc::new(move |x| e.eval(x)),
            df: Arc::new(move |x| d.eval(x)),
            desc,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.f)(x)
    }

    pub fn deriv(&self, x: f64) -> f64 {
        (self.df)(x)
    }

    pub fn describe(&self) -> &str {
        &self.desc
    }
}

/// Spiral data: polar image `(r, phi) -> (f(r), g(r) + phi)`.
///
/// The angular multiplier is fixed at +1 because only orientation-preserving
/// deformations are admitted.
#[derive(Clone, Debug)]
pub struct SpiralSpec {
    pub f: ScalarMap,
    pub g: ScalarMap,
}

/// Orientation sign of every admitted spiral.
pub const SPIRAL_EPSILON: i32 = 1;

impl SpiralSpec {
    /// Validate that `f` is strictly increasing and surjective onto
    /// `(0, +inf)` on a log-spaced probe grid.
    pub fn new(f: ScalarMap, g: ScalarMap) -> Result<Self> {
        let mut prev = f.eval(1e-8);
        if !(prev > 0.0) {
            return Err(Error::InvalidDeformation(format!(
                "spiral radial map {} must be positive near 0, got f(1e-8) = {prev}",
                f.desc
            )));
        }
        if prev > 1e-2 {
            return Err(Error::InvalidDeformation(format!(
                "spiral radial map {} does not tend to 0 at 0 (f(1e-8) = {prev})",
                f.desc
            )));
        }
        let mut r = 1e-8f64;
        while r < 1e8 {
            r *= 10.0f64.powf(0.25);
            let v = f.eval(r);
            if v > 1e12 {
                // Clearly diverging; fast-growing maps may overflow past
                // this point, which still witnesses surjectivity.
                prev = v;
                break;
            }
            if !(v > prev) {
                return Err(Error::InvalidDeformation(format!(
                    "spiral radial map {} is not strictly increasing near r = {r:.3e}",
                    f.desc
                )));
            }
            prev = v;
        }
        if !(prev >= 1e2) {
            return Err(Error::InvalidDeformation(format!(
                "spiral radial map {} does not tend to infinity (f(1e8) = {prev:.3e})",
                f.desc
            )));
        }
        Ok(SpiralSpec { f, g })
    }
}

type MapFn = Arc<dyn Fn(Vec2) -> Result<Vec2> + Send + Sync>;
type JacFn = Arc<dyn Fn(Vec2) -> Result<Mat2> + Send + Sync>;

/// A plane deformation with evaluatable Jacobian.
#[derive(Clone)]
pub enum Deformation {
    /// Linear map with positive determinant.
    Linear(Mat2),
    /// `theta(s, t) = (c1(s), c2(t))`.
    Tensorial { c1: ScalarMap, c2: ScalarMap },
    /// Spiral in polar form.
    Spiral(SpiralSpec),
    /// Right-to-left composition: `Composite([f, g])` evaluates `f(g(x))`.
    Composite(Vec<Deformation>),
    /// User-supplied map with optional exact Jacobian. Callbacks must be
    /// reentrant for the deformation to be safely shared across threads.
    Custom {
        map: MapFn,
        jac: Option<JacFn>,
        desc: String,
    },
}

impl fmt::Debug for Deformation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Deformation::Linear(m) => write!(f, "Linear({m:?})"),
            Deformation::Tensorial { c1, c2 } => write!(f, "Tensorial({}, {})", c1.desc, c2.desc),
            Deformation::Spiral(s) => write!(f, "Spiral(f={}, g={})", s.f.desc, s.g.desc),
            Deformation::Composite(parts) => write!(f, "Composite({} parts)", parts.len()),
            Deformation::Custom { desc, .. } => write!(f, "Custom({desc})"),
        }
    }
}

impl Deformation {
    pub fn identity() -> Self {
        Deformation::Linear(Mat2::IDENTITY)
    }

    /// Linear deformation; rejects non-positive determinants.
    pub fn linear(m: Mat2) -> Result<Self> {
        if !(m.det() > 0.0) {
            return Err(Error::NonPositiveJacobian {
                det: m.det(),
                x: 0.0,
                y: 0.0,
            });
        }
        Ok(Deformation::Linear(m))
    }

    /// Rotation-scaling `lambda * rho_alpha`: the linear spirals.
    pub fn scaled_rotation(lambda: f64, alpha: f64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::InvalidDeformation(format!(
                "scaled rotation needs lambda > 0, got {lambda}"
            )));
        }
        let r = Mat2::rotation(alpha);
        Deformation::linear(Mat2::new(
            lambda * r.a,
            lambda * r.b,
            lambda * r.c,
            lambda * r.d,
        ))
    }

    /// Tensorial deformation; both components must fix 0 and the Jacobian
    /// determinant must be positive on a probe lattice over
    /// `[-probe_box, probe_box]^2`.
    pub fn tensorial(c1: ScalarMap, c2: ScalarMap, probe_box: f64) -> Result<Self> {
        for (c, name) in [(&c1, "first"), (&c2, "second")] {
            let v0 = c.eval(0.0);
            if v0.abs() > 1e-12 {
                return Err(Error::InvalidDeformation(format!(
                    "{name} tensorial component {} must fix 0, got {v0}",
                    c.desc
                )));
            }
        }
        let d = Deformation::Tensorial { c1, c2 };
        d.probe_positive_det(probe_box)?;
        Ok(d)
    }

    /// Spiral deformation; the determinant probe runs over log-spaced radii
    /// in `(0, probe_radius]` (the origin itself is excluded since the polar
    /// chart is singular there).
    pub fn spiral(spec: SpiralSpec, probe_radius: f64) -> Result<Self> {
        let d = Deformation::Spiral(spec);
        for i in 0..PROBE_SIDE {
            let frac = (i as f64 + 1.0) / PROBE_SIDE as f64;
            let r = probe_radius * (1e-4f64).powf(1.0 - frac);
            for k in 0..PROBE_SIDE {
                let phi = TAU * k as f64 / PROBE_SIDE as f64;
                let x = Vec2::from_polar(r, phi);
                let j = d.jacobian_unchecked(x)?;
                if !(j.det() > 0.0) {
                    return Err(Error::NonPositiveJacobian {
                        det: j.det(),
                        x: x.x,
                        y: x.y,
                    });
                }
            }
        }
        Ok(d)
    }

    /// Composition, applied right to left.
    pub fn composite(parts: Vec<Deformation>) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::InvalidDeformation("empty composition".into()));
        }
        Ok(Deformation::Composite(parts))
    }

    /// Custom deformation from callbacks. Must fix the origin; the Jacobian
    /// determinant is probed over `[-probe_box, probe_box]^2`.
    pub fn custom<F>(map: F, jac: Option<JacFn>, desc: &str, probe_box: f64) -> Result<Self>
    where
        F: Fn(Vec2) -> Result<Vec2> + Send + Sync + 'static,
    {
        let d = Deformation::Custom {
            map: Arc::new(map),
            jac,
            desc: desc.to_string(),
        };
        let at0 = d.eval(Vec2::ZERO)?;
        if at0.norm() > 1e-10 {
            return Err(Error::InvalidDeformation(format!(
                "custom deformation {desc} must fix 0, got ({}, {})",
                at0.x, at0.y
            )));
        }
        d.probe_positive_det(probe_box)?;
        Ok(d)
    }

    fn probe_positive_det(&self, probe_box: f64) -> Result<()> {
        for i in 0..PROBE_SIDE {
            for j in 0..PROBE_SIDE {
                let x = Vec2::new(
                    -probe_box + 2.0 * probe_box * (i as f64 + 0.5) / PROBE_SIDE as f64,
                    -probe_box + 2.0 * probe_box * (j as f64 + 0.5) / PROBE_SIDE as f64,
                );
                let m = self.jacobian_unchecked(x)?;
                if !(m.det() > 0.0) {
                    return Err(Error::NonPositiveJacobian {
                        det: m.det(),
                        x: x.x,
                        y: x.y,
                    });
                }
            }
        }
        Ok(())
    }

    /// Evaluate `theta(x)`.
    pub fn eval(&self, x: Vec2) -> Result<Vec2> {
        match self {
            Deformation::Linear(m) => Ok(m.apply(x)),
            Deformation::Tensorial { c1, c2 } => Ok(Vec2::new(c1.eval(x.x), c2.eval(x.y))),
            Deformation::Spiral(s) => {
                let (r, phi) = x.to_polar();
                if r == 0.0 {
                    return Ok(Vec2::ZERO);
                }
                Ok(Vec2::from_polar(s.f.eval(r), s.g.eval(r) + phi))
            }
            Deformation::Composite(parts) => {
                let mut v = x;
                for part in parts.iter().rev() {
                    v = part.eval(v)?;
                }
                Ok(v)
            }
            Deformation::Custom { map, .. } => map(x),
        }
    }

    /// Jacobian matrix at `x`. Exact for all shipped kinds; central finite
    /// differences for `Custom` maps without a Jacobian callback. Fails on a
    /// non-positive determinant.
    pub fn jacobian(&self, x: Vec2) -> Result<Mat2> {
        let m = self.jacobian_unchecked(x)?;
        if !(m.det() > 0.0) {
            return Err(Error::NonPositiveJacobian {
                det: m.det(),
                x: x.x,
                y: x.y,
            });
        }
        Ok(m)
    }

    fn jacobian_unchecked(&self, x: Vec2) -> Result<Mat2> {
        match self {
            Deformation::Linear(m) => Ok(*m),
            Deformation::Tensorial { c1, c2 } => Ok(Mat2::diagonal(c1.deriv(x.x), c2.deriv(x.y))),
            Deformation::Spiral(s) => {
                let (r, phi) = x.to_polar();
                if r == 0.0 {
                    return Err(Error::InvalidDeformation(
                        "spiral Jacobian is singular in polar form at the origin".into(),
                    ));
                }
                // J = rho_{g + phi} [[f', 0], [f g', f / r]] rho_{-phi}
                let fr = s.f.eval(r);
                let dfr = s.f.deriv(r);
                let dgr = s.g.deriv(r);
                let inner = Mat2::new(dfr, 0.0, fr * dgr, fr / r);
                Ok(Mat2::rotation(s.g.eval(r) + phi) * inner * Mat2::rotation(-phi))
            }
            Deformation::Composite(parts) => {
                let mut v = x;
                let mut j = Mat2::IDENTITY;
                for part in parts.iter().rev() {
                    j = part.jacobian_unchecked(v)? * j;
                    v = part.eval(v)?;
                }
                Ok(j)
            }
            Deformation::Custom { jac, .. } => match jac {
                Some(jac) => jac(x),
                None => jacobian_fd(self, x, 1e-5 * (1.0 + x.norm())),
            },
        }
    }

    /// Column norms and determinant of the Jacobian at `x`.
    pub fn jacobian_summary(&self, x: Vec2) -> Result<JacobianSummary> {
        JacobianSummary::from_matrix(self.jacobian(x)?, x)
    }

    /// Ratio of the largest to the smallest singular value of the Jacobian:
    /// a local distortion probe (diagnostic only, no pass/fail semantics).
    pub fn distortion_ratio(&self, x: Vec2) -> Result<f64> {
        let j = self.jacobian(x)?;
        let a2 = j.col(0).norm_sq();
        let b2 = j.col(1).norm_sq();
        let c = j.det();
        let s = a2 + b2;
        let disc = (s * s - 4.0 * c * c).max(0.0).sqrt();
        let hi = 0.5 * (s + disc);
        let lo = 0.5 * (s - disc);
        Ok((hi / lo).sqrt())
    }
}

/// Jacobian column norms `a`, `b` and determinant `c` at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JacobianSummary {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub at: Vec2,
}

impl JacobianSummary {
    pub fn from_matrix(m: Mat2, at: Vec2) -> Result<Self> {
        let a = m.col(0).norm();
        let b = m.col(1).norm();
        let c = m.det();
        if !(a > 0.0 && b > 0.0) {
            return Err(Error::InvalidDeformation(format!(
                "Jacobian column norms must be positive, got a={a}, b={b}"
            )));
        }
        if !(c > 0.0 && c <= a * b * (1.0 + 1e-12)) {
            return Err(Error::InvalidDeformation(format!(
                "Jacobian determinant must satisfy 0 < c <= a*b, got a={a}, b={b}, c={c}"
            )));
        }
        Ok(JacobianSummary { a, b, c, at })
    }
}

/// Central finite-difference Jacobian of `theta.eval` with step `h`.
pub fn jacobian_fd(theta: &Deformation, x: Vec2, h: f64) -> Result<Mat2> {
    let fx1 = theta.eval(Vec2::new(x.x + h, x.y))?;
    let fx0 = theta.eval(Vec2::new(x.x - h, x.y))?;
    let fy1 = theta.eval(Vec2::new(x.x, x.y + h))?;
    let fy0 = theta.eval(Vec2::new(x.x, x.y - h))?;
    Ok(Mat2::new(
        (fx1.x - fx0.x) / (2.0 * h),
        (fy1.x - fy0.x) / (2.0 * h),
        (fx1.y - fx0.y) / (2.0 * h),
        (fy1.y - fy0.y) / (2.0 * h),
    ))
}

/// Polar representation `S^{-1} ∘ theta ∘ S` of a deformation fixing 0.
pub struct PolarRep<'a> {
    theta: &'a Deformation,
}

impl<'a> PolarRep<'a> {
    pub fn new(theta: &'a Deformation) -> Self {
        PolarRep { theta }
    }

    /// `(theta_hat_1, theta_hat_2)(r, phi)`; the angle lies in `(-pi, pi]`.
    pub fn eval(&self, r: f64, phi: f64) -> Result<(f64, f64)> {
        let y = self.theta.eval(Vec2::from_polar(r, phi))?;
        let (rr, pp) = y.to_polar();
        Ok((rr, pp))
    }

    /// Round-trip defect `|S(theta_hat(S^{-1}(x))) - theta(x)|` at `x`.
    pub fn round_trip_defect(&self, x: Vec2) -> Result<f64> {
        let (r, phi) = x.to_polar();
        let (tr, tphi) = self.eval(r, phi)?;
        let back = Vec2::from_polar(tr, tphi);
        Ok((back - self.theta.eval(x)?).norm())
    }
}

/// Wrap an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut v = a.rem_euclid(TAU);
    if v > PI {
        v -= TAU;
    }
    v
}

/// Result of the spiral-membership test.
#[derive(Debug, Clone)]
pub struct SpiralCheck {
    pub is_spiral: bool,
    /// Worst relative angular variation observed, and where.
    pub worst_rel_range: f64,
    pub worst_radius: f64,
    pub worst_quantity: &'static str,
}

/// Test whether `theta` is a spiral deformation: on a polar probe grid, the
/// squared column norms and the determinant of the polar-chart Jacobian
/// (equivalently `|J u_r|^2`, `r^2 |J u_phi|^2` and `r det J` in Cartesian
/// form) must not depend on the angle.
pub fn is_spiral(theta: &Deformation, box_radius: f64, tol: f64) -> Result<SpiralCheck> {
    assert!(tol > 0.0, "tolerance must be positive");
    let n_r = 16;
    let n_phi = 64;
    let mut worst = SpiralCheck {
        is_spiral: true,
        worst_rel_range: 0.0,
        worst_radius: 0.0,
        worst_quantity: "",
    };
    for i in 0..n_r {
        // log-spaced radii in (box_radius * 1e-3, box_radius]
        let r = box_radius * (1e-3f64).powf(1.0 - (i as f64 + 1.0) / n_r as f64);
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for k in 0..n_phi {
            let phi = TAU * k as f64 / n_phi as f64;
            let x = Vec2::from_polar(r, phi);
            let j = theta.jacobian(x)?;
            let u_r = Vec2::new(phi.cos(), phi.sin());
            let u_phi = Vec2::new(-phi.sin(), phi.cos());
            let vals = [
                j.apply(u_r).norm_sq(),
                r * r * j.apply(u_phi).norm_sq(),
                r * j.det(),
            ];
            for (m, v) in vals.iter().enumerate() {
                lo[m] = lo[m].min(*v);
                hi[m] = hi[m].max(*v);
            }
        }
        let names = ["radial-column", "angular-column", "determinant"];
        for m in 0..3 {
            let rel = (hi[m] - lo[m]) / (0.5 * (hi[m] + lo[m])).abs().max(1e-300);
            if rel > worst.worst_rel_range {
                worst.worst_rel_range = rel;
                worst.worst_radius = r;
                worst.worst_quantity = names[m];
            }
        }
    }
    worst.is_spiral = worst.worst_rel_range <= tol;
    Ok(worst)
}

/// A line segment between two distinct points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub a: Vec2,
    pub b: Vec2,
}

impl Segment {
    pub fn new(a: Vec2, b: Vec2) -> Result<Self> {
        if a == b {
            return Err(Error::InvalidDomain("segment endpoints coincide".into()));
        }
        Ok(Segment { a, b })
    }

    pub fn length(&self) -> f64 {
        (self.b - self.a).norm()
    }
}

/// A rotated, translated copy of the signed rectangle `T(s, t) = [0,s] x [0,t]`,
/// where `[0, s]` means `[s, 0]` when `s < 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub s: f64,
    pub t: f64,
    pub rotation: f64,
    pub translation: Vec2,
}

impl Rect {
    pub fn new(s: f64, t: f64) -> Result<Self> {
        Rect::placed(s, t, 0.0, Vec2::ZERO)
    }

    pub fn placed(s: f64, t: f64, rotation: f64, translation: Vec2) -> Result<Self> {
        if s == 0.0 || t == 0.0 {
            return Err(Error::InvalidDomain(format!(
                "degenerate rectangle T({s}, {t})"
            )));
        }
        Ok(Rect {
            s,
            t,
            rotation,
            translation,
        })
    }

    pub fn width(&self) -> f64 {
        self.s.abs()
    }

    pub fn height(&self) -> f64 {
        self.t.abs()
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn perimeter(&self) -> f64 {
        2.0 * (self.width() + self.height())
    }

    /// Map normalized coordinates `(u, v)` in `[0, |s|] x [0, |t|]` to the
    /// plane, honoring the signed-interval convention.
    pub fn point(&self, u: f64, v: f64) -> Vec2 {
        let x = self.s.min(0.0) + u;
        let y = self.t.min(0.0) + v;
        self.translation + Mat2::rotation(self.rotation).apply(Vec2::new(x, y))
    }

    /// Pre-rotate the whole set about the origin: `rho_alpha(T)`.
    pub fn rotated(&self, alpha: f64) -> Rect {
        Rect {
            s: self.s,
            t: self.t,
            rotation: self.rotation + alpha,
            translation: Mat2::rotation(alpha).apply(self.translation),
        }
    }

    fn corners(&self) -> [Vec2; 4] {
        [
            self.point(0.0, 0.0),
            self.point(self.width(), 0.0),
            self.point(self.width(), self.height()),
            self.point(0.0, self.height()),
        ]
    }
}

/// Basic observation domains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DomainShape {
    Segment(Segment),
    Rect(Rect),
}

/// Area of `theta(T)` by adaptive quadrature of `|det J_theta|` over `T`.
pub fn image_area(theta: &Deformation, rect: &Rect) -> Result<f64> {
    let integrand = |u: f64, v: f64| {
        let x = rect.point(u, v);
        theta
            .jacobian_unchecked(x)
            .map(|j| j.det().abs())
            .unwrap_or(f64::NAN)
    };
    quad::integrate_2d(
        integrand,
        0.0,
        rect.width(),
        0.0,
        rect.height(),
        MEASURE_REL_TOL,
    )
}

/// Boundary length of `theta(T)`: the four deformed edge lengths.
pub fn image_perimeter(theta: &Deformation, rect: &Rect) -> Result<f64> {
    let c = rect.corners();
    let mut total = 0.0;
    for i in 0..4 {
        let seg = Segment::new(c[i], c[(i + 1) % 4])?;
        total += image_length(theta, &seg)?;
    }
    Ok(total)
}

/// Length of the deformed segment `theta([a, b])`.
pub fn image_length(theta: &Deformation, seg: &Segment) -> Result<f64> {
    let dir = seg.b - seg.a;
    let integrand = |tau: f64| {
        let x = seg.a + dir * tau;
        theta
            .jacobian_unchecked(x)
            .map(|j| j.apply(dir).norm())
            .unwrap_or(f64::NAN)
    };
    quad::integrate(integrand, 0.0, 1.0, MEASURE_REL_TOL)
}
