//! Single-realization estimation in the spiral case, and the second-moment
//! formula for the modified Euler characteristic.
//!
//! When the deformation is a spiral, the deformed field is isotropic, so
//! rotated copies of a small sector (or segment) all carry the same
//! expected modified Euler characteristic. Averaging the empirical values
//! over a rotation family therefore estimates, from one realization, the
//! Jacobian determinant (sectors) or a column norm (segments) at the base
//! point, up to fully explicit level-dependent constants.
//!
//! Replications run in parallel with derived seeds; all accumulation uses
//! deterministic pairwise summation, so results do not depend on thread
//! scheduling.

use crate::covariance::{rho, GaussianDerivatives, Level};
use crate::deform::{self, Deformation, Rect};
use crate::excursion;
use crate::field::{bicubic_on_grid, GridField};
use crate::geom::Vec2;
use crate::stats;
use crate::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use std::f64::consts::{PI, TAU};

/// Minimum pixels across each sector dimension.
const MIN_PIXELS: f64 = 8.0;

/// The rotated sector family `T_N^k = rho_{2 pi k / N}(T_N^0)` with
/// `T_N^0 = {r0 <= r <= r0 + 1/N, phi0 <= phi < phi0 + 2 pi / N}`.
#[derive(Debug, Clone, Copy)]
pub struct SectorFamily {
    pub r0: f64,
    pub phi0: f64,
    pub n: usize,
}

impl SectorFamily {
    pub fn new(r0: f64, phi0: f64, n: usize) -> Result<Self> {
        if !(r0 > 0.0) || n == 0 {
            return Err(Error::InvalidDomain(format!(
                "sector family needs r0 > 0 and n >= 1, got r0 = {r0}, n = {n}"
            )));
        }
        Ok(SectorFamily { r0, phi0, n })
    }

    pub fn radial_width(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn outer_radius(&self) -> f64 {
        self.r0 + self.radial_width()
    }

    /// Common area of every sector in the family.
    pub fn sector_area(&self) -> f64 {
        let w = self.radial_width();
        (PI / self.n as f64) * (2.0 * self.r0 * w + w * w)
    }

    /// Index of the sector containing `p`, if any. Angular intervals are
    /// half-open so the sectors partition the annulus exactly.
    pub fn sector_of(&self, p: Vec2) -> Option<usize> {
        let (r, phi) = p.to_polar();
        if r < self.r0 || r > self.outer_radius() {
            return None;
        }
        let rel = (phi - self.phi0).rem_euclid(TAU);
        let k = (rel / (TAU / self.n as f64)) as usize;
        Some(k.min(self.n - 1))
    }
}

/// The rotated segment family `S_N^k = rho_{2 pi k / N}(S_N^0)` with
/// `S_N^0 = [x1, x1 + 1/N] x {x2}`.
#[derive(Debug, Clone, Copy)]
pub struct SegmentFamily {
    pub base: Vec2,
    pub n: usize,
}

impl SegmentFamily {
    pub fn new(base: Vec2, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidDomain("segment family needs n >= 1".into()));
        }
        Ok(SegmentFamily { base, n })
    }

    pub fn length(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Endpoints of the k-th rotated segment.
    pub fn segment(&self, k: usize) -> (Vec2, Vec2) {
        let rot = crate::geom::Mat2::rotation(TAU * k as f64 / self.n as f64);
        let a = self.base;
        let b = self.base + Vec2::new(self.length(), 0.0);
        (rot.apply(a), rot.apply(b))
    }
}

/// Sector estimator: the average empirical modified Euler characteristic
/// over the `N` rotated sectors, computed from one realization of the
/// deformed field sampled on a lattice.
///
/// Fails when the grid does not resolve the sectors (fewer than 8 pixels
/// across the radial width or the inner arc).
pub fn z_estimator(field: &GridField, family: &SectorFamily, u: f64) -> Result<f64> {
    let h = field.spec.spacing;
    let w = family.radial_width();
    let arc = family.r0 * TAU / family.n as f64;
    if w < MIN_PIXELS * h || arc < MIN_PIXELS * h {
        return Err(Error::UnderResolved(format!(
            "sector dimensions ({w:.4}, {arc:.4}) need at least {MIN_PIXELS} pixels at spacing {h}"
        )));
    }
    let (lo, hi) = field.spec.bounds();
    let reach = family.outer_radius() + h;
    if lo.x > -reach || lo.y > -reach || hi.x < reach || hi.y < reach {
        return Err(Error::UnderResolved(format!(
            "grid window does not cover the annulus of radius {reach}"
        )));
    }
    let mut per_sector = vec![0.0f64; family.n];
    // One pass over the grid: each node contributes its critical-point
    // index to the sector owning it. Equivalent to summing phi over the
    // sectors separately, and exactly additive by construction.
    let (rows, cols) = field.spec.shape;
    for r in 1..rows - 1 {
        for c in 1..cols - 1 {
            let p = field.spec.node(r, c);
            if let Some(k) = family.sector_of(p) {
                let v = field.value(r, c);
                if v < u {
                    continue;
                }
                per_sector[k] += node_index_contribution(field, r, c, v);
            }
        }
    }
    Ok(stats::pairwise_sum(&per_sector) / family.n as f64)
}

/// Critical-point index of one interior node (in whole units).
fn node_index_contribution(field: &GridField, r: usize, c: usize, v: f64) -> f64 {
    const RING: [(isize, isize); 6] = [(0, 1), (1, 1), (1, 0), (0, -1), (-1, -1), (-1, 0)];
    let cols = field.spec.shape.1;
    let center_idx = r * cols + c;
    let mut signs = [false; 6];
    for (k, (dr, dc)) in RING.iter().enumerate() {
        let (nr, nc) = ((r as isize + dr) as usize, (c as isize + dc) as usize);
        let w = field.value(nr, nc);
        let n_idx = nr * cols + nc;
        signs[k] = if w != v { w > v } else { n_idx > center_idx };
    }
    let mut changes = 0i64;
    for k in 0..6 {
        if signs[k] != signs[(k + 1) % 6] {
            changes += 1;
        }
    }
    (2 - changes) as f64 / 2.0
}

/// Segment estimator: the average up-crossing count over the `N` rotated
/// segments, each sampled at step at most `1/(8N)` by bicubic interpolation
/// from the lattice field.
pub fn y_estimator(field: &GridField, family: &SegmentFamily, u: f64) -> Result<f64> {
    let h = field.spec.spacing;
    let step = family.length() / MIN_PIXELS;
    if h > step {
        return Err(Error::UnderResolved(format!(
            "segment sampling step {step:.5} needs a lattice at least that fine, spacing is {h}"
        )));
    }
    let samples_per_segment = (MIN_PIXELS as usize).max(8) + 1;
    let mut vals = Vec::with_capacity(family.n);
    for k in 0..family.n {
        let (a, b) = family.segment(k);
        let mut trace = Vec::with_capacity(samples_per_segment);
        for i in 0..samples_per_segment {
            let tau = i as f64 / (samples_per_segment - 1) as f64;
            trace.push(bicubic_on_grid(field, a + (b - a) * tau)?);
        }
        vals.push(excursion::up_crossings(&trace, u) as f64);
    }
    Ok(stats::pairwise_sum(&vals) / family.n as f64)
}

/// Estimator results for one `N` of the schedule.
#[derive(Debug, Clone, Copy)]
pub struct ScheduleEntry {
    pub n: usize,
    pub replications: usize,
    pub mean: f64,
    pub variance: f64,
    /// `|T_N^0|_2` for sectors, `|S_N^0|_1` for segments.
    pub domain_measure: f64,
}

/// A full estimator run over an `N`-schedule.
#[derive(Debug, Clone)]
pub struct EstimatorRun {
    pub u: f64,
    pub entries: Vec<ScheduleEntry>,
}

impl EstimatorRun {
    /// CSV with the estimator-run schema. `est_detjac` and the normalized
    /// variance require the regression estimate.
    pub fn to_csv(&self, est: &DetJacEstimate) -> String {
        let mut out = String::from("N,mean_Z,var_Z,area_T0,est_detjac,normalized_var\n");
        for e in &self.entries {
            let norm_var = e.n as f64 * e.variance / (est.det * e.domain_measure);
            out.push_str(&format!(
                "{},{:?},{:?},{:?},{:?},{:?}\n",
                e.n, e.mean, e.variance, e.domain_measure, est.det, norm_var
            ));
        }
        out
    }
}

/// Run the sector estimator over an `N`-schedule with independent
/// replications supplied by `source`, which maps `(n, replication)` to a
/// deformed-field realization (allowing per-N grid resolution).
pub fn run_z_schedule<S>(
    source: S,
    r0: f64,
    phi0: f64,
    schedule: &[usize],
    reps: u64,
    u: f64,
) -> Result<EstimatorRun>
where
    S: Fn(usize, u64) -> Result<GridField> + Sync,
{
    if reps < 30 {
        return Err(Error::UnderResolved(format!(
            "variance estimates need at least 30 replications, got {reps}"
        )));
    }
    let mut entries = Vec::with_capacity(schedule.len());
    for (ni, &n) in schedule.iter().enumerate() {
        let family = SectorFamily::new(r0, phi0, n)?;
        let values: Vec<f64> = (0..reps)
            .into_par_iter()
            .map(|rep| {
                let field = source(n, ni as u64 * reps + rep)?;
                z_estimator(&field, &family, u)
            })
            .collect::<Result<Vec<_>>>()?;
        entries.push(ScheduleEntry {
            n,
            replications: reps as usize,
            mean: stats::mean(&values),
            variance: stats::variance(&values),
            domain_measure: family.sector_area(),
        });
    }
    Ok(EstimatorRun { u, entries })
}

/// Run the segment estimator over an `N`-schedule.
pub fn run_y_schedule<S>(
    source: S,
    base: Vec2,
    schedule: &[usize],
    reps: u64,
    u: f64,
) -> Result<EstimatorRun>
where
    S: Fn(usize, u64) -> Result<GridField> + Sync,
{
    if reps < 30 {
        return Err(Error::UnderResolved(format!(
            "variance estimates need at least 30 replications, got {reps}"
        )));
    }
    let mut entries = Vec::with_capacity(schedule.len());
    for (ni, &n) in schedule.iter().enumerate() {
        let family = SegmentFamily::new(base, n)?;
        let values: Vec<f64> = (0..reps)
            .into_par_iter()
            .map(|rep| {
                let field = source(n, ni as u64 * reps + rep)?;
                y_estimator(&field, &family, u)
            })
            .collect::<Result<Vec<_>>>()?;
        entries.push(ScheduleEntry {
            n,
            replications: reps as usize,
            mean: stats::mean(&values),
            variance: stats::variance(&values),
            domain_measure: family.length(),
        });
    }
    Ok(EstimatorRun { u, entries })
}

/// Jacobian-determinant estimate from a sector-estimator run.
#[derive(Debug, Clone)]
pub struct DetJacEstimate {
    /// `|det J_theta(x)|`.
    pub det: f64,
    /// Raw regression slope of mean Z against the sector area.
    pub slope: f64,
    /// Per-N fit residuals `mean - slope * area`.
    pub residuals: Vec<f64>,
    /// `N Var[Z_N] / (det * |T_N^0|)` across the schedule.
    pub normalized_var: Vec<f64>,
}

/// Regress the schedule means against the sector areas through the origin
/// and divide by the explicit constant `rho_2(u) = u e^{-u^2/2}/(2 pi)^{3/2}`
/// to estimate `|det J_theta(x)|`.
pub fn regress_detjac(run: &EstimatorRun) -> Result<DetJacEstimate> {
    if run.entries.len() < 4 {
        return Err(Error::Regression(format!(
            "need at least 4 schedule points, got {}",
            run.entries.len()
        )));
    }
    let a = rho(2, Level::new(run.u)?)?;
    if a == 0.0 {
        return Err(Error::DegenerateLevel);
    }
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for e in &run.entries {
        sxy += e.mean * e.domain_measure;
        sxx += e.domain_measure * e.domain_measure;
    }
    let slope = sxy / sxx;
    let det = slope / a;
    if !(det > 0.0) {
        return Err(Error::Regression(format!(
            "non-positive determinant estimate {det}"
        )));
    }
    let residuals = run
        .entries
        .iter()
        .map(|e| e.mean - slope * e.domain_measure)
        .collect();
    let normalized_var = run
        .entries
        .iter()
        .map(|e| e.n as f64 * e.variance / (det * e.domain_measure))
        .collect();
    Ok(DetJacEstimate {
        det,
        slope,
        residuals,
        normalized_var,
    })
}

/// Column-norm estimate from a segment-estimator run: slope of mean Y
/// against the segment length, divided by `rho_1(u)`.
pub fn regress_colnorm(run: &EstimatorRun) -> Result<f64> {
    let d = rho(1, Level::new(run.u)?)?;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for e in &run.entries {
        sxy += e.mean * e.domain_measure;
        sxx += e.domain_measure * e.domain_measure;
    }
    let norm = sxy / sxx / d;
    if !(norm > 0.0) {
        return Err(Error::Regression(format!(
            "non-positive column-norm estimate {norm}"
        )));
    }
    Ok(norm)
}

// --- second-moment (variance) formula ---------------------------------------

/// Output of the variance formula evaluation.
#[derive(Debug, Clone)]
pub struct VarianceEstimate {
    /// The full estimate of `Var[phi(A_u(X, theta(T)))]`.
    pub variance: f64,
    /// The single-point term `|theta(T)| g(u) / (2 pi)`.
    pub point_term: f64,
    /// The two-point integral term.
    pub pair_term: f64,
    /// Bound on the contribution of excluded (near-degenerate) small lags.
    pub excluded_bound: f64,
    /// Monte Carlo estimate of `g(u)`.
    pub g_u: f64,
    /// Radial kernel samples `(lag, G D^{-1/2} - h^2)` for diagnostics.
    pub kernel: Vec<(f64, f64)>,
}

/// Evaluate the second-moment formula for the modified Euler characteristic
/// of an excursion of the (unit, isotropic Gaussian-covariance) field over
/// `theta(T)`:
///
/// `Var = ∫ |theta(T) ∩ (theta(T) - t)| (G(u,t) D(t)^{-1/2} - h(u)^2) dt
///        + |theta(T)| g(u) / (2 pi)`
///
/// where `G` conditions the field values and Hessian determinants at lag
/// `t` on vanishing gradients, `D(t)^{-1/2}` is the joint density of those
/// gradients at zero (`D = (2 pi)^4 det(I - C''(t)^2)`), `g(u)` is the
/// one-point version, and `h(u) = rho_2(u)`. `G` and `g` are estimated by
/// Monte Carlo over the exact conditional Gaussian laws assembled from the
/// covariance derivatives; the overlap areas come from raster geometry.
///
/// The closed forms require the Gaussian covariance model (its derivative
/// tensors are hard-coded); the kernel is isotropic, so it is sampled on a
/// radial grid with `mc_budget` conditional draws per node.
pub fn variance_formula(
    theta: &Deformation,
    rect: &Rect,
    u: f64,
    mc_budget: usize,
    seed: u64,
) -> Result<VarianceEstimate> {
    if mc_budget < 10_000 {
        return Err(Error::UnderResolved(format!(
            "conditional Monte Carlo budget {mc_budget} too small (need >= 10^4)"
        )));
    }
    let h_u = rho(2, Level::new(u)?)?;
    let area = deform::image_area(theta, rect)?;

    // g(u) = E[1{X >= u} |det X''|]; (X, X'') is an explicit 4-d Gaussian.
    let g_u = estimate_g(u, 10 * mc_budget, seed ^ 0x9E37_79B9);
    let point_term = area * g_u / TAU;

    // Raster of theta(T) for overlap areas.
    let raster = Raster::build(theta, rect)?;

    // Radial kernel nodes: the kernel decays like the covariance, so cap
    // the lag at the covariance reach; beyond that the integrand vanishes.
    let lag_max = raster.diameter().min(6.0);
    let n_radial = 48;
    let mut kernel = Vec::with_capacity(n_radial);
    let kernel_vals: Vec<(f64, f64, bool)> = (0..n_radial)
        .into_par_iter()
        .map(|i| {
            let lag = lag_max * (i as f64 + 0.5) / n_radial as f64;
            match pair_kernel(
                u,
                lag,
                mc_budget,
                stats::derive_seed(seed, 7_000 + i as u64),
            ) {
                Some(g_pair) => (lag, g_pair - h_u * h_u, false),
                None => (lag, 0.0, true),
            }
        })
        .collect();
    let mut excluded = Vec::new();
    for &(lag, k, was_excluded) in &kernel_vals {
        if was_excluded {
            excluded.push(lag);
        } else {
            kernel.push((lag, k));
        }
    }
    if kernel.len() < 4 {
        return Err(Error::UnderResolved("too few valid kernel nodes".into()));
    }

    // Pair term: integral over the plane in polar form, angular average of
    // the overlap area times the radial kernel.
    let n_angles = 64;
    let mut pair_vals = Vec::with_capacity(kernel.len());
    for &(lag, k) in &kernel {
        let mut overlap_sum = 0.0;
        for a in 0..n_angles {
            let ang = TAU * (a as f64 + 0.5) / n_angles as f64;
            overlap_sum += raster.overlap(Vec2::from_polar(lag, ang));
        }
        let mean_overlap = overlap_sum / n_angles as f64;
        pair_vals.push((lag, TAU * lag * mean_overlap * k));
    }
    // Trapezoid over the radial nodes (uniform spacing, zero extension at 0
    // handled by the half-offset node placement).
    let dr = lag_max / n_radial as f64;
    let pair_term: f64 = pair_vals.iter().map(|&(_, v)| v * dr).sum();

    // Bound for the excluded near-zero lags: |kernel| is continuous; use
    // the nearest valid node's magnitude over the excluded disk.
    let excluded_bound = if excluded.is_empty() {
        0.0
    } else {
        let worst_lag = excluded.iter().cloned().fold(0.0f64, f64::max);
        let nearest_k = kernel
            .iter()
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|&(_, k)| k.abs())
            .unwrap_or(0.0);
        PI * worst_lag * worst_lag * area.min(raster.area()) * nearest_k / area.max(1e-300) * area
    };

    Ok(VarianceEstimate {
        variance: pair_term + point_term,
        point_term,
        pair_term,
        excluded_bound,
        g_u,
        kernel,
    })
}

/// `D(t) = (2 pi)^4 det(I - C''(t)^2)` for the Gaussian covariance.
pub fn density_normalizer(lag: f64) -> f64 {
    let t = Vec2::new(lag, 0.0);
    let h = GaussianDerivatives::hessian(t);
    // det(I - H^2) = det(I - H) det(I + H)
    let m = |s: f64| {
        [
            [1.0 - s * h[0][0], -s * h[0][1]],
            [-s * h[1][0], 1.0 - s * h[1][1]],
        ]
    };
    let det = |m: [[f64; 2]; 2]| m[0][0] * m[1][1] - m[0][1] * m[1][0];
    TAU.powi(4) * det(m(1.0)) * det(m(-1.0))
}

/// Monte Carlo estimate of `g(u) = E[1{X >= u} |det X''(0)|]`.
fn estimate_g(u: f64, budget: usize, seed: u64) -> f64 {
    // Joint law of (X, X''_11, X''_12, X''_22) at one point:
    // Cov(X, X''_ii) = -1, Var(X''_ii) = 3, Cov(X''_11, X''_22) = 1,
    // Var(X''_12) = 1, everything else zero.
    let cov = [
        [1.0, -1.0, 0.0, -1.0],
        [-1.0, 3.0, 0.0, 1.0],
        [0.0, 0.0, 1.0, 0.0],
        [-1.0, 1.0, 0.0, 3.0],
    ];
    let chol = cholesky(&cov).expect("one-point covariance is positive definite");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = Vec::with_capacity(budget);
    let mut z = [0.0f64; 4];
    for _ in 0..budget {
        sample_gaussian(&chol, &mut rng, &mut z);
        let (x, h11, h12, h22) = (z[0], z[1], z[2], z[3]);
        acc.push(if x >= u {
            (h11 * h22 - h12 * h12).abs()
        } else {
            0.0
        });
    }
    stats::mean(&acc)
}

/// Monte Carlo estimate of `G(u, t) D(t)^{-1/2}` at lag `t = (lag, 0)`:
/// the two-point conditional expectation times the gradient density.
/// Returns `None` when the conditioning is numerically degenerate (the
/// small-lag exclusion).
fn pair_kernel(u: f64, lag: f64, budget: usize, seed: u64) -> Option<f64> {
    let t = Vec2::new(lag, 0.0);
    // Z = (X(0), X(t), X''(0)_{11,12,22}, X''(t)_{11,12,22}) : 8 dims
    // W = (X'(0), X'(t)) : 4 dims, conditioned to zero.
    let d2 = |i: usize, j: usize| GaussianDerivatives::d2(t, i, j);
    let d3 = |i: usize, j: usize, k: usize| GaussianDerivatives::d3(t, i, j, k);
    let d4 = |i: usize, j: usize, k: usize, l: usize| GaussianDerivatives::d4(t, i, j, k, l);
    let c = GaussianDerivatives::c(t);
    let d1 = |i: usize| GaussianDerivatives::d1(t, i);

    let hessian_pairs = [(0usize, 0usize), (0, 1), (1, 1)];
    let mut zz = [[0.0f64; 8]; 8];
    // X(0), X(t) block.
    zz[0][0] = 1.0;
    zz[1][1] = 1.0;
    zz[0][1] = c;
    zz[1][0] = c;
    // Same-point second derivatives: d4 at lag 0; cross-point at lag t.
    let zero = Vec2::ZERO;
    for (a, &(i, j)) in hessian_pairs.iter().enumerate() {
        // Cov(X(0), X''(0)) and Cov(X(t), X''(t)):
        let same = GaussianDerivatives::d2(zero, i, j);
        zz[0][2 + a] = same;
        zz[2 + a][0] = same;
        zz[1][5 + a] = same;
        zz[5 + a][1] = same;
        // Cov(X(0), X''(t)) = C_ij(t); Cov(X(t), X''(0)) likewise.
        zz[0][5 + a] = d2(i, j);
        zz[5 + a][0] = d2(i, j);
        zz[1][2 + a] = d2(i, j);
        zz[2 + a][1] = d2(i, j);
        for (b, &(k, l)) in hessian_pairs.iter().enumerate() {
            let same4 = GaussianDerivatives::d4(zero, i, j, k, l);
            zz[2 + a][2 + b] = same4;
            zz[5 + a][5 + b] = same4;
            let cross = d4(i, j, k, l);
            zz[2 + a][5 + b] = cross;
            zz[5 + b][2 + a] = cross;
        }
    }

    let mut ww = [[0.0f64; 4]; 4];
    ww[0][0] = 1.0;
    ww[1][1] = 1.0;
    ww[2][2] = 1.0;
    ww[3][3] = 1.0;
    for i in 0..2 {
        for j in 0..2 {
            // Cov(X'(0)_i, X'(t)_j) = -C_ij(t)
            ww[i][2 + j] = -d2(i, j);
            ww[2 + j][i] = -d2(i, j);
        }
    }

    let mut zw = [[0.0f64; 4]; 8];
    for j in 0..2 {
        // Cov(X(0), X'(t)_j) = C_j(t); Cov(X(t), X'(0)_j) = -C_j(t).
        zw[0][2 + j] = d1(j);
        zw[1][j] = -d1(j);
        // Cov(X(0), X'(0)) = 0; Cov(X(t), X'(t)) = 0.
    }
    for (a, &(i, j)) in hessian_pairs.iter().enumerate() {
        for k in 0..2 {
            // Cov(X''(0)_{ij}, X'(t)_k) = C_ijk(t)
            zw[2 + a][2 + k] = d3(i, j, k);
            // Cov(X''(t)_{ij}, X'(0)_k) = -C_ijk(t)
            zw[5 + a][k] = -d3(i, j, k);
            // Same-point third derivatives vanish.
        }
    }

    // Conditional covariance: ZZ - ZW WW^{-1} WZ.
    let ww_inv = invert4(&ww)?;
    let mut cond = [[0.0f64; 8]; 8];
    for a in 0..8 {
        for b in 0..8 {
            let mut corr = 0.0;
            for p in 0..4 {
                for q in 0..4 {
                    corr += zw[a][p] * ww_inv[p][q] * zw[b][q];
                }
            }
            cond[a][b] = zz[a][b] - corr;
        }
    }
    let chol = cholesky8(&cond)?;

    // Gradient density at zero: (2 pi)^{-2} det(WW)^{-1/2} = D(t)^{-1/2}.
    let det_ww = det4(&ww);
    if det_ww <= 1e-12 {
        return None;
    }
    let density = 1.0 / (TAU * TAU * det_ww.sqrt());

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = Vec::with_capacity(budget);
    let mut z = [0.0f64; 8];
    for _ in 0..budget {
        sample_gaussian8(&chol, &mut rng, &mut z);
        if z[0] >= u && z[1] >= u {
            let det0 = z[2] * z[4] - z[3] * z[3];
            let det1 = z[5] * z[7] - z[6] * z[6];
            acc.push(det0 * det1);
        } else {
            acc.push(0.0);
        }
    }
    Some(stats::mean(&acc) * density)
}

fn cholesky(m: &[[f64; 4]; 4]) -> Option<[[f64; 4]; 4]> {
    let mut l = [[0.0f64; 4]; 4];
    for i in 0..4 {
        for j in 0..=i {
            let mut sum = m[i][j];
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                if sum <= 1e-8 {
                    return None;
                }
                l[i][j] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    Some(l)
}

fn cholesky8(m: &[[f64; 8]; 8]) -> Option<[[f64; 8]; 8]> {
    let mut l = [[0.0f64; 8]; 8];
    for i in 0..8 {
        for j in 0..=i {
            let mut sum = m[i][j];
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                if sum <= 1e-8 {
                    return None;
                }
                l[i][j] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    Some(l)
}

fn sample_gaussian(l: &[[f64; 4]; 4], rng: &mut ChaCha8Rng, out: &mut [f64; 4]) {
    let mut xi = [0.0f64; 4];
    for v in xi.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
    for i in 0..4 {
        let mut s = 0.0;
        for k in 0..=i {
            s += l[i][k] * xi[k];
        }
        out[i] = s;
    }
}

fn sample_gaussian8(l: &[[f64; 8]; 8], rng: &mut ChaCha8Rng, out: &mut [f64; 8]) {
    let mut xi = [0.0f64; 8];
    for v in xi.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
    for i in 0..8 {
        let mut s = 0.0;
        for k in 0..=i {
            s += l[i][k] * xi[k];
        }
        out[i] = s;
    }
}

fn invert4(m: &[[f64; 4]; 4]) -> Option<[[f64; 4]; 4]> {
    // Gauss-Jordan with partial pivoting on an augmented matrix.
    let mut a = [[0.0f64; 8]; 4];
    for i in 0..4 {
        for j in 0..4 {
            a[i][j] = m[i][j];
        }
        a[i][4 + i] = 1.0;
    }
    for col in 0..4 {
        let mut pivot = col;
        for r in col + 1..4 {
            if a[r][col].abs() > a[pivot][col].abs() {
                pivot = r;
            }
        }
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        let p = a[col][col];
        for j in 0..8 {
            a[col][j] /= p;
        }
        for r in 0..4 {
            if r != col {
                let f = a[r][col];
                for j in 0..8 {
                    a[r][j] -= f * a[col][j];
                }
            }
        }
    }
    let mut out = [[0.0f64; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = a[i][4 + j];
        }
    }
    Some(out)
}

fn det4(m: &[[f64; 4]; 4]) -> f64 {
    let mut a = *m;
    let mut det = 1.0;
    for col in 0..4 {
        let mut pivot = col;
        for r in col + 1..4 {
            if a[r][col].abs() > a[pivot][col].abs() {
                pivot = r;
            }
        }
        if a[pivot][col] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            a.swap(col, pivot);
            det = -det;
        }
        det *= a[col][col];
        for r in col + 1..4 {
            let f = a[r][col] / a[col][col];
            for j in col..4 {
                a[r][j] -= f * a[col][j];
            }
        }
    }
    det
}

/// Bit raster of the image region `theta(T)` for overlap-area queries.
struct Raster {
    words_per_row: usize,
    rows: usize,
    cols: usize,
    cell: f64,
    bits: Vec<u64>,
    set_count: u64,
    diag: f64,
}

impl Raster {
    /// Resolution target: relative area error about 1e-3 (boundary cells
    /// over interior cells scale like perimeter * cell / area).
    fn build(theta: &Deformation, rect: &Rect) -> Result<Raster> {
        // Bounding box of the image from a dense boundary sample.
        let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        let m = 256;
        for i in 0..=m {
            let f = i as f64 / m as f64;
            for p in [
                rect.point(rect.width() * f, 0.0),
                rect.point(rect.width() * f, rect.height()),
                rect.point(0.0, rect.height() * f),
                rect.point(rect.width(), rect.height() * f),
            ] {
                let y = theta.eval(p)?;
                lo = Vec2::new(lo.x.min(y.x), lo.y.min(y.y));
                hi = Vec2::new(hi.x.max(y.x), hi.y.max(y.y));
            }
        }
        let span = (hi.x - lo.x).max(hi.y - lo.y);
        let cols = 2000usize;
        let cell = span / cols as f64 * 1.0001;
        let rows = ((hi.y - lo.y) / cell).ceil() as usize + 2;
        let cols = ((hi.x - lo.x) / cell).ceil() as usize + 2;
        let words_per_row = cols.div_ceil(64);
        let mut bits = vec![0u64; words_per_row * rows];

        // Forward fill: map a T-lattice fine enough that no raster cell
        // inside the image is skipped (step bounded by the inverse of the
        // maximal stretch of theta over T).
        let mut max_stretch = 1.0f64;
        for i in 0..8 {
            for j in 0..8 {
                let p = rect.point(
                    rect.width() * (i as f64 + 0.5) / 8.0,
                    rect.height() * (j as f64 + 0.5) / 8.0,
                );
                let jac = theta.jacobian(p)?;
                max_stretch = max_stretch.max(jac.col(0).norm()).max(jac.col(1).norm());
            }
        }
        let step = cell / (2.0 * max_stretch);
        let nu = (rect.width() / step).ceil() as usize + 1;
        let nv = (rect.height() / step).ceil() as usize + 1;
        for iu in 0..=nu {
            let uu = rect.width() * iu as f64 / nu as f64;
            for iv in 0..=nv {
                let vv = rect.height() * iv as f64 / nv as f64;
                let y = theta.eval(rect.point(uu, vv))?;
                let cx = ((y.x - lo.x) / cell) as usize;
                let cy = ((y.y - lo.y) / cell) as usize;
                if cy < rows && cx < cols {
                    bits[cy * words_per_row + cx / 64] |= 1u64 << (cx % 64);
                }
            }
        }
        let set_count: u64 = bits.iter().map(|w| w.count_ones() as u64).sum();
        let diag = ((hi.x - lo.x).powi(2) + (hi.y - lo.y).powi(2)).sqrt();
        Ok(Raster {
            words_per_row,
            rows,
            cols,
            cell,
            bits,
            set_count,
            diag,
        })
    }

    fn area(&self) -> f64 {
        self.set_count as f64 * self.cell * self.cell
    }

    fn diameter(&self) -> f64 {
        self.diag
    }

    /// `|R ∩ (R - t)|` with `t` snapped to whole cells.
    fn overlap(&self, t: Vec2) -> f64 {
        let dx = (t.x / self.cell).round() as isize;
        let dy = (t.y / self.cell).round() as isize;
        if dx.unsigned_abs() >= self.cols || dy.unsigned_abs() >= self.rows {
            return 0.0;
        }
        let mut count = 0u64;
        let wpr = self.words_per_row as isize;
        let (word_shift, bit_shift) = (dx.div_euclid(64), dx.rem_euclid(64) as u32);
        for row in 0..self.rows as isize {
            let src_row = row + dy;
            if src_row < 0 || src_row >= self.rows as isize {
                continue;
            }
            let base = row * wpr;
            let src_base = src_row * wpr;
            for w in 0..wpr {
                // Bits of (R - t): row src_row, columns shifted by dx.
                let sw = w + word_shift;
                let lo_word = if sw >= 0 && sw < wpr {
                    self.bits[(src_base + sw) as usize]
                } else {
                    0
                };
                let hi_word = if sw + 1 >= 0 && sw + 1 < wpr {
                    self.bits[(src_base + sw + 1) as usize]
                } else {
                    0
                };
                let shifted = if bit_shift == 0 {
                    lo_word
                } else {
                    (lo_word >> bit_shift) | (hi_word << (64 - bit_shift))
                };
                count += (self.bits[(base + w) as usize] & shifted).count_ones() as u64;
            }
        }
        count as f64 * self.cell * self.cell
    }
}
