//! Deformation identification from mean modified Euler characteristics.
//!
//! Over basic domains (axis segments and coordinate rectangles), the mean
//! modified Euler characteristic determines the measure of the deformed
//! domain. Inverting those relations and differentiating with respect to
//! the domain dimensions recovers, at every point, the Jacobian column
//! norms `a`, `b` and the determinant `c` of the unknown deformation. The
//! Jacobian itself is then pinned down up to a rotation and a sign branch:
//! it lies in the two-representative matrix class `M(a, b, c)`, and the
//! complex dilatation takes one of two conjugate values `C(a, b, c)`.
//!
//! The methods here work with the modified Euler characteristic; adapting
//! them to the plain Euler characteristic (whose expectation adds boundary
//! and constant terms) is a documented extension point: replace the
//! inversion formulas with the affine ones and keep the differentiation
//! pipeline unchanged.

use crate::covariance::{expected_phi, gauss_tail, rho, Level};
use crate::deform::{self, Deformation, Rect, Segment};
use crate::excursion;
use crate::field::{self, GridSpec};
use crate::geom::{Grid2, Mat2, Vec2};
use crate::stats;
use crate::{Error, Result};
use std::collections::BTreeMap;
use std::f64::consts::TAU;

/// Total-order wrapper so that f64 coordinates can key a BTreeMap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct K(pub f64);

impl Eq for K {}

impl PartialOrd for K {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for K {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Basic observation domains keyed by their signed coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum TableDomain {
    /// `[0, s] x {t}`
    HSeg { s: K, t: K },
    /// `{s} x [0, t]`
    VSeg { s: K, t: K },
    /// `T(s, t) = [0, s] x [0, t]`
    Rect { s: K, t: K },
}

impl TableDomain {
    pub fn hseg(s: f64, t: f64) -> Self {
        TableDomain::HSeg { s: K(s), t: K(t) }
    }

    pub fn vseg(s: f64, t: f64) -> Self {
        TableDomain::VSeg { s: K(s), t: K(t) }
    }

    pub fn rect(s: f64, t: f64) -> Self {
        TableDomain::Rect { s: K(s), t: K(t) }
    }

    fn kind_name(&self) -> &'static str {
        match self {
            TableDomain::HSeg { .. } => "hseg",
            TableDomain::VSeg { .. } => "vseg",
            TableDomain::Rect { .. } => "rect",
        }
    }

    fn coords(&self) -> (f64, f64) {
        match self {
            TableDomain::HSeg { s, t }
            | TableDomain::VSeg { s, t }
            | TableDomain::Rect { s, t } => (s.0, t.0),
        }
    }
}

/// One table entry: the mean modified Euler characteristic of the excursion
/// of the deformed field over the domain, with its uncertainty.
#[derive(Debug, Clone, Copy)]
pub struct MeanEcEntry {
    pub mean_phi: f64,
    pub std_err: f64,
    pub n_samples: u64,
}

/// Mean modified Euler characteristics over basic domains at one level.
#[derive(Debug, Clone)]
pub struct MeanEcTable {
    pub u: f64,
    entries: BTreeMap<TableDomain, MeanEcEntry>,
}

impl MeanEcTable {
    pub fn new(u: f64) -> Self {
        MeanEcTable {
            u,
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, domain: TableDomain, entry: MeanEcEntry) {
        self.entries.insert(domain, entry);
    }

    pub fn get(&self, domain: &TableDomain) -> Option<&MeanEcEntry> {
        self.entries.get(domain)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&TableDomain, &MeanEcEntry)> {
        self.entries.iter()
    }

    fn require(&self, domain: TableDomain) -> Result<&MeanEcEntry> {
        let (s, t) = domain.coords();
        self.entries
            .get(&domain)
            .ok_or_else(|| Error::MissingEntry(format!("{} at ({s}, {t})", domain.kind_name())))
    }

    /// CSV serialization: one row per domain, stable ordering.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("domain_kind,s,t,u,mean_phi,std_err,n\n");
        for (d, e) in &self.entries {
            let (s, t) = d.coords();
            out.push_str(&format!(
                "{},{s:?},{t:?},{:?},{:?},{:?},{}\n",
                d.kind_name(),
                self.u,
                e.mean_phi,
                e.std_err,
                e.n_samples
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .filter(|l| !l.starts_with('#') && !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty table".into()))?;
        if header.trim() != "domain_kind,s,t,u,mean_phi,std_err,n" {
            return Err(Error::Format(format!("unexpected table header `{header}`")));
        }
        let mut table: Option<MeanEcTable> = None;
        for line in lines {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(Error::Format(format!("bad table row `{line}`")));
            }
            let num = |s: &str| -> Result<f64> {
                s.parse()
                    .map_err(|_| Error::Format(format!("bad number `{s}`")))
            };
            let (s, t, u) = (num(f[1])?, num(f[2])?, num(f[3])?);
            let domain = match f[0] {
                "hseg" => TableDomain::hseg(s, t),
                "vseg" => TableDomain::vseg(s, t),
                "rect" => TableDomain::rect(s, t),
                k => return Err(Error::Format(format!("unknown domain kind `{k}`"))),
            };
            let entry = MeanEcEntry {
                mean_phi: num(f[4])?,
                std_err: num(f[5])?,
                n_samples: f[6].parse().map_err(|_| Error::Format("bad n".into()))?,
            };
            let table = table.get_or_insert_with(|| MeanEcTable::new(u));
            if (table.u - u).abs() > 0.0 {
                return Err(Error::Format("mixed levels in one table".into()));
            }
            table.insert(domain, entry);
        }
        table.ok_or_else(|| Error::Format("table has no rows".into()))
    }
}

/// Invert the 1-d modified EC formula: `length = mean_phi * 2 pi * e^{u^2/2}`.
pub fn invert_phi_1d(mean_phi: f64, u: Level) -> f64 {
    mean_phi * TAU * (0.5 * u.0 * u.0).exp()
}

/// Invert the 2-d modified EC formula:
/// `area = mean_phi * (2 pi)^{3/2} * e^{u^2/2} / u`. Degenerate at `u = 0`.
pub fn invert_phi_2d(mean_phi: f64, u: Level) -> Result<f64> {
    if u.0 == 0.0 {
        return Err(Error::DegenerateLevel);
    }
    Ok(mean_phi * TAU.powf(1.5) * (0.5 * u.0 * u.0).exp() / u.0)
}

/// The two canonical upper-triangular representatives of the matrices with
/// column norms `(a, b)` and determinant `c`; the full class is these two
/// composed with arbitrary rotations on the left.
#[derive(Debug, Clone, Copy)]
pub struct MatrixClass {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl MatrixClass {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0) {
            return Err(Error::Identification(format!(
                "column norms must be positive, got a={a}, b={b}"
            )));
        }
        if !(c > 0.0) {
            return Err(Error::Identification(format!(
                "determinant must be positive, got c={c}"
            )));
        }
        if c > a * b * (1.0 + 1e-9) {
            return Err(Error::Identification(format!(
                "inconsistent data: c = {c} exceeds a*b = {}",
                a * b
            )));
        }
        Ok(MatrixClass { a, b, c })
    }

    /// The two representatives `[[a, +-sqrt(b^2 - (c/a)^2)], [0, c/a]]`.
    pub fn representatives(&self) -> [Mat2; 2] {
        let off = (self.b * self.b - (self.c / self.a).powi(2))
            .max(0.0)
            .sqrt();
        [
            Mat2::new(self.a, off, 0.0, self.c / self.a),
            Mat2::new(self.a, -off, 0.0, self.c / self.a),
        ]
    }

    /// The two candidate angles between the column vectors:
    /// `arcsin(c/(ab))` and `pi - arcsin(c/(ab))`.
    pub fn column_angles(&self) -> (f64, f64) {
        let d = (self.c / (self.a * self.b)).clamp(-1.0, 1.0).asin();
        (d, std::f64::consts::PI - d)
    }
}

/// The two conjugate complex dilatation candidates determined by `(a, b, c)`.
#[derive(Debug, Clone, Copy)]
pub struct DilatationCandidates {
    /// Real and imaginary part of the `+` branch; the other candidate is
    /// the conjugate.
    pub re: f64,
    pub im: f64,
}

impl DilatationCandidates {
    /// `mu = (a^2 - b^2 +- 2 i sqrt(a^2 b^2 - c^2)) / (a^2 + b^2 + 2c)`.
    ///
    /// The discriminant is computed as `(ab - c)(ab + c)` so that inputs
    /// with `c == a*b` exactly produce a dilatation of exactly zero.
    pub fn from_abc(a: f64, b: f64, c: f64) -> Result<Self> {
        let disc = (a * b - c) * (a * b + c);
        if disc < -1e-9 * (a * b).powi(2) {
            return Err(Error::Identification(format!(
                "inconsistent data: c = {c} exceeds a*b = {}",
                a * b
            )));
        }
        let denom = a * a + b * b + 2.0 * c;
        Ok(DilatationCandidates {
            re: (a * a - b * b) / denom,
            im: 2.0 * disc.max(0.0).sqrt() / denom,
        })
    }

    /// Modulus shared by both candidates.
    pub fn modulus(&self) -> f64 {
        self.re.hypot(self.im)
    }

    pub fn candidates(&self) -> [(f64, f64); 2] {
        [(self.re, self.im), (self.re, -self.im)]
    }
}

/// Result of the linear identification method.
#[derive(Debug, Clone)]
pub struct LinearIdentification {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub class: MatrixClass,
    pub dilatation: DilatationCandidates,
    /// Candidate angles between the Jacobian columns.
    pub delta: (f64, f64),
}

/// Recover `(a, b, c)` of an unknown linear deformation from the mean
/// modified Euler characteristics over one horizontal segment, one vertical
/// segment and one rectangle.
pub fn identify_linear(table: &MeanEcTable, s: f64, t: f64) -> Result<LinearIdentification> {
    if s == 0.0 || t == 0.0 {
        return Err(Error::Identification(
            "segment extents must be nonzero".into(),
        ));
    }
    let u = Level::new(table.u)?;
    let h = table.require(TableDomain::hseg(s, 0.0))?;
    let v = table.require(TableDomain::vseg(0.0, t))?;
    let r = table.require(TableDomain::rect(s, t))?;
    for e in [h, v, r] {
        if e.mean_phi < -3.0 * e.std_err {
            return Err(Error::Identification(format!(
                "mean phi {} is negative beyond 3 standard errors",
                e.mean_phi
            )));
        }
    }
    let a = invert_phi_1d(h.mean_phi, u) / s.abs();
    let b = invert_phi_1d(v.mean_phi, u) / t.abs();
    let c = invert_phi_2d(r.mean_phi, u)? / (s * t).abs();
    let class = MatrixClass::new(a, b, c)?;
    let dilatation = DilatationCandidates::from_abc(a, b, c)?;
    let delta = class.column_angles();
    Ok(LinearIdentification {
        a,
        b,
        c,
        class,
        dilatation,
        delta,
    })
}

/// Jacobian data recovered at one node of the partition.
#[derive(Debug, Clone, Copy)]
pub struct AbcNode {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Uncertainties propagated linearly from the table's standard errors.
    pub err_a: f64,
    pub err_b: f64,
    pub err_c: f64,
    /// Richardson estimates of the finite-difference truncation error.
    pub trunc_a: f64,
    pub trunc_b: f64,
    pub trunc_c: f64,
    /// Set when the node violates monotonicity or consistency beyond noise.
    pub flagged: bool,
}

/// Jacobian summaries over the partition lattice.
#[derive(Debug, Clone)]
pub struct AbcField {
    /// The common partition of both axes.
    pub sigma: Vec<f64>,
    /// Indexed `(i_s, i_t)`.
    pub nodes: Grid2<AbcNode>,
}

impl AbcField {
    pub fn node(&self, i_s: usize, i_t: usize) -> &AbcNode {
        &self.nodes[(i_s, i_t)]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,t,a,b,c,err_a,err_b,err_c\n");
        for (i, &s) in self.sigma.iter().enumerate() {
            for (j, &t) in self.sigma.iter().enumerate() {
                let n = self.node(i, j);
                out.push_str(&format!(
                    "{s:?},{t:?},{:?},{:?},{:?},{:?},{:?},{:?}\n",
                    n.a, n.b, n.c, n.err_a, n.err_b, n.err_c
                ));
            }
        }
        out
    }
}

impl Default for AbcNode {
    fn default() -> Self {
        AbcNode {
            a: f64::NAN,
            b: f64::NAN,
            c: f64::NAN,
            err_a: 0.0,
            err_b: 0.0,
            err_c: 0.0,
            trunc_a: 0.0,
            trunc_b: 0.0,
            trunc_c: 0.0,
            flagged: false,
        }
    }
}

/// Fourth-order first derivative of uniformly sampled values, with biased
/// stencils of the same order at the boundary nodes.
fn derivative4(values: &[f64], h: f64) -> Vec<f64> {
    let n = values.len();
    assert!(
        n >= 5,
        "need at least 5 nodes for the fourth-order stencils"
    );
    let f = values;
    let mut out = vec![0.0; n];
    out[0] = (-25.0 * f[0] + 48.0 * f[1] - 36.0 * f[2] + 16.0 * f[3] - 3.0 * f[4]) / (12.0 * h);
    out[1] = (-3.0 * f[0] - 10.0 * f[1] + 18.0 * f[2] - 6.0 * f[3] + f[4]) / (12.0 * h);
    for i in 2..n - 2 {
        out[i] = (-f[i + 2] + 8.0 * f[i + 1] - 8.0 * f[i - 1] + f[i - 2]) / (12.0 * h);
    }
    out[n - 2] = (3.0 * f[n - 1] + 10.0 * f[n - 2] - 18.0 * f[n - 3] + 6.0 * f[n - 4] - f[n - 5])
        / (12.0 * h);
    out[n - 1] = (25.0 * f[n - 1] - 48.0 * f[n - 2] + 36.0 * f[n - 3] - 16.0 * f[n - 4]
        + 3.0 * f[n - 5])
        / (12.0 * h);
    out
}

/// Linear error propagation through the same stencils.
fn derivative4_err(errors: &[f64], h: f64) -> Vec<f64> {
    let n = errors.len();
    let e = errors;
    let q = |weights: &[f64], vals: &[f64]| -> f64 {
        weights
            .iter()
            .zip(vals.iter())
            .map(|(w, v)| (w * v).powi(2))
            .sum::<f64>()
            .sqrt()
            / (12.0 * h)
    };
    let mut out = vec![0.0; n];
    out[0] = q(&[25.0, 48.0, 36.0, 16.0, 3.0], &e[0..5]);
    out[1] = q(&[3.0, 10.0, 18.0, 6.0, 1.0], &e[0..5]);
    for i in 2..n - 2 {
        out[i] = q(
            &[1.0, 8.0, 8.0, 1.0],
            &[e[i + 2], e[i + 1], e[i - 1], e[i - 2]],
        );
    }
    out[n - 2] = q(
        &[3.0, 10.0, 18.0, 6.0, 1.0],
        &[e[n - 1], e[n - 2], e[n - 3], e[n - 4], e[n - 5]],
    );
    out[n - 1] = q(
        &[25.0, 48.0, 36.0, 16.0, 3.0],
        &[e[n - 1], e[n - 2], e[n - 3], e[n - 4], e[n - 5]],
    );
    out
}

/// Richardson truncation estimates: compare the interior stencil at step h
/// against the stride-2 stencil at step 2h where available.
fn truncation_estimate(values: &[f64], h: f64, deriv: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut out = vec![0.0; n];
    let f = values;
    for i in 4..n.saturating_sub(4) {
        let d2h = (-f[i + 4] + 8.0 * f[i + 2] - 8.0 * f[i - 2] + f[i - 4]) / (24.0 * h);
        out[i] = (deriv[i] - d2h).abs() / 15.0;
    }
    // Nothing to compare against near the edges; copy the nearest interior
    // estimate as a conservative stand-in.
    if n > 8 {
        for i in 0..4 {
            out[i] = out[4];
            out[n - 1 - i] = out[n - 5];
        }
    }
    out
}

/// Recover the Jacobian summary fields `a(s,t)`, `b(s,t)`, `c(s,t)` from a
/// table holding, for every `(s, t)` in a uniform partition of `[-S, S]`,
/// the mean modified EC over `[0,s] x {t}`, `{s} x [0,t]` and `T(s, t)`.
///
/// Lengths and areas enter signed (`sgn(s) L(s, t)` and so on), which makes
/// them smooth through 0 and lets one fourth-order differentiation recover
/// `a = |J^1|`, `b = |J^2|` and (after the mixed second derivative)
/// `c = det J` directly.
pub fn recover_abc_field(table: &MeanEcTable, sigma: &[f64]) -> Result<AbcField> {
    let n = sigma.len();
    if n < 5 {
        return Err(Error::Identification(format!(
            "partition too coarse: {n} nodes (need at least 5)"
        )));
    }
    let h = sigma[1] - sigma[0];
    for w in sigma.windows(2) {
        if ((w[1] - w[0]) - h).abs() > 1e-9 * h.abs() {
            return Err(Error::Identification("partition is not uniform".into()));
        }
    }
    let u = Level::new(table.u)?;
    if table.u == 0.0 {
        return Err(Error::DegenerateLevel);
    }

    // Signed length/area lookups; the degenerate domains at coordinate 0
    // are identically zero and need no table entry.
    let signed_len_h = |s: f64, t: f64| -> Result<(f64, f64)> {
        if s == 0.0 {
            return Ok((0.0, 0.0));
        }
        let e = table.require(TableDomain::hseg(s, t))?;
        let scale = TAU * (0.5 * table.u * table.u).exp();
        Ok((s.signum() * invert_phi_1d(e.mean_phi, u), scale * e.std_err))
    };
    let signed_len_v = |s: f64, t: f64| -> Result<(f64, f64)> {
        if t == 0.0 {
            return Ok((0.0, 0.0));
        }
        let e = table.require(TableDomain::vseg(s, t))?;
        let scale = TAU * (0.5 * table.u * table.u).exp();
        Ok((t.signum() * invert_phi_1d(e.mean_phi, u), scale * e.std_err))
    };
    let signed_area = |s: f64, t: f64| -> Result<(f64, f64)> {
        if s == 0.0 || t == 0.0 {
            return Ok((0.0, 0.0));
        }
        let e = table.require(TableDomain::rect(s, t))?;
        let scale = TAU.powf(1.5) * (0.5 * table.u * table.u).exp() / table.u.abs();
        Ok((
            s.signum() * t.signum() * invert_phi_2d(e.mean_phi, u)?,
            scale * e.std_err,
        ))
    };

    let mut nodes: Grid2<AbcNode> = Grid2::zeros(n, n);

    // a(s, t): differentiate s -> sgn(s) |theta([0,s] x {t})| at fixed t.
    for (jt, &t) in sigma.iter().enumerate() {
        let mut vals = Vec::with_capacity(n);
        let mut errs = Vec::with_capacity(n);
        for &s in sigma {
            let (v, e) = signed_len_h(s, t)?;
            vals.push(v);
            errs.push(e);
        }
        let deriv = derivative4(&vals, h);
        let derr = derivative4_err(&errs, h);
        let trunc = truncation_estimate(&vals, h, &deriv);
        // Monotonicity check: the signed cumulative length must increase.
        for i in 0..n - 1 {
            let slack = 3.0 * (errs[i] + errs[i + 1]);
            if vals[i + 1] - vals[i] < -slack {
                nodes[(i, jt)].flagged = true;
                nodes[(i + 1, jt)].flagged = true;
            }
        }
        for i in 0..n {
            nodes[(i, jt)].a = deriv[i];
            nodes[(i, jt)].err_a = derr[i];
            nodes[(i, jt)].trunc_a = trunc[i];
        }
    }

    // b(s, t): differentiate t -> sgn(t) |theta({s} x [0,t])| at fixed s.
    for (is, &s) in sigma.iter().enumerate() {
        let mut vals = Vec::with_capacity(n);
        let mut errs = Vec::with_capacity(n);
        for &t in sigma {
            let (v, e) = signed_len_v(s, t)?;
            vals.push(v);
            errs.push(e);
        }
        let deriv = derivative4(&vals, h);
        let derr = derivative4_err(&errs, h);
        let trunc = truncation_estimate(&vals, h, &deriv);
        for j in 0..n - 1 {
            let slack = 3.0 * (errs[j] + errs[j + 1]);
            if vals[j + 1] - vals[j] < -slack {
                nodes[(is, j)].flagged = true;
                nodes[(is, j + 1)].flagged = true;
            }
        }
        for j in 0..n {
            nodes[(is, j)].b = deriv[j];
            nodes[(is, j)].err_b = derr[j];
            nodes[(is, j)].trunc_b = trunc[j];
        }
    }

    // c(s, t): mixed second derivative of the signed area function.
    let mut area = Grid2::<f64>::zeros(n, n);
    let mut area_err = Grid2::<f64>::zeros(n, n);
    for (is, &s) in sigma.iter().enumerate() {
        for (jt, &t) in sigma.iter().enumerate() {
            let (v, e) = signed_area(s, t)?;
            area[(is, jt)] = v;
            area_err[(is, jt)] = e;
        }
    }
    // d/ds along each t-column, then d/dt along each s-row.
    let mut da_ds = Grid2::<f64>::zeros(n, n);
    let mut da_ds_err = Grid2::<f64>::zeros(n, n);
    for jt in 0..n {
        let col: Vec<f64> = (0..n).map(|is| area[(is, jt)]).collect();
        let cerr: Vec<f64> = (0..n).map(|is| area_err[(is, jt)]).collect();
        let d = derivative4(&col, h);
        let de = derivative4_err(&cerr, h);
        for is in 0..n {
            da_ds[(is, jt)] = d[is];
            da_ds_err[(is, jt)] = de[is];
        }
    }
    for is in 0..n {
        let row: Vec<f64> = (0..n).map(|jt| da_ds[(is, jt)]).collect();
        let rerr: Vec<f64> = (0..n).map(|jt| da_ds_err[(is, jt)]).collect();
        let d = derivative4(&row, h);
        let de = derivative4_err(&rerr, h);
        let trunc = truncation_estimate(&row, h, &d);
        for jt in 0..n {
            nodes[(is, jt)].c = d[jt];
            nodes[(is, jt)].err_c = de[jt];
            nodes[(is, jt)].trunc_c = trunc[jt];
        }
    }

    // Consistency flags.
    for is in 0..n {
        for jt in 0..n {
            let nd = &mut nodes[(is, jt)];
            let err = 3.0 * (nd.err_a * nd.b.abs() + nd.err_b * nd.a.abs() + nd.err_c);
            if !(nd.a > 0.0) || !(nd.b > 0.0) || nd.c <= 0.0 || nd.c > nd.a * nd.b + err + 1e-9 {
                nd.flagged = true;
            }
            let rel = 0.2;
            if nd.err_a > rel * nd.a.abs()
                || nd.err_b > rel * nd.b.abs()
                || nd.err_c > rel * nd.c.abs()
            {
                nd.flagged = true;
            }
        }
    }

    Ok(AbcField {
        sigma: sigma.to_vec(),
        nodes,
    })
}

/// Tensorial identification output: derivative magnitudes on the partition
/// and, when the coordinate signs are supplied, the reconstructed
/// coordinate functions.
#[derive(Debug, Clone)]
pub struct TensorialIdentification {
    pub sigma: Vec<f64>,
    pub d1_abs: Vec<f64>,
    pub d2_abs: Vec<f64>,
    /// `theta_i(sigma_j)`, present only when the signs are known.
    pub theta1: Option<Vec<f64>>,
    pub theta2: Option<Vec<f64>>,
}

/// Recover a tensorial deformation `theta(s, t) = (theta1(s), theta2(t))`
/// from axis-segment tables. The cumulative signed lengths *are* the
/// integrals of `|theta_i'|`, so the coordinate functions are
/// `sign * cumulative length` directly; the derivative magnitudes come from
/// fourth-order differentiation.
pub fn identify_tensorial(
    table: &MeanEcTable,
    sigma: &[f64],
    signs: Option<(f64, f64)>,
) -> Result<TensorialIdentification> {
    let n = sigma.len();
    if n < 5 {
        return Err(Error::Identification(format!(
            "partition too coarse: {n} nodes (need at least 5)"
        )));
    }
    let h = sigma[1] - sigma[0];
    for w in sigma.windows(2) {
        if ((w[1] - w[0]) - h).abs() > 1e-9 * h.abs() {
            return Err(Error::Identification("partition is not uniform".into()));
        }
    }
    let u = Level::new(table.u)?;
    let mut len1 = Vec::with_capacity(n);
    let mut len2 = Vec::with_capacity(n);
    for &s in sigma {
        if s == 0.0 {
            len1.push(0.0);
            len2.push(0.0);
            continue;
        }
        let e1 = table.require(TableDomain::hseg(s, 0.0))?;
        let e2 = table.require(TableDomain::vseg(0.0, s))?;
        len1.push(s.signum() * invert_phi_1d(e1.mean_phi, u));
        len2.push(s.signum() * invert_phi_1d(e2.mean_phi, u));
    }
    let d1: Vec<f64> = derivative4(&len1, h);
    let d2: Vec<f64> = derivative4(&len2, h);
    let (theta1, theta2) = match signs {
        Some((s1, s2)) => (
            Some(len1.iter().map(|v| s1.signum() * v).collect()),
            Some(len2.iter().map(|v| s2.signum() * v).collect()),
        ),
        None => (None, None),
    };
    Ok(TensorialIdentification {
        sigma: sigma.to_vec(),
        d1_abs: d1.iter().map(|v| v.abs()).collect(),
        d2_abs: d2.iter().map(|v| v.abs()).collect(),
        theta1,
        theta2,
    })
}

/// Power-law fit result.
#[derive(Debug, Clone, Copy)]
pub struct PowerLawFit {
    pub alpha: f64,
    /// `log |alpha|` implied by the intercept, for the consistency residual.
    pub intercept: f64,
    /// Maximum absolute log-residual of the fit.
    pub residual: f64,
    /// Whether the constant-derivative branch (`alpha = 1`) was taken.
    pub constant_branch: bool,
}

/// Fit `|theta'(s)| = |alpha| s^(alpha - 1)` on samples over `(0, 1]` by
/// least squares in log-log coordinates. Constant samples short-circuit to
/// `alpha = 1`.
pub fn fit_power_law(samples: &[(f64, f64)]) -> Result<PowerLawFit> {
    if samples.len() < 2 {
        return Err(Error::Regression("need at least two samples".into()));
    }
    for &(s, d) in samples {
        if !(s > 0.0) || !(d > 0.0) {
            return Err(Error::Regression(format!(
                "samples must be positive, got ({s}, {d})"
            )));
        }
    }
    let first = samples[0].1;
    let spread = samples
        .iter()
        .map(|&(_, d)| (d - first).abs())
        .fold(0.0f64, f64::max);
    if spread <= 1e-9 * first.abs() {
        return Ok(PowerLawFit {
            alpha: 1.0,
            intercept: first.ln(),
            residual: 0.0,
            constant_branch: true,
        });
    }
    let xs: Vec<f64> = samples.iter().map(|&(s, _)| s.ln()).collect();
    let ys: Vec<f64> = samples.iter().map(|&(_, d)| d.ln()).collect();
    let mx = stats::mean(&xs);
    let my = stats::mean(&ys);
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys.iter()) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 {
        return Err(Error::Regression("degenerate abscissas".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let alpha = slope + 1.0;
    let residual = xs
        .iter()
        .zip(ys.iter())
        .map(|(x, y)| (y - (intercept + slope * x)).abs())
        .fold(0.0f64, f64::max);
    Ok(PowerLawFit {
        alpha,
        intercept,
        residual,
        constant_branch: false,
    })
}

/// Verdict of the rotation-invariance test.
#[derive(Debug, Clone)]
pub struct IsotropyReport {
    pub analytic_pass: bool,
    pub analytic_worst_deviation: f64,
    pub analytic_worst_angle: f64,
    pub jacobian_pass: bool,
    pub jacobian_worst_deviation: f64,
    pub jacobian_worst_angle: f64,
}

/// Default tolerance of the analytic mode.
pub const ISOTROPY_ANALYTIC_TOL: f64 = 1e-6;
/// Default tolerance of the Jacobian mode.
pub const ISOTROPY_JACOBIAN_TOL: f64 = 1e-8;

/// Test whether the expected Euler characteristic of excursions of
/// `X ∘ theta` over `rect` is invariant under pre-rotations of the domain.
///
/// Analytic mode compares the closed-form expectations (through the image
/// area and perimeter); Jacobian mode checks the pointwise characterization
/// `|J^i_{theta∘rho}| = |J^i_theta|` and `det J_{theta∘rho} = det J_theta`
/// on a probe lattice. Spirals pass both; nothing else does.
pub fn chi_isotropy_test(
    theta: &Deformation,
    rect: &Rect,
    angles: &[f64],
    u: Level,
    analytic_tol: f64,
    jacobian_tol: f64,
) -> Result<IsotropyReport> {
    if angles.is_empty() {
        return Err(Error::Identification(
            "need at least one rotation angle".into(),
        ));
    }
    let base_area = deform::image_area(theta, rect)?;
    let base_perim = deform::image_perimeter(theta, rect)?;
    let base_chi = crate::covariance::expected_chi_2d(base_area, base_perim, u)?;
    let mut worst_dev = 0.0f64;
    let mut worst_angle = 0.0f64;
    for &alpha in angles {
        let rot = rect.rotated(alpha);
        let area = deform::image_area(theta, &rot)?;
        let perim = deform::image_perimeter(theta, &rot)?;
        let chi = crate::covariance::expected_chi_2d(area, perim, u)?;
        let dev = (chi - base_chi).abs() / base_chi.abs().max(1e-12);
        if dev > worst_dev {
            worst_dev = dev;
            worst_angle = alpha;
        }
    }

    // Jacobian mode: pointwise conditions on a probe lattice over the rect.
    let mut worst_jac = 0.0f64;
    let mut worst_jac_angle = 0.0f64;
    let probes = 8;
    for &alpha in angles {
        let rho = Mat2::rotation(alpha);
        for i in 0..probes {
            for j in 0..probes {
                let x = rect.point(
                    rect.width() * (i as f64 + 0.5) / probes as f64,
                    rect.height() * (j as f64 + 0.5) / probes as f64,
                );
                let j_theta = theta.jacobian(x)?;
                let j_rot = theta.jacobian(rho.apply(x))? * rho;
                let checks = [
                    (j_rot.col(0).norm(), j_theta.col(0).norm()),
                    (j_rot.col(1).norm(), j_theta.col(1).norm()),
                    (j_rot.det(), j_theta.det()),
                ];
                for (got, want) in checks {
                    let dev = (got - want).abs() / want.abs().max(1e-12);
                    if dev > worst_jac {
                        worst_jac = dev;
                        worst_jac_angle = alpha;
                    }
                }
            }
        }
    }

    Ok(IsotropyReport {
        analytic_pass: worst_dev <= analytic_tol,
        analytic_worst_deviation: worst_dev,
        analytic_worst_angle: worst_angle,
        jacobian_pass: worst_jac <= jacobian_tol,
        jacobian_worst_deviation: worst_jac,
        jacobian_worst_angle: worst_jac_angle,
    })
}

/// Build the analytic mean-EC table of a known deformation: expectations
/// are computed from quadrature measures, with zero standard error. Used as
/// the noise-free input of the identification methods.
pub fn analytic_table(theta: &Deformation, u: Level, sigma: &[f64]) -> Result<MeanEcTable> {
    let mut table = MeanEcTable::new(u.0);
    // Axis domains [0,s] x {0} and {0} x [0,s] (the tensorial method's
    // inputs), regardless of whether 0 belongs to the partition.
    for &s in sigma {
        if s == 0.0 {
            continue;
        }
        let h = Segment::new(Vec2::ZERO, Vec2::new(s, 0.0))?;
        let len = deform::image_length(theta, &h)?;
        table.insert(
            TableDomain::hseg(s, 0.0),
            MeanEcEntry {
                mean_phi: expected_phi(1, len, u)?,
                std_err: 0.0,
                n_samples: 0,
            },
        );
        let v = Segment::new(Vec2::ZERO, Vec2::new(0.0, s))?;
        let len = deform::image_length(theta, &v)?;
        table.insert(
            TableDomain::vseg(0.0, s),
            MeanEcEntry {
                mean_phi: expected_phi(1, len, u)?,
                std_err: 0.0,
                n_samples: 0,
            },
        );
    }
    for &s in sigma {
        for &t in sigma {
            if s != 0.0 {
                let seg = Segment::new(Vec2::new(0.0, t), Vec2::new(s, t))?;
                let len = deform::image_length(theta, &seg)?;
                table.insert(
                    TableDomain::hseg(s, t),
                    MeanEcEntry {
                        mean_phi: expected_phi(1, len, u)?,
                        std_err: 0.0,
                        n_samples: 0,
                    },
                );
            }
            if t != 0.0 {
                let seg = Segment::new(Vec2::new(s, 0.0), Vec2::new(s, t))?;
                let len = deform::image_length(theta, &seg)?;
                table.insert(
                    TableDomain::vseg(s, t),
                    MeanEcEntry {
                        mean_phi: expected_phi(1, len, u)?,
                        std_err: 0.0,
                        n_samples: 0,
                    },
                );
            }
            if s != 0.0 && t != 0.0 {
                let rect = Rect::new(s, t)?;
                let area = deform::image_area(theta, &rect)?;
                table.insert(
                    TableDomain::rect(s, t),
                    MeanEcEntry {
                        mean_phi: expected_phi(2, area, u)?,
                        std_err: 0.0,
                        n_samples: 0,
                    },
                );
            }
        }
    }
    Ok(table)
}

/// Monte Carlo mean-EC table: simulates the deformed field over a window
/// covering all requested domains and averages empirical modified Euler
/// characteristics. The partition must be aligned with the lattice.
pub fn monte_carlo_table(
    theta: &Deformation,
    model: &crate::covariance::CovarianceModel,
    u: Level,
    sigma: &[f64],
    spacing: f64,
    reps: u64,
    seed: u64,
) -> Result<MeanEcTable> {
    let s_max = sigma.iter().fold(0.0f64, |a, &s| a.max(s.abs()));
    for &s in sigma {
        let ratio = s / spacing;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return Err(Error::Identification(format!(
                "partition node {s} is not aligned with the lattice spacing {spacing}"
            )));
        }
    }
    // Window with a one-pixel margin so every node keeps its full link.
    let margin = 2.0 * spacing;
    let half = s_max + margin;
    let n = (2.0 * half / spacing).round() as usize + 1;
    let spec = GridSpec::new(Vec2::new(-half, -half), spacing, (n, n))?;
    let needs_interp = !matches!(theta, Deformation::Linear(_));

    let mut sums: BTreeMap<TableDomain, Vec<f64>> = BTreeMap::new();
    for rep in 0..reps {
        let rep_seed = stats::derive_seed(seed, rep);
        let devfield = if let Deformation::Linear(m) = theta {
            field::simulate_linear_deformed(&spec, model, *m, rep_seed)?
        } else {
            // General path: evaluate the underlying realization at theta(t).
            let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
            let mut hi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
            for i in 0..n {
                for j in [0usize, n - 1] {
                    for &p in &[spec.node(i, j), spec.node(j, i)] {
                        let y = theta.eval(p)?;
                        lo = Vec2::new(lo.x.min(y.x), lo.y.min(y.y));
                        hi = Vec2::new(hi.x.max(y.x), hi.y.max(y.y));
                    }
                }
            }
            // Interior images are bounded by boundary images for the
            // deformations shipped here; pad generously anyway.
            let pad = 4.0 * spacing;
            let w_origin = lo - Vec2::new(pad, pad);
            let w_rows = ((hi.y - lo.y + 2.0 * pad) / spacing).ceil() as usize + 1;
            let w_cols = ((hi.x - lo.x + 2.0 * pad) / spacing).ceil() as usize + 1;
            let win = GridSpec::new(w_origin, spacing, (w_rows, w_cols))?;
            let (_, sample) = field::simulate_with_sample(&win, model, rep_seed, 4)?;
            field::deformed_field(&sample, theta, &spec, model, rep_seed)?
        };
        let _ = needs_interp;

        let node_index = |v: f64| -> usize { ((v + half) / spacing).round() as usize };
        for &s in sigma {
            for &t in sigma {
                if s != 0.0 {
                    // Row samples along [0, s] x {t}.
                    let row = node_index(t);
                    let (j0, j1) = if s > 0.0 {
                        (node_index(0.0), node_index(s))
                    } else {
                        (node_index(s), node_index(0.0))
                    };
                    let vals: Vec<f64> = (j0..=j1)
                        .map(|j| devfield_value(&devfield, row, j))
                        .collect();
                    let phi = excursion::up_crossings(&vals, u.0) as f64;
                    sums.entry(TableDomain::hseg(s, t)).or_default().push(phi);
                }
                if t != 0.0 {
                    let col = node_index(s);
                    let (i0, i1) = if t > 0.0 {
                        (node_index(0.0), node_index(t))
                    } else {
                        (node_index(t), node_index(0.0))
                    };
                    let vals: Vec<f64> = (i0..=i1)
                        .map(|i| devfield_value(&devfield, i, col))
                        .collect();
                    let phi = excursion::up_crossings(&vals, u.0) as f64;
                    sums.entry(TableDomain::vseg(s, t)).or_default().push(phi);
                }
                if s != 0.0 && t != 0.0 {
                    let (x0, x1) = (s.min(0.0), s.max(0.0));
                    let (y0, y1) = (t.min(0.0), t.max(0.0));
                    let eps = 0.5 * spacing;
                    let phi = excursion::modified_euler_in(&devfield, u.0, |p| {
                        p.x >= x0 - eps && p.x <= x1 + eps && p.y >= y0 - eps && p.y <= y1 + eps
                    })?;
                    sums.entry(TableDomain::rect(s, t)).or_default().push(phi);
                }
            }
        }
    }
    let mut table = MeanEcTable::new(u.0);
    for (domain, vals) in sums {
        table.insert(
            domain,
            MeanEcEntry {
                mean_phi: stats::mean(&vals),
                std_err: stats::std_err(&vals),
                n_samples: vals.len() as u64,
            },
        );
    }
    Ok(table)
}

fn devfield_value(f: &field::GridField, i: usize, j: usize) -> f64 {
    f.value(i, j)
}

/// The plain-EC counterpart of [`invert_phi_1d`], provided as the seam for
/// the chi-based adaptation of the identification methods: subtract the
/// Gaussian tail and divide by `rho_1`.
pub fn invert_chi_1d(mean_chi: f64, u: Level) -> Result<f64> {
    Ok((mean_chi - gauss_tail(u.0)) / rho(1, u)?)
}
