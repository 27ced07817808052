//! Small plane-geometry primitives: vectors, 2x2 matrices, dense grids.

use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

/// A point or vector in the plane.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_sq(self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// Polar coordinates `(r, phi)` with `phi` in `(-pi, pi]`.
    pub fn to_polar(self) -> (f64, f64) {
        (self.norm(), self.y.atan2(self.x))
    }

    pub fn from_polar(r: f64, phi: f64) -> Self {
        Vec2::new(r * phi.cos(), r * phi.sin())
    }

    pub fn scale(self, s: f64) -> Self {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        self.scale(s)
    }
}

/// A 2x2 matrix in row-major order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2 {
        a: 1.0,
        b: 0.0,
        c: 0.0,
        d: 1.0,
    };

    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Mat2 { a, b, c, d }
    }

    pub fn rotation(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Mat2::new(c, -s, s, c)
    }

    pub fn diagonal(dx: f64, dy: f64) -> Self {
        Mat2::new(dx, 0.0, 0.0, dy)
    }

    pub fn det(self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    /// i-th column (0 or 1).
    pub fn col(self, i: usize) -> Vec2 {
        match i {
            0 => Vec2::new(self.a, self.c),
            1 => Vec2::new(self.b, self.d),
            _ => panic!("column index out of range"),
        }
    }

    pub fn transpose(self) -> Mat2 {
        Mat2::new(self.a, self.c, self.b, self.d)
    }

    pub fn inverse(self) -> Option<Mat2> {
        let det = self.det();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        Some(Mat2::new(
            self.d / det,
            -self.b / det,
            -self.c / det,
            self.a / det,
        ))
    }

    pub fn apply(self, v: Vec2) -> Vec2 {
        Vec2::new(self.a * v.x + self.b * v.y, self.c * v.x + self.d * v.y)
    }
}

impl Mul for Mat2 {
    type Output = Mat2;
    fn mul(self, rhs: Mat2) -> Mat2 {
        Mat2::new(
            self.a * rhs.a + self.b * rhs.c,
            self.a * rhs.b + self.b * rhs.d,
            self.c * rhs.a + self.d * rhs.c,
            self.c * rhs.b + self.d * rhs.d,
        )
    }
}

/// Dense row-major grid of values. Row index varies the `y` coordinate,
/// column index the `x` coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Clone + Default> Grid2<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Grid2 {
            rows,
            cols,
            data: vec![T::default(); rows * cols],
        }
    }
}

impl<T> Grid2<T> {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "grid data length mismatch");
        Grid2 { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.data.iter()
    }
}

impl<T> Index<(usize, usize)> for Grid2<T> {
    type Output = T;
    fn index(&self, (r, c): (usize, usize)) -> &T {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl<T> IndexMut<(usize, usize)> for Grid2<T> {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut T {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rotation_is_orthogonal() {
        let r = Mat2::rotation(0.73);
        let rt_r = r.transpose() * r;
        assert_relative_eq!(rt_r.a, 1.0, epsilon = 1e-15);
        assert_relative_eq!(rt_r.d, 1.0, epsilon = 1e-15);
        assert!(rt_r.b.abs() < 1e-15 && rt_r.c.abs() < 1e-15);
        assert_relative_eq!(r.det(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn polar_round_trip() {
        let v = Vec2::new(-1.25, 2.5);
        let (r, phi) = v.to_polar();
        let w = Vec2::from_polar(r, phi);
        assert_relative_eq!(v.x, w.x, epsilon = 1e-12);
        assert_relative_eq!(v.y, w.y, epsilon = 1e-12);
    }

    #[test]
    fn matrix_inverse() {
        let m = Mat2::new(2.0, 1.0, 0.0, 1.0);
        let inv = m.inverse().unwrap();
        let id = m * inv;
        assert_relative_eq!(id.a, 1.0, epsilon = 1e-14);
        assert_relative_eq!(id.d, 1.0, epsilon = 1e-14);
        assert!(id.b.abs() < 1e-14 && id.c.abs() < 1e-14);
    }
}
