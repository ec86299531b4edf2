//! Uniform radial grid for radially symmetric functions on R^3.
//!
//! Unknowns live at the interior nodes `r_i = i h`, `i = 1..=n`, with
//! `h = r_max / (n + 1)`. The substitution `v = r u` turns the radial
//! Laplacian into `v''`; the Dirichlet conditions `v(0) = v(r_max) = 0` are
//! implicit. Integrals use the 3D measure `4 pi r^2 dr`, which for the
//! sampled values is the rectangle rule `4 pi h sum r_i^2 f_i g_i`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Tridiag;

pub const MIN_POINTS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialGrid {
    r_max: f64,
    n_points: usize,
}

impl RadialGrid {
    pub fn new(r_max: f64, n_points: usize) -> Result<Self> {
        if !(r_max.is_finite() && r_max > 0.0) {
            return Err(Error::InvalidGrid(format!("r_max must be positive, got {r_max}")));
        }
        if n_points < MIN_POINTS {
            return Err(Error::InvalidGrid(format!(
                "n_points must be at least {MIN_POINTS}, got {n_points}"
            )));
        }
        Ok(Self { r_max, n_points })
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn len(&self) -> usize {
        self.n_points
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        self.r_max / (self.n_points + 1) as f64
    }

    /// Radius of node `i` (zero based).
    #[inline]
    pub fn r(&self, i: usize) -> f64 {
        (i + 1) as f64 * self.spacing()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.r(i)).collect()
    }

    /// Quadrature weights `4 pi h r_i^2`.
    pub fn weights(&self) -> Vec<f64> {
        let h = self.spacing();
        (0..self.n_points)
            .map(|i| {
                let r = self.r(i);
                4.0 * PI * h * r * r
            })
            .collect()
    }

    /// `int f g 4 pi r^2 dr` for real samples.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        debug_assert_eq!(f.len(), self.n_points);
        debug_assert_eq!(g.len(), self.n_points);
        let h = self.spacing();
        let s: f64 = f
            .iter()
            .zip(g)
            .enumerate()
            .map(|(i, (a, b))| {
                let r = (i + 1) as f64 * h;
                r * r * a * b
            })
            .sum();
        4.0 * PI * h * s
    }

    pub fn norm(&self, f: &[f64]) -> f64 {
        self.inner(f, f).sqrt()
    }

    /// `int |f'|^2 4 pi r^2 dr`, evaluated as `4 pi int |v'|^2 dr` with
    /// forward differences of `v = r f` and zero boundary values.
    pub fn gradient_norm_sq(&self, f: &[f64]) -> f64 {
        let h = self.spacing();
        let mut prev = 0.0;
        let mut s = 0.0;
        for (i, &x) in f.iter().enumerate() {
            let v = self.r(i) * x;
            s += (v - prev) * (v - prev);
            prev = v;
        }
        s += prev * prev;
        4.0 * PI * s / h
    }

    pub fn gradient_norm_sq_complex(&self, f: &[Complex64]) -> f64 {
        let h = self.spacing();
        let mut prev = Complex64::new(0.0, 0.0);
        let mut s = 0.0;
        for (i, &x) in f.iter().enumerate() {
            let v = x * self.r(i);
            s += (v - prev).norm_sqr();
            prev = v;
        }
        s += prev.norm_sqr();
        4.0 * PI * s / h
    }

    pub fn h1_norm(&self, f: &[f64]) -> f64 {
        (self.inner(f, f) + self.gradient_norm_sq(f)).sqrt()
    }

    /// `v = r u`.
    pub fn to_v(&self, u: &[f64]) -> Vec<f64> {
        u.iter().enumerate().map(|(i, x)| self.r(i) * x).collect()
    }

    /// `u = v / r`.
    pub fn from_v(&self, v: &[f64]) -> Vec<f64> {
        v.iter().enumerate().map(|(i, x)| x / self.r(i)).collect()
    }

    /// `-d²/dr² + shift + potential` acting on `v = r u`, with Dirichlet
    /// ends.
    pub fn schrodinger(&self, shift: f64, potential: &[f64]) -> Tridiag {
        let h2 = 1.0 / (self.spacing() * self.spacing());
        let diag = potential.iter().map(|w| 2.0 * h2 + shift + w).collect();
        Tridiag::symmetric(diag, vec![-h2; self.n_points - 1])
    }

    /// Index of the first node at or beyond `r`.
    pub fn index_at(&self, r: f64) -> usize {
        let i = (r / self.spacing()).ceil() as isize - 1;
        i.clamp(0, self.n_points as isize - 1) as usize
    }
}
