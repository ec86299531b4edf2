//! Piecewise polynomial interpolation in one variable, plus a bracketing
//! root finder.
//!
//! Each piece is stored in its local coordinate `t = (x - x_k) / Δ_k`, which
//! lets integrals and divided differences over short subintervals be
//! evaluated without cancellation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Tridiag;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewisePoly {
    knots: Vec<f64>,
    /// `coeffs[k][m]` multiplies `t^m` on piece `k`.
    coeffs: Vec<Vec<f64>>,
}

impl PiecewisePoly {
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn lo(&self) -> f64 {
        self.knots[0]
    }

    pub fn hi(&self) -> f64 {
        *self.knots.last().unwrap()
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo() && x <= self.hi()
    }

    pub fn check(&self, x: f64) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::OutOfRange {
                omega: x,
                lo: self.lo(),
                hi: self.hi(),
            })
        }
    }

    fn piece(&self, x: f64) -> usize {
        let n = self.knots.len() - 1;
        match self.knots.partition_point(|&k| k <= x) {
            0 => 0,
            p if p > n => n - 1,
            p => (p - 1).min(n - 1),
        }
    }

    fn local(&self, k: usize, x: f64) -> (f64, f64) {
        let d = self.knots[k + 1] - self.knots[k];
        ((x - self.knots[k]) / d, d)
    }

    /// Value and first two derivatives. Extrapolates the end pieces.
    pub fn eval3(&self, x: f64) -> (f64, f64, f64) {
        let k = self.piece(x);
        let (t, d) = self.local(k, x);
        let c = &self.coeffs[k];
        let (mut p, mut p1, mut p2) = (0.0, 0.0, 0.0);
        for m in (0..c.len()).rev() {
            p2 = p2 * t + 2.0 * p1;
            p1 = p1 * t + p;
            p = p * t + c[m];
        }
        (p, p1 / d, p2 / (d * d))
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.eval3(x).0
    }

    pub fn deriv(&self, x: f64) -> f64 {
        self.eval3(x).1
    }

    pub fn deriv2(&self, x: f64) -> f64 {
        self.eval3(x).2
    }

    /// Third derivative (piecewise).
    pub fn deriv3(&self, x: f64) -> f64 {
        let k = self.piece(x);
        let (t, d) = self.local(k, x);
        let c = &self.coeffs[k];
        let mut s = 0.0;
        for m in 3..c.len() {
            let f = (m * (m - 1) * (m - 2)) as f64;
            s += f * c[m] * t.powi(m as i32 - 3);
        }
        s / (d * d * d)
    }

    /// `(p(b) - p(a)) / (b - a)` on one piece, expanded monomial by monomial
    /// so that `a == b` is harmless.
    fn piece_divided_difference(&self, k: usize, a: f64, b: f64) -> f64 {
        let (t0, d) = self.local(k, a);
        let (t1, _) = self.local(k, b);
        let c = &self.coeffs[k];
        let mut s = 0.0;
        for m in 1..c.len() {
            s += c[m] * power_quotient(t0, t1, m);
        }
        s / d
    }

    /// Mean value `(1/(b-a)) int_a^b p` on one piece.
    fn piece_mean(&self, k: usize, a: f64, b: f64) -> f64 {
        let (t0, _) = self.local(k, a);
        let (t1, _) = self.local(k, b);
        let c = &self.coeffs[k];
        let mut s = 0.0;
        for m in 0..c.len() {
            s += c[m] * power_quotient(t0, t1, m + 1) / (m + 1) as f64;
        }
        s
    }

    fn split(&self, a: f64, b: f64) -> Vec<(usize, f64, f64)> {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let k0 = self.piece(lo);
        let k1 = self.piece(hi);
        let mut parts = Vec::with_capacity(k1 - k0 + 1);
        for k in k0..=k1 {
            let s = if k == k0 { lo } else { self.knots[k] };
            let e = if k == k1 { hi } else { self.knots[k + 1] };
            parts.push((k, s, e));
        }
        parts
    }

    /// `(p(b) - p(a)) / (b - a)`, continuous as `b -> a`.
    pub fn divided_difference(&self, a: f64, b: f64) -> f64 {
        let parts = self.split(a, b);
        if parts.len() == 1 {
            let (k, s, e) = parts[0];
            return self.piece_divided_difference(k, s, e);
        }
        let total = (b - a).abs();
        parts
            .iter()
            .map(|&(k, s, e)| (e - s) * self.piece_divided_difference(k, s, e))
            .sum::<f64>()
            / total
    }

    /// `(1/(b-a)) int_a^b p`, continuous as `b -> a`.
    pub fn mean(&self, a: f64, b: f64) -> f64 {
        let parts = self.split(a, b);
        if parts.len() == 1 {
            let (k, s, e) = parts[0];
            return self.piece_mean(k, s, e);
        }
        let total = (b - a).abs();
        parts
            .iter()
            .map(|&(k, s, e)| (e - s) * self.piece_mean(k, s, e))
            .sum::<f64>()
            / total
    }

    /// `int_a^b p`.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        if a == b {
            return 0.0;
        }
        let sign = if b >= a { 1.0 } else { -1.0 };
        let parts = self.split(a, b);
        sign * parts
            .iter()
            .map(|&(k, s, e)| (e - s) * self.piece_mean(k, s, e))
            .sum::<f64>()
    }

    /// Interpolant with `c` added to every value.
    pub fn shifted(&self, c: f64) -> Self {
        let mut out = self.clone();
        for p in out.coeffs.iter_mut() {
            p[0] += c;
        }
        out
    }

    /// Roots of `p - level` on the knot range, located by sign changes on a
    /// refinement of each piece and polished with [`find_root`].
    pub fn roots(&self, level: f64, per_piece: usize) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        let f = |x: f64| self.eval(x) - level;
        for k in 0..self.knots.len() - 1 {
            let (a, b) = (self.knots[k], self.knots[k + 1]);
            let m = per_piece.max(1);
            let mut x0 = a;
            let mut f0 = f(x0);
            for j in 1..=m {
                let x1 = a + (b - a) * j as f64 / m as f64;
                let f1 = f(x1);
                if f0 == 0.0 {
                    if out.last().map_or(true, |&r| (r - x0).abs() > 1e-14 * (1.0 + x0.abs())) {
                        out.push(x0);
                    }
                } else if f0 * f1 < 0.0 {
                    if let Ok(r) = find_root(f, x0, x1, 1e-15 * (1.0 + x0.abs())) {
                        out.push(r);
                    }
                }
                x0 = x1;
                f0 = f1;
            }
        }
        let last = self.hi();
        if f(last) == 0.0 && out.last().map_or(true, |&r| r != last) {
            out.push(last);
        }
        out
    }
}

/// `(t1^m - t0^m) / (t1 - t0)` evaluated as a sum of monomials.
fn power_quotient(t0: f64, t1: f64, m: usize) -> f64 {
    // sum_{j<m} t1^j t0^(m-1-j), Horner in t1
    let mut acc = 0.0;
    let mut p0 = 1.0;
    for _ in 0..m {
        acc = acc * t1 + p0;
        p0 *= t0;
    }
    acc
}

fn validate_knots(x: &[f64], min: usize) -> Result<()> {
    if x.len() < min {
        return Err(Error::InsufficientPoints {
            required: min,
            got: x.len(),
        });
    }
    if x.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::NonMonotoneGrid);
    }
    Ok(())
}

/// Quintic Hermite interpolant through values, first and second derivatives.
pub fn quintic_hermite(x: &[f64], y: &[f64], dy: &[f64], d2y: &[f64]) -> Result<PiecewisePoly> {
    validate_knots(x, 2)?;
    let mut coeffs = Vec::with_capacity(x.len() - 1);
    for k in 0..x.len() - 1 {
        let d = x[k + 1] - x[k];
        let (p0, p1) = (y[k], y[k + 1]);
        let (v0, v1) = (dy[k] * d, dy[k + 1] * d);
        let (a0, a1) = (d2y[k] * d * d, d2y[k + 1] * d * d);
        let c0 = p0;
        let c1 = v0;
        let c2 = 0.5 * a0;
        // remaining cubic part fixed by the right-end conditions
        let r0 = p1 - c0 - c1 - c2;
        let r1 = v1 - c1 - 2.0 * c2;
        let r2 = a1 - 2.0 * c2;
        let c3 = 10.0 * r0 - 4.0 * r1 + 0.5 * r2;
        let c4 = -15.0 * r0 + 7.0 * r1 - r2;
        let c5 = 6.0 * r0 - 3.0 * r1 + 0.5 * r2;
        coeffs.push(vec![c0, c1, c2, c3, c4, c5]);
    }
    Ok(PiecewisePoly {
        knots: x.to_vec(),
        coeffs,
    })
}

/// Cubic spline with end slopes taken from the interpolating polynomial
/// through the (up to) four nearest nodes.
pub fn cubic_spline(x: &[f64], y: &[f64]) -> Result<PiecewisePoly> {
    validate_knots(x, 3)?;
    let n = x.len();
    let w = n.min(4);
    let s0 = lagrange_slope(&x[..w], &y[..w], x[0]);
    let sn = lagrange_slope(&x[n - w..], &y[n - w..], x[n - 1]);
    // clamped spline: solve for nodal slopes m_i
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let mut diag = vec![0.0; n];
    let mut lower = vec![0.0; n - 1];
    let mut upper = vec![0.0; n - 1];
    let mut rhs = vec![0.0; n];
    diag[0] = 1.0;
    rhs[0] = s0;
    diag[n - 1] = 1.0;
    rhs[n - 1] = sn;
    for i in 1..n - 1 {
        lower[i - 1] = 1.0 / h[i - 1];
        diag[i] = 2.0 / h[i - 1] + 2.0 / h[i];
        upper[i] = 1.0 / h[i];
        rhs[i] = 3.0 * (y[i] - y[i - 1]) / (h[i - 1] * h[i - 1]) + 3.0 * (y[i + 1] - y[i]) / (h[i] * h[i]);
    }
    let m = Tridiag { lower, diag, upper }.solve(&rhs)?;
    let mut coeffs = Vec::with_capacity(n - 1);
    for k in 0..n - 1 {
        let d = h[k];
        let (p0, p1) = (y[k], y[k + 1]);
        let (v0, v1) = (m[k] * d, m[k + 1] * d);
        coeffs.push(vec![
            p0,
            v0,
            3.0 * (p1 - p0) - 2.0 * v0 - v1,
            2.0 * (p0 - p1) + v0 + v1,
        ]);
    }
    Ok(PiecewisePoly {
        knots: x.to_vec(),
        coeffs,
    })
}

/// Derivative at `at` of the polynomial interpolating `(x, y)`.
fn lagrange_slope(x: &[f64], y: &[f64], at: f64) -> f64 {
    let m = x.len();
    let mut total = 0.0;
    for i in 0..m {
        let mut denom = 1.0;
        for j in 0..m {
            if j != i {
                denom *= x[i] - x[j];
            }
        }
        let mut num = 0.0;
        for k in 0..m {
            if k == i {
                continue;
            }
            let mut prod = 1.0;
            for j in 0..m {
                if j != i && j != k {
                    prod *= at - x[j];
                }
            }
            num += prod;
        }
        total += y[i] * num / denom;
    }
    total
}

/// Constant function on `[lo, hi]`.
pub fn constant(lo: f64, hi: f64, value: f64) -> PiecewisePoly {
    PiecewisePoly {
        knots: vec![lo, hi],
        coeffs: vec![vec![value]],
    }
}

/// Brent's method on a sign-changing bracket.
pub fn find_root<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, xtol: f64) -> Result<f64> {
    let (mut a, mut b) = (a, b);
    let (mut fa, mut fb) = (f(a), f(b));
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa * fb > 0.0 {
        return Err(Error::NotConverged {
            what: "root bracket",
            iterations: 0,
            residual: fa.abs().min(fb.abs()),
        });
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..200 {
        if fb * fc > 0.0 {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b);
    }
    Err(Error::NotConverged {
        what: "Brent root search",
        iterations: 200,
        residual: fb.abs(),
    })
}
