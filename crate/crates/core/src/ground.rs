//! Ground states `φ_ω > 0` of `0 = -Δφ + ωφ + g(φ²)φ`, the family over a
//! frequency window, the mass curve `q(ω) = ½‖φ_ω‖²`, and the effective
//! potential `V_Q(ω) = d(ω) - ωQ` with its well geometry.
//!
//! The discrete problem is posed on `v = r φ`:
//! `-(v_{i+1} - 2v_i + v_{i-1})/h² + ωv_i + g(φ_i²)v_i = 0`, which is the exact
//! Euler–Lagrange equation of the discrete action `E_h + ωQ_h`. As a
//! consequence `d'(ω) = q(ω)` holds for the discrete curves as well.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::RadialGrid;
use crate::interp::{find_root, quintic_hermite, PiecewisePoly};
use crate::linalg::{norm_inf, Tridiag};
use crate::nonlinearity::Nonlinearity;
use crate::profile::RadialProfile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundSolverOptions {
    /// Residual tolerance relative to the peak amplitude.
    pub tol: f64,
    /// Bracket for the central amplitude `φ(r_1)` used by shooting.
    pub amplitude_bracket: [f64; 2],
    pub max_newton: usize,
    /// Largest admissible `φ(r_max) / φ(0)`.
    pub tail_floor: f64,
}

impl Default for GroundSolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            amplitude_bracket: [1e-3, 1e3],
            max_newton: 50,
            tail_floor: 1e-8,
        }
    }
}

/// Ground state with its first two frequency derivatives and scalar data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundPoint {
    pub omega: f64,
    pub phi: RadialProfile,
    /// `∂_ω φ`.
    pub dphi: RadialProfile,
    /// `∂²_ω φ`.
    pub d2phi: RadialProfile,
    pub q: f64,
    pub dq: f64,
    pub d2q: f64,
    pub energy: f64,
}

impl GroundPoint {
    /// `d(ω) = E(φ_ω) + ω q(ω)`.
    pub fn action(&self) -> f64 {
        self.energy + self.omega * self.q
    }
}

/// Residual of `φ'' + (2/r)φ' - ωφ - g(φ²)φ` at each node.
pub fn stationary_residual(omega: f64, profile: &RadialProfile, nl: Nonlinearity) -> Vec<f64> {
    let grid = profile.grid();
    let h2 = 1.0 / (grid.spacing() * grid.spacing());
    let phi = profile.values();
    let v = grid.to_v(phi);
    let n = v.len();
    (0..n)
        .map(|i| {
            let vm = if i > 0 { v[i - 1] } else { 0.0 };
            let vp = if i + 1 < n { v[i + 1] } else { 0.0 };
            (vp - 2.0 * v[i] + vm) * h2 / grid.r(i) - omega * phi[i] - nl.g(phi[i] * phi[i]) * phi[i]
        })
        .collect()
}

/// `E = ½∫|∇φ|² + ½∫G(φ²)` with the discrete gradient of [`RadialGrid`].
pub fn energy(profile: &RadialProfile, nl: Nonlinearity) -> f64 {
    let grid = profile.grid();
    let big_g: Vec<f64> = profile
        .values()
        .iter()
        .map(|x| nl.antiderivative(x * x))
        .collect();
    let ones = vec![1.0; grid.len()];
    0.5 * grid.gradient_norm_sq(profile.values()) + 0.5 * grid.inner(&big_g, &ones)
}

/// `L₊` in `v`-space for the profile `phi` (u-values).
pub(crate) fn l_plus(grid: &RadialGrid, omega: f64, phi: &[f64], nl: Nonlinearity) -> Tridiag {
    let w: Vec<f64> = phi
        .iter()
        .map(|x| {
            let s = x * x;
            nl.g(s) + 2.0 * nl.dg(s) * s
        })
        .collect();
    grid.schrodinger(omega, &w)
}

/// `L₋` in `v`-space.
pub(crate) fn l_minus(grid: &RadialGrid, omega: f64, phi: &[f64], nl: Nonlinearity) -> Tridiag {
    let w: Vec<f64> = phi.iter().map(|x| nl.g(x * x)).collect();
    grid.schrodinger(omega, &w)
}

enum Shot {
    /// `v` crossed zero: the central amplitude is too large.
    Crossed,
    /// `φ` started to grow: too small. Carries the index of the turn.
    Turned(usize),
    Reached,
}

fn shoot(grid: &RadialGrid, omega: f64, nl: Nonlinearity, amp: f64, v: &mut [f64]) -> Shot {
    let h = grid.spacing();
    let h2 = h * h;
    let n = v.len();
    v[0] = amp * h;
    let mut prev = 0.0;
    for i in 0..n {
        let r = grid.r(i);
        let phi = v[i] / r;
        let next = 2.0 * v[i] - prev + h2 * (omega + nl.g(phi * phi)) * v[i];
        if next <= 0.0 {
            return Shot::Crossed;
        }
        if next / (r + h) > phi {
            return Shot::Turned(i);
        }
        if i + 1 < n {
            v[i + 1] = next;
        }
        prev = v[i];
    }
    Shot::Reached
}

/// Bisection on the central amplitude followed by truncation at the point
/// where the lower trajectory turns up.
fn shooting_guess(grid: &RadialGrid, omega: f64, nl: Nonlinearity, bracket: [f64; 2]) -> Result<Vec<f64>> {
    let n = grid.len();
    let mut v = vec![0.0; n];
    let [mut lo, mut hi] = bracket;
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::NoGroundState {
            omega,
            reason: format!("invalid amplitude bracket [{lo}, {hi}]"),
        });
    }
    if matches!(shoot(grid, omega, nl, lo, &mut v), Shot::Crossed) {
        return Err(Error::NoGroundState {
            omega,
            reason: format!("lower amplitude {lo} already crosses zero"),
        });
    }
    if !matches!(shoot(grid, omega, nl, hi, &mut v), Shot::Crossed) {
        return Err(Error::NoGroundState {
            omega,
            reason: format!("no zero crossing up to amplitude {hi}; omega outside the existence range?"),
        });
    }
    for _ in 0..400 {
        let mid = if hi / lo > 4.0 { (lo * hi).sqrt() } else { 0.5 * (lo + hi) };
        if mid <= lo || mid >= hi {
            break;
        }
        match shoot(grid, omega, nl, mid, &mut v) {
            Shot::Crossed => hi = mid,
            _ => lo = mid,
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
    }
    let end = match shoot(grid, omega, nl, lo, &mut v) {
        Shot::Turned(k) => k + 1,
        _ => n,
    };
    for x in v.iter_mut().skip(end) {
        *x = 0.0;
    }
    Ok(v)
}

/// Newton iteration on the discrete stationary equation in `v`-space.
fn polish(grid: &RadialGrid, omega: f64, nl: Nonlinearity, mut v: Vec<f64>, opts: &GroundSolverOptions) -> Result<Vec<f64>> {
    let start_peak = norm_inf(&v);
    let mut step = f64::INFINITY;
    for _ in 0..opts.max_newton {
        let prev = step;
        let phi = grid.from_v(&v);
        let lm = l_minus(grid, omega, &phi, nl);
        let f = lm.apply(&v);
        let jac = l_plus(grid, omega, &phi, nl);
        let dv = jac.solve(&f)?;
        step = norm_inf(&dv);
        for (x, d) in v.iter_mut().zip(&dv) {
            *x -= d;
        }
        let peak = norm_inf(&v);
        if !peak.is_finite() {
            break;
        }
        // stop at the round-off floor: tiny step, or a small one that no
        // longer contracts
        if step <= 1e-14 * peak || (step <= 1e-10 * peak && step > 0.25 * prev) {
            if peak < 1e-6 * start_peak {
                return Err(Error::NoGroundState {
                    omega,
                    reason: "Newton collapsed to the zero solution".into(),
                });
            }
            return Ok(v);
        }
    }
    Err(Error::NotConverged {
        what: "ground-state Newton",
        iterations: opts.max_newton,
        residual: step,
    })
}

fn validate(omega: f64, profile: &RadialProfile, nl: Nonlinearity, opts: &GroundSolverOptions) -> Result<()> {
    let min = profile.min_relative();
    if min < -1e-12 {
        return Err(Error::NodalSolution { omega, min_value: min * profile.peak() });
    }
    if profile.max_rise() > 1e-12 {
        return Err(Error::NoGroundState {
            omega,
            reason: "converged profile is not radially nonincreasing".into(),
        });
    }
    let res = norm_inf(&stationary_residual(omega, profile, nl));
    if res > opts.tol * profile.peak() {
        return Err(Error::NotConverged {
            what: "ground-state residual",
            iterations: opts.max_newton,
            residual: res / profile.peak(),
        });
    }
    let tail = profile.tail_ratio();
    if tail > opts.tail_floor {
        return Err(Error::DomainTooSmall {
            omega,
            ratio: tail,
            floor: opts.tail_floor,
        });
    }
    Ok(())
}

/// Ground state at `omega` by shooting and Newton polish.
pub fn solve_ground_state(
    omega: f64,
    grid: &RadialGrid,
    nl: Nonlinearity,
    opts: &GroundSolverOptions,
) -> Result<RadialProfile> {
    solve_seeded(omega, grid, nl, None, opts)
}

fn solve_seeded(
    omega: f64,
    grid: &RadialGrid,
    nl: Nonlinearity,
    seed: Option<Vec<f64>>,
    opts: &GroundSolverOptions,
) -> Result<RadialProfile> {
    if !(omega > 0.0 && omega.is_finite()) {
        return Err(Error::NoGroundState {
            omega,
            reason: "frequency must be positive".into(),
        });
    }
    let from_seed = seed.and_then(|v| {
        let v = polish(grid, omega, nl, v, opts).ok()?;
        let p = RadialProfile::new(grid.clone(), grid.from_v(&v)).ok()?;
        validate(omega, &p, nl, opts).ok().map(|_| p)
    });
    if let Some(p) = from_seed {
        return Ok(p);
    }
    let guess = shooting_guess(grid, omega, nl, opts.amplitude_bracket)?;
    let v = polish(grid, omega, nl, guess, opts)?;
    let profile = RadialProfile::new(grid.clone(), grid.from_v(&v))?;
    validate(omega, &profile, nl, opts)?;
    Ok(profile)
}

/// Frequency derivatives from the differentiated stationary equation:
/// `L₊ ∂φ = -φ` and `L₊ ∂²φ = -2∂φ - (6g'φ + 4g''φ³)(∂φ)²`.
fn sensitivities(omega: f64, phi: RadialProfile, nl: Nonlinearity) -> Result<GroundPoint> {
    let grid = phi.grid().clone();
    let p = phi.values();
    let lu = l_plus(&grid, omega, p, nl).factor().map_err(|e| match e {
        Error::SingularSolve(m) => Error::SingularSolve(format!("L+ at omega = {omega}: {m}")),
        e => e,
    })?;
    let v = grid.to_v(p);
    let mut dv: Vec<f64> = v.iter().map(|x| -x).collect();
    lu.solve_in_place(&mut dv);
    let dp = grid.from_v(&dv);
    let mut d2v: Vec<f64> = (0..v.len())
        .map(|i| {
            let s = p[i] * p[i];
            let dw = (6.0 * nl.dg(s) * p[i] + 4.0 * nl.d2g(s) * p[i] * s) * dp[i];
            -2.0 * dv[i] - dw * dv[i]
        })
        .collect();
    lu.solve_in_place(&mut d2v);
    let d2p = grid.from_v(&d2v);
    let q = 0.5 * grid.inner(p, p);
    let dq = grid.inner(p, &dp);
    let d2q = grid.inner(&dp, &dp) + grid.inner(p, &d2p);
    let e = energy(&phi, nl);
    Ok(GroundPoint {
        omega,
        dphi: RadialProfile::new(grid.clone(), dp)?,
        d2phi: RadialProfile::new(grid, d2p)?,
        phi,
        q,
        dq,
        d2q,
        energy: e,
    })
}

/// Ground state plus sensitivities, seeded by a nearby point when given.
pub fn ground_point(
    omega: f64,
    grid: &RadialGrid,
    nl: Nonlinearity,
    near: Option<&GroundPoint>,
    opts: &GroundSolverOptions,
) -> Result<GroundPoint> {
    let seed = near.map(|n| {
        let d = omega - n.omega;
        let u: Vec<f64> = (0..grid.len())
            .map(|i| n.phi.values()[i] + d * n.dphi.values()[i] + 0.5 * d * d * n.d2phi.values()[i])
            .collect();
        grid.to_v(&u)
    });
    let phi = solve_seeded(omega, grid, nl, seed, opts)?;
    sensitivities(omega, phi, nl)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundStateFamily {
    grid: RadialGrid,
    nl: Nonlinearity,
    options: GroundSolverOptions,
    points: Vec<GroundPoint>,
    #[serde(skip)]
    q_interp: Option<PiecewisePoly>,
}

pub const MIN_FAMILY_POINTS: usize = 9;

/// Family on a uniform frequency grid.
pub fn build_family(
    omega_range: (f64, f64),
    n_omega: usize,
    grid: &RadialGrid,
    nl: Nonlinearity,
    opts: &GroundSolverOptions,
) -> Result<GroundStateFamily> {
    let (lo, hi) = omega_range;
    if n_omega < MIN_FAMILY_POINTS {
        return Err(Error::InsufficientPoints {
            required: MIN_FAMILY_POINTS,
            got: n_omega,
        });
    }
    if !(hi > lo) {
        return Err(Error::NonMonotoneGrid);
    }
    let omegas: Vec<f64> = (0..n_omega)
        .map(|k| lo + (hi - lo) * k as f64 / (n_omega - 1) as f64)
        .collect();
    build_family_on(&omegas, grid, nl, opts)
}

/// Family on an explicit, strictly increasing frequency grid, by
/// continuation from the first frequency.
pub fn build_family_on(
    omegas: &[f64],
    grid: &RadialGrid,
    nl: Nonlinearity,
    opts: &GroundSolverOptions,
) -> Result<GroundStateFamily> {
    if omegas.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::NonMonotoneGrid);
    }
    if omegas.len() < MIN_FAMILY_POINTS {
        return Err(Error::InsufficientPoints {
            required: MIN_FAMILY_POINTS,
            got: omegas.len(),
        });
    }
    let mut points: Vec<GroundPoint> = Vec::with_capacity(omegas.len());
    for &w in omegas {
        let p = ground_point(w, grid, nl, points.last(), opts).map_err(|e| e.at(w))?;
        points.push(p);
    }
    GroundStateFamily::from_points(grid.clone(), nl, opts.clone(), points)
}

/// Geometry of the well of `V_Q` for `Q > q(ω*)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WellGeometry {
    #[serde(rename = "Q")]
    pub q_total: f64,
    pub epsilon: f64,
    pub omega_star: f64,
    pub q2_star: f64,
    pub omega_minus: f64,
    pub omega_plus: f64,
    pub omega_plusplus: f64,
    pub barrier: f64,
}

impl WellGeometry {
    /// Leading-order half width `ε√(2/q''(ω*))`.
    pub fn leading_offset(&self) -> f64 {
        self.epsilon * (2.0 / self.q2_star).sqrt()
    }

    /// Leading-order barrier `(4/3)ε³√(2/q''(ω*))`.
    pub fn leading_barrier(&self) -> f64 {
        4.0 / 3.0 * self.epsilon.powi(3) * (2.0 / self.q2_star).sqrt()
    }
}

impl GroundStateFamily {
    pub fn from_points(
        grid: RadialGrid,
        nl: Nonlinearity,
        options: GroundSolverOptions,
        points: Vec<GroundPoint>,
    ) -> Result<Self> {
        let mut fam = Self {
            grid,
            nl,
            options,
            points,
            q_interp: None,
        };
        fam.rebuild()?;
        Ok(fam)
    }

    /// Recreates derived interpolants, e.g. after deserialization.
    pub fn rebuild(&mut self) -> Result<()> {
        let w = self.omegas();
        if w.windows(2).any(|p| !(p[1] > p[0])) {
            return Err(Error::NonMonotoneGrid);
        }
        let q: Vec<f64> = self.points.iter().map(|p| p.q).collect();
        let dq: Vec<f64> = self.points.iter().map(|p| p.dq).collect();
        let d2q: Vec<f64> = self.points.iter().map(|p| p.d2q).collect();
        self.q_interp = Some(quintic_hermite(&w, &q, &dq, &d2q)?);
        Ok(())
    }

    pub fn grid(&self) -> &RadialGrid {
        &self.grid
    }

    pub fn nonlinearity(&self) -> Nonlinearity {
        self.nl
    }

    pub fn options(&self) -> &GroundSolverOptions {
        &self.options
    }

    pub fn points(&self) -> &[GroundPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn omegas(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.omega).collect()
    }

    pub fn profiles(&self) -> impl Iterator<Item = &RadialProfile> {
        self.points.iter().map(|p| &p.phi)
    }

    pub fn q_values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.q).collect()
    }

    pub fn dq_values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.dq).collect()
    }

    pub fn d2q_values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.d2q).collect()
    }

    pub fn energies(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.energy).collect()
    }

    pub fn actions(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.action()).collect()
    }

    pub fn omega_range(&self) -> (f64, f64) {
        (self.points[0].omega, self.points.last().unwrap().omega)
    }

    /// Interpolant of `q` through `(q, q', q'')` at the family frequencies.
    pub fn mass_curve(&self) -> &PiecewisePoly {
        self.q_interp.as_ref().expect("family interpolants not built")
    }

    pub fn check(&self, omega: f64) -> Result<()> {
        self.mass_curve().check(omega)
    }

    pub fn q_at(&self, omega: f64) -> Result<f64> {
        self.check(omega)?;
        Ok(self.mass_curve().eval(omega))
    }

    pub fn dq_at(&self, omega: f64) -> Result<f64> {
        self.check(omega)?;
        Ok(self.mass_curve().deriv(omega))
    }

    pub fn d2q_at(&self, omega: f64) -> Result<f64> {
        self.check(omega)?;
        Ok(self.mass_curve().deriv2(omega))
    }

    /// `d(ω) = d(ω_0) + ∫_{ω_0}^{ω} q`.
    pub fn action_at(&self, omega: f64) -> Result<f64> {
        self.check(omega)?;
        let p0 = &self.points[0];
        Ok(p0.action() + self.mass_curve().integral(p0.omega, omega))
    }

    /// `∫_a^b (q - Q)`.
    pub fn excess_integral(&self, q_total: f64, a: f64, b: f64) -> Result<f64> {
        self.check(a)?;
        self.check(b)?;
        Ok(self.mass_curve().shifted(-q_total).integral(a, b))
    }

    /// Family member closest in frequency.
    pub fn nearest(&self, omega: f64) -> &GroundPoint {
        self.points
            .iter()
            .min_by(|a, b| (a.omega - omega).abs().total_cmp(&(b.omega - omega).abs()))
            .unwrap()
    }

    /// Fresh solve at an arbitrary frequency in the window, seeded from the
    /// nearest member.
    pub fn point_at(&self, omega: f64) -> Result<GroundPoint> {
        self.check(omega)?;
        let near = self.nearest(omega);
        if near.omega == omega {
            return Ok(near.clone());
        }
        ground_point(omega, &self.grid, self.nl, Some(near), &self.options).map_err(|e| e.at(omega))
    }
}

/// Root `ω*` of `q'` and the curvature `q''(ω*)`. Picks the minimum of `q`
/// when several sign changes exist.
pub fn find_critical_frequency(family: &GroundStateFamily) -> Result<(f64, f64)> {
    let curve = family.mass_curve();
    let w = family.omegas();
    let dq = family.dq_values();
    let mut best: Option<(f64, f64)> = None;
    for k in 0..w.len() - 1 {
        if dq[k] < 0.0 && dq[k + 1] >= 0.0 {
            let root = if dq[k + 1] == 0.0 {
                w[k + 1]
            } else {
                find_root(|x| curve.deriv(x), w[k], w[k + 1], 1e-16)?
            };
            let c = curve.deriv2(root);
            let q = curve.eval(root);
            if c > 0.0 && best.map_or(true, |(b, _)| q < curve.eval(b)) {
                best = Some((root, c));
            }
        }
    }
    best.ok_or(Error::NoCriticalPoint)
}

/// `V_Q(ω) = d(ω) - ωQ`.
pub fn evaluate_vq(family: &GroundStateFamily, q_total: f64, omega: f64) -> Result<f64> {
    Ok(family.action_at(omega)? - omega * q_total)
}

pub fn potential_well(family: &GroundStateFamily, q_total: f64) -> Result<WellGeometry> {
    let (omega_star, q2_star) = find_critical_frequency(family)?;
    let curve = family.mass_curve();
    let excess = q_total - curve.eval(omega_star);
    if !(excess > 0.0) {
        return Err(Error::NoWell { excess });
    }
    let (lo, hi) = family.omega_range();
    let f = |x: f64| curve.eval(x) - q_total;
    if f(lo) <= 0.0 {
        return Err(Error::OutOfRange { omega: lo, lo, hi });
    }
    if f(hi) <= 0.0 {
        return Err(Error::OutOfRange { omega: hi, lo, hi });
    }
    let omega_minus = find_root(f, lo, omega_star, 1e-16)?;
    let omega_plus = find_root(f, omega_star, hi, 1e-16)?;
    let barrier = -family.excess_integral(q_total, omega_minus, omega_plus)?;
    // V_Q(ω) - V_Q(ω_-) = ∫_{ω_-}^{ω} (q - Q); zero again at ω_{++}
    let shifted = curve.shifted(-q_total);
    let rise = |x: f64| shifted.integral(omega_minus, x);
    if rise(hi) <= 0.0 {
        return Err(Error::OutOfRange { omega: hi, lo, hi });
    }
    let omega_plusplus = find_root(rise, omega_plus, hi, 1e-16)?;
    Ok(WellGeometry {
        q_total,
        epsilon: excess.sqrt(),
        omega_star,
        q2_star,
        omega_minus,
        omega_plus,
        omega_plusplus,
        barrier,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_grid() -> RadialGrid {
        RadialGrid::new(40.0, 800).unwrap()
    }

    #[test]
    fn residual_and_shape_of_cubic_ground_state() {
        let g = small_grid();
        let p = solve_ground_state(1.0, &g, Nonlinearity::Cubic, &GroundSolverOptions::default()).unwrap();
        let res = norm_inf(&stationary_residual(1.0, &p, Nonlinearity::Cubic));
        assert!(res <= 1e-10 * p.peak());
        assert!(p.min_relative() >= 0.0);
        // cubic NLS ground state in 3D: Q(1) ≈ 0.5 * 18.94 = 9.47 (Townes-type constant)
        assert!((p.values()[0] - 4.3).abs() < 0.2, "{}", p.values()[0]);
    }

    #[test]
    fn cubic_scaling_law() {
        // φ_ω(r) = √ω φ_1(√ω r), hence q(ω) = ω^{-1/2} q(1)
        let g = RadialGrid::new(30.0, 6000).unwrap();
        let o = GroundSolverOptions::default();
        let p1 = solve_ground_state(1.0, &g, Nonlinearity::Cubic, &o).unwrap();
        let p4 = solve_ground_state(4.0, &g, Nonlinearity::Cubic, &o).unwrap();
        let ratio = p4.mass() / p1.mass();
        assert!((ratio - 0.5).abs() < 2e-3, "{ratio}");
    }

    #[test]
    fn outside_existence_range_reports_no_ground_state() {
        let g = small_grid();
        let e = solve_ground_state(1.5, &g, Nonlinearity::Saturated, &GroundSolverOptions::default()).unwrap_err();
        assert!(matches!(e, Error::NoGroundState { .. }), "{e}");
        let e = solve_ground_state(-0.1, &g, Nonlinearity::Saturated, &GroundSolverOptions::default()).unwrap_err();
        assert!(matches!(e, Error::NoGroundState { .. }));
    }

    #[test]
    fn sensitivities_match_finite_differences() {
        let g = small_grid();
        let o = GroundSolverOptions { tail_floor: 1.0, ..Default::default() };
        let nl = Nonlinearity::Saturated;
        let w = 0.3;
        let d = 1e-4;
        let p = ground_point(w, &g, nl, None, &o).unwrap();
        let pp = ground_point(w + d, &g, nl, Some(&p), &o).unwrap();
        let pm = ground_point(w - d, &g, nl, Some(&p), &o).unwrap();
        assert!(((pp.q - pm.q) / (2.0 * d) - p.dq).abs() < 1e-6 * p.dq.abs().max(1.0));
        assert!(((pp.dq - pm.dq) / (2.0 * d) - p.d2q).abs() < 1e-5 * p.d2q.abs().max(1.0));
        let fd: Vec<f64> = (0..g.len())
            .map(|i| (pp.phi.values()[i] - pm.phi.values()[i]) / (2.0 * d))
            .collect();
        let diff: Vec<f64> = fd.iter().zip(p.dphi.values()).map(|(a, b)| a - b).collect();
        assert!(norm_inf(&diff) < 1e-6 * norm_inf(p.dphi.values()));
        // discrete action derivative equals the mass exactly up to solver tolerance
        let dd = (pp.action() - pm.action()) / (2.0 * d);
        assert!((dd - p.q).abs() < 1e-7 * p.q);
    }

    #[test]
    fn family_guards() {
        let g = small_grid();
        let o = GroundSolverOptions::default();
        let nl = Nonlinearity::Saturated;
        assert!(matches!(
            build_family((0.3, 0.4), 1, &g, nl, &o),
            Err(Error::InsufficientPoints { .. })
        ));
        assert!(matches!(
            build_family((0.4, 0.3), 11, &g, nl, &o),
            Err(Error::NonMonotoneGrid)
        ));
        assert!(matches!(
            build_family_on(&[0.3], &g, nl, &o),
            Err(Error::InsufficientPoints { .. })
        ));
    }

    #[test]
    fn monotone_mass_has_no_critical_point() {
        let g = small_grid();
        let o = GroundSolverOptions { tail_floor: 1.0, ..Default::default() };
        let fam = build_family((0.5, 1.5), 9, &g, Nonlinearity::Cubic, &o).unwrap();
        assert!(matches!(find_critical_frequency(&fam), Err(Error::NoCriticalPoint)));
        assert!(matches!(potential_well(&fam, 10.0), Err(Error::NoCriticalPoint)));
    }

    /// Central amplitude by RK4 shooting on `φ'' + (2/r)φ' = ωφ + g(φ²)φ`
    /// with bisection, independent of the finite-difference solver.
    fn shooting_amplitude(omega: f64, nl: Nonlinearity, step: f64, r_end: f64) -> f64 {
        let rhs = |r: f64, y: [f64; 2]| [y[1], -2.0 / r * y[1] + omega * y[0] + nl.g(y[0] * y[0]) * y[0]];
        // +1: overshoot (φ crosses zero), -1: undershoot (φ turns up)
        let classify = |a: f64| -> i32 {
            let c = omega * a + nl.g(a * a) * a;
            let mut r = 1e-3;
            let mut y = [a + c * r * r / 6.0, c * r / 3.0];
            while r < r_end {
                let k1 = rhs(r, y);
                let k2 = rhs(r + step / 2.0, [y[0] + step / 2.0 * k1[0], y[1] + step / 2.0 * k1[1]]);
                let k3 = rhs(r + step / 2.0, [y[0] + step / 2.0 * k2[0], y[1] + step / 2.0 * k2[1]]);
                let k4 = rhs(r + step, [y[0] + step * k3[0], y[1] + step * k3[1]]);
                for j in 0..2 {
                    y[j] += step / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
                }
                r += step;
                if y[0] < 0.0 {
                    return 1;
                }
                if y[1] > 0.0 {
                    return -1;
                }
            }
            0
        };
        let (mut lo, mut hi) = (1e-3, 10.0);
        assert_eq!((classify(lo), classify(hi)), (-1, 1));
        while hi - lo > 1e-14 * hi {
            let mid = 0.5 * (lo + hi);
            match classify(mid) {
                1 => hi = mid,
                -1 => lo = mid,
                _ => break,
            }
        }
        0.5 * (lo + hi)
    }

    fn default_grid() -> RadialGrid {
        RadialGrid::new(80.0, 4096).unwrap()
    }

    #[test]
    fn central_amplitude_matches_shooting_oracle() {
        let (w, nl) = (0.05, Nonlinearity::Saturated);
        let g = default_grid();
        let p = solve_ground_state(w, &g, nl, &GroundSolverOptions::default()).unwrap();
        let a = shooting_amplitude(w, nl, g.spacing() / 4.0, 60.0);
        // series value at the first node
        let h = g.r(0);
        let expect = a + (w * a + nl.g(a * a) * a) * h * h / 6.0;
        let got = p.values()[0];
        // one unit in the fifth significant digit
        assert!((got - expect).abs() < 5e-5 * expect, "{got} vs {expect}");
    }

    #[test]
    fn far_field_decays_at_the_linear_rate() {
        let w = 0.05;
        let g = default_grid();
        let p = solve_ground_state(w, &g, Nonlinearity::Saturated, &GroundSolverOptions::default()).unwrap();
        // fit log(rφ) = c - κr on the tail, away from the Dirichlet end
        let pts: Vec<(f64, f64)> = (0..g.len())
            .map(|i| (g.r(i), p.values()[i]))
            .filter(|(r, _)| (25.0..=50.0).contains(r))
            .map(|(r, x)| (r, (r * x).ln()))
            .collect();
        let n = pts.len() as f64;
        let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
        let (mx, my) = (sx / n, sy / n);
        let (num, den) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + (x - mx) * (y - my), b + (x - mx).powi(2)));
        let slope = num / den;
        assert!((slope + w.sqrt()).abs() < 0.02 * w.sqrt(), "{slope}");
    }

    #[test]
    fn family_invariants() {
        let fam = crate::fixtures::family();
        let w = fam.omegas();
        let q = fam.q_values();
        let d = fam.actions();
        let qmax = q.iter().cloned().fold(0.0, f64::max);
        for k in 1..w.len() - 1 {
            let dd = (d[k + 1] - d[k - 1]) / (w[k + 1] - w[k - 1]);
            assert!((dd - q[k]).abs() <= 1e-4 * qmax);
        }
        let dq = fam.dq_values();
        let changes = dq.windows(2).filter(|p| p[0].signum() != p[1].signum()).count();
        assert_eq!(changes, 1);
        for p in fam.points() {
            assert!(p.q > 0.0);
            let v = p.phi.values();
            assert!(v.iter().all(|x| *x > 0.0));
            assert!(v.windows(2).all(|s| s[1] <= s[0] + 1e-12 * v[0]));
            let res = norm_inf(&stationary_residual(p.omega, &p.phi, fam.nonlinearity()));
            assert!(res <= fam.options().tol * v[0]);
        }
    }

    #[test]
    fn interpolated_mass_matches_direct_solves() {
        let fam = crate::fixtures::family();
        let w = fam.omegas();
        for k in (0..w.len() - 1).step_by(3) {
            for f in [0.25, 0.5, 0.75] {
                let x = w[k] + f * (w[k + 1] - w[k]);
                let direct = ground_point(x, fam.grid(), fam.nonlinearity(), Some(&fam.points()[k]), fam.options()).unwrap();
                assert!((fam.q_at(x).unwrap() - direct.q).abs() < 1e-10 * direct.q);
            }
        }
    }

    #[test]
    fn critical_frequency_is_stable_under_refinement() {
        let fam = crate::fixtures::family();
        let (ws, c) = find_critical_frequency(fam).unwrap();
        assert!(c > 0.0);
        let max_dq = fam.dq_values().iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(fam.dq_at(ws).unwrap().abs() <= 1e-8 * max_dq);
        let (lo, hi) = fam.omega_range();
        let fine = build_family((lo, hi), 2 * fam.len() - 1, fam.grid(), fam.nonlinearity(), fam.options()).unwrap();
        let (wf, _) = find_critical_frequency(&fine).unwrap();
        assert!((wf - ws).abs() <= 1e-3 * ws);
    }

    #[test]
    fn effective_potential_consistency() {
        let fam = crate::fixtures::family();
        let (ws, _) = find_critical_frequency(fam).unwrap();
        let qs = fam.q_at(ws).unwrap();
        let q = qs + 0.05f64.powi(2);
        let well = potential_well(fam, q).unwrap();
        assert!(well.omega_minus < ws && ws < well.omega_plus && well.omega_plus < well.omega_plusplus);
        let v = |x: f64| evaluate_vq(fam, q, x).unwrap();
        let dlt = 1e-6;
        let slope = (v(well.omega_plus + dlt) - v(well.omega_plus - dlt)) / (2.0 * dlt);
        assert!(slope.abs() < 1e-6 * q * 1e-3, "{slope}");
        assert!(((v(well.omega_minus) - v(well.omega_plus)) - well.barrier).abs() < 1e-9 * well.barrier);
        assert!((v(well.omega_plusplus) - v(well.omega_minus)).abs() < 1e-9 * well.barrier);
        assert!((evaluate_vq(fam, 0.0, 0.05).unwrap() - fam.action_at(0.05).unwrap()).abs() == 0.0);
        assert!(matches!(
            potential_well(fam, qs - 0.05f64.powi(2)),
            Err(Error::NoWell { .. })
        ));
    }

    #[test]
    fn well_asymptotics_converge() {
        let fam = crate::fixtures::family();
        let (ws, _) = find_critical_frequency(fam).unwrap();
        let qs = fam.q_at(ws).unwrap();
        let errs: Vec<(f64, f64)> = [0.04, 0.02, 0.01]
            .iter()
            .map(|&e| {
                let w = potential_well(fam, qs + e * e).unwrap();
                let off = (w.omega_plus - ws) / w.leading_offset() - 1.0;
                let bar = w.barrier / w.leading_barrier() - 1.0;
                (off.abs(), bar.abs())
            })
            .collect();
        for p in errs.windows(2) {
            // relative errors are O(ε)
            assert!(p[1].0 < 0.6 * p[0].0 && p[1].1 < 0.6 * p[0].1, "{errs:?}");
        }
    }

    #[test]
    fn mass_converges_at_second_order_in_h() {
        let w = 0.05;
        let nl = Nonlinearity::Saturated;
        let q: Vec<f64> = [1024, 2048, 4096]
            .iter()
            .map(|&n| solve_ground_state(w, &RadialGrid::new(80.0, n).unwrap(), nl, &GroundSolverOptions::default()).unwrap().mass())
            .collect();
        let order = ((q[0] - q[1]) / (q[1] - q[2])).abs().log2();
        assert!(order >= 1.8, "{q:?} {order}");
    }
}
