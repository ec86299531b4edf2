//! The two-dimensional reduced system for `(ω, λ)` at fixed mass `Q`:
//!
//! ```text
//! E_Q(ω, λ) = ½A(ω)λ² + V_Q(ω) - V_Q(ω_ref),
//! ω̇ = A⁻¹ ∂_λ E_Q = λ,   λ̇ = -A⁻¹ ∂_ω E_Q = -A⁻¹(q(ω) - Q + ½A'(ω)λ²),
//! ```
//!
//! with `ω_ref = ω_+` when a well exists and `ω*` otherwise.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ground::{find_critical_frequency, potential_well, GroundStateFamily, WellGeometry};
use crate::interp::{constant, find_root, PiecewisePoly};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairingMode {
    /// `A ≡ A(ω*)`.
    Frozen,
    /// `A(ω)` from a spline through kernel nodes.
    Variable,
}

#[derive(Debug, Clone)]
pub struct ReducedModel {
    q_total: f64,
    /// `Q - q(ω*)`.
    gap: f64,
    epsilon: f64,
    omega_star: f64,
    q2_star: f64,
    well: Option<WellGeometry>,
    reference: f64,
    /// `q(ω) - Q`.
    excess: PiecewisePoly,
    pairing: PiecewisePoly,
    c0: f64,
    lo: f64,
    hi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReducedState {
    pub t: f64,
    pub omega: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Trapping {
    Trapped { degenerate: bool },
    Escaping,
}

impl Trapping {
    pub fn is_trapped(self) -> bool {
        matches!(self, Trapping::Trapped { .. })
    }

    pub fn label(self) -> &'static str {
        match self {
            Trapping::Trapped { degenerate: false } => "trapped",
            Trapping::Trapped { degenerate: true } => "trapped-degenerate",
            Trapping::Escaping => "escaping",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedTrajectory {
    pub q_total: f64,
    pub epsilon: f64,
    pub dt: f64,
    pub states: Vec<ReducedState>,
    pub energy: Vec<f64>,
    pub classification: Trapping,
    /// Set when ω left the model window and integration stopped early.
    pub window_exit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodEstimate {
    pub period: f64,
    pub std_dev: f64,
    pub crossings: Vec<f64>,
}

/// Trapping fraction `c` used when none is given.
pub const DEFAULT_TRAP_FRACTION: f64 = 0.9;

const NEWTON_MAX: usize = 50;

impl ReducedModel {
    /// Model with the given `A(ω)` curve; `a_star` is `A(ω*)` and enters
    /// `c0 = A(ω*)⁻¹√(2q''(ω*))`.
    pub fn new(family: &GroundStateFamily, q_total: f64, pairing: PiecewisePoly, a_star: f64) -> Result<Self> {
        let (omega_star, q2_star) = find_critical_frequency(family)?;
        if !(a_star > 0.0) {
            return Err(Error::NonPositivePairing {
                omega: omega_star,
                value: a_star,
            });
        }
        let curve = family.mass_curve();
        let lo = curve.lo().max(pairing.lo());
        let hi = curve.hi().min(pairing.hi());
        for &k in pairing.knots() {
            if !(pairing.eval(k) > 0.0) {
                return Err(Error::NonPositivePairing {
                    omega: k,
                    value: pairing.eval(k),
                });
            }
        }
        let gap = q_total - curve.eval(omega_star);
        let well = match potential_well(family, q_total) {
            Ok(w) => Some(w),
            Err(Error::NoWell { .. }) => None,
            Err(e) => return Err(e),
        };
        let reference = well.map_or(omega_star, |w| w.omega_plus);
        Ok(Self {
            q_total,
            gap,
            epsilon: gap.abs().sqrt(),
            omega_star,
            q2_star,
            well,
            reference,
            excess: curve.shifted(-q_total),
            pairing,
            c0: (2.0 * q2_star).sqrt() / a_star,
            lo,
            hi,
        })
    }

    /// Model with `A ≡ a_star` over the whole family range.
    pub fn frozen(family: &GroundStateFamily, q_total: f64, a_star: f64) -> Result<Self> {
        let (lo, hi) = family.omega_range();
        Self::new(family, q_total, constant(lo, hi, a_star), a_star)
    }

    pub fn q_total(&self) -> f64 {
        self.q_total
    }

    /// `√|Q - q(ω*)|`.
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// `Q - q(ω*)`, negative below the minimal mass.
    pub fn mass_gap(&self) -> f64 {
        self.gap
    }

    /// `ω_+` with a well, `ω*` without.
    pub fn reference(&self) -> f64 {
        self.reference
    }

    pub fn omega_star(&self) -> f64 {
        self.omega_star
    }

    pub fn q2_star(&self) -> f64 {
        self.q2_star
    }

    pub fn well(&self) -> Option<&WellGeometry> {
        self.well.as_ref()
    }

    pub fn c0(&self) -> f64 {
        self.c0
    }

    pub fn window(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    fn check(&self, omega: f64) -> Result<()> {
        if omega >= self.lo && omega <= self.hi {
            Ok(())
        } else {
            Err(Error::OutOfRange {
                omega,
                lo: self.lo,
                hi: self.hi,
            })
        }
    }

    pub fn pairing_at(&self, omega: f64) -> Result<f64> {
        self.check(omega)?;
        Ok(self.pairing.eval(omega))
    }

    /// `V_Q(ω) - V_Q(ω_ref) = ∫_{ω_ref}^{ω} (q - Q)`.
    pub fn potential(&self, omega: f64) -> Result<f64> {
        self.check(omega)?;
        Ok(self.excess.integral(self.reference, omega))
    }

    pub fn energy(&self, omega: f64, lambda: f64) -> Result<f64> {
        Ok(0.5 * self.pairing_at(omega)? * lambda * lambda + self.potential(omega)?)
    }

    pub fn rhs(&self, omega: f64, lambda: f64) -> Result<(f64, f64)> {
        self.check(omega)?;
        let (a, da, _) = self.pairing.eval3(omega);
        let f = self.excess.eval(omega);
        Ok((lambda, -(f + 0.5 * da * lambda * lambda) / a))
    }

    /// Harmonic period `2π/√(A(ω_+)⁻¹ V_Q''(ω_+))` at the well bottom.
    pub fn harmonic_period(&self) -> Result<f64> {
        let w = self.well.ok_or(Error::NoWell { excess: self.gap })?;
        let k = self.excess.deriv(w.omega_plus) / self.pairing_at(w.omega_plus)?;
        Ok(2.0 * std::f64::consts::PI / k.sqrt())
    }

    /// Largest step accepted by [`Self::integrate`].
    pub fn step_limit(&self) -> f64 {
        0.05 / (self.c0 * self.epsilon).sqrt()
    }

    /// Turning point `ω0 ∈ (ω_+, ω_{++})` with `E_Q(ω0, 0) = fraction·barrier`.
    pub fn turning_point(&self, fraction: f64) -> Result<f64> {
        let w = self.well.ok_or(Error::NoWell { excess: self.gap })?;
        let target = fraction * w.barrier;
        find_root(
            |x| self.excess.integral(w.omega_plus, x) - target,
            w.omega_plus,
            w.omega_plusplus.min(self.hi),
            1e-16,
        )
    }

    pub fn classify(&self, omega: f64, lambda: f64, fraction: f64) -> Trapping {
        let Some(w) = self.well else {
            return Trapping::Escaping;
        };
        let Ok(e) = self.energy(omega, lambda) else {
            return Trapping::Escaping;
        };
        if omega <= w.omega_minus {
            return Trapping::Escaping;
        }
        let tiny = 1e-12 * w.barrier;
        if e.abs() <= tiny {
            Trapping::Trapped { degenerate: true }
        } else if e > 0.0 && e < fraction * w.barrier {
            Trapping::Trapped { degenerate: false }
        } else {
            Trapping::Escaping
        }
    }

    /// Discrete gradient of `E_Q` between two states: `ḡ·(x1 - x0) = E(x1) - E(x0)`
    /// exactly, symmetric under exchange of the endpoints.
    fn discrete_gradient(&self, x0: (f64, f64), x1: (f64, f64)) -> (f64, f64) {
        let (w0, l0) = x0;
        let (w1, l1) = x1;
        let a0 = self.pairing.eval(w0);
        let a1 = self.pairing.eval(w1);
        let g_omega =
            0.25 * (l0 * l0 + l1 * l1) * self.pairing.divided_difference(w0, w1) + self.excess.mean(w0, w1);
        let g_lambda = 0.25 * (a0 + a1) * (l0 + l1);
        (g_omega, g_lambda)
    }

    /// Jacobian of the vector field.
    fn jacobian(&self, omega: f64, lambda: f64) -> [[f64; 2]; 2] {
        let (a, da, d2a) = self.pairing.eval3(omega);
        let (f, df, _) = self.excess.eval3(omega);
        let num = f + 0.5 * da * lambda * lambda;
        let dnum = df + 0.5 * d2a * lambda * lambda;
        [[0.0, 1.0], [-dnum / a + num * da / (a * a), -da * lambda / a]]
    }

    /// One energy-conserving step. Returns `None` when an iterate leaves
    /// the window.
    fn step(&self, x0: (f64, f64), dt: f64) -> Result<Option<(f64, f64)>> {
        let inside = |w: f64| w >= self.lo && w <= self.hi;
        let (f0w, f0l) = self.rhs(x0.0, x0.1)?;
        let mut x1 = (x0.0 + dt * f0w, x0.1 + dt * f0l);
        let mut last = f64::INFINITY;
        for _ in 0..NEWTON_MAX {
            if !inside(x1.0) {
                return Ok(None);
            }
            let mid = 0.5 * (x0.0 + x1.0);
            let a_mid = self.pairing.eval(mid);
            let (gw, gl) = self.discrete_gradient(x0, x1);
            let r = (x1.0 - x0.0 - dt * gl / a_mid, x1.1 - x0.1 + dt * gw / a_mid);
            let jf = self.jacobian(mid, 0.5 * (x0.1 + x1.1));
            let h = 0.5 * dt;
            let m = [[1.0 - h * jf[0][0], -h * jf[0][1]], [-h * jf[1][0], 1.0 - h * jf[1][1]]];
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            let dw = (m[1][1] * r.0 - m[0][1] * r.1) / det;
            let dl = (-m[1][0] * r.0 + m[0][0] * r.1) / det;
            x1 = (x1.0 - dw, x1.1 - dl);
            let tol_w = 8.0 * f64::EPSILON * x1.0.abs();
            let tol_l = 8.0 * f64::EPSILON * x0.1.abs().max(x1.1.abs()).max(f64::MIN_POSITIVE);
            let size = (dw.abs() / tol_w).max(dl.abs() / tol_l);
            // converged, or stalled at the round-off floor
            if size <= 1.0 || (size >= last && size < 1e6) {
                return Ok(Some(x1));
            }
            last = size;
        }
        if inside(x1.0) {
            Err(Error::NotConverged {
                what: "reduced step",
                iterations: NEWTON_MAX,
                residual: last,
            })
        } else {
            Ok(None)
        }
    }

    /// Integrates from `state0` for a duration `t_end` (negative for
    /// backward integration) with fixed step `|dt|`.
    pub fn integrate(&self, state0: ReducedState, t_end: f64, dt: f64) -> Result<ReducedTrajectory> {
        let dt = dt.abs();
        let limit = self.step_limit();
        if !(dt > 0.0) || dt > limit {
            return Err(Error::StepTooLarge { dt, limit });
        }
        self.check(state0.omega)?;
        let steps = (t_end.abs() / dt).round() as usize;
        let h = if t_end < 0.0 { -dt } else { dt };
        let classification = self.classify(state0.omega, state0.lambda, DEFAULT_TRAP_FRACTION);
        let mut states = Vec::with_capacity(steps + 1);
        let mut energy = Vec::with_capacity(steps + 1);
        states.push(state0);
        energy.push(self.energy(state0.omega, state0.lambda)?);
        let mut x = (state0.omega, state0.lambda);
        let mut window_exit = false;
        for k in 1..=steps {
            match self.step(x, h)? {
                Some(next) => {
                    x = next;
                    states.push(ReducedState {
                        t: state0.t + k as f64 * h,
                        omega: x.0,
                        lambda: x.1,
                    });
                    energy.push(self.energy(x.0, x.1)?);
                }
                None => {
                    window_exit = true;
                    break;
                }
            }
        }
        Ok(ReducedTrajectory {
            q_total: self.q_total,
            epsilon: self.epsilon,
            dt,
            states,
            energy,
            classification: if window_exit { Trapping::Escaping } else { classification },
            window_exit,
        })
    }

    /// Rescaled orbit `(τ, ζ, κ) = (ε^{1/2}t, (ω - ω_+)/ε, λ/ε^{3/2})`.
    pub fn rescaled_view(&self, trajectory: &ReducedTrajectory) -> Vec<(f64, f64, f64)> {
        let e = self.epsilon;
        trajectory
            .states
            .iter()
            .map(|s| (e.sqrt() * s.t, (s.omega - self.reference) / e, s.lambda / e.powf(1.5)))
            .collect()
    }
}

impl ReducedTrajectory {
    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.t).collect()
    }

    pub fn omegas(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.omega).collect()
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.lambda).collect()
    }

    pub fn max_energy_drift(&self) -> f64 {
        let e0 = self.energy.first().copied().unwrap_or(0.0);
        self.energy.iter().fold(0.0, |m, e| m.max((e - e0).abs()))
    }

    pub fn period(&self) -> Result<PeriodEstimate> {
        // λ on a trapped orbit is of order ε^{3/2}; anything far below is round-off
        let floor = 1e-12 * self.epsilon.powf(1.5);
        measure_period(&self.times(), &self.lambdas(), self.dt, floor)
    }

    /// CSV with columns `t, omega, lambda, E_Q` after `#` metadata lines.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# schema_version=1")?;
        writeln!(out, "# Q={:.17e}", self.q_total)?;
        writeln!(out, "# epsilon={:.17e}", self.epsilon)?;
        writeln!(out, "# dt={:.17e}", self.dt)?;
        writeln!(out, "# classification={}", self.classification.label())?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "omega", "lambda", "E_Q"])?;
        for (s, e) in self.states.iter().zip(&self.energy) {
            w.write_record(&[
                format!("{:.17e}", s.t),
                format!("{:.17e}", s.omega),
                format!("{:.17e}", s.lambda),
                format!("{:.17e}", e),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Period from upward zero crossings of a sampled signal (for `λ`, the
/// crossings sit at the left turning points of `ω`). A crossing counts only
/// after the signal has dipped below `-floor`; crossings closer than `merge`
/// are merged.
pub fn measure_period(t: &[f64], x: &[f64], merge: f64, floor: f64) -> Result<PeriodEstimate> {
    let mut crossings: Vec<f64> = Vec::new();
    let mut armed = false;
    for k in 1..t.len().min(x.len()) {
        let (a, b) = (x[k - 1], x[k]);
        if a < -floor {
            armed = true;
        }
        if armed && a < 0.0 && b >= 0.0 {
            armed = false;
            let tc = t[k - 1] + (t[k] - t[k - 1]) * (-a) / (b - a);
            match crossings.last_mut() {
                Some(last) if tc - *last <= merge => *last = 0.5 * (*last + tc),
                _ => crossings.push(tc),
            }
        }
    }
    if crossings.len() < 2 {
        return Err(Error::NotPeriodic {
            found: crossings.len(),
        });
    }
    let gaps: Vec<f64> = crossings.windows(2).map(|w| w[1] - w[0]).collect();
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    let var = gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / gaps.len() as f64;
    Ok(PeriodEstimate {
        period: mean,
        std_dev: var.sqrt(),
        crossings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{family, omega_star};
    use crate::interp::cubic_spline;

    const A_STAR: f64 = 7.0e4;

    fn q_star() -> f64 {
        family().q_at(omega_star()).unwrap()
    }

    fn frozen(eps: f64) -> ReducedModel {
        ReducedModel::frozen(family(), q_star() + eps * eps, A_STAR).unwrap()
    }

    fn variable(eps: f64) -> ReducedModel {
        let w: Vec<f64> = (0..9).map(|k| 0.04 + 0.0025 * k as f64).collect();
        let a: Vec<f64> = w.iter().map(|x| A_STAR * (1.0 - 30.0 * (x - omega_star()))).collect();
        ReducedModel::new(family(), q_star() + eps * eps, cubic_spline(&w, &a).unwrap(), A_STAR).unwrap()
    }

    #[test]
    fn energy_reference_points() {
        let m = variable(0.05);
        let w = *m.well().unwrap();
        assert!(m.energy(w.omega_plus, 0.0).unwrap().abs() < 1e-18);
        let e = m.energy(w.omega_minus, 0.0).unwrap();
        assert!((e - w.barrier).abs() <= 1e-10 * w.barrier);
        let x = 0.5 * (w.omega_plus + w.omega_plusplus);
        assert_eq!(m.energy(x, 3e-5).unwrap(), m.energy(x, -3e-5).unwrap());
    }

    #[test]
    fn well_critical_points_are_equilibria() {
        let m = variable(0.05);
        let w = *m.well().unwrap();
        for x in [w.omega_plus, w.omega_minus] {
            let (a, b) = m.rhs(x, 0.0).unwrap();
            assert_eq!(a, 0.0);
            assert!(b.abs() < 1e-12, "{b}");
        }
    }

    #[test]
    fn vector_field_is_weighted_skew_gradient() {
        let m = variable(0.06);
        let w = *m.well().unwrap();
        for (x, l) in [(w.omega_plus + 3e-4, 2e-5), (w.omega_minus + 1e-4, -1e-5), (w.omega_plusplus - 1e-5, 4e-6)] {
            let a = m.pairing_at(x).unwrap();
            let (hw, hl) = (1e-7, 1e-9);
            let de_dw = (m.energy(x + hw, l).unwrap() - m.energy(x - hw, l).unwrap()) / (2.0 * hw);
            let de_dl = (m.energy(x, l + hl).unwrap() - m.energy(x, l - hl).unwrap()) / (2.0 * hl);
            let (fw, fl) = m.rhs(x, l).unwrap();
            assert!((fw - de_dl / a).abs() <= 1e-6 * fw.abs(), "{fw} {}", de_dl / a);
            assert!((fl + de_dw / a).abs() <= 1e-6 * fl.abs(), "{fl} {}", -de_dw / a);
        }
    }

    #[test]
    fn equilibrium_stays_put() {
        let m = frozen(0.05);
        let w = *m.well().unwrap();
        let s0 = ReducedState { t: 0.0, omega: w.omega_plus, lambda: 0.0 };
        let tr = m.integrate(s0, 2000.0, 1.0).unwrap();
        let dev = tr.states.iter().fold(0.0f64, |d, s| d.max((s.omega - w.omega_plus).abs()));
        assert!(dev <= 1e-10, "{dev}");
        assert!(matches!(tr.classification, Trapping::Trapped { degenerate: true }));
        assert!(matches!(tr.period(), Err(Error::NotPeriodic { .. })));
        assert!(m.rescaled_view(&tr).iter().all(|&(_, z, k)| z.abs() < 1e-6 && k.abs() < 1e-9));
    }

    #[test]
    fn energy_is_conserved_to_round_off() {
        for m in [frozen(0.05), variable(0.05)] {
            let w = *m.well().unwrap();
            let s0 = ReducedState { t: 0.0, omega: m.turning_point(0.8).unwrap(), lambda: 0.0 };
            let t_end = 3000.0;
            let tr = m.integrate(s0, t_end, 1.0).unwrap();
            assert!(!tr.window_exit);
            let drift = tr.max_energy_drift();
            assert!(drift <= 1e-9 * w.barrier * t_end, "{drift:e} vs barrier {:e}", w.barrier);
        }
    }

    #[test]
    fn forward_then_backward_returns_home() {
        let m = variable(0.07);
        let s0 = ReducedState { t: 0.0, omega: m.turning_point(0.5).unwrap(), lambda: 1e-6 };
        let fwd = m.integrate(s0, 1500.0, 0.5).unwrap();
        let end = *fwd.states.last().unwrap();
        let back = m.integrate(end, -1500.0, 0.5).unwrap();
        let home = back.states.last().unwrap();
        let w = m.well().unwrap();
        let lmax = fwd.lambdas().iter().fold(0.0f64, |a, l| a.max(l.abs()));
        assert!((home.omega - s0.omega).abs() <= 1e-8 * (w.omega_plus - w.omega_star));
        assert!((home.lambda - s0.lambda).abs() <= 1e-8 * lmax);
        assert!(home.t.abs() < 1e-9);
    }

    #[test]
    fn lambda_parity_is_time_reflection() {
        let m = variable(0.05);
        let omega0 = m.turning_point(0.4).unwrap();
        let plus = m.integrate(ReducedState { t: 0.0, omega: omega0, lambda: 2e-6 }, -800.0, 0.5).unwrap();
        let minus = m.integrate(ReducedState { t: 0.0, omega: omega0, lambda: -2e-6 }, 800.0, 0.5).unwrap();
        let lmax = minus.lambdas().iter().fold(0.0f64, |a, l| a.max(l.abs()));
        for (a, b) in plus.states.iter().zip(&minus.states) {
            assert!((a.t + b.t).abs() < 1e-9);
            assert!((a.omega - b.omega).abs() <= 1e-12, "{} {}", a.omega, b.omega);
            assert!((a.lambda + b.lambda).abs() <= 1e-8 * lmax);
        }
    }

    #[test]
    fn trapping_classification() {
        let m = frozen(0.05);
        let w = *m.well().unwrap();
        assert_eq!(m.classify(w.omega_plus, 0.0, 0.9), Trapping::Trapped { degenerate: true });
        let x = m.turning_point(0.5).unwrap();
        assert_eq!(m.classify(x, 0.0, 0.9), Trapping::Trapped { degenerate: false });
        assert_eq!(m.classify(w.omega_minus - 1e-4, 0.0, 0.9), Trapping::Escaping);
        assert_eq!(m.classify(w.omega_minus - 1e-4, 1e-5, 0.9), Trapping::Escaping);
        let x = m.turning_point(0.95).unwrap();
        assert_eq!(m.classify(x, 0.0, 0.9), Trapping::Escaping);
    }

    #[test]
    fn small_orbits_oscillate_at_the_harmonic_period() {
        let m = frozen(0.05);
        let s0 = ReducedState { t: 0.0, omega: m.turning_point(0.1).unwrap(), lambda: 0.0 };
        let th = m.harmonic_period().unwrap();
        let tr = m.integrate(s0, 4.0 * th, 0.5).unwrap();
        let p = tr.period().unwrap();
        assert!(p.crossings.len() >= 3);
        assert!((p.period / th - 1.0).abs() < 0.1, "{} vs {}", p.period, th);
        // oscillation frequency² = c0 ε at leading order
        let lead = 2.0 * std::f64::consts::PI / (m.c0() * m.epsilon()).sqrt();
        assert!((th / lead - 1.0).abs() < 0.1, "{th} vs {lead}");
    }

    #[test]
    fn unbound_start_escapes_through_the_window_edge() {
        let m = frozen(0.05);
        let w = *m.well().unwrap();
        let s0 = ReducedState { t: 0.0, omega: w.omega_minus - 2e-4, lambda: 0.0 };
        assert_eq!(m.classify(s0.omega, s0.lambda, 0.9), Trapping::Escaping);
        let tr = m.integrate(s0, 1e6, 2.0).unwrap();
        assert!(tr.window_exit);
        assert_eq!(tr.classification, Trapping::Escaping);
        assert!(tr.omegas().windows(2).all(|p| p[1] <= p[0]));
    }

    #[test]
    fn below_minimal_mass_frequency_falls_monotonically() {
        let m = ReducedModel::frozen(family(), q_star() - 0.05 * 0.05, A_STAR).unwrap();
        assert!(m.well().is_none());
        let s0 = ReducedState { t: 0.0, omega: m.omega_star() + 5e-4, lambda: 0.0 };
        let tr = m.integrate(s0, 1e6, 2.0).unwrap();
        assert!(tr.window_exit);
        let l = tr.lambdas();
        let w = tr.omegas();
        for k in 1..w.len() {
            if l[k - 1] < 0.0 {
                assert!(w[k] < w[k - 1]);
            }
        }
        assert!(l.iter().skip(1).all(|&x| x < 0.0));
    }

    #[test]
    fn oversized_step_is_rejected() {
        let m = frozen(0.05);
        let s0 = ReducedState { t: 0.0, omega: m.turning_point(0.3).unwrap(), lambda: 0.0 };
        let e = m.integrate(s0, 10.0, 2.0 * m.step_limit()).unwrap_err();
        assert!(matches!(e, Error::StepTooLarge { .. }));
    }

    #[test]
    fn period_markers_merge_within_tolerance() {
        let t: Vec<f64> = (0..2000).map(|k| k as f64 * 0.01).collect();
        let x: Vec<f64> = t.iter().map(|s| (2.0 * std::f64::consts::PI * s / 4.0).sin()).collect();
        let p = measure_period(&t, &x, 0.01, 0.0).unwrap();
        assert!((p.period - 4.0).abs() < 1e-3);
        assert!(p.std_dev < 1e-3);
        let x = vec![-1.0, 1.0, -1.0, 1.0];
        let p = measure_period(&[0.0, 1.0, 1.5, 2.0], &x, 1.5, 0.0);
        assert!(matches!(p, Err(Error::NotPeriodic { found: 1 })));
        let noise = vec![-1e-20, 1e-20, -1e-20, 1e-20];
        let p = measure_period(&[0.0, 1.0, 2.0, 3.0], &noise, 0.0, 1e-12);
        assert!(matches!(p, Err(Error::NotPeriodic { found: 0 })));
    }

    #[test]
    fn trajectory_csv_has_metadata_and_columns() {
        let m = frozen(0.05);
        let s0 = ReducedState { t: 0.0, omega: m.turning_point(0.3).unwrap(), lambda: 0.0 };
        let tr = m.integrate(s0, 10.0, 1.0).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# schema_version=1\n"));
        assert!(text.contains("# classification=trapped\n"));
        assert!(text.contains("t,omega,lambda,E_Q\n"));
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 12);
    }
}
