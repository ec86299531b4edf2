//! Radial evolution of `i u_t = -Δu + g(|u|²)u` by Strang splitting: exact
//! nonlinear phase rotations around a Crank–Nicolson step for `i v_t = -v_rr`
//! on `v = r u` with Dirichlet ends.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::RadialGrid;
use crate::linalg::ComplexTridiagFactor;
use crate::linearization::KernelBasis;
use crate::modulation::{mu_from_q, reconstruct};
use crate::nonlinearity::Nonlinearity;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldState {
    pub grid: RadialGrid,
    pub u: Vec<Complex64>,
    pub t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConservedPair {
    #[serde(rename = "Q")]
    pub mass: f64,
    #[serde(rename = "E")]
    pub energy: f64,
}

impl FieldState {
    pub fn new(grid: RadialGrid, u: Vec<Complex64>, t: f64) -> Result<Self> {
        if u.len() != grid.len() {
            return Err(Error::InvalidGrid(format!("field has {} samples, grid {}", u.len(), grid.len())));
        }
        if u.iter().any(|z| !z.is_finite()) {
            return Err(Error::InvalidGrid("non-finite field sample".into()));
        }
        Ok(Self { grid, u, t })
    }

    pub fn mass(&self) -> f64 {
        let h = self.grid.spacing();
        let s: f64 = self
            .u
            .iter()
            .enumerate()
            .map(|(i, z)| {
                let r = self.grid.r(i);
                r * r * z.norm_sqr()
            })
            .sum();
        2.0 * PI * h * s
    }

    /// Largest `|u|` over the outer `fraction` of the domain relative to the
    /// peak of `|u|`.
    pub fn tail_amplitude(&self, fraction: f64) -> f64 {
        let n = self.u.len();
        let start = ((1.0 - fraction) * n as f64) as usize;
        let peak = self.u.iter().fold(0.0f64, |m, z| m.max(z.norm()));
        if peak == 0.0 {
            return 0.0;
        }
        self.u[start.min(n - 1)..].iter().fold(0.0f64, |m, z| m.max(z.norm())) / peak
    }

    /// Snapshot CSV `r, re_u, im_u` after `#` metadata lines.
    pub fn write_csv<W: Write>(&self, mut out: W, dt: f64) -> Result<()> {
        writeln!(out, "# schema_version=1")?;
        writeln!(out, "# t={:.17e}", self.t)?;
        writeln!(out, "# dt={:.17e}", dt)?;
        writeln!(out, "# r_max={:.17e}", self.grid.r_max())?;
        writeln!(out, "# n_points={}", self.grid.len())?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["r", "re_u", "im_u"])?;
        for (i, z) in self.u.iter().enumerate() {
            w.write_record(&[
                format!("{:.17e}", self.grid.r(i)),
                format!("{:.17e}", z.re),
                format!("{:.17e}", z.im),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Discrete `Q = ½∫|u|²` and `E = ½∫|∇u|² + ½∫G(|u|²)`.
pub fn conserved_quantities(field: &FieldState, nl: Nonlinearity) -> ConservedPair {
    let g = &field.grid;
    let potential: f64 = field
        .u
        .iter()
        .enumerate()
        .map(|(i, z)| {
            let r = g.r(i);
            r * r * nl.antiderivative(z.norm_sqr())
        })
        .sum::<f64>()
        * 4.0
        * PI
        * g.spacing();
    ConservedPair {
        mass: field.mass(),
        energy: 0.5 * g.gradient_norm_sq_complex(&field.u) + 0.5 * potential,
    }
}

/// `u0 = e^{iθ0}(φ_{ω0} + iλ0η + μζ + r)` with `μ` fixed by the mass
/// `Q_target`. `r` should already lie in the range of `P(ω0)`.
pub fn init_field(
    kernel: &KernelBasis,
    lambda0: f64,
    q_target: f64,
    r: Option<(&[f64], &[f64])>,
    theta0: f64,
    nl: Nonlinearity,
) -> Result<(FieldState, ConservedPair, f64)> {
    let mu = mu_from_q(kernel, q_target, lambda0, r).map_err(|e| Error::MuSolveFailed(e.to_string()))?;
    let u = reconstruct(kernel, theta0, lambda0, mu, r);
    let field = FieldState::new(kernel.grid().clone(), u, 0.0)?;
    let c = conserved_quantities(&field, nl);
    if (c.mass - q_target).abs() > 1e-8 * q_target {
        return Err(Error::MassMismatch {
            target: q_target,
            achieved: c.mass,
        });
    }
    Ok((field, c, mu))
}

/// Smooth damping band `σ(r) = strength·sin²(π/2·(r - r_s)/width)` on
/// `r > r_max - width`. Breaks exact conservation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sponge {
    pub width: f64,
    pub strength: f64,
}

/// Time integrator built from the Strang step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Second order.
    #[default]
    Strang,
    /// Fourth-order triple-jump composition of three Strang substeps.
    Yoshida4,
}

impl Scheme {
    /// Substep sizes as fractions of `dt`.
    fn weights(self) -> Vec<f64> {
        match self {
            Scheme::Strang => vec![1.0],
            Scheme::Yoshida4 => {
                let c = 2f64.cbrt();
                let w1 = 1.0 / (2.0 - c);
                vec![w1, -c * w1, w1]
            }
        }
    }
}

/// Crank–Nicolson factor for one substep size, with the explicit half
/// `1 - iα`, `iα/2`.
#[derive(Debug, Clone)]
struct LinearStage {
    factor: ComplexTridiagFactor,
    explicit_diag: Complex64,
    explicit_off: Complex64,
}

impl LinearStage {
    fn new(grid: &RadialGrid, tau: f64) -> Result<Self> {
        let h = grid.spacing();
        let alpha = tau / (h * h);
        let i = Complex64::new(0.0, 1.0);
        // (I + i τ/2 D) v1 = (I - i τ/2 D) v0, D = tridiag(-1, 2, -1)/h²
        let factor = ComplexTridiagFactor::new(grid.len(), 1.0 + i * alpha, -i * (0.5 * alpha))?;
        Ok(Self {
            factor,
            explicit_diag: 1.0 - i * alpha,
            explicit_off: i * (0.5 * alpha),
        })
    }
}

/// Fixed-size split steps on a fixed grid.
#[derive(Debug, Clone)]
pub struct SplitStepper {
    grid: RadialGrid,
    dt: f64,
    nl: Nonlinearity,
    weights: Vec<f64>,
    stages: Vec<LinearStage>,
    radii: Vec<f64>,
    damping: Option<Vec<f64>>,
    scratch: Vec<Complex64>,
}

impl SplitStepper {
    pub fn new(grid: &RadialGrid, dt: f64, nl: Nonlinearity, sponge: Option<Sponge>) -> Result<Self> {
        Self::with_scheme(grid, dt, nl, sponge, Scheme::Strang)
    }

    pub fn with_scheme(
        grid: &RadialGrid,
        dt: f64,
        nl: Nonlinearity,
        sponge: Option<Sponge>,
        scheme: Scheme,
    ) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::StepTooLarge { dt, limit: f64::INFINITY });
        }
        let weights = scheme.weights();
        let stages = weights
            .iter()
            .map(|w| LinearStage::new(grid, w * dt))
            .collect::<Result<Vec<_>>>()?;
        let damping = sponge.map(|s| {
            let start = grid.r_max() - s.width;
            grid.nodes()
                .iter()
                .map(|&r| {
                    if r <= start {
                        1.0
                    } else {
                        let x = (0.5 * PI * (r - start) / s.width).sin();
                        (-s.strength * x * x * dt).exp()
                    }
                })
                .collect()
        });
        Ok(Self {
            grid: grid.clone(),
            dt,
            nl,
            weights,
            stages,
            radii: grid.nodes(),
            damping,
            scratch: vec![Complex64::new(0.0, 0.0); grid.len()],
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    fn rotate(&self, u: &mut [Complex64], tau: f64) {
        for z in u.iter_mut() {
            let (s, c) = (-self.nl.g(z.norm_sqr()) * tau).sin_cos();
            *z *= Complex64::new(c, s);
        }
    }

    fn linear(&mut self, stage: usize, u: &mut [Complex64]) {
        let st = &self.stages[stage];
        let n = u.len();
        let v = &mut self.scratch;
        for i in 0..n {
            v[i] = u[i] * self.radii[i];
        }
        let mut prev = Complex64::new(0.0, 0.0);
        for i in 0..n {
            let next = if i + 1 < n { v[i + 1] } else { Complex64::new(0.0, 0.0) };
            let cur = v[i];
            v[i] = st.explicit_diag * cur + st.explicit_off * (prev + next);
            prev = cur;
        }
        st.factor.solve_in_place(v);
        for i in 0..n {
            u[i] = v[i] / self.radii[i];
        }
    }

    pub fn step(&mut self, field: &mut FieldState) -> Result<()> {
        self.advance(field, 1)
    }

    /// `steps` steps. Rotations preserve `|u|`, so the closing half rotation
    /// of one Strang substep and the opening half of the next merge into a
    /// single rotation.
    pub fn advance(&mut self, field: &mut FieldState, steps: usize) -> Result<()> {
        if field.grid != self.grid {
            return Err(Error::InvalidGrid("field and stepper grids differ".into()));
        }
        if steps == 0 {
            return Ok(());
        }
        let m = self.weights.len();
        let dt = self.dt;
        self.rotate(&mut field.u, 0.5 * self.weights[0] * dt);
        for k in 0..steps {
            for j in 0..m {
                self.linear(j, &mut field.u);
                let last = j + 1 == m;
                if last {
                    if let Some(d) = &self.damping {
                        for (z, f) in field.u.iter_mut().zip(d) {
                            *z *= *f;
                        }
                    }
                }
                let next = match (last, k + 1 == steps) {
                    (false, _) => self.weights[j + 1],
                    (true, false) => self.weights[0],
                    (true, true) => 0.0,
                };
                self.rotate(&mut field.u, 0.5 * (self.weights[j] + next) * dt);
            }
        }
        field.t += steps as f64 * dt;
        Ok(())
    }
}

/// One Strang step of size `dt`.
pub fn step(field: &FieldState, dt: f64, nl: Nonlinearity) -> Result<FieldState> {
    let mut out = field.clone();
    SplitStepper::new(&field.grid, dt, nl, None)?.step(&mut out)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolveOptions {
    pub dt: f64,
    /// Observer called every this many steps (and at the final step).
    pub observe_every: usize,
    pub step_cap: u64,
    /// Largest tolerated `|u|` in the outer 5% of the domain, relative to the
    /// peak.
    pub tail_floor: f64,
    pub sponge: Option<Sponge>,
    pub scheme: Scheme,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self {
            dt: 5e-3,
            observe_every: 100,
            step_cap: 20_000_000,
            tail_floor: 1e-4,
            sponge: None,
            scheme: Scheme::Strang,
        }
    }
}

/// Fraction of the domain watched by the tail monitor.
pub const TAIL_BAND: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConservedSample {
    pub t: f64,
    #[serde(rename = "Q")]
    pub mass: f64,
    #[serde(rename = "E")]
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolveReport {
    pub steps: u64,
    pub series: Vec<ConservedSample>,
    pub max_mass_drift: f64,
    pub max_energy_drift: f64,
    /// Set when the observer asked to stop before the end time.
    pub stopped_early: bool,
}

impl EvolveReport {
    /// CSV `t, Q, E` after a schema line.
    pub fn write_conserved_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# schema_version=1")?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "Q", "E"])?;
        for s in &self.series {
            w.write_record(&[
                format!("{:.17e}", s.t),
                format!("{:.17e}", s.mass),
                format!("{:.17e}", s.energy),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Evolves `field` in place up to `t_end`, calling `observer` on the initial
/// state and every `observe_every` steps. The observer returns `false` to
/// stop.
pub fn evolve<F>(field: &mut FieldState, t_end: f64, nl: Nonlinearity, opts: &EvolveOptions, mut observer: F) -> Result<EvolveReport>
where
    F: FnMut(&FieldState, &ConservedPair) -> Result<bool>,
{
    let span = t_end - field.t;
    let steps = (span / opts.dt).round().max(0.0) as u64;
    if steps > opts.step_cap {
        return Err(Error::StepCap {
            steps,
            cap: opts.step_cap,
        });
    }
    let t0 = field.t;
    let mut stepper = SplitStepper::with_scheme(&field.grid, opts.dt, nl, opts.sponge, opts.scheme)?;
    let c0 = conserved_quantities(field, nl);
    let mut report = EvolveReport {
        steps: 0,
        series: vec![ConservedSample {
            t: field.t,
            mass: c0.mass,
            energy: c0.energy,
        }],
        max_mass_drift: 0.0,
        max_energy_drift: 0.0,
        stopped_early: false,
    };
    if !observer(field, &c0)? {
        report.stopped_early = true;
        return Ok(report);
    }
    let every = opts.observe_every.max(1) as u64;
    let mut done = 0u64;
    while done < steps {
        let chunk = every.min(steps - done);
        #[cfg(debug_assertions)]
        let before = field.mass();
        stepper.advance(field, chunk as usize)?;
        done += chunk;
        // keep the clock free of accumulated round-off
        field.t = t0 + done as f64 * opts.dt;
        #[cfg(debug_assertions)]
        if opts.sponge.is_none() {
            let after = field.mass();
            let tol = 1e-12 * chunk as f64 * before.max(f64::MIN_POSITIVE);
            debug_assert!((after - before).abs() <= tol, "mass {before} -> {after}");
        }
        report.steps = done;
        let tail = field.tail_amplitude(TAIL_BAND);
        if tail > opts.tail_floor {
            return Err(Error::TailContamination {
                t: field.t,
                amplitude: tail,
                floor: opts.tail_floor,
            });
        }
        let c = conserved_quantities(field, nl);
        report.max_mass_drift = report.max_mass_drift.max((c.mass - c0.mass).abs() / c0.mass);
        report.max_energy_drift = report
            .max_energy_drift
            .max((c.energy - c0.energy).abs() / c0.energy.abs().max(f64::MIN_POSITIVE));
        report.series.push(ConservedSample {
            t: field.t,
            mass: c.mass,
            energy: c.energy,
        });
        if !observer(field, &c)? {
            report.stopped_early = true;
            break;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ground::{ground_point, GroundPoint, GroundSolverOptions};
    use crate::linalg::norm_inf;

    const NL: Nonlinearity = Nonlinearity::Saturated;

    fn soliton(omega: f64) -> GroundPoint {
        let grid = RadialGrid::new(40.0, 800).unwrap();
        ground_point(omega, &grid, NL, None, &GroundSolverOptions::default()).unwrap()
    }

    fn field_of(p: &GroundPoint, f: impl Fn(f64, f64) -> Complex64) -> FieldState {
        let g = p.phi.grid();
        let u = (0..g.len()).map(|i| f(g.r(i), p.phi.values()[i])).collect();
        FieldState::new(g.clone(), u, 0.0).unwrap()
    }

    /// A soliton with a smooth localized kick.
    fn perturbed(p: &GroundPoint) -> FieldState {
        field_of(p, |r, x| Complex64::new(x * (1.0 + 0.05 * (-r * r / 4.0).exp()), 0.02 * (-r * r / 9.0).exp()))
    }

    fn run(field: &FieldState, t_end: f64, dt: f64) -> (FieldState, EvolveReport) {
        let mut f = field.clone();
        let opts = EvolveOptions { dt, observe_every: 10, tail_floor: 1.0, ..Default::default() };
        let rep = evolve(&mut f, t_end, NL, &opts, |_, _| Ok(true)).unwrap();
        (f, rep)
    }

    fn max_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
        a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).norm()))
    }

    #[test]
    fn soliton_phase_advances_at_plus_omega() {
        let w = 0.3;
        let p = soliton(w);
        let theta = 0.4;
        let f0 = field_of(&p, |_, x| Complex64::from_polar(x, theta));
        let (f, _) = run(&f0, 10.0, 5e-3);
        let exact = field_of(&p, |_, x| Complex64::from_polar(x, theta + w * 10.0));
        let peak = norm_inf(p.phi.values());
        assert!(max_diff(&f.u, &exact.u) <= 1e-4 * peak, "{}", max_diff(&f.u, &exact.u));
    }

    #[test]
    fn mass_is_conserved_per_step_and_zero_stays_zero() {
        let p = soliton(0.3);
        let mut f = perturbed(&p);
        let mut stepper = SplitStepper::new(&f.grid, 1e-2, NL, None).unwrap();
        for _ in 0..20 {
            let before = f.mass();
            stepper.step(&mut f).unwrap();
            assert!((f.mass() - before).abs() <= 1e-12 * before);
        }
        let z = FieldState::new(f.grid.clone(), vec![Complex64::new(0.0, 0.0); f.u.len()], 0.0).unwrap();
        let out = step(&z, 1e-2, NL).unwrap();
        assert!(out.u.iter().all(|c| *c == Complex64::new(0.0, 0.0)));
        assert!((out.t - 1e-2).abs() < 1e-15);
    }

    #[test]
    fn conserved_quantities_match_the_family() {
        let w = 0.3;
        let p = soliton(w);
        let f = field_of(&p, |_, x| Complex64::new(x, 0.0));
        let c = conserved_quantities(&f, NL);
        assert!((c.mass - p.q).abs() <= 1e-6 * p.q);
        let d = p.action();
        assert!((c.energy + w * c.mass - d).abs() <= 1e-6 * d.abs());
        let doubled = field_of(&p, |_, x| Complex64::new(2.0 * x, 0.0));
        assert!((doubled.mass() - 4.0 * c.mass).abs() <= 1e-13 * c.mass);
    }

    #[test]
    fn energy_drift_is_second_order() {
        let f0 = perturbed(&soliton(0.3));
        let drifts: Vec<f64> = [4e-2, 2e-2, 1e-2].iter().map(|&dt| run(&f0, 20.0, dt).1.max_energy_drift).collect();
        let orders: Vec<f64> = drifts.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
        for o in &orders {
            assert!((1.8..=2.2).contains(o), "{drifts:?} {orders:?}");
        }
    }

    #[test]
    fn endpoint_error_is_second_order() {
        let f0 = perturbed(&soliton(0.3));
        let reference = run(&f0, 5.0, 1.25e-3).0;
        let e1 = max_diff(&run(&f0, 5.0, 2e-2).0.u, &reference.u);
        let e2 = max_diff(&run(&f0, 5.0, 1e-2).0.u, &reference.u);
        let ratio = e1 / e2;
        assert!((3.4..=4.6).contains(&ratio), "{e1} {e2}");
    }

    #[test]
    fn composition_scheme_is_fourth_order() {
        let f0 = perturbed(&soliton(0.3));
        let go = |dt: f64| {
            let mut f = f0.clone();
            let opts = EvolveOptions { dt, observe_every: 10, tail_floor: 1.0, scheme: Scheme::Yoshida4, ..Default::default() };
            evolve(&mut f, 4.0, NL, &opts, |_, _| Ok(true)).unwrap();
            f
        };
        let reference = go(1e-2);
        let e1 = max_diff(&go(8e-2).u, &reference.u);
        let e2 = max_diff(&go(4e-2).u, &reference.u);
        let order = (e1 / e2).log2();
        assert!((3.6..=4.4).contains(&order), "{e1} {e2} {order}");
        let before = f0.mass();
        assert!((go(4e-2).mass() - before).abs() <= 1e-12 * before);
    }

    #[test]
    fn gauge_covariance() {
        let f0 = perturbed(&soliton(0.3));
        let rot = Complex64::from_polar(1.0, 1.1);
        let mut g0 = f0.clone();
        g0.u.iter_mut().for_each(|z| *z *= rot);
        let (a, _) = run(&f0, 2.0, 1e-2);
        let (b, _) = run(&g0, 2.0, 1e-2);
        let rotated: Vec<Complex64> = a.u.iter().map(|z| z * rot).collect();
        assert!(max_diff(&rotated, &b.u) <= 1e-12 * norm_inf(&f0.u.iter().map(|z| z.norm()).collect::<Vec<_>>()));
        // regular at the origin
        assert!(b.u[0].norm() <= 2.0 * b.u[1].norm());
    }

    #[test]
    fn monitors_and_guards() {
        let p = soliton(0.3);
        let mut f = field_of(&p, |r, x| Complex64::new(x + 1e-2 * (-(r - 38.0).powi(2)).exp(), 0.0));
        let opts = EvolveOptions { dt: 1e-2, observe_every: 1, ..Default::default() };
        let e = evolve(&mut f, 1.0, NL, &opts, |_, _| Ok(true)).unwrap_err();
        assert!(matches!(e, Error::TailContamination { .. }), "{e}");
        let mut f = perturbed(&p);
        let capped = EvolveOptions { dt: 1e-2, step_cap: 10, ..Default::default() };
        assert!(matches!(evolve(&mut f, 1.0, NL, &capped, |_, _| Ok(true)), Err(Error::StepCap { .. })));
        let mut calls = 0;
        let rep = evolve(&mut f, 1.0, NL, &EvolveOptions { dt: 1e-2, observe_every: 10, ..Default::default() }, |_, _| {
            calls += 1;
            Ok(calls < 3)
        })
        .unwrap();
        assert!(rep.stopped_early);
        assert_eq!(rep.steps, 20);
        assert!((f.t - 0.2).abs() < 1e-12);
    }

    #[test]
    fn snapshot_and_series_csv() {
        let f = perturbed(&soliton(0.3));
        let mut buf = Vec::new();
        f.write_csv(&mut buf, 5e-3).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().any(|l| l == "r,re_u,im_u"));
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), f.u.len() + 1);
        let (_, rep) = run(&f, 0.2, 1e-2);
        let mut buf = Vec::new();
        rep.write_conserved_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().nth(1), Some("t,Q,E"));
        assert_eq!(text.lines().count(), 2 + rep.series.len());
    }
}
