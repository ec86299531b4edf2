//! Modulation coordinates of a field near the ground-state tube.
//!
//! A field is written as `u = e^{iθ}(φ_ω + iλη + μζ + r)` with `r`
//! symplectically orthogonal to the chain `Ψ_1..Ψ_4` at `ω`. The four
//! conditions `F_j = Ω(R, Ψ_j(ω)) = 0`, `R = e^{-iθ}u - φ_ω - iλη - μζ`, are
//! solved by damped Newton iteration.

use std::io::Write;
use std::sync::{Arc, Mutex};

use nalgebra::{Matrix4, Vector4};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ground::GroundStateFamily;
use crate::grid::RadialGrid;
use crate::linearization::{generalized_kernel_seeded, ChainOptions, KernelBasis, LinearizedOperators};
use crate::reduced::{ReducedModel, ReducedTrajectory};

/// Kernel bases at arbitrary frequencies in a window: fresh ground-state and
/// chain solves, with a small cache of recent frequencies.
pub struct FrameSource<'a> {
    family: &'a GroundStateFamily,
    options: ChainOptions,
    window: (f64, f64),
    recent: Mutex<Vec<Arc<KernelBasis>>>,
}

const CACHE_SIZE: usize = 8;

impl<'a> FrameSource<'a> {
    pub fn new(family: &'a GroundStateFamily, window: (f64, f64), options: ChainOptions) -> Result<Self> {
        let (lo, hi) = family.omega_range();
        if !(window.0 < window.1 && window.0 >= lo && window.1 <= hi) {
            return Err(Error::OutOfRange {
                omega: if window.0 < lo { window.0 } else { window.1 },
                lo,
                hi,
            });
        }
        Ok(Self {
            family,
            options,
            window,
            recent: Mutex::new(Vec::new()),
        })
    }

    /// Frames over the whole family range.
    pub fn full(family: &'a GroundStateFamily) -> Self {
        Self {
            family,
            options: ChainOptions::default(),
            window: family.omega_range(),
            recent: Mutex::new(Vec::new()),
        }
    }

    pub fn family(&self) -> &GroundStateFamily {
        self.family
    }

    pub fn grid(&self) -> &RadialGrid {
        self.family.grid()
    }

    pub fn window(&self) -> (f64, f64) {
        self.window
    }

    pub fn contains(&self, omega: f64) -> bool {
        omega >= self.window.0 && omega <= self.window.1
    }

    pub fn frame(&self, omega: f64) -> Result<Arc<KernelBasis>> {
        if !self.contains(omega) {
            return Err(Error::OutOfRange {
                omega,
                lo: self.window.0,
                hi: self.window.1,
            });
        }
        let seed = {
            let recent = self.recent.lock().unwrap();
            if let Some(k) = recent.iter().find(|k| k.omega == omega) {
                return Ok(Arc::clone(k));
            }
            recent
                .iter()
                .min_by(|a, b| (a.omega - omega).abs().total_cmp(&(b.omega - omega).abs()))
                .cloned()
        };
        let point = self.family.point_at(omega)?;
        let ops = LinearizedOperators::new(point, self.family.nonlinearity())?;
        let kernel = Arc::new(generalized_kernel_seeded(&ops, &self.options, seed.as_deref())?);
        let mut recent = self.recent.lock().unwrap();
        if recent.len() >= CACHE_SIZE {
            recent.remove(0);
        }
        recent.push(Arc::clone(&kernel));
        Ok(kernel)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ModulationCoords {
    pub theta: f64,
    pub omega: f64,
    pub lambda: f64,
    pub mu: f64,
    pub r_norm_l2: f64,
    pub r_norm_h1: f64,
}

impl ModulationCoords {
    pub fn at(theta: f64, omega: f64, lambda: f64, mu: f64) -> Self {
        Self {
            theta,
            omega,
            lambda,
            mu,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct Decomposition {
    pub coords: ModulationCoords,
    /// `P(ω)R` as (real, imaginary) samples.
    pub residual: (Vec<f64>, Vec<f64>),
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecomposeOptions {
    pub max_iterations: usize,
    /// Scaled residual `max_j |F_j| / (‖u‖‖Ψ_j‖)` accepted as converged.
    pub tol: f64,
    pub max_halvings: usize,
    /// Largest admissible `‖R‖ / ‖φ_ω‖` and `(|λ|‖η‖ + |μ|‖ζ‖) / ‖φ_ω‖`.
    pub chart_radius: f64,
    /// Relative frequency step for the `ω` column of the Jacobian.
    pub fd_step: f64,
}

impl Default for DecomposeOptions {
    fn default() -> Self {
        Self {
            max_iterations: 40,
            tol: 1e-12,
            max_halvings: 8,
            chart_radius: 0.25,
            fd_step: 1e-6,
        }
    }
}

/// Field built from coordinates: `e^{iθ}(φ_ω + iλη + μζ + r)`.
pub fn reconstruct(kernel: &KernelBasis, theta: f64, lambda: f64, mu: f64, r: Option<(&[f64], &[f64])>) -> Vec<Complex64> {
    let phi = kernel.phi.values();
    let eta = kernel.psi3.values();
    let zeta = kernel.psi4.values();
    let rot = Complex64::from_polar(1.0, theta);
    (0..phi.len())
        .map(|k| {
            let (rr, ri) = r.map_or((0.0, 0.0), |(a, b)| (a[k], b[k]));
            rot * Complex64::new(phi[k] + mu * zeta[k] + rr, lambda * eta[k] + ri)
        })
        .collect()
}

fn split(u: &[Complex64], theta: f64) -> (Vec<f64>, Vec<f64>) {
    let rot = Complex64::from_polar(1.0, -theta);
    u.iter().map(|z| rot * z).map(|z| (z.re, z.im)).unzip()
}

struct Evaluation {
    kernel: Arc<KernelBasis>,
    f: [f64; 4],
    scaled: f64,
}

/// Newton solve for the modulation coordinates of `u`, starting at `guess`.
pub fn decompose(
    u: &[Complex64],
    frames: &FrameSource<'_>,
    guess: &ModulationCoords,
    opts: &DecomposeOptions,
) -> Result<Decomposition> {
    let grid = frames.grid().clone();
    if u.len() != grid.len() {
        return Err(Error::InvalidGrid(format!("field has {} samples, grid {}", u.len(), grid.len())));
    }
    let u_norm = {
        let (re, im) = split(u, 0.0);
        (grid.inner(&re, &re) + grid.inner(&im, &im)).sqrt()
    };
    if u_norm == 0.0 {
        return Err(Error::NewtonDiverged("zero field".into()));
    }
    let eval = |x: &[f64; 4]| -> Result<Evaluation> {
        let kernel = frames.frame(x[1])?;
        let (f, norms) = conditions(&grid, u, &kernel, x);
        let scaled = (0..4).fold(0.0f64, |m, j| m.max(f[j].abs() / (u_norm * norms[j])));
        Ok(Evaluation { kernel, f, scaled })
    };
    let diverged = |why: String| Error::NewtonDiverged(why);
    let mut x = [guess.theta, guess.omega, guess.lambda, guess.mu];
    let mut cur = eval(&x).map_err(|e| diverged(format!("initial guess: {e}")))?;
    let mut jac: Option<Matrix4<f64>> = None;
    let mut iterations = 0;
    let mut prev_scaled = f64::INFINITY;
    while cur.scaled > opts.tol {
        if iterations >= opts.max_iterations {
            return Err(diverged(format!(
                "no convergence after {iterations} iterations (scaled residual {:.3e})",
                cur.scaled
            )));
        }
        iterations += 1;
        if cur.scaled <= 1e2 * opts.tol && cur.scaled > 0.5 * prev_scaled {
            // contraction lost to round-off just above the target
            break;
        }
        // refresh the Jacobian unless the previous chord step contracted well
        if jac.is_none() || cur.scaled > 0.1 * prev_scaled {
            jac = Some(jacobian(&grid, u, frames, &x, &cur, opts)?);
        }
        let j = jac.unwrap();
        let step = j
            .lu()
            .solve(&Vector4::from(cur.f))
            .ok_or(Error::JacobianSingular { omega: x[1] })?;
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let trial = [x[0] - t * step[0], x[1] - t * step[1], x[2] - t * step[2], x[3] - t * step[3]];
            if frames.contains(trial[1]) {
                if let Ok(ev) = eval(&trial) {
                    if ev.scaled < cur.scaled {
                        accepted = Some((trial, ev));
                        break;
                    }
                }
            }
            t *= 0.5;
        }
        let Some((next, ev)) = accepted else {
            if cur.scaled <= 1e3 * opts.tol {
                // stalled at round-off just above the target
                break;
            }
            return Err(diverged(format!(
                "no descent at omega = {:.6e} (scaled residual {:.3e})",
                x[1], cur.scaled
            )));
        };
        prev_scaled = cur.scaled;
        x = next;
        cur = ev;
    }
    finish(&grid, u, &cur.kernel, x, iterations, opts)
}

/// `F_j` and `‖Ψ_j‖` at coordinates `x = (θ, ω, λ, μ)`, frame at `x[1]`.
fn conditions(grid: &RadialGrid, u: &[Complex64], k: &KernelBasis, x: &[f64; 4]) -> ([f64; 4], [f64; 4]) {
    let (wr, wi) = split(u, x[0]);
    let phi = k.phi.values();
    let dphi = k.psi2.values();
    let eta = k.psi3.values();
    let zeta = k.psi4.values();
    let rr: Vec<f64> = (0..phi.len()).map(|i| wr[i] - phi[i] - x[3] * zeta[i]).collect();
    let ri: Vec<f64> = (0..phi.len()).map(|i| wi[i] - x[2] * eta[i]).collect();
    let f = [
        grid.inner(&rr, phi),
        -grid.inner(&ri, dphi),
        grid.inner(&rr, eta),
        -grid.inner(&ri, zeta),
    ];
    let norms = [grid.norm(phi), grid.norm(dphi), grid.norm(eta), grid.norm(zeta)];
    (f, norms)
}

fn jacobian(
    grid: &RadialGrid,
    u: &[Complex64],
    frames: &FrameSource<'_>,
    x: &[f64; 4],
    cur: &Evaluation,
    opts: &DecomposeOptions,
) -> Result<Matrix4<f64>> {
    let k = &cur.kernel;
    let (wr, wi) = split(u, x[0]);
    let phi = k.phi.values();
    let dphi = k.psi2.values();
    let eta = k.psi3.values();
    let zeta = k.psi4.values();
    let mut j = Matrix4::zeros();
    // θ: ∂w_R = w_I, ∂w_I = -w_R
    j[(0, 0)] = grid.inner(&wi, phi);
    j[(1, 0)] = grid.inner(&wr, dphi);
    j[(2, 0)] = grid.inner(&wi, eta);
    j[(3, 0)] = grid.inner(&wr, zeta);
    // λ: ∂R_I = -η
    j[(1, 2)] = grid.inner(eta, dphi);
    j[(3, 2)] = grid.inner(eta, zeta);
    // μ: ∂R_R = -ζ
    j[(0, 3)] = -grid.inner(zeta, phi);
    j[(2, 3)] = -grid.inner(zeta, eta);
    // ω: central differences with fresh frames
    let h = opts.fd_step * x[1];
    let (lo, hi) = frames.window();
    let (a, b) = ((x[1] - h).max(lo), (x[1] + h).min(hi));
    let fa = conditions(grid, u, &*frames.frame(a)?, &[x[0], a, x[2], x[3]]).0;
    let fb = conditions(grid, u, &*frames.frame(b)?, &[x[0], b, x[2], x[3]]).0;
    for r in 0..4 {
        j[(r, 1)] = (fb[r] - fa[r]) / (b - a);
    }
    let hadamard: f64 = (0..4).map(|c| j.column(c).norm()).product();
    let det = j.determinant();
    if !(det.abs() > 1e-12 * hadamard) {
        return Err(Error::JacobianSingular { omega: x[1] });
    }
    Ok(j)
}

fn finish(
    grid: &RadialGrid,
    u: &[Complex64],
    k: &KernelBasis,
    x: [f64; 4],
    iterations: usize,
    opts: &DecomposeOptions,
) -> Result<Decomposition> {
    let (wr, wi) = split(u, x[0]);
    let phi = k.phi.values();
    let eta = k.psi3.values();
    let zeta = k.psi4.values();
    let rr: Vec<f64> = (0..phi.len()).map(|i| wr[i] - phi[i] - x[3] * zeta[i]).collect();
    let ri: Vec<f64> = (0..phi.len()).map(|i| wi[i] - x[2] * eta[i]).collect();
    let phi_norm = grid.norm(phi);
    let raw = (grid.inner(&rr, &rr) + grid.inner(&ri, &ri)).sqrt();
    let along = x[2].abs() * grid.norm(eta) + x[3].abs() * grid.norm(zeta);
    if raw > opts.chart_radius * phi_norm || along > opts.chart_radius * phi_norm {
        return Err(Error::NewtonDiverged(format!(
            "solution outside the chart: |R| = {raw:.3e}, chain part {along:.3e}, |phi| = {phi_norm:.3e}"
        )));
    }
    let (pr, pi) = k.project_continuous((&rr, &ri))?;
    let l2 = (grid.inner(&pr, &pr) + grid.inner(&pi, &pi)).sqrt();
    let h1 = (l2 * l2 + grid.gradient_norm_sq(&pr) + grid.gradient_norm_sq(&pi)).sqrt();
    Ok(Decomposition {
        coords: ModulationCoords {
            theta: x[0],
            omega: x[1],
            lambda: x[2],
            mu: x[3],
            r_norm_l2: l2,
            r_norm_h1: h1,
        },
        residual: (pr, pi),
        iterations,
    })
}

/// `Q(φ + iλη + μζ + r)` as a function of `μ`.
fn mass_of(grid: &RadialGrid, k: &KernelBasis, lambda: f64, r: (&[f64], &[f64])) -> impl Fn(f64) -> (f64, f64) {
    let phi = k.phi.values();
    let eta = k.psi3.values();
    let zeta = k.psi4.values();
    let base: Vec<f64> = (0..phi.len()).map(|i| phi[i] + r.0[i]).collect();
    let imag: Vec<f64> = (0..phi.len()).map(|i| lambda * eta[i] + r.1[i]).collect();
    let c0 = 0.5 * (grid.inner(&base, &base) + grid.inner(&imag, &imag));
    let c1 = grid.inner(&base, zeta);
    let c2 = 0.5 * grid.inner(zeta, zeta);
    move |mu| (c0 + mu * (c1 + mu * c2), c1 + 2.0 * c2 * mu)
}

/// `μ` with `Q(φ_ω + iλη + μζ + r) = Q`, by Newton iteration from
/// `μ₀ = -A⁻¹(q(ω) - Q + Q(r))`.
pub fn mu_from_q(kernel: &KernelBasis, q_total: f64, lambda: f64, r: Option<(&[f64], &[f64])>) -> Result<f64> {
    let grid = kernel.grid();
    let zero = vec![0.0; grid.len()];
    let r = r.unwrap_or((&zero, &zero));
    let q_r = 0.5 * (grid.inner(r.0, r.0) + grid.inner(r.1, r.1));
    let mass = mass_of(grid, kernel, lambda, r);
    let mut mu = -(kernel.q - q_total + q_r) / kernel.pairing_a;
    for _ in 0..50 {
        let (m, dm) = mass(mu);
        if dm == 0.0 || !dm.is_finite() {
            break;
        }
        let step = (m - q_total) / dm;
        mu -= step;
        if step.abs() <= 4.0 * f64::EPSILON * mu.abs() || step == 0.0 {
            return Ok(mu);
        }
    }
    let (m, _) = mass(mu);
    if (m - q_total).abs() <= 1e-14 * q_total {
        Ok(mu)
    } else {
        Err(Error::NewtonDiverged(format!("mu solve: mass {m} for target {q_total}")))
    }
}

/// Leading-order `μ = -A⁻¹(q(ω) - Q + Q(r))`.
pub fn mu_leading(kernel: &KernelBasis, q_total: f64, r: Option<(&[f64], &[f64])>) -> f64 {
    let grid = kernel.grid();
    let q_r = r.map_or(0.0, |(a, b)| 0.5 * (grid.inner(a, a) + grid.inner(b, b)));
    -(kernel.q - q_total + q_r) / kernel.pairing_a
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub t: f64,
    pub coords: ModulationCoords,
    #[serde(rename = "E_Q")]
    pub energy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LostLock {
    pub t: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulationTrack {
    #[serde(rename = "Q")]
    pub q_total: f64,
    pub points: Vec<TrackPoint>,
    pub lost_lock: Option<LostLock>,
}

impl ModulationTrack {
    pub fn times(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.t).collect()
    }

    pub fn omegas(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.coords.omega).collect()
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.coords.lambda).collect()
    }

    /// Synthetic track carrying the `(ω, λ)` of a reduced trajectory.
    pub fn from_reduced(trajectory: &ReducedTrajectory) -> Self {
        Self {
            q_total: trajectory.q_total,
            points: trajectory
                .states
                .iter()
                .zip(&trajectory.energy)
                .map(|(s, &e)| TrackPoint {
                    t: s.t,
                    coords: ModulationCoords::at(0.0, s.omega, s.lambda, 0.0),
                    energy: Some(e),
                })
                .collect(),
            lost_lock: None,
        }
    }

    /// CSV with columns `t, theta, omega, lambda, mu, r_L2, r_H1, E_Q`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# schema_version=1")?;
        writeln!(out, "# Q={:.17e}", self.q_total)?;
        if let Some(l) = &self.lost_lock {
            writeln!(out, "# lost_lock_t={:.17e}", l.t)?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "theta", "omega", "lambda", "mu", "r_L2", "r_H1", "E_Q"])?;
        for p in &self.points {
            let c = &p.coords;
            w.write_record(&[
                format!("{:.17e}", p.t),
                format!("{:.17e}", c.theta),
                format!("{:.17e}", c.omega),
                format!("{:.17e}", c.lambda),
                format!("{:.17e}", c.mu),
                format!("{:.17e}", c.r_norm_l2),
                format!("{:.17e}", c.r_norm_h1),
                p.energy.map_or_else(String::new, |e| format!("{e:.17e}")),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackOptions {
    pub decompose: DecomposeOptions,
    /// Largest accepted change of `ω` between consecutive samples.
    pub max_omega_jump: f64,
}

impl Default for TrackOptions {
    fn default() -> Self {
        Self {
            decompose: DecomposeOptions::default(),
            max_omega_jump: 5e-4,
        }
    }
}

/// Online continuation of [`decompose`] along a time-ordered sequence of
/// fields.
pub struct Tracker<'f, 'a> {
    frames: &'f FrameSource<'a>,
    options: TrackOptions,
    model: Option<&'f ReducedModel>,
    initial: ModulationCoords,
    track: ModulationTrack,
}

impl<'f, 'a> Tracker<'f, 'a> {
    pub fn new(frames: &'f FrameSource<'a>, q_total: f64, initial: ModulationCoords, options: TrackOptions) -> Self {
        Self {
            frames,
            options,
            model: None,
            initial,
            track: ModulationTrack {
                q_total,
                points: Vec::new(),
                lost_lock: None,
            },
        }
    }

    /// Records `E_Q(ω, λ)` of every sample under `model`.
    pub fn with_model(mut self, model: &'f ReducedModel) -> Self {
        self.model = Some(model);
        self
    }

    pub fn is_locked(&self) -> bool {
        self.track.lost_lock.is_none()
    }

    pub fn track(&self) -> &ModulationTrack {
        &self.track
    }

    fn guess(&self, t: f64) -> ModulationCoords {
        match self.track.points.as_slice() {
            [] => self.initial,
            [p] => p.coords,
            [.., a, b] => {
                let s = (t - b.t) / (b.t - a.t);
                let lin = |x: f64, y: f64| y + s * (y - x);
                ModulationCoords::at(
                    lin(a.coords.theta, b.coords.theta),
                    lin(a.coords.omega, b.coords.omega),
                    lin(a.coords.lambda, b.coords.lambda),
                    lin(a.coords.mu, b.coords.mu),
                )
            }
        }
    }

    /// Decomposes the next sample. Returns `false` once the lock is lost.
    pub fn push(&mut self, t: f64, u: &[Complex64]) -> bool {
        if !self.is_locked() {
            return false;
        }
        let guess = self.guess(t);
        let prev = self.track.points.last().copied();
        let result = decompose(u, self.frames, &guess, &self.options.decompose).and_then(|d| {
            let mut c = d.coords;
            // θ onto the branch closest to the prediction
            let pi = std::f64::consts::PI;
            c.theta = guess.theta + (c.theta - guess.theta + pi).rem_euclid(2.0 * pi) - pi;
            if let Some(p) = prev {
                let jump = (c.omega - p.coords.omega).abs();
                if jump > self.options.max_omega_jump {
                    return Err(Error::NewtonDiverged(format!("omega jumped by {jump:.3e}")));
                }
            }
            Ok(c)
        });
        match result {
            Ok(coords) => {
                let energy = self.model.and_then(|m| m.energy(coords.omega, coords.lambda).ok());
                self.track.points.push(TrackPoint { t, coords, energy });
                true
            }
            Err(e) => {
                self.track.lost_lock = Some(LostLock {
                    t,
                    reason: e.to_string(),
                });
                false
            }
        }
    }

    pub fn finish(self) -> ModulationTrack {
        self.track
    }
}

/// Decomposes each snapshot in order, seeding with the previous result.
pub fn track<'s, I>(
    snapshots: I,
    frames: &FrameSource<'_>,
    q_total: f64,
    initial: ModulationCoords,
    options: &TrackOptions,
) -> ModulationTrack
where
    I: IntoIterator<Item = (f64, &'s [Complex64])>,
{
    let mut tracker = Tracker::new(frames, q_total, initial, options.clone());
    for (t, u) in snapshots {
        if !tracker.push(t, u) {
            break;
        }
    }
    tracker.finish()
}

/// `sup_t |E_Q(ω(t), λ(t)) - E_Q(ω(0), λ(0))|` and the series itself.
pub fn energy_drift(track: &ModulationTrack, model: &ReducedModel) -> Result<(f64, Vec<f64>)> {
    let series = track
        .points
        .iter()
        .map(|p| model.energy(p.coords.omega, p.coords.lambda))
        .collect::<Result<Vec<f64>>>()?;
    let e0 = series.first().copied().unwrap_or(0.0);
    let drift = series.iter().fold(0.0f64, |m, e| m.max((e - e0).abs()));
    Ok((drift, series))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowReport {
    pub schema_version: u32,
    pub epsilon: f64,
    pub n_periods: f64,
    pub horizon: f64,
    /// `sup ε⁻³|ω - ω_f|`.
    pub d_omega: f64,
    /// `sup ε^{-5/2}|λ - λ_f|`.
    pub d_lambda: f64,
    /// `sup B/(2A²)|q(ω) - Q + Q(r)|`, the leading gap between modulation
    /// and normal-form frequencies, in the same `ε⁻³` scaling.
    pub budget_omega: f64,
}

/// Scaled sup-distances between a track and a reduced trajectory sampled on
/// the same times, over `[t0, t0 + horizon]`.
pub fn shadow_compare(
    track: &ModulationTrack,
    reduced: &ReducedTrajectory,
    epsilon: f64,
    horizon: f64,
    n_periods: f64,
    budget: Option<(&KernelBasis, &GroundStateFamily)>,
) -> Result<ShadowReport> {
    let n = track.points.len().min(reduced.states.len());
    if n == 0 {
        return Err(Error::TimeGridMismatch("empty series".into()));
    }
    let t0 = track.points[0].t;
    let spacing = if n > 1 { (track.points[1].t - t0).abs() } else { 1.0 };
    let mut d_omega = 0.0f64;
    let mut d_lambda = 0.0f64;
    let mut b_omega = 0.0f64;
    for k in 0..n {
        let p = &track.points[k];
        let s = &reduced.states[k];
        if (p.t - s.t).abs() > 1e-6 * spacing {
            return Err(Error::TimeGridMismatch(format!("sample {k}: t = {} vs {}", p.t, s.t)));
        }
        if p.t - t0 > horizon * (1.0 + 1e-12) {
            break;
        }
        d_omega = d_omega.max((p.coords.omega - s.omega).abs());
        d_lambda = d_lambda.max((p.coords.lambda - s.lambda).abs());
        if let Some((k, fam)) = budget {
            let q_r = 0.5 * p.coords.r_norm_l2 * p.coords.r_norm_l2;
            if let Ok(q) = fam.q_at(p.coords.omega) {
                let gap = q - track.q_total + q_r;
                b_omega = b_omega.max(k.pairing_b / (2.0 * k.pairing_a * k.pairing_a) * gap.abs());
            }
        }
    }
    let covered = |t: f64| t - t0 >= horizon * (1.0 - 1e-9);
    if !covered(track.points[n - 1].t) {
        return Err(Error::TimeGridMismatch(format!(
            "series cover {} of the horizon {horizon}",
            track.points[n - 1].t - t0
        )));
    }
    Ok(ShadowReport {
        schema_version: 1,
        epsilon,
        n_periods,
        horizon,
        d_omega: d_omega / epsilon.powi(3),
        d_lambda: d_lambda / epsilon.powf(2.5),
        budget_omega: b_omega / epsilon.powi(3),
    })
}
