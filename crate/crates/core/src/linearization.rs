//! Linearization of the equation at a ground state and the generalized
//! kernel of its generator.
//!
//! Perturbations `w = w_R + i w_I` of `φ_ω` evolve (in the frame rotating
//! with the soliton) by `∂_t w_R = L₋ w_I`, `∂_t w_I = -L₊ w_R`, where
//!
//! ```text
//! L₊ = -Δ + ω + g(φ²) + 2g'(φ²)φ²,    L₋ = -Δ + ω + g(φ²).
//! ```
//!
//! The chain vectors are `Ψ₁ = iφ`, `Ψ₂ = ∂_ωφ`, `Ψ₃ = iη`, `Ψ₄ = ζ` with
//! `L₊ζ = -η` and `L₋η = ∂_ωφ + aζ`, `η ⊥ φ`. The symplectic form is
//! `Ω(u, v) = ⟨u_R, v_I⟩ - ⟨u_I, v_R⟩` with `⟨f, g⟩ = ∫ f g 4πr² dr`, so that
//! `Ω(Ψ₁, Ψ₂) = -q'`, `A = Ω(Ψ₂, Ψ₃) = ⟨∂φ, η⟩` and `B = Ω(Ψ₃, Ψ₄) = -⟨η, ζ⟩`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ground::{l_minus, l_plus, GroundPoint, GroundStateFamily};
use crate::grid::RadialGrid;
use crate::interp::{cubic_spline, PiecewisePoly};
use crate::linalg::{BandedLu, PinnedSolver, Tridiag};
use crate::nonlinearity::Nonlinearity;
use crate::profile::RadialProfile;

/// `L₊` and `L₋` at one frequency, stored in `v = r u` form. Public methods
/// take and return radial samples `u`.
#[derive(Debug, Clone)]
pub struct LinearizedOperators {
    pub omega: f64,
    pub point: GroundPoint,
    plus: Tridiag,
    minus: Tridiag,
    plus_lu: BandedLu,
    minus_pinned: PinnedSolver,
}

impl LinearizedOperators {
    pub fn new(point: GroundPoint, nl: Nonlinearity) -> Result<Self> {
        let grid = point.phi.grid().clone();
        let omega = point.omega;
        let plus = l_plus(&grid, omega, point.phi.values(), nl);
        let minus = l_minus(&grid, omega, point.phi.values(), nl);
        let plus_lu = plus.factor().map_err(|e| match e {
            Error::SingularSolve(m) => Error::SingularSolve(format!("L+ at omega = {omega}: {m}")),
            e => e,
        })?;
        let minus_pinned = PinnedSolver::new(&minus, &grid.to_v(point.phi.values()))?;
        Ok(Self {
            omega,
            point,
            plus,
            minus,
            plus_lu,
            minus_pinned,
        })
    }

    pub fn grid(&self) -> &RadialGrid {
        self.point.phi.grid()
    }

    /// Tridiagonal `L₊` acting on `v = r u`.
    pub fn plus_matrix(&self) -> &Tridiag {
        &self.plus
    }

    pub fn minus_matrix(&self) -> &Tridiag {
        &self.minus
    }

    fn apply(&self, op: &Tridiag, u: &[f64]) -> Vec<f64> {
        let g = self.grid();
        g.from_v(&op.apply(&g.to_v(u)))
    }

    pub fn apply_plus(&self, u: &[f64]) -> Vec<f64> {
        self.apply(&self.plus, u)
    }

    pub fn apply_minus(&self, u: &[f64]) -> Vec<f64> {
        self.apply(&self.minus, u)
    }

    pub fn solve_plus(&self, f: &[f64]) -> Vec<f64> {
        let g = self.grid();
        let mut v = g.to_v(f);
        self.plus_lu.solve_in_place(&mut v);
        g.from_v(&v)
    }

    /// Solution of `L₋ x = f - sφ` with `x ⊥ φ`; returns `(x, s)`.
    pub fn solve_minus(&self, f: &[f64]) -> (Vec<f64>, f64) {
        let g = self.grid();
        let (x, s) = self.minus_pinned.solve(&g.to_v(f));
        (g.from_v(&x), s)
    }
}

pub fn assemble_operators(family: &GroundStateFamily, omega: f64) -> Result<LinearizedOperators> {
    let point = family.point_at(omega)?;
    LinearizedOperators::new(point, family.nonlinearity())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainOptions {
    pub max_iterations: usize,
    /// Stop once successive values of `a` agree to this relative tolerance.
    pub tol: f64,
}

impl Default for ChainOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            tol: 1e-13,
        }
    }
}

/// Generalized-kernel profiles and pairings at one frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelBasis {
    pub omega: f64,
    pub q: f64,
    pub dq: f64,
    pub phi: RadialProfile,
    /// `∂_ω φ`, the profile of `Ψ₂`.
    pub psi2: RadialProfile,
    /// `η`, carried by `Ψ₃ = iη`.
    pub psi3: RadialProfile,
    /// `ζ`, the profile of `Ψ₄`.
    pub psi4: RadialProfile,
    #[serde(rename = "A")]
    pub pairing_a: f64,
    #[serde(rename = "B")]
    pub pairing_b: f64,
    /// Chain coefficient in `L₋η = ∂φ + aζ`.
    pub a: f64,
    pub iterations: usize,
}

impl KernelBasis {
    pub fn grid(&self) -> &RadialGrid {
        self.phi.grid()
    }

    /// The four chain vectors as `(real, imaginary)` profile pairs.
    pub fn chain(&self) -> [(Vec<f64>, Vec<f64>); 4] {
        let z = vec![0.0; self.grid().len()];
        [
            (z.clone(), self.phi.values().to_vec()),
            (self.psi2.values().to_vec(), z.clone()),
            (z.clone(), self.psi3.values().to_vec()),
            (self.psi4.values().to_vec(), z),
        ]
    }

    /// `P(ω)u = u - Σ c_i Ψ_i` with `c` fixed by `Ω(P(ω)u, Ψ_j) = 0`,
    /// `j = 1..=4` (inverse of the pairing matrix).
    pub fn project_continuous(&self, u: (&[f64], &[f64])) -> Result<(Vec<f64>, Vec<f64>)> {
        let g = self.grid();
        let chain = self.chain();
        let w = self.pairing_matrix();
        // Σ_i c_i W_ij = Ω(u, Ψ_j)
        let m = nalgebra::Matrix4::from_fn(|j, i| w[i][j]);
        let b = nalgebra::Vector4::from_fn(|j, _| symplectic(g, u, (&chain[j].0, &chain[j].1)));
        let c = m.lu().solve(&b).ok_or(Error::JacobianSingular { omega: self.omega })?;
        let mut re = u.0.to_vec();
        let mut im = u.1.to_vec();
        for (i, (pr, pi)) in chain.iter().enumerate() {
            for k in 0..re.len() {
                re[k] -= c[i] * pr[k];
                im[k] -= c[i] * pi[k];
            }
        }
        Ok((re, im))
    }

    /// `Ω(Ψ_i, Ψ_j)`, `i, j = 1..=4`.
    pub fn pairing_matrix(&self) -> [[f64; 4]; 4] {
        let g = self.grid();
        let c = self.chain();
        let mut m = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                m[i][j] = symplectic(g, (&c[i].0, &c[i].1), (&c[j].0, &c[j].1));
            }
        }
        m
    }
}

/// `Ω(u, v) = ⟨u_R, v_I⟩ - ⟨u_I, v_R⟩`.
pub fn symplectic(grid: &RadialGrid, u: (&[f64], &[f64]), v: (&[f64], &[f64])) -> f64 {
    grid.inner(u.0, v.1) - grid.inner(u.1, v.0)
}

/// Solves the chain `L₊ζ = -η`, `L₋η = ∂φ + aζ` by fixed-point iteration on
/// `a = -⟨∂φ, φ⟩ / ⟨ζ, φ⟩`, starting from `a = 0`.
pub fn generalized_kernel(ops: &LinearizedOperators, opts: &ChainOptions) -> Result<KernelBasis> {
    generalized_kernel_seeded(ops, opts, None)
}

/// As [`generalized_kernel`], starting the iteration from the `ζ` of a
/// basis at a nearby frequency.
pub fn generalized_kernel_seeded(
    ops: &LinearizedOperators,
    opts: &ChainOptions,
    seed: Option<&KernelBasis>,
) -> Result<KernelBasis> {
    let g = ops.grid().clone();
    let phi = ops.point.phi.values();
    let dphi = ops.point.dphi.values();
    let omega = ops.omega;
    let dq = g.inner(dphi, phi);
    let (mut eta, mut zeta, mut a) = match seed {
        Some(k) if k.grid() == &g => (k.psi3.values().to_vec(), k.psi4.values().to_vec(), k.a),
        _ => {
            let (eta, _) = ops.solve_minus(dphi);
            let zeta: Vec<f64> = ops.solve_plus(&eta).into_iter().map(|x| -x).collect();
            (eta, zeta, 0.0)
        }
    };
    let mut prev_change = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        iterations += 1;
        let zp = g.inner(&zeta, phi);
        if zp == 0.0 {
            return Err(Error::SingularSolve(format!(
                "<zeta, phi> vanishes at omega = {omega}"
            )));
        }
        let a_next = -dq / zp;
        let rhs: Vec<f64> = dphi.iter().zip(&zeta).map(|(d, z)| d + a_next * z).collect();
        eta = ops.solve_minus(&rhs).0;
        zeta = ops.solve_plus(&eta).into_iter().map(|x| -x).collect();
        let change = (a_next - a).abs();
        a = a_next;
        // round-off floor: the iteration stops contracting
        let stalled = iterations > 3 && change >= prev_change && change <= 1e-8 * a.abs();
        if change <= opts.tol * a.abs() || change == 0.0 || stalled {
            converged = true;
            break;
        }
        prev_change = change;
    }
    if !converged {
        return Err(Error::NotConverged {
            what: "chain coefficient iteration",
            iterations,
            residual: a,
        });
    }
    let pairing_a = g.inner(dphi, &eta);
    if !(pairing_a > 0.0) {
        return Err(Error::NonPositivePairing { omega, value: pairing_a });
    }
    let pairing_b = -g.inner(&eta, &zeta);
    Ok(KernelBasis {
        omega,
        q: ops.point.q,
        dq,
        phi: ops.point.phi.clone(),
        psi2: ops.point.dphi.clone(),
        psi3: RadialProfile::new(g.clone(), eta)?,
        psi4: RadialProfile::new(g, zeta)?,
        pairing_a,
        pairing_b,
        a,
        iterations,
    })
}

/// Kernel bases at the given frequencies and a cubic spline of `A(ω)`
/// through them.
pub fn pairing_curve(
    family: &GroundStateFamily,
    omegas: &[f64],
    opts: &ChainOptions,
) -> Result<(Vec<KernelBasis>, PiecewisePoly)> {
    const MIN_NODES: usize = 5;
    if omegas.len() < MIN_NODES {
        return Err(Error::InsufficientPoints {
            required: MIN_NODES,
            got: omegas.len(),
        });
    }
    let kernels = omegas
        .iter()
        .map(|&w| {
            let ops = assemble_operators(family, w)?;
            generalized_kernel(&ops, opts).map_err(|e| e.at(w))
        })
        .collect::<Result<Vec<_>>>()?;
    let a: Vec<f64> = kernels.iter().map(|k| k.pairing_a).collect();
    let spline = cubic_spline(omegas, &a)?;
    Ok((kernels, spline))
}

/// Residuals of the operator, chain and pairing identities at one frequency.
/// Norms are the weighted `L²` norms of the grid; ratios are relative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub omega: f64,
    /// `‖L₋φ‖ / ‖φ‖`.
    pub minus_phase: f64,
    /// `‖L₊∂φ + φ‖ / ‖φ‖`.
    pub plus_derivative: f64,
    /// `|⟨Lu, v⟩ - ⟨u, Lv⟩| / (‖Lu‖‖v‖ + ‖u‖‖Lv‖)`, worst of `L±` over
    /// seeded random probes.
    pub symmetry: f64,
    /// `‖L₊ζ + η‖ / ‖η‖`.
    pub chain_plus: f64,
    /// `‖L₋η - ∂φ - aζ‖ / ‖∂φ + aζ‖`.
    pub chain_minus: f64,
    /// `|⟨η, φ⟩| / (‖η‖‖φ‖)`.
    pub eta_phase: f64,
    pub a: f64,
    /// `-q'(ω)/A` with `q'` from the family mass curve.
    pub a_from_slope: f64,
    #[serde(rename = "A")]
    pub pairing_a: f64,
    #[serde(rename = "B")]
    pub pairing_b: f64,
    /// `|Ω(Ψ₁,Ψ₂) + q'| / scale`, `scale = max(A, |B|, |q'|)`.
    pub omega12: f64,
    /// `|Ω(Ψ₁,Ψ₃)| / scale`.
    pub omega13: f64,
    /// `|Ω(Ψ₁,Ψ₄) + A| / A`.
    pub omega14: f64,
    /// `|Ω(Ψ₂,Ψ₄)| / scale`.
    pub omega24: f64,
    /// `|Ω(Ψ₂,Ψ₃) - A| / A`.
    pub omega23: f64,
    /// `⟨L₋η, η⟩`.
    pub quadratic_form: f64,
}

impl ChainDiagnostics {
    /// `|⟨L₋η, η⟩ - (A - aB)| / A`; the two sides agree exactly in the
    /// discrete setting.
    pub fn form_residual(&self) -> f64 {
        (self.quadratic_form - (self.pairing_a - self.a * self.pairing_b)).abs() / self.pairing_a
    }

    /// `|⟨L₋η, η⟩ - A| / A`, which vanishes only where `a = 0`.
    pub fn form_vs_pairing(&self) -> f64 {
        (self.quadratic_form - self.pairing_a).abs() / self.pairing_a
    }
}

pub fn chain_diagnostics(
    family: &GroundStateFamily,
    ops: &LinearizedOperators,
    kernel: &KernelBasis,
    seed: u64,
) -> Result<ChainDiagnostics> {
    use rand::{Rng, SeedableRng};

    let g = ops.grid();
    let n = g.len();
    let phi = ops.point.phi.values();
    let dphi = ops.point.dphi.values();
    let eta = kernel.psi3.values();
    let zeta = kernel.psi4.values();
    let diff = |a: &[f64], b: &[f64], s: f64| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x - s * y).collect() };
    let phi_norm = g.norm(phi);

    let minus_phase = g.norm(&ops.apply_minus(phi)) / phi_norm;
    let plus_derivative = g.norm(&diff(&ops.apply_plus(dphi), phi, -1.0)) / phi_norm;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut symmetry = 0.0f64;
    for _ in 0..4 {
        let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for apply in [LinearizedOperators::apply_plus, LinearizedOperators::apply_minus] {
            let (lu, lv) = (apply(ops, &u), apply(ops, &v));
            let gap = (g.inner(&lu, &v) - g.inner(&u, &lv)).abs();
            symmetry = symmetry.max(gap / (g.norm(&lu) * g.norm(&v) + g.norm(&u) * g.norm(&lv)));
        }
    }

    let chain_plus = g.norm(&diff(&ops.apply_plus(zeta), eta, -1.0)) / g.norm(eta);
    let rhs = diff(dphi, zeta, -kernel.a);
    let chain_minus = g.norm(&diff(&ops.apply_minus(eta), &rhs, 1.0)) / g.norm(&rhs);
    let eta_phase = g.inner(eta, phi).abs() / (g.norm(eta) * phi_norm);

    let dq = family.dq_at(kernel.omega)?;
    let a_from_slope = -dq / kernel.pairing_a;
    let m = kernel.pairing_matrix();
    let scale = kernel.pairing_a.max(kernel.pairing_b.abs()).max(dq.abs());
    Ok(ChainDiagnostics {
        omega: kernel.omega,
        minus_phase,
        plus_derivative,
        symmetry,
        chain_plus,
        chain_minus,
        eta_phase,
        a: kernel.a,
        a_from_slope,
        pairing_a: kernel.pairing_a,
        pairing_b: kernel.pairing_b,
        omega12: (m[0][1] + dq).abs() / scale,
        omega13: m[0][2].abs() / scale,
        omega14: (m[0][3] + kernel.pairing_a).abs() / kernel.pairing_a,
        omega24: m[1][3].abs() / scale,
        omega23: (m[1][2] - kernel.pairing_a).abs() / kernel.pairing_a,
        quadratic_form: g.inner(&ops.apply_minus(eta), eta),
    })
}
