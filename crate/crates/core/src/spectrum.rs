//! Eigenvalues of the linearized generator `[[0, L₋], [-L₊, 0]]` near the
//! origin by shift-invert Arnoldi.
//!
//! The generator is assembled on interleaved unknowns `(w_R,1, w_I,1, ...)`,
//! which makes it a band matrix with three sub- and super-diagonals.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, BandedLu};
use crate::linearization::LinearizedOperators;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EigenOptions {
    /// Real shift; must not coincide with an eigenvalue.
    pub shift: f64,
    pub krylov_dim: usize,
    /// Only eigenvalues with modulus below `radius_fraction * ω` are returned.
    pub radius_fraction: f64,
    /// Seed for the starting vector.
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            shift: 1e-3,
            krylov_dim: 60,
            radius_fraction: 0.9,
            seed: 1,
        }
    }
}

fn shifted_generator(ops: &LinearizedOperators, shift: f64) -> Result<BandedLu> {
    let n = ops.grid().len();
    let lp = ops.plus_matrix();
    let lm = ops.minus_matrix();
    let mut m = BandedLu::zeros(2 * n, 3, 3);
    for i in 0..n {
        let (re, im) = (2 * i, 2 * i + 1);
        m.set(re, re, -shift);
        m.set(im, im, -shift);
        m.set(re, 2 * i + 1, lm.diag[i]);
        m.set(im, 2 * i, -lp.diag[i]);
        if i > 0 {
            m.set(re, 2 * (i - 1) + 1, lm.lower[i - 1]);
            m.set(im, 2 * (i - 1), -lp.lower[i - 1]);
        }
        if i + 1 < n {
            m.set(re, 2 * (i + 1) + 1, lm.upper[i]);
            m.set(im, 2 * (i + 1), -lp.upper[i]);
        }
    }
    m.factorize().map_err(|e| Error::EigensolverFailure(format!("shifted factorization: {e}")))?;
    Ok(m)
}

/// Eigenvalues of the generator closest to the shift, sorted by modulus.
pub fn small_eigenvalues(ops: &LinearizedOperators, opts: &EigenOptions) -> Result<Vec<Complex64>> {
    let lu = shifted_generator(ops, opts.shift)?;
    let dim = 2 * ops.grid().len();
    let m = opts.krylov_dim.min(dim).max(2);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut start: Vec<f64> = (0..dim).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let nrm = dot(&start, &start).sqrt();
    start.iter_mut().for_each(|x| *x /= nrm);
    let mut basis: Vec<Vec<f64>> = vec![start];
    let mut h = DMatrix::<f64>::zeros(m + 1, m);
    let mut k_used = m;
    for k in 0..m {
        let mut w = basis[k].clone();
        lu.solve_in_place(&mut w);
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::EigensolverFailure("non-finite Krylov vector".into()));
        }
        // classical Gram-Schmidt, applied twice
        for _ in 0..2 {
            for (j, b) in basis.iter().enumerate() {
                let c = dot(&w, b);
                h[(j, k)] += c;
                w.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        let beta = dot(&w, &w).sqrt();
        h[(k + 1, k)] = beta;
        if beta <= 1e-14 * h.column(k).amax() {
            k_used = k + 1;
            break;
        }
        w.iter_mut().for_each(|x| *x /= beta);
        basis.push(w);
    }
    let hk = h.view((0, 0), (k_used, k_used)).into_owned();
    let theta = hk.complex_eigenvalues();
    let radius = opts.radius_fraction * ops.omega;
    let mut out: Vec<Complex64> = theta
        .iter()
        .filter(|t| t.norm() > 0.0)
        .map(|t| Complex64::new(opts.shift, 0.0) + t.inv())
        .filter(|l| l.norm() <= radius && l.is_finite())
        .collect();
    if out.is_empty() {
        return Err(Error::EigensolverFailure(format!(
            "no eigenvalues within radius {radius:.3e}"
        )));
    }
    out.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
    Ok(out)
}

/// The first conjugate or opposite pair with modulus above `floor`, as the
/// representative `λ` with nonnegative real and imaginary parts.
pub fn leading_pair(eigs: &[Complex64], floor: f64) -> Option<Complex64> {
    eigs.iter()
        .find(|l| l.norm() > floor)
        .map(|l| Complex64::new(l.re.abs(), l.im.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{family, omega_star};
    use crate::ground::{ground_point, GroundSolverOptions};
    use crate::grid::RadialGrid;
    use crate::linearization::{assemble_operators, generalized_kernel, ChainOptions};
    use crate::nonlinearity::Nonlinearity;

    /// All eigenvalues of the generator by a dense solve.
    fn dense_spectrum(ops: &LinearizedOperators) -> Vec<Complex64> {
        let n = ops.grid().len();
        let (lp, lm) = (ops.plus_matrix(), ops.minus_matrix());
        let mut m = DMatrix::<f64>::zeros(2 * n, 2 * n);
        for i in 0..n {
            m[(i, n + i)] = lm.diag[i];
            m[(n + i, i)] = -lp.diag[i];
            if i + 1 < n {
                m[(i, n + i + 1)] = lm.upper[i];
                m[(i + 1, n + i)] = lm.lower[i];
                m[(n + i, i + 1)] = -lp.upper[i];
                m[(n + i + 1, i)] = -lp.lower[i];
            }
        }
        m.complex_eigenvalues().iter().copied().collect()
    }

    #[test]
    fn matches_dense_eigensolver_on_a_small_grid() {
        let grid = RadialGrid::new(20.0, 200).unwrap();
        let nl = Nonlinearity::Cubic;
        let point = ground_point(1.0, &grid, nl, None, &GroundSolverOptions::default()).unwrap();
        let ops = LinearizedOperators::new(point, nl).unwrap();
        let dense = dense_spectrum(&ops);
        let reference = dense
            .iter()
            .filter(|l| l.im.abs() < 1e-8 && l.re > 1e-3)
            .copied()
            .next()
            .expect("focusing cubic in 3D has an unstable real pair");
        let opts = EigenOptions {
            shift: 0.8 * reference.re,
            radius_fraction: 10.0,
            ..Default::default()
        };
        let eigs = small_eigenvalues(&ops, &opts).unwrap();
        let err = eigs.iter().map(|l| (l - reference).norm()).fold(f64::INFINITY, f64::min);
        assert!(err < 1e-8 * reference.norm(), "{eigs:?} vs {reference}");
    }

    #[test]
    fn pair_squares_to_chain_coefficient() {
        let fam = family();
        for (w, real) in [(0.045, true), (0.055, false)] {
            let ops = assemble_operators(fam, w).unwrap();
            let a = generalized_kernel(&ops, &ChainOptions::default()).unwrap().a;
            assert_eq!(a > 0.0, real);
            let eigs = small_eigenvalues(&ops, &EigenOptions::default()).unwrap();
            let l = leading_pair(&eigs, 0.1 * a.abs().sqrt()).unwrap();
            let sq = if real { l.re * l.re } else { -l.im * l.im };
            assert!((sq - a).abs() <= 0.04 * a.abs(), "w {w}: λ² {sq} a {a}");
        }
    }

    #[test]
    fn eigenvalues_collapse_at_the_critical_frequency() {
        let w = omega_star();
        let eigs = small_eigenvalues(&assemble_operators(family(), w).unwrap(), &EigenOptions::default()).unwrap();
        let off = assemble_operators(family(), 0.045).unwrap();
        let a_off = generalized_kernel(&off, &ChainOptions::default()).unwrap().a;
        assert!(eigs[0].norm() < 0.05 * a_off.sqrt(), "{}", eigs[0]);
    }

    #[test]
    fn leading_pair_skips_the_floor() {
        let e = [Complex64::new(1e-9, 0.0), Complex64::new(-0.2, 0.0), Complex64::new(0.2, 0.0)];
        assert_eq!(leading_pair(&e, 1e-6), Some(Complex64::new(0.2, 0.0)));
        assert_eq!(leading_pair(&e[..1], 1e-6), None);
    }
}
