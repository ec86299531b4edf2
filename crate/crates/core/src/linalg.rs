//! Banded direct solvers used throughout: general band LU with partial
//! pivoting, a constant-coefficient complex tridiagonal factorization for the
//! Crank–Nicolson step, and the pinned solve for singular symmetric
//! tridiagonal operators with a known one-dimensional kernel.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Real tridiagonal matrix. `lower[i]` is entry `(i+1, i)`, `upper[i]` is
/// entry `(i, i+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiag {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Tridiag {
    pub fn symmetric(diag: Vec<f64>, off: Vec<f64>) -> Self {
        debug_assert_eq!(off.len() + 1, diag.len());
        Self {
            lower: off.clone(),
            diag,
            upper: off,
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut y = vec![0.0; n];
        self.apply_into(x, &mut y);
        y
    }

    pub fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        let n = self.len();
        for i in 0..n {
            let mut s = self.diag[i] * x[i];
            if i > 0 {
                s += self.lower[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                s += self.upper[i] * x[i + 1];
            }
            y[i] = s;
        }
    }

    pub fn factor(&self) -> Result<BandedLu> {
        let n = self.len();
        let mut band = BandedLu::zeros(n, 1, 1);
        for i in 0..n {
            band.set(i, i, self.diag[i]);
            if i + 1 < n {
                band.set(i, i + 1, self.upper[i]);
                band.set(i + 1, i, self.lower[i]);
            }
        }
        band.factorize()?;
        Ok(band)
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let lu = self.factor()?;
        let mut x = b.to_vec();
        lu.solve_in_place(&mut x);
        Ok(x)
    }

    /// The principal submatrix with row and column `k` removed.
    fn without(&self, k: usize) -> Tridiag {
        let n = self.len();
        let keep: Vec<usize> = (0..n).filter(|&i| i != k).collect();
        let m = keep.len();
        let mut lower = Vec::with_capacity(m.saturating_sub(1));
        let mut upper = Vec::with_capacity(m.saturating_sub(1));
        let diag: Vec<f64> = keep.iter().map(|&i| self.diag[i]).collect();
        for w in keep.windows(2) {
            let (i, j) = (w[0], w[1]);
            if j == i + 1 {
                lower.push(self.lower[i]);
                upper.push(self.upper[i]);
            } else {
                lower.push(0.0);
                upper.push(0.0);
            }
        }
        Tridiag { lower, diag, upper }
    }
}

/// Band LU with row partial pivoting. Row `i` stores columns
/// `i - kl ..= i + kl + ku` so that pivoting fill-in fits.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
    pivots: Vec<usize>,
    factored: bool,
}

impl BandedLu {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
            pivots: vec![0; n],
            factored: false,
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j + self.kl - i < self.width);
        i * self.width + (j + self.kl - i)
    }

    /// Sets entry `(i, j)`; `j` must lie within the original band.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(!self.factored, "matrix already factored");
        assert!(j + self.kl >= i && j <= i + self.ku, "entry ({i}, {j}) outside band");
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(!self.factored, "matrix already factored");
        assert!(j + self.kl >= i && j <= i + self.ku, "entry ({i}, {j}) outside band");
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn factorize(&mut self) -> Result<()> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let scale = self.data.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if scale == 0.0 {
            return Err(Error::SingularSolve("zero matrix".into()));
        }
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let last_col = (k + kl + ku).min(n - 1);
            let mut p = k;
            let mut best = self.data[self.idx(k, k)].abs();
            for i in k + 1..=last_row {
                let v = self.data[self.idx(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= f64::EPSILON * scale * 1e-3 {
                return Err(Error::SingularSolve(format!("zero pivot in column {k}")));
            }
            self.pivots[k] = p;
            if p != k {
                for j in k..=last_col {
                    let a = self.idx(k, j);
                    let b = self.idx(p, j);
                    self.data.swap(a, b);
                }
            }
            let pivot = self.data[self.idx(k, k)];
            for i in k + 1..=last_row {
                let lik = self.data[self.idx(i, k)] / pivot;
                let li = self.idx(i, k);
                self.data[li] = lik;
                if lik != 0.0 {
                    for j in k + 1..=last_col {
                        let ukj = self.data[self.idx(k, j)];
                        let ij = self.idx(i, j);
                        self.data[ij] -= lik * ukj;
                    }
                }
            }
        }
        self.factored = true;
        Ok(())
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert!(self.factored, "factorize before solving");
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                for i in k + 1..=(k + kl).min(n - 1) {
                    b[i] -= self.data[self.idx(i, k)] * bk;
                }
            }
        }
        for k in (0..n).rev() {
            let mut s = b[k];
            for j in k + 1..=(k + kl + ku).min(n - 1) {
                s -= self.data[self.idx(k, j)] * b[j];
            }
            b[k] = s / self.data[self.idx(k, k)];
        }
    }
}

/// Factorization of the constant-coefficient complex tridiagonal matrix
/// `tridiag(off, diag, off)`, valid when it is diagonally dominant.
#[derive(Debug, Clone)]
pub struct ComplexTridiagFactor {
    off: Complex64,
    c_prime: Vec<Complex64>,
    inv_denom: Vec<Complex64>,
}

impl ComplexTridiagFactor {
    pub fn new(n: usize, diag: Complex64, off: Complex64) -> Result<Self> {
        if diag.norm() <= 2.0 * off.norm() * (1.0 - 1e-14) {
            return Err(Error::LinearSolveFailure(
                "matrix is not diagonally dominant".into(),
            ));
        }
        let mut c_prime = vec![Complex64::new(0.0, 0.0); n];
        let mut inv_denom = vec![Complex64::new(0.0, 0.0); n];
        let mut prev = Complex64::new(0.0, 0.0);
        for i in 0..n {
            let d = diag - off * prev;
            if d.norm() == 0.0 || !d.is_finite() {
                return Err(Error::LinearSolveFailure(format!("breakdown at row {i}")));
            }
            inv_denom[i] = d.inv();
            prev = off * inv_denom[i];
            c_prime[i] = prev;
        }
        Ok(Self {
            off,
            c_prime,
            inv_denom,
        })
    }

    pub fn solve_in_place(&self, b: &mut [Complex64]) {
        let n = b.len();
        debug_assert_eq!(n, self.c_prime.len());
        let mut prev = Complex64::new(0.0, 0.0);
        for i in 0..n {
            prev = (b[i] - self.off * prev) * self.inv_denom[i];
            b[i] = prev;
        }
        for i in (0..n.saturating_sub(1)).rev() {
            let next = b[i + 1];
            b[i] -= self.c_prime[i] * next;
        }
    }
}

/// Solver for `L x = f` with a symmetric tridiagonal `L` whose kernel is
/// spanned by a known vector. The component of `f` along the kernel is
/// removed first and the solution is returned orthogonal to the kernel
/// (Euclidean inner product).
///
/// Equivalent to the bordered system `[[L, k], [k^T, 0]] (x, s) = (f, 0)`:
/// pinning the node where the kernel is largest leaves a nonsingular
/// principal block, and the pinned equation holds automatically once `f` is
/// orthogonal to the kernel.
#[derive(Debug, Clone)]
pub struct PinnedSolver {
    kernel: Vec<f64>,
    kernel_sq: f64,
    pin: usize,
    lu: BandedLu,
}

impl PinnedSolver {
    pub fn new(op: &Tridiag, kernel: &[f64]) -> Result<Self> {
        let kernel_sq: f64 = kernel.iter().map(|x| x * x).sum();
        if kernel_sq == 0.0 {
            return Err(Error::SingularSolve("zero kernel vector".into()));
        }
        let pin = kernel
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let lu = op.without(pin).factor()?;
        Ok(Self {
            kernel: kernel.to_vec(),
            kernel_sq,
            pin,
            lu,
        })
    }

    /// Returns `(x, s)` with `L x = f - s k` and `x ⊥ k`.
    pub fn solve(&self, f: &[f64]) -> (Vec<f64>, f64) {
        let k = &self.kernel;
        let s = dot(f, k) / self.kernel_sq;
        let mut sub: Vec<f64> = f
            .iter()
            .zip(k)
            .enumerate()
            .filter(|(i, _)| *i != self.pin)
            .map(|(_, (a, b))| a - s * b)
            .collect();
        self.lu.solve_in_place(&mut sub);
        sub.insert(self.pin, 0.0);
        let c = dot(&sub, k) / self.kernel_sq;
        for (xi, ki) in sub.iter_mut().zip(k) {
            *xi -= c * ki;
        }
        (sub, s)
    }
}

pub fn solve_with_kernel(op: &Tridiag, kernel: &[f64], f: &[f64]) -> Result<(Vec<f64>, f64)> {
    Ok(PinnedSolver::new(op, kernel)?.solve(f))
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_band(n: usize, kl: usize, ku: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |i, j| {
            if j + kl >= i && j <= i + ku {
                rng.gen_range(-1.0..1.0)
            } else {
                0.0
            }
        })
    }

    #[test]
    fn banded_lu_matches_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(n, kl, ku) in &[(12, 1, 1), (20, 3, 3), (9, 2, 1), (30, 0, 2)] {
            let a = dense_band(n, kl, ku, &mut rng) + DMatrix::identity(n, n) * 0.1;
            let b = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
            let mut lu = BandedLu::zeros(n, kl, ku);
            for i in 0..n {
                for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                    lu.set(i, j, a[(i, j)]);
                }
            }
            lu.factorize().unwrap();
            let mut x = b.as_slice().to_vec();
            lu.solve_in_place(&mut x);
            let r = &a * DVector::from_vec(x) - &b;
            assert!(r.amax() < 1e-9, "n={n} kl={kl} ku={ku}: {}", r.amax());
        }
    }

    #[test]
    fn banded_lu_needs_pivoting_case() {
        // zero leading diagonal entry forces a row swap
        let mut lu = BandedLu::zeros(3, 1, 1);
        lu.set(0, 0, 0.0);
        lu.set(0, 1, 1.0);
        lu.set(1, 0, 1.0);
        lu.set(1, 1, 0.0);
        lu.set(1, 2, 1.0);
        lu.set(2, 1, 1.0);
        lu.set(2, 2, 1.0);
        lu.factorize().unwrap();
        let mut b = vec![1.0, 2.0, 3.0];
        lu.solve_in_place(&mut b);
        // [[0,1,0],[1,0,1],[0,1,1]] x = (1,2,3) -> x = (0,1,2)
        assert!((b[0] - 0.0).abs() < 1e-14 && (b[1] - 1.0).abs() < 1e-14 && (b[2] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn singular_matrix_is_reported() {
        let t = Tridiag::symmetric(vec![1.0, 1.0], vec![1.0]);
        assert!(matches!(t.solve(&[1.0, 1.0]), Err(Error::SingularSolve(_))));
    }

    #[test]
    fn complex_factor_solves_crank_nicolson_matrix() {
        let n = 50;
        let diag = Complex64::new(1.0, 3.0);
        let off = Complex64::new(0.0, -1.5);
        let f = ComplexTridiagFactor::new(n, diag, off).unwrap();
        let b: Vec<Complex64> = (0..n).map(|i| Complex64::new(i as f64, 1.0 - i as f64 * 0.3)).collect();
        let mut x = b.clone();
        f.solve_in_place(&mut x);
        for i in 0..n {
            let mut s = diag * x[i];
            if i > 0 {
                s += off * x[i - 1];
            }
            if i + 1 < n {
                s += off * x[i + 1];
            }
            assert!((s - b[i]).norm() < 1e-11);
        }
    }

    #[test]
    fn kernel_solve_on_discrete_laplacian_with_shift() {
        // L = D - mu I where k is an eigenvector of D with eigenvalue mu
        let n = 40;
        let mut d = Tridiag::symmetric(vec![2.0; n], vec![-1.0; n - 1]);
        let theta = std::f64::consts::PI / (n + 1) as f64;
        let mu = 2.0 - 2.0 * theta.cos();
        for x in d.diag.iter_mut() {
            *x -= mu;
        }
        let k: Vec<f64> = (0..n).map(|i| ((i + 1) as f64 * theta).sin()).collect();
        let f: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).cos()).collect();
        let (x, s) = solve_with_kernel(&d, &k, &f).unwrap();
        let lx = d.apply(&x);
        for i in 0..n {
            assert!((lx[i] - (f[i] - s * k[i])).abs() < 1e-10);
        }
        assert!(dot(&x, &k).abs() < 1e-10);
    }

    proptest! {
        #[test]
        fn tridiag_solve_inverts_apply(seed in 0u64..1000, n in 2usize..60) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let diag: Vec<f64> = (0..n).map(|_| rng.gen_range(2.5..4.0)).collect();
            let off: Vec<f64> = (0..n - 1).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let t = Tridiag::symmetric(diag, off);
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b = t.apply(&x);
            let y = t.solve(&b).unwrap();
            for i in 0..n {
                prop_assert!((x[i] - y[i]).abs() < 1e-12);
            }
        }
    }
}
