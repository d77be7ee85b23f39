//! Dense linear-algebra primitives.
//!
//! Complex operators live in [`ComplexMatrix`], a row-major dense matrix.
//! Real work (the SDP layer) uses `nalgebra` matrices directly through the
//! [`RealMatrix`] / [`RealVector`] aliases.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type RealMatrix = DMatrix<f64>;
pub type RealVector = DVector<f64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

/// Relative singular-value threshold used for every rank decision.
pub const RANK_TOL: f64 = 1e-10;

/// Relative asymmetry accepted by [`hermitian_eig`].
pub const HERMITIAN_TOL: f64 = 1e-10;

/// Dense complex matrix stored row-major.
#[derive(Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for j in 0..self.cols {
                let z = self[(i, j)];
                write!(f, "{:+.4}{:+.4}i ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl ComplexMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::DimensionMismatch(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![ZERO; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from real row-major rows.
    pub fn from_real_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        Self::from_fn(r, c, |i, j| C64::new(rows[i][j], 0.0))
    }

    pub fn from_diagonal(diag: &[C64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, d) in diag.iter().enumerate() {
            m[(i, i)] = *d;
        }
        m
    }

    pub fn from_columns(cols: &[Vec<C64>]) -> Self {
        let c = cols.len();
        let r = cols.first().map_or(0, Vec::len);
        Self::from_fn(r, c, |i, j| cols[j][i])
    }

    /// `u v^dag`
    pub fn outer(u: &[C64], v: &[C64]) -> Self {
        Self::from_fn(u.len(), v.len(), |i, j| u[i] * v[j].conj())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[C64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<C64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn conj(&self) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z.conj()).collect() }
    }

    pub fn scale(&self, s: C64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z * s).collect() }
    }

    pub fn scale_real(&self, s: f64) -> Self {
        self.scale(C64::new(s, 0.0))
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Largest entrywise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| m.max((a - b).norm()))
    }

    /// `max |M - M^dag|`; infinite for non-square input.
    pub fn asymmetry(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let mut m: f64 = 0.0;
        for i in 0..self.rows {
            for j in i..self.cols {
                m = m.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        m
    }

    pub fn is_hermitian(&self, rel_tol: f64) -> bool {
        self.asymmetry() <= rel_tol * self.max_abs().max(1.0)
    }

    /// `(M + M^dag) / 2`
    pub fn hermitian_part(&self) -> Self {
        assert!(self.is_square());
        Self::from_fn(self.rows, self.cols, |i, j| (self[(i, j)] + self[(j, i)].conj()) * 0.5)
    }

    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        assert_eq!(self.cols, v.len());
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Standard Kronecker product; `(i ⊗ j)` maps to `i * b.rows + j`.
    pub fn kron(&self, b: &Self) -> Self {
        let (br, bc) = (b.rows, b.cols);
        Self::from_fn(self.rows * br, self.cols * bc, |i, j| self[(i / br, j / bc)] * b[(i % br, j % bc)])
    }

    /// `<u|M|v>`
    pub fn sandwich(&self, u: &[C64], v: &[C64]) -> C64 {
        inner(u, &self.apply(v))
    }

    pub fn to_nalgebra(&self) -> DMatrix<C64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub fn from_nalgebra(m: &DMatrix<C64>) -> Self {
        Self::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.cols + j]
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.cols, rhs.rows, "matrix product dimension mismatch");
        let mut out = ComplexMatrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for (k, a) in self.row(i).iter().enumerate() {
                if *a == ZERO {
                    continue;
                }
                for (o, b) in out_row.iter_mut().zip(rhs.row(k)) {
                    *o += a * b;
                }
            }
        }
        out
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    a.kron(b)
}

/// `<u|v>`, antilinear in the first argument.
pub fn inner(u: &[C64], v: &[C64]) -> C64 {
    u.iter().zip(v).map(|(a, b)| a.conj() * b).sum()
}

pub fn norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn kron_vec(a: &[C64], b: &[C64]) -> Vec<C64> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for x in a {
        for y in b {
            out.push(x * y);
        }
    }
    out
}

pub fn conj_vec(v: &[C64]) -> Vec<C64> {
    v.iter().map(|z| z.conj()).collect()
}

/// Spectral decomposition of a Hermitian matrix.
#[derive(Clone, Debug)]
pub struct HermitianEigen {
    /// Descending.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors as columns, in the order of `values`.
    pub vectors: ComplexMatrix,
}

impl HermitianEigen {
    pub fn vector(&self, k: usize) -> Vec<C64> {
        self.vectors.column(k)
    }

    pub fn min(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    pub fn max(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }
}

/// Eigen-decomposition `h = V diag(λ) V^dag` with λ sorted descending.
///
/// Ties keep the order produced by the underlying solver, so results are
/// deterministic for a given input.
pub fn hermitian_eig(h: &ComplexMatrix) -> Result<HermitianEigen> {
    if !h.is_square() {
        return Err(Error::DimensionMismatch(format!("eigen-decomposition of a {}x{} matrix", h.rows, h.cols)));
    }
    let asym = h.asymmetry();
    if asym > HERMITIAN_TOL * h.max_abs().max(1.0) {
        return Err(Error::NotHermitian { asymmetry: asym });
    }
    let n = h.rows;
    if n == 0 {
        return Ok(HermitianEigen { values: vec![], vectors: ComplexMatrix::zeros(0, 0) });
    }
    let eig = nalgebra::SymmetricEigen::new(h.hermitian_part().to_nalgebra());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = ComplexMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    Ok(HermitianEigen { values, vectors })
}

/// Eigenvalues of a real symmetric matrix, ascending.
pub fn symmetric_eigenvalues(a: &RealMatrix) -> Vec<f64> {
    if a.nrows() == 0 {
        return vec![];
    }
    let sym = (a + a.transpose()) * 0.5;
    let mut v: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

pub fn min_symmetric_eigenvalue(a: &RealMatrix) -> f64 {
    symmetric_eigenvalues(a).first().copied().unwrap_or(0.0)
}

/// Orthonormal basis of `{x : a x = 0}` as the columns of the result.
///
/// Rank is decided at `RANK_TOL * σ_max`. Each column is sign-normalised so
/// that its largest-magnitude entry (first on ties) is positive.
pub fn nullspace_basis(a: &RealMatrix) -> RealMatrix {
    let (m, n) = a.shape();
    if n == 0 {
        return RealMatrix::zeros(0, 0);
    }
    if m == 0 || a.amax() == 0.0 {
        return RealMatrix::identity(n, n);
    }
    // Pad to at least n rows so the SVD returns a complete right basis.
    let padded = if m >= n {
        a.clone()
    } else {
        let mut p = RealMatrix::zeros(n, n);
        p.view_mut((0, 0), (m, n)).copy_from(a);
        p
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let sigma_max = svd.singular_values.max();
    let thresh = RANK_TOL * sigma_max;
    let null_rows: Vec<usize> =
        (0..svd.singular_values.len()).filter(|&k| svd.singular_values[k] <= thresh).collect();
    let mut basis = RealMatrix::zeros(n, null_rows.len());
    for (c, &k) in null_rows.iter().enumerate() {
        let mut col: RealVector = v_t.row(k).transpose();
        let pivot = col.iter().copied().fold(0.0_f64, |best, x| if x.abs() > best.abs() + 1e-14 { x } else { best });
        if pivot < 0.0 {
            col.neg_mut();
        }
        basis.set_column(c, &col);
    }
    basis
}

pub fn matrix_rank(a: &RealMatrix) -> usize {
    let (m, n) = a.shape();
    if m == 0 || n == 0 || a.amax() == 0.0 {
        return 0;
    }
    let sv = a.clone().singular_values();
    let thresh = RANK_TOL * sv.max();
    sv.iter().filter(|&&s| s > thresh).count()
}

/// Minimum-norm least-squares solution of `a x = b`, with its residual norm.
pub fn min_norm_solution(a: &RealMatrix, b: &RealVector) -> (RealVector, f64) {
    let n = a.ncols();
    if a.nrows() == 0 || a.amax() == 0.0 {
        return (RealVector::zeros(n), b.norm());
    }
    let svd = a.clone().svd(true, true);
    let eps = RANK_TOL * svd.singular_values.max();
    let x = svd.solve(b, eps).expect("U and V^T were computed");
    let residual = (a * &x - b).norm();
    (x, residual)
}

/// Cholesky factor `A = L L^T` of a symmetric positive definite matrix.
#[derive(Clone, Debug)]
pub struct SpdFactor {
    /// Lower triangle holds `L`; the strict upper triangle is scratch.
    l: RealMatrix,
}

const CHOL_BLOCK: usize = 64;

impl SpdFactor {
    pub fn new(a: &RealMatrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch(format!("Cholesky of a {}x{} matrix", a.nrows(), a.ncols())));
        }
        let mut l = a.clone();
        blocked_cholesky(&mut l)?;
        Ok(Self { l })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// One forward/backward substitution.
    pub fn solve_once(&self, b: &RealVector) -> RealVector {
        let n = self.dim();
        assert_eq!(b.len(), n);
        let l = self.l.as_slice();
        let mut y = b.clone();
        // L y = b, column oriented.
        for j in 0..n {
            let col = &l[j * n..(j + 1) * n];
            y[j] /= col[j];
            let yj = y[j];
            for i in j + 1..n {
                y[i] -= col[i] * yj;
            }
        }
        // L^T x = y
        for j in (0..n).rev() {
            let col = &l[j * n..(j + 1) * n];
            let mut s = y[j];
            for i in j + 1..n {
                s -= col[i] * y[i];
            }
            y[j] = s / col[j];
        }
        y
    }

    /// Solves `a x = b` with one step of iterative refinement against `a`.
    pub fn solve_refined(&self, a: &RealMatrix, b: &RealVector) -> RealVector {
        let mut x = self.solve_once(b);
        let r = b - symmetric_lower_matvec(a, &x);
        x += self.solve_once(&r);
        x
    }
}

/// `a x` for a symmetric `a` of which only the lower triangle is trusted.
fn symmetric_lower_matvec(a: &RealMatrix, x: &RealVector) -> RealVector {
    let n = a.nrows();
    let d = a.as_slice();
    let mut y = RealVector::zeros(n);
    for j in 0..n {
        let col = &d[j * n..(j + 1) * n];
        let xj = x[j];
        let mut acc = col[j] * xj;
        for i in j + 1..n {
            y[i] += col[i] * xj;
            acc += col[i] * x[i];
        }
        y[j] += acc;
    }
    y
}

/// Right-looking blocked Cholesky on the lower triangle of a column-major buffer.
fn blocked_cholesky(a: &mut RealMatrix) -> Result<()> {
    let n = a.nrows();
    let data = a.as_mut_slice();
    let mut k = 0;
    while k < n {
        let kb = CHOL_BLOCK.min(n - k);
        // Diagonal block and the panel below it, column by column.
        for c in k..k + kb {
            for t in k..c {
                let lct = data[c + t * n];
                if lct == 0.0 {
                    continue;
                }
                let (src, dst) = split_cols(data, n, t, c);
                for i in c..n {
                    dst[i] -= lct * src[i];
                }
            }
            let d = data[c + c * n];
            if d <= 0.0 || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { index: c, pivot: d });
            }
            let s = d.sqrt();
            data[c + c * n] = s;
            for i in c + 1..n {
                data[i + c * n] /= s;
            }
        }
        // Trailing update A22 -= L21 L21^T, lower block columns only.
        let rest = k + kb;
        let mut j = rest;
        while j < n {
            let jb = CHOL_BLOCK.min(n - j);
            let m = n - j;
            // SAFETY: the source panel (columns k..k+kb) and the destination
            // (columns j..j+jb with j >= k+kb) are disjoint regions of `data`.
            unsafe {
                let base = data.as_mut_ptr();
                let a_ptr = base.add(j + k * n) as *const f64; // rows j.., cols k..k+kb
                let b_ptr = base.add(j + k * n) as *const f64; // transposed view of rows j..j+jb
                let c_ptr = base.add(j + j * n);
                matrixmultiply::dgemm(
                    m,
                    kb,
                    jb,
                    -1.0,
                    a_ptr,
                    1,
                    n as isize,
                    b_ptr,
                    n as isize,
                    1,
                    1.0,
                    c_ptr,
                    1,
                    n as isize,
                );
            }
            j += jb;
        }
        k = rest;
    }
    Ok(())
}

/// Borrows column `src` immutably and column `dst` mutably (`src < dst`).
fn split_cols(data: &mut [f64], n: usize, src: usize, dst: usize) -> (&[f64], &mut [f64]) {
    debug_assert!(src < dst);
    let (lo, hi) = data.split_at_mut(dst * n);
    (&lo[src * n..(src + 1) * n], &mut hi[..n])
}

/// `c = alpha op(a) op(b) + beta c`, where `op` transposes when the flag is set.
pub fn gemm(alpha: f64, a: &RealMatrix, trans_a: bool, b: &RealMatrix, trans_b: bool, beta: f64, c: &mut RealMatrix) {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let (m, k, rsa, csa) = if trans_a { (ac, ar, ar as isize, 1) } else { (ar, ac, 1, ar as isize) };
    let (k2, n, rsb, csb) = if trans_b { (bc, br, br as isize, 1) } else { (br, bc, 1, br as isize) };
    assert_eq!(k, k2, "inner dimensions differ");
    assert_eq!(c.shape(), (m, n), "output shape");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        *c *= beta;
        return;
    }
    let rsc = 1;
    let csc = m as isize;
    // SAFETY: strides describe the column-major storage of each matrix, whose
    // extents were checked above; `c` is a unique borrow distinct from `a`, `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}

/// Solves `a x = b` for symmetric positive definite `a`, refining once.
pub fn solve_spd(a: &RealMatrix, b: &RealVector) -> Result<RealVector> {
    if a.nrows() != b.len() {
        return Err(Error::DimensionMismatch(format!("{}x{} system with rhs of length {}", a.nrows(), a.ncols(), b.len())));
    }
    let f = SpdFactor::new(a)?;
    Ok(f.solve_refined(a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gemm_matches_nalgebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = RealMatrix::from_fn(5, 3, |_, _| rng.random_range(-1.0..1.0));
        let b = RealMatrix::from_fn(5, 4, |_, _| rng.random_range(-1.0..1.0));
        let mut c = RealMatrix::from_element(3, 4, 1.0);
        gemm(2.0, &a, true, &b, false, 0.5, &mut c);
        let expected = a.transpose() * &b * 2.0 + RealMatrix::from_element(3, 4, 0.5);
        assert!((c - expected).amax() < 1e-13);
        let mut d = RealMatrix::zeros(5, 5);
        gemm(1.0, &a, false, &a, true, 0.0, &mut d);
        assert!((d - &a * a.transpose()).amax() < 1e-13);
    }

    fn sigma_x() -> ComplexMatrix {
        ComplexMatrix::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]])
    }

    fn random_complex(rng: &mut ChaCha8Rng, r: usize, c: usize) -> ComplexMatrix {
        ComplexMatrix::from_fn(r, c, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    #[test]
    fn kron_of_identities_is_identity() {
        let i2 = ComplexMatrix::identity(2);
        assert_eq!(i2.kron(&i2), ComplexMatrix::identity(4));
    }

    #[test]
    fn kron_sigma_x_flips_both_bits() {
        let xx = kron(&sigma_x(), &sigma_x());
        let ket00 = vec![ONE, ZERO, ZERO, ZERO];
        assert_eq!(xx.apply(&ket00), vec![ZERO, ZERO, ZERO, ONE]);
    }

    #[test]
    fn kron_index_convention() {
        let a = ComplexMatrix::from_real_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = ComplexMatrix::from_real_rows(&[&[0.0, 5.0, 1.0], &[6.0, 7.0, 2.0]]);
        let k = a.kron(&b);
        assert_eq!((k.rows(), k.cols()), (4, 6));
        // (i ⊗ j) -> i * b.rows + j
        assert_eq!(k[(1 * 2 + 1, 0 * 3 + 2)], a[(1, 0)] * b[(1, 2)]);
        assert_eq!(k[(0 * 2 + 1, 1 * 3 + 1)], a[(0, 1)] * b[(1, 1)]);
    }

    #[test]
    fn kron_mixed_product_and_associativity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let a = random_complex(&mut rng, 2, 3);
            let b = random_complex(&mut rng, 3, 2);
            let c = random_complex(&mut rng, 3, 2);
            let d = random_complex(&mut rng, 2, 2);
            let lhs = &a.kron(&b) * &c.kron(&d);
            let rhs = (&a * &c).kron(&(&b * &d));
            assert!(lhs.max_abs_diff(&rhs) <= 1e-12 * rhs.max_abs().max(1.0));
            let left = a.kron(&b).kron(&c);
            let right = a.kron(&b.kron(&c));
            assert!(left.max_abs_diff(&right) <= 1e-12);
        }
        // Exactly representable inputs associate exactly.
        let p = ComplexMatrix::from_real_rows(&[&[1.0, -2.0], &[0.5, 3.0]]);
        assert_eq!(p.kron(&sigma_x()).kron(&p), p.kron(&sigma_x().kron(&p)));
    }

    #[test]
    fn eig_diagonal_sorted_descending() {
        let d = ComplexMatrix::from_real_rows(&[&[1.0, 0.0], &[0.0, 2.0]]);
        let e = hermitian_eig(&d).unwrap();
        assert_abs_diff_eq!(e.values[0], 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(e.values[1], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn eig_sigma_x() {
        let e = hermitian_eig(&sigma_x()).unwrap();
        assert_abs_diff_eq!(e.values[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(e.values[1], -1.0, epsilon = 1e-14);
        let s = 0.5_f64.sqrt();
        let v0 = e.vector(0);
        let v1 = e.vector(1);
        // Up to a phase.
        assert_abs_diff_eq!(inner(&[C64::new(s, 0.0), C64::new(s, 0.0)], &v0).norm(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(inner(&[C64::new(s, 0.0), C64::new(-s, 0.0)], &v1).norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn eig_rejects_non_hermitian() {
        let m = ComplexMatrix::from_real_rows(&[&[0.0, 1.0], &[0.0, 0.0]]);
        match hermitian_eig(&m) {
            Err(Error::NotHermitian { asymmetry }) => assert_abs_diff_eq!(asymmetry, 1.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn eig_reconstruction_and_orthonormality() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [1, 3, 6, 10] {
            let a = random_complex(&mut rng, n, n);
            let h = a.hermitian_part();
            let e = hermitian_eig(&h).unwrap();
            let v = &e.vectors;
            let diag = ComplexMatrix::from_diagonal(&e.values.iter().map(|&x| C64::new(x, 0.0)).collect::<Vec<_>>());
            let rec = &(v * &diag) * &v.adjoint();
            let lam_max = e.values.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
            assert!(rec.max_abs_diff(&h) <= 1e-10 * lam_max.max(1.0));
            assert!((&v.adjoint() * v).max_abs_diff(&ComplexMatrix::identity(n)) <= 1e-10);
            assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn nullspace_of_single_row() {
        let a = RealMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let n = nullspace_basis(&a);
        assert_eq!(n.shape(), (2, 1));
        let s = 0.5_f64.sqrt();
        assert_abs_diff_eq!(n[(0, 0)].abs(), s, epsilon = 1e-12);
        assert_abs_diff_eq!(n[(0, 0)] + n[(1, 0)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn nullspace_of_zero_is_everything() {
        let n = nullspace_basis(&RealMatrix::zeros(1, 3));
        assert_eq!(n, RealMatrix::identity(3, 3));
    }

    #[test]
    fn nullspace_of_full_rank_is_empty() {
        let a = RealMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(nullspace_basis(&a).ncols(), 0);
    }

    #[test]
    fn nullspace_random_rank_deficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = RealMatrix::from_fn(5, 3, |_, _| rng.random_range(-1.0..1.0));
        let c = RealMatrix::from_fn(3, 9, |_, _| rng.random_range(-1.0..1.0));
        let a = b * c; // rank 3
        let n = nullspace_basis(&a);
        assert_eq!(n.ncols(), 6);
        assert!((&a * &n).amax() <= 1e-10 * a.norm());
        assert!((n.transpose() * &n - RealMatrix::identity(6, 6)).amax() <= 1e-10);
    }

    #[test]
    fn spd_identity_and_diagonal() {
        let b = RealVector::from_vec(vec![1.5, -2.0, 3.0]);
        assert_eq!(solve_spd(&RealMatrix::identity(3, 3), &b).unwrap(), b);
        let a = RealMatrix::from_diagonal(&RealVector::from_vec(vec![2.0, 4.0]));
        let x = solve_spd(&a, &RealVector::from_vec(vec![2.0, 4.0])).unwrap();
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(x[1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn spd_random_schur_like_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [50, 150] {
            let m = RealMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let a = &m * m.transpose() + RealMatrix::identity(n, n);
            let b = RealVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let x = solve_spd(&a, &b).unwrap();
            assert!((&a * &x - &b).norm() <= 1e-9 * b.norm());
        }
    }

    #[test]
    fn spd_rejects_indefinite() {
        let a = RealMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        match solve_spd(&a, &RealVector::from_vec(vec![1.0, 1.0])) {
            Err(Error::NotPositiveDefinite { index, pivot }) => {
                assert_eq!(index, 1);
                assert_abs_diff_eq!(pivot, -3.0, epsilon = 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn min_norm_solution_is_minimal() {
        let a = RealMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let (x, r) = min_norm_solution(&a, &RealVector::from_vec(vec![1.0]));
        assert_abs_diff_eq!(x[0], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(x[1], 0.5, epsilon = 1e-14);
        assert!(r < 1e-14);
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use crate::random::{random_matrix, random_unitary};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn kron_is_associative(seed in any::<u64>(), da in 1usize..4, db in 1usize..4, dc in 1usize..4) {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let a = random_matrix(&mut r, da, da + 1);
            let b = random_matrix(&mut r, db, db);
            let c = random_matrix(&mut r, dc + 1, dc);
            let left = kron(&kron(&a, &b), &c);
            let right = kron(&a, &kron(&b, &c));
            prop_assert!(left.max_abs_diff(&right) <= 1e-12);
        }

        #[test]
        fn kron_is_exactly_associative_on_small_integers(seed in any::<u64>()) {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let int = |r: &mut ChaCha8Rng, n: usize| {
                let m = random_matrix(r, n, n);
                ComplexMatrix::from_fn(n, n, |i, j| C64::new((m[(i, j)].re * 4.0).round(), (m[(i, j)].im * 4.0).round()))
            };
            let (a, b, c) = (int(&mut r, 2), int(&mut r, 3), int(&mut r, 2));
            prop_assert_eq!(kron(&kron(&a, &b), &c), kron(&a, &kron(&b, &c)));
        }

        #[test]
        fn kron_mixed_product(seed in any::<u64>(), da in 1usize..4, db in 1usize..4) {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let a = random_matrix(&mut r, da, da + 1);
            let c = random_matrix(&mut r, da + 1, da);
            let b = random_matrix(&mut r, db, 2);
            let d = random_matrix(&mut r, 2, db);
            let left = &kron(&a, &b) * &kron(&c, &d);
            let right = kron(&(&a * &c), &(&b * &d));
            prop_assert!(left.max_abs_diff(&right) <= 1e-12 * (1.0 + right.max_abs()));
        }

        #[test]
        fn hermitian_eig_is_unitary_and_reconstructs(seed in any::<u64>(), n in 1usize..9) {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let h = random_matrix(&mut r, n, n).hermitian_part();
            let eig = hermitian_eig(&h).unwrap();
            let v = &eig.vectors;
            prop_assert!((&v.adjoint() * v).max_abs_diff(&ComplexMatrix::identity(n)) <= 1e-10);
            let diag: Vec<C64> = eig.values.iter().map(|&x| C64::new(x, 0.0)).collect();
            let back = &(v * &ComplexMatrix::from_diagonal(&diag)) * &v.adjoint();
            prop_assert!(back.max_abs_diff(&h) <= 1e-10 * (1.0 + h.max_abs()));
            prop_assert!(eig.values.windows(2).all(|w| w[0] >= w[1]));
        }

        #[test]
        fn hermitian_eig_of_unitary_conjugation(seed in any::<u64>(), n in 2usize..6) {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let u = random_unitary(&mut r, n);
            let diag: Vec<C64> = (0..n).map(|k| C64::new(k as f64 - 1.5, 0.0)).collect();
            let h = &(&u * &ComplexMatrix::from_diagonal(&diag)) * &u.adjoint();
            let eig = hermitian_eig(&h).unwrap();
            for (k, v) in eig.values.iter().enumerate() {
                prop_assert!((v - (n - 1 - k) as f64 + 1.5).abs() <= 1e-10);
            }
        }

        #[test]
        fn nullspace_columns_are_orthonormal(seed in any::<u64>(), m in 1usize..6, extra in 1usize..6) {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let n = m + extra;
            let g = random_matrix(&mut r, m, n);
            let a = RealMatrix::from_fn(m, n, |i, j| g[(i, j)].re);
            let z = nullspace_basis(&a);
            prop_assert_eq!(z.ncols(), extra);
            prop_assert!((z.transpose() * &z - RealMatrix::identity(extra, extra)).amax() <= 1e-10);
            prop_assert!((&a * &z).amax() <= 1e-10);
        }
    }
}
