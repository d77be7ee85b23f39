//! Code subspaces and perfect-correctability tests.

use crate::channel::{KrausChannel, TransferMatrix};
use crate::error::{Error, Result};
use crate::numkernel::{conj_vec, hermitian_eig, inner, kron_vec, ComplexMatrix, RealMatrix, C64, ONE, ZERO};

const ORTHONORMAL_TOL: f64 = 1e-10;
/// Threshold for both correctability tests.
pub const CORRECTABLE_TOL: f64 = 1e-8;

/// Orthonormal code words `{|k_c⟩}` spanning an `L`-dimensional subspace of `C^n`.
#[derive(Clone, Debug, PartialEq)]
pub struct CodeSpace {
    ambient_dim: usize,
    basis: Vec<Vec<C64>>,
}

impl CodeSpace {
    pub fn new(ambient_dim: usize, basis: Vec<Vec<C64>>) -> Result<Self> {
        if basis.is_empty() {
            return Err(Error::InvalidCode("no code words".into()));
        }
        if basis.len() > ambient_dim {
            return Err(Error::InvalidCode(format!("{} code words in dimension {ambient_dim}", basis.len())));
        }
        for (k, v) in basis.iter().enumerate() {
            if v.len() != ambient_dim {
                return Err(Error::DimensionMismatch(format!(
                    "code word {k} has length {}, expected {ambient_dim}",
                    v.len()
                )));
            }
        }
        for i in 0..basis.len() {
            for j in 0..basis.len() {
                let g = inner(&basis[i], &basis[j]);
                let target = if i == j { ONE } else { ZERO };
                if (g - target).norm() > ORTHONORMAL_TOL {
                    return Err(Error::InvalidCode(format!("code words {i} and {j} have overlap {g}")));
                }
            }
        }
        Ok(Self { ambient_dim, basis })
    }

    /// `{|0…0⟩, |1…1⟩}` on `qubits` qubits.
    pub fn repetition(qubits: usize) -> Result<Self> {
        if qubits == 0 || qubits > 16 {
            return Err(Error::InvalidArgument(format!("repetition code on {qubits} qubits")));
        }
        let n = 1 << qubits;
        let mut zero = vec![ZERO; n];
        let mut one = vec![ZERO; n];
        zero[0] = ONE;
        one[n - 1] = ONE;
        Self::new(n, vec![zero, one])
    }

    /// The whole space, with the computational basis as code words.
    pub fn full_space(n: usize) -> Result<Self> {
        let basis = (0..n)
            .map(|k| {
                let mut v = vec![ZERO; n];
                v[k] = ONE;
                v
            })
            .collect();
        Self::new(n, basis)
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    /// `L`
    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    pub fn basis(&self) -> &[Vec<C64>] {
        &self.basis
    }

    /// `Σ λ_k |k_c⟩`
    pub fn encode(&self, lambda: &[C64]) -> Result<Vec<C64>> {
        if lambda.len() != self.len() {
            return Err(Error::DimensionMismatch(format!("{} coefficients for a code of size {}", lambda.len(), self.len())));
        }
        let mut out = vec![ZERO; self.ambient_dim];
        for (l, v) in lambda.iter().zip(&self.basis) {
            for (o, x) in out.iter_mut().zip(v) {
                *o += l * x;
            }
        }
        Ok(out)
    }

    /// Columns `|i_c⟩ ⊗ |j_c⟩*`, ordered `i * L + j`: an orthonormal basis of `C ⊗ C*`.
    pub fn pair_basis(&self) -> ComplexMatrix {
        let cols: Vec<Vec<C64>> = self
            .basis
            .iter()
            .flat_map(|a| self.basis.iter().map(move |b| kron_vec(a, &conj_vec(b))))
            .collect();
        ComplexMatrix::from_columns(&cols)
    }
}

/// Outcome of the Knill–Laflamme test.
#[derive(Clone, Debug)]
pub struct KlReport {
    pub satisfied: bool,
    /// `α_jk`, the mean over code words of `⟨i_c|E_j^dag E_k|i_c⟩`.
    pub alpha: ComplexMatrix,
    pub max_violation: f64,
}

/// Checks `⟨i_c|E_j^dag E_k|ℓ_c⟩ = α_jk δ_iℓ` for every `i, j, k, ℓ`.
pub fn kl_check(e: &KrausChannel, c: &CodeSpace) -> Result<KlReport> {
    if e.dim() != c.ambient_dim() {
        return Err(Error::DimensionMismatch(format!("channel on dim {} vs code in dim {}", e.dim(), c.ambient_dim())));
    }
    let m = e.len();
    let l = c.len();
    // images[k][i] = E_k |i_c⟩
    let images: Vec<Vec<Vec<C64>>> = e.ops().iter().map(|op| c.basis().iter().map(|v| op.apply(v)).collect()).collect();
    let mut alpha = ComplexMatrix::zeros(m, m);
    let mut violation: f64 = 0.0;
    for j in 0..m {
        for k in 0..m {
            let entry = |i: usize, ell: usize| inner(&images[j][i], &images[k][ell]);
            let mean = (0..l).map(|i| entry(i, i)).sum::<C64>() / l as f64;
            alpha[(j, k)] = mean;
            for i in 0..l {
                for ell in 0..l {
                    let v = entry(i, ell);
                    let dev = if i == ell { (v - mean).norm() } else { v.norm() };
                    violation = violation.max(dev);
                }
            }
        }
    }
    Ok(KlReport { satisfied: violation <= CORRECTABLE_TOL, alpha, max_violation: violation })
}

/// The necessary-condition Gram matrix `⟨i_c|⟨i_c|* E^dag E |j_c⟩|j_c⟩*`.
#[derive(Clone, Debug)]
pub struct GramReport {
    pub gram: RealMatrix,
    /// Off-diagonals vanish and the diagonal is constant, within [`CORRECTABLE_TOL`].
    pub passes: bool,
}

pub fn perfect_recovery_gram(e: &TransferMatrix, c: &CodeSpace) -> Result<GramReport> {
    if e.dim() != c.ambient_dim() {
        return Err(Error::DimensionMismatch(format!("channel on dim {} vs code in dim {}", e.dim(), c.ambient_dim())));
    }
    let images: Vec<Vec<C64>> =
        c.basis().iter().map(|v| e.matrix().apply(&kron_vec(v, &conj_vec(v)))).collect();
    let l = c.len();
    let gram = RealMatrix::from_fn(l, l, |i, j| inner(&images[i], &images[j]).re);
    let mut passes = true;
    for i in 0..l {
        for j in 0..l {
            if i != j && gram[(i, j)].abs() > CORRECTABLE_TOL {
                passes = false;
            }
        }
        if (gram[(i, i)] - gram[(0, 0)]).abs() > CORRECTABLE_TOL {
            passes = false;
        }
    }
    Ok(GramReport { gram, passes })
}

/// Orthogonal projector onto `C ⊗ C*`.
pub fn code_projector(c: &CodeSpace) -> ComplexMatrix {
    let b = c.pair_basis();
    &b * &b.adjoint()
}

/// `S = -(I - P)`: negative semidefinite, zero on `C ⊗ C*`.
pub fn s_matrix(c: &CodeSpace) -> ComplexMatrix {
    let p = code_projector(c);
    let n2 = p.rows();
    &p - &ComplexMatrix::identity(n2)
}

/// `S = -(I - P) diag(w) (I - P)` for nonnegative weights `w` of length `n²`.
pub fn s_matrix_weighted(c: &CodeSpace, weights: &[f64]) -> Result<ComplexMatrix> {
    let n2 = c.ambient_dim() * c.ambient_dim();
    if weights.len() != n2 {
        return Err(Error::DimensionMismatch(format!("{} S weights, expected {n2}", weights.len())));
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0)) {
        return Err(Error::InvalidArgument(format!("S weight {w} is negative")));
    }
    let comp = &ComplexMatrix::identity(n2) - &code_projector(c);
    let w = ComplexMatrix::from_diagonal(&weights.iter().map(|&x| C64::new(-x, 0.0)).collect::<Vec<_>>());
    Ok(&(&comp * &w) * &comp)
}

/// Largest eigenvalue of a Hermitian `S`; must be `≤ 0` for use as a multiplier matrix.
pub fn max_eigenvalue(s: &ComplexMatrix) -> Result<f64> {
    Ok(hermitian_eig(s)?.max())
}
