//! Quantum-channel representations on a single `n`-dimensional space.
//!
//! Index pairs `(i, j)` of `H ⊗ H` are flattened as `i * n + j` everywhere.
//! With that convention the vectorisation `|ρ⟩⟩ = (ρ ⊗ I)|e⟩⟩` is the
//! row-major flattening of `ρ`, the transfer matrix is `Σ E_k ⊗ E_k*`, and
//! the Choi matrix is `Σ vec(E_k) vec(E_k)^dag`.

use crate::error::{Error, Result};
use crate::numkernel::{hermitian_eig, inner, ComplexMatrix, C64, ONE, ZERO};

/// Trace-preservation tolerance for Kraus sets.
pub const KRAUS_TP_TOL: f64 = 1e-9;
/// Default CP/TP admission tolerance for transfer and Choi matrices.
pub const ADMISSION_TOL: f64 = 1e-8;
/// Relative eigenvalue cutoff when extracting Kraus operators from a Choi matrix.
pub const KRAUS_CUTOFF: f64 = 1e-9;
const STATE_TOL: f64 = 1e-10;

/// Integer square root of a matrix dimension `n²`.
pub(crate) fn dim_root(n2: usize) -> Option<usize> {
    let n = (n2 as f64).sqrt().round() as usize;
    (n * n == n2).then_some(n)
}

fn sigma_x() -> ComplexMatrix {
    ComplexMatrix::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]])
}

/// `Σ_k |k⟩ ⊗ |k⟩*` in the computational basis.
pub fn max_entangled_vec(n: usize) -> Result<Vec<C64>> {
    if n == 0 {
        return Err(Error::InvalidArgument("dimension must be at least 1".into()));
    }
    let mut e = vec![ZERO; n * n];
    for k in 0..n {
        e[k * n + k] = ONE;
    }
    Ok(e)
}

/// `(ρ ⊗ I)|e⟩⟩` for any square matrix `ρ`.
pub fn vectorize(rho: &ComplexMatrix) -> Result<Vec<C64>> {
    if !rho.is_square() {
        return Err(Error::DimensionMismatch(format!("cannot vectorize a {}x{} matrix", rho.rows(), rho.cols())));
    }
    Ok(rho.as_slice().to_vec())
}

/// Inverse of [`vectorize`].
pub fn unvectorize(v: &[C64]) -> Result<ComplexMatrix> {
    let n = dim_root(v.len())
        .ok_or_else(|| Error::DimensionMismatch(format!("vector length {} is not a perfect square", v.len())))?;
    ComplexMatrix::new(n, n, v.to_vec())
}

/// Swaps the middle two indices: `out[(i,k),(j,l)] = in[(i,j),(k,l)]`.
///
/// Maps a transfer matrix to its Choi matrix and back.
pub fn rearrange(x: &ComplexMatrix) -> Result<ComplexMatrix> {
    if !x.is_square() {
        return Err(Error::DimensionMismatch(format!("cannot rearrange a {}x{} matrix", x.rows(), x.cols())));
    }
    let n = dim_root(x.rows())
        .ok_or_else(|| Error::DimensionMismatch(format!("dimension {} is not a perfect square", x.rows())))?;
    Ok(ComplexMatrix::from_fn(x.rows(), x.cols(), |r, c| {
        let (i, k) = (r / n, r % n);
        let (j, l) = (c / n, c % n);
        x[(i * n + j, k * n + l)]
    }))
}

/// A density operator `ρ = ρ^dag ⪰ 0`, `Tr ρ = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityOperator {
    mat: ComplexMatrix,
}

impl DensityOperator {
    pub fn new(mat: ComplexMatrix) -> Result<Self> {
        if !mat.is_square() {
            return Err(Error::InvalidState(format!("{}x{} is not square", mat.rows(), mat.cols())));
        }
        let asym = mat.asymmetry();
        if asym > STATE_TOL {
            return Err(Error::InvalidState(format!("not Hermitian (asymmetry {asym:.3e})")));
        }
        let tr = mat.trace();
        if (tr - ONE).norm() > STATE_TOL {
            return Err(Error::InvalidState(format!("trace is {tr}")));
        }
        let min = hermitian_eig(&mat)?.min();
        if min < -STATE_TOL {
            return Err(Error::InvalidState(format!("negative eigenvalue {min:.3e}")));
        }
        Ok(Self { mat })
    }

    /// `|φ⟩⟨φ|` for a normalised `φ`.
    pub fn pure(phi: &[C64]) -> Result<Self> {
        Self::new(ComplexMatrix::outer(phi, phi))
    }

    pub fn maximally_mixed(n: usize) -> Self {
        Self { mat: ComplexMatrix::identity(n).scale_real(1.0 / n as f64) }
    }

    pub(crate) fn from_matrix_unchecked(mat: ComplexMatrix) -> Self {
        Self { mat }
    }

    pub fn dim(&self) -> usize {
        self.mat.rows()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.mat
    }

    pub fn vectorize(&self) -> Vec<C64> {
        self.mat.as_slice().to_vec()
    }
}

pub fn vectorize_state(rho: &DensityOperator) -> Vec<C64> {
    rho.vectorize()
}

/// Trace-preserving Kraus set `{E_k}` on an `n`-dimensional space.
#[derive(Clone, Debug, PartialEq)]
pub struct KrausChannel {
    dim: usize,
    ops: Vec<ComplexMatrix>,
}

impl KrausChannel {
    pub fn new(ops: Vec<ComplexMatrix>) -> Result<Self> {
        let first = ops.first().ok_or_else(|| Error::NotChannel("empty Kraus set".into()))?;
        let dim = first.rows();
        if dim == 0 {
            return Err(Error::NotChannel("zero-dimensional Kraus operator".into()));
        }
        for (k, op) in ops.iter().enumerate() {
            if op.rows() != dim || op.cols() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "Kraus operator {k} is {}x{}, expected {dim}x{dim}",
                    op.rows(),
                    op.cols()
                )));
            }
        }
        let ch = Self { dim, ops };
        let resid = ch.completeness_residual();
        if resid > KRAUS_TP_TOL {
            return Err(Error::NotChannel(format!("sum of E_k^dag E_k deviates from I by {resid:.3e}")));
        }
        Ok(ch)
    }

    pub fn identity(n: usize) -> Self {
        Self { dim: n, ops: vec![ComplexMatrix::identity(n)] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ops(&self) -> &[ComplexMatrix] {
        &self.ops
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// `max |Σ E_k^dag E_k - I|`
    pub fn completeness_residual(&self) -> f64 {
        let mut sum = ComplexMatrix::zeros(self.dim, self.dim);
        for op in &self.ops {
            sum = &sum + &(&op.adjoint() * op);
        }
        sum.max_abs_diff(&ComplexMatrix::identity(self.dim))
    }

    /// Kraus set of `self ⊗ other`, ordered with `self`'s index outermost.
    pub fn tensor(&self, other: &Self) -> Self {
        let ops = self.ops.iter().flat_map(|a| other.ops.iter().map(move |b| a.kron(b))).collect();
        Self { dim: self.dim * other.dim, ops }
    }

    /// `E'_k = Σ_j u_jk E_j`. `u` is `m' x m'` with `m' ≥ m`; missing operators count as zero.
    pub fn mix(&self, u: &ComplexMatrix) -> Result<Self> {
        if !u.is_square() || u.rows() < self.ops.len() {
            return Err(Error::DimensionMismatch(format!(
                "mixing matrix {}x{} for {} Kraus operators",
                u.rows(),
                u.cols(),
                self.ops.len()
            )));
        }
        let ops = (0..u.cols())
            .map(|k| {
                self.ops
                    .iter()
                    .enumerate()
                    .fold(ComplexMatrix::zeros(self.dim, self.dim), |acc, (j, e)| &acc + &e.scale(u[(j, k)]))
            })
            .collect();
        Ok(Self { dim: self.dim, ops })
    }

    /// `Σ E_k ρ E_k^dag`
    pub fn apply_matrix(&self, rho: &ComplexMatrix) -> ComplexMatrix {
        self.ops
            .iter()
            .fold(ComplexMatrix::zeros(self.dim, self.dim), |acc, e| &acc + &(&(e * rho) * &e.adjoint()))
    }

    pub fn transfer(&self) -> TransferMatrix {
        transfer_from_kraus(self)
    }

    pub fn choi(&self) -> ChoiMatrix {
        choi_from_kraus(self)
    }
}

/// `X₂ = Σ E_k ⊗ E_k*`, acting on vectorised states.
#[derive(Clone, Debug, PartialEq)]
pub struct TransferMatrix {
    dim: usize,
    mat: ComplexMatrix,
}

impl TransferMatrix {
    /// Validates trace preservation and complete positivity at [`ADMISSION_TOL`].
    pub fn new(mat: ComplexMatrix) -> Result<Self> {
        Self::with_tolerance(mat, ADMISSION_TOL)
    }

    pub fn with_tolerance(mat: ComplexMatrix, tol: f64) -> Result<Self> {
        let x = Self::new_unchecked(mat)?;
        let tp = check_tp(&x);
        if tp > tol {
            return Err(Error::NotChannel(format!("trace-preservation residual {tp:.3e} exceeds {tol:.1e}")));
        }
        let cp = check_cp(&x)?;
        if cp < -tol {
            return Err(Error::NotChannel(format!("rearranged matrix has eigenvalue {cp:.3e} below -{tol:.1e}")));
        }
        Ok(x)
    }

    /// Only the shape is checked. Used for solver output, whose CP/TP residuals
    /// are reported rather than enforced.
    pub fn new_unchecked(mat: ComplexMatrix) -> Result<Self> {
        if !mat.is_square() {
            return Err(Error::DimensionMismatch(format!("transfer matrix is {}x{}", mat.rows(), mat.cols())));
        }
        let dim = dim_root(mat.rows())
            .ok_or_else(|| Error::DimensionMismatch(format!("dimension {} is not a perfect square", mat.rows())))?;
        Ok(Self { dim, mat })
    }

    pub fn identity(n: usize) -> Self {
        Self { dim: n, mat: ComplexMatrix::identity(n * n) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.mat
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.mat
    }

    pub fn choi(&self) -> ChoiMatrix {
        ChoiMatrix { dim: self.dim, mat: rearrange(&self.mat).expect("square of perfect-square size") }
    }
}

/// `X₁ = Σ (E_k ⊗ I)|e⟩⟩⟨⟨e|(E_k^dag ⊗ I)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChoiMatrix {
    dim: usize,
    mat: ComplexMatrix,
}

impl ChoiMatrix {
    pub fn new(mat: ComplexMatrix) -> Result<Self> {
        Self::with_tolerance(mat, ADMISSION_TOL)
    }

    pub fn with_tolerance(mat: ComplexMatrix, tol: f64) -> Result<Self> {
        let c = Self::new_unchecked(mat)?;
        let asym = c.mat.asymmetry();
        if asym > tol {
            return Err(Error::NotHermitian { asymmetry: asym });
        }
        let min = hermitian_eig(&c.mat)?.min();
        if min < -tol {
            return Err(Error::NotChannel(format!("Choi matrix has eigenvalue {min:.3e}")));
        }
        let pt = c.partial_trace_residual();
        if pt > tol {
            return Err(Error::NotChannel(format!("partial trace deviates from I by {pt:.3e}")));
        }
        Ok(c)
    }

    pub fn new_unchecked(mat: ComplexMatrix) -> Result<Self> {
        if !mat.is_square() {
            return Err(Error::DimensionMismatch(format!("Choi matrix is {}x{}", mat.rows(), mat.cols())));
        }
        let dim = dim_root(mat.rows())
            .ok_or_else(|| Error::DimensionMismatch(format!("dimension {} is not a perfect square", mat.rows())))?;
        Ok(Self { dim, mat })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.mat
    }

    /// `(Tr_H ⊗ id) X₁`, an `n x n` matrix.
    pub fn partial_trace(&self) -> ComplexMatrix {
        let n = self.dim;
        ComplexMatrix::from_fn(n, n, |k, l| (0..n).map(|i| self.mat[(i * n + k, i * n + l)]).sum())
    }

    pub fn partial_trace_residual(&self) -> f64 {
        self.partial_trace().max_abs_diff(&ComplexMatrix::identity(self.dim))
    }

    pub fn transfer(&self) -> TransferMatrix {
        TransferMatrix { dim: self.dim, mat: rearrange(&self.mat).expect("square of perfect-square size") }
    }
}

pub fn transfer_from_kraus(k: &KrausChannel) -> TransferMatrix {
    let n2 = k.dim * k.dim;
    let mut mat = ComplexMatrix::zeros(n2, n2);
    for e in &k.ops {
        mat = &mat + &e.kron(&e.conj());
    }
    TransferMatrix { dim: k.dim, mat }
}

pub fn choi_from_kraus(k: &KrausChannel) -> ChoiMatrix {
    let n2 = k.dim * k.dim;
    let mut mat = ComplexMatrix::zeros(n2, n2);
    for e in &k.ops {
        let v = e.as_slice();
        mat = &mat + &ComplexMatrix::outer(v, v);
    }
    ChoiMatrix { dim: k.dim, mat }
}

/// Kraus operators `√μ_k unvec(v_k)` from the significant eigenpairs of `c`.
pub fn kraus_from_choi(c: &ChoiMatrix) -> Result<KrausChannel> {
    let eig = hermitian_eig(&c.mat.hermitian_part())?;
    if eig.min() < -ADMISSION_TOL {
        return Err(Error::NotChannel(format!("Choi matrix has eigenvalue {:.3e}", eig.min())));
    }
    let mu_max = eig.max();
    if mu_max <= 0.0 {
        return Err(Error::NotChannel("Choi matrix is zero".into()));
    }
    let ops = eig
        .values
        .iter()
        .enumerate()
        .take_while(|(_, &mu)| mu > KRAUS_CUTOFF * mu_max)
        .map(|(k, &mu)| {
            let v: Vec<C64> = eig.vector(k).iter().map(|z| z * mu.sqrt()).collect();
            unvectorize(&v).expect("length n^2")
        })
        .collect();
    Ok(KrausChannel { dim: c.dim, ops })
}

/// `|ρ'⟩⟩ = X |ρ⟩⟩`, unvectorised.
pub fn apply(x: &TransferMatrix, rho: &DensityOperator) -> Result<DensityOperator> {
    if x.dim != rho.dim() {
        return Err(Error::DimensionMismatch(format!("channel on dim {} applied to state of dim {}", x.dim, rho.dim())));
    }
    let out = x.mat.apply(&rho.vectorize());
    Ok(DensityOperator::from_matrix_unchecked(unvectorize(&out)?))
}

/// Cascade `a ∘ b` (apply `b` first).
pub fn compose(a: &TransferMatrix, b: &TransferMatrix) -> Result<TransferMatrix> {
    if a.dim != b.dim {
        return Err(Error::DimensionMismatch(format!("cannot compose channels on dims {} and {}", a.dim, b.dim)));
    }
    Ok(TransferMatrix { dim: a.dim, mat: &a.mat * &b.mat })
}

/// Euclidean norm of `⟨⟨e|X - ⟨⟨e|`.
pub fn check_tp(x: &TransferMatrix) -> f64 {
    let n = x.dim;
    let mut sq = 0.0;
    for col in 0..n * n {
        let mut s: C64 = (0..n).map(|a| x.mat[(a * n + a, col)]).sum();
        if col / n == col % n {
            s -= ONE;
        }
        sq += s.norm_sqr();
    }
    sq.sqrt()
}

/// Smallest eigenvalue of the Hermitian part of `rearrange(x)`.
pub fn check_cp(x: &TransferMatrix) -> Result<f64> {
    let choi = rearrange(&x.mat)?;
    Ok(hermitian_eig(&choi.hermitian_part())?.min())
}

/// Convex combination `w a + (1 - w) b`.
pub fn mix_channels(a: &TransferMatrix, b: &TransferMatrix, w: f64) -> Result<TransferMatrix> {
    if a.dim != b.dim {
        return Err(Error::DimensionMismatch(format!("cannot mix channels on dims {} and {}", a.dim, b.dim)));
    }
    Ok(TransferMatrix { dim: a.dim, mat: &a.mat.scale_real(w) + &b.mat.scale_real(1.0 - w) })
}

/// Independent bit flips with probability `p` on each of `qubits` qubits.
///
/// For one qubit the Kraus set is `{√p σx, √q I}`; tensor powers enumerate
/// products with the first qubit's choice outermost, so two qubits give
/// `{p σx⊗σx, √pq σx⊗I, √pq I⊗σx, q I⊗I}`.
pub fn bit_flip_channel(p: f64, qubits: usize) -> Result<KrausChannel> {
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return Err(Error::InvalidArgument(format!("flip probability {p} outside [0, 1]")));
    }
    if !(1..=3).contains(&qubits) {
        return Err(Error::InvalidArgument(format!("bit-flip channel supports 1 to 3 qubits, got {qubits}")));
    }
    let q = 1.0 - p;
    let single = if p == 0.0 {
        KrausChannel::identity(2)
    } else if q == 0.0 {
        KrausChannel { dim: 2, ops: vec![sigma_x()] }
    } else {
        KrausChannel { dim: 2, ops: vec![sigma_x().scale_real(p.sqrt()), ComplexMatrix::identity(2).scale_real(q.sqrt())] }
    };
    let mut ch = single.clone();
    for _ in 1..qubits {
        ch = ch.tensor(&single);
    }
    Ok(ch)
}

/// `⟨φ|⟨φ*| X |φ⟩|φ*⟩` for a pure state `φ` on the channel's space.
pub fn pure_state_fidelity(x: &TransferMatrix, phi: &[C64]) -> C64 {
    let v = crate::numkernel::kron_vec(phi, &crate::numkernel::conj_vec(phi));
    inner(&v, &x.mat.apply(&v))
}


#[cfg(test)]
mod props {
    use super::*;
    use crate::numkernel::{conj_vec, kron, kron_vec};
    use crate::random::{random_kraus_channel, random_matrix, random_unit_vector, random_unitary};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dist(a: &[C64], b: &[C64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn transpose_moves_across_maximally_entangled(seed in any::<u64>(), n in 2usize..5) {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let a = random_matrix(&mut r, n, n);
            let e = max_entangled_vec(n).unwrap();
            let id = ComplexMatrix::identity(n);
            let left = kron(&a, &id).apply(&e);
            let right = kron(&id, &a.transpose()).apply(&e);
            prop_assert!(dist(&left, &right) <= 1e-12);
        }

        #[test]
        fn maximally_entangled_is_basis_independent(seed in any::<u64>(), n in 2usize..5) {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let u = random_unitary(&mut r, n);
            let mut sum = vec![ZERO; n * n];
            for k in 0..n {
                let col = u.column(k);
                for (s, v) in sum.iter_mut().zip(kron_vec(&col, &conj_vec(&col))) {
                    *s += v;
                }
            }
            prop_assert!(dist(&sum, &max_entangled_vec(n).unwrap()) <= 1e-12);
        }

        #[test]
        fn kraus_freedom_leaves_channel_unchanged(
            seed in any::<u64>(), n in 2usize..4, m in 1usize..4, pad in 0usize..2,
        ) {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let ch = random_kraus_channel(&mut r, n, m);
            let u = random_unitary(&mut r, m + pad);
            let mixed = ch.mix(&u).unwrap();
            prop_assert!(mixed.transfer().matrix().max_abs_diff(ch.transfer().matrix()) <= 1e-10);
            prop_assert!(mixed.choi().matrix().max_abs_diff(ch.choi().matrix()) <= 1e-10);
        }

        #[test]
        fn rearrange_is_an_involution(seed in any::<u64>(), n in 1usize..5) {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let x = random_matrix(&mut r, n * n, n * n);
            prop_assert_eq!(rearrange(&rearrange(&x).unwrap()).unwrap(), x);
        }

        #[test]
        fn representation_round_trips(seed in any::<u64>(), n in 2usize..5, m in 1usize..5) {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let ch = random_kraus_channel(&mut r, n, m);
            let t = ch.transfer();
            let c = t.choi();
            prop_assert!(c.transfer().matrix().max_abs_diff(t.matrix()) <= 1e-8);
            let back = kraus_from_choi(&c).unwrap();
            prop_assert!(back.len() <= n * n);
            prop_assert!(back.transfer().matrix().max_abs_diff(t.matrix()) <= 1e-8);
            prop_assert!(back.choi().matrix().max_abs_diff(ch.choi().matrix()) <= 1e-8);
        }

        #[test]
        fn transfer_quadratic_form_is_fidelity(seed in any::<u64>(), n in 2usize..5, m in 1usize..4) {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let ch = random_kraus_channel(&mut r, n, m);
            let phi = random_unit_vector(&mut r, n);
            let lhs = pure_state_fidelity(&ch.transfer(), &phi);
            let rho = ComplexMatrix::outer(&phi, &phi);
            let rhs = inner(&phi, &ch.apply_matrix(&rho).apply(&phi));
            prop_assert!((lhs - rhs).norm() <= 1e-10);
        }

        #[test]
        fn channel_set_is_convex(seed in any::<u64>(), n in 2usize..4, w in 0.0f64..=1.0) {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let a = random_kraus_channel(&mut r, n, 2).transfer();
            let b = random_kraus_channel(&mut r, n, 3).transfer();
            let mix = mix_channels(&a, &b, w).unwrap();
            prop_assert!(check_tp(&mix) <= ADMISSION_TOL);
            prop_assert!(check_cp(&mix).unwrap() >= -ADMISSION_TOL);
        }
    }
}
