//! Recovery synthesis: assemble the relaxed fidelity SDP over Choi matrices,
//! solve it, and certify the result.
//!
//! The decision variable is the Hermitian Choi matrix `C` of the recovery,
//! with `R = rearrange(C)` its transfer matrix. Its `n⁴` real parameters are
//! ordered row by row over the upper triangle: for each `P`, the diagonal
//! `C[P,P]`, then `Re C[P,Q]`, `Im C[P,Q]` for `Q > P`. The bound `ε` and the
//! multiplier `τ` follow.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::channel::{check_cp, check_tp, rearrange, ChoiMatrix, KrausChannel, TransferMatrix};
use crate::code::{max_eigenvalue, s_matrix, CodeSpace};
use crate::error::{Error, Result};
use crate::numkernel::{hermitian_eig, ComplexMatrix, RealMatrix, RealVector, C64, ZERO};
use crate::sdp::{solve_sdp, Equalities, LmiBlock, SdpProblem, SolveStatus, SolverOptions, SymSparse};

/// Lower bound imposed on `τ` in place of strict positivity.
pub const TAU_FLOOR: f64 = 1e-9;
const S_NSD_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    /// Fidelity LMI on `Herm(R E)`.
    Standard,
    /// Fidelity LMI on `Σ_k (I ⊗ E_kᵀ) C (I ⊗ E_k*)`.
    Alternative,
}

impl fmt::Display for Formulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Formulation::Standard => "standard",
            Formulation::Alternative => "alternative",
        })
    }
}

impl FromStr for Formulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Formulation::Standard),
            "alternative" => Ok(Formulation::Alternative),
            other => Err(Error::InvalidArgument(format!("unknown formulation {other:?}"))),
        }
    }
}

/// Index arithmetic for the Choi parametrisation of order `n²`.
#[derive(Clone, Copy, Debug)]
pub struct ChoiParams {
    n: usize,
}

impl ChoiParams {
    pub fn new(n: usize) -> Self {
        Self { n }
    }

    /// Order of the Choi matrix, `n²`.
    pub fn order(&self) -> usize {
        self.n * self.n
    }

    /// Number of real parameters, `n⁴`.
    pub fn len(&self) -> usize {
        self.order() * self.order()
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn row_offset(&self, p: usize) -> usize {
        let big = self.order();
        p + 2 * (p * (big - 1) - p * p.saturating_sub(1) / 2)
    }

    pub fn diagonal(&self, p: usize) -> usize {
        self.row_offset(p)
    }

    /// Index of `Re C[p,q]`; `Im C[p,q]` follows it. Requires `p < q`.
    pub fn real_part(&self, p: usize, q: usize) -> usize {
        debug_assert!(p < q);
        self.row_offset(p) + 1 + 2 * (q - p - 1)
    }

    /// `(p, q, unit)` for every parameter in order; the parameter's matrix is
    /// `unit` at `(p, q)` plus its Hermitian mirror.
    pub fn units(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        let big = self.order();
        (0..big).flat_map(move |p| {
            std::iter::once((p, p, C64::new(1.0, 0.0)))
                .chain((p + 1..big).flat_map(move |q| [(p, q, C64::new(1.0, 0.0)), (p, q, C64::new(0.0, 1.0))]))
        })
    }

    pub fn to_matrix(&self, x: &[f64]) -> ComplexMatrix {
        let big = self.order();
        let mut c = ComplexMatrix::zeros(big, big);
        for p in 0..big {
            c[(p, p)] = C64::new(x[self.diagonal(p)], 0.0);
            for q in p + 1..big {
                let k = self.real_part(p, q);
                let z = C64::new(x[k], x[k + 1]);
                c[(p, q)] = z;
                c[(q, p)] = z.conj();
            }
        }
        c
    }

    pub fn from_matrix(&self, c: &ComplexMatrix) -> Vec<f64> {
        let big = self.order();
        let mut x = vec![0.0; self.len()];
        for p in 0..big {
            x[self.diagonal(p)] = c[(p, p)].re;
            for q in p + 1..big {
                let k = self.real_part(p, q);
                x[k] = c[(p, q)].re;
                x[k + 1] = c[(p, q)].im;
            }
        }
        x
    }
}

/// Sparse rows of a complex matrix.
fn sparse_rows(m: &ComplexMatrix) -> Vec<Vec<(usize, C64)>> {
    (0..m.rows()).map(|r| m.row(r).iter().enumerate().filter(|(_, z)| **z != ZERO).map(|(c, z)| (c, *z)).collect()).collect()
}

/// Upper-triangle Hermitian entries of `½(M + M^dag)` from the entries of `M`.
fn hermitian_half(entries: impl IntoIterator<Item = (usize, usize, C64)>) -> Vec<(usize, usize, C64)> {
    let mut acc: BTreeMap<(usize, usize), C64> = BTreeMap::new();
    for (a, b, m) in entries {
        let (key, v) = match a.cmp(&b) {
            std::cmp::Ordering::Equal => ((a, a), C64::new(m.re, 0.0)),
            std::cmp::Ordering::Less => ((a, b), m * 0.5),
            std::cmp::Ordering::Greater => ((b, a), m.conj() * 0.5),
        };
        *acc.entry(key).or_insert(ZERO) += v;
    }
    acc.into_iter().filter(|(_, v)| *v != ZERO).map(|((a, b), v)| (a, b, v)).collect()
}

fn hermitian_upper(m: &ComplexMatrix) -> Vec<(usize, usize, C64)> {
    let n = m.rows();
    (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).map(|(i, j)| (i, j, m[(i, j)])).filter(|e| e.2 != ZERO).collect()
}

fn validate(e_dim: usize, c: &CodeSpace, s: &ComplexMatrix) -> Result<()> {
    if e_dim != c.ambient_dim() {
        return Err(Error::DimensionMismatch(format!("channel on dim {e_dim} vs code in dim {}", c.ambient_dim())));
    }
    let big = e_dim * e_dim;
    if s.rows() != big || s.cols() != big {
        return Err(Error::DimensionMismatch(format!("S is {}x{}, expected {big}x{big}", s.rows(), s.cols())));
    }
    let top = max_eigenvalue(s)?;
    if top > S_NSD_TOL {
        return Err(Error::InvalidArgument(format!("S has positive eigenvalue {top:.3e}")));
    }
    Ok(())
}

/// Shared structure of both formulations; `fidelity_term(p, q, u)` yields
/// the entries of `M` with `½(M + M^dag)` the fidelity-block coefficient of
/// the parameter with unit `u` at `(p, q)`.
fn assemble(
    n: usize,
    s: &ComplexMatrix,
    mut fidelity_term: impl FnMut(usize, usize, C64) -> Vec<(usize, usize, C64)>,
) -> Result<SdpProblem> {
    let params = ChoiParams::new(n);
    let big = params.order();
    let nv = params.len() + 2;
    let (eps, tau) = (params.len(), params.len() + 1);

    let mut fid_terms = Vec::with_capacity(nv);
    let mut choi_terms = Vec::with_capacity(nv);
    let mut tau_terms = vec![SymSparse::zeros(1); nv];
    for (p, q, u) in params.units() {
        fid_terms.push(SymSparse::realify_hermitian(big, hermitian_half(fidelity_term(p, q, u))));
        choi_terms.push(SymSparse::realify_hermitian(big, [(p, q, u)]));
    }
    fid_terms.push(SymSparse::identity(2 * big));
    fid_terms.push(SymSparse::realify_hermitian(big, hermitian_upper(s).into_iter().map(|(i, j, v)| (i, j, -v))));
    choi_terms.push(SymSparse::zeros(2 * big));
    choi_terms.push(SymSparse::zeros(2 * big));
    tau_terms[tau] = SymSparse::identity(1);

    let neg_identity = SymSparse::from_entries(2 * big, (0..2 * big).map(|i| (i, i, -1.0)));
    let blocks = vec![
        LmiBlock::new(2 * big, neg_identity, fid_terms)?,
        LmiBlock::new(2 * big, SymSparse::zeros(2 * big), choi_terms)?,
        LmiBlock::new(1, SymSparse::from_entries(1, [(0, 0, -TAU_FLOOR)]), tau_terms)?,
    ];
    let mut objective = vec![0.0; nv];
    objective[eps] = 1.0;

    // (Tr ⊗ id) C = I, split into real and imaginary rows.
    let mut rows: Vec<(Vec<usize>, f64)> = Vec::with_capacity(big);
    for k in 0..n {
        for l in k..n {
            if k == l {
                rows.push(((0..n).map(|i| params.diagonal(i * n + k)).collect(), 1.0));
            } else {
                let re: Vec<usize> = (0..n).map(|i| params.real_part(i * n + k, i * n + l)).collect();
                let im = re.iter().map(|r| r + 1).collect();
                rows.push((re, 0.0));
                rows.push((im, 0.0));
            }
        }
    }
    let mut matrix = RealMatrix::zeros(rows.len(), nv);
    for (r, (vars, _)) in rows.iter().enumerate() {
        for &v in vars {
            matrix[(r, v)] = 1.0;
        }
    }
    let rhs = RealVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
    SdpProblem::new(objective, blocks)?.with_equalities(Equalities { matrix, rhs })
}

/// `min ε` subject to `Herm(R E) + (ε-1) I - τ S ⪰ 0`, `C ⪰ 0`, `τ ≥ τ_floor`
/// and `(Tr ⊗ id) C = I`.
pub fn assemble_standard(e: &TransferMatrix, c: &CodeSpace, s: &ComplexMatrix) -> Result<SdpProblem> {
    let n = e.dim();
    validate(n, c, s)?;
    let erows = sparse_rows(e.matrix());
    // C[(i,j),(k,l)] sits at R[(i,k),(j,l)].
    let to_r = |p: usize, q: usize| ((p / n) * n + q / n, (p % n) * n + q % n);
    assemble(n, s, |p, q, u| {
        let mut out = Vec::new();
        let mut push_row = |(r, srow): (usize, usize), w: C64| {
            for &(col, v) in &erows[srow] {
                out.push((r, col, w * v));
            }
        };
        push_row(to_r(p, q), u);
        if p != q {
            push_row(to_r(q, p), u.conj());
        }
        out
    })
}

/// As [`assemble_standard`] with the fidelity block replaced by
/// `Σ_k (I ⊗ E_kᵀ) C (I ⊗ E_k*)`.
pub fn assemble_alternative(e: &KrausChannel, c: &CodeSpace, s: &ComplexMatrix) -> Result<SdpProblem> {
    let n = e.dim();
    validate(n, c, s)?;
    let erows = sparse_rows(e.transfer().matrix());
    assemble(n, s, |p, q, u| {
        // out[(a,b'),(c,d')] += C[(a,b),(c,d)] X₂[(b,d),(b',d')], doubled for
        // off-diagonal units so that ½(M + M^dag) covers the mirror entry.
        let (a, b) = (p / n, p % n);
        let (cc, d) = (q / n, q % n);
        let w = if p == q { u } else { u * 2.0 };
        erows[b * n + d].iter().map(|&(col, v)| (a * n + col / n, cc * n + col % n, w * v)).collect()
    })
}

/// `Σ_k (I ⊗ E_kᵀ) C (I ⊗ E_k*)` evaluated through the transfer matrix.
pub fn alternative_fidelity_matrix(e: &TransferMatrix, choi: &ComplexMatrix) -> ComplexMatrix {
    let n = e.dim();
    let big = n * n;
    let x = e.matrix();
    let mut out = ComplexMatrix::zeros(big, big);
    for p in 0..big {
        for q in 0..big {
            let v = choi[(p, q)];
            if v == ZERO {
                continue;
            }
            let (a, b, cc, d) = (p / n, p % n, q / n, q % n);
            for (col, xv) in x.row(b * n + d).iter().enumerate() {
                if *xv != ZERO {
                    out[(a * n + col / n, cc * n + col % n)] += v * xv;
                }
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// Trace-preservation defect of the recovery.
    pub tp: f64,
    /// Smallest eigenvalue of the recovery's Choi matrix.
    pub cp: f64,
    /// Smallest eigenvalue of the fidelity block at the returned point.
    pub lmi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverSummary {
    pub status: SolveStatus,
    pub iterations: usize,
    pub gap: f64,
}

#[derive(Clone, Debug)]
pub struct SynthesisResult {
    pub recovery: TransferMatrix,
    pub choi: ChoiMatrix,
    pub epsilon: f64,
    pub tau: f64,
    pub guaranteed_fidelity: f64,
    pub formulation: Formulation,
    pub residuals: Residuals,
    pub solver: SolverSummary,
    /// Multiplier matrix the problem was built with.
    pub multiplier: ComplexMatrix,
}

#[derive(Clone, Debug, Default)]
pub struct SynthesisOptions {
    pub solver: SolverOptions,
    /// Replaces the default `S = -(I - P)`.
    pub multiplier: Option<ComplexMatrix>,
}

fn fidelity_block(
    formulation: Formulation,
    e: &TransferMatrix,
    recovery: &TransferMatrix,
    choi: &ComplexMatrix,
    eps: f64,
    tau: f64,
    s: &ComplexMatrix,
) -> ComplexMatrix {
    let big = s.rows();
    let core = match formulation {
        Formulation::Standard => (recovery.matrix() * e.matrix()).hermitian_part(),
        Formulation::Alternative => alternative_fidelity_matrix(e, choi).hermitian_part(),
    };
    &(&core + &ComplexMatrix::identity(big).scale_real(eps - 1.0)) - &s.scale_real(tau)
}

/// Builds and solves the recovery SDP for error channel `e` and code `c`.
///
/// A non-optimal solver status is reported in `solver.status` together
/// with the last iterate; callers decide whether to accept it.
pub fn synthesize(
    e: &KrausChannel,
    c: &CodeSpace,
    formulation: Formulation,
    opts: &SynthesisOptions,
) -> Result<SynthesisResult> {
    let s = match &opts.multiplier {
        Some(s) => s.clone(),
        None => s_matrix(c),
    };
    let transfer = e.transfer();
    let problem = match formulation {
        Formulation::Standard => assemble_standard(&transfer, c, &s)?,
        Formulation::Alternative => assemble_alternative(e, c, &s)?,
    };
    let sol = solve_sdp(&problem, &opts.solver)?;
    let params = ChoiParams::new(e.dim());
    let choi_mat = params.to_matrix(&sol.x[..params.len()]);
    let eps = sol.x[params.len()];
    let tau = sol.x[params.len() + 1];
    let recovery = TransferMatrix::new_unchecked(rearrange(&choi_mat)?)?;
    let lmi = hermitian_eig(&fidelity_block(formulation, &transfer, &recovery, &choi_mat, eps, tau, &s))?.min();
    let residuals = Residuals { tp: check_tp(&recovery), cp: check_cp(&recovery)?, lmi };
    Ok(SynthesisResult {
        choi: ChoiMatrix::new_unchecked(choi_mat)?,
        recovery,
        epsilon: eps,
        tau,
        guaranteed_fidelity: 1.0 - eps,
        formulation,
        residuals,
        solver: SolverSummary { status: sol.status, iterations: sol.iterations, gap: sol.duality_gap },
        multiplier: s,
    })
}

/// Tolerance used by every certificate check.
pub const CERTIFICATE_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    /// Smallest eigenvalue of the fidelity block at `(R, ε, τ)`, in the result's formulation.
    pub lmi_min_eigenvalue: f64,
    /// `λ_min(B^dag X B)` over the code-pair basis `B`, where `X` is the
    /// formulation's fidelity matrix (`Herm(R E)` for the standard one).
    pub compression_min: f64,
    /// `compression_min - (1 - ε)`.
    pub compression_margin: f64,
    pub tp_residual: f64,
    pub cp_min_eigenvalue: f64,
    pub valid: bool,
}

/// Re-derives the guarantees of a result from its recovery alone.
pub fn certify(r: &SynthesisResult, e: &TransferMatrix, c: &CodeSpace) -> Result<Certificate> {
    certify_block(r.formulation, &r.recovery, r.epsilon, r.tau, &r.multiplier, e, c)
}

/// [`certify`] for a bare recovery, bound and multiplier, against the standard block.
pub fn certify_recovery(
    recovery: &TransferMatrix,
    eps: f64,
    tau: f64,
    s: &ComplexMatrix,
    e: &TransferMatrix,
    c: &CodeSpace,
) -> Result<Certificate> {
    certify_block(Formulation::Standard, recovery, eps, tau, s, e, c)
}

fn certify_block(
    formulation: Formulation,
    recovery: &TransferMatrix,
    eps: f64,
    tau: f64,
    s: &ComplexMatrix,
    e: &TransferMatrix,
    c: &CodeSpace,
) -> Result<Certificate> {
    validate(e.dim(), c, s)?;
    if recovery.dim() != e.dim() {
        return Err(Error::DimensionMismatch(format!("recovery on dim {} vs channel on dim {}", recovery.dim(), e.dim())));
    }
    let choi = rearrange(recovery.matrix())?;
    let block = fidelity_block(formulation, e, recovery, &choi, eps, tau, s);
    let lmi_min_eigenvalue = hermitian_eig(&block)?.min();
    let compression_min = match formulation {
        Formulation::Standard => {
            let composite = TransferMatrix::new_unchecked(recovery.matrix() * e.matrix())?;
            crate::verify::relaxed_worst(&composite, c)?
        }
        Formulation::Alternative => {
            let b = c.pair_basis();
            let x = alternative_fidelity_matrix(e, &choi).hermitian_part();
            hermitian_eig(&(&(&b.adjoint() * &x) * &b).hermitian_part())?.min()
        }
    };
    let compression_margin = compression_min - (1.0 - eps);
    let tp_residual = check_tp(recovery);
    let cp_min_eigenvalue = check_cp(recovery)?;
    let valid = lmi_min_eigenvalue >= -CERTIFICATE_TOL
        && compression_margin >= -CERTIFICATE_TOL
        && tp_residual <= CERTIFICATE_TOL
        && cp_min_eigenvalue >= -CERTIFICATE_TOL;
    Ok(Certificate { lmi_min_eigenvalue, compression_min, compression_margin, tp_residual, cp_min_eigenvalue, valid })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::bit_flip_channel;
    use crate::random::{random_kraus_channel, random_matrix};
    use crate::sdp::{eliminate_equalities, realify};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_hermitian(rng: &mut ChaCha8Rng, n: usize) -> ComplexMatrix {
        let g = random_matrix(rng, n, n);
        (&g + &g.adjoint()).scale_real(0.5)
    }

    #[test]
    fn parameter_layout_round_trips() {
        let params = ChoiParams::new(2);
        assert_eq!(params.len(), 16);
        let mut seen = vec![false; 16];
        for p in 0..4 {
            seen[params.diagonal(p)] = true;
            for q in p + 1..4 {
                seen[params.real_part(p, q)] = true;
                seen[params.real_part(p, q) + 1] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
        assert_eq!(params.units().count(), 16);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = random_hermitian(&mut rng, 4);
        let x = params.from_matrix(&h);
        assert!(params.to_matrix(&x).max_abs_diff(&h) < 1e-15);
        for (k, (p, q, u)) in params.units().enumerate() {
            let mut e = vec![0.0; 16];
            e[k] = 1.0;
            let m = params.to_matrix(&e);
            assert_eq!(m[(p, q)], if p == q { C64::new(1.0, 0.0) } else { u });
        }
    }

    #[test]
    fn problem_sizes() {
        for (qubits, vars, block, rows, reduced) in [(1, 18, 8, 4, 14), (2, 258, 32, 16, 242)] {
            let e = bit_flip_channel(0.9, qubits).unwrap();
            let c = CodeSpace::repetition(qubits).unwrap();
            let p = assemble_standard(&e.transfer(), &c, &s_matrix(&c)).unwrap();
            assert_eq!(p.num_vars(), vars);
            assert_eq!(p.block_sizes(), vec![block, block, 1]);
            assert_eq!(p.equalities().unwrap().matrix.nrows(), rows);
            let (r, _) = eliminate_equalities(&p).unwrap();
            assert_eq!(r.num_vars(), reduced);
        }
    }

    #[test]
    fn three_qubit_problem_size() {
        let e = bit_flip_channel(0.9, 3).unwrap();
        let c = CodeSpace::repetition(3).unwrap();
        let p = assemble_standard(&e.transfer(), &c, &s_matrix(&c)).unwrap();
        assert_eq!(p.num_vars(), 4098);
        assert_eq!(p.block_sizes(), vec![128, 128, 1]);
        assert_eq!(p.equalities().unwrap().matrix.nrows(), 64);
    }

    /// Dense oracle for the blocks at a random parameter point.
    fn check_blocks(formulation: Formulation) {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 2;
        let e = random_kraus_channel(&mut rng, n, 3);
        let c = CodeSpace::full_space(n).unwrap();
        let g = random_matrix(&mut rng, 4, 4);
        let s = (&g * &g.adjoint()).scale_real(-1.0);
        let p = match formulation {
            Formulation::Standard => assemble_standard(&e.transfer(), &c, &s).unwrap(),
            Formulation::Alternative => assemble_alternative(&e, &c, &s).unwrap(),
        };
        let choi = random_hermitian(&mut rng, 4);
        let params = ChoiParams::new(n);
        let mut x = params.from_matrix(&choi);
        let (eps, tau) = (0.3, 0.7);
        x.push(eps);
        x.push(tau);
        let blocks = p.evaluate(&x);
        let r = TransferMatrix::new_unchecked(rearrange(&choi).unwrap()).unwrap();
        let fid = match formulation {
            Formulation::Standard => (r.matrix() * e.transfer().matrix()).hermitian_part(),
            Formulation::Alternative => {
                let mut acc = ComplexMatrix::zeros(4, 4);
                let id = ComplexMatrix::identity(n);
                for k in e.ops() {
                    let left = id.kron(&k.transpose());
                    let right = id.kron(&k.conj());
                    acc = &acc + &(&(&left * &choi) * &right);
                }
                acc
            }
        };
        let want = &(&fid + &ComplexMatrix::identity(4).scale_real(eps - 1.0)) - &s.scale_real(tau);
        assert!((&blocks[0] - realify(&want)).amax() < 1e-12);
        assert!((&blocks[1] - realify(&choi)).amax() < 1e-12);
        assert_abs_diff_eq!(blocks[2][(0, 0)], tau - TAU_FLOOR, epsilon = 1e-15);
        let alt = alternative_fidelity_matrix(&e.transfer(), &choi);
        if formulation == Formulation::Alternative {
            assert!(alt.max_abs_diff(&fid) < 1e-12);
        }
        // Equalities encode the partial trace.
        let eq = p.equalities().unwrap();
        let lhs = &eq.matrix * RealVector::from_vec(x.clone());
        let pt = ChoiMatrix::new_unchecked(choi.clone()).unwrap().partial_trace();
        let mut k = 0;
        for a in 0..n {
            for b in a..n {
                if a == b {
                    assert_abs_diff_eq!(lhs[k], pt[(a, a)].re, epsilon = 1e-12);
                    k += 1;
                } else {
                    assert_abs_diff_eq!(lhs[k], pt[(a, b)].re, epsilon = 1e-12);
                    assert_abs_diff_eq!(lhs[k + 1], pt[(a, b)].im, epsilon = 1e-12);
                    k += 2;
                }
            }
        }
    }

    #[test]
    fn standard_blocks_match_dense_oracle() {
        check_blocks(Formulation::Standard);
    }

    #[test]
    fn alternative_blocks_match_dense_oracle() {
        check_blocks(Formulation::Alternative);
    }

    #[test]
    fn rejects_bad_multiplier() {
        let e = bit_flip_channel(0.9, 1).unwrap();
        let c = CodeSpace::full_space(2).unwrap();
        assert!(assemble_standard(&e.transfer(), &c, &ComplexMatrix::identity(4)).is_err());
        assert!(assemble_standard(&e.transfer(), &c, &ComplexMatrix::zeros(3, 3)).is_err());
        let c2 = CodeSpace::repetition(2).unwrap();
        assert!(assemble_standard(&e.transfer(), &c2, &s_matrix(&c2)).is_err());
    }

    #[test]
    fn identity_channel_needs_no_correction() {
        let c = CodeSpace::repetition(1).unwrap();
        let r = synthesize(&KrausChannel::identity(2), &c, Formulation::Standard, &SynthesisOptions::default()).unwrap();
        assert_eq!(r.solver.status, SolveStatus::Optimal);
        assert!(r.epsilon.abs() < 1e-6, "{}", r.epsilon);
        assert!(r.residuals.tp < 1e-6);
        assert!(r.residuals.cp > -1e-6);
        assert!(r.residuals.lmi > -1e-6);
    }

    #[test]
    fn alternative_form_on_identity_channel() {
        // With no noise the fidelity block is C itself. On the full qubit
        // space S = 0, so C ⪰ (1-ε) I with Tr C = 2 over a 4-dim space
        // forces ε ≥ 1/2, attained by C = I/2.
        let c = CodeSpace::repetition(1).unwrap();
        let r =
            synthesize(&KrausChannel::identity(2), &c, Formulation::Alternative, &SynthesisOptions::default()).unwrap();
        assert_eq!(r.solver.status, SolveStatus::Optimal);
        assert_abs_diff_eq!(r.epsilon, 0.5, epsilon = 1e-6);
        assert!(r.residuals.lmi > -1e-6);
    }

    #[test]
    fn identity_recovery_certifies_identity_channel() {
        let c = CodeSpace::repetition(2).unwrap();
        let cert =
            certify_recovery(&TransferMatrix::identity(4), 0.0, 1.0, &s_matrix(&c), &TransferMatrix::identity(4), &c)
                .unwrap();
        assert_abs_diff_eq!(cert.compression_min, 1.0, epsilon = 1e-12);
        assert!(cert.valid);
    }

    #[test]
    fn two_qubit_bit_flip_standard() {
        let e = bit_flip_channel(0.9, 2).unwrap();
        let c = CodeSpace::repetition(2).unwrap();
        let r = synthesize(&e, &c, Formulation::Standard, &SynthesisOptions::default()).unwrap();
        assert_eq!(r.solver.status, SolveStatus::Optimal);
        assert!((r.epsilon - 0.2).abs() < 5e-3, "ε = {}", r.epsilon);
        let cert = certify(&r, &e.transfer(), &c).unwrap();
        assert!(cert.valid, "{cert:?}");
    }

    #[test]
    fn alternative_result_certifies_against_its_own_block() {
        let e = bit_flip_channel(0.9, 2).unwrap();
        let c = CodeSpace::repetition(2).unwrap();
        let r = synthesize(&e, &c, Formulation::Alternative, &SynthesisOptions::default()).unwrap();
        let cert = certify(&r, &e.transfer(), &c).unwrap();
        assert!(cert.valid, "{cert:?}");
        let standard = certify_recovery(&r.recovery, r.epsilon, r.tau, &r.multiplier, &e.transfer(), &c).unwrap();
        assert!(standard.compression_min < cert.compression_min);
    }

    #[test]
    fn epsilon_is_monotone_in_noise() {
        let c = CodeSpace::repetition(2).unwrap();
        let mut last = -1.0;
        for k in 0..=5 {
            let p = k as f64 / 10.0;
            let e = bit_flip_channel(p, 2).unwrap();
            let r = synthesize(&e, &c, Formulation::Standard, &SynthesisOptions::default()).unwrap();
            assert_eq!(r.solver.status, SolveStatus::Optimal, "p = {p}");
            assert!(r.epsilon >= last - 1e-6, "p = {p}: {} after {last}", r.epsilon);
            last = r.epsilon;
        }
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use crate::random::{random_code, random_kraus_channel};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(6))]

        #[test]
        fn bounds_are_probabilities_and_residuals_small(seed in any::<u64>(), m in 1usize..4) {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let e = random_kraus_channel(&mut r, 3, m);
            let code = random_code(&mut r, 3, 2);
            for formulation in [Formulation::Standard, Formulation::Alternative] {
                let res = synthesize(&e, &code, formulation, &SynthesisOptions::default()).unwrap();
                prop_assert!(res.solver.status != SolveStatus::Infeasible);
                prop_assert!((-1e-7..=1.0 + 1e-7).contains(&res.epsilon), "{formulation}: {}", res.epsilon);
                prop_assert!(res.residuals.tp <= 1e-8);
                prop_assert!(res.residuals.lmi >= -1e-7);
                prop_assert!(res.residuals.cp >= -1e-7);
            }
        }
    }
}
