//! Seeded random generators for property tests and randomised searches.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::channel::{DensityOperator, KrausChannel};
use crate::code::CodeSpace;
use crate::numkernel::{hermitian_eig, inner, norm, ComplexMatrix, C64};

pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn random_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(rows, cols, |_, _| complex_gaussian(rng))
}

/// Haar-ish unit vector.
pub fn random_unit_vector<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<C64> {
    loop {
        let v: Vec<C64> = (0..n).map(|_| complex_gaussian(rng)).collect();
        let nv = norm(&v);
        if nv > 1e-6 {
            return v.into_iter().map(|z| z / nv).collect();
        }
    }
}

/// Gram–Schmidt on the columns of a complex Gaussian matrix.
pub fn random_unitary<R: Rng + ?Sized>(rng: &mut R, n: usize) -> ComplexMatrix {
    ComplexMatrix::from_columns(&random_orthonormal(rng, n, n))
}

/// `k` orthonormal vectors in `C^n`.
pub fn random_orthonormal<R: Rng + ?Sized>(rng: &mut R, n: usize, k: usize) -> Vec<Vec<C64>> {
    assert!(k <= n);
    let mut basis: Vec<Vec<C64>> = Vec::with_capacity(k);
    while basis.len() < k {
        let mut v: Vec<C64> = (0..n).map(|_| complex_gaussian(rng)).collect();
        for _ in 0..2 {
            for b in &basis {
                let proj = inner(b, &v);
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= proj * y;
                }
            }
        }
        let nv = norm(&v);
        if nv > 1e-6 {
            basis.push(v.into_iter().map(|z| z / nv).collect());
        }
    }
    basis
}

/// `m` Kraus operators `G_k S^{-1/2}` with `S = Σ G_k^dag G_k`.
pub fn random_kraus_channel<R: Rng + ?Sized>(rng: &mut R, n: usize, m: usize) -> KrausChannel {
    let gs: Vec<ComplexMatrix> = (0..m).map(|_| random_matrix(rng, n, n)).collect();
    let s = gs.iter().fold(ComplexMatrix::zeros(n, n), |acc, g| &acc + &(&g.adjoint() * g));
    let eig = hermitian_eig(&s).expect("Gram matrix is Hermitian");
    let mut inv_sqrt = ComplexMatrix::zeros(n, n);
    for (k, &mu) in eig.values.iter().enumerate() {
        let v = eig.vector(k);
        inv_sqrt = &inv_sqrt + &ComplexMatrix::outer(&v, &v).scale_real(1.0 / mu.sqrt());
    }
    let ops = gs.iter().map(|g| g * &inv_sqrt).collect();
    KrausChannel::new(ops).expect("normalised by construction")
}

pub fn random_density<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DensityOperator {
    let g = random_matrix(rng, n, n);
    let rho = &g * &g.adjoint();
    let tr = rho.trace().re;
    let mut rho = rho.scale_real(1.0 / tr).hermitian_part();
    // Pin the trace exactly.
    let drift = rho.trace() - C64::new(1.0, 0.0);
    rho[(0, 0)] -= drift;
    DensityOperator::new(rho).expect("PSD with unit trace")
}

pub fn random_code<R: Rng + ?Sized>(rng: &mut R, n: usize, l: usize) -> CodeSpace {
    CodeSpace::new(n, random_orthonormal(rng, n, l)).expect("orthonormal by construction")
}
