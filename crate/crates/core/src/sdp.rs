//! Primal-dual interior-point solver for block linear matrix inequalities.
//!
//! Problems have the form
//!
//! ```text
//! minimise  cᵀx + offset
//! subject   F0_b + Σ_i x_i F_ib ⪰ 0   for every block b
//!           E x = d
//! ```
//!
//! with real symmetric blocks. Equalities are removed by
//! [`eliminate_equalities`] before the interior-point loop runs.
//!
//! Coefficient matrices are stored per *atom*; each variable is a sparse
//! combination of atoms. A freshly built problem has one atom per variable.
//! Eliminating equalities only rewrites the combination, so the Schur
//! complement can be formed over the (sparser) atoms and contracted after.

use std::collections::BTreeMap;
use std::io::Write;

use log::debug;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkernel::{
    gemm, min_norm_solution, nullspace_basis, ComplexMatrix, RealMatrix, RealVector, SpdFactor, C64, HERMITIAN_TOL,
};

/// Sparse real symmetric matrix holding its upper triangle.
///
/// An entry `(r, c, v)` with `r <= c` stands for `v` at both `(r, c)` and `(c, r)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SymSparse {
    dim: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SymSparse {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, entries: vec![] }
    }

    pub fn identity(dim: usize) -> Self {
        Self { dim, entries: (0..dim).map(|i| (i, i, 1.0)).collect() }
    }

    /// Builds from entries in any order; `(r, c)` and `(c, r)` address the
    /// same entry, duplicates are summed and exact zeros dropped.
    pub fn from_entries(dim: usize, entries: impl IntoIterator<Item = (usize, usize, f64)>) -> Self {
        let mut map: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (r, c, v) in entries {
            assert!(r < dim && c < dim, "entry ({r}, {c}) outside a {dim}x{dim} matrix");
            *map.entry((r.min(c), r.max(c))).or_insert(0.0) += v;
        }
        Self { dim, entries: map.into_iter().filter(|&(_, v)| v != 0.0).map(|((r, c), v)| (r, c, v)).collect() }
    }

    /// Upper triangle of a dense symmetric matrix.
    pub fn from_dense(m: &RealMatrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch(format!("{}x{} block", m.nrows(), m.ncols())));
        }
        let asym = (m - m.transpose()).amax();
        if asym > 1e-12 * m.amax().max(1.0) {
            return Err(Error::NotHermitian { asymmetry: asym });
        }
        let n = m.nrows();
        Ok(Self::from_entries(n, (0..n).flat_map(|c| (0..=c).map(move |r| (r, c, m[(r, c)])))))
    }

    /// Realification `[[Re H, -Im H], [Im H, Re H]]` of a Hermitian matrix of
    /// order `n` given by entries `(i, j, h)`. Entries with `i > j` are read
    /// as `conj(h)` at `(j, i)`. The imaginary part of diagonal entries is ignored.
    pub fn realify_hermitian(n: usize, entries: impl IntoIterator<Item = (usize, usize, C64)>) -> Self {
        let mut out = Vec::new();
        for (i, j, h) in entries {
            let (i, j, h) = if i <= j { (i, j, h) } else { (j, i, h.conj()) };
            if i == j {
                out.push((i, i, h.re));
                out.push((n + i, n + i, h.re));
            } else {
                out.push((i, j, h.re));
                out.push((n + i, n + j, h.re));
                out.push((i, n + j, -h.im));
                out.push((j, n + i, h.im));
            }
        }
        Self::from_entries(2 * n, out)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, e| m.max(e.2.abs()))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries.iter().map(|&(r, c, v)| if r == c { v * v } else { 2.0 * v * v }).sum::<f64>().sqrt()
    }

    pub fn to_dense(&self) -> RealMatrix {
        let mut m = RealMatrix::zeros(self.dim, self.dim);
        self.add_scaled_to(&mut m, 1.0);
        m
    }

    pub fn add_scaled_to(&self, out: &mut RealMatrix, s: f64) {
        for &(r, c, v) in &self.entries {
            out[(r, c)] += s * v;
            if r != c {
                out[(c, r)] += s * v;
            }
        }
    }

    /// `⟨self, z⟩ = tr(self z)` for symmetric `z`.
    pub fn inner(&self, z: &RealMatrix) -> f64 {
        self.entries.iter().map(|&(r, c, v)| if r == c { v * z[(r, c)] } else { 2.0 * v * z[(r, c)] }).sum()
    }

    /// `Σ w_k M_k` over matrices of equal order.
    pub fn combine<'a>(dim: usize, terms: impl IntoIterator<Item = (&'a SymSparse, f64)>) -> Self {
        Self::from_entries(
            dim,
            terms.into_iter().flat_map(|(m, w)| {
                assert_eq!(m.dim, dim);
                m.entries.iter().map(move |&(r, c, v)| (r, c, w * v))
            }),
        )
    }
}

/// `[[Re H, -Im H], [Im H, Re H]]`.
pub fn realify(h: &ComplexMatrix) -> RealMatrix {
    let (r, c) = (h.rows(), h.cols());
    RealMatrix::from_fn(2 * r, 2 * c, |i, j| {
        let z = h[(i % r, j % c)];
        match (i < r, j < c) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    })
}

fn hermitian_entries(h: &ComplexMatrix) -> Result<Vec<(usize, usize, C64)>> {
    if !h.is_square() {
        return Err(Error::DimensionMismatch(format!("{}x{} constraint matrix", h.rows(), h.cols())));
    }
    let asym = h.asymmetry();
    if asym > HERMITIAN_TOL * h.max_abs().max(1.0) {
        return Err(Error::NotHermitian { asymmetry: asym });
    }
    let n = h.rows();
    Ok((0..n).flat_map(|i| (i..n).map(move |j| (i, j))).map(|(i, j)| (i, j, h[(i, j)])).collect())
}

/// Real block for the complex constraint `h0 + Σ x_i h_i ⪰ 0`.
pub fn realify_hermitian_constraint(h0: &ComplexMatrix, hs: &[ComplexMatrix]) -> Result<LmiBlock> {
    let n = h0.rows();
    let constant = SymSparse::realify_hermitian(n, hermitian_entries(h0)?);
    let mut terms = Vec::with_capacity(hs.len());
    for h in hs {
        if h.rows() != n {
            return Err(Error::DimensionMismatch(format!("coefficient of order {} in a block of order {n}", h.rows())));
        }
        terms.push(SymSparse::realify_hermitian(n, hermitian_entries(h)?));
    }
    LmiBlock::new(2 * n, constant, terms)
}

/// One constraint `constant + Σ_a y_a terms[a] ⪰ 0` over atom weights `y`.
#[derive(Clone, Debug, PartialEq)]
pub struct LmiBlock {
    size: usize,
    constant: SymSparse,
    terms: Vec<SymSparse>,
}

impl LmiBlock {
    pub fn new(size: usize, constant: SymSparse, terms: Vec<SymSparse>) -> Result<Self> {
        if constant.dim() != size || terms.iter().any(|t| t.dim() != size) {
            return Err(Error::DimensionMismatch(format!("block of order {size} with mismatched coefficients")));
        }
        Ok(Self { size, constant, terms })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn constant(&self) -> &SymSparse {
        &self.constant
    }

    pub fn terms(&self) -> &[SymSparse] {
        &self.terms
    }
}

/// `E x = d`.
#[derive(Clone, Debug, PartialEq)]
pub struct Equalities {
    pub matrix: RealMatrix,
    pub rhs: RealVector,
}

/// Sparse columns: variable `i` is `Σ (atom, weight)` over `columns[i]`.
type AtomMap = Vec<Vec<(usize, f64)>>;

#[derive(Clone, Debug)]
pub struct SdpProblem {
    objective: Vec<f64>,
    offset: f64,
    blocks: Vec<LmiBlock>,
    atoms: Option<AtomMap>,
    equalities: Option<Equalities>,
}

impl SdpProblem {
    /// A problem whose `i`-th variable multiplies `terms[i]` of every block.
    pub fn new(objective: Vec<f64>, blocks: Vec<LmiBlock>) -> Result<Self> {
        for (b, block) in blocks.iter().enumerate() {
            if block.terms.len() != objective.len() {
                return Err(Error::DimensionMismatch(format!(
                    "block {b} has {} coefficient matrices for {} variables",
                    block.terms.len(),
                    objective.len()
                )));
            }
        }
        Ok(Self { objective, offset: 0.0, blocks, atoms: None, equalities: None })
    }

    pub fn with_equalities(mut self, eq: Equalities) -> Result<Self> {
        if eq.matrix.ncols() != self.num_vars() || eq.matrix.nrows() != eq.rhs.len() {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} equality matrix with {} right-hand sides for {} variables",
                eq.matrix.nrows(),
                eq.matrix.ncols(),
                eq.rhs.len(),
                self.num_vars()
            )));
        }
        self.equalities = if eq.matrix.nrows() == 0 { None } else { Some(eq) };
        Ok(self)
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_atoms(&self) -> usize {
        self.blocks.first().map_or(self.num_vars(), |b| b.terms.len())
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    /// Constant added to `cᵀx`.
    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn blocks(&self) -> &[LmiBlock] {
        &self.blocks
    }

    pub fn equalities(&self) -> Option<&Equalities> {
        self.equalities.as_ref()
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.size).collect()
    }

    /// `F_bi` with any atom combination expanded.
    pub fn coefficient(&self, block: usize, var: usize) -> SymSparse {
        let b = &self.blocks[block];
        match &self.atoms {
            None => b.terms[var].clone(),
            Some(map) => SymSparse::combine(b.size, map[var].iter().map(|&(a, w)| (&b.terms[a], w))),
        }
    }

    fn atom_weights(&self, x: &[f64]) -> Vec<f64> {
        match &self.atoms {
            None => x.to_vec(),
            Some(map) => {
                let mut y = vec![0.0; self.num_atoms()];
                for (col, &xi) in map.iter().zip(x) {
                    for &(a, w) in col {
                        y[a] += w * xi;
                    }
                }
                y
            }
        }
    }

    fn contract_atoms(&self, g: &[f64]) -> Vec<f64> {
        match &self.atoms {
            None => g.to_vec(),
            Some(map) => map.iter().map(|col| col.iter().map(|&(a, w)| w * g[a]).sum()).collect(),
        }
    }

    /// Dense `F0_b + Σ x_i F_bi` for every block.
    pub fn evaluate(&self, x: &[f64]) -> Vec<RealMatrix> {
        assert_eq!(x.len(), self.num_vars());
        let y = self.atom_weights(x);
        self.blocks
            .iter()
            .map(|b| {
                let mut m = b.constant.to_dense();
                for (t, &w) in b.terms.iter().zip(&y) {
                    if w != 0.0 {
                        t.add_scaled_to(&mut m, w);
                    }
                }
                m
            })
            .collect()
    }

    /// Smallest eigenvalue of each block at `x`.
    pub fn block_min_eigenvalues(&self, x: &[f64]) -> Vec<f64> {
        self.evaluate(x).iter().map(crate::numkernel::min_symmetric_eigenvalue).collect()
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.offset + self.objective.iter().zip(x).map(|(c, x)| c * x).sum::<f64>()
    }

    /// Writes the problem in SDPA sparse format. SDPA reads
    /// `min cᵀx s.t. Σ x_i F_i - F_0 ⪰ 0`, so the constant is negated; the
    /// objective offset goes into a comment line.
    pub fn write_sdpa<W: Write>(&self, out: &mut W) -> Result<()> {
        if self.equalities.is_some() {
            return Err(Error::InvalidArgument("SDPA export needs a problem without equality constraints".into()));
        }
        writeln!(out, "\"objective offset {:.17e}", self.offset)?;
        writeln!(out, "{}", self.num_vars())?;
        writeln!(out, "{}", self.blocks.len())?;
        let sizes: Vec<String> = self.blocks.iter().map(|b| b.size.to_string()).collect();
        writeln!(out, "{}", sizes.join(" "))?;
        let costs: Vec<String> = self.objective.iter().map(|c| format!("{c:.17e}")).collect();
        writeln!(out, "{}", costs.join(" "))?;
        for (b, block) in self.blocks.iter().enumerate() {
            for &(r, c, v) in block.constant.entries() {
                writeln!(out, "0 {} {} {} {:.17e}", b + 1, r + 1, c + 1, -v)?;
            }
        }
        for i in 0..self.num_vars() {
            for b in 0..self.blocks.len() {
                for &(r, c, v) in self.coefficient(b, i).entries() {
                    writeln!(out, "{} {} {} {} {:.17e}", i + 1, b + 1, r + 1, c + 1, v)?;
                }
            }
        }
        Ok(())
    }
}

/// `x = x0 + N z` with sparse columns `N`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineLift {
    x0: Vec<f64>,
    columns: Vec<Vec<(usize, f64)>>,
}

impl AffineLift {
    pub fn identity(n: usize) -> Self {
        Self { x0: vec![0.0; n], columns: (0..n).map(|i| vec![(i, 1.0)]).collect() }
    }

    pub fn full_dim(&self) -> usize {
        self.x0.len()
    }

    pub fn reduced_dim(&self) -> usize {
        self.columns.len()
    }

    pub fn base_point(&self) -> &[f64] {
        &self.x0
    }

    /// Column `k` of `N` as a dense vector.
    pub fn direction(&self, k: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.full_dim()];
        for &(i, w) in &self.columns[k] {
            v[i] = w;
        }
        v
    }

    pub fn lift(&self, z: &[f64]) -> Vec<f64> {
        assert_eq!(z.len(), self.reduced_dim());
        let mut x = self.x0.clone();
        for (col, &zk) in self.columns.iter().zip(z) {
            for &(i, w) in col {
                x[i] += w * zk;
            }
        }
        x
    }
}

/// Disjoint-set forest over variable indices.
struct Components {
    parent: Vec<usize>,
}

impl Components {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Removes `E x = d` by substituting `x = x0 + N z`.
///
/// Variables that share an equality row are grouped; each group gets its own
/// minimum-norm particular solution and orthonormal nullspace basis, so `N`
/// stays sparse and orthonormal. Variables in no row map to unit columns.
pub fn eliminate_equalities(p: &SdpProblem) -> Result<(SdpProblem, AffineLift)> {
    let n = p.num_vars();
    let Some(eq) = &p.equalities else {
        return Ok((p.clone(), AffineLift::identity(n)));
    };
    let e = &eq.matrix;
    let mut comps = Components::new(n);
    let mut row_vars: Vec<Vec<usize>> = Vec::with_capacity(e.nrows());
    for r in 0..e.nrows() {
        let vars: Vec<usize> = (0..n).filter(|&i| e[(r, i)] != 0.0).collect();
        for w in vars.windows(2) {
            comps.union(w[0], w[1]);
        }
        row_vars.push(vars);
    }
    let mut rows_of: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (r, vars) in row_vars.iter().enumerate() {
        match vars.first() {
            Some(&v) => rows_of.entry(comps.find(v)).or_default().push(r),
            None => {
                if eq.rhs[r].abs() > 1e-8 {
                    return Err(Error::InconsistentEqualities { residual: eq.rhs[r].abs() });
                }
            }
        }
    }
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let root = comps.find(i);
        if rows_of.contains_key(&root) {
            members.entry(root).or_default().push(i);
        }
    }

    let mut x0 = vec![0.0; n];
    let mut columns: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    for i in 0..n {
        let root = comps.find(i);
        let Some(rows) = rows_of.get(&root) else {
            columns.push(vec![(i, 1.0)]);
            continue;
        };
        let vars = &members[&root];
        if vars[0] != i {
            continue;
        }
        let sub = RealMatrix::from_fn(rows.len(), vars.len(), |r, c| e[(rows[r], vars[c])]);
        let rhs = RealVector::from_iterator(rows.len(), rows.iter().map(|&r| eq.rhs[r]));
        let (xs, residual) = min_norm_solution(&sub, &rhs);
        if residual > 1e-8 {
            return Err(Error::InconsistentEqualities { residual });
        }
        for (k, &v) in vars.iter().enumerate() {
            x0[v] = xs[k];
        }
        let null = nullspace_basis(&sub);
        for c in 0..null.ncols() {
            columns.push(vars.iter().enumerate().map(|(k, &v)| (v, null[(k, c)])).filter(|e| e.1 != 0.0).collect());
        }
    }

    let y0 = p.atom_weights(&x0);
    let blocks = p
        .blocks
        .iter()
        .map(|b| {
            let shifted = SymSparse::combine(
                b.size,
                std::iter::once((&b.constant, 1.0))
                    .chain(b.terms.iter().zip(&y0).filter(|(_, &w)| w != 0.0).map(|(t, &w)| (t, w))),
            );
            LmiBlock { size: b.size, constant: shifted, terms: b.terms.clone() }
        })
        .collect();
    let atoms: AtomMap = columns
        .iter()
        .map(|col| match &p.atoms {
            None => col.clone(),
            Some(map) => {
                let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
                for &(i, w) in col {
                    for &(a, v) in &map[i] {
                        *acc.entry(a).or_insert(0.0) += w * v;
                    }
                }
                acc.into_iter().filter(|e| e.1 != 0.0).collect()
            }
        })
        .collect();
    let objective = columns.iter().map(|col| col.iter().map(|&(i, w)| w * p.objective[i]).sum()).collect();
    let offset = p.objective_value(&x0);
    let reduced = SdpProblem { objective, offset, blocks, atoms: Some(atoms), equalities: None };
    Ok((reduced, AffineLift { x0, columns }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverOptions {
    /// Relative duality-gap target, scaled by `1 + |objective|`.
    pub gap_tol: f64,
    /// Relative primal residual target.
    pub feas_tol: f64,
    /// Relative dual residual target.
    pub dual_feas_tol: f64,
    pub max_iter: usize,
    /// Fraction of the distance to the cone boundary taken per step.
    pub step_fraction: f64,
    /// Iterates larger than this are taken as evidence of infeasibility.
    pub divergence: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { gap_tol: 1e-7, feas_tol: 1e-8, dual_feas_tol: 1e-7, max_iter: 200, step_fraction: 0.98, divergence: 1e10 }
    }
}

#[derive(Clone, Debug)]
pub struct SdpSolution {
    pub x: Vec<f64>,
    pub objective_value: f64,
    pub dual_objective: f64,
    /// Primal minus dual objective at the returned iterate.
    pub duality_gap: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    /// `⟨S, Z⟩` after each iteration, starting with the initial point.
    pub complementarity: Vec<f64>,
}

/// Minimises the problem, eliminating equalities first when present.
pub fn solve_sdp(p: &SdpProblem, opts: &SolverOptions) -> Result<SdpSolution> {
    if p.equalities.is_some() {
        let (reduced, lift) = eliminate_equalities(p)?;
        let mut sol = interior_point(&reduced, opts)?;
        sol.x = lift.lift(&sol.x);
        return Ok(sol);
    }
    interior_point(p, opts)
}

/// Atom coefficients of one block laid out for the inner loops.
struct PackedBlock {
    n: usize,
    /// Entry range of each atom.
    start: Vec<usize>,
    /// Column-major position `r + c n` of the upper-triangle entry.
    pos: Vec<usize>,
    value: Vec<f64>,
    /// `value`, doubled off the diagonal, so `⟨A, Z⟩ = Σ weight z[pos]`.
    weight: Vec<f64>,
    /// Row and column within the atom's support.
    local: Vec<(usize, usize)>,
    support_start: Vec<usize>,
    support: Vec<usize>,
    active: Vec<usize>,
    constant: RealMatrix,
}

impl PackedBlock {
    fn new(b: &LmiBlock) -> Self {
        let n = b.size;
        let mut pb = PackedBlock {
            n,
            start: vec![0],
            pos: vec![],
            value: vec![],
            weight: vec![],
            local: vec![],
            support_start: vec![0],
            support: vec![],
            active: vec![],
            constant: b.constant.to_dense(),
        };
        for (a, t) in b.terms.iter().enumerate() {
            let mut sup: Vec<usize> = t.entries().iter().flat_map(|&(r, c, _)| [r, c]).collect();
            sup.sort_unstable();
            sup.dedup();
            for &(r, c, v) in t.entries() {
                pb.pos.push(r + c * n);
                pb.value.push(v);
                pb.weight.push(if r == c { v } else { 2.0 * v });
                let lr = sup.binary_search(&r).expect("support covers entries");
                let lc = sup.binary_search(&c).expect("support covers entries");
                pb.local.push((lr, lc));
            }
            if t.nnz() > 0 {
                pb.active.push(a);
            }
            pb.start.push(pb.pos.len());
            pb.support.extend_from_slice(&sup);
            pb.support_start.push(pb.support.len());
        }
        pb
    }

    fn range(&self, a: usize) -> std::ops::Range<usize> {
        self.start[a]..self.start[a + 1]
    }

    /// `Σ y_a A_a` added to `out`.
    fn apply(&self, y: &[f64], out: &mut RealMatrix) {
        let n = self.n;
        let data = out.as_mut_slice();
        for &a in &self.active {
            let w = y[a];
            if w == 0.0 {
                continue;
            }
            for k in self.range(a) {
                let p = self.pos[k];
                let (r, c) = (p % n, p / n);
                data[p] += w * self.value[k];
                if r != c {
                    data[c + r * n] += w * self.value[k];
                }
            }
        }
    }

    /// `⟨A_a, z⟩` added into `out[a]`.
    fn adjoint(&self, z: &RealMatrix, out: &mut [f64]) {
        let zs = z.as_slice();
        for &a in &self.active {
            out[a] += self.range(a).map(|k| self.weight[k] * zs[self.pos[k]]).sum::<f64>();
        }
    }

    /// `g = w A_a w` for symmetric `w`.
    fn sandwich(&self, a: usize, w: &RealMatrix, g: &mut RealMatrix) {
        let n = self.n;
        let sup = &self.support[self.support_start[a]..self.support_start[a + 1]];
        let r = sup.len();
        let mut t = RealMatrix::zeros(r, r);
        for k in self.range(a) {
            let (lr, lc) = self.local[k];
            t[(lr, lc)] += self.value[k];
            if lr != lc {
                t[(lc, lr)] += self.value[k];
            }
        }
        // w[sup, :]
        let pt = RealMatrix::from_fn(r, n, |i, j| w[(sup[i], j)]);
        let mut qt = RealMatrix::zeros(r, n);
        gemm(1.0, &t, false, &pt, false, 0.0, &mut qt);
        gemm(1.0, &pt, true, &qt, false, 0.0, g);
    }
}

/// Nesterov–Todd scaling `G` with `G⁻¹ S G⁻ᵀ = Gᵀ Z G = diag(λ)`.
struct NtScaling {
    g: RealMatrix,
    g_inv: RealMatrix,
    /// `W⁻¹ = G⁻ᵀ G⁻¹`, mapping `S` to `Z`.
    w_inv: RealMatrix,
    lambda: Vec<f64>,
    ls_inv: RealMatrix,
    lz_inv: RealMatrix,
}

fn lower_cholesky(m: &RealMatrix) -> Option<RealMatrix> {
    let sym = (m + m.transpose()) * 0.5;
    nalgebra::Cholesky::new(sym).map(|c| c.unpack())
}

fn lower_inverse(l: &RealMatrix) -> RealMatrix {
    let n = l.nrows();
    l.solve_lower_triangular(&RealMatrix::identity(n, n)).expect("nonsingular Cholesky factor")
}

fn nt_scaling(s: &RealMatrix, z: &RealMatrix) -> Option<NtScaling> {
    let ls = lower_cholesky(s)?;
    let lz = lower_cholesky(z)?;
    let mut prod = RealMatrix::zeros(ls.nrows(), ls.ncols());
    gemm(1.0, &lz, true, &ls, false, 0.0, &mut prod);
    let svd = prod.svd(false, true);
    let v_t = svd.v_t?;
    let d: Vec<f64> = svd.singular_values.iter().copied().collect();
    if d.iter().any(|&x| !(x > 0.0)) {
        return None;
    }
    let ls_inv = lower_inverse(&ls);
    let lz_inv = lower_inverse(&lz);
    let n = s.nrows();
    // G = L_S V D^{-1/2},  G⁻¹ = D^{1/2} Vᵀ L_S⁻¹
    let mut g = RealMatrix::zeros(n, n);
    gemm(1.0, &ls, false, &v_t, true, 0.0, &mut g);
    let mut g_inv = RealMatrix::zeros(n, n);
    gemm(1.0, &v_t, false, &ls_inv, false, 0.0, &mut g_inv);
    for k in 0..n {
        let sq = d[k].sqrt();
        g.column_mut(k).scale_mut(1.0 / sq);
        g_inv.row_mut(k).scale_mut(sq);
    }
    let mut w_inv = RealMatrix::zeros(n, n);
    gemm(1.0, &g_inv, true, &g_inv, false, 0.0, &mut w_inv);
    symmetrize(&mut w_inv);
    Some(NtScaling { g, g_inv, w_inv, lambda: d, ls_inv, lz_inv })
}

fn symmetrize(m: &mut RealMatrix) {
    let n = m.nrows();
    for j in 0..n {
        for i in j + 1..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// `a m aᵀ` (or `aᵀ m a` when `transpose`).
fn congruence(a: &RealMatrix, m: &RealMatrix, transpose: bool) -> RealMatrix {
    let n = if transpose { a.ncols() } else { a.nrows() };
    let mut tmp = RealMatrix::zeros(n, m.ncols());
    gemm(1.0, a, transpose, m, false, 0.0, &mut tmp);
    let mut out = RealMatrix::zeros(n, n);
    gemm(1.0, &tmp, false, a, !transpose, 0.0, &mut out);
    symmetrize(&mut out);
    out
}

/// Largest `α` with `L Lᵀ + α d ⪰ 0`, given `L⁻¹`.
fn max_step(l_inv: &RealMatrix, d: &RealMatrix) -> f64 {
    let t = congruence(l_inv, d, false);
    let min = crate::numkernel::min_symmetric_eigenvalue(&t);
    if min >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / min
    }
}

fn frob_inner(a: &RealMatrix, b: &RealMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

struct Solver<'a> {
    p: &'a SdpProblem,
    packed: Vec<PackedBlock>,
    opts: &'a SolverOptions,
}

impl Solver<'_> {
    fn primal_map(&self, x: &[f64]) -> Vec<RealMatrix> {
        let y = self.p.atom_weights(x);
        self.packed
            .iter()
            .map(|b| {
                let mut m = RealMatrix::zeros(b.n, b.n);
                b.apply(&y, &mut m);
                m
            })
            .collect()
    }

    fn dual_map(&self, z: &[RealMatrix]) -> Vec<f64> {
        let mut g = vec![0.0; self.p.num_atoms()];
        for (b, zb) in self.packed.iter().zip(z) {
            b.adjoint(zb, &mut g);
        }
        self.p.contract_atoms(&g)
    }

    /// `M_ij = Σ_b ⟨F_bi, W_b⁻¹ F_bj W_b⁻¹⟩`.
    /// `M_ij = Σ_b ⟨F_i, W_b F_j W_b⟩` for the given per-block weights.
    fn schur(&self, weights: &[&RealMatrix]) -> RealMatrix {
        let na = self.p.num_atoms();
        let mut m = RealMatrix::zeros(na, na);
        for (b, w) in self.packed.iter().zip(weights) {
            let mut g = RealMatrix::zeros(b.n, b.n);
            for (jj, &j) in b.active.iter().enumerate() {
                b.sandwich(j, w, &mut g);
                let gs = g.as_slice();
                let col = &mut m.as_mut_slice()[j * na..(j + 1) * na];
                for &i in &b.active[..=jj] {
                    let mut acc = 0.0;
                    for k in b.range(i) {
                        acc += b.weight[k] * gs[b.pos[k]];
                    }
                    col[i] += acc;
                }
            }
        }
        for j in 0..na {
            for i in j + 1..na {
                m[(i, j)] = m[(j, i)];
            }
        }
        let Some(map) = &self.p.atoms else { return m };
        let nv = self.p.num_vars();
        // (M V) then Vᵀ (M V)
        let mut mv = RealMatrix::zeros(na, nv);
        for (v, col) in map.iter().enumerate() {
            let mut dst = mv.column_mut(v);
            for &(a, w) in col {
                dst.axpy(w, &m.column(a), 1.0);
            }
        }
        drop(m);
        let mut out = RealMatrix::zeros(nv, nv);
        for j in 0..nv {
            let src = mv.column(j);
            for (i, col) in map.iter().enumerate().skip(j) {
                let v: f64 = col.iter().map(|&(a, w)| w * src[a]).sum();
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        out
    }

    fn solve(&self) -> Result<SdpSolution> {
        let p = self.p;
        let opts = self.opts;
        let m = p.num_vars();
        let nb = self.packed.len();
        let total: usize = self.packed.iter().map(|b| b.n).sum();
        let c = RealVector::from_column_slice(&p.objective);
        let f0_norm = self.packed.iter().map(|b| b.constant.norm_squared()).sum::<f64>().sqrt();
        let c_norm = c.norm();
        let max_coef = p
            .blocks
            .iter()
            .flat_map(|b| b.terms.iter().map(|t| t.frobenius_norm()))
            .fold(0.0_f64, f64::max);

        let xi_s = 10.0_f64.max((total as f64).sqrt()).max(f0_norm);
        let xi_z = 10.0_f64.max((total as f64).sqrt()).max((1.0 + c_norm) / (1.0 + max_coef) * (total as f64).sqrt());
        let mut x = vec![0.0; m];
        let mut s: Vec<RealMatrix> = self.packed.iter().map(|b| RealMatrix::identity(b.n, b.n) * xi_s).collect();
        let mut z: Vec<RealMatrix> = self.packed.iter().map(|b| RealMatrix::identity(b.n, b.n) * xi_z).collect();
        let mut history = Vec::new();
        let mut status = SolveStatus::MaxIter;
        // (merit, x, z) of the iterate closest to meeting every tolerance.
        let mut best: Option<(f64, Vec<f64>, Vec<RealMatrix>)> = None;
        let mut iterations = 0;

        loop {
            let ax = self.primal_map(&x);
            let rp: Vec<RealMatrix> =
                (0..nb).map(|b| &self.packed[b].constant + &ax[b] - &s[b]).collect();
            let rd = &c - RealVector::from_vec(self.dual_map(&z));
            let comp: f64 = (0..nb).map(|b| frob_inner(&s[b], &z[b])).sum();
            history.push(comp);
            let pobj = p.objective_value(&x);
            let dobj = p.offset - (0..nb).map(|b| frob_inner(&self.packed[b].constant, &z[b])).sum::<f64>();
            let pinf = rp.iter().map(|r| r.norm_squared()).sum::<f64>().sqrt() / (1.0 + f0_norm);
            let dinf = rd.norm() / (1.0 + c_norm);
            let scale = 1.0 + pobj.abs();
            debug!(
                "iter {iterations:3}  pobj {pobj:+.9e}  dobj {dobj:+.9e}  gap {comp:.2e}  pinf {pinf:.2e}  dinf {dinf:.2e}"
            );
            let merit = (pinf / opts.feas_tol)
                .max(dinf / opts.dual_feas_tol)
                .max(comp / (opts.gap_tol * scale))
                .max((pobj - dobj).abs() / (opts.gap_tol * scale));
            if merit <= 1.0 {
                status = SolveStatus::Optimal;
                break;
            }
            if best.as_ref().is_none_or(|b| merit < b.0) {
                best = Some((merit, x.clone(), z.clone()));
            }
            let xmax = x.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            let zmax = z.iter().fold(0.0_f64, |a, zb| a.max(zb.amax()));
            if xmax > opts.divergence || zmax > opts.divergence {
                status = SolveStatus::Infeasible;
                break;
            }
            if iterations >= opts.max_iter {
                break;
            }
            let Some(nt) = s.iter().zip(&z).map(|(sb, zb)| nt_scaling(sb, zb)).collect::<Option<Vec<_>>>() else {
                log::warn!("lost positive definiteness at iteration {iterations}; returning current iterate");
                break;
            };
            let schur = self.schur(&nt.iter().map(|sc| &sc.w_inv).collect::<Vec<_>>());
            let factor = match factor_with_regularization(&schur) {
                Some(f) => f,
                None => {
                    log::warn!("Schur complement factorization failed at iteration {iterations}");
                    break;
                }
            };
            let mu = comp / total as f64;

            let direction = |rc: &[RealMatrix]| -> (Vec<f64>, Vec<RealMatrix>, Vec<RealMatrix>) {
                let inner: Vec<RealMatrix> =
                    (0..nb).map(|b| congruence(&nt[b].w_inv, &(&rc[b] - &rp[b]), false)).collect();
                let rhs = RealVector::from_vec(self.dual_map(&inner)) - &rd;
                let dx = solve_schur(&factor, &rhs, |v| {
                    let av = self.primal_map(v.as_slice());
                    let scaled: Vec<RealMatrix> = (0..nb).map(|b| congruence(&nt[b].w_inv, &av[b], false)).collect();
                    RealVector::from_vec(self.dual_map(&scaled))
                });
                let dx: Vec<f64> = dx.iter().copied().collect();
                let adx = self.primal_map(&dx);
                let ds: Vec<RealMatrix> = (0..nb).map(|b| &adx[b] + &rp[b]).collect();
                let dz: Vec<RealMatrix> =
                    (0..nb).map(|b| congruence(&nt[b].w_inv, &(&rc[b] - &ds[b]), false)).collect();
                (dx, ds, dz)
            };
            let steps = |ds: &[RealMatrix], dz: &[RealMatrix]| -> (f64, f64) {
                let ap = (0..nb).map(|b| max_step(&nt[b].ls_inv, &ds[b])).fold(f64::INFINITY, f64::min);
                let ad = (0..nb).map(|b| max_step(&nt[b].lz_inv, &dz[b])).fold(f64::INFINITY, f64::min);
                ((opts.step_fraction * ap).min(1.0), (opts.step_fraction * ad).min(1.0))
            };

            // Predictor.
            let rc_aff: Vec<RealMatrix> = s.iter().map(|sb| -sb).collect();
            let (_, ds_a, dz_a) = direction(&rc_aff);
            let (ap, ad) = steps(&ds_a, &dz_a);
            let comp_aff: f64 =
                (0..nb).map(|b| frob_inner(&(&s[b] + &ds_a[b] * ap), &(&z[b] + &dz_a[b] * ad))).sum();
            let sigma = (comp_aff / comp).clamp(0.0, 1.0).powi(3);

            // Corrector in the scaled space.
            let rc: Vec<RealMatrix> = (0..nb)
                .map(|b| {
                    let sc = &nt[b];
                    let n = sc.lambda.len();
                    let ds_t = congruence(&sc.g_inv, &ds_a[b], false);
                    let dz_t = congruence(&sc.g, &dz_a[b], true);
                    let mut cross = RealMatrix::zeros(n, n);
                    gemm(1.0, &ds_t, false, &dz_t, false, 0.0, &mut cross);
                    let mut t = RealMatrix::zeros(n, n);
                    for j in 0..n {
                        for i in 0..n {
                            let mut r = -(cross[(i, j)] + cross[(j, i)]);
                            if i == j {
                                r += 2.0 * sigma * mu - 2.0 * sc.lambda[i] * sc.lambda[i];
                            }
                            t[(i, j)] = r / (sc.lambda[i] + sc.lambda[j]);
                        }
                    }
                    congruence(&sc.g, &t, false)
                })
                .collect();
            let (dx, ds, dz) = direction(&rc);
            let (ap, ad) = steps(&ds, &dz);
            for (xi, d) in x.iter_mut().zip(&dx) {
                *xi += ap * d;
            }
            for b in 0..nb {
                s[b] += &ds[b] * ap;
                z[b] += &dz[b] * ad;
                symmetrize(&mut s[b]);
                symmetrize(&mut z[b]);
            }
            iterations += 1;
        }
        if status == SolveStatus::MaxIter {
            if let Some((merit, bx, bz)) = best {
                debug!("returning best iterate, merit {merit:.2e}");
                x = bx;
                z = bz;
            }
        }

        let objective_value = p.objective_value(&x);
        let dual_objective =
            p.offset - (0..nb).map(|b| frob_inner(&self.packed[b].constant, &z[b])).sum::<f64>();
        Ok(SdpSolution {
            x,
            objective_value,
            dual_objective,
            duality_gap: objective_value - dual_objective,
            status,
            iterations,
            complementarity: history,
        })
    }
}

/// Conjugate-gradient steps spent polishing each Schur solve.
const SCHUR_CG_STEPS: usize = 25;

/// Cholesky of the Schur complement, adding a growing diagonal shift on failure.
fn factor_with_regularization(m: &RealMatrix) -> Option<SpdFactor> {
    if let Ok(f) = SpdFactor::new(m) {
        return Some(f);
    }
    let dmax = m.diagonal().amax().max(1e-300);
    let mut shift = 1e-14 * dmax;
    let mut shifted = m.clone();
    for _ in 0..12 {
        for i in 0..m.nrows() {
            shifted[(i, i)] = m[(i, i)] + shift;
        }
        if let Ok(f) = SpdFactor::new(&shifted) {
            log::trace!("Schur complement regularized by {shift:.2e}");
            return Some(f);
        }
        shift *= 10.0;
    }
    None
}

/// Solves the Schur system by conjugate gradients on the exact operator
/// `apply`, preconditioned with a possibly regularized factor. Returns the
/// iterate with the smallest residual seen.
fn solve_schur(factor: &SpdFactor, b: &RealVector, apply: impl Fn(&RealVector) -> RealVector) -> RealVector {
    let bnorm = b.norm();
    let mut x = factor.solve_once(b);
    let mut r = b - apply(&x);
    let mut best = (r.norm(), x.clone());
    let mut z = factor.solve_once(&r);
    let mut d = z.clone();
    let mut rz = r.dot(&z);
    for _ in 0..SCHUR_CG_STEPS {
        if best.0 <= 1e-14 * bnorm || rz <= 0.0 {
            break;
        }
        let ad = apply(&d);
        let dad = d.dot(&ad);
        if dad <= 0.0 {
            break;
        }
        let alpha = rz / dad;
        x.axpy(alpha, &d, 1.0);
        r.axpy(-alpha, &ad, 1.0);
        let rnorm = r.norm();
        if rnorm < best.0 {
            best = (rnorm, x.clone());
        }
        z = factor.solve_once(&r);
        let rz_next = r.dot(&z);
        d = &z + &d * (rz_next / rz);
        rz = rz_next;
    }
    best.1
}

fn interior_point(p: &SdpProblem, opts: &SolverOptions) -> Result<SdpSolution> {
    if p.blocks.is_empty() {
        return Err(Error::InvalidArgument("problem has no matrix inequalities".into()));
    }
    let packed = p.blocks.iter().map(PackedBlock::new).collect();
    Solver { p, packed, opts }.solve()
}


#[cfg(test)]
mod props {
    use super::*;
    use crate::numkernel::symmetric_eigenvalues;
    use crate::random::random_matrix;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// `min w t  s.t.  t I - a ⪰ 0`
    fn lambda_max_problem(a: &RealMatrix, weight: f64) -> SdpProblem {
        let n = a.nrows();
        let block = LmiBlock::new(n, SymSparse::from_dense(&-a).unwrap(), vec![SymSparse::identity(n)]).unwrap();
        SdpProblem::new(vec![weight], vec![block]).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]

        #[test]
        fn matches_top_eigenvalue(seed in any::<u64>(), n in 2usize..11) {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let g = random_matrix(&mut r, n, n);
            let a = RealMatrix::from_fn(n, n, |i, j| g[(i, j)].re + g[(j, i)].re);
            let top = symmetric_eigenvalues(&a).into_iter().fold(f64::NEG_INFINITY, f64::max);
            let problem = lambda_max_problem(&a, 1.0);
            let sol = solve_sdp(&problem, &SolverOptions::default()).unwrap();
            prop_assert_eq!(sol.status, SolveStatus::Optimal);
            prop_assert!((sol.objective_value - top).abs() <= 1e-6);
            prop_assert!(sol.complementarity.iter().all(|&c| c >= 0.0));
            for lam in problem.block_min_eigenvalues(&sol.x) {
                prop_assert!(lam >= -1e-7);
            }

            let scaled = solve_sdp(&lambda_max_problem(&a, 10.0), &SolverOptions::default()).unwrap();
            prop_assert!((scaled.x[0] - sol.x[0]).abs() <= 1e-5);
        }
    }
}
