//! Finite-dimensional C*-algebras `⊕_i M_{n_i}`, their concrete
//! representations, commutants and structure decomposition.
//!
//! At finite dimension every C*-algebra is a von Neumann algebra and its
//! enveloping algebra is itself, so no separate enveloping construction exists
//! here.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::numerics::{
    c64, frob, herm_basis, herm_eig, hermitian_part, kron, matrix_unit, null_space, zeros, CMatrix,
};

/// Abstract direct sum of full matrix blocks.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FdAlgebra {
    blocks: Vec<usize>,
}

impl FdAlgebra {
    pub fn new(blocks: Vec<usize>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::InvalidAlgebra("algebra needs at least one block".into()));
        }
        if blocks.contains(&0) {
            return Err(Error::InvalidAlgebra(format!("block sizes must be >= 1, got {blocks:?}")));
        }
        Ok(Self { blocks })
    }

    /// `M_n`.
    pub fn full(n: usize) -> Self {
        Self::new(vec![n]).expect("n >= 1")
    }

    /// `C^k`, i.e. `k` one-dimensional blocks.
    pub fn commutative(k: usize) -> Self {
        Self::new(vec![1; k]).expect("k >= 1")
    }

    pub fn blocks(&self) -> &[usize] {
        &self.blocks
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block(&self, i: usize) -> usize {
        self.blocks[i]
    }

    /// Complex dimension `Σ n_i²`.
    pub fn dim(&self) -> usize {
        self.blocks.iter().map(|n| n * n).sum()
    }

    pub fn is_commutative(&self) -> bool {
        self.blocks.iter().all(|&n| n == 1)
    }

    /// Single full block, i.e. a factor `M_n`.
    pub fn single_block(&self) -> Option<usize> {
        (self.blocks.len() == 1).then(|| self.blocks[0])
    }

    /// Orthonormal Hermitian basis (Hilbert–Schmidt), block by block.
    pub fn hermitian_basis(&self) -> Vec<AlgebraElement> {
        let mut out = Vec::with_capacity(self.dim());
        for (i, &n) in self.blocks.iter().enumerate() {
            for h in herm_basis(n) {
                out.push(AlgebraElement::from_block(self, i, h));
            }
        }
        out
    }

    /// Matrix units `(block, a, b)` in block-major, row-major order.
    pub fn matrix_units(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.blocks
            .iter()
            .enumerate()
            .flat_map(|(i, &n)| (0..n).flat_map(move |a| (0..n).map(move |b| (i, a, b))))
    }
}

impl fmt::Display for FdAlgebra {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.blocks.iter().map(|n| format!("M{n}")).collect();
        write!(f, "{}", parts.join("⊕"))
    }
}

/// Tensor product of two algebras; blocks are `n_i·k_j` in row-major pair order.
pub fn algebra_tensor(a: &FdAlgebra, b: &FdAlgebra) -> FdAlgebra {
    let blocks = a
        .blocks
        .iter()
        .flat_map(|&n| b.blocks.iter().map(move |&k| n * k))
        .collect();
    FdAlgebra { blocks }
}

/// An element `⊕_i x_i` of an [`FdAlgebra`].
#[derive(Debug, Clone, PartialEq)]
pub struct AlgebraElement {
    algebra: FdAlgebra,
    blocks: Vec<CMatrix>,
}

impl AlgebraElement {
    pub fn new(algebra: &FdAlgebra, blocks: Vec<CMatrix>) -> Result<Self> {
        if blocks.len() != algebra.num_blocks() {
            return Err(Error::AlgebraMismatch(format!(
                "{} blocks given for algebra {algebra}",
                blocks.len()
            )));
        }
        for (i, (b, &n)) in blocks.iter().zip(algebra.blocks()).enumerate() {
            if b.nrows() != n || b.ncols() != n {
                return Err(Error::AlgebraMismatch(format!(
                    "block {i} is {}x{}, expected {n}x{n}",
                    b.nrows(),
                    b.ncols()
                )));
            }
        }
        Ok(Self {
            algebra: algebra.clone(),
            blocks,
        })
    }

    pub fn zero(algebra: &FdAlgebra) -> Self {
        Self {
            algebra: algebra.clone(),
            blocks: algebra.blocks().iter().map(|&n| zeros(n, n)).collect(),
        }
    }

    pub fn identity(algebra: &FdAlgebra) -> Self {
        Self {
            algebra: algebra.clone(),
            blocks: algebra.blocks().iter().map(|&n| CMatrix::identity(n, n)).collect(),
        }
    }

    /// Element supported on a single block.
    pub fn from_block(algebra: &FdAlgebra, block: usize, value: CMatrix) -> Self {
        let mut x = Self::zero(algebra);
        assert_eq!(value.nrows(), algebra.block(block));
        x.blocks[block] = value;
        x
    }

    pub fn unit(algebra: &FdAlgebra, block: usize, a: usize, b: usize) -> Self {
        Self::from_block(algebra, block, matrix_unit(algebra.block(block), a, b))
    }

    pub fn random<R: rand::Rng + ?Sized>(algebra: &FdAlgebra, rng: &mut R) -> Self {
        Self {
            algebra: algebra.clone(),
            blocks: algebra
                .blocks()
                .iter()
                .map(|&n| crate::numerics::random_gaussian(n, n, rng))
                .collect(),
        }
    }

    pub fn algebra(&self) -> &FdAlgebra {
        &self.algebra
    }

    pub fn blocks(&self) -> &[CMatrix] {
        &self.blocks
    }

    pub fn block(&self, i: usize) -> &CMatrix {
        &self.blocks[i]
    }

    pub fn into_blocks(self) -> Vec<CMatrix> {
        self.blocks
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        if self.algebra != other.algebra {
            return Err(Error::AlgebraMismatch(format!(
                "{} vs {}",
                self.algebra, other.algebra
            )));
        }
        Ok(())
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        Ok(Self {
            algebra: self.algebra.clone(),
            blocks: self.blocks.iter().zip(&other.blocks).map(|(a, b)| a * b).collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        Ok(Self {
            algebra: self.algebra.clone(),
            blocks: self.blocks.iter().zip(&other.blocks).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        Ok(Self {
            algebra: self.algebra.clone(),
            blocks: self.blocks.iter().zip(&other.blocks).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            algebra: self.algebra.clone(),
            blocks: self.blocks.iter().map(|b| b.scale(s)).collect(),
        }
    }

    pub fn adjoint(&self) -> Self {
        Self {
            algebra: self.algebra.clone(),
            blocks: self.blocks.iter().map(|b| b.adjoint()).collect(),
        }
    }

    /// Frobenius norm over all blocks.
    pub fn norm(&self) -> f64 {
        self.blocks.iter().map(|b| frob(b).powi(2)).sum::<f64>().sqrt()
    }
}

/// Concrete representation `π: ⊕ M_{n_i} → M_D`, `π(x) = U (⊕ x_i ⊗ 1_{m_i}) U*`.
///
/// In the standard layout (`U = 1`) block `i` occupies a contiguous range of
/// `n_i·m_i` coordinates indexed `a·m_i + r`.
#[derive(Debug, Clone)]
pub struct Representation {
    algebra: FdAlgebra,
    multiplicities: Vec<usize>,
    basis: CMatrix,
}

impl Representation {
    pub fn standard(algebra: &FdAlgebra, multiplicities: Vec<usize>) -> Result<Self> {
        if multiplicities.len() != algebra.num_blocks() {
            return Err(Error::AlgebraMismatch(format!(
                "{} multiplicities for algebra {algebra}",
                multiplicities.len()
            )));
        }
        let d: usize = algebra.blocks().iter().zip(&multiplicities).map(|(n, m)| n * m).sum();
        Ok(Self {
            algebra: algebra.clone(),
            multiplicities,
            basis: CMatrix::identity(d, d),
        })
    }

    pub fn with_basis(algebra: &FdAlgebra, multiplicities: Vec<usize>, basis: CMatrix) -> Result<Self> {
        let mut rep = Self::standard(algebra, multiplicities)?;
        if basis.nrows() != rep.space_dim() || basis.ncols() != rep.space_dim() {
            return Err(Error::ShapeMismatch(format!(
                "basis must be {d}x{d}",
                d = rep.space_dim()
            )));
        }
        rep.basis = basis;
        Ok(rep)
    }

    pub fn algebra(&self) -> &FdAlgebra {
        &self.algebra
    }

    pub fn multiplicities(&self) -> &[usize] {
        &self.multiplicities
    }

    pub fn basis(&self) -> &CMatrix {
        &self.basis
    }

    pub fn space_dim(&self) -> usize {
        self.basis.nrows()
    }

    /// Start of block `i` in the standard layout.
    pub fn offset(&self, i: usize) -> usize {
        (0..i).map(|k| self.algebra.block(k) * self.multiplicities[k]).sum()
    }

    fn embed_standard(&self, x: &AlgebraElement) -> CMatrix {
        let d = self.space_dim();
        let mut out = zeros(d, d);
        let mut off = 0;
        for (i, &m) in self.multiplicities.iter().enumerate() {
            let n = self.algebra.block(i);
            if m > 0 {
                let piece = kron(x.block(i), &CMatrix::identity(m, m));
                out.view_mut((off, off), (n * m, n * m)).copy_from(&piece);
            }
            off += n * m;
        }
        out
    }

    pub fn embed(&self, x: &AlgebraElement) -> Result<CMatrix> {
        if x.algebra() != &self.algebra {
            return Err(Error::AlgebraMismatch(format!(
                "element of {} embedded by representation of {}",
                x.algebra(),
                self.algebra
            )));
        }
        let inner = self.embed_standard(x);
        Ok(&self.basis * inner * self.basis.adjoint())
    }

    /// Left inverse of [`embed`](Self::embed) on `π(A)`: averages the copies.
    pub fn abstract_element(&self, big: &CMatrix) -> Result<AlgebraElement> {
        let d = self.space_dim();
        if big.nrows() != d || big.ncols() != d {
            return Err(Error::ShapeMismatch(format!("expected {d}x{d} operator")));
        }
        let y = self.basis.adjoint() * big * &self.basis;
        let mut blocks = Vec::with_capacity(self.algebra.num_blocks());
        let mut off = 0;
        for (i, &m) in self.multiplicities.iter().enumerate() {
            let n = self.algebra.block(i);
            let mut b = zeros(n, n);
            if m > 0 {
                for a in 0..n {
                    for c in 0..n {
                        let mut acc = c64(0.0, 0.0);
                        for r in 0..m {
                            acc += y[(off + a * m + r, off + c * m + r)];
                        }
                        b[(a, c)] = acc / m as f64;
                    }
                }
            }
            blocks.push(b);
            off += n * m;
        }
        AlgebraElement::new(&self.algebra, blocks)
    }

    /// The commutant `π(A)′ = U (⊕ 1_{n_i} ⊗ M_{m_i}) U*` realised as a
    /// representation of `⊕ M_{m_i}` (zero multiplicities dropped).
    pub fn commutant_algebra(&self) -> Option<FdAlgebra> {
        let blocks: Vec<usize> = self.multiplicities.iter().copied().filter(|&m| m > 0).collect();
        FdAlgebra::new(blocks).ok()
    }

    /// `U (⊕ 1_{n_i} ⊗ B_i) U*` for `B ∈ ⊕ M_{m_i}` (non-zero multiplicities only).
    pub fn embed_commutant(&self, b: &AlgebraElement) -> Result<CMatrix> {
        let expected = self
            .commutant_algebra()
            .ok_or_else(|| Error::AlgebraMismatch("representation has no support".into()))?;
        if b.algebra() != &expected {
            return Err(Error::AlgebraMismatch(format!(
                "commutant element of {} for commutant {expected}",
                b.algebra()
            )));
        }
        let d = self.space_dim();
        let mut out = zeros(d, d);
        let mut off = 0;
        let mut k = 0;
        for (i, &m) in self.multiplicities.iter().enumerate() {
            let n = self.algebra.block(i);
            if m > 0 {
                let piece = kron(&CMatrix::identity(n, n), b.block(k));
                out.view_mut((off, off), (n * m, n * m)).copy_from(&piece);
                k += 1;
            }
            off += n * m;
        }
        Ok(&self.basis * out * self.basis.adjoint())
    }
}

fn vec_col(m: &CMatrix) -> nalgebra::DVector<crate::numerics::C64> {
    nalgebra::DVector::from_column_slice(m.as_slice())
}

fn unvec(v: &[crate::numerics::C64], d: usize) -> CMatrix {
    CMatrix::from_column_slice(d, d, v)
}

/// Orthonormal (Hilbert–Schmidt) basis of `{X : X A_k = A_k X ∀k}`.
///
/// Solves the stacked commutation system `(1⊗A − Aᵀ⊗1) vec X = 0` by SVD; an
/// empty generator list yields a basis of all of `M_D`.
pub fn commutant_basis(generators: &[CMatrix], dim: usize, tol: f64) -> Vec<CMatrix> {
    let d2 = dim * dim;
    if generators.is_empty() {
        return (0..dim)
            .flat_map(|a| (0..dim).map(move |b| matrix_unit(dim, a, b)))
            .collect();
    }
    let id = CMatrix::identity(dim, dim);
    let mut stacked = zeros(generators.len() * d2, d2);
    for (k, g) in generators.iter().enumerate() {
        assert_eq!(g.nrows(), dim, "generator dimension mismatch");
        let op = kron(&id, g) - kron(&g.transpose(), &id);
        stacked.view_mut((k * d2, 0), (d2, d2)).copy_from(&op);
    }
    let ns = null_space(&stacked, tol);
    (0..ns.ncols())
        .map(|c| unvec(ns.column(c).as_slice(), dim))
        .collect()
}

/// Orthonormal basis of `span(mats)` as columns of vectorised matrices.
fn span_basis(mats: &[CMatrix], tol: f64) -> CMatrix {
    if mats.is_empty() {
        return zeros(0, 0);
    }
    let d2 = mats[0].len();
    let mut cols = zeros(d2, mats.len());
    for (k, m) in mats.iter().enumerate() {
        cols.set_column(k, &vec_col(m));
    }
    let svd = crate::numerics::checked_svd(&cols);
    let u = svd.u.expect("u requested");
    let top = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| top > 0.0 && svd.singular_values[k] > tol * top)
        .collect();
    let mut out = zeros(d2, keep.len());
    for (j, &k) in keep.iter().enumerate() {
        out.set_column(j, &u.column(k));
    }
    out
}

fn distance_to_span(basis: &CMatrix, m: &CMatrix) -> f64 {
    let v = vec_col(m);
    let proj = basis * (basis.adjoint() * &v);
    (v - proj).norm()
}

/// Split sorted values into clusters separated by gaps larger than `gap`.
fn cluster_sorted(values: &[f64], gap: f64) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for k in 1..=values.len() {
        if k == values.len() || values[k] - values[k - 1] > gap {
            out.push(start..k);
            start = k;
        }
    }
    out
}

fn random_combination(mats: &[CMatrix], rng: &mut ChaCha8Rng) -> CMatrix {
    let d = mats[0].nrows();
    let mut acc = zeros(d, d);
    for m in mats {
        let g: f64 = StandardNormal.sample(rng);
        acc += m.scale(g);
    }
    acc
}

fn hermitian_spanning_set(mats: &[CMatrix]) -> Vec<CMatrix> {
    let mut out = Vec::with_capacity(2 * mats.len());
    for m in mats {
        out.push(hermitian_part(m));
        out.push(hermitian_part(&(m * c64(0.0, -1.0))));
    }
    out
}

const MAX_RESAMPLES: usize = 5;

/// Wedderburn decomposition of a unital *-subalgebra of `M_D` given by a
/// spanning set: finds `U` with `span = U (⊕ M_{n_i} ⊗ 1_{m_i}) U*`.
///
/// Minimal central projections come from the eigenspaces of a random
/// self-adjoint central element; inside each central block a random Hermitian
/// element of the algebra splits off the multiplicity space and a generic
/// algebra element supplies the matrix units linking its eigenspaces.
pub fn structure_decompose(span: &[CMatrix], tol: f64, seed: u64) -> Result<Representation> {
    if span.is_empty() {
        return Err(Error::NotStarAlgebra("empty spanning set".into()));
    }
    let d = span[0].nrows();
    if span.iter().any(|m| m.nrows() != d || m.ncols() != d) {
        return Err(Error::ShapeMismatch("spanning matrices must share one square shape".into()));
    }
    let basis = span_basis(span, tol);
    let basis_mats: Vec<CMatrix> = (0..basis.ncols())
        .map(|c| unvec(basis.column(c).as_slice(), d))
        .collect();
    let closure_tol = tol.max(1e-12) * 1e3;
    let identity = CMatrix::identity(d, d);
    if distance_to_span(&basis, &identity) > closure_tol * (d as f64).sqrt() {
        return Err(Error::NotStarAlgebra("span does not contain the identity".into()));
    }
    for m in &basis_mats {
        if distance_to_span(&basis, &m.adjoint()) > closure_tol {
            return Err(Error::NotStarAlgebra("span is not closed under adjoint".into()));
        }
    }
    for a in &basis_mats {
        for b in &basis_mats {
            let p = a * b;
            if distance_to_span(&basis, &p) > closure_tol * (1.0 + frob(&p)) {
                return Err(Error::NotStarAlgebra("span is not closed under products".into()));
            }
        }
    }

    let commutant = commutant_basis(&basis_mats, d, tol);
    let mut both = basis_mats.clone();
    both.extend(commutant.iter().cloned());
    let center = commutant_basis(&both, d, tol);
    let center_herm = hermitian_spanning_set(&center);
    let algebra_herm = hermitian_spanning_set(&basis_mats);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _attempt in 0..MAX_RESAMPLES {
        match try_decompose(&basis_mats, &center_herm, &algebra_herm, center.len(), d, &mut rng) {
            Ok(rep) => {
                let round_trip = basis_mats
                    .iter()
                    .map(|s| {
                        let back = rep.embed(&rep.abstract_element(s)?)?;
                        Ok(frob(&(back - s)))
                    })
                    .collect::<Result<Vec<f64>>>()?
                    .into_iter()
                    .fold(0.0, f64::max);
                if round_trip <= 1e-8 {
                    return Ok(rep);
                }
            }
            Err(Error::ToleranceBreakdown(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::ToleranceBreakdown(format!(
        "no generic element found after {MAX_RESAMPLES} samples"
    )))
}

struct CentralBlock {
    n: usize,
    m: usize,
    columns: CMatrix,
}

fn try_decompose(
    basis_mats: &[CMatrix],
    center_herm: &[CMatrix],
    algebra_herm: &[CMatrix],
    center_dim: usize,
    d: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Representation> {
    let breakdown = |msg: &str| Error::ToleranceBreakdown(msg.to_string());
    let z = random_combination(center_herm, rng);
    let eig = herm_eig(&hermitian_part(&z))?;
    let spread = 1.0 + eig.max().abs().max(eig.min().abs());
    let clusters = cluster_sorted(&eig.eigenvalues, 1e-6 * spread);
    if clusters.len() != center_dim {
        return Err(breakdown("central element has colliding eigenvalues"));
    }
    let mut blocks = Vec::with_capacity(clusters.len());
    for range in clusters {
        let q = eig.eigenvectors.columns(range.start, range.len()).into_owned();
        let r = q.ncols();
        let compressed: Vec<CMatrix> =
            basis_mats.iter().map(|s| q.adjoint() * s * &q).collect();
        let dim = span_basis(&compressed, 1e-9).ncols();
        let n = (dim as f64).sqrt().round() as usize;
        if n == 0 || n * n != dim || r % n != 0 {
            return Err(breakdown("central block dimensions are inconsistent"));
        }
        let m = r / n;
        let columns = if n == 1 {
            q
        } else {
            let h: Vec<CMatrix> = algebra_herm.iter().map(|s| q.adjoint() * s * &q).collect();
            let hr = random_combination(&h, rng);
            let he = herm_eig(&hermitian_part(&hr))?;
            let hspread = 1.0 + he.max().abs().max(he.min().abs());
            let sub = cluster_sorted(&he.eigenvalues, 1e-6 * hspread);
            if sub.len() != n || sub.iter().any(|c| c.len() != m) {
                return Err(breakdown("element does not split the block generically"));
            }
            let generic = random_combination(&compressed, rng);
            let first = he.eigenvectors.columns(sub[0].start, m).into_owned();
            let mut cols = zeros(r, r);
            cols.view_mut((0, 0), (r, m)).copy_from(&first);
            for (a, range) in sub.iter().enumerate().skip(1) {
                let ea = he.eigenvectors.columns(range.start, m).into_owned();
                let t = ea.adjoint() * &generic * &first;
                let c2 = (t.adjoint() * &t).trace().re / m as f64;
                if c2 <= 1e-12 {
                    return Err(breakdown("matrix-unit link vanished"));
                }
                let t = t.scale(1.0 / c2.sqrt());
                if frob(&(t.adjoint() * &t - CMatrix::identity(m, m))) > 1e-6 {
                    return Err(breakdown("link is not a scaled unitary"));
                }
                cols.view_mut((0, a * m), (r, m)).copy_from(&(ea * t));
            }
            q * cols
        };
        blocks.push(CentralBlock { n, m, columns });
    }
    blocks.sort_by_key(|b| (b.n, b.n * b.m));
    let mut u = zeros(d, d);
    let mut off = 0;
    for b in &blocks {
        u.view_mut((0, off), (d, b.n * b.m)).copy_from(&b.columns);
        off += b.n * b.m;
    }
    let algebra = FdAlgebra::new(blocks.iter().map(|b| b.n).collect())?;
    Representation::with_basis(&algebra, blocks.iter().map(|b| b.m).collect(), u)
}
