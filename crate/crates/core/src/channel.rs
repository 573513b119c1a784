//! Heisenberg-picture channels between finite-dimensional algebras.
//!
//! A channel `Λ: A → B` with `A = ⊕ M_{n_i}` (the outcome space) and
//! `B = ⊕ M_{m_j}` (the input space) is stored as one Choi matrix per block
//! pair, `J_{ij} = Σ_{ab} |a⟩⟨b| ⊗ Λ_{ij}(|a⟩⟨b|)` with the domain factor first.
//! The component maps combine as `Λ(⊕ A_i)_j = Σ_i Λ_{ij}(A_i)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::algebra::{algebra_tensor, AlgebraElement, FdAlgebra};
use crate::error::{Error, Result};
use crate::numerics::{
    c64, fix_phase, frob, haar_isometry, herm_eig, hermitian_part, is_finite, is_hermitian, kron,
    pivoted_cholesky, zeros, CMatrix, ALG_TOL,
};

/// Tolerance for CP, unitality and POVM validity checks.
pub const VALIDITY_TOL: f64 = 1e-9;
/// Relative Choi-rank threshold.
pub const CHOI_RANK_TOL: f64 = 1e-9;

/// Applies the component map with Choi matrix `choi` (size `n_in·n_out`) to `x`.
pub fn apply_choi(choi: &CMatrix, n_in: usize, n_out: usize, x: &CMatrix) -> CMatrix {
    let mut out = zeros(n_out, n_out);
    for a in 0..n_in {
        for b in 0..n_in {
            let coeff = x[(a, b)];
            if coeff.norm_sqr() == 0.0 {
                continue;
            }
            let sub = choi.view((a * n_out, b * n_out), (n_out, n_out));
            out.zip_apply(&sub, |o, s| *o += coeff * s);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    domain: FdAlgebra,
    codomain: FdAlgebra,
    /// Row-major over (domain block, codomain block).
    choi: Vec<CMatrix>,
}

/// Result of [`Channel::validate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationReport {
    pub is_cp: bool,
    pub is_unital: bool,
    /// `max(−λ_min over Choi blocks, ‖Λ(1) − 1‖_F)`, clipped at zero.
    pub max_violation: f64,
    pub min_choi_eigenvalue: f64,
    pub unitality_error: f64,
}

impl Channel {
    pub fn from_choi(domain: FdAlgebra, codomain: FdAlgebra, choi: Vec<CMatrix>) -> Result<Self> {
        let expected = domain.num_blocks() * codomain.num_blocks();
        if choi.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "{} Choi blocks given, {domain} → {codomain} needs {expected}",
                choi.len()
            )));
        }
        for (i, &n) in domain.blocks().iter().enumerate() {
            for (j, &m) in codomain.blocks().iter().enumerate() {
                let block = &choi[i * codomain.num_blocks() + j];
                if block.nrows() != n * m || block.ncols() != n * m {
                    return Err(Error::ShapeMismatch(format!(
                        "Choi block ({i},{j}) is {}x{}, expected {s}x{s}",
                        block.nrows(),
                        block.ncols(),
                        s = n * m
                    )));
                }
                if !is_finite(block) {
                    return Err(Error::NonFinite);
                }
                if !is_hermitian(block, 1e-9) {
                    return Err(Error::NotHermitian {
                        deviation: frob(&(block - block.adjoint())),
                    });
                }
            }
        }
        let choi = choi.iter().map(hermitian_part).collect();
        Ok(Self {
            domain,
            codomain,
            choi,
        })
    }

    /// Builds the Choi blocks from the action on matrix units of the domain.
    pub fn from_action<F>(domain: FdAlgebra, codomain: FdAlgebra, action: F) -> Result<Self>
    where
        F: Fn(&AlgebraElement) -> Result<AlgebraElement>,
    {
        let units = domain.clone();
        Self::from_unit_images(domain, codomain, |i, a, b| {
            action(&AlgebraElement::unit(&units, i, a, b))
        })
    }

    /// Like [`from_action`](Self::from_action), with the image of the matrix
    /// unit `|a⟩⟨b|` of block `i` supplied directly.
    pub fn from_unit_images<F>(domain: FdAlgebra, codomain: FdAlgebra, image_of: F) -> Result<Self>
    where
        F: Fn(usize, usize, usize) -> Result<AlgebraElement>,
    {
        let nc = codomain.num_blocks();
        let mut choi: Vec<CMatrix> = Vec::with_capacity(domain.num_blocks() * nc);
        for &n in domain.blocks() {
            for &m in codomain.blocks() {
                choi.push(zeros(n * m, n * m));
            }
        }
        for (i, a, b) in domain.matrix_units().collect::<Vec<_>>() {
            let image = image_of(i, a, b)?;
            if image.algebra() != &codomain {
                return Err(Error::AlgebraMismatch(format!(
                    "action returned element of {}, expected {codomain}",
                    image.algebra()
                )));
            }
            for (j, &m) in codomain.blocks().iter().enumerate() {
                choi[i * nc + j]
                    .view_mut((a * m, b * m), (m, m))
                    .copy_from(image.block(j));
            }
        }
        Self::from_choi(domain, codomain, choi)
    }

    pub fn domain(&self) -> &FdAlgebra {
        &self.domain
    }

    pub fn codomain(&self) -> &FdAlgebra {
        &self.codomain
    }

    pub fn choi(&self, i: usize, j: usize) -> &CMatrix {
        &self.choi[i * self.codomain.num_blocks() + j]
    }

    pub fn choi_blocks(&self) -> &[CMatrix] {
        &self.choi
    }

    pub fn apply(&self, x: &AlgebraElement) -> Result<AlgebraElement> {
        if x.algebra() != &self.domain {
            return Err(Error::AlgebraMismatch(format!(
                "channel domain {} applied to element of {}",
                self.domain,
                x.algebra()
            )));
        }
        let blocks = self
            .codomain
            .blocks()
            .iter()
            .enumerate()
            .map(|(j, &m)| {
                let mut acc = zeros(m, m);
                for (i, &n) in self.domain.blocks().iter().enumerate() {
                    acc += apply_choi(self.choi(i, j), n, m, x.block(i));
                }
                acc
            })
            .collect();
        AlgebraElement::new(&self.codomain, blocks)
    }

    /// Component `Λ_{ij}` applied to a single block.
    pub fn apply_component(&self, i: usize, j: usize, x: &CMatrix) -> CMatrix {
        apply_choi(
            self.choi(i, j),
            self.domain.block(i),
            self.codomain.block(j),
            x,
        )
    }

    pub fn identity(algebra: &FdAlgebra) -> Self {
        Self::from_action(algebra.clone(), algebra.clone(), |x| Ok(x.clone())).expect("identity")
    }

    /// `A ↦ U* A U` on `M_d`.
    pub fn unitary(u: &CMatrix) -> Result<Self> {
        let d = u.nrows();
        if u.ncols() != d || frob(&(u.adjoint() * u - CMatrix::identity(d, d))) > 1e-9 {
            return Err(Error::ShapeMismatch("expected a unitary matrix".into()));
        }
        let alg = FdAlgebra::full(d);
        Self::from_action(alg.clone(), alg.clone(), |x| {
            Ok(AlgebraElement::from_block(&alg, 0, u.adjoint() * x.block(0) * u))
        })
    }

    /// Kraus form `A ↦ Σ K_r* A K_r`, each `K_r` of shape `n×d`.
    pub fn from_kraus(n: usize, kraus: &[CMatrix]) -> Result<Self> {
        let d = kraus.first().map(|k| k.ncols()).unwrap_or(0);
        if kraus.iter().any(|k| k.nrows() != n || k.ncols() != d) || d == 0 {
            return Err(Error::ShapeMismatch("Kraus operators must share one n×d shape".into()));
        }
        let dom = FdAlgebra::full(n);
        let cod = FdAlgebra::full(d);
        Self::from_action(dom.clone(), cod.clone(), |x| {
            let mut acc = zeros(d, d);
            for k in kraus {
                acc += k.adjoint() * x.block(0) * k;
            }
            Ok(AlgebraElement::from_block(&cod, 0, acc))
        })
    }

    /// `A ↦ η A + (1 − η) tr(A)/d · 1` on `M_d`.
    pub fn depolarizing(d: usize, eta: f64) -> Self {
        let alg = FdAlgebra::full(d);
        Self::from_action(alg.clone(), alg.clone(), |x| {
            let a = x.block(0);
            let mixed = CMatrix::identity(d, d) * (a.trace() * ((1.0 - eta) / d as f64));
            Ok(AlgebraElement::from_block(&alg, 0, a.scale(eta) + mixed))
        })
        .expect("depolarizing")
    }

    /// `A ↦ tr(A)/n · 1_d` from `M_n` to `M_d`.
    pub fn completely_depolarizing(n: usize, d: usize) -> Self {
        let dom = FdAlgebra::full(n);
        let cod = FdAlgebra::full(d);
        Self::from_action(dom, cod.clone(), |x| {
            let t = x.block(0).trace() / n as f64;
            Ok(AlgebraElement::from_block(&cod, 0, CMatrix::identity(d, d) * t))
        })
        .expect("completely depolarizing")
    }

    /// Transpose map on `M_d` (positive but not CP for `d ≥ 2`).
    pub fn transpose(d: usize) -> Self {
        let alg = FdAlgebra::full(d);
        Self::from_action(alg.clone(), alg.clone(), |x| {
            Ok(AlgebraElement::from_block(&alg, 0, x.block(0).transpose()))
        })
        .expect("transpose")
    }

    /// `A ↦ φ(A) · 1_B` for a state given as block densities (`φ(A) = Σ tr(ρ_i A_i)`).
    pub fn prepare_state(state: &AlgebraElement, codomain: &FdAlgebra) -> Result<Self> {
        let dom = state.algebra().clone();
        Self::from_action(dom, codomain.clone(), |x| {
            let mut value = c64(0.0, 0.0);
            for (rho, a) in state.blocks().iter().zip(x.blocks()) {
                value += (rho * a).trace();
            }
            Ok(AlgebraElement::identity(codomain).scalar_mul(value))
        })
    }

    /// Sum of two maps with identical shapes (e.g. instrument arms).
    pub fn sum(&self, other: &Self) -> Result<Self> {
        if self.domain != other.domain || self.codomain != other.codomain {
            return Err(Error::AlgebraMismatch("summands must share domain and codomain".into()));
        }
        let choi = self.choi.iter().zip(&other.choi).map(|(a, b)| a + b).collect();
        Self::from_choi(self.domain.clone(), self.codomain.clone(), choi)
    }

    pub fn validate(&self) -> ValidationReport {
        let mut min_eig = f64::INFINITY;
        for block in &self.choi {
            let e = herm_eig(block).map(|e| e.min()).unwrap_or(f64::NEG_INFINITY);
            min_eig = min_eig.min(e);
        }
        let unit = self
            .apply(&AlgebraElement::identity(&self.domain))
            .expect("identity lies in the domain");
        let target = AlgebraElement::identity(&self.codomain);
        let unitality_error = unit.sub(&target).expect("same algebra").norm();
        let is_cp = min_eig >= -VALIDITY_TOL;
        let is_unital = unitality_error <= VALIDITY_TOL;
        ValidationReport {
            is_cp,
            is_unital,
            max_violation: (-min_eig).max(unitality_error).max(0.0),
            min_choi_eigenvalue: min_eig,
            unitality_error,
        }
    }

    pub fn is_channel(&self) -> bool {
        let r = self.validate();
        r.is_cp && r.is_unital
    }

    fn ensure_cp(&self) -> Result<()> {
        let r = self.validate();
        if !r.is_cp {
            return Err(Error::NotCp {
                min_eigenvalue: r.min_choi_eigenvalue,
            });
        }
        Ok(())
    }

    /// Max over domain matrix units of the Frobenius distance of the images.
    pub fn action_distance(&self, other: &Self) -> Result<f64> {
        if self.domain != other.domain || self.codomain != other.codomain {
            return Err(Error::AlgebraMismatch(format!(
                "{}→{} vs {}→{}",
                self.domain, self.codomain, other.domain, other.codomain
            )));
        }
        let nc = self.codomain.num_blocks();
        let mut worst: f64 = 0.0;
        for (i, &n) in self.domain.blocks().iter().enumerate() {
            for a in 0..n {
                for b in 0..n {
                    let mut sq = 0.0;
                    for (j, &m) in self.codomain.blocks().iter().enumerate() {
                        let x = self.choi[i * nc + j].view((a * m, b * m), (m, m));
                        let y = other.choi[i * nc + j].view((a * m, b * m), (m, m));
                        sq += x.iter().zip(y.iter()).map(|(p, q)| (p - q).norm_sqr()).sum::<f64>();
                    }
                    worst = worst.max(sq.sqrt());
                }
            }
        }
        Ok(worst)
    }

    /// Kraus operators per component, ordered by descending Choi eigenvalue.
    pub fn kraus_decompose(&self) -> Result<KrausForm> {
        self.ensure_cp()?;
        let nc = self.codomain.num_blocks();
        let mut components = Vec::with_capacity(self.choi.len());
        for (i, &n) in self.domain.blocks().iter().enumerate() {
            for (j, &m) in self.codomain.blocks().iter().enumerate() {
                let eig = herm_eig(&self.choi[i * nc + j])?;
                let top = eig.max();
                let mut ops = Vec::new();
                if top > f64::EPSILON {
                    for k in (0..eig.eigenvalues.len()).rev() {
                        let lambda = eig.eigenvalues[k];
                        if lambda <= CHOI_RANK_TOL * top {
                            break;
                        }
                        let mut v = eig.eigenvectors.column(k).into_owned();
                        fix_phase(&mut v, 1e-9);
                        let v = v * c64(lambda.sqrt(), 0.0);
                        ops.push(kraus_from_choi_vector(v.as_slice(), n, m));
                    }
                }
                components.push(ops);
            }
        }
        Ok(KrausForm {
            domain: self.domain.clone(),
            codomain: self.codomain.clone(),
            components,
        })
    }

    /// Numerical Choi rank of every component, row-major over block pairs.
    pub fn choi_ranks(&self) -> Result<Vec<usize>> {
        Ok(self
            .kraus_decompose()?
            .components
            .iter()
            .map(|c| c.len())
            .collect())
    }
}

/// `K[a,p] = conj(k[a·m + p])` for a Choi vector `k` of `X ↦ K* X K`.
fn kraus_from_choi_vector(k: &[crate::numerics::C64], n: usize, m: usize) -> CMatrix {
    CMatrix::from_fn(n, m, |a, p| k[a * m + p].conj())
}

trait ScalarMul {
    fn scalar_mul(&self, z: crate::numerics::C64) -> Self;
}

impl ScalarMul for AlgebraElement {
    fn scalar_mul(&self, z: crate::numerics::C64) -> Self {
        let blocks = self.blocks().iter().map(|b| b * z).collect();
        AlgebraElement::new(self.algebra(), blocks).expect("same shapes")
    }
}

/// Kraus operators for every component map.
#[derive(Debug, Clone)]
pub struct KrausForm {
    pub domain: FdAlgebra,
    pub codomain: FdAlgebra,
    /// Row-major over (domain block, codomain block); each `K_r` is `n_i × m_j`.
    pub components: Vec<Vec<CMatrix>>,
}

impl KrausForm {
    pub fn component(&self, i: usize, j: usize) -> &[CMatrix] {
        &self.components[i * self.codomain.num_blocks() + j]
    }

    pub fn to_channel(&self) -> Result<Channel> {
        let choi = self
            .components
            .iter()
            .enumerate()
            .map(|(idx, ops)| {
                let n = self.domain.block(idx / self.codomain.num_blocks());
                let m = self.codomain.block(idx % self.codomain.num_blocks());
                let mut j = zeros(n * m, n * m);
                for k in ops {
                    let v = nalgebra::DVector::from_fn(n * m, |r, _| k[(r / m, r % m)].conj());
                    j += &v * v.adjoint();
                }
                j
            })
            .collect();
        Channel::from_choi(self.domain.clone(), self.codomain.clone(), choi)
    }
}

/// Heisenberg composition `outer ∘ inner`.
pub fn compose(outer: &Channel, inner: &Channel) -> Result<Channel> {
    if inner.codomain() != outer.domain() {
        return Err(Error::AlgebraMismatch(format!(
            "inner codomain {} differs from outer domain {}",
            inner.codomain(),
            outer.domain()
        )));
    }
    Channel::from_action(inner.domain().clone(), outer.codomain().clone(), |x| {
        outer.apply(&inner.apply(x)?)
    })
}

/// `Φ ⊗ Ψ` on the tensor algebras, with block pairs in row-major order.
pub fn tensor_map(a: &Channel, b: &Channel) -> Channel {
    let dom = algebra_tensor(a.domain(), b.domain());
    let cod = algebra_tensor(a.codomain(), b.codomain());
    let (an, bn) = (a.domain().blocks(), b.domain().blocks());
    let (am, bm) = (a.codomain().blocks(), b.codomain().blocks());
    let mut choi = Vec::with_capacity(dom.num_blocks() * cod.num_blocks());
    for (i, &n1) in an.iter().enumerate() {
        for (k, &n2) in bn.iter().enumerate() {
            for (j, &m1) in am.iter().enumerate() {
                for (l, &m2) in bm.iter().enumerate() {
                    let ja = a.choi(i, j);
                    let jb = b.choi(k, l);
                    // J_a ⊗ J_b is indexed (a, p, a', p'); reorder to (a, a', p, p').
                    let size = n1 * n2 * m1 * m2;
                    let idx = |x: usize, xp: usize, p: usize, pp: usize| {
                        ((x * n2 + xp) * m1 + p) * m2 + pp
                    };
                    let mut out = zeros(size, size);
                    for x in 0..n1 {
                        for p in 0..m1 {
                            for y in 0..n1 {
                                for q in 0..m1 {
                                    let va = ja[(x * m1 + p, y * m1 + q)];
                                    if va.norm_sqr() == 0.0 {
                                        continue;
                                    }
                                    for xp in 0..n2 {
                                        for pp in 0..m2 {
                                            for yp in 0..n2 {
                                                for qp in 0..m2 {
                                                    let vb = jb[(xp * m2 + pp, yp * m2 + qp)];
                                                    out[(idx(x, xp, p, pp), idx(y, yp, q, qp))] =
                                                        va * vb;
                                                }
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                    choi.push(out);
                }
            }
        }
    }
    Channel::from_choi(dom, cod, choi).expect("tensor of Hermitian blocks")
}

/// Finite POVM on `C^dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Povm {
    dim: usize,
    effects: Vec<CMatrix>,
}

impl Povm {
    pub fn new(effects: Vec<CMatrix>) -> Result<Self> {
        Self::with_tolerance(effects, VALIDITY_TOL)
    }

    /// Same checks as [`Povm::new`] with positivity and normalisation
    /// relaxed to `tol`.
    pub fn with_tolerance(effects: Vec<CMatrix>, tol: f64) -> Result<Self> {
        let first = effects
            .first()
            .ok_or_else(|| Error::InvalidPovm("no effects".into()))?;
        let dim = first.nrows();
        if dim == 0 {
            return Err(Error::InvalidPovm("zero-dimensional effects".into()));
        }
        let mut total = zeros(dim, dim);
        for (k, e) in effects.iter().enumerate() {
            if e.nrows() != dim || e.ncols() != dim {
                return Err(Error::InvalidPovm(format!(
                    "effect {k} is {}x{}, expected {dim}x{dim}",
                    e.nrows(),
                    e.ncols()
                )));
            }
            if !is_finite(e) {
                return Err(Error::InvalidPovm(format!("effect {k} has non-finite entries")));
            }
            if !is_hermitian(e, ALG_TOL.max(tol)) {
                return Err(Error::InvalidPovm(format!("effect {k} is not Hermitian")));
            }
            let min = herm_eig(e)?.min();
            if min < -tol {
                return Err(Error::InvalidPovm(format!(
                    "effect {k} is not positive (min eigenvalue {min:.3e})"
                )));
            }
            total += e;
        }
        let err = frob(&(total - CMatrix::identity(dim, dim)));
        if err > tol {
            return Err(Error::InvalidPovm(format!(
                "effects sum to the identity only up to {err:.3e}"
            )));
        }
        Ok(Self {
            dim,
            effects: effects.iter().map(hermitian_part).collect(),
        })
    }

    pub fn trivial(dim: usize) -> Self {
        Self::new(vec![CMatrix::identity(dim, dim)]).expect("identity is a POVM")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn effects(&self) -> &[CMatrix] {
        &self.effects
    }

    pub fn effect(&self, i: usize) -> &CMatrix {
        &self.effects[i]
    }

    pub fn len(&self) -> usize {
        self.effects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.effects.is_empty()
    }
}

/// QC channel `f ↦ Σ_i f_i M_i` from `C^k` into `M_d`.
pub fn qc_channel(povm: &Povm) -> Channel {
    let dom = FdAlgebra::commutative(povm.len());
    let cod = FdAlgebra::full(povm.dim());
    Channel::from_choi(dom, cod, povm.effects().to_vec()).expect("POVM effects are Hermitian")
}

/// Inverse of [`qc_channel`]: the effects are the images of the minimal projections.
pub fn povm_from_commutative_channel(ch: &Channel) -> Result<Povm> {
    if !ch.domain().is_commutative() {
        return Err(Error::NotCommutativeDomain);
    }
    if ch.codomain().single_block().is_none() {
        return Err(Error::CodomainNotFullBlock(ch.codomain().blocks().to_vec()));
    }
    Povm::new(ch.choi_blocks().to_vec())
}

/// Environment-side channel of a fully quantum channel `M_n → M_d`:
/// `B ↦ V*(1_n ⊗ B)V` on `M_r`, where `V = Σ_r K_r ⊗ |r⟩` comes from a pivoted
/// Cholesky factor of the Choi matrix.
pub fn complementary_channel(ch: &Channel) -> Result<Channel> {
    let (n, d) = match (ch.domain().single_block(), ch.codomain().single_block()) {
        (Some(n), Some(d)) => (n, d),
        _ => {
            return Err(Error::NotFullyQuantum {
                domain: ch.domain().blocks().to_vec(),
                codomain: ch.codomain().blocks().to_vec(),
            })
        }
    };
    ch.ensure_cp()?;
    let factor = pivoted_cholesky(ch.choi(0, 0), CHOI_RANK_TOL)?;
    let kraus: Vec<CMatrix> = (0..factor.ncols())
        .map(|r| kraus_from_choi_vector(factor.column(r).as_slice(), n, d))
        .collect();
    environment_channel(&kraus, d)
}

/// `B ↦ Σ_{rr'} B_{rr'} K_r* K_{r'}` on `M_r` for Kraus operators `K_r`.
pub(crate) fn environment_channel(kraus: &[CMatrix], d: usize) -> Result<Channel> {
    let r = kraus.len();
    let mut choi = zeros(r * d, r * d);
    for (s, ks) in kraus.iter().enumerate() {
        for (t, kt) in kraus.iter().enumerate() {
            choi.view_mut((s * d, t * d), (d, d)).copy_from(&(ks.adjoint() * kt));
        }
    }
    Channel::from_choi(FdAlgebra::full(r), FdAlgebra::full(d), vec![choi])
}

/// Random channel with per-component Kraus ranks drawn uniformly (adjusted
/// upward so each codomain block admits an isometric dilation).
pub fn random_channel(domain: &FdAlgebra, codomain: &FdAlgebra, seed: u64) -> Channel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ranks = Vec::with_capacity(domain.num_blocks() * codomain.num_blocks());
    let mut per_codomain: Vec<Vec<usize>> = Vec::new();
    for &m in codomain.blocks() {
        let mut col: Vec<usize> = domain
            .blocks()
            .iter()
            .map(|&n| rng.random_range(1..=n * m))
            .collect();
        while domain.blocks().iter().zip(&col).map(|(n, r)| n * r).sum::<usize>() < m {
            let (k, _) = col
                .iter()
                .enumerate()
                .filter(|(k, &r)| r < domain.block(*k) * m)
                .max_by_key(|(k, _)| domain.block(*k))
                .expect("full ranks always suffice");
            col[k] += 1;
        }
        per_codomain.push(col);
    }
    for i in 0..domain.num_blocks() {
        for col in &per_codomain {
            ranks.push(col[i]);
        }
    }
    random_channel_with_ranks(domain, codomain, &ranks, &mut rng)
        .expect("ranks admit an isometric dilation")
}

/// Random channel `Λ(A)_j = V_j* (⊕_i A_i ⊗ 1_{r_ij}) V_j` with Haar isometries `V_j`.
pub fn random_channel_with_ranks<R: Rng + ?Sized>(
    domain: &FdAlgebra,
    codomain: &FdAlgebra,
    ranks: &[usize],
    rng: &mut R,
) -> Result<Channel> {
    let nc = codomain.num_blocks();
    if ranks.len() != domain.num_blocks() * nc {
        return Err(Error::ShapeMismatch("one rank per block pair required".into()));
    }
    let mut choi = vec![zeros(0, 0); ranks.len()];
    for (j, &m) in codomain.blocks().iter().enumerate() {
        let dims: Vec<usize> = (0..domain.num_blocks())
            .map(|i| domain.block(i) * ranks[i * nc + j])
            .collect();
        let total: usize = dims.iter().sum();
        if total < m {
            return Err(Error::ShapeMismatch(format!(
                "dilation space {total} too small for codomain block of size {m}"
            )));
        }
        let v = haar_isometry(total, m, rng);
        let mut off = 0;
        for (i, &n) in domain.blocks().iter().enumerate() {
            let r = ranks[i * nc + j];
            let mut block = zeros(n * m, n * m);
            // Kraus operator s of component (i,j): K_s[a,:] = V[off + a·r + s, :].
            for s in 0..r {
                let k = CMatrix::from_fn(n, m, |a, p| v[(off + a * r + s, p)]);
                let vec = nalgebra::DVector::from_fn(n * m, |idx, _| k[(idx / m, idx % m)].conj());
                block += &vec * vec.adjoint();
            }
            choi[i * nc + j] = block;
            off += n * r;
        }
    }
    Channel::from_choi(domain.clone(), codomain.clone(), choi)
}

/// `(Φ ⊗ Ψ)` acting on a product element, used by tests of [`tensor_map`].
pub fn apply_product(
    a: &Channel,
    b: &Channel,
    x: &AlgebraElement,
    y: &AlgebraElement,
) -> Result<AlgebraElement> {
    let ax = a.apply(x)?;
    let by = b.apply(y)?;
    let cod = algebra_tensor(a.codomain(), b.codomain());
    let blocks = ax
        .blocks()
        .iter()
        .flat_map(|p| by.blocks().iter().map(move |q| kron(p, q)))
        .collect();
    AlgebraElement::new(&cod, blocks)
}

/// Product element `x ⊗ y` of the tensor algebra.
pub fn product_element(x: &AlgebraElement, y: &AlgebraElement) -> AlgebraElement {
    let alg = algebra_tensor(x.algebra(), y.algebra());
    let blocks = x
        .blocks()
        .iter()
        .flat_map(|p| y.blocks().iter().map(move |q| kron(p, q)))
        .collect();
    AlgebraElement::new(&alg, blocks).expect("tensor shapes")
}
