//! Minimal Stinespring representations, commutant conjugates and Naimark dilations.

use crate::algebra::{AlgebraElement, FdAlgebra, Representation};
use crate::channel::{Channel, Povm, CHOI_RANK_TOL};
use crate::error::{Error, Result};
use crate::numerics::{fix_phase, frob, herm_eig, identity, zeros, CMatrix, RANK_TOL};

/// `Λ(A) = V* π(A) V` with `π` the standard representation with multiplicities
/// `m_i` (the Choi ranks) on `C^K`, `K = Σ n_i m_i`.
///
/// Row `offset_i + a·m_i + r` of `V` is row `a` of the `r`-th Kraus operator of
/// component `i`.
#[derive(Debug, Clone)]
pub struct StinespringRep {
    pub channel: Channel,
    pub env_mults: Vec<usize>,
    pub total_dim: usize,
    pub isometry: CMatrix,
    pub rep: Representation,
}

pub fn minimal_stinespring(ch: &Channel) -> Result<StinespringRep> {
    if ch.codomain().single_block().is_none() {
        return Err(Error::CodomainNotFullBlock(ch.codomain().blocks().to_vec()));
    }
    let report = ch.validate();
    if !report.is_cp {
        return Err(Error::NotCp {
            min_eigenvalue: report.min_choi_eigenvalue,
        });
    }
    if !report.is_unital {
        return Err(Error::NotUnital {
            deviation: report.unitality_error,
        });
    }
    let kraus = ch.kraus_decompose()?;
    let per_block: Vec<Vec<CMatrix>> = (0..ch.domain().num_blocks())
        .map(|i| kraus.component(i, 0).to_vec())
        .collect();
    from_kraus_blocks(ch, &per_block)
}

/// Assembles `V` from per-block Kraus families; the families must be linearly
/// independent for the result to be minimal.
fn from_kraus_blocks(ch: &Channel, kraus: &[Vec<CMatrix>]) -> Result<StinespringRep> {
    let d = ch.codomain().block(0);
    let mults: Vec<usize> = kraus.iter().map(|k| k.len()).collect();
    let rep = Representation::standard(ch.domain(), mults.clone())?;
    let total = rep.space_dim();
    let mut v = zeros(total, d);
    for (i, ops) in kraus.iter().enumerate() {
        let n = ch.domain().block(i);
        let m = ops.len();
        let off = rep.offset(i);
        for (r, k) in ops.iter().enumerate() {
            for a in 0..n {
                v.row_mut(off + a * m + r).copy_from(&k.row(a));
            }
        }
    }
    Ok(StinespringRep {
        channel: ch.clone(),
        env_mults: mults,
        total_dim: total,
        isometry: v,
        rep,
    })
}

impl StinespringRep {
    /// `‖V*V − 1‖_F`.
    pub fn isometry_error(&self) -> f64 {
        let d = self.isometry.ncols();
        frob(&(self.isometry.adjoint() * &self.isometry - identity(d)))
    }

    /// Largest error of `V* π(A) V` against `Λ(A)` over the Hermitian basis.
    pub fn reconstruction_error(&self) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for x in self.channel.domain().hermitian_basis() {
            let lhs = self.isometry.adjoint() * self.rep.embed(&x)? * &self.isometry;
            let rhs = self.channel.apply(&x)?;
            worst = worst.max(frob(&(lhs - rhs.block(0))));
        }
        Ok(worst)
    }

    /// Numerical rank of `span{π(A)Vψ}`.
    pub fn cyclic_rank(&self) -> Result<usize> {
        let vectors = self.cyclic_vectors()?;
        Ok(numerical_rank(&vectors))
    }

    pub fn is_minimal(&self) -> Result<bool> {
        Ok(self.cyclic_rank()? == self.total_dim)
    }

    /// `[π(E_u) V]_u` stacked horizontally over matrix units `u`.
    fn cyclic_vectors(&self) -> Result<CMatrix> {
        let units: Vec<_> = self.channel.domain().matrix_units().collect();
        let d = self.isometry.ncols();
        let mut out = zeros(self.total_dim, units.len() * d);
        for (k, (i, a, b)) in units.into_iter().enumerate() {
            let e = AlgebraElement::unit(self.channel.domain(), i, a, b);
            let piece = self.rep.embed(&e)? * &self.isometry;
            out.view_mut((0, k * d), (self.total_dim, d)).copy_from(&piece);
        }
        Ok(out)
    }

    /// The commutant `π(A)′ = ⊕ 1_{n_i} ⊗ M_{m_i}` as an abstract algebra.
    pub fn commutant_algebra(&self) -> Option<FdAlgebra> {
        self.rep.commutant_algebra()
    }

    /// Same channel, environment of block `i` rotated by the unitary `u[i]`
    /// (`K'_r = Σ_s u_{rs} K_s`); still minimal.
    pub fn rotate_environment(&self, unitaries: &[CMatrix]) -> Result<Self> {
        if unitaries.len() != self.env_mults.len() {
            return Err(Error::ShapeMismatch("one unitary per domain block".into()));
        }
        let ch = &self.channel;
        let mut blocks = Vec::with_capacity(unitaries.len());
        for (i, u) in unitaries.iter().enumerate() {
            let m = self.env_mults[i];
            if u.nrows() != m || u.ncols() != m {
                return Err(Error::ShapeMismatch(format!("block {i} needs a {m}x{m} unitary")));
            }
            let n = ch.domain().block(i);
            let off = self.rep.offset(i);
            let kraus: Vec<CMatrix> = (0..m)
                .map(|r| {
                    let mut k = zeros(n, self.isometry.ncols());
                    for s in 0..m {
                        for a in 0..n {
                            let row = self.isometry.row(off + a * m + s) * u[(r, s)];
                            let mut dst = k.row_mut(a);
                            dst += row;
                        }
                    }
                    k
                })
                .collect();
            blocks.push(kraus);
        }
        from_kraus_blocks(ch, &blocks)
    }
}

fn numerical_rank(a: &CMatrix) -> usize {
    if a.is_empty() {
        return 0;
    }
    let sv = a.clone().singular_values();
    let top = sv.iter().cloned().fold(0.0, f64::max);
    sv.iter().filter(|&&s| s > RANK_TOL * top.max(1.0)).count()
}

/// Unitary `W` with `W V₁ = V₂` and `W π₁(A) = π₂(A) W`, from the least-squares
/// solution of `W [π₁(E_u)V₁]_u = [π₂(E_u)V₂]_u`. Returns `W` and the residual.
pub fn intertwiner(a: &StinespringRep, b: &StinespringRep) -> Result<(CMatrix, f64)> {
    if a.channel.domain() != b.channel.domain() || a.total_dim != b.total_dim {
        return Err(Error::DimMismatch {
            left: a.total_dim,
            right: b.total_dim,
        });
    }
    let s1 = a.cyclic_vectors()?;
    let s2 = b.cyclic_vectors()?;
    let pinv = s1
        .clone()
        .pseudo_inverse(1e-12)
        .map_err(|e| Error::NumericalFailure(e.to_string()))?;
    let w = &s2 * pinv;
    let mut residual = frob(&(&w * &s1 - &s2));
    residual = residual.max(frob(&(w.adjoint() * &w - identity(a.total_dim))));
    Ok((w, residual))
}

/// Commutant conjugate `B ↦ V*(⊕ 1_{n_i} ⊗ B_i)V` on `⊕ M_{m_i}` (zero
/// multiplicities omitted).
pub fn commutant_conjugate(ch: &Channel) -> Result<Channel> {
    let st = minimal_stinespring(ch)?;
    conjugate_from_stinespring(&st)
}

pub fn conjugate_from_stinespring(st: &StinespringRep) -> Result<Channel> {
    let domain = st
        .commutant_algebra()
        .ok_or_else(|| Error::NumericalFailure("channel has no Kraus operators".into()))?;
    let codomain = st.channel.codomain().clone();
    Channel::from_action(domain, codomain.clone(), |b| {
        let big = st.rep.embed_commutant(b)?;
        let out = st.isometry.adjoint() * big * &st.isometry;
        Ok(AlgebraElement::from_block(&codomain, 0, out))
    })
}

/// POVM `M_i = V* P_i V` with orthogonal projections `P_i` on `C^K`.
#[derive(Debug, Clone)]
pub struct NaimarkDilation {
    pub povm: Povm,
    pub pvm_projections: Vec<CMatrix>,
    pub isometry: CMatrix,
}

pub fn naimark_dilation(povm: &Povm) -> Result<NaimarkDilation> {
    let d = povm.dim();
    let mut rows: Vec<Vec<crate::numerics::C64>> = Vec::new();
    let mut ranges = Vec::with_capacity(povm.len());
    for e in povm.effects() {
        let start = rows.len();
        let eig = herm_eig(e)?;
        let top = eig.max();
        if top > f64::EPSILON {
            for k in (0..d).rev() {
                let lambda = eig.eigenvalues[k];
                if lambda <= CHOI_RANK_TOL * top {
                    break;
                }
                let mut w = eig.eigenvectors.column(k).into_owned();
                fix_phase(&mut w, 1e-9);
                rows.push(w.iter().map(|z| z.conj() * lambda.sqrt()).collect());
            }
        }
        ranges.push(start..rows.len());
    }
    let k = rows.len();
    let isometry = CMatrix::from_fn(k, d, |r, c| rows[r][c]);
    let pvm_projections = ranges
        .into_iter()
        .map(|range| {
            let mut p = zeros(k, k);
            for r in range {
                p[(r, r)] = crate::numerics::c64(1.0, 0.0);
            }
            p
        })
        .collect();
    Ok(NaimarkDilation {
        povm: povm.clone(),
        pvm_projections,
        isometry,
    })
}

impl NaimarkDilation {
    pub fn total_dim(&self) -> usize {
        self.isometry.nrows()
    }

    pub fn isometry_error(&self) -> f64 {
        let d = self.isometry.ncols();
        frob(&(self.isometry.adjoint() * &self.isometry - identity(d)))
    }

    pub fn reconstruction_error(&self) -> f64 {
        self.pvm_projections
            .iter()
            .zip(self.povm.effects())
            .map(|(p, m)| frob(&(self.isometry.adjoint() * p * &self.isometry - m)))
            .fold(0.0, f64::max)
    }

    /// Worst of `‖P_i P_j − δ_ij P_i‖_F` and `‖Σ P_i − 1‖_F`.
    pub fn projection_error(&self) -> f64 {
        let k = self.total_dim();
        let mut worst: f64 = 0.0;
        let mut sum = zeros(k, k);
        for (i, p) in self.pvm_projections.iter().enumerate() {
            sum += p;
            for (j, q) in self.pvm_projections.iter().enumerate() {
                let target = if i == j { p.clone() } else { zeros(k, k) };
                worst = worst.max(frob(&(p * q - target)));
            }
        }
        worst.max(frob(&(sum - identity(k))))
    }

    pub fn is_minimal(&self) -> bool {
        let d = self.isometry.ncols();
        let n = self.pvm_projections.len();
        let mut stacked = zeros(self.total_dim(), n * d);
        for (i, p) in self.pvm_projections.iter().enumerate() {
            stacked
                .view_mut((0, i * d), (self.total_dim(), d))
                .copy_from(&(p * &self.isometry));
        }
        numerical_rank(&stacked) == self.total_dim()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::commutant_basis;
    use crate::channel::{qc_channel, random_channel};
    use crate::numerics::{c64, haar_unitary, matrix_unit, psd_rank};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn trine() -> Povm {
        let effects = (0..3)
            .map(|k| {
                let t = 2.0 * std::f64::consts::PI * k as f64 / 3.0;
                let v = [c64((t / 2.0).cos(), 0.0), c64((t / 2.0).sin(), 0.0)];
                CMatrix::from_fn(2, 2, |a, b| v[a] * v[b].conj() * (2.0 / 3.0))
            })
            .collect();
        Povm::new(effects).unwrap()
    }

    fn check(st: &StinespringRep) {
        assert!(st.isometry_error() <= 1e-9, "isometry {}", st.isometry_error());
        assert!(st.reconstruction_error().unwrap() <= 1e-9);
        assert!(st.is_minimal().unwrap());
    }

    #[test]
    fn stinespring_examples() {
        let id = minimal_stinespring(&Channel::identity(&FdAlgebra::full(2))).unwrap();
        assert_eq!(id.total_dim, 2);
        check(&id);
        let v = &id.isometry;
        assert!(frob(&(v.adjoint() * v - identity(2))) < 1e-12);

        let sharp = Povm::new(vec![matrix_unit(2, 0, 0), matrix_unit(2, 1, 1)]).unwrap();
        let st = minimal_stinespring(&qc_channel(&sharp)).unwrap();
        assert_eq!(st.env_mults, vec![1, 1]);
        assert_eq!(st.total_dim, 2);
        check(&st);

        let dep = minimal_stinespring(&Channel::completely_depolarizing(2, 2)).unwrap();
        assert_eq!(dep.total_dim, 8);
        assert_eq!(dep.env_mults, vec![4]);
        check(&dep);
    }

    #[test]
    fn stinespring_errors() {
        assert!(matches!(
            minimal_stinespring(&Channel::transpose(2)),
            Err(Error::NotCp { .. })
        ));
        let ch = random_channel(&FdAlgebra::full(2), &FdAlgebra::new(vec![1, 1]).unwrap(), 1);
        assert!(matches!(
            minimal_stinespring(&ch),
            Err(Error::CodomainNotFullBlock(_))
        ));
    }

    #[test]
    fn random_stinespring_and_commutant_dimension() {
        for seed in 0..8 {
            let dom = [vec![2], vec![1, 1], vec![2, 1]][seed as usize % 3].clone();
            let ch = random_channel(&FdAlgebra::new(dom).unwrap(), &FdAlgebra::full(2), seed);
            let st = minimal_stinespring(&ch).unwrap();
            check(&st);
            if st.total_dim <= 8 {
                let gens: Vec<CMatrix> = ch
                    .domain()
                    .hermitian_basis()
                    .iter()
                    .map(|x| st.rep.embed(x).unwrap())
                    .collect();
                let comm = commutant_basis(&gens, st.total_dim, 1e-9);
                let expected: usize = st.env_mults.iter().map(|m| m * m).sum();
                assert_eq!(comm.len(), expected);
                // Closed-form commutant elements commute with π(A).
                let c = st.commutant_algebra().unwrap();
                let b = AlgebraElement::random(&c, &mut ChaCha8Rng::seed_from_u64(seed));
                let big = st.rep.embed_commutant(&b).unwrap();
                for g in &gens {
                    assert!(frob(&(g * &big - &big * g)) < 1e-10);
                }
            }
        }
    }

    #[test]
    fn intertwiner_between_rotated_reps() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for seed in 0..5 {
            let ch = random_channel(&FdAlgebra::new(vec![2, 1]).unwrap(), &FdAlgebra::full(2), seed);
            let a = minimal_stinespring(&ch).unwrap();
            let us: Vec<CMatrix> = a.env_mults.iter().map(|&m| haar_unitary(m, &mut rng)).collect();
            let b = a.rotate_environment(&us).unwrap();
            check(&b);
            let (w, res) = intertwiner(&a, &b).unwrap();
            assert!(res <= 1e-8, "residual {res}");
            assert!(frob(&(&w * &a.isometry - &b.isometry)) <= 1e-8);
        }
    }

    #[test]
    fn conjugate_examples() {
        let c = commutant_conjugate(&Channel::identity(&FdAlgebra::full(3))).unwrap();
        assert_eq!(c.domain().blocks(), &[1]);
        let one = AlgebraElement::identity(c.domain()).scale(2.5);
        assert!(frob(&(c.apply(&one).unwrap().block(0) - identity(3).scale(2.5))) < 1e-12);

        let sharp = Povm::new(vec![matrix_unit(2, 0, 0), matrix_unit(2, 1, 1)]).unwrap();
        let qc = qc_channel(&sharp);
        let c = commutant_conjugate(&qc).unwrap();
        assert_eq!(c.domain().blocks(), &[1, 1]);
        assert!(c.is_channel());

        for seed in 0..5 {
            let ch = random_channel(&FdAlgebra::new(vec![2, 1]).unwrap(), &FdAlgebra::full(3), seed);
            let c = commutant_conjugate(&ch).unwrap();
            assert!(c.is_channel());
        }
    }

    #[test]
    fn zero_component_is_dropped() {
        // Block 1 of the domain is never used.
        let dom = FdAlgebra::new(vec![2, 1]).unwrap();
        let cod = FdAlgebra::full(2);
        let ch = Channel::from_action(dom, cod.clone(), |x| {
            Ok(AlgebraElement::from_block(&cod, 0, x.block(0).clone()))
        })
        .unwrap();
        let st = minimal_stinespring(&ch).unwrap();
        assert_eq!(st.env_mults, vec![1, 0]);
        check(&st);
        assert_eq!(commutant_conjugate(&ch).unwrap().domain().blocks(), &[1]);
    }

    #[test]
    fn naimark_examples() {
        let sharp = Povm::new(vec![matrix_unit(2, 0, 0), matrix_unit(2, 1, 1)]).unwrap();
        let nd = naimark_dilation(&sharp).unwrap();
        assert_eq!(nd.total_dim(), 2);
        let v = &nd.isometry;
        assert!(frob(&(v * v.adjoint() - identity(2))) < 1e-12);
        for (p, m) in nd.pvm_projections.iter().zip(sharp.effects()) {
            assert!(frob(&(p - v * m * v.adjoint())) < 1e-12);
        }

        let t = naimark_dilation(&trine()).unwrap();
        assert_eq!(t.total_dim(), 3);
        assert!(t.reconstruction_error() <= 1e-9);
        assert!(t.isometry_error() <= 1e-9);
        assert!(t.projection_error() <= 1e-12);
        assert!(t.is_minimal());

        let triv = naimark_dilation(&Povm::trivial(3)).unwrap();
        assert_eq!(triv.total_dim(), 3);
        assert!(triv.reconstruction_error() <= 1e-12);
    }

    #[test]
    fn naimark_matches_qc_stinespring() {
        let povm = trine();
        let nd = naimark_dilation(&povm).unwrap();
        let st = minimal_stinespring(&qc_channel(&povm)).unwrap();
        let expected: usize = povm.effects().iter().map(|e| psd_rank(e, 1e-9).unwrap()).sum();
        assert_eq!(st.total_dim, expected);
        assert_eq!(nd.total_dim(), expected);
        // The Stinespring PVM is π(δ_i); relate both by a unitary on C^K.
        // Solve W P_i V_N = π(δ_i) V_S over all i.
        let d = povm.dim();
        let k = povm.len();
        let mut s1 = zeros(expected, k * d);
        let mut s2 = zeros(expected, k * d);
        for i in 0..k {
            let delta = AlgebraElement::unit(st.channel.domain(), i, 0, 0);
            s1.view_mut((0, i * d), (expected, d))
                .copy_from(&(&nd.pvm_projections[i] * &nd.isometry));
            s2.view_mut((0, i * d), (expected, d))
                .copy_from(&(st.rep.embed(&delta).unwrap() * &st.isometry));
        }
        let w = &s2 * s1.pseudo_inverse(1e-12).unwrap();
        assert!(frob(&(&w * &nd.isometry - &st.isometry)) < 1e-9);
        assert!(frob(&(w.adjoint() * &w - identity(expected))) < 1e-9);
        for (i, p) in nd.pvm_projections.iter().enumerate() {
            let delta = AlgebraElement::unit(st.channel.domain(), i, 0, 0);
            let q = st.rep.embed(&delta).unwrap();
            assert!(frob(&(&w * p * w.adjoint() - q)) < 1e-9);
        }
    }
}
