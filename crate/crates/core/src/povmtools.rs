//! POVM canonical forms, maximality, maximal refinements and fixtures.

use std::cmp::Ordering;

use rand::Rng;

use crate::algebra::{AlgebraElement, FdAlgebra};
use crate::channel::{qc_channel, Channel, Povm};
use crate::dilation::commutant_conjugate;
use crate::error::{Error, Result};
use crate::feasibility::Engine;
use crate::numerics::{c64, fix_phase, frob, herm_eig, identity, psd_rank, random_gaussian, zeros, CMatrix, RMatrix, C64};
use crate::order::{channel_equiv_with, StochasticKernel, Verdict};

/// Effects with trace at or below this are treated as zero.
const ZERO_TRACE: f64 = 1e-12;
/// Trace-normalised effects closer than this are proportional.
const PROPORTIONAL_TOL: f64 = 1e-8;
/// Spectral pieces below this fraction of the top eigenvalue are dropped.
const REFINE_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct CanonicalPovm {
    pub povm: Povm,
    /// `k_canonical × k_input`, 0/1 entries: which input outcome went where.
    /// Zero input effects are sent to outcome 0.
    pub merge_map: StochasticKernel,
    /// `k_input × k_canonical` with `M_i = Σ_c split_c,i C_c`.
    pub split_map: StochasticKernel,
}

fn lex_cmp(a: &CMatrix, b: &CMatrix) -> Ordering {
    for (x, y) in a.transpose().iter().zip(b.transpose().iter()) {
        let o = x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im));
        if o != Ordering::Equal {
            return o;
        }
    }
    Ordering::Equal
}

/// Drops zero effects and merges proportional ones.
pub fn canonicalize(m: &Povm) -> Result<CanonicalPovm> {
    let k = m.len();
    let mut groups: Vec<(CMatrix, CMatrix, Vec<usize>)> = Vec::new(); // (normalised rep, sum, members)
    let mut zeros_idx = Vec::new();
    for (i, e) in m.effects().iter().enumerate() {
        let tr = e.trace().re;
        if tr <= ZERO_TRACE {
            zeros_idx.push(i);
            continue;
        }
        let normalised = e / c64(tr, 0.0);
        match groups
            .iter_mut()
            .find(|(rep, _, _)| frob(&(rep - &normalised)) <= PROPORTIONAL_TOL)
        {
            Some(g) => {
                g.1 += e;
                g.2.push(i);
            }
            None => groups.push((normalised, e.clone(), vec![i])),
        }
    }
    groups.sort_by(|a, b| {
        b.1.trace()
            .re
            .total_cmp(&a.1.trace().re)
            .then_with(|| lex_cmp(&a.1, &b.1))
    });
    let kc = groups.len();
    let mut merge = RMatrix::zeros(kc, k);
    let mut split = RMatrix::zeros(k, kc);
    for (c, (_, sum, members)) in groups.iter().enumerate() {
        let total = sum.trace().re;
        for &i in members {
            merge[(c, i)] = 1.0;
            split[(i, c)] = m.effect(i).trace().re / total;
        }
    }
    for &i in &zeros_idx {
        merge[(0, i)] = 1.0;
    }
    let effects = groups.into_iter().map(|g| g.1).collect();
    Ok(CanonicalPovm {
        povm: Povm::new(effects)?,
        merge_map: StochasticKernel { matrix: merge },
        split_map: StochasticKernel { matrix: split },
    })
}

#[derive(Debug, Clone)]
pub struct Maximality {
    /// Route (a): every canonical effect has rank one.
    pub maximal: bool,
    pub canonical_ranks: Vec<usize>,
    /// Route (b): `Γ^M ∼ (Γ^M)^c`.
    pub conjugate_route: Verdict,
}

impl Maximality {
    pub fn routes_agree(&self) -> bool {
        match self.conjugate_route {
            Verdict::Yes => self.maximal,
            Verdict::No => !self.maximal,
            Verdict::Undecided => true,
        }
    }
}

pub fn is_maximal(m: &Povm) -> Result<Maximality> {
    is_maximal_with(m, &Engine::default())
}

pub fn is_maximal_with(m: &Povm, engine: &Engine) -> Result<Maximality> {
    let canon = canonicalize(m)?;
    let canonical_ranks = canon
        .povm
        .effects()
        .iter()
        .map(|e| psd_rank(e, 1e-9))
        .collect::<Result<Vec<_>>>()?;
    let maximal = canonical_ranks.iter().all(|&r| r == 1);
    let qc = qc_channel(m);
    let conj = commutant_conjugate(&qc)?;
    let conjugate_route = channel_equiv_with(&qc, &conj, engine)?.verdict;
    Ok(Maximality {
        maximal,
        canonical_ranks,
        conjugate_route,
    })
}

#[derive(Debug, Clone)]
pub struct Refinement {
    pub povm: Povm,
    /// `k_input × k_refined` 0/1 kernel with `M = merge(refined)`.
    pub merge: StochasticKernel,
}

/// Orthonormal basis of the span of `vecs` obtained by Gram–Schmidt on the
/// projected standard basis vectors (deterministic for degenerate spaces).
fn canonical_basis(vecs: &[nalgebra::DVector<C64>], d: usize) -> Vec<nalgebra::DVector<C64>> {
    let mut proj = zeros(d, d);
    for v in vecs {
        proj += v * v.adjoint();
    }
    let mut out: Vec<nalgebra::DVector<C64>> = Vec::new();
    for k in 0..d {
        if out.len() == vecs.len() {
            break;
        }
        let mut w = proj.column(k).into_owned();
        for u in &out {
            let c = u.dotc(&w);
            w -= u * c;
        }
        let n = w.norm();
        if n > 1e-6 {
            out.push(w / c64(n, 0.0));
        }
    }
    out
}

fn dominant_index(v: &nalgebra::DVector<C64>) -> usize {
    let top = v.iter().map(|z| z.norm()).fold(0.0, f64::max);
    v.iter().position(|z| z.norm() >= top - 1e-9).unwrap_or(0)
}

/// Splits every effect into rank-one spectral pieces `λ|v⟩⟨v|`.
pub fn maximal_refinement(m: &Povm) -> Result<Refinement> {
    let d = m.dim();
    let mut effects = Vec::new();
    let mut owner = Vec::new();
    for (i, e) in m.effects().iter().enumerate() {
        let eig = herm_eig(e)?;
        let top = eig.max();
        if top <= 0.0 {
            continue;
        }
        let kept: Vec<usize> = (0..d).filter(|&k| eig.eigenvalues[k] > REFINE_TOL * top).collect();
        let mut pieces: Vec<(f64, nalgebra::DVector<C64>)> = Vec::new();
        let mut start = 0;
        while start < kept.len() {
            let lambda = eig.eigenvalues[kept[start]];
            let mut end = start + 1;
            while end < kept.len() && (eig.eigenvalues[kept[end]] - lambda).abs() <= 1e-8 * top {
                end += 1;
            }
            let cluster: Vec<_> = kept[start..end].iter().map(|&k| eig.eigenvectors.column(k).into_owned()).collect();
            let mean = kept[start..end].iter().map(|&k| eig.eigenvalues[k]).sum::<f64>() / (end - start) as f64;
            for mut v in canonical_basis(&cluster, d) {
                fix_phase(&mut v, 1e-9);
                pieces.push((mean, v));
            }
            start = end;
        }
        pieces.sort_by(|a, b| dominant_index(&a.1).cmp(&dominant_index(&b.1)).then(b.0.total_cmp(&a.0)));
        for (lambda, v) in pieces {
            effects.push(&v * v.adjoint() * c64(lambda, 0.0));
            owner.push(i);
        }
    }
    // Absorb the rounding of the dropped pieces so the result sums to 1.
    let mut total = zeros(d, d);
    for e in &effects {
        total += e;
    }
    let mut merge = RMatrix::zeros(m.len(), effects.len());
    for (r, &i) in owner.iter().enumerate() {
        merge[(i, r)] = 1.0;
    }
    let err = frob(&(total - identity(d)));
    if err > 1e-9 {
        return Err(Error::InvalidPovm(format!("refinement does not sum to 1 (error {err:.3e})")));
    }
    Ok(Refinement {
        povm: Povm::new(effects)?,
        merge: StochasticKernel { matrix: merge },
    })
}

/// Qubit effects `(1 ± η n·σ)/2`.
pub fn noisy_observable(axis: [f64; 3], eta: f64) -> Result<Povm> {
    let norm = axis.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::BadAxis { norm });
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::BadEta(eta));
    }
    let [x, y, z] = axis;
    let ns = CMatrix::from_row_slice(2, 2, &[c64(z, 0.0), c64(x, -y), c64(x, y), c64(-z, 0.0)]);
    let plus = (identity(2) + &ns * c64(eta, 0.0)) * c64(0.5, 0.0);
    let minus = (identity(2) - &ns * c64(eta, 0.0)) * c64(0.5, 0.0);
    Povm::new(vec![plus, minus])
}

fn rank_one(v: &[C64], weight: f64) -> CMatrix {
    let d = v.len();
    CMatrix::from_fn(d, d, |a, b| v[a] * v[b].conj() * weight)
}

/// Qubit trine `{(2/3)|ψ_k⟩⟨ψ_k|}` with real states at 120° on the Bloch circle.
pub fn trine() -> Povm {
    let effects = (0..3)
        .map(|k| {
            let half = std::f64::consts::PI * k as f64 / 3.0;
            rank_one(&[c64(half.cos(), 0.0), c64(half.sin(), 0.0)], 2.0 / 3.0)
        })
        .collect();
    Povm::new(effects).expect("trine sums to the identity")
}

/// Tetrahedral qubit SIC `{(1 + n_k·σ)/4}`.
pub fn tetrahedral_sic() -> Povm {
    let s = 1.0 / 3.0f64.sqrt();
    let axes = [[s, s, s], [s, -s, -s], [-s, s, -s], [-s, -s, s]];
    let effects = axes
        .iter()
        .map(|&[x, y, z]| {
            let ns = CMatrix::from_row_slice(2, 2, &[c64(z, 0.0), c64(x, -y), c64(x, y), c64(-z, 0.0)]);
            (identity(2) + ns) * c64(0.25, 0.0)
        })
        .collect();
    Povm::new(effects).expect("SIC sums to the identity")
}

/// Computational-basis projective measurement on `C^d`.
pub fn sharp(d: usize) -> Povm {
    Povm::new((0..d).map(|k| crate::numerics::matrix_unit(d, k, k)).collect()).expect("projective")
}

/// Lüders channel `A ↦ Σ P_i A P_i` on `M_d` for a POVM given by projections
/// (for general effects the square roots are used).
pub fn luders_channel(m: &Povm) -> Result<Channel> {
    let roots = m.effects().iter().map(psd_sqrt).collect::<Result<Vec<_>>>()?;
    let alg = FdAlgebra::full(m.dim());
    Channel::from_action(alg.clone(), alg.clone(), |x| {
        let mut acc = zeros(m.dim(), m.dim());
        for r in &roots {
            acc += r * x.block(0) * r;
        }
        Ok(AlgebraElement::from_block(&alg, 0, acc))
    })
}

pub(crate) fn psd_sqrt(a: &CMatrix) -> Result<CMatrix> {
    let eig = herm_eig(a)?;
    let d = a.nrows();
    let mut out = zeros(d, d);
    for k in 0..d {
        let l = eig.eigenvalues[k].max(0.0).sqrt();
        let v = eig.eigenvectors.column(k);
        out += v * v.adjoint() * c64(l, 0.0);
    }
    Ok(out)
}

fn inverse_sqrt(a: &CMatrix) -> Result<CMatrix> {
    let eig = herm_eig(a)?;
    let d = a.nrows();
    let mut out = zeros(d, d);
    for k in 0..d {
        let l = eig.eigenvalues[k];
        if l <= 0.0 {
            return Err(Error::InvalidPovm("random effects do not span the space".into()));
        }
        let v = eig.eigenvectors.column(k);
        out += v * v.adjoint() * c64(1.0 / l.sqrt(), 0.0);
    }
    Ok(out)
}

/// Random POVM `M_i = S^{-1/2} G_i G_i* S^{-1/2}` with `rank(M_i) = ranks[i]`.
pub fn random_povm_with_ranks<R: Rng + ?Sized>(d: usize, ranks: &[usize], rng: &mut R) -> Result<Povm> {
    if ranks.iter().sum::<usize>() < d || ranks.iter().any(|&r| r == 0 || r > d) {
        return Err(Error::InvalidPovm(format!("ranks {ranks:?} cannot form a POVM on C^{d}")));
    }
    let gs: Vec<CMatrix> = ranks.iter().map(|&r| random_gaussian(d, r, rng)).collect();
    let mut s = zeros(d, d);
    for g in &gs {
        s += g * g.adjoint();
    }
    let w = inverse_sqrt(&s)?;
    let effects: Vec<CMatrix> = gs
        .iter()
        .map(|g| {
            let e = &w * g * g.adjoint() * &w;
            crate::numerics::hermitian_part(&e)
        })
        .collect();
    // Re-normalise the rounding of the last effect.
    let mut total = zeros(d, d);
    for e in &effects {
        total += e;
    }
    if frob(&(total - identity(d))) > 1e-9 {
        return Err(Error::InvalidPovm("random POVM failed to normalise".into()));
    }
    Povm::new(effects)
}

/// Random POVM with `k` outcomes and ranks drawn uniformly.
pub fn random_povm<R: Rng + ?Sized>(d: usize, k: usize, rng: &mut R) -> Povm {
    loop {
        let ranks: Vec<usize> = (0..k).map(|_| rng.random_range(1..=d)).collect();
        if let Ok(p) = random_povm_with_ranks(d, &ranks, rng) {
            return p;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::matrix_unit;
    use crate::order::povm_leq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn p(k: usize) -> CMatrix {
        matrix_unit(2, k, k)
    }

    #[test]
    fn canonicalize_examples() {
        let c = canonicalize(&Povm::new(vec![p(0), p(1), zeros(2, 2)]).unwrap()).unwrap();
        assert_eq!(c.povm.len(), 2);

        let quarters = Povm::new(vec![
            identity(2).scale(0.25),
            identity(2).scale(0.25),
            identity(2).scale(0.5),
        ])
        .unwrap();
        let c = canonicalize(&quarters).unwrap();
        assert_eq!(c.povm.len(), 1);
        assert!(frob(&(c.povm.effect(0) - identity(2))) < 1e-12);

        let split = Povm::new(vec![p(0).scale(0.5), p(0).scale(0.5), p(1)]).unwrap();
        let c = canonicalize(&split).unwrap();
        assert_eq!(c.povm.len(), 2);
        assert_eq!(povm_leq(&split, &c.povm).unwrap().verdict, Verdict::Yes);
        assert_eq!(povm_leq(&c.povm, &split).unwrap().verdict, Verdict::Yes);
        assert!(c.merge_map.reconstruction_error(&c.povm, &split) < 1e-12);
        assert!(c.split_map.reconstruction_error(&split, &c.povm) < 1e-12);
    }

    #[test]
    fn canonicalize_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let m = random_povm(3, 4, &mut rng);
            let once = canonicalize(&m).unwrap().povm;
            let twice = canonicalize(&once).unwrap().povm;
            assert_eq!(once.len(), twice.len());
            for (a, b) in once.effects().iter().zip(twice.effects()) {
                assert!(frob(&(a - b)) <= 1e-10);
            }
        }
    }

    #[test]
    fn maximality_examples() {
        let m = is_maximal(&sharp(2)).unwrap();
        assert!(m.maximal && m.routes_agree());
        let t = is_maximal(&Povm::trivial(2)).unwrap();
        assert!(!t.maximal);
        assert_eq!(t.conjugate_route, Verdict::No);
        let tr = is_maximal(&trine()).unwrap();
        assert!(tr.maximal);
        assert_eq!(tr.conjugate_route, Verdict::Yes);
    }

    #[test]
    fn refinement_examples() {
        let r = maximal_refinement(&Povm::trivial(2)).unwrap();
        assert_eq!(r.povm.len(), 2);
        assert!(frob(&(r.povm.effect(0) - p(0))) < 1e-12);
        assert!(frob(&(r.povm.effect(1) - p(1))) < 1e-12);

        let noisy = noisy_observable([0.0, 0.0, 1.0], 0.5).unwrap();
        let r = maximal_refinement(&noisy).unwrap();
        let weights: Vec<f64> = r.povm.effects().iter().map(|e| e.trace().re).collect();
        let expected = [0.75, 0.25, 0.25, 0.75];
        for (w, e) in weights.iter().zip(expected) {
            assert!((w - e).abs() < 1e-12);
        }
        assert!(r.merge.reconstruction_error(&noisy, &r.povm) < 1e-12);
        assert!(canonicalize(&r.povm).unwrap().povm.len() == 2);

        let t = maximal_refinement(&trine()).unwrap();
        assert_eq!(t.povm.len(), 3);
        for (a, b) in t.povm.effects().iter().zip(trine().effects()) {
            assert!(frob(&(a - b)) < 1e-10);
        }
    }

    #[test]
    fn noisy_observable_examples() {
        let z = noisy_observable([0.0, 0.0, 1.0], 1.0).unwrap();
        assert!(frob(&(z.effect(0) - p(0))) < 1e-15);
        let flat = noisy_observable([0.6, 0.0, 0.8], 0.0).unwrap();
        assert!(frob(&(flat.effect(1) - identity(2).scale(0.5))) < 1e-15);
        let x = noisy_observable([1.0, 0.0, 0.0], 0.5).unwrap();
        let e = herm_eig(x.effect(0)).unwrap();
        assert!((e.eigenvalues[0] - 0.25).abs() < 1e-12 && (e.eigenvalues[1] - 0.75).abs() < 1e-12);
        assert!(matches!(noisy_observable([1.0, 1.0, 0.0], 0.5), Err(Error::BadAxis { .. })));
        assert!(matches!(noisy_observable([1.0, 0.0, 0.0], 1.5), Err(Error::BadEta(_))));
    }

    #[test]
    fn fixtures_are_valid() {
        assert_eq!(tetrahedral_sic().len(), 4);
        assert!(luders_channel(&sharp(2)).unwrap().is_channel());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = random_povm_with_ranks(3, &[1, 1, 1, 2], &mut rng).unwrap();
        let ranks: Vec<usize> = m.effects().iter().map(|e| psd_rank(e, 1e-9).unwrap()).collect();
        assert_eq!(ranks, vec![1, 1, 1, 2]);
    }
}
