//! Concatenation preorder for channels, post-processing for POVMs and
//! coarse-graining of statistical experiments, each decided by a feasibility
//! problem over the Choi blocks of the connecting channel.
//!
//! At finite dimension every channel is normal, so the CP and normal-CP
//! versions of the preorder coincide and only one is implemented.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::algebra::{AlgebraElement, FdAlgebra};
use crate::channel::{compose, Channel, Povm};
use crate::error::{Error, Result};
use crate::experiments::{pair, StatExperiment};
use crate::feasibility::{Engine, FeasibilityResult, ProblemBuilder, Status};
use crate::numerics::{c64, frob, identity, zeros, CMatrix, RMatrix};

/// Witness check tolerance in action norm.
pub const WITNESS_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Yes,
    No,
    Undecided,
}

impl Verdict {
    /// Conjunction: any `No` wins, then any `Undecided`.
    pub fn and(self, other: Verdict) -> Verdict {
        match (self, other) {
            (Verdict::No, _) | (_, Verdict::No) => Verdict::No,
            (Verdict::Yes, Verdict::Yes) => Verdict::Yes,
            _ => Verdict::Undecided,
        }
    }

    pub fn from_status(s: Status) -> Self {
        match s {
            Status::Feasible => Verdict::Yes,
            Status::Infeasible => Verdict::No,
            Status::Undecided => Verdict::Undecided,
        }
    }

    pub fn is_decided(self) -> bool {
        self != Verdict::Undecided
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Yes => "yes",
            Verdict::No => "no",
            Verdict::Undecided => "undecided",
        })
    }
}

#[derive(Debug, Clone)]
pub struct PreorderVerdict {
    pub verdict: Verdict,
    /// The connecting channel when `verdict == Yes`.
    pub witness: Option<Channel>,
    /// Feasibility residual, or the independent action-norm check of the witness.
    pub residual: f64,
    pub gap: f64,
    pub solver: String,
}

impl PreorderVerdict {
    pub fn holds(&self) -> bool {
        self.verdict == Verdict::Yes
    }

    fn undecided_from(r: &FeasibilityResult, reason_residual: f64) -> Self {
        Self {
            verdict: Verdict::Undecided,
            witness: None,
            residual: reason_residual,
            gap: r.certificate_gap,
            solver: r.solver.clone(),
        }
    }
}

/// Adds one PSD variable per Choi block of a map `domain → codomain`.
pub(crate) fn choi_variables(b: &mut ProblemBuilder, domain: &FdAlgebra, codomain: &FdAlgebra) -> Vec<usize> {
    let mut idx = Vec::new();
    for &n in domain.blocks() {
        for &m in codomain.blocks() {
            idx.push(b.block(n * m));
        }
    }
    idx
}

/// Channel whose Choi blocks are `vars[range]`.
pub(crate) fn map_from_vars(vars: &[CMatrix], domain: &FdAlgebra, codomain: &FdAlgebra) -> Result<Channel> {
    Channel::from_choi(domain.clone(), codomain.clone(), vars.to_vec())
}

/// Imposes `Ψ(1) = 1` on the map stored in `vars[range]`.
pub(crate) fn unitality(
    b: &mut ProblemBuilder,
    label: &str,
    domain: &FdAlgebra,
    codomain: &FdAlgebra,
    range: std::ops::Range<usize>,
) -> Result<()> {
    let target = AlgebraElement::identity(codomain).into_blocks();
    let (dom, cod) = (domain.clone(), codomain.clone());
    b.equality(label, &target, move |x| {
        let psi = map_from_vars(&x[range.clone()], &dom, &cod)?;
        Ok(psi.apply(&AlgebraElement::identity(&dom))?.into_blocks())
    })
}

pub fn channel_leq(phi1: &Channel, phi2: &Channel) -> Result<PreorderVerdict> {
    channel_leq_with(phi1, phi2, &Engine::default())
}

/// Tests `Φ₁ ≼ Φ₂`: is there a channel `Ψ` with `Φ₁ = Φ₂ ∘ Ψ`?
pub fn channel_leq_with(phi1: &Channel, phi2: &Channel, engine: &Engine) -> Result<PreorderVerdict> {
    if phi1.codomain() != phi2.codomain() {
        return Err(Error::CodomainMismatch {
            left: phi1.codomain().blocks().to_vec(),
            right: phi2.codomain().blocks().to_vec(),
        });
    }
    let dom = phi1.domain().clone();
    let mid = phi2.domain().clone();
    let mut b = ProblemBuilder::new();
    let vars = choi_variables(&mut b, &dom, &mid);
    let range = vars[0]..vars[vars.len() - 1] + 1;
    unitality(&mut b, "unital", &dom, &mid, range.clone())?;
    {
        let (dom, mid) = (dom.clone(), mid.clone());
        b.equality("factor", phi1.choi_blocks(), move |x| {
            let psi = map_from_vars(&x[range.clone()], &dom, &mid)?;
            Ok(compose(phi2, &psi)?.choi_blocks().to_vec())
        })?;
    }
    let problem = b.build()?;
    let r = engine.solve(&problem);
    match r.status {
        Status::Feasible => {
            let psi = map_from_vars(r.witness.as_ref().expect("feasible has witness"), &dom, &mid)?;
            let check = compose(phi2, &psi)?.action_distance(phi1)?;
            if check > WITNESS_TOL {
                return Ok(PreorderVerdict::undecided_from(&r, check));
            }
            Ok(PreorderVerdict {
                verdict: Verdict::Yes,
                witness: Some(psi),
                residual: r.residual.max(check),
                gap: 0.0,
                solver: r.solver,
            })
        }
        _ => Ok(PreorderVerdict {
            verdict: Verdict::from_status(r.status),
            witness: None,
            residual: r.residual,
            gap: r.certificate_gap,
            solver: r.solver,
        }),
    }
}

#[derive(Debug, Clone)]
pub struct EquivVerdict {
    pub verdict: Verdict,
    pub forward: PreorderVerdict,
    pub backward: PreorderVerdict,
}

pub fn channel_equiv(phi1: &Channel, phi2: &Channel) -> Result<EquivVerdict> {
    channel_equiv_with(phi1, phi2, &Engine::default())
}

pub fn channel_equiv_with(phi1: &Channel, phi2: &Channel, engine: &Engine) -> Result<EquivVerdict> {
    let forward = channel_leq_with(phi1, phi2, engine)?;
    let backward = channel_leq_with(phi2, phi1, engine)?;
    Ok(EquivVerdict {
        verdict: forward.verdict.and(backward.verdict),
        forward,
        backward,
    })
}

/// Column-stochastic matrix: rows are target outcomes, columns source outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticKernel {
    pub matrix: RMatrix,
}

impl StochasticKernel {
    pub fn new(matrix: RMatrix) -> Result<Self> {
        let k = Self { matrix };
        let err = k.stochasticity_error();
        if err > 1e-9 {
            return Err(Error::IllFormedProblem(format!(
                "kernel is not column-stochastic (error {err:.3e})"
            )));
        }
        Ok(k)
    }

    /// Worst of entry range violation and column-sum error.
    pub fn stochasticity_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for v in self.matrix.iter() {
            worst = worst.max(-v).max(v - 1.0);
        }
        for j in 0..self.matrix.ncols() {
            worst = worst.max((self.matrix.column(j).sum() - 1.0).abs());
        }
        worst.max(0.0)
    }

    /// `M_i = Σ_j κ_ij N_j`.
    pub fn apply(&self, n: &Povm) -> Vec<CMatrix> {
        (0..self.matrix.nrows())
            .map(|i| {
                let mut acc = zeros(n.dim(), n.dim());
                for (j, e) in n.effects().iter().enumerate() {
                    acc += e * c64(self.matrix[(i, j)], 0.0);
                }
                acc
            })
            .collect()
    }

    /// Worst Frobenius error of `M_i − Σ_j κ_ij N_j`.
    pub fn reconstruction_error(&self, m: &Povm, n: &Povm) -> f64 {
        self.apply(n)
            .iter()
            .zip(m.effects())
            .map(|(a, b)| frob(&(a - b)))
            .fold(0.0, f64::max)
    }

    /// Kernel of `C^{k_M} → C^{k_N}` as the classical channel `f ↦ κᵀ f`.
    pub fn to_channel(&self) -> Channel {
        let (km, kn) = (self.matrix.nrows(), self.matrix.ncols());
        let dom = FdAlgebra::commutative(km);
        let cod = FdAlgebra::commutative(kn);
        let mut choi = Vec::with_capacity(km * kn);
        for i in 0..km {
            for j in 0..kn {
                choi.push(CMatrix::from_element(1, 1, c64(self.matrix[(i, j)], 0.0)));
            }
        }
        Channel::from_choi(dom, cod, choi).expect("1x1 real blocks")
    }
}

#[derive(Debug, Clone)]
pub struct PovmLeq {
    pub verdict: Verdict,
    pub kernel: Option<StochasticKernel>,
    pub residual: f64,
    pub gap: f64,
}

pub fn povm_leq(m: &Povm, n: &Povm) -> Result<PovmLeq> {
    povm_leq_with(m, n, &Engine::default())
}

/// Tests whether `M` is a post-processing of `N`.
pub fn povm_leq_with(m: &Povm, n: &Povm, engine: &Engine) -> Result<PovmLeq> {
    if m.dim() != n.dim() {
        return Err(Error::DimMismatch {
            left: m.dim(),
            right: n.dim(),
        });
    }
    let (km, kn) = (m.len(), n.len());
    let mut b = ProblemBuilder::new();
    for _ in 0..km * kn {
        b.block(1);
    }
    for j in 0..kn {
        let coeffs: Vec<(usize, CMatrix)> = (0..km).map(|i| (i * kn + j, identity(1))).collect();
        b.linear(&format!("column{j}"), &coeffs, 1.0);
    }
    let n_effects = n.effects().to_vec();
    b.equality("reconstruct", m.effects(), move |x| {
        Ok((0..km)
            .map(|i| {
                let mut acc = zeros(n_effects[0].nrows(), n_effects[0].nrows());
                for (j, e) in n_effects.iter().enumerate() {
                    acc += e * x[i * kn + j][(0, 0)];
                }
                acc
            })
            .collect())
    })?;
    let problem = b.build()?;
    let r = engine.solve(&problem);
    if r.status != Status::Feasible {
        return Ok(PovmLeq {
            verdict: Verdict::from_status(r.status),
            kernel: None,
            residual: r.residual,
            gap: r.certificate_gap,
        });
    }
    let w = r.witness.expect("feasible has witness");
    let mut mat = RMatrix::from_fn(km, kn, |i, j| w[i * kn + j][(0, 0)].re.max(0.0));
    for j in 0..kn {
        let s = mat.column(j).sum();
        if s > 0.0 {
            mat.column_mut(j).scale_mut(1.0 / s);
        }
    }
    let kernel = StochasticKernel { matrix: mat };
    let err = kernel.reconstruction_error(m, n);
    if err > engine.options.feas_tol || kernel.stochasticity_error() > 1e-9 {
        return Ok(PovmLeq {
            verdict: Verdict::Undecided,
            kernel: None,
            residual: err,
            gap: 0.0,
        });
    }
    Ok(PovmLeq {
        verdict: Verdict::Yes,
        kernel: Some(kernel),
        residual: err,
        gap: 0.0,
    })
}

pub fn experiment_leq(e: &StatExperiment, f: &StatExperiment) -> Result<PreorderVerdict> {
    experiment_leq_with(e, f, &Engine::default())
}

/// Worst `|ψ_θ(Γ(H)) − φ_θ(H)|` over the Hermitian basis of `E`'s algebra.
pub fn coarse_graining_error(e: &StatExperiment, f: &StatExperiment, gamma: &Channel) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for h in e.algebra().hermitian_basis() {
        let image = gamma.apply(&h)?;
        for (phi, psi) in e.states().iter().zip(f.states()) {
            worst = worst.max((pair(psi, &image) - pair(phi, &h)).norm());
        }
    }
    Ok(worst)
}

/// Tests whether `E` is a coarse-graining of `F`: `φ_θ = ψ_θ ∘ Γ` for a channel
/// `Γ` from `E`'s algebra into `F`'s.
pub fn experiment_leq_with(e: &StatExperiment, f: &StatExperiment, engine: &Engine) -> Result<PreorderVerdict> {
    if e.len() != f.len() {
        return Err(Error::ParameterMismatch {
            left: e.len(),
            right: f.len(),
        });
    }
    let dom = e.algebra().clone();
    let cod = f.algebra().clone();
    let mut b = ProblemBuilder::new();
    let vars = choi_variables(&mut b, &dom, &cod);
    let range = vars[0]..vars[vars.len() - 1] + 1;
    unitality(&mut b, "unital", &dom, &cod, range.clone())?;
    let basis = dom.hermitian_basis();
    let mut target = Vec::new();
    for phi in e.states() {
        for h in &basis {
            target.push(CMatrix::from_element(1, 1, c64(pair(phi, h).re, 0.0)));
        }
    }
    {
        let (dom, cod, basis) = (dom.clone(), cod.clone(), basis.clone());
        let states = f.states().to_vec();
        b.equality("states", &target, move |x| {
            let gamma = map_from_vars(&x[range.clone()], &dom, &cod)?;
            let images: Vec<AlgebraElement> = basis.iter().map(|h| gamma.apply(h)).collect::<Result<_>>()?;
            let mut out = Vec::with_capacity(states.len() * images.len());
            for psi in &states {
                for img in &images {
                    out.push(CMatrix::from_element(1, 1, c64(pair(psi, img).re, 0.0)));
                }
            }
            Ok(out)
        })?;
    }
    let problem = b.build()?;
    let r = engine.solve(&problem);
    if r.status != Status::Feasible {
        return Ok(PreorderVerdict {
            verdict: Verdict::from_status(r.status),
            witness: None,
            residual: r.residual,
            gap: r.certificate_gap,
            solver: r.solver,
        });
    }
    let gamma = map_from_vars(r.witness.as_ref().expect("feasible has witness"), &dom, &cod)?;
    let check = coarse_graining_error(e, f, &gamma)?;
    if check > WITNESS_TOL {
        return Ok(PreorderVerdict::undecided_from(&r, check));
    }
    Ok(PreorderVerdict {
        verdict: Verdict::Yes,
        witness: Some(gamma),
        residual: r.residual.max(check),
        gap: 0.0,
        solver: r.solver,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{qc_channel, random_channel};
    use crate::experiments::{associated_channel, random_experiment};
    use crate::numerics::matrix_unit;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sharp_z() -> Povm {
        Povm::new(vec![matrix_unit(2, 0, 0), matrix_unit(2, 1, 1)]).unwrap()
    }

    #[test]
    fn reflexive() {
        for seed in 0..3 {
            let phi = random_channel(&FdAlgebra::new(vec![2, 1]).unwrap(), &FdAlgebra::full(2), seed);
            let v = channel_leq(&phi, &phi).unwrap();
            assert_eq!(v.verdict, Verdict::Yes);
            let w = v.witness.unwrap();
            assert!(compose(&phi, &w).unwrap().action_distance(&phi).unwrap() <= WITNESS_TOL);
        }
    }

    #[test]
    fn depolarizing_below_identity() {
        let dep = Channel::depolarizing(2, 0.5);
        let id = Channel::identity(&FdAlgebra::full(2));
        let v = channel_leq(&dep, &id).unwrap();
        assert_eq!(v.verdict, Verdict::Yes);
        // Ψ is forced to be the depolarizing channel itself.
        assert!(v.witness.unwrap().action_distance(&dep).unwrap() < 1e-6);
    }

    #[test]
    fn identity_not_below_constant() {
        let id = Channel::identity(&FdAlgebra::full(2));
        let c = Channel::completely_depolarizing(2, 2);
        let v = channel_leq(&id, &c).unwrap();
        assert_eq!(v.verdict, Verdict::No);
        assert!(v.gap >= 0.1);
        assert_eq!(channel_equiv(&id, &c).unwrap().verdict, Verdict::No);
    }

    #[test]
    fn codomain_mismatch() {
        let a = Channel::identity(&FdAlgebra::full(2));
        let b = Channel::identity(&FdAlgebra::full(3));
        assert!(matches!(channel_leq(&a, &b), Err(Error::CodomainMismatch { .. })));
    }

    #[test]
    fn transitivity_of_witnesses() {
        let id = Channel::identity(&FdAlgebra::full(2));
        let d1 = Channel::depolarizing(2, 0.8);
        let d2 = Channel::depolarizing(2, 0.4);
        let w12 = channel_leq(&d2, &d1).unwrap().witness.unwrap();
        let w23 = channel_leq(&d1, &id).unwrap().witness.unwrap();
        let composed = compose(&w23, &w12).unwrap();
        let err = compose(&id, &composed).unwrap().action_distance(&d2).unwrap();
        assert!(err <= 2e-6);
    }

    #[test]
    fn povm_examples() {
        let n = Povm::new(vec![
            matrix_unit(2, 0, 0).scale(0.5),
            matrix_unit(2, 0, 0).scale(0.5),
            matrix_unit(2, 1, 1),
        ])
        .unwrap();
        let v = povm_leq(&sharp_z(), &n).unwrap();
        assert_eq!(v.verdict, Verdict::Yes);
        let k = v.kernel.unwrap();
        assert!(k.reconstruction_error(&sharp_z(), &n) <= 1e-7);
        let expected = RMatrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert!((k.matrix - expected).amax() < 1e-6);

        let triv = povm_leq(&sharp_z(), &Povm::trivial(2)).unwrap();
        assert_eq!(triv.verdict, Verdict::No);
        assert!(triv.gap >= 0.4);

        assert!(matches!(
            povm_leq(&sharp_z(), &Povm::trivial(3)),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn povm_leq_matches_qc_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..6 {
            let m = crate::povmtools::random_povm(2, 3, &mut rng);
            let n = crate::povmtools::random_povm(2, 2, &mut rng);
            for (a, b) in [(&m, &n), (&n, &m), (&m, &m)] {
                let p = povm_leq(a, b).unwrap().verdict;
                let c = channel_leq(&qc_channel(a), &qc_channel(b)).unwrap().verdict;
                if p.is_decided() && c.is_decided() {
                    assert_eq!(p, c);
                }
            }
        }
    }

    #[test]
    fn experiment_examples() {
        let alg = FdAlgebra::full(2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = random_experiment(&alg, 2, &mut rng);
        assert_eq!(experiment_leq(&f, &f).unwrap().verdict, Verdict::Yes);

        let s = crate::experiments::random_state(&alg, &mut rng);
        let e = StatExperiment::new(alg.clone(), vec![s.clone(), s]).unwrap();
        assert_eq!(experiment_leq(&e, &f).unwrap().verdict, Verdict::Yes);

        let p0 = AlgebraElement::from_block(&alg, 0, matrix_unit(2, 0, 0));
        let p1 = AlgebraElement::from_block(&alg, 0, matrix_unit(2, 1, 1));
        let ortho = StatExperiment::new(alg.clone(), vec![p0.clone(), p1]).unwrap();
        let same = StatExperiment::new(alg.clone(), vec![p0.clone(), p0]).unwrap();
        assert_eq!(experiment_leq(&ortho, &same).unwrap().verdict, Verdict::No);

        let three = random_experiment(&alg, 3, &mut rng);
        assert!(matches!(
            experiment_leq(&ortho, &three),
            Err(Error::ParameterMismatch { .. })
        ));
    }

    #[test]
    fn experiment_leq_matches_associated_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..4 {
            let e = random_experiment(&FdAlgebra::full(2), 2, &mut rng);
            let f = random_experiment(&FdAlgebra::new(vec![1, 1]).unwrap(), 2, &mut rng);
            for (a, b) in [(&e, &f), (&f, &e)] {
                let x = experiment_leq(a, b).unwrap().verdict;
                let y = channel_leq(&associated_channel(a).unwrap(), &associated_channel(b).unwrap())
                    .unwrap()
                    .verdict;
                assert_eq!(x, y);
            }
        }
    }
}
