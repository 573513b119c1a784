//! Finite statistical experiments: indexed families of states on one algebra.

use crate::algebra::{AlgebraElement, FdAlgebra};
use crate::channel::Channel;
use crate::error::{Error, Result};
use crate::feasibility::Engine;
use crate::numerics::{c64, herm_eig, is_hermitian, zeros, CMatrix, C64};
use crate::order::{experiment_leq_with, Verdict};

const STATE_TOL: f64 = 1e-9;

/// States are block densities `ρ = ⊕ ρ_i` with `φ(A) = Σ_i tr(ρ_i A_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StatExperiment {
    algebra: FdAlgebra,
    states: Vec<AlgebraElement>,
}

impl StatExperiment {
    pub fn new(algebra: FdAlgebra, states: Vec<AlgebraElement>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::InvalidExperiment("empty parameter list".into()));
        }
        for (k, s) in states.iter().enumerate() {
            if s.algebra() != &algebra {
                return Err(Error::InvalidExperiment(format!(
                    "state {k} lives on {}, expected {algebra}",
                    s.algebra()
                )));
            }
            let mut trace = 0.0;
            for b in s.blocks() {
                if !is_hermitian(b, STATE_TOL) {
                    return Err(Error::InvalidExperiment(format!("state {k} is not Hermitian")));
                }
                let min = herm_eig(b)?.min();
                if min < -STATE_TOL {
                    return Err(Error::InvalidExperiment(format!(
                        "state {k} is not positive (min eigenvalue {min:.3e})"
                    )));
                }
                trace += b.trace().re;
            }
            if (trace - 1.0).abs() > STATE_TOL {
                return Err(Error::InvalidExperiment(format!("state {k} has trace {trace}")));
            }
        }
        Ok(Self { algebra, states })
    }

    pub fn algebra(&self) -> &FdAlgebra {
        &self.algebra
    }

    pub fn states(&self) -> &[AlgebraElement] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Every state pushed through the Schrödinger dual of `ch` (`ψ ↦ ψ∘ch`).
    pub fn pull_back(&self, ch: &Channel) -> Result<Self> {
        if ch.codomain() != &self.algebra {
            return Err(Error::AlgebraMismatch(format!(
                "channel codomain {} vs experiment algebra {}",
                ch.codomain(),
                self.algebra
            )));
        }
        let dom = ch.domain().clone();
        let states = self
            .states
            .iter()
            .map(|s| {
                let blocks = dom
                    .blocks()
                    .iter()
                    .enumerate()
                    .map(|(i, &n)| {
                        CMatrix::from_fn(n, n, |p, q| {
                            // ρ'_i[p,q] = φ(Λ(|q⟩⟨p|)).
                            let unit = AlgebraElement::unit(&dom, i, q, p);
                            pair(s, &ch.apply(&unit).expect("domain element"))
                        })
                    })
                    .collect();
                AlgebraElement::new(&dom, blocks)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(dom, states)
    }
}

/// `φ(A) = Σ_i tr(ρ_i A_i)`.
pub fn pair(state: &AlgebraElement, a: &AlgebraElement) -> C64 {
    state
        .blocks()
        .iter()
        .zip(a.blocks())
        .map(|(r, x)| (r * x).trace())
        .fold(c64(0.0, 0.0), |acc, z| acc + z)
}

/// `Λ_E(A) = Σ_θ φ_θ(A) |θ⟩⟨θ|` into `M_{|Θ|}`.
pub fn associated_channel(e: &StatExperiment) -> Result<Channel> {
    let k = e.len();
    let cod = FdAlgebra::full(k);
    Channel::from_action(e.algebra().clone(), cod.clone(), |a| {
        let mut out = zeros(k, k);
        for (t, s) in e.states().iter().enumerate() {
            out[(t, t)] = pair(s, a);
        }
        Ok(AlgebraElement::from_block(&cod, 0, out))
    })
}

#[derive(Debug, Clone)]
pub struct ExperimentEquiv {
    pub verdict: Verdict,
    pub forward: crate::order::PreorderVerdict,
    pub backward: crate::order::PreorderVerdict,
}

pub fn experiment_equiv(e: &StatExperiment, f: &StatExperiment) -> Result<ExperimentEquiv> {
    experiment_equiv_with(e, f, &Engine::default())
}

pub fn experiment_equiv_with(e: &StatExperiment, f: &StatExperiment, engine: &Engine) -> Result<ExperimentEquiv> {
    let forward = experiment_leq_with(e, f, engine)?;
    let backward = experiment_leq_with(f, e, engine)?;
    Ok(ExperimentEquiv {
        verdict: forward.verdict.and(backward.verdict),
        forward,
        backward,
    })
}

/// Random experiment with `k` states of random rank on `alg`.
pub fn random_experiment<R: rand::Rng + ?Sized>(alg: &FdAlgebra, k: usize, rng: &mut R) -> StatExperiment {
    let states = (0..k).map(|_| random_state(alg, rng)).collect();
    StatExperiment::new(alg.clone(), states).expect("random states are valid")
}

pub fn random_state<R: rand::Rng + ?Sized>(alg: &FdAlgebra, rng: &mut R) -> AlgebraElement {
    let mut blocks: Vec<CMatrix> = alg
        .blocks()
        .iter()
        .map(|&n| {
            let rank = rng.random_range(1..=n);
            let g = crate::numerics::random_gaussian(n, rank, rng);
            &g * g.adjoint()
        })
        .collect();
    let total: f64 = blocks.iter().map(|b| b.trace().re).sum();
    for b in &mut blocks {
        *b /= c64(total, 0.0);
    }
    AlgebraElement::new(alg, blocks).expect("shapes match")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{frob, haar_unitary, matrix_unit};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pure(alg: &FdAlgebra, k: usize) -> AlgebraElement {
        AlgebraElement::from_block(alg, 0, matrix_unit(alg.block(0), k, k))
    }

    #[test]
    fn associated_channel_examples() {
        let alg = FdAlgebra::full(2);
        let single = StatExperiment::new(alg.clone(), vec![pure(&alg, 0)]).unwrap();
        let ch = associated_channel(&single).unwrap();
        assert_eq!(ch.codomain().blocks(), &[1]);
        assert_eq!(ch.choi_ranks().unwrap(), vec![1]);

        let ortho = StatExperiment::new(alg.clone(), vec![pure(&alg, 0), pure(&alg, 1)]).unwrap();
        let ch = associated_channel(&ortho).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = AlgebraElement::random(&alg, &mut rng);
        let out = ch.apply(&a).unwrap();
        let expected = CMatrix::from_fn(2, 2, |p, q| if p == q { a.block(0)[(p, p)] } else { c64(0.0, 0.0) });
        assert!(frob(&(out.block(0) - expected)) < 1e-12);
    }

    #[test]
    fn random_associated_channels_are_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let alg = FdAlgebra::new(vec![2, 1]).unwrap();
            let e = random_experiment(&alg, 3, &mut rng);
            let ch = associated_channel(&e).unwrap();
            assert!(ch.is_channel());
            for x in alg.hermitian_basis() {
                let out = ch.apply(&x).unwrap();
                for p in 0..3 {
                    for q in 0..3 {
                        if p != q {
                            assert!(out.block(0)[(p, q)].norm() <= 1e-12);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn validation() {
        let alg = FdAlgebra::full(2);
        assert!(StatExperiment::new(alg.clone(), vec![]).is_err());
        let bad = AlgebraElement::from_block(&alg, 0, matrix_unit(2, 0, 0).scale(2.0));
        assert!(matches!(
            StatExperiment::new(alg, vec![bad]),
            Err(Error::InvalidExperiment(_))
        ));
    }

    #[test]
    fn equivalence_examples() {
        let alg = FdAlgebra::full(2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let e = random_experiment(&alg, 2, &mut rng);
        assert_eq!(experiment_equiv(&e, &e).unwrap().verdict, Verdict::Yes);

        let u = haar_unitary(2, &mut rng);
        let rotated = e.pull_back(&Channel::unitary(&u).unwrap()).unwrap();
        assert_eq!(experiment_equiv(&e, &rotated).unwrap().verdict, Verdict::Yes);

        let ortho = StatExperiment::new(alg.clone(), vec![pure(&alg, 0), pure(&alg, 1)]).unwrap();
        let same = StatExperiment::new(alg.clone(), vec![pure(&alg, 0), pure(&alg, 0)]).unwrap();
        assert_eq!(experiment_equiv(&ortho, &same).unwrap().verdict, Verdict::No);
    }
}
