//! Compatibility of channels, joint measurability of POVMs and POVM–channel
//! compatibility through instruments.
//!
//! Each question has a direct feasibility encoding and a second route through
//! the commutant conjugate; both are exposed so callers can cross-check.
//! At finite dimension all tensor norms agree, so the single algebraic tensor
//! product [`algebra_tensor`] serves every notion of compatibility.

use serde::{Deserialize, Serialize};

use crate::algebra::{algebra_tensor, AlgebraElement, FdAlgebra};
use crate::channel::{compose, product_element, qc_channel, Channel, Povm, VALIDITY_TOL};
use crate::dilation::{commutant_conjugate, minimal_stinespring, StinespringRep};
use crate::error::{Error, Result};
use crate::feasibility::{Engine, ProblemBuilder, Status};
use crate::numerics::{frob, herm_eig, zeros, CMatrix};
use crate::order::{channel_leq_with, choi_variables, map_from_vars, Verdict, WITNESS_TOL};

/// Which construction produced a verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Route {
    /// Feasibility over the joint object itself.
    Direct,
    /// Post-processing of the commutant conjugate.
    Conjugate,
}

#[derive(Debug, Clone)]
pub struct JointChannelCertificate {
    /// Channel from `algebra_tensor(A, B)` into the common codomain.
    pub joint: Channel,
    pub marginal_residuals: (f64, f64),
}

#[derive(Debug, Clone)]
pub struct CompatVerdict {
    pub verdict: Verdict,
    pub route: Route,
    pub certificate: Option<JointChannelCertificate>,
    /// Post-processing `Ψ` with `Γ = Λ^c ∘ Ψ` (conjugate route only).
    pub post_processing: Option<Channel>,
    pub residual: f64,
    pub gap: f64,
}

/// `a ↦ a ⊗ 1_B`.
pub fn left_embedding(a: &FdAlgebra, b: &FdAlgebra) -> Channel {
    let one = AlgebraElement::identity(b);
    Channel::from_action(a.clone(), algebra_tensor(a, b), |x| Ok(product_element(x, &one)))
        .expect("embedding")
}

/// `b ↦ 1_A ⊗ b`.
pub fn right_embedding(a: &FdAlgebra, b: &FdAlgebra) -> Channel {
    let one = AlgebraElement::identity(a);
    Channel::from_action(b.clone(), algebra_tensor(a, b), |y| Ok(product_element(&one, y)))
        .expect("embedding")
}

/// Action-norm errors of the two marginals of `joint`.
pub fn joint_marginal_residuals(joint: &Channel, lambda: &Channel, gamma: &Channel) -> Result<(f64, f64)> {
    let (a, b) = (lambda.domain(), gamma.domain());
    if joint.domain() != &algebra_tensor(a, b) {
        return Err(Error::AlgebraMismatch(format!(
            "joint domain {} is not {a}⊗{b}",
            joint.domain()
        )));
    }
    let left = compose(joint, &left_embedding(a, b))?.action_distance(lambda)?;
    let right = compose(joint, &right_embedding(a, b))?.action_distance(gamma)?;
    Ok((left, right))
}

fn check_codomains(lambda: &Channel, gamma: &Channel) -> Result<()> {
    if lambda.codomain() != gamma.codomain() {
        return Err(Error::CodomainMismatch {
            left: lambda.codomain().blocks().to_vec(),
            right: gamma.codomain().blocks().to_vec(),
        });
    }
    Ok(())
}

pub fn compatible_channels(lambda: &Channel, gamma: &Channel) -> Result<CompatVerdict> {
    compatible_channels_with(lambda, gamma, &Engine::default())
}

/// Searches for a joint channel `Θ` on `A ⊗ B` with `Θ(a⊗1) = Λ(a)` and
/// `Θ(1⊗b) = Γ(b)`.
pub fn compatible_channels_with(lambda: &Channel, gamma: &Channel, engine: &Engine) -> Result<CompatVerdict> {
    check_codomains(lambda, gamma)?;
    let (a, b) = (lambda.domain().clone(), gamma.domain().clone());
    let joint_dom = algebra_tensor(&a, &b);
    let cod = lambda.codomain().clone();
    let left = left_embedding(&a, &b);
    let right = right_embedding(&a, &b);
    let mut builder = ProblemBuilder::new();
    let vars = choi_variables(&mut builder, &joint_dom, &cod);
    let range = vars[0]..vars[vars.len() - 1] + 1;
    for (label, emb, target) in [("left", &left, lambda), ("right", &right, gamma)] {
        let (jd, cd, r) = (joint_dom.clone(), cod.clone(), range.clone());
        let emb = emb.clone();
        builder.equality(label, target.choi_blocks(), move |x| {
            let theta = map_from_vars(&x[r.clone()], &jd, &cd)?;
            Ok(compose(&theta, &emb)?.choi_blocks().to_vec())
        })?;
    }
    let problem = builder.build()?;
    let r = engine.solve(&problem);
    let mut out = CompatVerdict {
        verdict: Verdict::from_status(r.status),
        route: Route::Direct,
        certificate: None,
        post_processing: None,
        residual: r.residual,
        gap: r.certificate_gap,
    };
    if r.status == Status::Feasible {
        let joint = map_from_vars(r.witness.as_ref().expect("witness"), &joint_dom, &cod)?;
        let res = joint_marginal_residuals(&joint, lambda, gamma)?;
        if res.0.max(res.1) > WITNESS_TOL || joint.validate().min_choi_eigenvalue < -WITNESS_TOL {
            out.verdict = Verdict::Undecided;
            out.residual = res.0.max(res.1);
        } else {
            out.certificate = Some(JointChannelCertificate {
                joint,
                marginal_residuals: res,
            });
        }
    }
    Ok(out)
}

/// Joint channel `a ⊗ b ↦ V* π(a) π′(Ψ(b)) V` built from a post-processing
/// `Ψ` of the commutant conjugate.
pub fn joint_from_conjugate(st: &StinespringRep, psi: &Channel) -> Result<Channel> {
    let a = st.channel.domain().clone();
    let b = psi.domain().clone();
    let joint_dom = algebra_tensor(&a, &b);
    let cod = st.channel.codomain().clone();
    let nb = b.num_blocks();
    Channel::from_unit_images(joint_dom, cod.clone(), |blk, alpha, beta| {
        let (i, k) = (blk / nb, blk % nb);
        let m = b.block(k);
        let ea = AlgebraElement::unit(&a, i, alpha / m, beta / m);
        let eb = AlgebraElement::unit(&b, k, alpha % m, beta % m);
        let pa = st.rep.embed(&ea)?;
        let pb = st.rep.embed_commutant(&psi.apply(&eb)?)?;
        let out = st.isometry.adjoint() * pa * pb * &st.isometry;
        Ok(AlgebraElement::from_block(&cod, 0, out))
    })
}

pub fn compatible_via_conjugate(lambda: &Channel, gamma: &Channel) -> Result<CompatVerdict> {
    compatible_via_conjugate_with(lambda, gamma, &Engine::default())
}

/// Decides `Γ ≼ Λ^c`; a positive answer is turned into a joint channel.
pub fn compatible_via_conjugate_with(lambda: &Channel, gamma: &Channel, engine: &Engine) -> Result<CompatVerdict> {
    check_codomains(lambda, gamma)?;
    let st = minimal_stinespring(lambda)?;
    let conj = crate::dilation::conjugate_from_stinespring(&st)?;
    let v = channel_leq_with(gamma, &conj, engine)?;
    let mut out = CompatVerdict {
        verdict: v.verdict,
        route: Route::Conjugate,
        certificate: None,
        post_processing: None,
        residual: v.residual,
        gap: v.gap,
    };
    if let Some(psi) = v.witness {
        let joint = joint_from_conjugate(&st, &psi)?;
        let res = joint_marginal_residuals(&joint, lambda, gamma)?;
        if res.0.max(res.1) > WITNESS_TOL || joint.validate().min_choi_eigenvalue < -WITNESS_TOL {
            out.verdict = Verdict::Undecided;
            out.residual = res.0.max(res.1);
        } else {
            out.certificate = Some(JointChannelCertificate {
                joint,
                marginal_residuals: res,
            });
            out.post_processing = Some(psi);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct JointPovmCertificate {
    /// Outcome `(i, j)` stored at `i·k₂ + j`.
    pub joint: Povm,
    pub k1: usize,
    pub k2: usize,
    pub marginal_residuals: (f64, f64),
}

impl JointPovmCertificate {
    /// `(Σ_j G_ij, Σ_i G_ij)`.
    pub fn marginals(&self) -> (Vec<CMatrix>, Vec<CMatrix>) {
        joint_marginals(self.joint.effects(), self.k1, self.k2)
    }
}

pub fn joint_marginals(effects: &[CMatrix], k1: usize, k2: usize) -> (Vec<CMatrix>, Vec<CMatrix>) {
    let d = effects[0].nrows();
    let mut rows = vec![zeros(d, d); k1];
    let mut cols = vec![zeros(d, d); k2];
    for i in 0..k1 {
        for j in 0..k2 {
            rows[i] += &effects[i * k2 + j];
            cols[j] += &effects[i * k2 + j];
        }
    }
    (rows, cols)
}

fn max_effect_error(a: &[CMatrix], b: &[CMatrix]) -> f64 {
    a.iter().zip(b).map(|(x, y)| frob(&(x - y))).fold(0.0, f64::max)
}

#[derive(Debug, Clone)]
pub struct JointMeasurability {
    pub verdict: Verdict,
    pub certificate: Option<JointPovmCertificate>,
    pub residual: f64,
    pub gap: f64,
}

pub fn jointly_measurable(m1: &Povm, m2: &Povm) -> Result<JointMeasurability> {
    jointly_measurable_with(m1, m2, &Engine::default())
}

pub fn jointly_measurable_with(m1: &Povm, m2: &Povm, engine: &Engine) -> Result<JointMeasurability> {
    if m1.dim() != m2.dim() {
        return Err(Error::DimMismatch {
            left: m1.dim(),
            right: m2.dim(),
        });
    }
    let (k1, k2, d) = (m1.len(), m2.len(), m1.dim());
    let mut b = ProblemBuilder::new();
    for _ in 0..k1 * k2 {
        b.block(d);
    }
    b.equality("rows", m1.effects(), move |x| Ok(joint_marginals(x, k1, k2).0))?;
    b.equality("cols", m2.effects(), move |x| Ok(joint_marginals(x, k1, k2).1))?;
    let problem = b.build()?;
    let r = engine.solve(&problem);
    let mut out = JointMeasurability {
        verdict: Verdict::from_status(r.status),
        certificate: None,
        residual: r.residual,
        gap: r.certificate_gap,
    };
    if r.status == Status::Feasible {
        let effects = r.witness.expect("witness");
        let (rows, cols) = joint_marginals(&effects, k1, k2);
        let res = (max_effect_error(&rows, m1.effects()), max_effect_error(&cols, m2.effects()));
        match Povm::with_tolerance(effects, WITNESS_TOL) {
            Ok(joint) if res.0.max(res.1) <= engine.options.feas_tol.max(1e-7) => {
                out.certificate = Some(JointPovmCertificate {
                    joint,
                    k1,
                    k2,
                    marginal_residuals: res,
                });
            }
            _ => {
                out.verdict = Verdict::Undecided;
                out.residual = res.0.max(res.1);
            }
        }
    }
    Ok(out)
}

/// CP arms `I_i: A → M_d` whose sum is unital.
#[derive(Debug, Clone)]
pub struct Instrument {
    dim: usize,
    arms: Vec<Channel>,
}

impl Instrument {
    pub fn new(arms: Vec<Channel>) -> Result<Self> {
        Self::with_tolerance(arms, VALIDITY_TOL)
    }

    pub fn with_tolerance(arms: Vec<Channel>, tol: f64) -> Result<Self> {
        let first = arms
            .first()
            .ok_or_else(|| Error::InvalidInstrument("no arms".into()))?;
        let dim = first
            .codomain()
            .single_block()
            .ok_or_else(|| Error::InvalidInstrument("codomain must be a full matrix block".into()))?;
        let mut total: Option<Channel> = None;
        for (k, arm) in arms.iter().enumerate() {
            if arm.domain() != first.domain() || arm.codomain() != first.codomain() {
                return Err(Error::InvalidInstrument(format!("arm {k} has a different shape")));
            }
            let min = arm
                .choi_blocks()
                .iter()
                .map(|j| herm_eig(j).map(|e| e.min()))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .fold(f64::INFINITY, f64::min);
            if min < -tol {
                return Err(Error::InvalidInstrument(format!(
                    "arm {k} is not CP (min Choi eigenvalue {min:.3e})"
                )));
            }
            total = Some(match total {
                None => arm.clone(),
                Some(t) => t.sum(arm)?,
            });
        }
        let total = total.expect("non-empty");
        let unit = total.apply(&AlgebraElement::identity(total.domain()))?;
        let err = frob(&(unit.block(0) - CMatrix::identity(dim, dim)));
        if err > tol {
            return Err(Error::InvalidInstrument(format!("arms do not sum to a unital map (error {err:.3e})")));
        }
        Ok(Self { dim, arms })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn arms(&self) -> &[Channel] {
        &self.arms
    }

    pub fn domain(&self) -> &FdAlgebra {
        self.arms[0].domain()
    }
}

/// `(M_i = I_i(1), Λ = Σ_i I_i)`.
pub fn instrument_marginals(inst: &Instrument) -> Result<(Povm, Channel)> {
    let one = AlgebraElement::identity(inst.domain());
    let effects = inst
        .arms
        .iter()
        .map(|a| Ok(a.apply(&one)?.block(0).clone()))
        .collect::<Result<Vec<_>>>()?;
    let mut total = inst.arms[0].clone();
    for a in &inst.arms[1..] {
        total = total.sum(a)?;
    }
    let povm = Povm::with_tolerance(effects, 1e-6).map_err(|e| Error::InvalidInstrument(e.to_string()))?;
    Ok((povm, total))
}

/// Lüders instrument `A ↦ √M_i A √M_i`.
pub fn luders_instrument(m: &Povm) -> Result<Instrument> {
    let alg = FdAlgebra::full(m.dim());
    let arms = m
        .effects()
        .iter()
        .map(|e| {
            let r = crate::povmtools::psd_sqrt(e)?;
            Channel::from_action(alg.clone(), alg.clone(), |x| {
                Ok(AlgebraElement::from_block(&alg, 0, &r * x.block(0) * &r))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Instrument::new(arms)
}

#[derive(Debug, Clone)]
pub struct PovmChannelVerdict {
    /// Route (a) when decided, else route (b).
    pub verdict: Verdict,
    pub instrument: Option<Instrument>,
    pub instrument_route: Verdict,
    pub conjugate_route: Verdict,
    /// `Ψ` with `Λ = (Γ^M)^c ∘ Ψ` when route (b) succeeds.
    pub post_processing: Option<Channel>,
    /// Worst marginal error of the instrument.
    pub residual: f64,
    pub instrument_gap: f64,
    pub conjugate_gap: f64,
}

impl PovmChannelVerdict {
    pub fn routes_agree(&self) -> bool {
        !(self.instrument_route.is_decided()
            && self.conjugate_route.is_decided()
            && self.instrument_route != self.conjugate_route)
    }
}

/// Marginal errors `(max_i ‖I_i(1) − M_i‖, action error of Σ I_i vs Λ)`.
pub fn instrument_residuals(inst: &Instrument, m: &Povm, lambda: &Channel) -> Result<(f64, f64)> {
    let (povm, total) = instrument_marginals(inst)?;
    if povm.len() != m.len() {
        return Err(Error::InvalidInstrument(format!("{} arms for {} outcomes", povm.len(), m.len())));
    }
    Ok((max_effect_error(povm.effects(), m.effects()), total.action_distance(lambda)?))
}

pub fn compatible_povm_channel(m: &Povm, lambda: &Channel) -> Result<PovmChannelVerdict> {
    compatible_povm_channel_with(m, lambda, &Engine::default())
}

pub fn compatible_povm_channel_with(m: &Povm, lambda: &Channel, engine: &Engine) -> Result<PovmChannelVerdict> {
    let d = lambda
        .codomain()
        .single_block()
        .ok_or_else(|| Error::CodomainNotFullBlock(lambda.codomain().blocks().to_vec()))?;
    if d != m.dim() {
        return Err(Error::DimMismatch { left: m.dim(), right: d });
    }
    let dom = lambda.domain().clone();
    let cod = lambda.codomain().clone();
    let k = m.len();

    // Route (a): arms as separate Choi variable sets.
    let mut b = ProblemBuilder::new();
    let mut ranges = Vec::with_capacity(k);
    for _ in 0..k {
        let vars = choi_variables(&mut b, &dom, &cod);
        ranges.push(vars[0]..vars[vars.len() - 1] + 1);
    }
    {
        let (dom, cod, ranges) = (dom.clone(), cod.clone(), ranges.clone());
        b.equality("sum", lambda.choi_blocks(), move |x| {
            let mut acc: Vec<CMatrix> = x[ranges[0].clone()].to_vec();
            for r in &ranges[1..] {
                for (a, y) in acc.iter_mut().zip(&x[r.clone()]) {
                    *a += y;
                }
            }
            let _ = (&dom, &cod);
            Ok(acc)
        })?;
    }
    {
        let (dom, cod, ranges) = (dom.clone(), cod.clone(), ranges.clone());
        b.equality("effects", m.effects(), move |x| {
            ranges
                .iter()
                .map(|r| {
                    let arm = map_from_vars(&x[r.clone()], &dom, &cod)?;
                    Ok(arm.apply(&AlgebraElement::identity(&dom))?.block(0).clone())
                })
                .collect()
        })?;
    }
    let problem = b.build()?;
    let r = engine.solve(&problem);
    let mut instrument_route = Verdict::from_status(r.status);
    let mut instrument = None;
    let mut residual = r.residual;
    if r.status == Status::Feasible {
        let w = r.witness.expect("witness");
        let arms = ranges
            .iter()
            .map(|rg| map_from_vars(&w[rg.clone()], &dom, &cod))
            .collect::<Result<Vec<_>>>()?;
        match Instrument::with_tolerance(arms, WITNESS_TOL) {
            Ok(inst) => {
                let (e1, e2) = instrument_residuals(&inst, m, lambda)?;
                residual = e1.max(e2);
                if residual <= WITNESS_TOL {
                    instrument = Some(inst);
                } else {
                    instrument_route = Verdict::Undecided;
                }
            }
            Err(_) => instrument_route = Verdict::Undecided,
        }
    }

    // Route (b): Λ ≼ (Γ^M)^c.
    let conj = commutant_conjugate(&qc_channel(m))?;
    let cv = channel_leq_with(lambda, &conj, engine)?;
    let verdict = if instrument_route.is_decided() {
        instrument_route
    } else {
        cv.verdict
    };
    Ok(PovmChannelVerdict {
        verdict,
        instrument,
        instrument_route,
        conjugate_route: cv.verdict,
        post_processing: cv.witness,
        residual,
        instrument_gap: r.certificate_gap,
        conjugate_gap: cv.gap,
    })
}
