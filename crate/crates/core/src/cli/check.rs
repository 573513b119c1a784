//! Solver-free recomputation of certificate residuals.

use std::collections::BTreeMap;

use super::schema::*;
use super::{both_povms, CliError, Certificate, Loaded, Object, Report, ReportVerdict};
use crate::algebra::Representation;
use crate::channel::{compose, qc_channel, Channel, Povm};
use crate::compat::joint_marginal_residuals;
use crate::dilation::{commutant_conjugate, NaimarkDilation, StinespringRep};
use crate::numerics::{c64, frob, hermiticity_deviation, hermitian_part, herm_eig, psd_rank, zeros, CMatrix, RMatrix};
use crate::order::{coarse_graining_error, StochasticKernel};
use crate::povmtools::canonicalize;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerifyOutcome {
    pub residuals: BTreeMap<String, f64>,
    /// Missing or malformed certificates.
    pub failures: Vec<String>,
    pub cert_tol: f64,
}

impl VerifyOutcome {
    /// Residuals above `cert_tol`, by name.
    pub fn violations(&self) -> Vec<(&str, f64)> {
        self.residuals
            .iter()
            .filter(|(_, &v)| v.is_nan() || v > self.cert_tol)
            .map(|(k, &v)| (k.as_str(), v))
            .collect()
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.violations().is_empty()
    }
}

/// Checks `report` against `problem`.
pub fn check_report(problem: &ProblemFile, report: &Report) -> Result<VerifyOutcome, CliError> {
    let loaded = Loaded::new(problem)?;
    let mut out = check_loaded(&problem.query, &loaded, report);
    if report.query != problem.query.name() {
        out.failures
            .push(format!("report answers `{}`, problem asks `{}`", report.query, problem.query.name()));
    }
    Ok(out)
}

struct Ctx<'a> {
    report: &'a Report,
    out: VerifyOutcome,
    required: bool,
}

impl<'a> Ctx<'a> {
    fn put(&mut self, key: &str, v: f64) {
        self.out.residuals.insert(key.into(), if v.is_nan() { f64::INFINITY } else { v.max(0.0) });
    }

    fn fail(&mut self, msg: String) {
        self.out.failures.push(msg);
    }

    fn cert(&mut self, key: &str) -> Option<&'a Certificate> {
        let c = self.report.certificates.get(key);
        if c.is_none() && self.required {
            self.fail(format!("certificate `{key}` is missing"));
        }
        c
    }

    fn channel(&mut self, key: &str) -> Option<Channel> {
        match self.cert(key)? {
            Certificate::Channel { channel } => match channel_from_json(channel) {
                Ok(c) => Some(c),
                Err(e) => {
                    self.fail(format!("certificate `{key}`: {e}"));
                    None
                }
            },
            _ => {
                self.fail(format!("certificate `{key}` is not a channel"));
                None
            }
        }
    }

    fn kernel(&mut self, key: &str) -> Option<RMatrix> {
        match self.cert(key)? {
            Certificate::Kernel { matrix } => match real_matrix_from_json(matrix) {
                Ok(m) => Some(m),
                Err(e) => {
                    self.fail(format!("certificate `{key}`: {e}"));
                    None
                }
            },
            _ => {
                self.fail(format!("certificate `{key}` is not a kernel"));
                None
            }
        }
    }

    fn effects(&mut self, key: &str) -> Option<Vec<CMatrix>> {
        match self.cert(key)? {
            Certificate::Povm { povm } => match effects_from_json(povm) {
                Ok(m) => Some(m),
                Err(e) => {
                    self.fail(format!("certificate `{key}`: {e}"));
                    None
                }
            },
            _ => {
                self.fail(format!("certificate `{key}` is not a POVM"));
                None
            }
        }
    }

    /// CP and unitality defects of a channel certificate.
    fn channel_validity(&mut self, key: &str, c: &Channel) {
        let v = c.validate();
        self.put(&format!("{key}.cp"), -v.min_choi_eigenvalue);
        self.put(&format!("{key}.unital"), v.unitality_error);
    }

    /// Positivity and normalization defects of raw effects.
    fn povm_validity(&mut self, key: &str, effects: &[CMatrix], dim: usize) {
        let mut herm: f64 = 0.0;
        let mut neg: f64 = 0.0;
        let mut total = zeros(dim, dim);
        for e in effects {
            herm = herm.max(hermiticity_deviation(e));
            neg = neg.max(herm_eig(&hermitian_part(e)).map_or(f64::INFINITY, |x| -x.min()));
            total += e;
        }
        self.put(&format!("{key}.hermitian"), herm);
        self.put(&format!("{key}.positive"), neg);
        self.put(&format!("{key}.normalized"), frob(&(total - CMatrix::identity(dim, dim))));
    }

    /// Kernel defects for `target_i = Σ_j κ_ij source_j`.
    fn kernel_fit(&mut self, key: &str, k: &RMatrix, target: &[CMatrix], source: &[CMatrix]) {
        if k.nrows() != target.len() || k.ncols() != source.len() {
            self.fail(format!(
                "certificate `{key}` is {}x{}, expected {}x{}",
                k.nrows(),
                k.ncols(),
                target.len(),
                source.len()
            ));
            return;
        }
        let stoch = StochasticKernel { matrix: k.clone() }.stochasticity_error();
        self.put(&format!("{key}.stochastic"), stoch);
        self.put(&format!("{key}.reconstruction"), max_error(&kernel_apply(k, source), target));
    }

    fn channel_factor(&mut self, key: &str, left: &Channel, right: &Channel) {
        // left = right ∘ Ψ
        if let Some(psi) = self.channel(key) {
            self.channel_validity(key, &psi);
            match compose(right, &psi).and_then(|c| c.action_distance(left)) {
                Ok(d) => self.put(&format!("{key}.factor"), d),
                Err(e) => self.fail(format!("certificate `{key}`: {e}")),
            }
        }
    }
}

fn kernel_apply(k: &RMatrix, source: &[CMatrix]) -> Vec<CMatrix> {
    let d = source.first().map_or(0, |s| s.nrows());
    (0..k.nrows())
        .map(|i| {
            let mut acc = zeros(d, d);
            for (j, s) in source.iter().enumerate() {
                acc += s * c64(k[(i, j)], 0.0);
            }
            acc
        })
        .collect()
}

fn max_error(a: &[CMatrix], b: &[CMatrix]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter().zip(b).map(|(x, y)| frob(&(x - y))).fold(0.0, f64::max)
}

fn second_eigenvalue(e: &CMatrix) -> f64 {
    herm_eig(&hermitian_part(e)).map_or(f64::INFINITY, |x| {
        let n = x.eigenvalues.len();
        if n < 2 {
            0.0
        } else {
            x.eigenvalues[n - 2].max(0.0)
        }
    })
}

fn object_leq(ctx: &mut Ctx, loaded: &Loaded, left: &str, right: &str, key: &str) {
    if both_povms(loaded, left, right) {
        let (m, n) = (loaded.povm(left).expect("povm"), loaded.povm(right).expect("povm"));
        if let Some(k) = ctx.kernel(key) {
            ctx.kernel_fit(key, &k, m.effects(), n.effects());
        }
        return;
    }
    if let (Ok(Object::Experiment(e)), Ok(Object::Experiment(f))) = (loaded.get(left), loaded.get(right)) {
        if let Some(g) = ctx.channel(key) {
            ctx.channel_validity(key, &g);
            match coarse_graining_error(e, f, &g) {
                Ok(d) => ctx.put(&format!("{key}.coarse-graining"), d),
                Err(err) => ctx.fail(format!("certificate `{key}`: {err}")),
            }
        }
        return;
    }
    match (loaded.channel(left), loaded.channel(right)) {
        (Ok(l), Ok(r)) => ctx.channel_factor(key, &l, &r),
        (Err(e), _) | (_, Err(e)) => ctx.fail(e.to_string()),
    }
}

pub(crate) fn check_loaded(q: &Query, loaded: &Loaded, report: &Report) -> VerifyOutcome {
    let mut ctx = Ctx {
        report,
        out: VerifyOutcome {
            cert_tol: report.tolerances.cert_tol,
            ..Default::default()
        },
        required: matches!(report.verdict, ReportVerdict::Yes | ReportVerdict::Computed),
    };
    if let Err(e) = check_query(&mut ctx, q, loaded) {
        ctx.fail(e.to_string());
    }
    ctx.out
}

fn check_query(ctx: &mut Ctx, q: &Query, loaded: &Loaded) -> Result<(), CliError> {
    match q {
        Query::Preorder { left, right } => object_leq(ctx, loaded, left, right, "witness"),
        Query::Equiv { left, right } => {
            object_leq(ctx, loaded, left, right, "forward");
            object_leq(ctx, loaded, right, left, "backward");
        }
        Query::Compat { left, right, .. } => {
            let (l, r) = (loaded.channel(left)?, loaded.channel(right)?);
            if let Some(joint) = ctx.channel("joint") {
                ctx.channel_validity("joint", &joint);
                match joint_marginal_residuals(&joint, &l, &r) {
                    Ok((a, b)) => {
                        ctx.put("joint.left", a);
                        ctx.put("joint.right", b);
                    }
                    Err(e) => ctx.fail(format!("certificate `joint`: {e}")),
                }
            }
            if ctx.report.certificates.contains_key("post-processing") {
                let conj = commutant_conjugate(&l)?;
                ctx.channel_factor("post-processing", &r, &conj);
            }
        }
        Query::JointlyMeasurable { left, right } => {
            let (m1, m2) = (loaded.povm(left)?, loaded.povm(right)?);
            if let Some(g) = ctx.effects("joint") {
                let (k1, k2) = (m1.len(), m2.len());
                if g.len() != k1 * k2 {
                    ctx.fail(format!("joint POVM has {} outcomes, expected {}", g.len(), k1 * k2));
                } else {
                    ctx.povm_validity("joint", &g, m1.dim());
                    let (rows, cols) = crate::compat::joint_marginals(&g, k1, k2);
                    ctx.put("joint.left", max_error(&rows, m1.effects()));
                    ctx.put("joint.right", max_error(&cols, m2.effects()));
                }
            }
        }
        Query::PovmChannel { povm, channel } => {
            let (m, lam) = (loaded.povm(povm)?, loaded.channel(channel)?);
            let post = ctx.report.certificates.contains_key("post-processing");
            let needs_instrument = ctx.required && !post;
            let saved = ctx.required;
            ctx.required = needs_instrument;
            check_instrument(ctx, m, &lam);
            ctx.required = saved;
            if post {
                let conj = commutant_conjugate(&qc_channel(m))?;
                ctx.channel_factor("post-processing", &lam, &conj);
            }
        }
        Query::Maximal { povm } => {
            let m = loaded.povm(povm)?;
            let canon = canonicalize(m)?;
            let ranks = canon
                .povm
                .effects()
                .iter()
                .map(|e| psd_rank(e, 1e-9))
                .collect::<crate::Result<Vec<_>>>()?;
            if let Some(c) = ctx.cert("ranks") {
                match c {
                    Certificate::Ranks { ranks: claimed } => {
                        ctx.put("ranks.mismatch", if *claimed == ranks { 0.0 } else { 1.0 });
                    }
                    _ => ctx.fail("certificate `ranks` is not a rank list".into()),
                }
            }
            let maximal = ranks.iter().all(|&r| r == 1);
            let claimed = match ctx.report.verdict {
                ReportVerdict::Yes => Some(true),
                ReportVerdict::No => Some(false),
                _ => None,
            };
            if let Some(c) = claimed {
                ctx.put("verdict.mismatch", if c == maximal { 0.0 } else { 1.0 });
            }
        }
        Query::Refine { povm } => {
            let m = loaded.povm(povm)?;
            if let Some(r) = ctx.effects("refinement") {
                ctx.povm_validity("refinement", &r, m.dim());
                let rank = r.iter().map(second_eigenvalue).fold(0.0, f64::max);
                ctx.put("refinement.rank-one", rank);
                if let Some(k) = ctx.kernel("merge") {
                    ctx.kernel_fit("merge", &k, m.effects(), &r);
                }
            }
        }
        Query::Dilate { object } => match loaded.get(object)? {
            Object::Channel(ch) => check_stinespring(ctx, ch),
            Object::Povm(m) => check_naimark(ctx, m),
            Object::Experiment(_) => ctx.fail(format!("object `{object}` cannot be dilated")),
        },
        Query::Conjugate { channel } => {
            let lam = loaded.channel(channel)?;
            if let Some(conj) = ctx.channel("conjugate") {
                ctx.channel_validity("conjugate", &conj);
                if let Some(joint) = ctx.channel("joint") {
                    ctx.channel_validity("joint", &joint);
                    match joint_marginal_residuals(&joint, &lam, &conj) {
                        Ok((a, b)) => {
                            ctx.put("joint.left", a);
                            ctx.put("joint.right", b);
                        }
                        Err(e) => ctx.fail(format!("certificate `joint`: {e}")),
                    }
                }
            }
        }
        Query::Canonicalize { povm } => {
            let m = loaded.povm(povm)?;
            if let Some(c) = ctx.effects("canonical") {
                ctx.povm_validity("canonical", &c, m.dim());
                if let Some(k) = ctx.kernel("merge") {
                    ctx.kernel_fit("merge", &k, &c, m.effects());
                }
                if let Some(k) = ctx.kernel("split") {
                    ctx.kernel_fit("split", &k, m.effects(), &c);
                }
            }
        }
    }
    Ok(())
}

fn check_instrument(ctx: &mut Ctx, m: &Povm, lam: &Channel) {
    let arms = match ctx.cert("instrument") {
        Some(Certificate::Instrument { arms }) => arms,
        Some(_) => return ctx.fail("certificate `instrument` is not an instrument".into()),
        None => return,
    };
    if arms.len() != m.len() {
        return ctx.fail(format!("instrument has {} arms for {} outcomes", arms.len(), m.len()));
    }
    let mut channels = Vec::with_capacity(arms.len());
    for (k, a) in arms.iter().enumerate() {
        match channel_from_json(a) {
            Ok(c) => channels.push(c),
            Err(e) => return ctx.fail(format!("instrument arm {k}: {e}")),
        }
    }
    let mut cp: f64 = 0.0;
    let mut effect_err: f64 = 0.0;
    for (c, e) in channels.iter().zip(m.effects()) {
        cp = cp.max(-c.validate().min_choi_eigenvalue);
        match c.apply(&crate::algebra::AlgebraElement::identity(c.domain())) {
            Ok(x) => effect_err = effect_err.max(frob(&(x.block(0) - e))),
            Err(err) => return ctx.fail(format!("instrument: {err}")),
        }
    }
    ctx.put("instrument.cp", cp);
    ctx.put("instrument.effects", effect_err);
    let mut total = channels[0].clone();
    for c in &channels[1..] {
        match total.sum(c) {
            Ok(t) => total = t,
            Err(err) => return ctx.fail(format!("instrument: {err}")),
        }
    }
    match total.action_distance(lam) {
        Ok(d) => ctx.put("instrument.channel", d),
        Err(err) => ctx.fail(format!("instrument: {err}")),
    }
}

fn check_stinespring(ctx: &mut Ctx, ch: &Channel) {
    let (mults, v) = match ctx.cert("stinespring") {
        Some(Certificate::Stinespring { env_mults, isometry }) => (env_mults.clone(), isometry),
        Some(_) => return ctx.fail("certificate `stinespring` has the wrong kind".into()),
        None => return,
    };
    let rep = match Representation::standard(ch.domain(), mults.clone()) {
        Ok(r) => r,
        Err(e) => return ctx.fail(format!("stinespring: {e}")),
    };
    let v = match matrix_from_json(v) {
        Ok(v) => v,
        Err(e) => return ctx.fail(format!("stinespring: {e}")),
    };
    let d = ch.codomain().single_block().unwrap_or(0);
    if v.nrows() != rep.space_dim() || v.ncols() != d {
        return ctx.fail(format!(
            "stinespring isometry is {}x{}, expected {}x{d}",
            v.nrows(),
            v.ncols(),
            rep.space_dim()
        ));
    }
    let st = StinespringRep {
        channel: ch.clone(),
        env_mults: mults,
        total_dim: rep.space_dim(),
        isometry: v,
        rep,
    };
    ctx.put("stinespring.isometry", st.isometry_error());
    match st.reconstruction_error() {
        Ok(e) => ctx.put("stinespring.reconstruction", e),
        Err(e) => ctx.fail(format!("stinespring: {e}")),
    }
    match st.is_minimal() {
        Ok(min) => ctx.put("stinespring.minimal", if min { 0.0 } else { 1.0 }),
        Err(e) => ctx.fail(format!("stinespring: {e}")),
    }
}

fn check_naimark(ctx: &mut Ctx, m: &Povm) {
    let (v, projections) = match ctx.cert("naimark") {
        Some(Certificate::Naimark { isometry, projections }) => (isometry, projections),
        Some(_) => return ctx.fail("certificate `naimark` has the wrong kind".into()),
        None => return,
    };
    let v = match matrix_from_json(v) {
        Ok(v) => v,
        Err(e) => return ctx.fail(format!("naimark: {e}")),
    };
    let n = v.nrows();
    let mut pvm = Vec::with_capacity(projections.len());
    for (k, p) in projections.iter().enumerate() {
        match matrix_from_json(p) {
            Ok(p) if p.nrows() == n && p.ncols() == n => pvm.push(p),
            Ok(_) => return ctx.fail(format!("naimark projection {k} has the wrong shape")),
            Err(e) => return ctx.fail(format!("naimark projection {k}: {e}")),
        }
    }
    if v.ncols() != m.dim() || pvm.len() != m.len() {
        return ctx.fail("naimark certificate does not match the POVM".into());
    }
    let nd = NaimarkDilation {
        povm: m.clone(),
        pvm_projections: pvm,
        isometry: v,
    };
    ctx.put("naimark.isometry", nd.isometry_error());
    ctx.put("naimark.reconstruction", nd.reconstruction_error());
    ctx.put("naimark.projections", nd.projection_error());
    ctx.put("naimark.minimal", if nd.is_minimal() { 0.0 } else { 1.0 });
}
