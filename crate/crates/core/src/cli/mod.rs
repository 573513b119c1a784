//! Batch front end: JSON problem files in, verdict reports with checkable
//! certificates out.
//!
//! Exit codes: 0 answered, 2 undecided, 1 input error or failed verification.

mod check;
pub mod schema;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::channel::{qc_channel, Channel, Povm};
use crate::compat::{
    compatible_channels_with, compatible_povm_channel_with, compatible_via_conjugate_with, joint_from_conjugate,
    jointly_measurable_with, CompatVerdict,
};
use crate::dilation::{conjugate_from_stinespring, minimal_stinespring, naimark_dilation};
use crate::error::Error;
use crate::experiments::StatExperiment;
use crate::feasibility::{Engine, SolveOptions, DEFAULT_SOLVER};
use crate::order::{channel_leq_with, experiment_leq_with, povm_leq_with, PovmLeq, PreorderVerdict, Verdict, WITNESS_TOL};
use crate::povmtools::{canonicalize, is_maximal_with, maximal_refinement};

pub use check::{check_report, VerifyOutcome};
use schema::*;

pub const EXIT_ANSWERED: i32 = 0;
pub const EXIT_INPUT_ERROR: i32 = 1;
pub const EXIT_UNDECIDED: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{what}: parse error at line {line}, column {column}: {message}")]
    Parse {
        what: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported schema version `{0}` (expected `{SCHEMA_VERSION}`)")]
    Version(String),
    #[error("object `{name}`: {message}")]
    Object { name: String, message: String },
    #[error("query references undefined object `{0}`")]
    Undefined(String),
    #[error("object `{name}` is a {found}, expected {expected}")]
    WrongKind {
        name: String,
        found: &'static str,
        expected: &'static str,
    },
    #[error("{query} query on {objects}: {source}")]
    Query {
        query: &'static str,
        objects: String,
        source: Error,
    },
    #[error("HashMismatch: report was produced from input {recorded}, problem hashes to {actual}")]
    HashMismatch { recorded: String, actual: String },
    #[error(transparent)]
    Core(#[from] Error),
}

/// Command-line values that take precedence over the file's `options`.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub feas_tol: Option<f64>,
    pub seed: Option<u64>,
    pub max_iters: Option<usize>,
    pub solver: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub feas_tol: f64,
    pub infeas_gap: f64,
    /// Bound every certificate residual must meet.
    pub cert_tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportVerdict {
    Yes,
    No,
    Undecided,
    /// Constructive queries (dilations, conjugates, refinements).
    Computed,
    Error,
}

impl From<Verdict> for ReportVerdict {
    fn from(v: Verdict) -> Self {
        match v {
            Verdict::Yes => ReportVerdict::Yes,
            Verdict::No => ReportVerdict::No,
            Verdict::Undecided => ReportVerdict::Undecided,
        }
    }
}

impl ReportVerdict {
    pub fn exit_code(self) -> i32 {
        match self {
            ReportVerdict::Yes | ReportVerdict::No | ReportVerdict::Computed => EXIT_ANSWERED,
            ReportVerdict::Undecided => EXIT_UNDECIDED,
            ReportVerdict::Error => EXIT_INPUT_ERROR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Certificate {
    Channel { channel: ChannelJson },
    Povm { povm: PovmJson },
    /// Column-stochastic matrix, rows index target outcomes.
    Kernel { matrix: Vec<Vec<f64>> },
    Instrument { arms: Vec<ChannelJson> },
    Stinespring { env_mults: Vec<usize>, isometry: MatrixJson },
    Naimark { isometry: MatrixJson, projections: Vec<MatrixJson> },
    Ranks { ranks: Vec<usize> },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub version: String,
    pub tool_version: String,
    pub input_sha256: String,
    pub query: String,
    pub verdict: ReportVerdict,
    /// Verdicts of the individual routes, when a query has several.
    pub routes: BTreeMap<String, Verdict>,
    pub certificates: BTreeMap<String, Certificate>,
    pub residuals: BTreeMap<String, f64>,
    pub gaps: BTreeMap<String, f64>,
    pub tolerances: Tolerances,
    pub solver: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Excluded from determinism comparisons.
    pub timings: Timings,
}

impl Report {
    fn blank(hash: String, query: &str, tolerances: Tolerances, solver: String, seed: u64) -> Self {
        Self {
            version: SCHEMA_VERSION.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            input_sha256: hash,
            query: query.into(),
            verdict: ReportVerdict::Undecided,
            routes: BTreeMap::new(),
            certificates: BTreeMap::new(),
            residuals: BTreeMap::new(),
            gaps: BTreeMap::new(),
            tolerances,
            solver,
            seed,
            error: None,
            timings: Timings::default(),
        }
    }

    /// Report for a problem that could not be answered.
    pub fn from_error(input: &str, err: &CliError) -> Self {
        let d = SolveOptions::default();
        let mut r = Self::blank(
            input_hash(input),
            "",
            Tolerances {
                feas_tol: d.feas_tol,
                infeas_gap: d.infeas_gap,
                cert_tol: WITNESS_TOL,
            },
            DEFAULT_SOLVER.into(),
            0,
        );
        r.verdict = ReportVerdict::Error;
        r.error = Some(err.to_string());
        r
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// JSON with the timings zeroed, for byte comparisons.
    pub fn canonical_json(&self) -> String {
        let mut r = self.clone();
        r.timings = Timings::default();
        r.to_json()
    }

    fn gap(&mut self, key: &str, v: f64) {
        if v.is_finite() && v > 0.0 {
            self.gaps.insert(key.into(), v);
        }
    }

    fn cert(&mut self, key: &str, c: Certificate) {
        self.certificates.insert(key.into(), c);
    }
}

pub fn input_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str, what: &str) -> Result<T, CliError> {
    serde_json::from_str(text).map_err(|e| CliError::Parse {
        what: what.into(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

pub fn parse_problem(text: &str) -> Result<ProblemFile, CliError> {
    let p: ProblemFile = parse_json(text, "problem")?;
    if p.version != SCHEMA_VERSION {
        return Err(CliError::Version(p.version));
    }
    Ok(p)
}

pub fn parse_report(text: &str) -> Result<Report, CliError> {
    let r: Report = parse_json(text, "report")?;
    if r.version != SCHEMA_VERSION {
        return Err(CliError::Version(r.version));
    }
    Ok(r)
}

#[derive(Debug, Clone)]
pub(crate) enum Object {
    Channel(Channel),
    Povm(Povm),
    Experiment(StatExperiment),
}

impl Object {
    fn kind(&self) -> &'static str {
        match self {
            Object::Channel(_) => "channel",
            Object::Povm(_) => "povm",
            Object::Experiment(_) => "experiment",
        }
    }
}

pub(crate) struct Loaded {
    objects: BTreeMap<String, Object>,
}

impl Loaded {
    pub(crate) fn new(p: &ProblemFile) -> Result<Self, CliError> {
        let mut objects = BTreeMap::new();
        for (name, o) in &p.objects {
            let obj = match o {
                ObjectJson::Channel(c) => channel_from_json(c).map(Object::Channel),
                ObjectJson::Povm(m) => povm_from_json(m).map(Object::Povm),
                ObjectJson::Experiment(e) => experiment_from_json(e).map(Object::Experiment),
            }
            .map_err(|message| CliError::Object {
                name: name.clone(),
                message,
            })?;
            objects.insert(name.clone(), obj);
        }
        for r in p.query.references() {
            if !objects.contains_key(r) {
                return Err(CliError::Undefined(r.into()));
            }
        }
        Ok(Self { objects })
    }

    pub(crate) fn get(&self, name: &str) -> Result<&Object, CliError> {
        self.objects.get(name).ok_or_else(|| CliError::Undefined(name.into()))
    }

    fn wrong(&self, name: &str, expected: &'static str) -> CliError {
        CliError::WrongKind {
            name: name.into(),
            found: self.objects[name].kind(),
            expected,
        }
    }

    /// Channels as-is, POVMs through their QC channel.
    pub(crate) fn channel(&self, name: &str) -> Result<Channel, CliError> {
        match self.get(name)? {
            Object::Channel(c) => Ok(c.clone()),
            Object::Povm(m) => Ok(qc_channel(m)),
            Object::Experiment(_) => Err(self.wrong(name, "channel")),
        }
    }

    pub(crate) fn povm(&self, name: &str) -> Result<&Povm, CliError> {
        match self.get(name)? {
            Object::Povm(m) => Ok(m),
            _ => Err(self.wrong(name, "povm")),
        }
    }
}

#[derive(Debug, Clone)]
struct Settings {
    tolerances: Tolerances,
    max_iters: usize,
    seed: u64,
    solver: String,
}

impl Settings {
    fn resolve(o: &OptionsJson, ov: &Overrides) -> Self {
        let d = SolveOptions::default();
        Self {
            tolerances: Tolerances {
                feas_tol: ov.feas_tol.or(o.feas_tol).unwrap_or(d.feas_tol),
                infeas_gap: o.infeas_gap.unwrap_or(d.infeas_gap),
                cert_tol: o.cert_tol.unwrap_or(WITNESS_TOL),
            },
            max_iters: ov.max_iters.or(o.max_iters).unwrap_or(d.max_iters),
            seed: ov.seed.or(o.seed).unwrap_or(0),
            solver: ov.solver.clone().or_else(|| o.solver.clone()).unwrap_or_else(|| DEFAULT_SOLVER.into()),
        }
    }

    fn engine(&self) -> Result<Engine, CliError> {
        Ok(Engine::named(
            &self.solver,
            SolveOptions {
                feas_tol: self.tolerances.feas_tol,
                infeas_gap: self.tolerances.infeas_gap,
                max_iters: self.max_iters,
            },
        )?)
    }
}

/// Parses, solves and self-checks one problem.
pub fn run_problem(text: &str, overrides: &Overrides) -> Result<Report, CliError> {
    let start = Instant::now();
    let problem = parse_problem(text)?;
    let settings = Settings::resolve(&problem.options, overrides);
    let loaded = Loaded::new(&problem)?;
    let engine = settings.engine()?;
    let mut report = Report::blank(
        input_hash(text),
        problem.query.name(),
        settings.tolerances,
        settings.solver.clone(),
        settings.seed,
    );
    execute(&problem.query, &loaded, &engine, &mut report).map_err(|source| match source {
        QueryFailure::Cli(e) => e,
        QueryFailure::Core(source) => CliError::Query {
            query: problem.query.name(),
            objects: problem
                .query
                .references()
                .iter()
                .map(|n| format!("`{n}`"))
                .collect::<Vec<_>>()
                .join(", "),
            source,
        },
    })?;
    let outcome = check::check_loaded(&problem.query, &loaded, &report);
    report.residuals = outcome.residuals.clone();
    if !outcome.passed() && matches!(report.verdict, ReportVerdict::Yes | ReportVerdict::Computed) {
        report.verdict = ReportVerdict::Undecided;
    }
    report.timings.total_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(report)
}

/// Recomputes every certificate residual of `report` from the problem
/// objects alone; no solver is constructed.
pub fn verify_report(problem_text: &str, report_text: &str) -> Result<VerifyOutcome, CliError> {
    let report = parse_report(report_text)?;
    let actual = input_hash(problem_text);
    if actual != report.input_sha256 {
        return Err(CliError::HashMismatch {
            recorded: report.input_sha256,
            actual,
        });
    }
    let problem = parse_problem(problem_text)?;
    check_report(&problem, &report)
}

pub fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

enum QueryFailure {
    Cli(CliError),
    Core(Error),
}

impl From<CliError> for QueryFailure {
    fn from(e: CliError) -> Self {
        QueryFailure::Cli(e)
    }
}

impl From<Error> for QueryFailure {
    fn from(e: Error) -> Self {
        QueryFailure::Core(e)
    }
}

fn channel_cert(c: &Channel) -> Certificate {
    Certificate::Channel {
        channel: channel_to_json(c),
    }
}

fn povm_cert(m: &Povm) -> Certificate {
    Certificate::Povm { povm: povm_to_json(m) }
}

fn kernel_cert(m: &crate::numerics::RMatrix) -> Certificate {
    Certificate::Kernel {
        matrix: real_matrix_to_json(m),
    }
}

fn record_preorder(report: &mut Report, key: &str, v: &PreorderVerdict) {
    report.routes.insert(key.into(), v.verdict);
    report.gap(key, v.gap);
    if let Some(w) = &v.witness {
        report.cert(key, channel_cert(w));
    }
}

fn record_povm_leq(report: &mut Report, key: &str, v: &PovmLeq) {
    report.routes.insert(key.into(), v.verdict);
    report.gap(key, v.gap);
    if let Some(k) = &v.kernel {
        report.cert(key, kernel_cert(&k.matrix));
    }
}

fn record_compat(report: &mut Report, key: &str, v: &CompatVerdict) {
    report.routes.insert(key.into(), v.verdict);
    report.gap(key, v.gap);
    if let Some(c) = &v.certificate {
        report.certificates.entry("joint".into()).or_insert_with(|| channel_cert(&c.joint));
    }
    if let Some(p) = &v.post_processing {
        report.cert("post-processing", channel_cert(p));
    }
}

/// One-directional comparison, dispatched on object kinds.
fn leq(
    loaded: &Loaded,
    left: &str,
    right: &str,
    engine: &Engine,
    report: &mut Report,
    key: &str,
) -> Result<Verdict, QueryFailure> {
    match (loaded.get(left)?, loaded.get(right)?) {
        (Object::Povm(m), Object::Povm(n)) => {
            let v = povm_leq_with(m, n, engine)?;
            record_povm_leq(report, key, &v);
            Ok(v.verdict)
        }
        (Object::Experiment(e), Object::Experiment(f)) => {
            let v = experiment_leq_with(e, f, engine)?;
            record_preorder(report, key, &v);
            Ok(v.verdict)
        }
        (Object::Experiment(_), _) => Err(loaded.wrong(right, "experiment").into()),
        (_, Object::Experiment(_)) => Err(loaded.wrong(left, "experiment").into()),
        _ => {
            let v = channel_leq_with(&loaded.channel(left)?, &loaded.channel(right)?, engine)?;
            record_preorder(report, key, &v);
            Ok(v.verdict)
        }
    }
}

/// Whether a preorder query compares POVMs through kernels.
pub(crate) fn both_povms(loaded: &Loaded, left: &str, right: &str) -> bool {
    matches!(
        (loaded.get(left), loaded.get(right)),
        (Ok(Object::Povm(_)), Ok(Object::Povm(_)))
    )
}

fn execute(q: &Query, loaded: &Loaded, engine: &Engine, report: &mut Report) -> Result<(), QueryFailure> {
    match q {
        Query::Preorder { left, right } => {
            report.verdict = leq(loaded, left, right, engine, report, "witness")?.into();
        }
        Query::Equiv { left, right } => {
            let f = leq(loaded, left, right, engine, report, "forward")?;
            let b = leq(loaded, right, left, engine, report, "backward")?;
            report.verdict = f.and(b).into();
        }
        Query::Compat { left, right, route } => {
            let (l, r) = (loaded.channel(left)?, loaded.channel(right)?);
            let mut verdicts = Vec::new();
            if matches!(route, CompatRoute::Direct | CompatRoute::Both) {
                let v = compatible_channels_with(&l, &r, engine)?;
                record_compat(report, "direct", &v);
                verdicts.push(v.verdict);
            }
            if matches!(route, CompatRoute::Conjugate | CompatRoute::Both) {
                let v = compatible_via_conjugate_with(&l, &r, engine)?;
                record_compat(report, "conjugate", &v);
                verdicts.push(v.verdict);
            }
            let v = verdicts
                .iter()
                .copied()
                .find(|v| v.is_decided())
                .unwrap_or(Verdict::Undecided);
            report.verdict = v.into();
        }
        Query::JointlyMeasurable { left, right } => {
            let v = jointly_measurable_with(loaded.povm(left)?, loaded.povm(right)?, engine)?;
            report.gap("joint", v.gap);
            if let Some(c) = &v.certificate {
                report.cert("joint", povm_cert(&c.joint));
            }
            report.verdict = v.verdict.into();
        }
        Query::PovmChannel { povm, channel } => {
            let v = compatible_povm_channel_with(loaded.povm(povm)?, &loaded.channel(channel)?, engine)?;
            report.routes.insert("instrument".into(), v.instrument_route);
            report.routes.insert("conjugate".into(), v.conjugate_route);
            report.gap("instrument", v.instrument_gap);
            report.gap("conjugate", v.conjugate_gap);
            if let Some(inst) = &v.instrument {
                report.cert(
                    "instrument",
                    Certificate::Instrument {
                        arms: inst.arms().iter().map(channel_to_json).collect(),
                    },
                );
            }
            if let Some(p) = &v.post_processing {
                report.cert("post-processing", channel_cert(p));
            }
            report.verdict = v.verdict.into();
        }
        Query::Maximal { povm } => {
            let v = is_maximal_with(loaded.povm(povm)?, engine)?;
            report.routes.insert(
                "rank".into(),
                if v.maximal { Verdict::Yes } else { Verdict::No },
            );
            report.routes.insert("conjugate".into(), v.conjugate_route);
            report.cert(
                "ranks",
                Certificate::Ranks {
                    ranks: v.canonical_ranks.clone(),
                },
            );
            report.verdict = if v.maximal { ReportVerdict::Yes } else { ReportVerdict::No };
        }
        Query::Refine { povm } => {
            let r = maximal_refinement(loaded.povm(povm)?)?;
            report.cert("refinement", povm_cert(&r.povm));
            report.cert("merge", kernel_cert(&r.merge.matrix));
            report.verdict = ReportVerdict::Computed;
        }
        Query::Dilate { object } => {
            match loaded.get(object)? {
                Object::Povm(m) => {
                    let n = naimark_dilation(m)?;
                    report.cert(
                        "naimark",
                        Certificate::Naimark {
                            isometry: matrix_to_json(&n.isometry),
                            projections: n.pvm_projections.iter().map(matrix_to_json).collect(),
                        },
                    );
                }
                Object::Channel(c) => {
                    let st = minimal_stinespring(c)?;
                    report.cert(
                        "stinespring",
                        Certificate::Stinespring {
                            env_mults: st.env_mults.clone(),
                            isometry: matrix_to_json(&st.isometry),
                        },
                    );
                }
                Object::Experiment(_) => return Err(loaded.wrong(object, "channel or povm").into()),
            }
            report.verdict = ReportVerdict::Computed;
        }
        Query::Conjugate { channel } => {
            let ch = loaded.channel(channel)?;
            let st = minimal_stinespring(&ch)?;
            let conj = conjugate_from_stinespring(&st)?;
            let joint = joint_from_conjugate(&st, &Channel::identity(conj.domain()))?;
            report.cert("conjugate", channel_cert(&conj));
            report.cert("joint", channel_cert(&joint));
            report.verdict = ReportVerdict::Computed;
        }
        Query::Canonicalize { povm } => {
            let c = canonicalize(loaded.povm(povm)?)?;
            report.cert("canonical", povm_cert(&c.povm));
            report.cert("merge", kernel_cert(&c.merge_map.matrix));
            report.cert("split", kernel_cert(&c.split_map.matrix));
            report.verdict = ReportVerdict::Computed;
        }
    }
    Ok(())
}
