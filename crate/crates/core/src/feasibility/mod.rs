//! Feasibility of `{X_b ⪰ 0} ∩ {affine equalities}` over Hermitian block variables.
//!
//! Variables are stacked in isometric real coordinates (see
//! [`herm_coords`](crate::numerics::herm_coords)); a constraint is a real row
//! over those coordinates together with a target. Solvers are looked up by
//! name in a [`SolverRegistry`].

mod alternating;
mod interior;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    herm_basis, herm_coords, herm_coords_into, herm_dim, herm_eig, herm_from_coords, psd_from_eig,
    CMatrix, RMatrix, RVector,
};

pub use alternating::AlternatingProjections;
pub use interior::InteriorPoint;

/// Relative singular-value cutoff when reducing the constraint system.
const REDUCTION_RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct FeasibilityProblem {
    blocks: Vec<usize>,
    offsets: Vec<usize>,
    rows: RMatrix,
    targets: RVector,
    labels: Vec<String>,
    reduced: Reduction,
}

/// Orthonormal form `Q x = c` of the constraint system.
#[derive(Debug, Clone)]
pub(crate) struct Reduction {
    pub q: RMatrix,
    pub c: RVector,
    /// Least-squares residual `min ‖A x − b‖₂`.
    pub inconsistency: f64,
}

impl FeasibilityProblem {
    /// `rows` is `K × Σ n_b²` over the stacked coordinates.
    pub fn new(blocks: Vec<usize>, rows: RMatrix, targets: RVector, labels: Vec<String>) -> Result<Self> {
        if blocks.contains(&0) {
            return Err(Error::IllFormedProblem("zero-sized variable block".into()));
        }
        let mut offsets = Vec::with_capacity(blocks.len() + 1);
        let mut acc = 0;
        for &n in &blocks {
            offsets.push(acc);
            acc += herm_dim(n);
        }
        offsets.push(acc);
        if rows.ncols() != acc && rows.nrows() > 0 {
            return Err(Error::IllFormedProblem(format!(
                "constraint rows have {} coefficients, variables have {acc}",
                rows.ncols()
            )));
        }
        if rows.nrows() != targets.len() || labels.len() != targets.len() {
            return Err(Error::IllFormedProblem(format!(
                "{} rows, {} targets, {} labels",
                rows.nrows(),
                targets.len(),
                labels.len()
            )));
        }
        if rows.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
            return Err(Error::IllFormedProblem("non-finite constraint data".into()));
        }
        let rows = if rows.nrows() == 0 {
            RMatrix::zeros(0, acc)
        } else {
            rows
        };
        let reduced = reduce(&rows, &targets);
        Ok(Self {
            blocks,
            offsets,
            rows,
            targets,
            labels,
            reduced,
        })
    }

    /// Constraints `Σ_b ⟨C_b, X_b⟩ = target` with Hermitian coefficient matrices.
    pub fn from_coefficients(blocks: Vec<usize>, constraints: Vec<Constraint>) -> Result<Self> {
        let n: usize = blocks.iter().map(|&b| herm_dim(b)).sum();
        let mut rows = RMatrix::zeros(constraints.len(), n);
        let mut targets = RVector::zeros(constraints.len());
        let mut labels = Vec::with_capacity(constraints.len());
        for (k, c) in constraints.into_iter().enumerate() {
            if c.coefficients.len() != blocks.len()
                || c.coefficients.iter().zip(&blocks).any(|(m, &b)| m.nrows() != b || m.ncols() != b)
            {
                return Err(Error::IllFormedProblem(format!(
                    "coefficient shapes of `{}` do not match the variable blocks",
                    c.label
                )));
            }
            let mut x = Vec::with_capacity(n);
            for m in &c.coefficients {
                if !crate::numerics::is_hermitian(m, 1e-12) {
                    return Err(Error::IllFormedProblem(format!(
                        "coefficient of `{}` is not Hermitian",
                        c.label
                    )));
                }
                herm_coords_into(m, &mut x);
            }
            rows.row_mut(k).copy_from_slice(&x);
            targets[k] = c.target;
            labels.push(c.label);
        }
        Self::new(blocks, rows, targets, labels)
    }

    pub fn var_blocks(&self) -> &[usize] {
        &self.blocks
    }

    pub fn num_coords(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn num_constraints(&self) -> usize {
        self.targets.len()
    }

    pub fn constraint_matrix(&self) -> &RMatrix {
        &self.rows
    }

    pub fn targets(&self) -> &RVector {
        &self.targets
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub(crate) fn reduction(&self) -> &Reduction {
        &self.reduced
    }

    pub(crate) fn block_range(&self, b: usize) -> std::ops::Range<usize> {
        self.offsets[b]..self.offsets[b + 1]
    }

    /// Same problem with every constraint multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self::new(
            self.blocks.clone(),
            &self.rows * factor,
            &self.targets * factor,
            self.labels.clone(),
        )
        .expect("scaling keeps the problem well formed")
    }

    pub fn to_coords(&self, blocks: &[CMatrix]) -> Result<RVector> {
        self.check_shapes(blocks)?;
        let mut x = Vec::with_capacity(self.num_coords());
        for m in blocks {
            herm_coords_into(m, &mut x);
        }
        Ok(RVector::from_vec(x))
    }

    pub fn from_coords(&self, x: &RVector) -> Vec<CMatrix> {
        self.blocks
            .iter()
            .enumerate()
            .map(|(b, &n)| herm_from_coords(&x.as_slice()[self.block_range(b)], n))
            .collect()
    }

    fn check_shapes(&self, blocks: &[CMatrix]) -> Result<()> {
        if blocks.len() != self.blocks.len()
            || blocks.iter().zip(&self.blocks).any(|(m, &n)| m.nrows() != n || m.ncols() != n)
        {
            return Err(Error::ShapeMismatch(format!(
                "assignment does not match variable blocks {:?}",
                self.blocks
            )));
        }
        Ok(())
    }

    /// Exact projection onto the affine set (least-squares set if inconsistent).
    pub(crate) fn affine_project(&self, x: &RVector) -> RVector {
        let q = &self.reduced.q;
        if q.nrows() == 0 {
            return x.clone();
        }
        let r = q * x - &self.reduced.c;
        x - q.tr_mul(&r)
    }

    /// Blockwise PSD projection in coordinates; also returns the Frobenius distance moved.
    pub(crate) fn psd_project(&self, x: &RVector) -> Result<(RVector, f64)> {
        let mut out = Vec::with_capacity(x.len());
        let mut dist2 = 0.0;
        for (b, &n) in self.blocks.iter().enumerate() {
            let m = herm_from_coords(&x.as_slice()[self.block_range(b)], n);
            let eig = herm_eig(&m)?;
            dist2 += eig.eigenvalues.iter().filter(|&&l| l < 0.0).map(|l| l * l).sum::<f64>();
            herm_coords_into(&psd_from_eig(&eig), &mut out);
        }
        Ok((RVector::from_vec(out), dist2.sqrt()))
    }

    pub(crate) fn min_eigenvalue_coords(&self, x: &RVector) -> Result<f64> {
        let mut worst = f64::INFINITY;
        for (b, &n) in self.blocks.iter().enumerate() {
            let m = herm_from_coords(&x.as_slice()[self.block_range(b)], n);
            worst = worst.min(herm_eig(&m)?.min());
        }
        Ok(worst)
    }
}

/// One affine equality given by Hermitian coefficient matrices per block.
#[derive(Debug, Clone)]
pub struct Constraint {
    pub label: String,
    pub coefficients: Vec<CMatrix>,
    pub target: f64,
}

fn reduce(rows: &RMatrix, targets: &RVector) -> Reduction {
    let n = rows.ncols();
    if rows.nrows() == 0 {
        return Reduction {
            q: RMatrix::zeros(0, n),
            c: RVector::zeros(0),
            inconsistency: 0.0,
        };
    }
    let svd = crate::numerics::checked_svd(rows);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let top = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| svd.singular_values[k] > REDUCTION_RANK_TOL * top && top > 0.0)
        .collect();
    let mut q = RMatrix::zeros(keep.len(), n);
    let mut c = RVector::zeros(keep.len());
    let mut explained = targets.clone();
    for (row, &k) in keep.iter().enumerate() {
        q.row_mut(row).copy_from(&v_t.row(k));
        let uk = u.column(k);
        let proj = uk.dot(targets);
        c[row] = proj / svd.singular_values[k];
        explained -= uk * proj;
    }
    Reduction {
        q,
        c,
        inconsistency: explained.norm(),
    }
}

/// Incrementally assembles a [`FeasibilityProblem`].
#[derive(Debug, Default)]
pub struct ProblemBuilder {
    blocks: Vec<usize>,
    rows: Vec<Vec<f64>>,
    targets: Vec<f64>,
    labels: Vec<String>,
}

impl ProblemBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an `n×n` PSD variable; returns its index.
    pub fn block(&mut self, n: usize) -> usize {
        self.blocks.push(n);
        self.blocks.len() - 1
    }

    fn num_coords(&self) -> usize {
        self.blocks.iter().map(|&n| herm_dim(n)).sum()
    }

    /// Imposes `map(X) = target` for a real-linear, Hermiticity-preserving
    /// `map` from the variable blocks to a list of Hermitian matrices.
    ///
    /// The map is evaluated on every basis element of the variable space.
    pub fn equality<F>(&mut self, label: &str, target: &[CMatrix], map: F) -> Result<()>
    where
        F: Fn(&[CMatrix]) -> Result<Vec<CMatrix>>,
    {
        let n = self.num_coords();
        let mut target_coords = Vec::new();
        for t in target {
            herm_coords_into(t, &mut target_coords);
        }
        let mut columns: Vec<Vec<f64>> = Vec::with_capacity(n);
        let mut zero: Vec<CMatrix> = self.blocks.iter().map(|&b| crate::numerics::zeros(b, b)).collect();
        for (b, &size) in self.blocks.clone().iter().enumerate() {
            for e in herm_basis(size) {
                zero[b] = e;
                let out = map(&zero)?;
                let mut col = Vec::with_capacity(target_coords.len());
                for m in &out {
                    herm_coords_into(m, &mut col);
                }
                if col.len() != target_coords.len() {
                    return Err(Error::IllFormedProblem(format!(
                        "`{label}`: map output has {} coordinates, target has {}",
                        col.len(),
                        target_coords.len()
                    )));
                }
                columns.push(col);
                zero[b] = crate::numerics::zeros(size, size);
            }
        }
        for (o, &t) in target_coords.iter().enumerate() {
            let row: Vec<f64> = columns.iter().map(|c| c[o]).collect();
            self.rows.push(row);
            self.targets.push(t);
            self.labels.push(format!("{label}[{o}]"));
        }
        Ok(())
    }

    /// `Σ_b ⟨C_b, X_b⟩ = target` for Hermitian `C_b` (missing blocks are zero).
    pub fn linear(&mut self, label: &str, coeffs: &[(usize, CMatrix)], target: f64) {
        let mut row = vec![0.0; self.num_coords()];
        for (b, c) in coeffs {
            let start: usize = self.blocks[..*b].iter().map(|&n| herm_dim(n)).sum();
            for (k, v) in herm_coords(c).into_iter().enumerate() {
                row[start + k] += v;
            }
        }
        self.rows.push(row);
        self.targets.push(target);
        self.labels.push(label.to_string());
    }

    pub fn build(self) -> Result<FeasibilityProblem> {
        let n = self.num_coords();
        // Rows added before later blocks are padded with zeros.
        let k = self.rows.len();
        let mut rows = RMatrix::zeros(k, n);
        for (i, r) in self.rows.iter().enumerate() {
            for (j, &v) in r.iter().enumerate() {
                rows[(i, j)] = v;
            }
        }
        FeasibilityProblem::new(self.blocks, rows, RVector::from_vec(self.targets), self.labels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub feas_tol: f64,
    pub infeas_gap: f64,
    pub max_iters: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            feas_tol: 1e-7,
            infeas_gap: 1e-4,
            max_iters: 50_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Feasible,
    Infeasible,
    Undecided,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Feasible => "feasible",
            Status::Infeasible => "infeasible",
            Status::Undecided => "undecided",
        })
    }
}

#[derive(Debug, Clone)]
pub struct FeasibilityResult {
    pub status: Status,
    pub witness: Option<Vec<CMatrix>>,
    /// [`residual_of`] of the witness, or of the best iterate.
    pub residual: f64,
    /// Lower bound on the distance between the affine set and the PSD cone
    /// when infeasible; zero otherwise.
    pub certificate_gap: f64,
    pub iterations: usize,
    pub solver: String,
}

impl FeasibilityResult {
    pub fn is_feasible(&self) -> bool {
        self.status == Status::Feasible
    }

    pub(crate) fn new(status: Status, solver: &str) -> Self {
        Self {
            status,
            witness: None,
            residual: f64::INFINITY,
            certificate_gap: 0.0,
            iterations: 0,
            solver: solver.to_string(),
        }
    }
}

/// `max_k |⟨a_k, X⟩ − b_k| + max(0, −λ_min)` against the raw constraints.
pub fn residual_of(p: &FeasibilityProblem, assignment: &[CMatrix]) -> Result<f64> {
    let x = p.to_coords(assignment)?;
    let mut worst: f64 = 0.0;
    if p.num_constraints() > 0 {
        let r = p.constraint_matrix() * &x - p.targets();
        worst = r.amax();
    }
    let mut min_eig = f64::INFINITY;
    for m in assignment {
        min_eig = min_eig.min(herm_eig(m)?.min());
    }
    Ok(worst + (-min_eig).max(0.0))
}

pub trait FeasibilitySolver: Send + Sync {
    fn name(&self) -> &str;
    fn solve(&self, p: &FeasibilityProblem, opts: &SolveOptions) -> FeasibilityResult;
}

/// Handles constraint-free, single-point and inconsistent systems; `None`
/// means an iterative solve is needed.
pub(crate) fn presolve(p: &FeasibilityProblem, opts: &SolveOptions, solver: &str) -> Option<FeasibilityResult> {
    let red = p.reduction();
    if red.inconsistency > opts.infeas_gap.max(opts.feas_tol) {
        let mut r = FeasibilityResult::new(Status::Infeasible, solver);
        r.certificate_gap = red.inconsistency;
        return Some(r);
    }
    if red.q.nrows() == 0 {
        let zero: Vec<CMatrix> = p.var_blocks().iter().map(|&n| crate::numerics::zeros(n, n)).collect();
        let residual = residual_of(p, &zero).ok()?;
        if residual <= opts.feas_tol {
            let mut r = FeasibilityResult::new(Status::Feasible, solver);
            r.residual = residual;
            r.witness = Some(zero);
            return Some(r);
        }
        return None;
    }
    if red.q.nrows() == p.num_coords() {
        // The affine set is a single point.
        let x = p.affine_project(&RVector::zeros(p.num_coords()));
        let blocks = p.from_coords(&x);
        let residual = residual_of(p, &blocks).ok()?;
        if residual <= opts.feas_tol {
            let mut r = FeasibilityResult::new(Status::Feasible, solver);
            r.residual = residual;
            r.witness = Some(blocks);
            return Some(r);
        }
        let (_, dist) = p.psd_project(&x).ok()?;
        let status = if dist > opts.infeas_gap {
            Status::Infeasible
        } else {
            Status::Undecided
        };
        let mut r = FeasibilityResult::new(status, solver);
        r.residual = residual;
        r.certificate_gap = if status == Status::Infeasible { dist } else { 0.0 };
        return Some(r);
    }
    None
}

/// Turns a near-feasible point into a witness checked by [`residual_of`]:
/// exact affine projection, then a few alternating PSD/affine steps.
pub(crate) fn polish(p: &FeasibilityProblem, x: &RVector, opts: &SolveOptions) -> Option<(Vec<CMatrix>, f64)> {
    let mut best: Option<(Vec<CMatrix>, f64)> = None;
    let mut cur = p.affine_project(x);
    for _ in 0..8 {
        let blocks = p.from_coords(&cur);
        if let Ok(res) = residual_of(p, &blocks) {
            if best.as_ref().is_none_or(|b| res < b.1) {
                best = Some((blocks, res));
            }
            if res <= opts.feas_tol {
                break;
            }
        }
        let (psd, _) = p.psd_project(&cur).ok()?;
        let clipped = p.from_coords(&psd);
        if let Ok(res) = residual_of(p, &clipped) {
            if best.as_ref().is_none_or(|b| res < b.1) {
                best = Some((clipped, res));
            }
            if res <= opts.feas_tol {
                break;
            }
        }
        cur = p.affine_project(&psd);
    }
    best
}

/// Name → solver table; [`SolverRegistry::with_defaults`] registers the
/// interior-point solver (the default) and plain alternating projections.
#[derive(Clone)]
pub struct SolverRegistry {
    solvers: BTreeMap<String, Arc<dyn FeasibilitySolver>>,
}

pub const DEFAULT_SOLVER: &str = "interior-point";

impl SolverRegistry {
    pub fn empty() -> Self {
        Self {
            solvers: BTreeMap::new(),
        }
    }

    pub fn with_defaults() -> Self {
        let mut reg = Self::empty();
        reg.register(Arc::new(InteriorPoint::default()));
        reg.register(Arc::new(AlternatingProjections));
        reg
    }

    pub fn register(&mut self, solver: Arc<dyn FeasibilitySolver>) {
        self.solvers.insert(solver.name().to_string(), solver);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn FeasibilitySolver>> {
        self.solvers
            .get(name)
            .cloned()
            .ok_or_else(|| Error::UnknownSolver(name.to_string()))
    }

    pub fn names(&self) -> Vec<&str> {
        self.solvers.keys().map(String::as_str).collect()
    }
}

impl Default for SolverRegistry {
    fn default() -> Self {
        Self::with_defaults()
    }
}

/// A solver together with its options; every oracle takes one.
#[derive(Clone)]
pub struct Engine {
    pub solver: Arc<dyn FeasibilitySolver>,
    pub options: SolveOptions,
}

impl Engine {
    pub fn new(solver: Arc<dyn FeasibilitySolver>, options: SolveOptions) -> Self {
        Self { solver, options }
    }

    pub fn named(name: &str, options: SolveOptions) -> Result<Self> {
        Ok(Self::new(SolverRegistry::with_defaults().get(name)?, options))
    }

    pub fn solve(&self, p: &FeasibilityProblem) -> FeasibilityResult {
        self.solver.solve(p, &self.options)
    }
}

impl Default for Engine {
    fn default() -> Self {
        Self::new(Arc::new(InteriorPoint::default()), SolveOptions::default())
    }
}

impl fmt::Debug for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Engine")
            .field("solver", &self.solver.name())
            .field("options", &self.options)
            .finish()
    }
}
