//! Primal-dual interior-point method on the auxiliary problem
//!
//! ```text
//! max t   s.t.  X = Y + t·1,  Y ⪰ 0,  Q(X) = c,  t ≤ cap
//! ```
//!
//! written in standard form with `t = u − L`, `u, s ≥ 0`, `u + s = L + cap`.
//! The problem is feasible iff the optimum is `≥ 0`; a dual bound below
//! `−infeas_gap` certifies infeasibility.

use nalgebra::{Cholesky, DVector};

use super::{polish, presolve, FeasibilityProblem, FeasibilityResult, FeasibilitySolver, SolveOptions, Status};
use crate::numerics::{c64, herm_eig, herm_from_coords, hermitian_part, identity, zeros, CMatrix, RMatrix, RVector};

#[derive(Debug, Clone)]
pub struct InteriorPoint {
    /// Upper bound on `t`; keeps the auxiliary problem bounded.
    pub cap: f64,
    pub max_newton_steps: usize,
    pub tol: f64,
}

impl Default for InteriorPoint {
    fn default() -> Self {
        Self {
            cap: 1.0,
            max_newton_steps: 150,
            tol: 1e-10,
        }
    }
}

impl FeasibilitySolver for InteriorPoint {
    fn name(&self) -> &str {
        "interior-point"
    }

    fn solve(&self, p: &FeasibilityProblem, opts: &SolveOptions) -> FeasibilityResult {
        if let Some(r) = presolve(p, opts, self.name()) {
            return r;
        }
        let sdp = Sdp::new(p, self.cap);
        sdp.run(self, opts)
    }
}

/// Block-diagonal standard-form SDP `min ⟨C,X⟩, A(X) = b, X ⪰ 0`.
struct Sdp<'a> {
    problem: &'a FeasibilityProblem,
    sizes: Vec<usize>,
    /// Per block, per constraint: Hermitian coefficient matrix (None if zero).
    coeffs: Vec<Vec<Option<CMatrix>>>,
    /// Per block: `m × n²` with row `k` the row-major flattening of `A_k`.
    flat: Vec<CMatrix>,
    b: RVector,
    c: Vec<CMatrix>,
    shift: f64,
}

struct Point {
    x: Vec<CMatrix>,
    y: RVector,
    z: Vec<CMatrix>,
}

impl<'a> Sdp<'a> {
    fn new(p: &'a FeasibilityProblem, cap: f64) -> Self {
        let red = p.reduction();
        let r = red.q.nrows();
        let nb = p.var_blocks().len();
        let m = r + 1;
        let mut sizes: Vec<usize> = p.var_blocks().to_vec();
        sizes.push(1);
        sizes.push(1);

        // g = Q(1): the effect of the shift t·1 on the reduced constraints.
        let mut ident = Vec::with_capacity(p.num_coords());
        for &n in p.var_blocks() {
            crate::numerics::herm_coords_into(&identity(n), &mut ident);
        }
        let g = &red.q * RVector::from_vec(ident);

        let x_ls = p.affine_project(&RVector::zeros(p.num_coords()));
        let lmin = p.min_eigenvalue_coords(&x_ls).unwrap_or(0.0);
        let shift = (-lmin).max(0.0) + 1.0;

        let mut coeffs: Vec<Vec<Option<CMatrix>>> = vec![vec![None; m]; nb + 2];
        for (blk, &n) in p.var_blocks().iter().enumerate() {
            let range = p.block_range(blk);
            for k in 0..r {
                let row = red.q.row(k);
                let slice: Vec<f64> = range.clone().map(|j| row[j]).collect();
                if slice.iter().any(|v| *v != 0.0) {
                    coeffs[blk][k] = Some(herm_from_coords(&slice, n));
                }
            }
        }
        for k in 0..r {
            if g[k] != 0.0 {
                coeffs[nb][k] = Some(CMatrix::from_element(1, 1, c64(g[k], 0.0)));
            }
        }
        coeffs[nb][r] = Some(CMatrix::from_element(1, 1, c64(1.0, 0.0)));
        coeffs[nb + 1][r] = Some(CMatrix::from_element(1, 1, c64(1.0, 0.0)));

        let flat = sizes
            .iter()
            .enumerate()
            .map(|(blk, &n)| {
                let mut f = zeros(m, n * n);
                for (k, a) in coeffs[blk].iter().enumerate() {
                    if let Some(a) = a {
                        for pp in 0..n {
                            for q in 0..n {
                                f[(k, pp * n + q)] = a[(pp, q)];
                            }
                        }
                    }
                }
                f
            })
            .collect();

        let mut b = RVector::zeros(m);
        for k in 0..r {
            b[k] = red.c[k] + shift * g[k];
        }
        b[r] = shift + cap;

        let mut c: Vec<CMatrix> = sizes.iter().map(|&n| zeros(n, n)).collect();
        c[nb][(0, 0)] = c64(-1.0, 0.0);

        Self {
            problem: p,
            sizes,
            coeffs,
            flat,
            b,
            c,
            shift,
        }
    }

    fn m(&self) -> usize {
        self.b.len()
    }

    fn apply_a(&self, x: &[CMatrix]) -> RVector {
        let mut out = RVector::zeros(self.m());
        for (blk, xb) in x.iter().enumerate() {
            // vec of Xᵀ in row-major order is the column-major storage of X.
            let v = DVector::from_column_slice(xb.as_slice());
            let prod = &self.flat[blk] * v;
            for k in 0..self.m() {
                out[k] += prod[k].re;
            }
        }
        out
    }

    fn apply_at(&self, y: &RVector) -> Vec<CMatrix> {
        let yc = DVector::from_iterator(y.len(), y.iter().map(|&v| c64(v, 0.0)));
        self.sizes
            .iter()
            .enumerate()
            .map(|(blk, &n)| {
                let v = self.flat[blk].tr_mul(&yc);
                CMatrix::from_row_slice(n, n, v.as_slice())
            })
            .collect()
    }

    fn schur(&self, x: &[CMatrix], zinv: &[CMatrix]) -> RMatrix {
        let m = self.m();
        let mut out = RMatrix::zeros(m, m);
        for (blk, &n) in self.sizes.iter().enumerate() {
            let mut bm = zeros(n * n, m);
            let mut any = false;
            for (l, a) in self.coeffs[blk].iter().enumerate() {
                if let Some(a) = a {
                    let prod = &x[blk] * a * &zinv[blk];
                    bm.column_mut(l).copy_from_slice(prod.as_slice());
                    any = true;
                }
            }
            if !any {
                continue;
            }
            let full = &self.flat[blk] * bm;
            for k in 0..m {
                for l in 0..m {
                    out[(k, l)] += full[(k, l)].re;
                }
            }
        }
        (&out + out.transpose()) * 0.5
    }

    fn total_size(&self) -> f64 {
        self.sizes.iter().sum::<usize>() as f64
    }

    /// Current `t = u − L`.
    fn t_of(&self, x: &[CMatrix]) -> f64 {
        x[self.sizes.len() - 2][(0, 0)].re - self.shift
    }

    fn original_point(&self, x: &[CMatrix]) -> RVector {
        let t = self.t_of(x);
        let nb = self.problem.var_blocks().len();
        let mut coords = Vec::with_capacity(self.problem.num_coords());
        for (blk, xb) in x.iter().take(nb).enumerate() {
            let n = self.sizes[blk];
            let shifted = xb + identity(n) * c64(t, 0.0);
            crate::numerics::herm_coords_into(&shifted, &mut coords);
        }
        RVector::from_vec(coords)
    }

    fn initial_point(&self) -> Point {
        let nb_total = self.sizes.len();
        let mut xi: f64 = 10.0;
        let mut eta: f64 = 10.0;
        for k in 0..self.m() {
            let norm_a: f64 = (0..nb_total)
                .map(|blk| self.flat[blk].row(k).iter().map(|z| z.norm_sqr()).sum::<f64>())
                .sum::<f64>()
                .sqrt();
            let sqrt_n = self.total_size().sqrt();
            xi = xi.max(sqrt_n * (1.0 + self.b[k].abs()) / (1.0 + norm_a));
            eta = eta.max(norm_a);
        }
        Point {
            x: self.sizes.iter().map(|&n| identity(n) * c64(xi, 0.0)).collect(),
            y: RVector::zeros(self.m()),
            z: self.sizes.iter().map(|&n| identity(n) * c64(eta, 0.0)).collect(),
        }
    }

    fn run(&self, cfg: &InteriorPoint, opts: &SolveOptions) -> FeasibilityResult {
        let name = cfg.name();
        let mut pt = self.initial_point();
        let b_norm = self.b.norm();
        let mut best_upper = f64::INFINITY;
        let mut iterations = 0;
        let max_steps = cfg.max_newton_steps.min(opts.max_iters.max(1));
        let mut best_residual = f64::INFINITY;

        for it in 0..max_steps {
            iterations = it + 1;
            let ax = self.apply_a(&pt.x);
            let rp = &self.b - &ax;
            let aty = self.apply_at(&pt.y);
            let rd: Vec<CMatrix> = (0..self.sizes.len())
                .map(|blk| hermitian_part(&(&self.c[blk] - &pt.z[blk] - &aty[blk])))
                .collect();
            let rd_norm = rd.iter().map(|m| m.norm_squared()).sum::<f64>().sqrt();
            let dinf = rd_norm / 2.0;
            let pinf = rp.norm() / (1.0 + b_norm);
            let primal_obj: f64 = -pt.x[self.sizes.len() - 2][(0, 0)].re;
            let dual_obj = self.b.dot(&pt.y);

            // Feasibility: Y ⪰ 0 and t near nonnegative after the exact projection.
            let t = self.t_of(&pt.x);
            let r_orig = rp.rows(0, self.m() - 1).norm();
            if t - r_orig > -0.5 * opts.feas_tol {
                if let Some((w, res)) = polish(self.problem, &self.original_point(&pt.x), opts) {
                    best_residual = best_residual.min(res);
                    if res <= opts.feas_tol {
                        let mut r = FeasibilityResult::new(Status::Feasible, name);
                        r.witness = Some(w);
                        r.residual = res;
                        r.iterations = iterations;
                        return r;
                    }
                }
            }
            if dinf <= 1e-9 {
                let t_upper = -dual_obj - self.shift;
                best_upper = best_upper.min(t_upper);
                if t_upper < -opts.infeas_gap {
                    let mut r = FeasibilityResult::new(Status::Infeasible, name);
                    r.certificate_gap = -t_upper;
                    r.iterations = iterations;
                    r.residual = best_residual;
                    return r;
                }
            }
            let gap = (primal_obj - dual_obj).abs() / (1.0 + primal_obj.abs() + dual_obj.abs());
            if pinf < cfg.tol && dinf < cfg.tol && gap < cfg.tol {
                break;
            }

            let Some(step) = self.step(&mut pt, &rp, &rd) else {
                break;
            };
            if step < 1e-10 {
                break;
            }
        }

        // Last chance: polish the final iterate whatever t is.
        if let Some((w, res)) = polish(self.problem, &self.original_point(&pt.x), opts) {
            if res <= opts.feas_tol {
                let mut r = FeasibilityResult::new(Status::Feasible, name);
                r.witness = Some(w);
                r.residual = res;
                r.iterations = iterations;
                return r;
            }
            best_residual = best_residual.min(res);
        }
        let mut r = FeasibilityResult::new(Status::Undecided, name);
        r.iterations = iterations;
        r.residual = best_residual;
        if best_upper.is_finite() {
            r.certificate_gap = (-best_upper).max(0.0);
        }
        r
    }

    /// One Mehrotra predictor-corrector step; returns the smaller step length.
    fn step(&self, pt: &mut Point, rp: &RVector, rd: &[CMatrix]) -> Option<f64> {
        let nbt = self.sizes.len();
        let zinv: Vec<CMatrix> = pt
            .z
            .iter()
            .map(|z| Cholesky::new(z.clone()).map(|c| hermitian_part(&c.inverse())))
            .collect::<Option<_>>()?;
        let schur = self.schur(&pt.x, &zinv);
        let chol = factor_schur(schur)?;
        let mu: f64 = (0..nbt).map(|blk| (&pt.x[blk] * &pt.z[blk]).trace().re).sum::<f64>() / self.total_size();

        let xz: Vec<CMatrix> = (0..nbt).map(|blk| &pt.x[blk] * &pt.z[blk]).collect();
        let rc_aff: Vec<CMatrix> = xz.iter().map(|m| -m).collect();
        let (dx_a, _, dz_a) = self.direction(pt, &zinv, &chol, rp, rd, &rc_aff);
        let ap = max_step(&pt.x, &dx_a);
        let ad = max_step(&pt.z, &dz_a);
        let a_p = (1.0f64).min(ap);
        let a_d = (1.0f64).min(ad);
        let mu_aff: f64 = (0..nbt)
            .map(|blk| {
                let xn = &pt.x[blk] + &dx_a[blk] * c64(a_p, 0.0);
                let zn = &pt.z[blk] + &dz_a[blk] * c64(a_d, 0.0);
                (xn * zn).trace().re
            })
            .sum::<f64>()
            / self.total_size();
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        let rc: Vec<CMatrix> = (0..nbt)
            .map(|blk| {
                let n = self.sizes[blk];
                identity(n) * c64(sigma * mu, 0.0) - &xz[blk] - &dx_a[blk] * &dz_a[blk]
            })
            .collect();
        let (dx, dy, dz) = self.direction(pt, &zinv, &chol, rp, rd, &rc);
        let tau = 0.98;
        let a_p = (1.0f64).min(tau * max_step(&pt.x, &dx));
        let a_d = (1.0f64).min(tau * max_step(&pt.z, &dz));
        for blk in 0..nbt {
            pt.x[blk] = hermitian_part(&(&pt.x[blk] + &dx[blk] * c64(a_p, 0.0)));
            pt.z[blk] = hermitian_part(&(&pt.z[blk] + &dz[blk] * c64(a_d, 0.0)));
        }
        pt.y += dy * a_d;
        Some(a_p.min(a_d))
    }

    fn direction(
        &self,
        pt: &Point,
        zinv: &[CMatrix],
        chol: &Cholesky<f64, nalgebra::Dyn>,
        rp: &RVector,
        rd: &[CMatrix],
        rc: &[CMatrix],
    ) -> (Vec<CMatrix>, RVector, Vec<CMatrix>) {
        let nbt = self.sizes.len();
        let g: Vec<CMatrix> = (0..nbt)
            .map(|blk| (&rc[blk] - &pt.x[blk] * &rd[blk]) * &zinv[blk])
            .collect();
        let rhs = rp - self.apply_a(&g);
        let dy = chol.solve(&rhs);
        let atdy = self.apply_at(&dy);
        let dz: Vec<CMatrix> = (0..nbt).map(|blk| &rd[blk] - &atdy[blk]).collect();
        let dx: Vec<CMatrix> = (0..nbt)
            .map(|blk| hermitian_part(&((&rc[blk] - &pt.x[blk] * &dz[blk]) * &zinv[blk])))
            .collect();
        (dx, dy, dz)
    }
}

fn factor_schur(mut m: RMatrix) -> Option<Cholesky<f64, nalgebra::Dyn>> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Some(c);
    }
    let scale = m.diagonal().amax().max(1e-300);
    let mut reg = 1e-14 * scale;
    for _ in 0..8 {
        for i in 0..m.nrows() {
            m[(i, i)] += reg;
        }
        if let Some(c) = Cholesky::new(m.clone()) {
            return Some(c);
        }
        reg *= 100.0;
    }
    None
}

/// Largest `α` with `X + α·ΔX ⪰ 0` over all blocks (infinite if unbounded).
fn max_step(x: &[CMatrix], dx: &[CMatrix]) -> f64 {
    let mut alpha = f64::INFINITY;
    for (xb, db) in x.iter().zip(dx) {
        if xb.nrows() == 1 {
            let d = db[(0, 0)].re;
            if d < 0.0 {
                alpha = alpha.min(-xb[(0, 0)].re / d);
            }
            continue;
        }
        let Some(chol) = Cholesky::new(xb.clone()) else {
            return 0.0;
        };
        let l = chol.l();
        let Some(t) = l.solve_lower_triangular(db) else {
            return 0.0;
        };
        let Some(w) = l.solve_lower_triangular(&t.adjoint()) else {
            return 0.0;
        };
        let lmin = match herm_eig(&hermitian_part(&w)) {
            Ok(e) => e.min(),
            Err(_) => return 0.0,
        };
        if lmin < 0.0 {
            alpha = alpha.min(-1.0 / lmin);
        }
    }
    alpha
}
