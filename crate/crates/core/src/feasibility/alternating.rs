//! Von Neumann alternating projections between the product PSD cone and the
//! affine set, started from zero.

use super::{polish, presolve, FeasibilityProblem, FeasibilityResult, FeasibilitySolver, SolveOptions, Status};
use crate::numerics::RVector;

/// Iterations between stagnation checks.
const WINDOW: usize = 500;
/// Relative decrease over one window below which the distance has converged.
const STALL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, Default)]
pub struct AlternatingProjections;

impl FeasibilitySolver for AlternatingProjections {
    fn name(&self) -> &str {
        "alternating-projections"
    }

    fn solve(&self, p: &FeasibilityProblem, opts: &SolveOptions) -> FeasibilityResult {
        if let Some(r) = presolve(p, opts, self.name()) {
            return r;
        }
        let mut x = p.affine_project(&RVector::zeros(p.num_coords()));
        let mut prev = f64::INFINITY;
        let mut window_start = f64::INFINITY;
        let mut best_residual = f64::INFINITY;
        for it in 0..opts.max_iters {
            let (psd, _) = match p.psd_project(&x) {
                Ok(v) => v,
                Err(_) => break,
            };
            let next = p.affine_project(&psd);
            let dist = (&next - &psd).norm();
            debug_assert!(
                dist <= prev * (1.0 + 1e-9) + 1e-13,
                "projection distance increased: {prev} -> {dist}"
            );
            prev = dist;
            x = next;

            if dist <= opts.feas_tol || it % 50 == 0 {
                if let Some((w, res)) = polish(p, &x, opts) {
                    best_residual = best_residual.min(res);
                    if res <= opts.feas_tol {
                        let mut r = FeasibilityResult::new(Status::Feasible, self.name());
                        r.witness = Some(w);
                        r.residual = res;
                        r.iterations = it + 1;
                        return r;
                    }
                }
            }
            if it % WINDOW == 0 {
                if dist > opts.infeas_gap && window_start - dist <= STALL * dist {
                    let mut r = FeasibilityResult::new(Status::Infeasible, self.name());
                    r.certificate_gap = dist;
                    r.residual = best_residual;
                    r.iterations = it + 1;
                    return r;
                }
                window_start = dist;
            }
        }
        let mut r = FeasibilityResult::new(Status::Undecided, self.name());
        r.residual = best_residual;
        r.iterations = opts.max_iters;
        r
    }
}
