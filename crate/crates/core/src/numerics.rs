//! Dense complex matrix kernel.
//!
//! Thin layer over nalgebra: Hermitian eigendecomposition with ascending
//! eigenvalues, null spaces from a full SVD, projection onto the PSD cone and
//! the real coordinates used to turn Hermitian-matrix equalities into real
//! linear constraints.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;

/// Default algebraic tolerance, relative to `1 + ‖·‖_F`.
pub const ALG_TOL: f64 = 1e-10;
/// Default numerical rank threshold (relative to the largest singular value).
pub const RANK_TOL: f64 = 1e-9;

const EIG_MAX_ITERS: usize = 10_000;

#[inline]
pub fn c64(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

pub fn zeros(rows: usize, cols: usize) -> CMatrix {
    CMatrix::zeros(rows, cols)
}

pub fn frob(a: &CMatrix) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn is_finite(a: &CMatrix) -> bool {
    a.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// ‖A − A*‖_F.
pub fn hermiticity_deviation(a: &CMatrix) -> f64 {
    if !a.is_square() {
        return f64::INFINITY;
    }
    frob(&(a - a.adjoint()))
}

pub fn is_hermitian(a: &CMatrix, tol: f64) -> bool {
    a.is_square() && hermiticity_deviation(a) <= tol * (1.0 + frob(a))
}

pub fn hermitian_part(a: &CMatrix) -> CMatrix {
    (a + a.adjoint()).scale(0.5)
}

fn ensure_hermitian(a: &CMatrix) -> Result<()> {
    if !is_finite(a) {
        return Err(Error::NonFinite);
    }
    if !a.is_square() {
        return Err(Error::ShapeMismatch(format!(
            "expected a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let deviation = hermiticity_deviation(a);
    if deviation > ALG_TOL * (1.0 + frob(a)) {
        return Err(Error::NotHermitian { deviation });
    }
    Ok(())
}

/// Eigendecomposition of a Hermitian matrix.
#[derive(Debug, Clone)]
pub struct HermEig {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Unitary; column `k` belongs to `eigenvalues[k]`.
    pub eigenvectors: CMatrix,
}

impl HermEig {
    pub fn reconstruct(&self) -> CMatrix {
        let n = self.eigenvalues.len();
        let mut scaled = self.eigenvectors.clone();
        for k in 0..n {
            let lambda = self.eigenvalues[k];
            scaled.column_mut(k).scale_mut(lambda);
        }
        &scaled * self.eigenvectors.adjoint()
    }

    pub fn min(&self) -> f64 {
        self.eigenvalues.first().copied().unwrap_or(0.0)
    }

    pub fn max(&self) -> f64 {
        self.eigenvalues.last().copied().unwrap_or(0.0)
    }
}

pub fn herm_eig(a: &CMatrix) -> Result<HermEig> {
    ensure_hermitian(a)?;
    let n = a.nrows();
    if n == 0 {
        return Ok(HermEig {
            eigenvalues: Vec::new(),
            eigenvectors: zeros(0, 0),
        });
    }
    let sym = hermitian_part(a);
    let eig = nalgebra::SymmetricEigen::try_new(sym, f64::EPSILON, EIG_MAX_ITERS)
        .ok_or_else(|| Error::NumericalFailure("Hermitian eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let eigenvalues = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut eigenvectors = zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        eigenvectors.set_column(k, &eig.eigenvectors.column(i));
    }
    Ok(HermEig {
        eigenvalues,
        eigenvectors,
    })
}

pub fn min_eigenvalue(a: &CMatrix) -> Result<f64> {
    Ok(herm_eig(a)?.min())
}

/// Full SVD whose factors are checked to reproduce `m`.
///
/// nalgebra's default SVD can return orthonormal factors that do not
/// reconstruct `m` when singular values cluster; this retries with a tight
/// tolerance and on the adjoint and keeps the most accurate result.
pub fn checked_svd<T>(m: &DMatrix<T>) -> nalgebra::SVD<T, nalgebra::Dyn, nalgebra::Dyn>
where
    T: nalgebra::ComplexField<RealField = f64>,
{
    let error = |svd: &nalgebra::SVD<T, nalgebra::Dyn, nalgebra::Dyn>| -> f64 {
        match (&svd.u, &svd.v_t) {
            (Some(u), Some(v_t)) => {
                let sigma = DMatrix::from_diagonal(&svd.singular_values.map(T::from_real));
                (u * sigma * v_t - m).iter().map(|z| z.clone().modulus()).fold(0.0, f64::max)
            }
            _ => f64::INFINITY,
        }
    };
    let scale = m.iter().map(|z| z.clone().modulus()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut best = nalgebra::SVD::new(m.clone(), true, true);
    let mut best_err = error(&best);
    if best_err <= 1e-12 * scale {
        return best;
    }
    let mut consider = |cand: nalgebra::SVD<T, nalgebra::Dyn, nalgebra::Dyn>| {
        let e = error(&cand);
        if e < best_err {
            best_err = e;
            best = cand;
        }
    };
    if let Some(s) = nalgebra::SVD::try_new(m.clone(), true, true, f64::EPSILON, 0) {
        consider(s);
    }
    if let Some(s) = nalgebra::SVD::try_new(m.adjoint(), true, true, f64::EPSILON, 0) {
        consider(nalgebra::SVD {
            u: s.v_t.map(|v| v.adjoint()),
            v_t: s.u.map(|u| u.adjoint()),
            singular_values: s.singular_values,
        });
    }
    best
}

/// Orthonormal basis (as columns) of the right null space of `a`.
///
/// Singular values `≤ tol·σ_max` count as zero; a zero matrix has full null space.
pub fn null_space(a: &CMatrix, tol: f64) -> CMatrix {
    let cols = a.ncols();
    if cols == 0 {
        return zeros(0, 0);
    }
    // Pad to at least square so the SVD returns a full right basis.
    let rows = a.nrows().max(cols);
    let mut padded = zeros(rows, cols);
    padded.view_mut((0, 0), (a.nrows(), cols)).copy_from(a);
    let svd = checked_svd(&padded);
    let v_t = svd.v_t.expect("v_t requested");
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let null: Vec<usize> = (0..cols)
        .filter(|&k| sigma_max == 0.0 || svd.singular_values[k] <= tol * sigma_max)
        .collect();
    let mut basis = zeros(cols, null.len());
    for (out, &k) in null.iter().enumerate() {
        let row = v_t.row(k).adjoint();
        basis.set_column(out, &row);
    }
    basis
}

/// Frobenius-nearest PSD matrix: clip negative eigenvalues.
pub fn psd_project(a: &CMatrix) -> Result<CMatrix> {
    let eig = herm_eig(a)?;
    Ok(psd_from_eig(&eig))
}

pub(crate) fn psd_from_eig(eig: &HermEig) -> CMatrix {
    let clipped = HermEig {
        eigenvalues: eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect(),
        eigenvectors: eig.eigenvectors.clone(),
    };
    hermitian_part(&clipped.reconstruct())
}

/// Number of eigenvalues above `rel_tol · λ_max` of a PSD matrix.
pub fn psd_rank(a: &CMatrix, rel_tol: f64) -> Result<usize> {
    let eig = herm_eig(a)?;
    let top = eig.max();
    if top <= 0.0 {
        return Ok(0);
    }
    Ok(eig.eigenvalues.iter().filter(|&&l| l > rel_tol * top).count())
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// `|a⟩⟨b|` in `M_n`.
pub fn matrix_unit(n: usize, a: usize, b: usize) -> CMatrix {
    let mut e = zeros(n, n);
    e[(a, b)] = c64(1.0, 0.0);
    e
}

/// Partial trace over the first tensor factor of `M_outer ⊗ M_inner`.
pub fn partial_trace_first(m: &CMatrix, outer: usize, inner: usize) -> CMatrix {
    let mut out = zeros(inner, inner);
    for a in 0..outer {
        out += m.view((a * inner, a * inner), (inner, inner));
    }
    out
}

/// Partial trace over the second tensor factor of `M_outer ⊗ M_inner`.
pub fn partial_trace_second(m: &CMatrix, outer: usize, inner: usize) -> CMatrix {
    let mut out = zeros(outer, outer);
    for a in 0..outer {
        for b in 0..outer {
            let mut acc = c64(0.0, 0.0);
            for r in 0..inner {
                acc += m[(a * inner + r, b * inner + r)];
            }
            out[(a, b)] = acc;
        }
    }
    out
}

/// Number of real coordinates of an `n×n` Hermitian matrix.
pub fn herm_dim(n: usize) -> usize {
    n * n
}

/// Isometric real coordinates of a Hermitian matrix: `H_pp`, then
/// `√2·Re H_pq`, `√2·Im H_pq` for `p < q`, in row-major upper-triangle order.
pub fn herm_coords_into(a: &CMatrix, out: &mut Vec<f64>) {
    let n = a.nrows();
    let s = std::f64::consts::SQRT_2;
    for p in 0..n {
        out.push(a[(p, p)].re);
        for q in p + 1..n {
            // Average the two triangles so nearly-Hermitian inputs are symmetrised.
            let z = (a[(p, q)] + a[(q, p)].conj()) * 0.5;
            out.push(s * z.re);
            out.push(s * z.im);
        }
    }
}

pub fn herm_coords(a: &CMatrix) -> Vec<f64> {
    let mut out = Vec::with_capacity(herm_dim(a.nrows()));
    herm_coords_into(a, &mut out);
    out
}

/// Inverse of [`herm_coords`].
pub fn herm_from_coords(x: &[f64], n: usize) -> CMatrix {
    assert_eq!(x.len(), herm_dim(n), "coordinate count mismatch");
    let inv = std::f64::consts::FRAC_1_SQRT_2;
    let mut m = zeros(n, n);
    let mut k = 0;
    for p in 0..n {
        m[(p, p)] = c64(x[k], 0.0);
        k += 1;
        for q in p + 1..n {
            let z = c64(x[k] * inv, x[k + 1] * inv);
            m[(p, q)] = z;
            m[(q, p)] = z.conj();
            k += 2;
        }
    }
    m
}

/// The orthonormal Hermitian basis matching [`herm_coords`].
pub fn herm_basis(n: usize) -> Vec<CMatrix> {
    let dim = herm_dim(n);
    (0..dim)
        .map(|k| {
            let mut x = vec![0.0; dim];
            x[k] = 1.0;
            herm_from_coords(&x, n)
        })
        .collect()
}

/// Real Hilbert–Schmidt inner product `Re tr(A* B)`.
pub fn hs_inner(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

pub fn random_gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        c64(re, im) * std::f64::consts::FRAC_1_SQRT_2
    })
}

/// Haar-distributed isometry `C^cols → C^rows` (requires `rows ≥ cols`).
pub fn haar_isometry<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMatrix {
    assert!(rows >= cols, "isometry needs rows >= cols");
    let g = random_gaussian(rows, cols, rng);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    // Fix the phases of R's diagonal so the distribution is Haar.
    for k in 0..cols {
        let d = r[(k, k)];
        let norm = d.norm();
        if norm > 0.0 {
            let phase = d / norm;
            for i in 0..rows {
                q[(i, k)] *= phase;
            }
        }
    }
    q
}

pub fn haar_unitary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CMatrix {
    haar_isometry(n, n, rng)
}

pub fn random_hermitian<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CMatrix {
    let g = random_gaussian(n, n, rng);
    hermitian_part(&g)
}

/// Rotate `v` so that its first component with modulus above `tol·‖v‖_∞` is
/// real and positive.
pub fn fix_phase(v: &mut DVector<C64>, tol: f64) {
    let top = v.iter().map(|z| z.norm()).fold(0.0_f64, f64::max);
    if top == 0.0 {
        return;
    }
    if let Some(z) = v.iter().find(|z| z.norm() > tol * top).copied() {
        let phase = z.conj() / z.norm();
        for x in v.iter_mut() {
            *x *= phase;
        }
    }
}

/// Pivoted Cholesky factor `L` (n×r) with `A = L L*` for PSD `A`.
///
/// Stops once every remaining diagonal entry is at most `rel_tol · max diag`.
pub fn pivoted_cholesky(a: &CMatrix, rel_tol: f64) -> Result<CMatrix> {
    ensure_hermitian(a)?;
    let n = a.nrows();
    let mut work = hermitian_part(a);
    let scale = (0..n).map(|i| work[(i, i)].re).fold(0.0_f64, f64::max);
    let mut columns: Vec<DVector<C64>> = Vec::new();
    if scale <= 0.0 {
        return Ok(zeros(n, 0));
    }
    for _ in 0..n {
        let (pivot, value) = (0..n)
            .map(|i| (i, work[(i, i)].re))
            .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
        if value <= rel_tol * scale {
            break;
        }
        let root = value.sqrt();
        let col: DVector<C64> = work.column(pivot).map(|z| z / root);
        work -= &col * col.adjoint();
        columns.push(col);
    }
    let mut l = zeros(n, columns.len());
    for (k, col) in columns.iter().enumerate() {
        l.set_column(k, col);
    }
    Ok(l)
}

/// Real dense matrix helpers used by the feasibility kernel.
pub type RMatrix = DMatrix<f64>;
pub type RVector = DVector<f64>;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sigma_x() -> CMatrix {
        CMatrix::from_row_slice(2, 2, &[c64(0., 0.), c64(1., 0.), c64(1., 0.), c64(0., 0.)])
    }

    #[test]
    fn checked_svd_reconstructs_wide_clustered_matrix() {
        // Wide real matrix with a large cluster of equal singular values and a null part.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = haar_isometry(40, 40, &mut rng).map(|z| z.re).qr().q();
        let v = haar_isometry(150, 150, &mut rng).map(|z| z.re).qr().q();
        let mut sigma = DMatrix::<f64>::zeros(40, 150);
        for k in 0..40 {
            sigma[(k, k)] = if k < 30 { 0.65 } else if k < 35 { 2.0 } else { 0.0 };
        }
        let m = &u * sigma * v.transpose();
        let svd = checked_svd(&m);
        let rec = svd.u.as_ref().unwrap() * DMatrix::from_diagonal(&svd.singular_values) * svd.v_t.as_ref().unwrap();
        assert!((rec - &m).amax() < 1e-11);
    }

    #[test]
    fn eig_identity_and_sigma_z() {
        let e = herm_eig(&identity(2)).unwrap();
        assert!((e.eigenvalues[0] - 1.0).abs() < 1e-14 && (e.eigenvalues[1] - 1.0).abs() < 1e-14);
        let z = CMatrix::from_diagonal(&DVector::from_vec(vec![c64(1., 0.), c64(-1., 0.)]));
        let e = herm_eig(&z).unwrap();
        assert!((e.eigenvalues[0] + 1.0).abs() < 1e-14);
        assert!((e.eigenvalues[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn eig_random_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 1..8 {
            let b = random_gaussian(n, n, &mut rng);
            let a = &b + b.adjoint();
            let e = herm_eig(&a).unwrap();
            let err = frob(&(e.reconstruct() - &a));
            assert!(err <= 1e-10 * (1.0 + frob(&a)), "err {err}");
            let gram = e.eigenvectors.adjoint() * &e.eigenvectors;
            assert!(frob(&(gram - identity(n))) < 1e-10);
            assert!(e.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn eig_rejects_non_hermitian() {
        let a = CMatrix::from_row_slice(2, 2, &[c64(0., 0.), c64(1., 0.), c64(0., 0.), c64(0., 0.)]);
        assert!(matches!(herm_eig(&a), Err(Error::NotHermitian { .. })));
    }

    #[test]
    fn null_space_examples() {
        assert_eq!(null_space(&zeros(2, 2), RANK_TOL).ncols(), 2);
        assert_eq!(null_space(&identity(2), RANK_TOL).ncols(), 0);
        let p0 = matrix_unit(2, 0, 0);
        let ns = null_space(&p0, RANK_TOL);
        assert_eq!(ns.ncols(), 1);
        // SVD oracle: the kernel of |0⟩⟨0| is spanned by e₁.
        assert!(ns[(0, 0)].norm() < 1e-12);
        assert!((ns[(1, 0)].norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn null_space_of_wide_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_gaussian(2, 5, &mut rng);
        let ns = null_space(&a, RANK_TOL);
        assert_eq!(ns.ncols(), 3);
        let residual = frob(&(&a * &ns));
        assert!(residual <= RANK_TOL * frob(&a));
        assert!(frob(&(ns.adjoint() * &ns - identity(3))) < 1e-12);
    }

    #[test]
    fn psd_project_examples() {
        let d = CMatrix::from_diagonal(&DVector::from_vec(vec![c64(2., 0.), c64(-3., 0.)]));
        let p = psd_project(&d).unwrap();
        let expected = CMatrix::from_diagonal(&DVector::from_vec(vec![c64(2., 0.), c64(0., 0.)]));
        assert!(frob(&(p - expected)) < 1e-12);

        let p = psd_project(&sigma_x()).unwrap();
        let expected = (sigma_x() + identity(2)).scale(0.5);
        assert!(frob(&(p - expected)) < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = random_gaussian(4, 4, &mut rng);
        let psd = &g * g.adjoint();
        assert!(frob(&(psd_project(&psd).unwrap() - &psd)) < 1e-10 * (1.0 + frob(&psd)));
    }

    #[test]
    fn herm_coords_round_trip_and_isometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_hermitian(4, &mut rng);
        let b = random_hermitian(4, &mut rng);
        let xa = herm_coords(&a);
        let xb = herm_coords(&b);
        assert!(frob(&(herm_from_coords(&xa, 4) - &a)) < 1e-14);
        let dot: f64 = xa.iter().zip(&xb).map(|(x, y)| x * y).sum();
        assert!((dot - hs_inner(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn partial_traces() {
        let a = CMatrix::from_fn(2, 2, |i, j| c64((i + 2 * j) as f64, 0.0));
        let b = CMatrix::from_fn(3, 3, |i, j| c64(i as f64, j as f64));
        let ab = kron(&a, &b);
        let tra = a.trace();
        let trb = b.trace();
        assert!(frob(&(partial_trace_first(&ab, 2, 3) - b.scale(1.0) * tra)) < 1e-12);
        assert!(frob(&(partial_trace_second(&ab, 2, 3) - a * trb)) < 1e-12);
    }

    #[test]
    fn pivoted_cholesky_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = random_gaussian(5, 2, &mut rng);
        let psd = &g * g.adjoint();
        let l = pivoted_cholesky(&psd, 1e-12).unwrap();
        assert_eq!(l.ncols(), 2);
        assert!(frob(&(&l * l.adjoint() - &psd)) < 1e-10);
    }

    #[test]
    fn haar_isometry_is_isometric() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = haar_isometry(6, 3, &mut rng);
        assert!(frob(&(v.adjoint() * &v - identity(3))) < 1e-12);
    }
}
