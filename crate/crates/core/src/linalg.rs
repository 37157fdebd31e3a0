//! Small dense linear-algebra helpers shared by the solvers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

pub fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// `(M + Mᵀ) / 2`, with the result exactly symmetric.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut out = m.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Orthonormal basis of the nullspace of `c` (rows are constraints).
///
/// Returns `Err(rank)` when `c` does not have full row rank. The basis is
/// taken from the trailing columns of the full orthogonal factor of `cᵀ`.
pub fn nullspace_basis(c: &DMatrix<f64>, n: usize) -> Result<DMatrix<f64>, usize> {
    let m = c.nrows();
    if m == 0 {
        return Ok(DMatrix::identity(n, n));
    }
    if m > n {
        return Err(row_rank(c));
    }
    let qr = c.transpose().qr();
    let r = qr.r();
    let scale = (0..m).fold(0.0_f64, |s, k| s.max(r[(k, k)].abs()));
    let tol = 1e-10 * scale.max(1.0);
    let rank = (0..m).filter(|&k| r[(k, k)].abs() > tol).count();
    if rank < m {
        return Err(rank);
    }
    // Qᵀ applied to the identity gives the full n×n factor.
    let mut qt = DMatrix::identity(n, n);
    qr.q_tr_mul(&mut qt);
    let q = qt.transpose();
    Ok(q.columns(m, n - m).into_owned())
}

fn row_rank(c: &DMatrix<f64>) -> usize {
    let svd = c.clone().svd(false, false);
    let smax = svd.singular_values.iter().fold(0.0_f64, |a, &b| a.max(b));
    svd.singular_values
        .iter()
        .filter(|&&s| s > 1e-10 * smax.max(1.0))
        .count()
}

/// Raise every eigenvalue of the symmetric matrix `m` below `floor` to `floor`.
///
/// Returns the (possibly unchanged) matrix and whether it was modified.
pub fn clamp_eigenvalues(m: &DMatrix<f64>, floor: f64) -> (DMatrix<f64>, bool) {
    modify_eigenvalues(m, floor, false)
}

/// Like [`clamp_eigenvalues`] but negative eigenvalues are mirrored first,
/// `l ↦ max(|l|, floor)`.
pub fn flip_eigenvalues(m: &DMatrix<f64>, floor: f64) -> (DMatrix<f64>, bool) {
    modify_eigenvalues(m, floor, true)
}

fn modify_eigenvalues(m: &DMatrix<f64>, floor: f64, flip: bool) -> (DMatrix<f64>, bool) {
    let n = m.nrows();
    if n == 0 {
        return (m.clone(), false);
    }
    let sym = symmetrize(m);
    let eig = sym.clone().symmetric_eigen();
    // A floor below the rounding level of the rebuilt matrix would not
    // survive reconstruction.
    let scale = eig.eigenvalues.iter().fold(0.0_f64, |a, &l| a.max(l.abs()));
    let floor = floor.max(1e-13 * n as f64 * scale);
    if eig.eigenvalues.iter().all(|&l| l >= floor) {
        return (sym, false);
    }
    let clamped = eig
        .eigenvalues
        .map(|l| if flip { l.abs() } else { l }.max(floor));
    let v = &eig.eigenvectors;
    let rebuilt = v * DMatrix::from_diagonal(&clamped) * v.transpose();
    (symmetrize(&rebuilt), true)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    symmetrize(m)
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b))
}

/// Cholesky factorization of `k + δI` for the smallest δ in a geometric
/// ladder that makes it succeed.
pub fn regularized_cholesky(k: &DMatrix<f64>) -> Option<(Cholesky<f64, Dyn>, f64)> {
    if let Some(ch) = Cholesky::new(k.clone()) {
        return Some((ch, 0.0));
    }
    let scale = k.iter().fold(0.0_f64, |a, &b| a.max(b.abs())).max(1.0);
    let mut delta = 1e-8 * scale;
    while delta < 1e12 * scale {
        let mut shifted = k.clone();
        for i in 0..k.nrows() {
            shifted[(i, i)] += delta;
        }
        if let Some(ch) = Cholesky::new(shifted) {
            return Some((ch, delta));
        }
        delta *= 10.0;
    }
    None
}

/// Solution of a symmetric saddle-point system
///
/// ```text
/// [ K  Jᵀ ] [dx]   [r1]
/// [ J  0  ] [dy] = [r2]
/// ```
///
/// via a (regularized) Cholesky factor of `K` and a Schur complement on `J`.
pub struct SaddleSolution {
    pub dx: DVector<f64>,
    pub dy: DVector<f64>,
    pub shift: f64,
}

pub fn solve_saddle(
    k: &DMatrix<f64>,
    j: &DMatrix<f64>,
    r1: &DVector<f64>,
    r2: &DVector<f64>,
) -> Option<SaddleSolution> {
    if let Some(chol) = Cholesky::new(k.clone()) {
        return schur_solve(&chol, j, r1, r2, 0.0);
    }
    // K may be indefinite yet positive definite on the nullspace of J; then
    // K + γJᵀJ is positive definite for large γ and the augmented system
    // (rhs1 + γJᵀr2) has the same solution.
    if j.nrows() > 0 {
        let jtj = j.tr_mul(j);
        let kmax = k.iter().fold(0.0_f64, |a, &b| a.max(b.abs())).max(1.0);
        let jmax = jtj.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
        if jmax > 0.0 {
            let mut gamma = 10.0 * kmax / jmax;
            for _ in 0..6 {
                if let Some(chol) = Cholesky::new(k + &jtj * gamma) {
                    let rhs = r1 + j.tr_mul(r2) * gamma;
                    return schur_solve(&chol, j, &rhs, r2, 0.0);
                }
                gamma *= 10.0;
            }
        }
    }
    let (chol, shift) = regularized_cholesky(k)?;
    schur_solve(&chol, j, r1, r2, shift)
}

fn schur_solve(
    chol: &Cholesky<f64, Dyn>,
    j: &DMatrix<f64>,
    r1: &DVector<f64>,
    r2: &DVector<f64>,
    shift: f64,
) -> Option<SaddleSolution> {
    let m = j.nrows();
    if m == 0 {
        return Some(SaddleSolution {
            dx: chol.solve(r1),
            dy: DVector::zeros(0),
            shift,
        });
    }
    let kinv_jt = chol.solve(&j.transpose());
    let kinv_r1 = chol.solve(r1);
    let mut schur = symmetrize(&(j * &kinv_jt));
    let rhs = j * &kinv_r1 - r2;
    let schur_chol = match Cholesky::new(schur.clone()) {
        Some(c) => c,
        None => {
            // Dependent constraint rows: a tiny dual regularization keeps the
            // step well defined.
            let eps = 1e-12 * schur.iter().fold(1.0_f64, |a, &b| a.max(b.abs()));
            for i in 0..m {
                schur[(i, i)] += eps;
            }
            Cholesky::new(schur)?
        }
    };
    let dy = schur_chol.solve(&rhs);
    let dx = &kinv_r1 - &kinv_jt * &dy;
    Some(SaddleSolution { dx, dy, shift })
}

/// Rows of `m` selected by `rows`, in order.
pub fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |r, c| m[(rows[r], c)])
}
