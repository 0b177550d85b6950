//! Symmetric positive (semi)definite solvers for the normal equations.
//!
//! Every system here has the form `A X = B` with `A` of order `M` (the
//! control-point count) and three right-hand sides, one per coordinate.

use nalgebra::{DMatrix, Vector3};

/// Outcome of a linear solve.
#[derive(Debug, Clone)]
pub struct SolveStats {
    pub iterations: usize,
    /// `max over columns of |A x - b| / |b|`.
    pub relative_residual: f64,
    pub converged: bool,
    /// Eigenvalues discarded by the pseudo-inverse; zero for Cholesky and CG.
    pub dropped_directions: usize,
}

fn to_columns(rhs: &[Vector3<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(rhs.len(), 3, |r, c| rhs[r][c])
}

fn from_columns(x: &DMatrix<f64>) -> Vec<Vector3<f64>> {
    (0..x.nrows())
        .map(|r| Vector3::new(x[(r, 0)], x[(r, 1)], x[(r, 2)]))
        .collect()
}

fn relative_residual(a: &DMatrix<f64>, x: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let r = a * x - b;
    (0..3)
        .map(|c| {
            let bn = b.column(c).norm();
            let rn = r.column(c).norm();
            if bn == 0.0 {
                rn
            } else {
                rn / bn
            }
        })
        .fold(0.0, f64::max)
}

/// Cholesky solve; `None` when `a` is not numerically positive definite.
pub fn dense_cholesky(
    a: &DMatrix<f64>,
    rhs: &[Vector3<f64>],
) -> Option<(Vec<Vector3<f64>>, SolveStats)> {
    let chol = a.clone().cholesky()?;
    let b = to_columns(rhs);
    let x = chol.solve(&b);
    let stats = SolveStats {
        iterations: 1,
        relative_residual: relative_residual(a, &x, &b),
        converged: true,
        dropped_directions: 0,
    };
    Some((from_columns(&x), stats))
}

/// Minimum-norm least-squares solution through the symmetric
/// eigendecomposition, discarding eigenvalues below `cutoff * max`.
pub fn dense_pseudo_inverse(
    a: &DMatrix<f64>,
    rhs: &[Vector3<f64>],
    cutoff: f64,
) -> (Vec<Vector3<f64>>, SolveStats) {
    let eig = a.clone().symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(0.0_f64, |m, &v| m.max(v.abs()));
    let floor = cutoff * top;
    let kept: Vec<bool> = eig
        .eigenvalues
        .iter()
        .map(|&lam| lam > floor && lam > 0.0)
        .collect();
    let dropped = kept.iter().filter(|&&k| !k).count();
    let solve = |b: &DMatrix<f64>| {
        let mut scaled = eig.eigenvectors.transpose() * b;
        for (i, &lam) in eig.eigenvalues.iter().enumerate() {
            if kept[i] {
                scaled.row_mut(i).scale_mut(1.0 / lam);
            } else {
                scaled.row_mut(i).fill(0.0);
            }
        }
        &eig.eigenvectors * scaled
    };
    let b = to_columns(rhs);
    let x = solve(&b);
    let stats = SolveStats {
        iterations: 1,
        relative_residual: relative_residual(a, &x, &b),
        converged: true,
        dropped_directions: dropped,
    };
    (from_columns(&x), stats)
}

/// Jacobi-preconditioned conjugate gradients, one coordinate at a time,
/// warm-started from `x0`. `apply` computes `A v` for a scalar vector.
/// Residuals are measured relative to `max(|b_c|, residual_floor)`.
///
/// Starting from `x0`, each iterate lowers the quadratic `x'Ax/2 - b'x`, so a
/// warm start never does worse than the point it starts from.
pub fn preconditioned_cg<F>(
    apply: F,
    diagonal: &[f64],
    rhs: &[Vector3<f64>],
    x0: &[Vector3<f64>],
    tolerance: f64,
    max_iterations: usize,
    residual_floor: f64,
) -> (Vec<Vector3<f64>>, SolveStats)
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = rhs.len();
    let inv_diag: Vec<f64> = diagonal
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut out = x0.to_vec();
    let mut worst = 0.0_f64;
    let mut total_iters = 0;
    let mut converged = true;

    for c in 0..3 {
        let b: Vec<f64> = rhs.iter().map(|v| v[c]).collect();
        let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut x: Vec<f64> = x0.iter().map(|v| v[c]).collect();
        let ax = apply(&x);
        let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let floor = bnorm.max(residual_floor);
        let scale = if floor > 0.0 { floor } else { 1.0 };
        let mut rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
        let mut p = z.clone();
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let mut iters = 0;
        while rnorm > tolerance * scale && iters < max_iterations {
            let ap = apply(&p);
            let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
            if !(pap > 0.0) {
                break;
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            for i in 0..n {
                z[i] = r[i] * inv_diag[i];
            }
            let rz_next: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            let beta = rz_next / rz;
            rz = rz_next;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
            iters += 1;
        }
        let rel = rnorm / scale;
        if rel > tolerance {
            converged = false;
        }
        worst = worst.max(rel);
        total_iters += iters;
        for (o, xi) in out.iter_mut().zip(&x) {
            o[c] = *xi;
        }
    }
    let stats = SolveStats {
        iterations: total_iters,
        relative_residual: worst,
        converged,
        dropped_directions: 0,
    };
    (out, stats)
}
