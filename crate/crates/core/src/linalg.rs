//! Small dense linear-algebra helpers: finite differences, the Lyapunov
//! equation, and symmetric/generalized eigenvalue utilities used by the
//! observer design.

use crate::error::{Error, Result};
use nalgebra::{Cholesky, Complex, DMatrix, DVector, Dyn};

/// Central-difference Jacobian of `f` at `x` with step `h * (1 + ||x||)`.
pub fn fd_jacobian<F>(f: &F, x: &DVector<f64>, out_dim: usize, h: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let step = h * (1.0 + x.norm());
    let n = x.len();
    let mut jac = DMatrix::zeros(out_dim, n);
    let mut xp = x.clone();
    for j in 0..n {
        xp[j] = x[j] + step;
        let fp = f(&xp);
        xp[j] = x[j] - step;
        let fm = f(&xp);
        xp[j] = x[j];
        jac.set_column(j, &((fp - fm) / (2.0 * step)));
    }
    jac
}

/// Largest real part over the eigenvalues of a square matrix.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Eigenvalue range (min, max) of a symmetric matrix.
pub fn sym_eig_range(s: &DMatrix<f64>) -> (f64, f64) {
    let sym = (s + s.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in eig.eigenvalues.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

/// Solves the continuous Lyapunov equation `A^T M + M A + Q = 0` by Kronecker
/// vectorization. Requires `A` Hurwitz for a positive definite solution;
/// the caller is expected to check. Result is symmetrized.
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || q.nrows() != n || q.ncols() != n {
        return Err(Error::InvalidArgument(
            "lyapunov: A and Q must be square with matching size".into(),
        ));
    }
    // vec(A^T M) = (I ⊗ A^T) vec(M), vec(M A) = (A^T ⊗ I) vec(M)
    let eye = DMatrix::<f64>::identity(n, n);
    let at = a.transpose();
    let lhs = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = -DVector::from_column_slice(q.as_slice());
    let sol = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::DesignInfeasible("singular Lyapunov operator".into()))?;
    let m = DMatrix::from_column_slice(n, n, sol.as_slice());
    Ok((&m + m.transpose()) * 0.5)
}

/// Largest eigenvalue of `M^{-1/2} G M^{-1/2}` for symmetric `G` and SPD `M`,
/// i.e. the largest generalized eigenvalue of `(G, M)`.
pub fn gen_eig_max(g: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<f64> {
    let chol: Cholesky<f64, Dyn> = Cholesky::new(m.clone())
        .ok_or_else(|| Error::InvalidArgument("gen_eig_max: M not positive definite".into()))?;
    let l = chol.l();
    // X = L^{-1} G, then Y = X L^{-T} = L^{-1} G L^{-T}
    let x = l
        .solve_lower_triangular(g)
        .ok_or_else(|| Error::InvalidArgument("gen_eig_max: singular Cholesky factor".into()))?;
    let y_t = l
        .solve_lower_triangular(&x.transpose())
        .ok_or_else(|| Error::InvalidArgument("gen_eig_max: singular Cholesky factor".into()))?;
    Ok(sym_eig_range(&y_t.transpose()).1)
}

/// Numeric PBH detectability test: every eigenvalue of `A` with real part
/// `>= -shift` must be observable through `C`.
pub fn is_detectable(a: &DMatrix<f64>, c: &DMatrix<f64>, shift: f64) -> bool {
    let n = a.nrows();
    let p = c.nrows();
    let eigs = a.complex_eigenvalues();
    let scale = a.norm().max(c.norm()).max(1.0);
    for lam in eigs.iter() {
        if lam.re < -shift - 1e-9 {
            continue;
        }
        // stack [A - lam I; C] as a complex matrix and check full column rank
        let mut stacked = DMatrix::<Complex<f64>>::zeros(n + p, n);
        for i in 0..n {
            for j in 0..n {
                stacked[(i, j)] = Complex::new(a[(i, j)], 0.0);
            }
            stacked[(i, i)] -= *lam;
        }
        for i in 0..p {
            for j in 0..n {
                stacked[(n + i, j)] = Complex::new(c[(i, j)], 0.0);
            }
        }
        let svals = stacked.svd(false, false).singular_values;
        let smin = svals.iter().cloned().fold(f64::INFINITY, f64::min);
        if smin < 1e-10 * scale {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_jacobian_matches_linear_map() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, -0.5, 0.0, 3.0, 1.5]);
        let a2 = a.clone();
        let f = move |x: &DVector<f64>| &a2 * x;
        let x = DVector::from_vec(vec![0.3, -1.2, 2.0]);
        let j = fd_jacobian(&f, &x, 2, 1e-6);
        assert!((j - a).norm() < 1e-9);
    }

    #[test]
    fn lyapunov_residual_is_small_and_solution_spd() {
        let a = DMatrix::from_row_slice(3, 3, &[-1.0, 0.5, 0.0, 0.0, -2.0, 0.3, 0.1, 0.0, -1.5]);
        let q = DMatrix::identity(3, 3);
        let m = solve_lyapunov(&a, &q).unwrap();
        let resid = a.transpose() * &m + &m * &a + &q;
        assert!(resid.norm() < 1e-10);
        let (lo, _) = sym_eig_range(&m);
        assert!(lo > 0.0);
    }

    #[test]
    fn abscissa_of_known_matrix() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -3.0]); // poles -1, -2
        assert!((spectral_abscissa(&a) + 1.0).abs() < 1e-9);
    }

    #[test]
    fn gen_eig_max_reduces_to_plain_eig_for_identity_metric() {
        let g = DMatrix::from_row_slice(2, 2, &[-2.0, 0.4, 0.4, -1.0]);
        let m = DMatrix::identity(2, 2);
        let ge = gen_eig_max(&g, &m).unwrap();
        let (_, hi) = sym_eig_range(&g);
        assert!((ge - hi).abs() < 1e-10);
    }

    #[test]
    fn detectability_of_double_integrator() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let c_pos = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let c_vel = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        assert!(is_detectable(&a, &c_pos, 0.5));
        // velocity measurement cannot see the position mode at the origin
        assert!(!is_detectable(&a, &c_vel, 0.5));
    }
}
