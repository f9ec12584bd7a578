//! Small dense kernels missing from, or not accurate enough in, nalgebra.

use nalgebra::{DMatrix, DVector};

const MAX_SWEEPS: usize = 60;

/// Eigen-decomposition `A = V·diag(λ)·Vᵀ` of a symmetric matrix by cyclic
/// Jacobi rotations. Only the upper triangle is read. An off-diagonal entry
/// is annihilated while `|a_pq| > ε·√|a_pp·a_qq|`, which resolves the small
/// eigenvalues of a positive definite matrix to high relative accuracy.
/// Eigenvalues are returned in no particular order.
pub fn symmetric_eigen(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "symmetric_eigen needs a square matrix");
    let mut a = a.clone();
    for j in 0..n {
        for i in j + 1..n {
            a[(i, j)] = a[(j, i)];
        }
    }
    let mut v = DMatrix::identity(n, n);
    let (av, vv) = (a.as_mut_slice(), v.as_mut_slice());
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let apq = av[q * n + p];
                if apq == 0.0 {
                    continue;
                }
                let (app, aqq) = (av[p * n + p], av[q * n + q]);
                if apq.abs() <= f64::EPSILON * (app * aqq).abs().sqrt() {
                    av[q * n + p] = 0.0;
                    av[p * n + q] = 0.0;
                    continue;
                }
                rotated = true;
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    let t = 1.0 / (theta.abs() + theta.hypot(1.0));
                    if theta < 0.0 {
                        -t
                    } else {
                        t
                    }
                };
                let c = 1.0 / t.hypot(1.0);
                let s = t * c;
                // Columns p and q are contiguous; rows follow by symmetry.
                for r in 0..n {
                    let (arp, arq) = (av[p * n + r], av[q * n + r]);
                    av[p * n + r] = c * arp - s * arq;
                    av[q * n + r] = s * arp + c * arq;
                    av[r * n + p] = av[p * n + r];
                    av[r * n + q] = av[q * n + r];
                }
                av[p * n + p] = app - t * apq;
                av[q * n + q] = aqq + t * apq;
                av[q * n + p] = 0.0;
                av[p * n + q] = 0.0;
                for r in 0..n {
                    let (vrp, vrq) = (vv[p * n + r], vv[q * n + r]);
                    vv[p * n + r] = c * vrp - s * vrq;
                    vv[q * n + r] = s * vrp + c * vrq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    (a.diagonal(), v)
}
