//! One-sided Jacobi SVD for small dense matrices.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 80;

/// Thin SVD: a = u * diag(s) * v^T with s sorted in decreasing order.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

/// Hestenes rotations applied to the columns of `a` (rows >= columns).
fn jacobi_tall(mut a: DMatrix<f64>) -> Result<Svd> {
    let (rows, cols) = a.shape();
    let mut v = DMatrix::<f64>::identity(cols, cols);
    let eps = 4.0 * rows as f64 * f64::EPSILON;
    let mut converged = cols < 2;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for i in 0..cols {
            for j in (i + 1)..cols {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for k in 0..rows {
                    let (x, y) = (a[(k, i)], a[(k, j)]);
                    alpha += x * x;
                    beta += y * y;
                    gamma += x * y;
                }
                if gamma == 0.0 || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for k in 0..rows {
                    let (x, y) = (a[(k, i)], a[(k, j)]);
                    a[(k, i)] = c * x - s * y;
                    a[(k, j)] = s * x + c * y;
                }
                for k in 0..cols {
                    let (x, y) = (v[(k, i)], v[(k, j)]);
                    v[(k, i)] = c * x - s * y;
                    v[(k, j)] = s * x + c * y;
                }
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(Error::SvdNonConvergence(MAX_SWEEPS));
    }
    let norms: Vec<f64> = (0..cols).map(|j| a.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));
    let mut u = DMatrix::zeros(rows, cols);
    let mut vs = DMatrix::zeros(cols, cols);
    let mut s = DVector::zeros(cols);
    for (dst, &src) in order.iter().enumerate() {
        s[dst] = norms[src];
        if norms[src] > 0.0 {
            u.set_column(dst, &(a.column(src) / norms[src]));
        }
        vs.set_column(dst, &v.column(src));
    }
    Ok(Svd { u, s, v: vs })
}

pub fn svd(a: &DMatrix<f64>) -> Result<Svd> {
    if a.nrows() >= a.ncols() {
        jacobi_tall(a.clone())
    } else {
        let t = jacobi_tall(a.transpose())?;
        Ok(Svd { u: t.v, s: t.s, v: t.u })
    }
}

pub fn singular_values(a: &DMatrix<f64>) -> Result<DVector<f64>> {
    Ok(svd(a)?.s)
}

pub fn nuclear_norm(a: &DMatrix<f64>) -> Result<f64> {
    Ok(singular_values(a)?.sum())
}

/// Proximal map of tau ||.||_{S1}: U ST(S, tau) V^T.
pub fn svd_soft_threshold(a: &DMatrix<f64>, tau: f64) -> Result<DMatrix<f64>> {
    if !(tau >= 0.0) {
        return Err(Error::invalid("singular value threshold must be >= 0"));
    }
    let d = svd(a)?;
    let mut out = DMatrix::zeros(a.nrows(), a.ncols());
    for i in 0..d.s.len() {
        let s = d.s[i] - tau;
        if s <= 0.0 {
            break;
        }
        out += d.u.column(i) * d.v.column(i).transpose() * s;
    }
    Ok(out)
}
