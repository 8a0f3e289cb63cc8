//! One-sided Jacobi (Hestenes) singular value decomposition.

use super::{dot, Matrix};
use crate::error::{Error, Result};

/// Relative off-diagonal threshold: a column pair is left alone once
/// `|aᵢ·aⱼ| ≤ SVD_TOL · ‖aᵢ‖‖aⱼ‖`.
pub const SVD_TOL: f64 = 1e-14;

/// Sweep cap before reporting non-convergence.
pub const SVD_MAX_SWEEPS: usize = 60;

/// Thin SVD `M = U · diag(sigma) · Vᵀ` with `r = min(rows, cols)` columns in
/// `U` (`rows × r`) and `V` (`cols × r`).
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub v: Matrix,
}

impl SvdResult {
    /// `U · diag(sigma) · Vᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        let (m, n, r) = (self.u.rows(), self.v.rows(), self.sigma.len());
        let mut out = Matrix::zeros(m, n);
        for j in 0..n {
            let col = out.col_mut(j);
            for l in 0..r {
                let w = self.sigma[l] * self.v.get(j, l);
                if w == 0.0 {
                    continue;
                }
                for (o, &uv) in col.iter_mut().zip(self.u.col(l)) {
                    *o += uv * w;
                }
            }
        }
        out
    }
}

/// Computes the thin SVD of `m` by one-sided Jacobi rotations on the taller
/// orientation. Singular values are returned in non-increasing order.
pub fn svd(m: &Matrix) -> Result<SvdResult> {
    if !m.is_finite() {
        return Err(Error::NonFinite("svd input".into()));
    }
    if m.rows() >= m.cols() {
        jacobi(m)
    } else {
        let t = jacobi(&m.transpose())?;
        Ok(SvdResult {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        })
    }
}

/// Requires `a.rows() >= a.cols()`.
fn jacobi(a: &Matrix) -> Result<SvdResult> {
    let (m, n) = a.shape();
    let mut w = a.clone();
    let mut v = Matrix::identity(n);
    let mut norms: Vec<f64> = (0..n).map(|j| dot(w.col(j), w.col(j))).collect();

    let mut converged = n < 2;
    let mut sweep = 0;
    while !converged {
        if sweep == SVD_MAX_SWEEPS {
            return Err(Error::SvdNonConvergence { sweeps: sweep });
        }
        sweep += 1;
        converged = true;
        // Within a sweep norms are updated in closed form; refresh them
        // exactly so rounding does not accumulate across sweeps.
        for (j, nj) in norms.iter_mut().enumerate() {
            *nj = dot(w.col(j), w.col(j));
        }
        for i in 0..n - 1 {
            for j in i + 1..n {
                let alpha = norms[i];
                let beta = norms[j];
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let gamma = dot(w.col(i), w.col(j));
                if gamma.abs() <= SVD_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                converged = false;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, i, j, c, s);
                rotate(&mut v, i, j, c, s);
                norms[i] = (alpha - t * gamma).max(0.0);
                norms[j] = beta + t * gamma;
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let sig: Vec<f64> = norms.iter().map(|x| x.sqrt()).collect();
    order.sort_by(|&x, &y| sig[y].total_cmp(&sig[x]));

    let smax = order.first().map_or(0.0, |&i| sig[i]);
    let cutoff = smax * f64::EPSILON * m.max(n) as f64;
    let mut u = Matrix::zeros(m, n);
    let mut vs = Matrix::zeros(n, n);
    let mut sigma = Vec::with_capacity(n);
    let mut deficient = Vec::new();
    for (dst, &src) in order.iter().enumerate() {
        let s = sig[src];
        vs.col_mut(dst).copy_from_slice(v.col(src));
        if s > cutoff && s > 0.0 {
            for (o, &x) in u.col_mut(dst).iter_mut().zip(w.col(src)) {
                *o = x / s;
            }
            sigma.push(s);
        } else {
            // Too small to normalize reliably; the column is filled in below.
            deficient.push(dst);
            sigma.push(if s > 0.0 { s } else { 0.0 });
        }
    }
    complete_basis(&mut u, &deficient);
    Ok(SvdResult { u, sigma, v: vs })
}

fn rotate(x: &mut Matrix, i: usize, j: usize, c: f64, s: f64) {
    let rows = x.rows();
    let data = x.as_mut_slice();
    let (lo, hi) = data.split_at_mut(j * rows);
    let ci = &mut lo[i * rows..(i + 1) * rows];
    let cj = &mut hi[..rows];
    for (a, b) in ci.iter_mut().zip(cj.iter_mut()) {
        let (xa, xb) = (*a, *b);
        *a = c * xa - s * xb;
        *b = s * xa + c * xb;
    }
}

/// Replaces the listed columns of `u` with unit vectors orthogonal to every
/// other column (modified Gram-Schmidt against standard basis candidates).
fn complete_basis(u: &mut Matrix, missing: &[usize]) {
    if missing.is_empty() {
        return;
    }
    let (m, n) = u.shape();
    let mut is_missing = vec![false; n];
    for &c in missing {
        is_missing[c] = true;
        u.col_mut(c).fill(0.0);
    }
    let mut candidate = 0;
    for &c in missing {
        loop {
            assert!(candidate < m, "cannot complete orthonormal basis");
            let mut e = vec![0.0; m];
            e[candidate] = 1.0;
            candidate += 1;
            // Two passes of Gram-Schmidt keep the result orthogonal to
            // working precision.
            for _ in 0..2 {
                for (k, &missing) in is_missing.iter().enumerate() {
                    if k == c || (missing && u.col(k).iter().all(|&x| x == 0.0)) {
                        continue;
                    }
                    let p = dot(u.col(k), &e);
                    for (ev, &uv) in e.iter_mut().zip(u.col(k)) {
                        *ev -= p * uv;
                    }
                }
            }
            let nrm = dot(&e, &e).sqrt();
            if nrm > 0.5 {
                for (o, ev) in u.col_mut(c).iter_mut().zip(&e) {
                    *o = ev / nrm;
                }
                break;
            }
        }
    }
}
