//! One-sided Jacobi SVD for small dense square matrices.
//!
//! Rotates column pairs of a working copy until all columns are mutually
//! orthogonal, then reads the singular values off as column norms. Plenty
//! accurate for the dimensions used here (a few hundred at most), with no
//! external linear-algebra dependency.

use crate::error::{Error, Result};
use crate::geometry::SquareMat;

/// Convergence threshold on the normalized off-diagonal mass.
const JACOBI_TOL: f64 = 1e-12;
/// Sweep limit; convergence is typically reached in well under 20 sweeps.
const MAX_SWEEPS: usize = 60;

/// Factors `m` as `U * diag(s) * V^T` with `U`, `V` orthogonal and `s`
/// non-negative in descending order.
pub fn svd_square(m: &SquareMat) -> Result<(SquareMat, Vec<f64>, SquareMat)> {
    if !m.entries().iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite);
    }
    let n = m.dim();

    // Work on columns: cols[j][i] = m[i][j].
    let mut cols: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| m.at(i, j)).collect())
        .collect();
    let mut v_cols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    for _sweep in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (alpha, beta, gamma) = {
                    let (cp, cq) = (&cols[p], &cols[q]);
                    let mut a = 0.0;
                    let mut b = 0.0;
                    let mut g = 0.0;
                    for i in 0..n {
                        a += cp[i] * cp[i];
                        b += cq[i] * cq[i];
                        g += cp[i] * cq[i];
                    }
                    (a, b, g)
                };
                if gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut cols, p, q, c, s);
                rotate_pair(&mut v_cols, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    // Singular values are the column norms of the rotated matrix.
    let mut sigma: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();

    let frob = sigma.iter().map(|s| s * s).sum::<f64>().sqrt();
    let zero_tol = frob * f64::EPSILON * n as f64;

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut deficient = Vec::new();
    for j in 0..n {
        if sigma[j] > zero_tol {
            u_cols.push(cols[j].iter().map(|x| x / sigma[j]).collect());
        } else {
            sigma[j] = sigma[j].max(0.0);
            deficient.push(j);
            u_cols.push(vec![0.0; n]); // filled below
        }
    }
    complete_orthonormal(&mut u_cols, &deficient);

    // Sort descending by singular value, carrying U and V columns along.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| sigma[b].partial_cmp(&sigma[a]).unwrap().then(a.cmp(&b)));

    let mut u = SquareMat::zeros(n);
    let mut v = SquareMat::zeros(n);
    let mut s_sorted = vec![0.0; n];
    for (new_j, &old_j) in order.iter().enumerate() {
        s_sorted[new_j] = sigma[old_j];
        for i in 0..n {
            *u.at_mut(i, new_j) = u_cols[old_j][i];
            *v.at_mut(i, new_j) = v_cols[old_j][i];
        }
    }
    Ok((u, s_sorted, v))
}

fn rotate_pair(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let n = cols[p].len();
    for i in 0..n {
        let xp = cols[p][i];
        let xq = cols[q][i];
        cols[p][i] = c * xp - s * xq;
        cols[q][i] = s * xp + c * xq;
    }
}

/// Fills the listed columns with unit vectors orthogonal to every other
/// column, drawn from the standard basis via two rounds of Gram-Schmidt.
fn complete_orthonormal(u_cols: &mut [Vec<f64>], deficient: &[usize]) {
    if deficient.is_empty() {
        return;
    }
    let n = u_cols[0].len();
    let mut filled: Vec<usize> = (0..u_cols.len()).filter(|j| !deficient.contains(j)).collect();
    for &j in deficient {
        let mut best: Option<Vec<f64>> = None;
        for k in 0..n {
            let mut cand = vec![0.0; n];
            cand[k] = 1.0;
            for _ in 0..2 {
                for &f in &filled {
                    let proj: f64 = (0..n).map(|i| cand[i] * u_cols[f][i]).sum();
                    for i in 0..n {
                        cand[i] -= proj * u_cols[f][i];
                    }
                }
            }
            let norm = cand.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                for x in &mut cand {
                    *x /= norm;
                }
                best = Some(cand);
                break;
            }
        }
        u_cols[j] = best.expect("orthonormal completion always exists");
        filled.push(j);
    }
}
