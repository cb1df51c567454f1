//! Small dense linear algebra on row-major `d × d` matrices stored in slices.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numeric::norm;

const POWER_MAX_ITER: usize = 200;
const POWER_REL_TOL: f64 = 1e-12;

/// Infers `d` from a row-major square matrix of length `d²`.
pub fn square_dim(len: usize) -> Result<usize> {
    let d = libm::sqrt(len as f64) as usize;
    for cand in [d.saturating_sub(1), d, d + 1] {
        if cand * cand == len && cand > 0 {
            return Ok(cand);
        }
    }
    Err(Error::InvalidInput("matrix is not square"))
}

/// `out = a · x`
pub fn matvec(a: &[f64], x: &[f64], out: &mut [f64]) {
    let d = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &a[i * d..(i + 1) * d];
        let mut acc = 0.0;
        for j in 0..d {
            acc += row[j] * x[j];
        }
        *o = acc;
    }
}

/// `out = aᵀ · x`
pub fn matvec_transpose(a: &[f64], x: &[f64], out: &mut [f64]) {
    let d = x.len();
    for (j, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for i in 0..d {
            acc += a[i * d + j] * x[i];
        }
        *o = acc;
    }
}

pub fn transpose(a: &[f64], d: usize) -> Vec<f64> {
    let mut t = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            t[j * d + i] = a[i * d + j];
        }
    }
    t
}

/// Spectral norm by power iteration on `JᵀJ`.
///
/// The start vector is the normalised all-ones vector. If the iteration
/// lands below the largest column norm (the start was orthogonal to the
/// dominant eigenspace) it is restarted from that column's basis vector.
pub fn spectral_norm(j: &[f64], d: usize) -> Result<f64> {
    if j.len() != d * d || d == 0 {
        return Err(Error::InvalidInput(
            "matrix length does not match dimension",
        ));
    }
    if !j.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("matrix has non-finite entries"));
    }
    if d == 1 {
        return Ok(libm::fabs(j[0]));
    }

    let mut best_col = 0;
    let mut best_col_sq = 0.0;
    for c in 0..d {
        let sq: f64 = (0..d).map(|r| j[r * d + c] * j[r * d + c]).sum();
        if sq > best_col_sq {
            best_col_sq = sq;
            best_col = c;
        }
    }
    if best_col_sq == 0.0 {
        return Ok(0.0);
    }

    let start = vec![1.0 / libm::sqrt(d as f64); d];
    let lambda = power_iterate(j, d, start);
    if lambda >= best_col_sq * (1.0 - 1e-12) {
        return Ok(libm::sqrt(lambda));
    }
    let mut e = vec![0.0; d];
    e[best_col] = 1.0;
    Ok(libm::sqrt(power_iterate(j, d, e).max(best_col_sq)))
}

fn power_iterate(j: &[f64], d: usize, mut v: Vec<f64>) -> f64 {
    let mut jv = vec![0.0; d];
    let mut w = vec![0.0; d];
    let mut lambda = 0.0;
    for _ in 0..POWER_MAX_ITER {
        matvec(j, &v, &mut jv);
        matvec_transpose(j, &jv, &mut w);
        let next = norm(&w);
        if next == 0.0 {
            return 0.0;
        }
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / next;
        }
        let converged = libm::fabs(next - lambda) <= POWER_REL_TOL * next;
        lambda = next;
        if converged {
            break;
        }
    }
    lambda
}

/// LU factorisation with partial pivoting.
#[derive(Debug, Clone)]
pub struct Lu {
    d: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl Lu {
    pub fn new(a: &[f64], d: usize) -> Result<Self> {
        if a.len() != d * d {
            return Err(Error::InvalidInput(
                "matrix length does not match dimension",
            ));
        }
        let mut lu = a.to_vec();
        let mut perm: Vec<usize> = (0..d).collect();
        let scale = a.iter().fold(0.0_f64, |m, v| m.max(libm::fabs(*v)));
        if scale == 0.0 || !scale.is_finite() {
            return Err(Error::Singular);
        }
        for k in 0..d {
            let (p, pivot) =
                (k..d)
                    .map(|i| (i, libm::fabs(lu[i * d + k])))
                    .fold(
                        (k, -1.0),
                        |best, cur| if cur.1 > best.1 { cur } else { best },
                    );
            if pivot <= scale * 1e-300 {
                return Err(Error::Singular);
            }
            if p != k {
                for c in 0..d {
                    lu.swap(k * d + c, p * d + c);
                }
                perm.swap(k, p);
            }
            let piv = lu[k * d + k];
            for i in k + 1..d {
                let f = lu[i * d + k] / piv;
                lu[i * d + k] = f;
                for c in k + 1..d {
                    lu[i * d + c] -= f * lu[k * d + c];
                }
            }
        }
        Ok(Self { d, lu, perm })
    }

    pub fn solve(&self, b: &[f64], out: &mut [f64]) {
        let d = self.d;
        for i in 0..d {
            let mut acc = b[self.perm[i]];
            for c in 0..i {
                acc -= self.lu[i * d + c] * out[c];
            }
            out[i] = acc;
        }
        for i in (0..d).rev() {
            let mut acc = out[i];
            for c in i + 1..d {
                acc -= self.lu[i * d + c] * out[c];
            }
            out[i] = acc / self.lu[i * d + i];
        }
    }

    pub fn inverse(&self) -> Vec<f64> {
        let d = self.d;
        let mut inv = vec![0.0; d * d];
        let mut e = vec![0.0; d];
        let mut col = vec![0.0; d];
        for c in 0..d {
            e.iter_mut().for_each(|x| *x = 0.0);
            e[c] = 1.0;
            self.solve(&e, &mut col);
            for r in 0..d {
                inv[r * d + c] = col[r];
            }
        }
        inv
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(a: &[f64], d: usize) -> Result<Vec<f64>> {
    if a.len() != d * d {
        return Err(Error::InvalidInput(
            "matrix length does not match dimension",
        ));
    }
    for i in 0..d {
        for j in 0..i {
            if libm::fabs(a[i * d + j] - a[j * d + i]) > 1e-12 * (1.0 + libm::fabs(a[i * d + j])) {
                return Err(Error::InvalidInput("covariance is not symmetric"));
            }
        }
    }
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut acc = a[i * d + j];
            for k in 0..j {
                acc -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if acc <= 0.0 {
                    return Err(Error::InvalidInput("covariance is not positive definite"));
                }
                l[i * d + i] = libm::sqrt(acc);
            } else {
                l[i * d + j] = acc / l[j * d + j];
            }
        }
    }
    Ok(l)
}
