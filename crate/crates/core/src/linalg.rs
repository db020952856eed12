//! Small dense linear-algebra helpers shared by the solvers.

use nalgebra::DMatrix;

use crate::{CMat, Complex64, Error, RMat, RVec, Result};

/// Largest absolute entry of `a - a^T`, relative to the largest entry of `a`.
pub fn asymmetry(a: &RMat) -> f64 {
    let scale = a.amax().max(f64::MIN_POSITIVE);
    let mut worst = 0.0f64;
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst / scale
}

pub fn check_symmetric(a: &RMat, tol: f64) -> Result<()> {
    if !a.is_square() {
        return Err(Error::InvalidInput(format!(
            "expected a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let asym = asymmetry(a);
    if asym > tol {
        return Err(Error::NotSymmetric(asym));
    }
    Ok(())
}

/// Solves `a x = b` with partial-pivoting LU.
pub fn solve(a: RMat, b: &RVec, what: &'static str) -> Result<RVec> {
    let lu = a.lu();
    let x = lu.solve(b).ok_or(Error::Singular(what))?;
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(Error::Singular(what))
    }
}

pub fn to_complex(a: &RMat) -> CMat {
    a.map(|v| Complex64::new(v, 0.0))
}

/// Inverse of a complex square matrix.
pub fn inverse_complex(a: &CMat, what: &'static str) -> Result<CMat> {
    a.clone().try_inverse().ok_or(Error::Singular(what))
}

pub fn is_zero(a: &RMat) -> bool {
    a.iter().all(|v| *v == 0.0)
}

/// Max-norm of a real vector, zero for empty input.
pub fn inf_norm(v: &RVec) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// `max |a_ij - b_ij| / max |b_ij|`.
pub fn rel_diff(a: &CMat, b: &CMat) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.norm()));
    let diff = a.iter().zip(b.iter()).fold(0.0f64, |m, (x, y)| m.max((x - y).norm()));
    diff / scale.max(f64::MIN_POSITIVE)
}

pub fn identity_c(n: usize) -> CMat {
    DMatrix::identity(n, n)
}
