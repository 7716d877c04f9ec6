//! Small dense solvers shared by the regression code.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Solves `(XᵀX + λI) W = XᵀY` through the SVD of `X`, so the result stays
/// accurate when `X` is badly conditioned. `x` is samples × features and `y`
/// is samples × outputs.
pub fn ridge_solve(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    if !(lambda.is_finite() || lambda == f64::INFINITY) || lambda < 0.0 {
        return Err(Error::Config(format!("regularization must be >= 0, got {lambda}")));
    }
    if x.nrows() != y.nrows() {
        return Err(Error::Shape(format!(
            "design has {} rows but targets have {}",
            x.nrows(),
            y.nrows()
        )));
    }
    let (n, p) = x.shape();
    if n == 0 || p == 0 {
        return Err(Error::Shape("empty regression problem".into()));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Validation("regression inputs must be finite".into()));
    }
    if lambda == f64::INFINITY {
        return Ok(DMatrix::zeros(p, y.ncols()));
    }

    let svd = x.clone().svd(true, true);
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested Vᵀ");
    let sigma = &svd.singular_values;
    let sigma_max = sigma.iter().cloned().fold(0.0, f64::max);

    if lambda == 0.0 {
        let tol = sigma_max * (n.max(p) as f64) * f64::EPSILON;
        let rank = sigma.iter().filter(|&&s| s > tol).count();
        if rank < p {
            return Err(Error::Solver(format!(
                "normal equations are singular (rank {rank} of {p}); use a regularization strength > 0"
            )));
        }
    }

    // W = V diag(σ / (σ² + λ)) Uᵀ Y
    let mut uty = u.transpose() * y;
    for (i, &s) in sigma.iter().enumerate() {
        let denom = s * s + lambda;
        let f = if denom > 0.0 { s / denom } else { 0.0 };
        uty.row_mut(i).scale_mut(f);
    }
    Ok(v_t.transpose() * uty)
}

/// Least-squares solution of `A c ≈ b` by Householder QR. Fails when `A`
/// is numerically rank deficient.
pub fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let (n, p) = a.shape();
    if n < p {
        return Err(Error::Fit(format!("{n} equations for {p} unknowns")));
    }
    let qr = a.clone().qr();
    let r = qr.r();
    let diag_max = (0..p).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    let tol = diag_max * (n.max(p) as f64) * f64::EPSILON * 16.0;
    if let Some(i) = (0..p).find(|&i| r[(i, i)].abs() <= tol) {
        return Err(Error::Fit(format!("rank deficient in column {i}")));
    }
    let qtb = qr.q().transpose() * b;
    r.solve_upper_triangular(&qtb)
        .ok_or_else(|| Error::Fit("triangular solve failed".into()))
}
