use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::least_squares;

/// Polynomial trend in normalized time `x = (t - t_mean) / t_scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyModel {
    pub degree: usize,
    /// `c_0 ..= c_d`, lowest order first.
    pub coefficients: Vec<f64>,
    pub t_mean: f64,
    pub t_scale: f64,
}

impl PolyModel {
    pub fn normalize(&self, t: f64) -> f64 {
        (t - self.t_mean) / self.t_scale
    }

    /// Horner evaluation at raw time `t`.
    pub fn predict(&self, t: f64) -> f64 {
        let x = self.normalize(t);
        self.coefficients
            .iter()
            .rev()
            .fold(0.0, |acc, &c| acc * x + c)
    }
}

pub fn fit_poly(times: &[f64], values: &[f64], degree: usize) -> Result<PolyModel> {
    if times.len() != values.len() {
        return Err(Error::Shape(format!(
            "{} timestamps but {} values",
            times.len(),
            values.len()
        )));
    }
    let n = times.len();
    if n < degree + 1 {
        return Err(Error::Fit(format!(
            "degree {degree} needs at least {} points, got {n}",
            degree + 1
        )));
    }
    if times.iter().chain(values).any(|v| !v.is_finite()) {
        return Err(Error::Validation("series contains non-finite values".into()));
    }
    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Fit("timestamps must be distinct".into()));
    }

    let t_mean = times.iter().sum::<f64>() / n as f64;
    let var = times.iter().map(|t| (t - t_mean).powi(2)).sum::<f64>() / n as f64;
    let t_scale = var.sqrt().max(1.0);

    let design = DMatrix::from_fn(n, degree + 1, |i, k| ((times[i] - t_mean) / t_scale).powi(k as i32));
    let rhs = DVector::from_column_slice(values);
    let coeffs = least_squares(&design, &rhs)
        .map_err(|e| Error::Fit(format!("degree {degree} fit is rank deficient ({e})")))?;
    Ok(PolyModel {
        degree,
        coefficients: coeffs.iter().copied().collect(),
        t_mean,
        t_scale,
    })
}

/// Sum of squared residuals of `model` over the given points.
pub fn residual_sum_of_squares(model: &PolyModel, times: &[f64], values: &[f64]) -> f64 {
    times
        .iter()
        .zip(values)
        .map(|(&t, &y)| (model.predict(t) - y).powi(2))
        .sum()
}
