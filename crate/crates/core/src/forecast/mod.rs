//! Indicator forecasting with a polynomial trend or an LSTM.
//!
//! Both families forecast one column at a time. Future timestamps follow the
//! mean spacing of the training series.

mod lstm;
mod poly;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use lstm::{gradient_check, train_lstm, Gate, LstmModel, TrainConfig, Trajectory};
pub use poly::{fit_poly, residual_sum_of_squares, PolyModel};

use crate::error::{Error, Result};
use crate::indicators::IndicatorSeries;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model_kind", rename_all = "snake_case")]
pub enum ForecastModel {
    Poly(PolyModel),
    Lstm(LstmModel),
}

impl ForecastModel {
    pub fn kind(&self) -> &'static str {
        match self {
            ForecastModel::Poly(_) => "poly",
            ForecastModel::Lstm(_) => "lstm",
        }
    }
}

/// On-disk model bundle: one model per forecast column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format_version: u32,
    pub models: BTreeMap<String, ForecastModel>,
}

impl ModelFile {
    pub fn new(models: BTreeMap<String, ForecastModel>) -> Self {
        Self {
            format_version: MODEL_FORMAT_VERSION,
            models,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::parse("model file", e))?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported model format version {}",
                file.format_version
            )));
        }
        Ok(file)
    }
}

/// Mean spacing between consecutive timestamps.
pub fn cadence(times: &[i64]) -> Result<f64> {
    match (times.first(), times.last()) {
        (Some(&a), Some(&b)) if times.len() >= 2 && b > a => {
            Ok((b - a) as f64 / (times.len() - 1) as f64)
        }
        _ => Err(Error::Range("cadence needs at least two increasing timestamps".into())),
    }
}

/// Future timestamps `last + round(k * cadence)` for `k = 1..=horizon`.
pub fn future_timestamps(times: &[i64], horizon: usize) -> Result<Vec<i64>> {
    if horizon == 0 {
        return Err(Error::Range("horizon must be >= 1".into()));
    }
    let step = cadence(times)?;
    let last = *times.last().expect("checked by cadence");
    Ok((1..=horizon)
        .map(|k| last + (k as f64 * step).round() as i64)
        .collect())
}

/// `horizon` future values of one column: direct evaluation for a
/// polynomial, iterated roll-out for an LSTM.
pub fn forecast(
    model: &ForecastModel,
    times: &[i64],
    values: &[f64],
    horizon: usize,
) -> Result<Vec<(i64, f64)>> {
    if times.len() != values.len() {
        return Err(Error::Shape(format!(
            "{} timestamps but {} values",
            times.len(),
            values.len()
        )));
    }
    let future = future_timestamps(times, horizon)?;
    let predicted = match model {
        ForecastModel::Poly(p) => future.iter().map(|&t| p.predict(t as f64)).collect(),
        ForecastModel::Lstm(m) => m.roll_out(values, horizon)?,
    };
    Ok(future.into_iter().zip(predicted).collect())
}

/// Fits one model per column of `series`.
pub fn fit_series(
    series: &IndicatorSeries,
    kind: &str,
    degree: usize,
    lstm: &TrainConfig,
) -> Result<BTreeMap<String, ForecastModel>> {
    let times: Vec<f64> = series.timestamps().iter().map(|&t| t as f64).collect();
    series
        .names()
        .iter()
        .map(|name| {
            let values = series.column(name)?;
            let model = match kind {
                "poly" => ForecastModel::Poly(fit_poly(&times, &values, degree)?),
                "lstm" => ForecastModel::Lstm(train_lstm(&values, lstm)?.0),
                other => {
                    return Err(Error::Config(format!(
                        "unknown model kind `{other}`, expected `poly` or `lstm`"
                    )))
                }
            };
            Ok((name.clone(), model))
        })
        .collect()
}

/// Series history followed by forecast rows, with a trailing `forecast`
/// column marking which is which.
pub fn forecast_csv(
    series: &IndicatorSeries,
    models: &BTreeMap<String, ForecastModel>,
    horizon: usize,
) -> Result<String> {
    let times = series.timestamps();
    let mut columns = Vec::with_capacity(series.names().len());
    for name in series.names() {
        let model = models
            .get(name)
            .ok_or_else(|| Error::Validation(format!("no model for column `{name}`")))?;
        columns.push(forecast(model, &times, &series.column(name)?, horizon)?);
    }
    let mut out = String::from("timestamp");
    for n in series.names() {
        write!(out, ",{n}").unwrap();
    }
    out.push_str(",forecast\n");
    let history: Vec<Vec<f64>> = series
        .names()
        .iter()
        .map(|n| series.column(n))
        .collect::<Result<_>>()?;
    for (row, t) in times.iter().enumerate() {
        write!(out, "{t}").unwrap();
        for col in &history {
            write!(out, ",{}", col[row]).unwrap();
        }
        out.push_str(",false\n");
    }
    for step in 0..horizon {
        write!(out, "{}", columns[0][step].0).unwrap();
        for col in &columns {
            write!(out, ",{}", col[step].1).unwrap();
        }
        out.push_str(",true\n");
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelComparison {
    pub train_len: usize,
    pub test_len: usize,
    pub poly_mse: f64,
    pub lstm_mse: f64,
    pub poly_nrmse: f64,
    pub lstm_nrmse: f64,
    pub noise_std: f64,
}

/// Held-out comparison of both families on one column. The last
/// `test_len` points are held out; both models forecast them from the
/// training prefix. Optional additive uniform noise of standard deviation
/// `noise_std` (seeded) is applied to the training prefix only.
pub fn compare_families(
    times: &[i64],
    values: &[f64],
    test_len: usize,
    degree: usize,
    lstm: &TrainConfig,
    noise_std: f64,
    noise_seed: u64,
) -> Result<ModelComparison> {
    if test_len == 0 || test_len >= times.len() {
        return Err(Error::Range(format!(
            "held-out length {test_len} must be in 1..{}",
            times.len()
        )));
    }
    let split = times.len() - test_len;
    let mut train: Vec<f64> = values[..split].to_vec();
    if noise_std > 0.0 {
        let half_width = noise_std * 3f64.sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        train
            .iter_mut()
            .for_each(|v| *v += rng.random_range(-half_width..half_width));
    }
    let train_times: Vec<f64> = times[..split].iter().map(|&t| t as f64).collect();
    let truth = &values[split..];

    let poly = fit_poly(&train_times, &train, degree)?;
    let poly_pred: Vec<f64> = times[split..].iter().map(|&t| poly.predict(t as f64)).collect();
    let (lstm_model, _) = train_lstm(&train, lstm)?;
    let lstm_pred = lstm_model.roll_out(&train, test_len)?;

    let mse = |pred: &[f64]| {
        pred.iter()
            .zip(truth)
            .map(|(p, t)| (p - t).powi(2))
            .sum::<f64>()
            / test_len as f64
    };
    let mean = truth.iter().sum::<f64>() / test_len as f64;
    let spread = (truth.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / test_len as f64)
        .sqrt()
        .max(f64::MIN_POSITIVE);
    let (poly_mse, lstm_mse) = (mse(&poly_pred), mse(&lstm_pred));
    Ok(ModelComparison {
        train_len: split,
        test_len,
        poly_mse,
        lstm_mse,
        poly_nrmse: poly_mse.sqrt() / spread,
        lstm_nrmse: lstm_mse.sqrt() / spread,
        noise_std,
    })
}
