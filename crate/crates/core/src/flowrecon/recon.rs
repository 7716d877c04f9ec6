//! Sensor-driven reconstruction: R1 maps wall-pressure POD coefficients to
//! velocity POD coefficients, R2 maps raw sensor values straight onto a
//! plane of the velocity field.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::pod::{field_vector, truncation_floor, FieldSelection, PodBasis, PodSource};
use super::wake::{SensorTrace, SnapshotMatrix};
use crate::error::{Error, Result};
use crate::linalg::ridge_solve;

pub trait Regressor {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn predict(&self, input: &[f64]) -> Result<Vec<f64>>;
}

/// Linear ridge map `y = ȳ + (x - x̄) W`. Without centering both means
/// are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeMap {
    pub lambda: f64,
    pub input_mean: Vec<f64>,
    pub output_mean: Vec<f64>,
    /// `weights[i][o]`.
    pub weights: Vec<Vec<f64>>,
}

impl RidgeMap {
    pub fn fit(inputs: &[Vec<f64>], targets: &[Vec<f64>], lambda: f64, centered: bool) -> Result<RidgeMap> {
        let n = inputs.len();
        if n == 0 || n != targets.len() {
            return Err(Error::Shape(format!(
                "{n} input rows but {} target rows",
                targets.len()
            )));
        }
        let p = inputs[0].len();
        let q = targets[0].len();
        if q == 0 {
            return Err(Error::EmptyDomain("regression has no targets".into()));
        }
        if inputs.iter().any(|r| r.len() != p) || targets.iter().any(|r| r.len() != q) {
            return Err(Error::Shape("ragged regression rows".into()));
        }
        let col_mean = |rows: &[Vec<f64>], d: usize| -> Vec<f64> {
            if !centered {
                return vec![0.0; d];
            }
            (0..d)
                .map(|c| rows.iter().map(|r| r[c]).sum::<f64>() / n as f64)
                .collect()
        };
        let x_mean = col_mean(inputs, p);
        let y_mean = col_mean(targets, q);
        let x = DMatrix::from_fn(n, p, |r, c| inputs[r][c] - x_mean[c]);
        let y = DMatrix::from_fn(n, q, |r, c| targets[r][c] - y_mean[c]);
        let w = ridge_solve(&x, &y, lambda)?;
        Ok(RidgeMap {
            lambda,
            input_mean: x_mean,
            output_mean: y_mean,
            weights: (0..p).map(|i| (0..q).map(|o| w[(i, o)]).collect()).collect(),
        })
    }
}

impl Regressor for RidgeMap {
    fn input_dim(&self) -> usize {
        self.input_mean.len()
    }

    fn output_dim(&self) -> usize {
        self.output_mean.len()
    }

    fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "regressor expects {} inputs, got {}",
                self.input_dim(),
                input.len()
            )));
        }
        let mut out = self.output_mean.clone();
        for ((x, m), row) in input.iter().zip(&self.input_mean).zip(&self.weights) {
            let d = x - m;
            out.iter_mut().zip(row).for_each(|(o, w)| *o += d * w);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationConfig {
    pub n_u: usize,
    pub n_p: usize,
}

impl TruncationConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        for (name, v) in [("n_u", self.n_u), ("n_p", self.n_p)] {
            if v < 1 || v > n {
                return Err(Error::Range(format!("{name} = {v} must lie in 1..={n}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reconstruction1 {
    pub truncation: TruncationConfig,
    pub selection: FieldSelection,
    pub velocity_mean: Vec<f64>,
    pub velocity_modes: Vec<Vec<f64>>,
    pub velocity_eigenvalues: Vec<f64>,
    pub pressure_mean: Vec<f64>,
    pub pressure_modes: Vec<Vec<f64>>,
    pub map: RidgeMap,
    pub train_ids: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Sensor snapshots projected onto the first `n_p` wall-pressure modes.
pub fn r1_inputs(pressure: &PodBasis, n_p: usize, sensors: &SensorTrace) -> Result<Vec<Vec<f64>>> {
    sensors.pressure.iter().map(|row| pressure.project(row, n_p)).collect()
}

fn check_ids(what: &str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::Validation(format!(
            "{what} was computed from a different snapshot set than the sensors"
        )));
    }
    Ok(())
}

pub fn train_reconstruction1(
    velocity: &PodBasis,
    pressure: &PodBasis,
    sensors: &SensorTrace,
    truncation: TruncationConfig,
    lambda: f64,
) -> Result<Reconstruction1> {
    let selection = match velocity.source {
        PodSource::Field(s) => s,
        PodSource::WallPressure => {
            return Err(Error::Validation("velocity basis must come from a field".into()))
        }
    };
    if pressure.source != PodSource::WallPressure {
        return Err(Error::Validation("pressure basis must come from wall sensors".into()));
    }
    check_ids("velocity basis", &velocity.snapshot_ids, &sensors.ids)?;
    check_ids("pressure basis", &pressure.snapshot_ids, &sensors.ids)?;
    let n = velocity.eigenvalues.len();
    truncation.validate(n)?;
    if truncation.n_u > velocity.retained {
        return Err(Error::Range(format!(
            "n_u = {} exceeds the {} retained velocity modes",
            truncation.n_u, velocity.retained
        )));
    }
    if truncation.n_p > pressure.retained {
        return Err(Error::Range(format!(
            "n_p = {} exceeds the {} retained wall-pressure modes",
            truncation.n_p, pressure.retained
        )));
    }
    let mut warnings = Vec::new();
    if truncation.n_p > n.min(sensors.sensor_count()) {
        warnings.push(format!(
            "n_p = {} exceeds min(N, N_s) = {}",
            truncation.n_p,
            n.min(sensors.sensor_count())
        ));
    }
    let inputs = r1_inputs(pressure, truncation.n_p, sensors)?;
    let targets: Vec<Vec<f64>> = (0..sensors.len())
        .map(|k| (0..truncation.n_u).map(|i| velocity.coefficients[i][k]).collect())
        .collect();
    let map = RidgeMap::fit(&inputs, &targets, lambda, false)?;
    Ok(Reconstruction1 {
        truncation,
        selection,
        velocity_mean: velocity.mean.clone(),
        velocity_modes: velocity.modes[..truncation.n_u].to_vec(),
        velocity_eigenvalues: velocity.eigenvalues.clone(),
        pressure_mean: pressure.mean.clone(),
        pressure_modes: pressure.modes[..truncation.n_p].to_vec(),
        map,
        train_ids: sensors.ids.clone(),
        warnings,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Reconstruction1 {
    pub fn predict_coefficients(&self, sensor_values: &[f64]) -> Result<Vec<f64>> {
        if sensor_values.len() != self.pressure_mean.len() {
            return Err(Error::Shape(format!(
                "model expects {} sensors, got {}",
                self.pressure_mean.len(),
                sensor_values.len()
            )));
        }
        let fluct: Vec<f64> = sensor_values
            .iter()
            .zip(&self.pressure_mean)
            .map(|(v, m)| v - m)
            .collect();
        let x: Vec<f64> = self.pressure_modes.iter().map(|m| dot(&fluct, m)).collect();
        self.map.predict(&x)
    }

    pub fn predict_field(&self, sensor_values: &[f64]) -> Result<Vec<f64>> {
        let a = self.predict_coefficients(sensor_values)?;
        let mut out = self.velocity_mean.clone();
        for (c, m) in a.iter().zip(&self.velocity_modes) {
            out.iter_mut().zip(m).for_each(|(o, p)| *o += c * p);
        }
        Ok(out)
    }

    pub fn truncation_floor(&self) -> f64 {
        let basis = PodBasis {
            source: PodSource::Field(self.selection),
            snapshot_ids: Vec::new(),
            mean: Vec::new(),
            modes: Vec::new(),
            eigenvalues: self.velocity_eigenvalues.clone(),
            coefficients: Vec::new(),
            retained: 0,
        };
        truncation_floor(&basis, self.truncation.n_u)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "orientation", content = "index")]
pub enum PlaneSpec {
    /// Grid row `j`.
    Horizontal(usize),
    /// Grid column `i`.
    Vertical(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reconstruction2 {
    pub plane: PlaneSpec,
    pub nx: usize,
    pub ny: usize,
    /// Grid indices (`j * nx + i`) of the unmasked plane cells.
    pub cells: Vec<usize>,
    pub map: RidgeMap,
    pub train_ids: Vec<usize>,
}

/// Fluid cells of a plane; errors when the index lies outside the grid.
pub fn plane_cells(m: &SnapshotMatrix, plane: PlaneSpec) -> Result<Vec<usize>> {
    let coords: Vec<(usize, usize)> = match plane {
        PlaneSpec::Horizontal(j) if j < m.ny => (0..m.nx).map(|i| (i, j)).collect(),
        PlaneSpec::Vertical(i) if i < m.nx => (0..m.ny).map(|j| (i, j)).collect(),
        _ => {
            return Err(Error::Range(format!(
                "plane {plane:?} outside the {}x{} grid",
                m.nx, m.ny
            )))
        }
    };
    let cells: Vec<usize> = coords
        .into_iter()
        .filter(|&(i, j)| !m.obstacle.contains(i, j))
        .map(|(i, j)| j * m.nx + i)
        .collect();
    if cells.is_empty() {
        return Err(Error::EmptyDomain(format!("plane {plane:?} lies entirely inside the obstacle")));
    }
    Ok(cells)
}

/// `u` then `v` over `cells` for snapshot `k`.
pub fn plane_values(m: &SnapshotMatrix, k: usize, cells: &[usize]) -> Vec<f64> {
    let f = &m.snapshots[k];
    cells.iter().map(|&c| f.u[c]).chain(cells.iter().map(|&c| f.v[c])).collect()
}

pub fn train_reconstruction2(
    snapshots: &SnapshotMatrix,
    plane: PlaneSpec,
    sensors: &SensorTrace,
    lambda: f64,
) -> Result<Reconstruction2> {
    check_ids("snapshot matrix", &snapshots.ids, &sensors.ids)?;
    let cells = plane_cells(snapshots, plane)?;
    let targets: Vec<Vec<f64>> = (0..snapshots.len())
        .map(|k| plane_values(snapshots, k, &cells))
        .collect();
    let map = RidgeMap::fit(&sensors.pressure, &targets, lambda, true)?;
    Ok(Reconstruction2 {
        plane,
        nx: snapshots.nx,
        ny: snapshots.ny,
        cells,
        map,
        train_ids: sensors.ids.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum ReconstructionModel {
    R1(Reconstruction1),
    R2(Reconstruction2),
}

impl ReconstructionModel {
    pub fn train_ids(&self) -> &[usize] {
        match self {
            ReconstructionModel::R1(m) => &m.train_ids,
            ReconstructionModel::R2(m) => &m.train_ids,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub variant: String,
    pub lambda: f64,
    pub train_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
    /// `false` when a test snapshot was also used for training.
    pub disjoint: bool,
    /// `|pred - true| / |true - training mean|` per test snapshot.
    pub per_snapshot_error: Vec<f64>,
    pub mean_error: f64,
    /// R1 only: coefficient RMSE over `sqrt(λ_i)` per mode.
    pub mode_nrmse: Option<Vec<f64>>,
    /// R1 only: `sqrt(Σ_{i>N_u} λ_i / Σ λ_i)`.
    pub truncation_floor: Option<f64>,
    pub warnings: Vec<String>,
}

fn relative_error(pred: &[f64], truth: &[f64], mean: &[f64], k: usize) -> Result<f64> {
    let num: f64 = pred.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let den: f64 = truth.iter().zip(mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    if den == 0.0 {
        return if num == 0.0 {
            Ok(0.0)
        } else {
            Err(Error::EmptyDomain(format!("test snapshot {k} has no fluctuation to normalize by")))
        };
    }
    Ok(num / den)
}

pub fn evaluate_reconstruction(
    model: &ReconstructionModel,
    test: &SnapshotMatrix,
    sensors: &SensorTrace,
) -> Result<EvaluationReport> {
    if test.ids != sensors.ids {
        return Err(Error::Validation("test snapshots and sensors differ".into()));
    }
    let train = model.train_ids();
    let disjoint = test.ids.iter().all(|id| !train.contains(id));
    let mut errors = Vec::with_capacity(test.len());
    let report = match model {
        ReconstructionModel::R1(m) => {
            let n_u = m.truncation.n_u;
            let mut sq = vec![0.0; n_u];
            for k in 0..test.len() {
                let truth = field_vector(test, k, m.selection);
                if truth.len() != m.velocity_mean.len() {
                    return Err(Error::Shape(format!(
                        "test field has {} entries, model expects {}",
                        truth.len(),
                        m.velocity_mean.len()
                    )));
                }
                let coeffs = m.predict_coefficients(&sensors.pressure[k])?;
                let pred = m.predict_field(&sensors.pressure[k])?;
                errors.push(relative_error(&pred, &truth, &m.velocity_mean, k)?);
                let fluct: Vec<f64> = truth.iter().zip(&m.velocity_mean).map(|(a, b)| a - b).collect();
                for (i, mode) in m.velocity_modes.iter().enumerate() {
                    sq[i] += (dot(&fluct, mode) - coeffs[i]).powi(2);
                }
            }
            let nrmse = sq
                .iter()
                .zip(&m.velocity_eigenvalues)
                .map(|(s, l)| (s / test.len() as f64).sqrt() / l.sqrt())
                .collect();
            EvaluationReport {
                variant: "r1".into(),
                lambda: m.map.lambda,
                train_ids: train.to_vec(),
                test_ids: test.ids.clone(),
                disjoint,
                mean_error: 0.0,
                per_snapshot_error: Vec::new(),
                mode_nrmse: Some(nrmse),
                truncation_floor: Some(m.truncation_floor()),
                warnings: m.warnings.clone(),
            }
        }
        ReconstructionModel::R2(m) => {
            if test.nx != m.nx || test.ny != m.ny {
                return Err(Error::Shape(format!(
                    "test grid {}x{} differs from model grid {}x{}",
                    test.nx, test.ny, m.nx, m.ny
                )));
            }
            for k in 0..test.len() {
                let truth = plane_values(test, k, &m.cells);
                let pred = m.map.predict(&sensors.pressure[k])?;
                errors.push(relative_error(&pred, &truth, &m.map.output_mean, k)?);
            }
            EvaluationReport {
                variant: "r2".into(),
                lambda: m.map.lambda,
                train_ids: train.to_vec(),
                test_ids: test.ids.clone(),
                disjoint,
                mean_error: 0.0,
                per_snapshot_error: Vec::new(),
                mode_nrmse: None,
                truncation_floor: None,
                warnings: Vec::new(),
            }
        }
    };
    let mean_error = errors.iter().sum::<f64>() / errors.len().max(1) as f64;
    Ok(EvaluationReport {
        per_snapshot_error: errors,
        mean_error,
        ..report
    })
}
